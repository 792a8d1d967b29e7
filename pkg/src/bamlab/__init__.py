"""Positional priors for attention: exact verifiers and a desk-scale testbed.

Subpackages: :mod:`bamlab.numerics`, :mod:`bamlab.priors`,
:mod:`bamlab.attention` and :mod:`bamlab.theory` are pure numpy;
:mod:`bamlab.model`, :mod:`bamlab.tasks` and :mod:`bamlab.estimator` use torch.
"""

from .priors import GGD, Laplace, ThetaParams, Uniform, bam_bias, theta_to_ggd

__version__ = "0.1.0"

__all__ = ["GGD", "Laplace", "ThetaParams", "Uniform", "bam_bias", "theta_to_ggd", "__version__"]
