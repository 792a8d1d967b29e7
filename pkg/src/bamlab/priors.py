"""Positional prior densities and the trainable BAM bias.

Densities are unnormalized: when they enter attention as additive biases the
softmax absorbs any constant, so normalizers are never computed.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ThetaParams",
    "Uniform",
    "Laplace",
    "GGD",
    "uniform_mass",
    "laplace_log_density_unnorm",
    "ggd_log_density_unnorm",
    "bam_bias",
    "theta_to_ggd",
]

DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True)
class ThetaParams:
    """Per-head trainable parameters of the generalized Gaussian bias.

    ``theta_mu`` sets the location through ``exp(t) - exp(-t)``,
    ``theta_alpha`` is the log of the bias magnitude and ``theta_beta`` is the
    shape exponent. ``epsilon`` keeps the power finite at the mode when the
    exponent is negative.
    """

    theta_mu: float = 0.0
    theta_alpha: float = 0.0
    theta_beta: float = 0.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        for name in ("theta_mu", "theta_alpha", "theta_beta", "epsilon"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def location(self):
        return math.exp(self.theta_mu) - math.exp(-self.theta_mu)


@dataclass(frozen=True)
class Uniform:
    a: int
    b: int

    def __post_init__(self):
        if self.a > self.b:
            raise ValueError(f"Uniform requires a <= b, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class Laplace:
    mu: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("Laplace scale must be positive")


@dataclass(frozen=True)
class GGD:
    """Generalized Gaussian; negative ``beta`` is the relaxed, improper regime."""

    mu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("GGD alpha must be positive")
        if self.beta == 0:
            raise ValueError("GGD beta must be nonzero")

    def log_density_unnorm(self, x):
        return ggd_log_density_unnorm(x, self.mu, self.alpha, self.beta)


def uniform_mass(a, b, x):
    """Probability of integer ``x`` under the discrete uniform on ``[a, b]``."""
    Uniform(a, b)
    return 1.0 / (b - a + 1) if a <= x <= b else 0.0


def laplace_log_density_unnorm(x, mu, scale):
    if not scale > 0:
        raise ValueError("scale must be positive")
    return -abs(x - mu) / scale


def ggd_log_density_unnorm(x, mu, alpha, beta):
    """``-|(x - mu) / alpha| ** beta``; no epsilon regularization."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if beta < 0 and x == mu:
        raise ValueError("singularity at the mode")
    return -(abs((x - mu) / alpha) ** beta)


def bam_bias(relpos, theta):
    """Additive attention bias for relative position ``relpos = j - i``.

    Accepts a scalar or an integer array of relative positions. Always
    strictly negative and finite for finite ``theta``.
    """
    dist = np.abs(np.asarray(relpos, dtype=np.float64) - theta.location) + theta.epsilon
    out = -math.exp(theta.theta_alpha) * dist**theta.theta_beta
    return float(out) if out.ndim == 0 else out


def theta_to_ggd(theta):
    """Read a :class:`ThetaParams` as the equivalent :class:`GGD` prior.

    For every ``x`` away from the mode,
    ``GGD.log_density_unnorm(x) == -exp(theta_alpha) * |x - mu| ** theta_beta``.
    """
    if theta.theta_beta == 0:
        raise ValueError("degenerate shape; use bam_bias directly")
    return GGD(
        mu=theta.location,
        alpha=math.exp(-theta.theta_alpha / theta.theta_beta),
        beta=theta.theta_beta,
    )
