"""Bias matrices (causal, ALiBi, BAM), single attention rows and the
content/position factorization of an additive attention score."""

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_real_vector, log_sum_exp, softmax, ssmax
from .priors import ThetaParams, bam_bias

__all__ = [
    "BiasMatrix",
    "AttentionFactorization",
    "causal_mask",
    "alibi_matrix",
    "alibi_slopes",
    "bam_matrix",
    "attention_row",
    "factorize",
]


@dataclass(frozen=True)
class BiasMatrix:
    """Dense ``L x L`` additive score bias.

    Row ``i`` and column ``j`` are 0-indexed here, but only the relative
    position ``j - i`` matters, so entries agree with the 1-indexed
    definitions.
    """

    kind: str
    entries: np.ndarray = field(repr=False)
    slope: float | None = None
    theta: ThetaParams | None = None

    @property
    def length(self):
        return self.entries.shape[0]

    def row(self, i):
        return self.entries[i]


def _relpos(L):
    idx = np.arange(L)
    return idx[None, :] - idx[:, None]


def _check_length(L):
    if int(L) != L or L < 1:
        raise ValueError(f"L must be a positive integer, got {L!r}")


def causal_mask(L):
    _check_length(L)
    entries = np.where(_relpos(L) <= 0, 0.0, -np.inf)
    return BiasMatrix("causal", entries)


def alibi_matrix(L, m):
    """Symmetric linear biases ``-m |j - i|``; masking is applied separately."""
    _check_length(L)
    if not m > 0:
        raise ValueError("ALiBi slope must be positive")
    return BiasMatrix("alibi", -m * np.abs(_relpos(L)).astype(np.float64), slope=float(m))


def alibi_slopes(num_heads):
    """Geometric slope schedule ``2 ** (-8 h / num_heads)`` for ``h = 1..num_heads``."""
    if int(num_heads) != num_heads or num_heads < 1:
        raise ValueError("num_heads must be a positive integer")
    h = np.arange(1, num_heads + 1)
    return 2.0 ** (-8.0 * h / num_heads)


def bam_matrix(L, theta):
    _check_length(L)
    return BiasMatrix("bam", bam_bias(_relpos(L), theta), theta=theta)


def attention_row(q_scores, *row_biases, use_ssmax=False, s=1.0):
    """Attention weights for one query.

    ``q_scores`` are the (already scaled) content logits; every entry of
    ``row_biases`` is added elementwise. With ``use_ssmax`` the scores go
    through scalable softmax with ``n`` equal to the number of unmasked
    positions in the row.
    """
    scores = as_real_vector(q_scores, "q_scores").copy()
    for b in row_biases:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != scores.shape:
            raise ValueError(f"length mismatch: {b.shape} vs {scores.shape}")
        scores = scores + b
    n = int(np.isfinite(scores).sum())
    if n == 0:
        return np.zeros_like(scores)
    if use_ssmax:
        return ssmax(scores, n, s)
    return softmax(scores)


@dataclass(frozen=True)
class AttentionFactorization:
    """Joint attention row split into content and position marginals.

    ``overlap_S`` is the inner product of the two marginals, ``coupling_K`` is
    ``Z_cont * Z_pos / Z_joint`` and ``mutual_info_I`` is the mutual
    information of the joint against the product of marginals. The identities
    ``K * S == 1`` and ``I == ln K`` hold up to rounding.
    """

    p_cont: np.ndarray
    p_pos: np.ndarray
    p_joint: np.ndarray
    overlap_S: float
    coupling_K: float
    mutual_info_I: float


def _log_softmax(v):
    return v - log_sum_exp(v)


def factorize(f_logits, g_logits):
    f = as_real_vector(f_logits, "f_logits")
    g = as_real_vector(g_logits, "g_logits")
    if f.shape != g.shape:
        raise ValueError(f"length mismatch: {f.shape} vs {g.shape}")
    if not np.isfinite(f).all():
        raise ValueError("content logits must be finite")
    if np.isneginf(g).all():
        raise ValueError("empty positional support")

    fg = f + g
    p_cont = softmax(f)
    p_pos = softmax(g)
    p_joint = softmax(fg)
    overlap = float(np.dot(p_cont, p_pos))
    coupling = float(np.exp(log_sum_exp(f) + log_sum_exp(g) - log_sum_exp(fg)))

    live = p_joint > 0
    log_ratio = _log_softmax(fg)[live] - _log_softmax(f)[live] - _log_softmax(g)[live]
    mutual_info = float(np.sum(p_joint[live] * log_ratio))
    return AttentionFactorization(p_cont, p_pos, p_joint, overlap, coupling, mutual_info)
