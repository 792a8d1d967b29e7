"""Numerical witnesses for the lemmas and theorems about positional priors.

Each ``verify_*`` function returns a :class:`VerifierReport` holding the
largest residual it measured, the threshold it was judged against and a
short description of the worst input. Randomized verifiers take an explicit
seed and record it in the report.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import attention
from .attention import alibi_matrix, attention_row, bam_matrix, causal_mask, factorize
from .priors import ThetaParams, bam_bias, ggd_log_density_unnorm

__all__ = [
    "VerifierReport",
    "CLAIMS",
    "DEFAULT_DISTANCES",
    "verify_theorem1",
    "verify_z_identities",
    "verify_lemma1",
    "verify_lemma2",
    "verify_locality_limit",
    "verify_theorem2",
    "verify_theorem3_4",
    "run_claims",
    "write_reports",
]

DEFAULT_DISTANCES = tuple(4 * 2**k for k in range(11))  # 4 .. 4096
DEFAULT_LENGTHS_NEG_BETA = (64, 256, 1024, 4096, 16384)


@dataclass(frozen=True)
class VerifierReport:
    claim_id: str
    max_residual: float
    threshold: float
    witness: str = ""
    seed: int | None = None
    details: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def passed(self):
        return bool(self.max_residual <= self.threshold)


def _random_pairs(n_pairs, max_len, bound, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n_pairs):
        L = int(rng.integers(1, max_len + 1))
        f = rng.uniform(-bound, bound, L)
        g = rng.uniform(-bound, bound, L)
        # causal masking: the query sits at a random position, later keys are masked
        q = int(rng.integers(0, L))
        g[q + 1 :] = -np.inf
        yield f, g


def verify_theorem1(n_pairs=1000, max_len=32, bound=10.0, seed=0, threshold=1e-12):
    """Joint softmax equals the renormalized product of its marginals."""
    worst, witness = 0.0, ""
    for k, (f, g) in enumerate(_random_pairs(n_pairs, max_len, bound, seed)):
        fac = factorize(f, g)
        resid = float(np.max(np.abs(fac.p_joint - fac.p_cont * fac.p_pos / fac.overlap_S)))
        masked = np.isneginf(g)
        if np.any(fac.p_joint[masked] != 0.0):
            resid = math.inf
        if resid > worst or not witness:
            worst, witness = max(worst, resid), f"pair {k}, length {len(f)}"
    return VerifierReport("theorem1", worst, threshold, witness, seed)


def verify_z_identities(n_pairs=1000, max_len=32, bound=10.0, seed=0, threshold=1e-9):
    """``K * S == 1`` and ``I == ln K`` for the coupling scalar readings."""
    worst, witness = 0.0, ""
    for k, (f, g) in enumerate(_random_pairs(n_pairs, max_len, bound, seed)):
        fac = factorize(f, g)
        r1 = abs(fac.coupling_K * fac.overlap_S - 1.0)
        r2 = abs(fac.mutual_info_I - math.log(fac.coupling_K))
        resid = max(r1, r2)
        if resid > worst or not witness:
            worst, witness = max(worst, resid), f"pair {k}, length {len(f)}"
    return VerifierReport("z_identities", worst, threshold, witness, seed)


def verify_lemma1(L=256, threshold=1e-15):
    """The causal mask alone is a uniform prior over the visible window."""
    mask = causal_mask(L)
    zeros = np.zeros(L)
    worst, witness = 0.0, "row 1"
    for i in range(L):
        p = attention_row(zeros, mask.row(i))
        expected = np.where(np.arange(L) <= i, 1.0 / (i + 1), 0.0)
        resid = float(np.max(np.abs(p - expected)))
        if resid > worst:
            worst, witness = resid, f"row {i + 1}"
    return VerifierReport("lemma1", worst, threshold, witness)


def _truncated_laplace(L, i, m):
    w = [math.exp(-m * abs(j - i)) if j <= i else 0.0 for j in range(L)]
    total = math.fsum(w)
    return np.array([x / total for x in w])


def verify_lemma2(L=64, m=(0.0625, 0.25, 1.0), threshold=1e-12):
    """Causal mask plus ALiBi is a uniform window times a Laplace prior."""
    slopes = (m,) if np.isscalar(m) else tuple(m)
    mask = causal_mask(L)
    zeros = np.zeros(L)
    worst, witness = 0.0, ""
    for slope in slopes:
        alibi = alibi_matrix(L, slope)
        for i in range(L):
            p = attention_row(zeros, mask.row(i), alibi.row(i))
            resid = float(np.max(np.abs(p - _truncated_laplace(L, i, slope))))
            if resid > worst or not witness:
                worst, witness = max(worst, resid), f"m={slope}, row {i + 1}"
    return VerifierReport("lemma2", worst, threshold, witness)


def _bias_fn(bias_kind):
    if isinstance(bias_kind, ThetaParams):
        if bias_kind.theta_beta <= 0:
            raise ValueError("wrong regime: locality needs theta_beta > 0")
        return "lemma4", lambda d: bam_bias(-d, bias_kind), f"bam {bias_kind}"
    kind, m = bias_kind
    if kind != "alibi":
        raise ValueError(f"unknown bias kind {kind!r}")
    if not m > 0:
        raise ValueError("ALiBi slope must be positive")
    return "lemma3", lambda d: -m * np.asarray(d, dtype=np.float64), f"alibi m={m}"


def _farthest_weight(bias, d, content, target):
    """Weight of the key at distance ``d`` for a query with ``d + 1`` visible keys.

    ``content[k]`` is the content logit of the key at distance ``k < d``;
    ``target`` is the content logit of the farthest key.
    """
    dist = np.arange(d, -1, -1)  # key j=0 is farthest
    scores = np.concatenate([[target], content[:d][::-1]])
    p = attention_row(scores, bias(dist))
    return float(p[0])


def locality_curve(bias_kind, distances=DEFAULT_DISTANCES, content=None, target=0.0):
    _, bias, _ = _bias_fn(bias_kind)
    dmax = max(distances)
    content = np.zeros(dmax) if content is None else content
    return np.array([_farthest_weight(bias, d, content, target) for d in distances])


def verify_locality_limit(
    bias_kind, distances=DEFAULT_DISTANCES, tol=1e-12, content_bound=5.0, seeds=range(10)
):
    """Attention on the farthest key decays to zero as the distance grows.

    ``bias_kind`` is ``("alibi", m)`` or a :class:`ThetaParams` with a positive
    shape exponent. Runs zero content plus one bounded random content draw per
    seed; the farthest weight must be non-increasing along ``distances`` and
    below ``tol`` at the end.
    """
    distances = [int(d) for d in distances]
    if any(b <= a for a, b in zip(distances, distances[1:])):
        raise ValueError("distances must be strictly increasing")
    claim, _, label = _bias_fn(bias_kind)
    seeds = list(seeds)
    runs = [("zero content", np.zeros(max(distances)), 0.0)]
    for s in seeds:
        rng = np.random.default_rng(s)
        runs.append(
            (f"seed {s}", rng.uniform(-content_bound, content_bound, max(distances)),
             float(rng.uniform(-content_bound, content_bound)))
        )

    worst, witness, curves = 0.0, "", {}
    for name, content, target in runs:
        curve = locality_curve(bias_kind, distances, content, target)
        curves[name] = curve
        resid = curve[-1] if np.all(np.diff(curve) <= 0) else math.inf
        if resid > worst or not witness:
            worst, witness = max(worst, resid), f"{label}, {name}"
    return VerifierReport(
        claim, worst, tol, witness, seeds[0] if seeds else None,
        details={"distances": distances, "curves": curves},
    )


def verify_theorem2(beta=(0.25, 0.5, 0.75), m=(1.0,), distances=range(2, 4097), threshold=1e-9):
    """With ``alpha = m ** (-1 / beta)`` the GGD/ALiBi bias ratio is ``d ** (beta - 1)``."""
    betas = (beta,) if np.isscalar(beta) else tuple(beta)
    slopes = (m,) if np.isscalar(m) else tuple(m)
    for b in betas:
        if not 0 < b < 1:
            raise ValueError("beta must lie in (0, 1)")
    worst, witness = 0.0, ""
    for b in betas:
        for slope in slopes:
            alpha = slope ** (-1.0 / b)
            for d in distances:
                ratio = ggd_log_density_unnorm(d, 0.0, alpha, b) / (-slope * d)
                resid = abs(ratio - d ** (b - 1.0))
                if d >= 2 and not ratio < 1:
                    resid = math.inf
                if resid > worst or not witness:
                    worst, witness = max(worst, resid), f"beta={b}, m={slope}, d={d}"
    return VerifierReport("theorem2", worst, threshold, witness)


def verify_theorem3_4(
    theta,
    lengths=DEFAULT_LENGTHS_NEG_BETA,
    far_tol=1e-3,
    near_tol=1e-12,
    content_bound=5.0,
    seed=0,
):
    """Negative shape: the diagonal is suppressed and long rows approach content-only attention.

    The reported residual is the max deviation from content-only softmax at the
    largest length; it is set to ``inf`` if the diagonal weight ever exceeds
    ``near_tol``.
    """
    if theta.theta_beta >= 0:
        raise ValueError("wrong regime: needs theta_beta < 0")
    lengths = [int(L) for L in lengths]
    rng = np.random.default_rng(seed)
    content_full = rng.uniform(-content_bound, content_bound, max(lengths))

    near, devs = 0.0, []
    for L in lengths:
        dist = np.arange(L - 1, -1, -1)  # query is the last row
        bias = bam_bias(-dist, theta)
        for content in (np.zeros(L), content_full[:L]):
            p = attention_row(content, bias)
            near = max(near, float(p[-1]))
        devs.append(float(np.max(np.abs(p - attention.softmax(content)))))

    resid = devs[-1] if near <= near_tol else math.inf
    witness = f"theta={theta}, L={lengths[-1]}, diagonal weight {near:.3g}"
    return VerifierReport(
        "theorem3_4", resid, far_tol, witness, seed,
        details={"lengths": lengths, "deviations": devs, "diagonal_weight": near},
    )


def _lemma3(**kw):
    return verify_locality_limit(("alibi", 1.0), **kw)


def _lemma4(**kw):
    reports = [verify_locality_limit(ThetaParams(0.0, 0.0, b), **kw) for b in (0.5, 1.0)]
    return max(reports, key=lambda r: r.max_residual)


def _theorem3_4(**kw):
    reports = [verify_theorem3_4(ThetaParams(0.0, 0.0, b), **kw) for b in (-0.5, -1.0)]
    return max(reports, key=lambda r: r.max_residual)


CLAIMS = {
    "theorem1": verify_theorem1,
    "z_identities": verify_z_identities,
    "lemma1": verify_lemma1,
    "lemma2": verify_lemma2,
    "lemma3": _lemma3,
    "lemma4": _lemma4,
    "theorem2": verify_theorem2,
    "theorem3_4": _theorem3_4,
}


def run_claims(claims="all"):
    """Run the named verifiers (or all of them) with their default settings."""
    if claims == "all":
        claims = list(CLAIMS)
    unknown = [c for c in claims if c not in CLAIMS]
    if unknown:
        raise KeyError(f"unknown claim id(s) {unknown}; valid ids: {', '.join(CLAIMS)}")
    return [CLAIMS[c]() for c in claims]


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["claim_id", "max_residual", "threshold", "passed", "seed", "witness"])
        for r in reports:
            seed = "" if r.seed is None else r.seed
            w.writerow([r.claim_id, repr(float(r.max_residual)), repr(float(r.threshold)), int(r.passed), seed, r.witness])
