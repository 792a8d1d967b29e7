"""Synthetic corpora, passkey retrieval and perplexity-vs-length evaluation."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .model import Checkpoint, TokenSequence, sequence_logits
from .model.network import as_long_tensor

N_DIGITS = 10
KEY_LEN = 5
N_DEPTHS = 20


@dataclass(frozen=True)
class VocabLayout:
    """Partition of the vocabulary into digits, prompt markers and filler.

    Ids ``0..9`` are digit tokens and the next six ids are reserved prompt
    markers; everything from ``filler_start`` up is filler.
    """

    vocab_size: int = 64

    TASK = 10
    PASSKEY = 11
    IS = 12
    END = 13
    QUESTION = 14
    SEP = 15
    filler_start = 16

    def __post_init__(self):
        if self.vocab_size < self.filler_start + 8:
            raise ValueError(f"vocab_size must be at least {self.filler_start + 8}")

    @property
    def filler_tokens(self):
        return np.arange(self.filler_start, self.vocab_size)

    @property
    def n_filler(self):
        return self.vocab_size - self.filler_start


@dataclass(frozen=True)
class PromptLayout:
    """Lengths of the fixed regions of a passkey prompt.

    The key region is ``PASSKEY IS d1 d2 d3 d4 d5`` followed by ``END`` and
    ``SEP`` padding; the answer prompt is ``QUESTION ... PASSKEY IS``.
    """

    task_len: int = 4
    key_region_len: int = 8
    answer_len: int = 4

    def __post_init__(self):
        if self.task_len < 1 or self.key_region_len < 2 + KEY_LEN or self.answer_len < 2:
            raise ValueError("prompt regions too short")

    @property
    def min_length(self):
        return self.task_len + self.key_region_len + self.answer_len


PROBE_LAYOUT = PromptLayout(task_len=32, key_region_len=25, answer_len=16)


class MarkovChain:
    """Order-2 Markov chain over a contiguous token range.

    Each context ``(a, b)`` gets a next-token distribution drawn from a
    sparse Dirichlet, generated lazily from ``(seed, a, b)`` so large
    vocabularies never materialize a full table.
    """

    def __init__(self, lo, hi, seed=0, concentration=0.1):
        self.lo, self.hi, self.seed = lo, hi, seed
        self.concentration = concentration
        self._rows = {}

    @property
    def n(self):
        return self.hi - self.lo

    def row(self, a, b):
        key = (a, b)
        if key not in self._rows:
            rng = np.random.default_rng([self.seed, a, b])
            p = rng.dirichlet(np.full(self.n, self.concentration))
            self._rows[key] = p / p.sum()
        return self._rows[key]

    def sample(self, length, rng):
        out = np.empty(length, dtype=np.int64)
        a, b = rng.integers(self.lo, self.hi, 2)
        for t in range(length):
            nxt = self.lo + rng.choice(self.n, p=self.row(a, b))
            out[t] = nxt
            a, b = b, nxt
        return out

    def nll(self, tokens):
        """Per-token negative log-likelihood of ``tokens[2:]`` under the chain."""
        return np.array([-math.log(self.row(tokens[t - 2], tokens[t - 1])[tokens[t] - self.lo])
                         for t in range(2, len(tokens))])

    def entropy_rate_estimate(self, n=20000, seed=0):
        return float(self.nll(self.sample(n, np.random.default_rng(seed))).mean())


def gen_synthetic_corpus(kind, vocab_size, length, seed, n_docs=None, token_range=None,
                         motif_len=6, min_gap=None, chain_seed=None, score_copy_only=False):
    """Yield :class:`TokenSequence` documents of ``length`` tokens.

    ``markov``: an order-2 chain with a seeded transition table. ``copy``:
    uniform random tokens in which a motif of ``motif_len`` tokens appears
    twice, the copy starting at least ``min_gap`` (default ``length // 2``)
    tokens after the original, so predicting the copy needs attention that
    far back. With ``score_copy_only`` copy documents carry a loss mask
    covering only the repeated motif. Infinite stream unless ``n_docs`` is
    given.
    """
    if vocab_size < 16:
        raise ValueError("vocab_size must be >= 16")
    lo, hi = token_range or (0, vocab_size)
    rng = np.random.default_rng(seed)
    if kind == "markov":
        chain = MarkovChain(lo, hi, seed if chain_seed is None else chain_seed)
        make = lambda: chain.sample(length, rng)  # noqa: E731
    elif kind in ("copy", "copy-structured"):
        gap = length // 2 if min_gap is None else min_gap
        if 2 * motif_len + gap > length + motif_len:
            raise ValueError("length too short for motif and gap")
        make = lambda: copy_document(length, motif_len, gap, lo, hi, rng, score_copy_only)  # noqa: E731
    else:
        raise ValueError(f"unknown corpus kind {kind!r}")
    count = 0
    while n_docs is None or count < n_docs:
        doc = make()
        yield doc if isinstance(doc, TokenSequence) else TokenSequence(doc)
        count += 1


def copy_document(length, motif_len, min_gap, lo, hi, rng, score_copy_only=False):
    doc = rng.integers(lo, hi, length)
    motif = rng.integers(lo, hi, motif_len)
    first = int(rng.integers(0, length - motif_len - min_gap + 1))
    second = int(rng.integers(first + min_gap, length - motif_len + 1))
    doc[first:first + motif_len] = motif
    doc[second:second + motif_len] = motif
    if not score_copy_only:
        return doc
    mask = np.zeros(length, dtype=bool)
    mask[second + 1:second + motif_len] = True
    return TokenSequence(doc, loss_mask=mask)


@dataclass
class PasskeySample:
    """A passkey prompt of ``total_length`` tokens and its 5-digit answer.

    ``key_span`` is the half-open token range of the key digits;
    ``answer_offset`` is the index, in the prompt-plus-answer sequence, of
    the first answer digit (equal to ``total_length``).
    """

    tokens: np.ndarray
    key_digits: tuple
    key_span: tuple
    answer_offset: int
    depth_index: int
    total_length: int
    filler_span: tuple

    def with_answer(self):
        toks = np.concatenate([self.tokens, np.asarray(self.key_digits, dtype=np.int64)])
        return TokenSequence(toks)

    def answer_mask(self):
        """Loss mask that only scores the five answer digits."""
        m = np.zeros(self.total_length + KEY_LEN, dtype=bool)
        m[self.answer_offset:] = True
        return m


def key_offset(depth_index, filler_len, n_depths=N_DEPTHS):
    """Number of filler tokens placed before the key for a given depth."""
    return (depth_index * filler_len) // (n_depths - 1)


def gen_passkey(L, depth_index, key, vocab=None, seed=0, layout=PromptLayout(),
                filler="uniform", chain=None, n_depths=N_DEPTHS):
    """Build a passkey prompt of exactly ``L`` tokens.

    Layout: task prompt, filler with the key region inserted after
    ``floor(depth_index * F / (n_depths - 1))`` filler tokens (``F`` = total
    filler length), then the answer prompt. Depth 0 puts the key right after
    the task prompt, the last depth puts it right before the answer prompt.
    Filler comes from filler tokens only, so digits never appear in it.
    """
    vocab = vocab or VocabLayout()
    if L < layout.min_length:
        raise ValueError(f"L={L} too small; minimum length is {layout.min_length}")
    if not 0 <= depth_index < n_depths:
        raise ValueError(f"depth_index must be in [0, {n_depths - 1}]")
    key = tuple(int(d) for d in key)
    if len(key) != KEY_LEN or any(not 0 <= d < N_DIGITS for d in key):
        raise ValueError("key must be 5 digits in [0, 9]")

    rng = np.random.default_rng(seed)
    filler_len = L - layout.min_length
    if filler == "markov":
        chain = chain or MarkovChain(vocab.filler_start, vocab.vocab_size, seed=0)
        fill = chain.sample(filler_len, rng)
    else:
        fill = rng.integers(vocab.filler_start, vocab.vocab_size, filler_len)

    task = np.array([vocab.TASK if k % 2 == 0 else vocab.SEP for k in range(layout.task_len)])
    pad = layout.key_region_len - 2 - KEY_LEN
    region = np.array([vocab.PASSKEY, vocab.IS, *key] + ([vocab.END] + [vocab.SEP] * (pad - 1) if pad else []))
    answer = np.array([vocab.QUESTION] * (layout.answer_len - 2) + [vocab.PASSKEY, vocab.IS])

    before = key_offset(depth_index, filler_len, n_depths)
    tokens = np.concatenate([task, fill[:before], region, fill[before:], answer]).astype(np.int64)
    key_start = layout.task_len + before + 2
    return PasskeySample(
        tokens=tokens,
        key_digits=key,
        key_span=(key_start, key_start + KEY_LEN),
        answer_offset=L,
        depth_index=depth_index,
        total_length=L,
        filler_span=(layout.task_len, L - layout.answer_len),
    )


def passkey_stream(min_len, max_len, seed, vocab=None, layout=PromptLayout(), filler="uniform",
                   answer_only=False):
    """Infinite stream of training passkey documents (prompt plus answer)."""
    vocab = vocab or VocabLayout()
    rng = np.random.default_rng(seed)
    chain = MarkovChain(vocab.filler_start, vocab.vocab_size, seed=0) if filler == "markov" else None
    while True:
        L = int(rng.integers(max(min_len, layout.min_length), max_len + 1))
        s = gen_passkey(L, int(rng.integers(N_DEPTHS)), rng.integers(0, N_DIGITS, KEY_LEN),
                        vocab, int(rng.integers(2**31)), layout, filler, chain)
        seq = s.with_answer()
        if answer_only:
            seq.loss_mask = s.answer_mask()
        yield seq


def mixture_stream(streams, weights, seed):
    """Interleave several document streams, choosing each next doc at random."""
    rng = np.random.default_rng(seed)
    p = np.asarray(weights, dtype=float) / np.sum(weights)
    streams = [iter(s) for s in streams]
    while True:
        yield next(streams[rng.choice(len(streams), p=p)])


def curriculum_stream(vocab_size, train_context, seed, passkey_weight=3, copy_weight=1, min_len=16,
                      filler="uniform", motif_len=6, min_gap=16, score_copy_only=True):
    """Passkey documents mixed with copy-structured documents.

    Passkey documents only score the five answer digits and copy documents
    (with ``score_copy_only``) only the repeated motif, so every scored token
    needs a look back rather than a unigram guess.
    """
    vocab = VocabLayout(vocab_size)
    streams = [passkey_stream(min_len, train_context - KEY_LEN, seed, vocab, filler=filler,
                              answer_only=True)]
    weights = [passkey_weight]
    if copy_weight > 0:
        streams.append(gen_synthetic_corpus("copy", vocab_size, train_context, seed + 1,
                                            token_range=(vocab.filler_start, vocab_size),
                                            motif_len=motif_len, min_gap=min_gap,
                                            score_copy_only=score_copy_only))
        weights.append(copy_weight)
    return mixture_stream(streams, weights, seed)


def probe_sample(vocab=None, seed=0, length=841, depth_index=0):
    """Long probe prompt with wide task and key regions, key near the start."""
    vocab = vocab or VocabLayout()
    rng = np.random.default_rng(seed)
    return gen_passkey(length, depth_index, rng.integers(0, N_DIGITS, KEY_LEN), vocab,
                       int(rng.integers(2**31)), PROBE_LAYOUT)


@dataclass
class EvalGrid:
    """Exact-match passkey accuracy indexed by ``[length, depth]``."""

    lengths: list
    depths: list
    accuracy: np.ndarray
    n_seeds: int
    train_context: int | None = None

    @property
    def per_length_mean(self):
        return self.accuracy.mean(axis=1)

    @property
    def per_depth_mean(self):
        return self.accuracy.mean(axis=0)

    def at(self, length):
        return float(self.per_length_mean[self.lengths.index(length)])

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["length", "depth", "seed_count", "accuracy"])
            for a, L in enumerate(self.lengths):
                for b, d in enumerate(self.depths):
                    w.writerow([L, d, self.n_seeds, repr(float(self.accuracy[a, b]))])

    def write_summary(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["axis", "value", "mean_accuracy"])
            for L, acc in zip(self.lengths, self.per_length_mean):
                w.writerow(["length", L, repr(float(acc))])
            for d, acc in zip(self.depths, self.per_depth_mean):
                w.writerow(["depth", d, repr(float(acc))])
            w.writerow(["all", "", repr(float(self.accuracy.mean()))])


def _as_model(model_or_ckpt):
    if isinstance(model_or_ckpt, Checkpoint):
        return model_or_ckpt.to_model()
    return model_or_ckpt


@torch.no_grad()
def passkey_hits(model, samples, chunk=8):
    """Whether greedy decoding reproduces all five digits, per sample.

    Greedy decoding gets all five digits right exactly when every
    teacher-forced argmax over the answer positions is right, so one forward
    pass over prompt plus true answer decides the outcome.
    """
    full = np.stack([s.with_answer().tokens for s in samples])
    off = samples[0].answer_offset
    logits = sequence_logits(model, full, chunk=chunk)
    pred = logits[:, off - 1:off - 1 + KEY_LEN].argmax(-1).numpy()
    return (pred == full[:, off:off + KEY_LEN]).all(axis=1)


def eval_passkey(model, lengths, n_depths=N_DEPTHS, n_seeds=5, vocab=None, layout=PromptLayout(),
                 filler="uniform", seed=0, chunk=8):
    """Passkey accuracy grid over ``lengths`` x depth indices.

    Each cell averages ``n_seeds`` samples with independent keys and filler.
    Sample seeds depend on (seed, length, depth, sample index) only, so
    every model sees the same prompts.
    """
    model = _as_model(model)
    vocab = vocab or VocabLayout(model.cfg.vocab_size)
    if vocab.vocab_size != model.cfg.vocab_size:
        raise ValueError("task vocabulary does not match checkpoint vocabulary")
    acc = np.zeros((len(lengths), n_depths))
    chain = MarkovChain(vocab.filler_start, vocab.vocab_size, seed=0) if filler == "markov" else None
    for a, L in enumerate(lengths):
        samples = []
        for d in range(n_depths):
            for k in range(n_seeds):
                rng = np.random.default_rng([seed, L, d, k])
                samples.append(gen_passkey(L, d, rng.integers(0, N_DIGITS, KEY_LEN), vocab,
                                           int(rng.integers(2**31)), layout, filler, chain, n_depths))
        hits = passkey_hits(model, samples, chunk)
        acc[a] = hits.reshape(n_depths, n_seeds).mean(axis=1)
    return EvalGrid(list(lengths), list(range(n_depths)), acc, n_seeds, model.cfg.train_context)


@torch.no_grad()
def eval_perplexity(model, corpus, lengths, chunk=8):
    """Mean per-sequence perplexity ``exp(loss)`` with sequences cut to each length."""
    model = _as_model(model)
    seqs = [s.tokens if isinstance(s, TokenSequence) else np.asarray(s) for s in corpus]
    if not seqs or min(len(s) for s in seqs) < max(lengths):
        raise ValueError(f"corpus sequences shorter than max length {max(lengths)}")
    out = {}
    for L in lengths:
        toks = as_long_tensor(np.stack([s[:L] for s in seqs]))
        logits = sequence_logits(model, toks, chunk)
        nll = F.cross_entropy(logits[:, :-1].transpose(1, 2), toks[:, 1:], reduction="none")
        out[L] = float(torch.exp(nll.double().mean(dim=1)).mean())
    return out


def write_perplexity(curve, path, train_context=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["length", "perplexity", "beyond_train_context"])
        for L, ppl in curve.items():
            beyond = "" if train_context is None else int(L > train_context)
            w.writerow([L, repr(ppl), beyond])


def export_theta_scatter(checkpoint):
    """One record per head: ``(layer, head, theta_beta, theta_alpha)``."""
    if checkpoint.config.pe_kind != "bam":
        raise ValueError("theta scatter needs a BAM checkpoint")
    return [
        {"layer": l, "head": h, "theta_beta": t.theta_beta, "theta_alpha": t.theta_alpha}
        for l, heads in enumerate(checkpoint.bam_thetas())
        for h, t in enumerate(heads)
    ]


def lengths_schedule(train_context, max_factor=16):
    out, L = [], train_context
    while L <= max_factor * train_context:
        out.append(L)
        L *= 2
    return out
