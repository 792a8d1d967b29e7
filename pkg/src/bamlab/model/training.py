"""Language-model objective, training loop and finite-difference gradient check."""

import itertools
import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .config import THETA_NAMES, ModelConfig
from .network import as_long_tensor, build_model

log = logging.getLogger(__name__)


@dataclass
class TokenSequence:
    """Integer tokens, optionally split into documents.

    ``doc_ids`` marks document membership per token (attention never crosses
    documents). ``loss_mask[t]`` says whether predicting ``tokens[t]`` counts
    toward the training loss; position 0 never counts.
    """

    tokens: np.ndarray
    doc_ids: np.ndarray | None = None
    loss_mask: np.ndarray | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1:
            raise ValueError("tokens must be 1-D")
        for name in ("doc_ids", "loss_mask"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=bool if name == "loss_mask" else np.int64)
                if val.shape != self.tokens.shape:
                    raise ValueError(f"{name} must match tokens in shape")
                setattr(self, name, val)

    def __len__(self):
        return len(self.tokens)

    def check_vocab(self, vocab_size):
        if len(self) and (self.tokens.min() < 0 or self.tokens.max() >= vocab_size):
            raise ValueError(f"token out of range [0, {vocab_size})")
        return self


def pack_batch(seqs, context):
    """Pack whole documents into one ``context``-long row.

    Documents are laid end to end with distinct document ids; a document
    that does not fit in the remaining space is cut. Returns tokens, doc ids
    and a target mask as tensors of shape ``(context,)``.
    """
    tokens = np.zeros(context, dtype=np.int64)
    docs = np.full(context, -1, dtype=np.int64)
    mask = np.zeros(context, dtype=bool)
    pos, doc = 0, 0
    for seq in seqs:
        if pos >= context:
            break
        n = min(len(seq), context - pos)
        tokens[pos:pos + n] = seq.tokens[:n]
        sub_docs = seq.doc_ids[:n] if seq.doc_ids is not None else np.zeros(n, dtype=np.int64)
        docs[pos:pos + n] = doc + (sub_docs - sub_docs.min())
        m = seq.loss_mask[:n].copy() if seq.loss_mask is not None else np.ones(n, dtype=bool)
        m[0] = False
        mask[pos:pos + n] = m
        doc = docs[pos + n - 1] + 1
        pos += n
    docs[pos:] = doc  # padding lives in its own document and never counts
    # a target only counts if it continues the same document
    mask[1:] &= docs[1:] == docs[:-1]
    return torch.from_numpy(tokens), torch.from_numpy(docs), torch.from_numpy(mask)


def loss(model, tokens, doc_ids=None, target_mask=None):
    """Mean next-token cross-entropy in nats.

    Without a mask, averages over predictions of positions ``1 .. L-1``.
    """
    tokens = as_long_tensor(tokens)
    if tokens.dim() == 1:
        tokens = tokens[None]
    if tokens.shape[1] < 2:
        raise ValueError("loss needs at least 2 tokens")
    logits = model(tokens, doc_ids)
    per_tok = F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]), tokens[:, 1:].reshape(-1), reduction="none"
    )
    if target_mask is None:
        return per_tok.mean()
    m = target_mask[:, 1:].reshape(-1).to(per_tok.dtype)
    return (per_tok * m).sum() / m.sum().clamp(min=1)


@dataclass
class OptimizerSettings:
    """RAdam with decoupled weight decay and cosine decay to ``min_lr_ratio * lr``."""

    lr: float = 3e-3
    weight_decay: float = 0.1
    min_lr_ratio: float = 0.1
    warmup_steps: int = 0
    batch_size: int = 16
    grad_clip: float = 1.0
    betas: tuple = (0.9, 0.95)

    def lr_at(self, step, total):
        if step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        frac = (step - self.warmup_steps) / max(1, total - self.warmup_steps)
        cos = 0.5 * (1.0 + math.cos(math.pi * min(1.0, frac)))
        return self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cos)


def make_optimizer(model, settings):
    decay, no_decay = [], []
    for p in model.parameters():
        if p.requires_grad:
            (decay if p.dim() >= 2 else no_decay).append(p)
    groups = [{"params": decay, "weight_decay": settings.weight_decay},
              {"params": no_decay, "weight_decay": 0.0}]
    return torch.optim.RAdam(groups, lr=settings.lr, betas=settings.betas,
                             decoupled_weight_decay=True)


def train(config, corpus, steps, settings=None, init=None, dtype=torch.float32,
          callback=None, log_every=100):
    """Train a model and return the final :class:`Checkpoint`.

    ``corpus`` is an iterable of :class:`TokenSequence`; documents are packed
    into ``config.train_context``-long rows, ``settings.batch_size`` rows per
    step. ``init`` resumes from an existing checkpoint (its weights and step
    counter); its config may differ from ``config`` only in ``train_context``.
    ``callback(step, loss)`` is called every ``log_every`` steps and on the
    last step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    settings = settings or OptimizerSettings()
    if init is not None:
        if init.config.replace(train_context=config.train_context) != config:
            raise ValueError("resume config may only change train_context")
        model = Checkpoint(config, init.state).to_model(dtype)
        start = init.step
    else:
        model = build_model(config, dtype=dtype)
        start = 0
    opt = make_optimizer(model, settings)
    stream = iter(corpus)

    torch.manual_seed(config.seed + start)
    model.train()
    t0 = time.time()
    for step in range(steps):
        rows = []
        for _ in range(settings.batch_size):
            rows.append(pack_batch(_take_row(stream, config.train_context), config.train_context))
        toks, docs, mask = (torch.stack(x) for x in zip(*rows))
        for group in opt.param_groups:
            group["lr"] = settings.lr_at(step, steps)
        value = loss(model, toks, docs, mask)
        opt.zero_grad(set_to_none=True)
        value.backward()
        if settings.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), settings.grad_clip)
        opt.step()
        if callback is not None and (step % log_every == 0 or step == steps - 1):
            callback(start + step + 1, value.item())
    log.debug("trained %d steps in %.1fs", steps, time.time() - t0)
    model.eval()
    return Checkpoint.from_model(model, start + steps)


def _take_row(stream, context):
    seqs, total = [], 0
    while total < context:
        try:
            seq = next(stream)
        except StopIteration:
            if not seqs:
                raise ValueError("empty corpus") from None
            break
        if len(seq) == 0:
            continue
        seqs.append(seq)
        total += len(seq)
    return seqs


def grad_check(config, seed=0, length=8, n_params=200, h=1e-5, perturb=True):
    """Largest relative error between autograd and central-difference gradients.

    Runs in float64 on a random token sequence. Every BAM theta and SSMax
    scale is checked (all three thetas are made trainable for the check) plus
    a random sample of the remaining scalars, ``n_params`` in total or all of
    them if there are fewer. With ``perturb`` the thetas, scales and norm
    gains are moved away from their symmetric initial values first.
    """
    if config.n_layers > 2 or config.d_model > 16 or length > 8:
        raise ValueError("grad_check expects a tiny config (<=2 layers, d_model<=16, length<=8)")
    if config.pe_kind == "bam":
        config = config.replace(bam_trainable=list(THETA_NAMES))
    model = build_model(config.replace(seed=seed), dtype=torch.float64)
    rng = np.random.default_rng(seed)
    if perturb:
        _perturb(model, rng)
    tokens = torch.as_tensor(rng.integers(0, config.vocab_size, length))

    def objective():
        val = loss(model, tokens)
        if not torch.isfinite(val):
            raise ValueError("non-finite loss")
        return val

    model.zero_grad()
    objective().backward()

    named = [(n, p) for n, p in model.named_parameters()]
    special, other = [], []
    for n, p in named:
        entries = [(n, p, idx) for idx in itertools.product(*map(range, p.shape))]
        leaf = n.rsplit(".", 1)[-1]
        (special if leaf in THETA_NAMES or leaf == "ssmax_scale" else other).extend(entries)
    budget = max(0, n_params - len(special))
    if budget < len(other):
        pick = rng.choice(len(other), size=budget, replace=False)
        other = [other[i] for i in sorted(pick)]
    checks = special + other

    worst = 0.0
    with torch.no_grad():
        for name, p, idx in checks:
            analytic = float(p.grad[idx]) if p.grad is not None else 0.0
            orig = float(p[idx])
            p[idx] = orig + h
            fp = float(objective())
            p[idx] = orig - h
            fm = float(objective())
            p[idx] = orig
            fd = (fp - fm) / (2 * h)
            rel = abs(analytic - fd) / max(1e-8, abs(analytic) + abs(fd))
            worst = max(worst, rel)
    return worst, len(checks)


def _perturb(model, rng):
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "theta_beta":
                p.copy_(torch.as_tensor(rng.uniform(-1.0, 1.5, p.shape)))
            elif leaf == "theta_alpha":
                p.copy_(torch.as_tensor(rng.uniform(-1.0, 1.0, p.shape)))
            elif leaf == "theta_mu":
                # keeps mu = 2 sinh(theta_mu) in 0.1 < |mu| < 0.9, clear of the |d - mu| kinks
                sign = rng.choice([-1.0, 1.0], p.shape)
                p.copy_(torch.as_tensor(sign * rng.uniform(0.05, 0.44, p.shape)))
            elif leaf == "ssmax_scale" or p.dim() == 1:
                p.copy_(torch.as_tensor(rng.uniform(0.5, 1.5, p.shape)))
            else:
                p.copy_(torch.as_tensor(rng.normal(0.0, 0.3, p.shape)))
