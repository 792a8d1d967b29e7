"""Decoder-only transformer with pluggable positional encoding.

Pre-norm blocks with RMSNorm, SwiGLU feed-forward and multi-head attention.
The positional encoding is one of NoPE, sinusoidal (added to embeddings),
RoPE (rotation of queries and keys), ALiBi or the generalized Gaussian BAM
bias. Optional scalable softmax multiplies each head's scores by
``s * ln(n)`` with ``n`` the number of visible keys in the row.
"""

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..attention import alibi_slopes
from .config import THETA_NAMES, ModelConfig


def sinusoidal_table(length, dim, dtype=torch.float32):
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    inv = torch.exp(-math.log(10000.0) * torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * inv)
    table[:, 1::2] = torch.cos(pos * inv[: dim // 2])
    return table.to(dtype)


def _rotate_half(x):
    x1, x2 = x.chunk(2, dim=-1)
    return torch.cat((-x2, x1), dim=-1)


def apply_rope(x, positions, base=10000.0):
    """Rotate ``x`` of shape ``(B, H, T, D)`` by angles ``positions * base**(-2k/D)``."""
    dim = x.shape[-1]
    inv = base ** (-torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    ang = positions.to(torch.float64)[:, None] * inv[None, :]
    ang = torch.cat((ang, ang), dim=-1).to(x.dtype)
    return x * torch.cos(ang) + _rotate_half(x) * torch.sin(ang)


class SwiGLU(nn.Module):
    def __init__(self, d_model, hidden):
        super().__init__()
        self.w_gate = nn.Linear(d_model, hidden, bias=False)
        self.w_up = nn.Linear(d_model, hidden, bias=False)
        self.w_down = nn.Linear(hidden, d_model, bias=False)

    def forward(self, x):
        return self.w_down(F.silu(self.w_gate(x)) * self.w_up(x))


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig, layer: int):
        super().__init__()
        self.cfg = cfg
        self.n_heads, self.d_head = cfg.n_heads, cfg.d_head
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, bias=False)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        slopes = torch.tensor(alibi_slopes(cfg.n_heads), dtype=torch.float32)

        if cfg.pe_kind == "alibi":
            self.register_buffer("slopes", slopes)
        if cfg.pe_kind == "bam":
            if cfg.bam_init == "alibi":
                init = {"theta_beta": torch.ones(cfg.n_heads), "theta_alpha": torch.log(slopes)}
            else:
                init = {"theta_beta": torch.zeros(cfg.n_heads), "theta_alpha": torch.zeros(cfg.n_heads)}
            init["theta_mu"] = torch.zeros(cfg.n_heads)
            for name in THETA_NAMES:
                if name in cfg.bam_trainable:
                    setattr(self, name, nn.Parameter(init[name]))
                else:
                    self.register_buffer(name, init[name])
        if cfg.use_ssmax:
            self.ssmax_scale = nn.Parameter(torch.ones(cfg.n_heads))
        self.record = False
        self.last_weights = None

    def position_bias(self, q_pos, k_pos):
        """Additive ``(H, Tq, Tk)`` bias for absolute query/key positions, or None."""
        rel = (k_pos[None, :] - q_pos[:, None]).to(self.qkv.weight.dtype)
        if self.cfg.pe_kind == "alibi":
            return -self.slopes.to(rel.dtype)[:, None, None] * rel.abs()[None]
        if self.cfg.pe_kind == "bam":
            mu = torch.exp(self.theta_mu) - torch.exp(-self.theta_mu)
            dist = (rel[None] - mu[:, None, None]).abs() + self.cfg.epsilon
            return -torch.exp(self.theta_alpha)[:, None, None] * dist ** self.theta_beta[:, None, None]
        return None

    def forward(self, x, q_pos, allowed, cache=None):
        B, T, _ = x.shape
        q, k, v = self.qkv(x).view(B, T, 3, self.n_heads, self.d_head).permute(2, 0, 3, 1, 4)
        if self.cfg.pe_kind == "rope":
            q, k = apply_rope(q, q_pos), apply_rope(k, q_pos)
        if cache is not None:
            if "k" in cache:
                k = torch.cat((cache["k"], k), dim=2)
                v = torch.cat((cache["v"], v), dim=2)
            cache["k"], cache["v"] = k, v
        k_pos = torch.arange(k.shape[2]) if cache is not None else q_pos

        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.d_head)
        bias = self.position_bias(q_pos, k_pos)
        if bias is not None:
            scores = scores + bias[None]
        allowed = allowed[:, None]  # (B, 1, Tq, Tk)
        if self.cfg.use_ssmax:
            n = allowed.sum(-1, keepdim=True).clamp(min=1).to(scores.dtype)
            scores = scores * (self.ssmax_scale[None, :, None, None] * torch.log(n))
        scores = scores.masked_fill(~allowed, float("-inf"))
        w = torch.softmax(scores, dim=-1)
        if self.record:
            self.last_weights = w.detach()
        out = (w @ v).transpose(1, 2).reshape(B, T, -1)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, cfg, layer):
        super().__init__()
        self.norm1 = nn.RMSNorm(cfg.d_model, eps=1e-6)
        self.attn = Attention(cfg, layer)
        self.norm2 = nn.RMSNorm(cfg.d_model, eps=1e-6)
        self.ff = SwiGLU(cfg.d_model, cfg.ff_multiplier * cfg.d_model)

    def forward(self, x, q_pos, allowed, cache=None):
        x = x + self.attn(self.norm1(x), q_pos, allowed, cache)
        return x + self.ff(self.norm2(x))


class Transformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg, i) for i in range(cfg.n_layers))
        self.norm = nn.RMSNorm(cfg.d_model, eps=1e-6)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self._sin_table = None
        for name, p in self.named_parameters():
            if p.dim() == 2:
                nn.init.normal_(p, std=cfg.init_std)

    def _sinusoid(self, n, dtype):
        if self._sin_table is None or self._sin_table.shape[0] < n or self._sin_table.dtype != dtype:
            self._sin_table = sinusoidal_table(max(n, self.cfg.train_context), self.cfg.d_model, dtype)
        return self._sin_table[:n]

    def bam_parameters(self):
        return {n: p for n, p in self.named_parameters() if n.rsplit(".", 1)[-1] in THETA_NAMES}

    def forward(self, tokens, doc_ids=None, cache=None):
        """Next-token logits for ``tokens`` of shape ``(B, T)``.

        ``doc_ids`` (same shape) blocks attention across documents. With a
        ``cache`` (list of per-layer dicts) the call continues from the cached
        prefix and extends it in place.
        """
        if tokens.dim() == 1:
            tokens = tokens[None]
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise ValueError(f"token out of range [0, {self.cfg.vocab_size})")
        B, T = tokens.shape
        start = 0
        if cache is not None:
            start = cache[0].get("length", 0) if cache else 0
        q_pos = torch.arange(start, start + T)

        if doc_ids is None:
            doc_ids = torch.zeros(B, T, dtype=torch.long)
        elif doc_ids.dim() == 1:
            doc_ids = doc_ids[None]
        if cache is not None:
            prev_docs = cache[0].get("doc_ids") if cache else None
            k_docs = doc_ids if prev_docs is None else torch.cat((prev_docs, doc_ids), dim=1)
        else:
            k_docs = doc_ids
        k_pos = torch.arange(k_docs.shape[1])
        allowed = (k_pos[None, :] <= q_pos[:, None])[None] & (doc_ids[:, :, None] == k_docs[:, None, :])

        x = self.embed(tokens)
        if self.cfg.pe_kind == "sinusoidal":
            # token embeddings scaled by sqrt(d) so the unit-amplitude table does not swamp them
            x = x * math.sqrt(self.cfg.d_model) + self._sinusoid(start + T, x.dtype)[start:][None]
        if cache is not None and not cache:
            cache.extend({} for _ in range(max(1, len(self.blocks))))
        for i, block in enumerate(self.blocks):
            x = block(x, q_pos, allowed, None if cache is None else cache[i])
        if cache is not None:
            cache[0]["length"] = start + T
            cache[0]["doc_ids"] = k_docs
        return self.head(self.norm(x))


def build_model(cfg: ModelConfig, dtype=torch.float32, device=None):
    """Instantiate a model with parameters drawn from ``cfg.seed``."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(cfg.seed)
    try:
        model = Transformer(cfg) if device is None else _build_on(cfg, device)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def _build_on(cfg, device):
    with torch.device(device):
        return Transformer(cfg)


def count_parameters(model, trainable_only=True):
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def as_long_tensor(tokens):
    if isinstance(tokens, torch.Tensor):
        return tokens.long()
    return torch.as_tensor(np.asarray(tokens), dtype=torch.long)
