"""Greedy decoding with a key/value cache, and attention inspection."""

import numpy as np
import torch

from .network import as_long_tensor


@torch.no_grad()
def generate(model, prompt, n_new, use_cache=True):
    """Greedy continuation of ``prompt`` by ``n_new`` tokens.

    The cached path feeds one token per step against stored keys and values;
    the uncached path recomputes the full sequence every step. Both return the
    prompt followed by the new tokens as a 1-D int64 array.
    """
    if n_new < 1:
        raise ValueError("n_new must be >= 1")
    seq = as_long_tensor(prompt).reshape(1, -1)
    if seq.shape[1] < 1:
        raise ValueError("prompt must contain at least one token")
    model.eval()
    if use_cache:
        cache = []
        logits = model(seq, cache=cache)
        for _ in range(n_new):
            nxt = logits[:, -1].argmax(-1, keepdim=True)
            seq = torch.cat((seq, nxt), dim=1)
            if seq.shape[1] - as_long_tensor(prompt).numel() == n_new:
                break
            logits = model(nxt, cache=cache)
    else:
        for _ in range(n_new):
            nxt = model(seq)[:, -1].argmax(-1, keepdim=True)
            seq = torch.cat((seq, nxt), dim=1)
    return seq[0].numpy()


@torch.no_grad()
def dump_attention(model, tokens, layer, head):
    """Attention weights ``(L, L)`` of one head on a single sequence."""
    if not 0 <= layer < len(model.blocks):
        raise IndexError(f"layer {layer} out of range [0, {len(model.blocks)})")
    if not 0 <= head < model.cfg.n_heads:
        raise IndexError(f"head {head} out of range [0, {model.cfg.n_heads})")
    attn = model.blocks[layer].attn
    attn.record = True
    try:
        model.eval()
        model(as_long_tensor(tokens).reshape(1, -1))
        weights = attn.last_weights[0, head].double().numpy()
    finally:
        attn.record = False
        attn.last_weights = None
    return np.array(weights)


@torch.no_grad()
def sequence_logits(model, tokens, chunk=8):
    """Logits for a batch ``(N, L)`` of equal-length sequences, in chunks."""
    tokens = as_long_tensor(tokens)
    out = [model(tokens[i:i + chunk]) for i in range(0, tokens.shape[0], chunk)]
    return torch.cat(out)
