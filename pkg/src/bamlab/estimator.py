"""scikit-learn style wrapper around the desk-scale language model.

Sequences are ragged, so ``X`` is a list of 1-D integer token arrays rather
than a 2-D matrix; :func:`check_tokens` does the validation that
``check_array`` would do for tabular data.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import ModelConfig, OptimizerSettings, TokenSequence, generate, sequence_logits, train
from .model.checkpoint import Checkpoint


def check_tokens(X, vocab_size=None, min_length=1):
    """Validate a collection of token sequences, returning a list of int64 arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 1 and X.dtype != object:
        X = [X]
    out = []
    for i, seq in enumerate(X):
        if isinstance(seq, TokenSequence):
            seq = seq.tokens
        arr = np.asarray(seq)
        if arr.ndim != 1:
            raise ValueError(f"sequence {i} must be 1-D, got shape {arr.shape}")
        if arr.size and not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise ValueError(f"sequence {i} has non-integer tokens")
        arr = arr.astype(np.int64)
        if len(arr) < min_length:
            raise ValueError(f"sequence {i} shorter than {min_length} tokens")
        if arr.size and (arr.min() < 0 or (vocab_size is not None and arr.max() >= vocab_size)):
            raise ValueError(f"sequence {i} has tokens outside [0, {vocab_size})")
        out.append(arr)
    if not out:
        raise ValueError("no sequences given")
    return out


class PositionalLM(BaseEstimator):
    """Next-token model with a selectable positional encoding.

    ``fit`` trains on a list of token sequences; ``predict`` returns the
    greedy next token for each sequence; ``score`` is mean negative
    perplexity so that larger is better.
    """

    def __init__(self, pe_kind="bam", use_ssmax=False, vocab_size=64, d_model=64, n_heads=4,
                 n_layers=2, train_context=64, bam_init="uniform", steps=1000, batch_size=16,
                 lr=3e-3, seed=0):
        self.pe_kind = pe_kind
        self.use_ssmax = use_ssmax
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.train_context = train_context
        self.bam_init = bam_init
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _config(self):
        return ModelConfig(vocab_size=self.vocab_size, d_model=self.d_model, n_heads=self.n_heads,
                           n_layers=self.n_layers, train_context=self.train_context,
                           pe_kind=self.pe_kind, use_ssmax=self.use_ssmax,
                           bam_init=self.bam_init, seed=self.seed)

    def fit(self, X, y=None):
        seqs = [TokenSequence(s) for s in check_tokens(X, self.vocab_size, min_length=2)]
        rng = np.random.default_rng(self.seed)

        def stream():
            while True:
                for i in rng.permutation(len(seqs)):
                    yield seqs[i]

        settings = OptimizerSettings(lr=self.lr, batch_size=self.batch_size)
        self.checkpoint_ = train(self._config(), stream(), self.steps, settings)
        self.model_ = self.checkpoint_.to_model()
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint):
        cfg = checkpoint.config
        est = cls(pe_kind=cfg.pe_kind, use_ssmax=cfg.use_ssmax, vocab_size=cfg.vocab_size,
                  d_model=cfg.d_model, n_heads=cfg.n_heads, n_layers=cfg.n_layers,
                  train_context=cfg.train_context, bam_init=cfg.bam_init, seed=cfg.seed)
        est.checkpoint_ = checkpoint
        est.model_ = checkpoint.to_model()
        return est

    @torch.no_grad()
    def predict_log_proba(self, X):
        """Log-probabilities of the next token after each sequence, shape (n, vocab)."""
        check_is_fitted(self, "model_")
        rows = []
        for seq in check_tokens(X, self.vocab_size):
            logits = sequence_logits(self.model_, seq[None])[0, -1]
            rows.append(torch.log_softmax(logits.double(), -1).numpy())
        return np.stack(rows)

    def predict(self, X):
        return self.predict_log_proba(X).argmax(axis=1)

    @torch.no_grad()
    def perplexity(self, X):
        check_is_fitted(self, "model_")
        out = []
        for seq in check_tokens(X, self.vocab_size, min_length=2):
            logits = sequence_logits(self.model_, seq[None])[0, :-1].double()
            nll = torch.nn.functional.cross_entropy(logits, torch.as_tensor(seq[1:]))
            out.append(float(torch.exp(nll)))
        return np.array(out)

    def score(self, X, y=None):
        return -float(self.perplexity(X).mean())

    def generate(self, prompt, n_new):
        check_is_fitted(self, "model_")
        (seq,) = check_tokens([prompt], self.vocab_size)
        return generate(self.model_, seq, n_new)
