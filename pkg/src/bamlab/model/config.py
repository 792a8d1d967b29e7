"""Model hyperparameters."""

import json
from dataclasses import asdict, dataclass, fields

PE_KINDS = ("nope", "sinusoidal", "rope", "alibi", "bam")
BAM_INITS = ("uniform", "alibi")
THETA_NAMES = ("theta_beta", "theta_alpha", "theta_mu")


class ConfigError(ValueError):
    """A configuration field has an invalid value."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ModelConfig:
    """Decoder hyperparameters plus the positional-encoding choice.

    ``bam_init`` and ``bam_trainable`` only matter when ``pe_kind == "bam"``.
    ``n_layers`` may be 0, which leaves embedding, final norm and output head.
    """

    vocab_size: int = 64
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_multiplier: int = 2
    train_context: int = 64
    pe_kind: str = "bam"
    use_ssmax: bool = False
    bam_init: str = "uniform"
    bam_trainable: tuple = ("theta_beta", "theta_alpha")
    epsilon: float = 1e-5
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bam_trainable", tuple(self.bam_trainable))
        for name in ("vocab_size", "d_model", "n_heads", "ff_multiplier", "train_context"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigError(name, f"must be a positive integer, got {val!r}")
        if not isinstance(self.n_layers, int) or self.n_layers < 0:
            raise ConfigError("n_layers", f"must be a non-negative integer, got {self.n_layers!r}")
        if self.d_model % self.n_heads:
            raise ConfigError("n_heads", f"must divide d_model={self.d_model}")
        if self.pe_kind not in PE_KINDS:
            raise ConfigError("pe_kind", f"must be one of {PE_KINDS}, got {self.pe_kind!r}")
        if self.pe_kind == "rope" and (self.d_model // self.n_heads) % 2:
            raise ConfigError("d_model", "RoPE needs an even head dimension")
        if self.bam_init not in BAM_INITS:
            raise ConfigError("bam_init", f"must be one of {BAM_INITS}, got {self.bam_init!r}")
        bad = [t for t in self.bam_trainable if t not in THETA_NAMES]
        if bad or len(set(self.bam_trainable)) != len(self.bam_trainable):
            raise ConfigError("bam_trainable", f"must be a subset of {THETA_NAMES}, got {self.bam_trainable!r}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", "must be positive")
        if not self.init_std > 0:
            raise ConfigError("init_std", "must be positive")
        if not isinstance(self.use_ssmax, bool):
            raise ConfigError("use_ssmax", "must be a boolean")

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    def bam_overhead(self):
        """Number of trainable scalars the positional prior adds to the model."""
        if self.pe_kind != "bam":
            return 0
        return len(self.bam_trainable) * self.n_heads * self.n_layers

    def replace(self, **changes):
        return type(self).from_dict({**self.to_dict(), **changes})

    def to_dict(self):
        d = asdict(self)
        d["bam_trainable"] = list(self.bam_trainable)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown model config field")
        return cls(**d)
