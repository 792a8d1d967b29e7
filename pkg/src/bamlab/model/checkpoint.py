"""Checkpoint container and its on-disk format.

File layout: a UTF-8 text manifest terminated by the line ``END_MANIFEST``,
followed immediately by the raw little-endian float32 payload. Manifest
lines::

    bamlab-checkpoint 1
    endianness little
    dtype float32
    step <int>
    config <json>
    tensor <name> <shape as d0,d1,...> <offset in elements> <count>
    theta <layer> <head> <theta_mu> <theta_alpha> <theta_beta>
    ssmax <layer> <head> <s>
    END_MANIFEST

``theta`` and ``ssmax`` lines only mirror payload values for inspection; the
payload is authoritative.
"""

import json
import re
from dataclasses import dataclass, field

import numpy as np
import torch

from ..priors import ThetaParams
from .config import THETA_NAMES, ModelConfig
from .network import build_model

MAGIC = "bamlab-checkpoint 1"
_THETA_KEY = re.compile(r"blocks\.(\d+)\.attn\.(theta_\w+)$")
_SSMAX_KEY = re.compile(r"blocks\.(\d+)\.attn\.ssmax_scale$")


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict = field(repr=False)
    step: int = 0

    @classmethod
    def from_model(cls, model, step=0):
        state = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(model.cfg, state, step)

    def to_model(self, dtype=torch.float32):
        model = build_model(self.config, dtype=dtype)
        model.load_state_dict({k: torch.as_tensor(v) for k, v in self.state.items()})
        return model.to(dtype)

    def bam_thetas(self):
        """``thetas[layer][head]`` as :class:`ThetaParams`; raises for non-BAM models."""
        if self.config.pe_kind != "bam":
            raise ValueError(f"checkpoint has pe_kind={self.config.pe_kind!r}, not 'bam'")
        out = []
        for layer in range(self.config.n_layers):
            vals = {n: self.state[f"blocks.{layer}.attn.{n}"] for n in THETA_NAMES}
            out.append([
                ThetaParams(float(vals["theta_mu"][h]), float(vals["theta_alpha"][h]),
                            float(vals["theta_beta"][h]), self.config.epsilon)
                for h in range(self.config.n_heads)
            ])
        return out

    def ssmax_scales(self):
        if not self.config.use_ssmax:
            raise ValueError("checkpoint was trained without scalable softmax")
        return [self.state[f"blocks.{l}.attn.ssmax_scale"].astype(float).tolist()
                for l in range(self.config.n_layers)]

    def save(self, path):
        lines = [MAGIC, "endianness little", "dtype float32", f"step {self.step}",
                 f"config {self.config.to_json()}"]
        offset, payload = 0, []
        for name in sorted(self.state):
            arr = np.ascontiguousarray(self.state[name], dtype="<f4")
            shape = ",".join(str(s) for s in arr.shape) or "scalar"
            lines.append(f"tensor {name} {shape} {offset} {arr.size}")
            payload.append(arr.tobytes())
            offset += arr.size
        if self.config.pe_kind == "bam":
            for l, heads in enumerate(self.bam_thetas()):
                for h, t in enumerate(heads):
                    lines.append(f"theta {l} {h} {t.theta_mu!r} {t.theta_alpha!r} {t.theta_beta!r}")
        if self.config.use_ssmax:
            for l, scales in enumerate(self.ssmax_scales()):
                for h, s in enumerate(scales):
                    lines.append(f"ssmax {l} {h} {s!r}")
        lines.append("END_MANIFEST")
        with open(path, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode())
            for chunk in payload:
                fh.write(chunk)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        marker = b"END_MANIFEST\n"
        end = data.find(marker)
        if end < 0 or not data.startswith(MAGIC.encode()):
            raise ValueError(f"{path}: not a bamlab checkpoint")
        manifest = data[:end].decode().splitlines()
        blob = np.frombuffer(data[end + len(marker):], dtype="<f4")
        config, step, state = None, 0, {}
        for line in manifest[1:]:
            key, _, rest = line.partition(" ")
            if key == "step":
                step = int(rest)
            elif key == "config":
                config = ModelConfig.from_dict(json.loads(rest))
            elif key == "tensor":
                name, shape, offset, count = rest.split(" ")
                shape = () if shape == "scalar" else tuple(int(s) for s in shape.split(","))
                offset, count = int(offset), int(count)
                state[name] = blob[offset:offset + count].astype(np.float32).reshape(shape)
            elif key == "endianness" and rest != "little":
                raise ValueError(f"{path}: unsupported endianness {rest!r}")
        if config is None:
            raise ValueError(f"{path}: manifest has no config line")
        return cls(config, state, step)
