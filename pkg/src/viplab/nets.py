"""Time-conditioned residual-MLP noise predictors with prunable blocks.

The network maps a noisy 2D point plus a sinusoidal timestep embedding
through an input projection, a stack of width-preserving residual blocks
(the prunable units), and a linear head back to 2D. Pruning masks a block
(identity bypass) instead of deleting it, so every checkpoint keeps the
full architecture plus an activity mask.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .autodiff import Parameter, ShapeError, silu
from .serde import dumps_json, load_json

CHECKPOINT_FORMAT_VERSION = 1

# Named architectures. The pipeline teacher carries six prunable blocks so
# multi-stage pruning has room to work; the toy presets mirror the 4-layer/64
# and 2-layer/32 trunk sizes of the capacity-gap experiment (each residual
# block holds two dense layers).
PRESETS: dict[str, dict[str, int]] = {
    "teacher": {"hidden_width": 64, "n_blocks": 6, "time_embed_dim": 16},
    "toy-teacher": {"hidden_width": 64, "n_blocks": 2, "time_embed_dim": 16},
    "base-student": {"hidden_width": 32, "n_blocks": 1, "time_embed_dim": 16},
}


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (batch, dim)."""
    if dim % 2 != 0:
        raise ValueError(f"time_embed_dim must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class Dense:
    """Affine layer holding weight (n_in, n_out) and bias (n_out,)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        # He fan-in scaling; biases start at zero.
        scale = math.sqrt(2.0 / n_in)
        self.w = Parameter(rng.standard_normal((n_in, n_out)) * scale)
        self.b = Parameter(np.zeros(n_out))

    def apply(self, h, pick):
        return h @ pick(self.w) + pick(self.b)


class ResidualBlock:
    """Width-preserving block: h + fc2(silu(fc1(h))). Masked -> identity."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.fc1 = Dense(width, width, rng)
        self.fc2 = Dense(width, width, rng)

    def apply(self, h, pick):
        return h + self.fc2.apply(silu(self.fc1.apply(h, pick)), pick)


class EpsilonNet:
    """Noise predictor eps(x_t, t) -> R^2 with maskable residual blocks."""

    input_dim = 2
    output_dim = 2

    def __init__(
        self,
        hidden_width: int,
        n_blocks: int,
        time_embed_dim: int = 16,
        seed: int = 0,
    ):
        if hidden_width < 1 or n_blocks < 1:
            raise ValueError("hidden_width and n_blocks must be positive")
        self.hidden_width = hidden_width
        self.time_embed_dim = time_embed_dim
        self.init_seed = int(seed)
        rng = np.random.default_rng(np.random.SeedSequence(self.init_seed))
        self.embed = Dense(self.input_dim + time_embed_dim, hidden_width, rng)
        self.blocks = [ResidualBlock(hidden_width, rng) for _ in range(n_blocks)]
        self.head = Dense(hidden_width, self.output_dim, rng)
        self.block_active = [True] * n_blocks

    @classmethod
    def from_preset(cls, name: str, seed: int = 0) -> "EpsilonNet":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(seed=seed, **PRESETS[name])

    # -- forward -------------------------------------------------------------

    def forward(self, x_t, t, grad: bool = False):
        """Predict noise for a batch.

        With grad=True, parameters enter the graph and the result is a
        Tensor; otherwise everything stays in plain numpy. Both paths run
        the identical arithmetic.
        """
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.ndim != 2 or x_t.shape[1] != self.input_dim:
            raise ShapeError(
                f"x_t has shape {x_t.shape}; dimension 1 must be {self.input_dim}"
            )
        t = np.asarray(t)
        if t.ndim == 0:
            t = np.full(x_t.shape[0], int(t))
        if t.shape[0] != x_t.shape[0]:
            raise ShapeError(
                f"t has length {t.shape[0]} but x_t has batch dimension {x_t.shape[0]}"
            )
        if not any(self.block_active):
            raise ValueError("at least one block must be active")

        pick = (lambda p: p) if grad else (lambda p: p.data)
        h = np.concatenate([x_t, time_embedding(t, self.time_embed_dim)], axis=1)
        h = silu(self.embed.apply(h, pick))
        for block, active in zip(self.blocks, self.block_active):
            if active:
                h = block.apply(h, pick)
        return self.head.apply(h, pick)

    # -- parameters ------------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        """All parameters (masked blocks included), in a fixed order."""
        named = [("embed.w", self.embed.w), ("embed.b", self.embed.b)]
        for i, block in enumerate(self.blocks):
            named += [
                (f"blocks.{i}.fc1.w", block.fc1.w),
                (f"blocks.{i}.fc1.b", block.fc1.b),
                (f"blocks.{i}.fc2.w", block.fc2.w),
                (f"blocks.{i}.fc2.b", block.fc2.b),
            ]
        named += [("head.w", self.head.w), ("head.b", self.head.b)]
        return named

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def clone(self) -> "EpsilonNet":
        other = EpsilonNet(
            self.hidden_width, len(self.blocks), self.time_embed_dim, self.init_seed
        )
        for (_, src), (_, dst) in zip(self.named_parameters(), other.named_parameters()):
            dst.data = src.data.copy()
        other.block_active = list(self.block_active)
        return other

    def params_hash(self) -> str:
        """SHA-256 over architecture, mask and parameter bytes."""
        h = hashlib.sha256()
        h.update(
            f"{self.input_dim},{self.time_embed_dim},{self.hidden_width},"
            f"{len(self.blocks)},{self.block_active}".encode()
        )
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def param_count(net: EpsilonNet) -> int:
    """Number of active parameters: embed + head + unmasked blocks."""
    total = net.embed.w.data.size + net.embed.b.data.size
    total += net.head.w.data.size + net.head.b.data.size
    for block, active in zip(net.blocks, net.block_active):
        if active:
            for layer in (block.fc1, block.fc2):
                total += layer.w.data.size + layer.b.data.size
    return total


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(net: EpsilonNet, path, rng_seed: int | None = None) -> None:
    """Write the single-document JSON checkpoint format."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": {
            "input_dim": net.input_dim,
            "time_embed_dim": net.time_embed_dim,
            "hidden_width": net.hidden_width,
            "n_blocks": len(net.blocks),
            "block_active": [bool(a) for a in net.block_active],
        },
        "params": [
            {
                "name": name,
                "shape": list(p.data.shape),
                "data": [float(v) for v in p.data.ravel()],
            }
            for name, p in net.named_parameters()
        ],
        "rng_seed": int(net.init_seed if rng_seed is None else rng_seed),
    }
    # Compact form: parameter payloads dominate and are not for human eyes.
    text = dumps_json(doc, indent=None)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def load_checkpoint(path) -> EpsilonNet:
    doc = load_json(path)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r}"
        )
    arch = doc["arch"]
    net = EpsilonNet(
        hidden_width=arch["hidden_width"],
        n_blocks=arch["n_blocks"],
        time_embed_dim=arch["time_embed_dim"],
        seed=doc.get("rng_seed", 0),
    )
    net.block_active = [bool(a) for a in arch["block_active"]]
    by_name = dict(net.named_parameters())
    for entry in doc["params"]:
        p = by_name.pop(entry["name"], None)
        if p is None:
            raise ValueError(f"checkpoint has unknown parameter {entry['name']!r}")
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != p.data.shape:
            raise ShapeError(
                f"parameter {entry['name']!r} has shape {data.shape}, "
                f"expected {p.data.shape}"
            )
        if not np.isfinite(data).all():
            raise ValueError(f"parameter {entry['name']!r} contains non-finite values")
        p.data = data
    if by_name:
        raise ValueError(f"checkpoint missing parameters: {sorted(by_name)}")
    return net


def check_finite(net: EpsilonNet) -> None:
    for name, p in net.named_parameters():
        if not np.isfinite(p.data).all():
            raise ValueError(f"parameter {name!r} contains non-finite values")
