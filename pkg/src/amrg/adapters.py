"""Low-rank adapters on frozen linear maps.

Convention: ``W`` is ``d x k`` and acts on length-``k`` inputs, ``y = W x``.
The adapter adds ``scale * A @ B`` with ``A`` (``d x r``) and ``B`` (``r x k``).
``scale`` is ``alpha`` by default; ``scaling="rank"`` gives ``alpha / r``.

Inputs may be a single vector or a 2-D batch whose rows are vectors.
"""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INIT_STD = 0.02
DEFAULT_DROPOUT = 0.05

# Every linear layer of the toy decoder carries an adapter. Cross-attention has
# no output projection: its attended values feed the residual stream directly.
PLACEMENT = {
    "self_attn": ("q_proj", "k_proj", "v_proj", "o_proj"),
    "cross_attn": ("q_proj", "k_proj", "v_proj"),
    "mlp": ("gate_proj", "up_proj", "down_proj"),
    "vision_projector": ("proj",),
}


@dataclass
class LoraLinear:
    W: np.ndarray
    A: np.ndarray
    B: np.ndarray
    alpha: float
    dropout_p: float = DEFAULT_DROPOUT
    scaling: str = "alpha"

    def __post_init__(self):
        d, k = self.W.shape
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ValueError("A and B must be matrices")
        if self.A.shape[0] != d or self.B.shape[1] != k or self.A.shape[1] != self.B.shape[0]:
            raise ValueError(
                f"incompatible shapes W{self.W.shape} A{self.A.shape} B{self.B.shape}"
            )
        if self.r < 1:
            raise ValueError("rank must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.scaling not in ("alpha", "rank"):
            raise ValueError(f"unknown scaling {self.scaling!r}")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    @property
    def r(self) -> int:
        return self.A.shape[1]

    @property
    def scale(self) -> float:
        return self.alpha if self.scaling == "alpha" else self.alpha / self.r


def lora_init(W: np.ndarray, r: int, alpha: float, seed: int,
              dropout_p: float = DEFAULT_DROPOUT, scaling: str = "alpha") -> LoraLinear:
    """Gaussian ``A`` (std 0.02), zero ``B``: the adapted map starts equal to ``W``."""
    W = np.array(W, dtype=np.float64)
    d, k = W.shape
    if r < 1 or r > min(d, k):
        raise ValueError(f"rank {r} outside [1, min(d, k) = {min(d, k)}]")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, INIT_STD, size=(d, r))
    B = np.zeros((r, k))
    return LoraLinear(W, A, B, float(alpha), dropout_p, scaling)


def _check_input(layer: LoraLinear, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != layer.k:
        raise ValueError(f"input of shape {x.shape} does not match k={layer.k}")
    return x


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``p``, else ``1/(1-p)``."""
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def lora_forward(layer: LoraLinear, x, training: bool = False, seed: int | None = None,
                 mask: np.ndarray | None = None) -> np.ndarray:
    """``W x + scale * A (B x~)`` where ``x~`` is ``x`` after dropout in training mode.

    Dropout touches only the adapter path. Pass ``mask`` to reuse a dropout
    pattern (e.g. for the matching backward pass); otherwise one is drawn from
    ``seed``.
    """
    x = _check_input(layer, x)
    if training and layer.dropout_p > 0:
        if mask is None:
            mask = dropout_mask(x.shape, layer.dropout_p, np.random.default_rng(seed))
        xa = x * mask
    else:
        xa = x
    return x @ layer.W.T + layer.scale * (xa @ layer.B.T) @ layer.A.T


def lora_merge(layer: LoraLinear) -> np.ndarray:
    return layer.W + layer.scale * (layer.A @ layer.B)


def lora_backward(layer: LoraLinear, x, upstream, mask: np.ndarray | None = None):
    """Gradients ``(dA, dB, dx)`` of a scalar loss with ``dL/dy = upstream``.

    Batched inputs sum their per-row contributions. ``W`` gets no gradient.
    """
    x = _check_input(layer, x)
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape[-1] != layer.d or u.shape[:-1] != x.shape[:-1]:
        raise ValueError(f"upstream of shape {u.shape} does not match output d={layer.d}")
    xa = x if mask is None else x * mask
    x2, u2, xa2 = np.atleast_2d(x), np.atleast_2d(u), np.atleast_2d(xa)
    s = layer.scale
    bx = xa2 @ layer.B.T                      # rows of B x~
    atu = u2 @ layer.A                        # rows of A^T u
    dA = s * u2.T @ bx
    dB = s * atu.T @ xa2
    dxa = s * atu @ layer.B
    if mask is not None:
        dxa = dxa * np.atleast_2d(mask)
    dx = u2 @ layer.W + dxa
    return dA, dB, dx.reshape(x.shape)


def lora_grads(layer: LoraLinear, x, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode ``(dA, dB)``: ``scale * u (B x)^T`` and ``scale * (A^T u) x^T``."""
    dA, dB, _ = lora_backward(layer, x, upstream)
    return dA, dB


@dataclass(frozen=True)
class SweepGrid:
    ranks: tuple[int, ...] = (16, 32, 64)
    alphas: tuple[float, ...] = (8, 16)

    def __post_init__(self):
        if not self.ranks or not self.alphas:
            raise ValueError("sweep grid needs at least one rank and one alpha")


def sweep_plan(grid: SweepGrid = SweepGrid()) -> list[tuple[int, float]]:
    """(rank, alpha) pairs with alpha as the outer loop: (16, 8), (32, 8), ..."""
    return [(r, a) for a, r in itertools.product(grid.alphas, grid.ranks)]


# --- serialization -----------------------------------------------------------
#
# Binary layout, little-endian throughout:
#   magic b"LORA" | u32 version (=1) | u32 d | u32 k | u32 r | f64 alpha
#   | f64 dropout_p | u8 scaling (0 = alpha, 1 = rank) | 7 pad bytes
#   | W (d*k f64, row-major) | A (d*r f64) | B (r*k f64)

_MAGIC = b"LORA"
_HEADER = struct.Struct("<4sIIIIddB7x")


def to_bytes(layer: LoraLinear) -> bytes:
    header = _HEADER.pack(_MAGIC, 1, layer.d, layer.k, layer.r, layer.alpha,
                          layer.dropout_p, 0 if layer.scaling == "alpha" else 1)
    body = b"".join(np.ascontiguousarray(m, dtype="<f8").tobytes()
                    for m in (layer.W, layer.A, layer.B))
    return header + body


def from_bytes(buf: bytes) -> LoraLinear:
    magic, version, d, k, r, alpha, p, scaling = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a version-1 LoRA layer blob")
    off = _HEADER.size
    mats = []
    for rows, cols in ((d, k), (d, r), (r, k)):
        n = rows * cols
        mats.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off)
                    .reshape(rows, cols).astype(np.float64))
        off += 8 * n
    if off != len(buf):
        raise ValueError("trailing bytes after LoRA layer blob")
    return LoraLinear(*mats, alpha=alpha, dropout_p=p,
                      scaling="alpha" if scaling == 0 else "rank")


def to_json(layer: LoraLinear) -> dict:
    return {
        "d": layer.d, "k": layer.k, "r": layer.r, "alpha": layer.alpha,
        "dropout_p": layer.dropout_p, "scaling": layer.scaling,
        "W": layer.W.ravel().tolist(), "A": layer.A.ravel().tolist(),
        "B": layer.B.ravel().tolist(),
    }


def from_json(obj: dict) -> LoraLinear:
    d, k, r = obj["d"], obj["k"], obj["r"]
    return LoraLinear(
        np.array(obj["W"], dtype=np.float64).reshape(d, k),
        np.array(obj["A"], dtype=np.float64).reshape(d, r),
        np.array(obj["B"], dtype=np.float64).reshape(r, k),
        alpha=float(obj["alpha"]),
        dropout_p=float(obj.get("dropout_p", DEFAULT_DROPOUT)),
        scaling=obj.get("scaling", "alpha"),
    )


def save(layer: LoraLinear, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(to_json(layer)))
    else:
        path.write_bytes(to_bytes(layer))


def load(path: str | Path) -> LoraLinear:
    path = Path(path)
    if path.suffix == ".json":
        return from_json(json.loads(path.read_text()))
    return from_bytes(path.read_bytes())
