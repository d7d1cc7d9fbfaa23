"""Unimodal feature extractors: text projector MLP, LSTM sequence
encoders, shared-space projection, and per-modality regression heads.

All building blocks operate on batched (B, d) tensors from diffcore and
are pure functions of their parameters.  Biases are stored as (1, d) rows
and broadcast over the batch with a ones-column matmul, keeping every
operation inside the strict-shape primitive set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


class ParamStore:
    """Named learnable tensors, each tagged with one optimizer group."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, array: np.ndarray, group: str) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        self._groups[name] = group
        return t

    def tensors(self) -> dict[str, Tensor]:
        return dict(self._params)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def groups(self) -> dict[str, str]:
        return dict(self._groups)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]


def _ones_column(batch: int) -> Tensor:
    return Tensor(np.ones((batch, 1)))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the (1, d_out) bias tiled over the batch."""
    out = dc.matmul(x, w)
    if out.data.ndim == 1:
        return dc.add(out, dc.reshape(b, (b.data.size,)))
    return dc.add(out, dc.matmul(_ones_column(out.shape[0]), b))


def uniform_init(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MLPSpec:
    widths: list[int]           # [d_in, hidden..., d_out]
    dropout: float = 0.0

    def __post_init__(self):
        if any(w <= 0 for w in self.widths) or len(self.widths) < 2:
            raise ValueError(f"bad MLP widths {self.widths}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"bad dropout {self.dropout}")


class MLP:
    """Fully connected stack, ReLU + dropout on hidden layers, linear output."""

    def __init__(self, store: ParamStore, prefix: str, spec: MLPSpec,
                 group: str, rng: np.random.Generator):
        self.spec = spec
        self.weights: list[tuple[Tensor, Tensor]] = []
        for i, (din, dout) in enumerate(zip(spec.widths, spec.widths[1:])):
            bound = 1.0 / np.sqrt(din)
            w = store.add(f"{prefix}.w{i}", uniform_init(rng, (din, dout), bound), group)
            b = store.add(f"{prefix}.b{i}", uniform_init(rng, (1, dout), bound), group)
            self.weights.append((w, b))

    def __call__(self, x: Tensor, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(self.weights):
            h = affine(h, w, b)
            if i < last:
                h = dc.relu(h)
                if self.spec.dropout > 0.0:
                    h = dc.dropout(h, self.spec.dropout, train, rng)
        return h


@dataclass
class LSTMSpec:
    input_dim: int
    hidden_dim: int

    def __post_init__(self):
        if self.input_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("LSTM dims must be positive")


class LSTMEncoder:
    """Single-layer LSTM; the hidden state at each sample's own length is
    the sequence representation.  Gate order in the packed weights is
    (i, f, o, g); the forget-gate bias starts at +1.
    """

    def __init__(self, store: ParamStore, prefix: str, spec: LSTMSpec,
                 group: str, rng: np.random.Generator):
        self.spec = spec
        h = spec.hidden_dim
        bound = 1.0 / np.sqrt(h)
        self.wx = store.add(f"{prefix}.wx",
                            uniform_init(rng, (spec.input_dim, 4 * h), bound), group)
        self.wh = store.add(f"{prefix}.wh",
                            uniform_init(rng, (h, 4 * h), bound), group)
        b = uniform_init(rng, (1, 4 * h), bound)
        b[0, h : 2 * h] += 1.0
        self.b = store.add(f"{prefix}.b", b, group)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        nh = self.spec.hidden_dim
        z = dc.add(dc.matmul(x, self.wx), dc.matmul(h, self.wh))
        z = dc.add(z, dc.matmul(_ones_column(z.shape[0]), self.b))
        i = dc.sigmoid(dc.tslice(z, 1, 0, nh))
        f = dc.sigmoid(dc.tslice(z, 1, nh, 2 * nh))
        o = dc.sigmoid(dc.tslice(z, 1, 2 * nh, 3 * nh))
        g = dc.tanh(dc.tslice(z, 1, 3 * nh, 4 * nh))
        c_new = dc.add(dc.mul(f, c), dc.mul(i, g))
        h_new = dc.mul(o, dc.tanh(c_new))
        return h_new, c_new

    def encode_batch(self, padded: np.ndarray, lengths: np.ndarray) -> Tensor:
        """padded (B, T, d) with per-sample valid lengths; returns (B, H)."""
        bsz, t_max, d = padded.shape
        if d != self.spec.input_dim:
            raise dc.ShapeError(
                f"lstm: input dim {d} != spec {self.spec.input_dim}"
            )
        if np.any(lengths < 1) or np.any(lengths > t_max):
            raise dc.ShapeError("lstm: lengths must lie in [1, T]")
        nh = self.spec.hidden_dim
        h = Tensor(np.zeros((bsz, nh)))
        c = Tensor(np.zeros((bsz, nh)))
        final = Tensor(np.zeros((bsz, nh)))
        for t in range(int(lengths.max())):
            x_t = Tensor(padded[:, t, :])
            h, c = self.step(x_t, h, c)
            mask = (lengths == t + 1).astype(float)[:, None] * np.ones((1, nh))
            if mask.any():
                final = dc.add(final, dc.mul(h, Tensor(mask)))
        return final

    def encode(self, seq: np.ndarray, length: int) -> Tensor:
        """Single sequence (T, d) -> (H,) hidden state at step `length`."""
        out = self.encode_batch(seq[None, :, :], np.array([length]))
        return dc.reshape(out, (self.spec.hidden_dim,))


def project(f_m: Tensor, w_m: Tensor) -> Tensor:
    """Shared-space projection relu(f W), no bias.

    w_m is stored as (d_m', d*), i.e. the transpose of the d* x d_m'
    matrix applied on the left of a column vector.
    """
    return dc.relu(dc.matmul(f_m, w_m))


def unimodal_predict(f_m: Tensor, w: Tensor, b: Tensor, dropout_rate: float = 0.0,
                     train: bool = False, rng=None) -> Tensor:
    """Per-modality regression head on the raw extractor output."""
    h = f_m
    if dropout_rate > 0.0:
        h = dc.dropout(h, dropout_rate, train, rng)
    return affine(h, w, b)
