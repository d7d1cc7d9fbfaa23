"""Reverse-mode automatic differentiation over dense float64 tensors.

Everything downstream (encoders, fusion, losses) is built from the small
set of primitives registered here.  A Tape records primitive applications
in execution order (which is already a topological order), and backward()
replays it once in reverse.  Tapes are rebuilt on every forward pass.
"""

from __future__ import annotations

import numpy as np


class DiffError(Exception):
    """Base class for autodiff failures."""


class ShapeError(DiffError):
    """Input shapes do not conform to the primitive's rule."""


class DomainError(DiffError):
    """Input values outside the primitive's valid domain."""


class Tensor:
    """Dense row-major float64 array with an optional gradient slot.

    Tensors are immutable after creation except for ``grad`` accumulation.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} != tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """One recorded primitive application: output plus its pullback."""

    __slots__ = ("op_kind", "inputs", "output", "backward_fn")

    def __init__(self, op_kind, inputs, output, backward_fn):
        self.op_kind = op_kind
        self.inputs = inputs
        self.output = output
        # backward_fn(grad_out) -> list of grads aligned with inputs
        # (None for inputs that do not need a gradient).
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _as2d(x: np.ndarray, row: bool) -> np.ndarray:
    if x.ndim == 2:
        return x
    return x.reshape(1, -1) if row else x.reshape(-1, 1)


# ---------------------------------------------------------------------------
# Primitive implementations.  Each returns (out_data, backward_fn).
# ---------------------------------------------------------------------------


def _matmul(a: Tensor, b: Tensor, attrs):
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: shapes {a.shape} @ {b.shape} not 1-D/2-D")
    ka = a.shape[-1]
    kb = b.shape[0]
    if ka != kb:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        a2 = _as2d(a.data, row=True)
        b2 = _as2d(b.data, row=False)
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(a.shape) if a.requires_grad else None
        gb = (a2.T @ g2).reshape(b.shape) if b.requires_grad else None
        return [ga, gb]

    return out, backward


def _add(a, b, attrs):
    _check_same_shape("add", a, b)
    return a.data + b.data, lambda g: [g, g]


def _sub(a, b, attrs):
    _check_same_shape("sub", a, b)
    return a.data - b.data, lambda g: [g, -g]


def _mul(a, b, attrs):
    _check_same_shape("mul", a, b)
    return a.data * b.data, lambda g: [g * b.data, g * a.data]


def _div(a, b, attrs):
    _check_same_shape("div", a, b)
    if np.any(b.data == 0.0):
        raise DomainError("div: zero denominator")
    out = a.data / b.data
    return out, lambda g: [g / b.data, -g * a.data / (b.data * b.data)]


def _scalar_mul(a, attrs):
    c = float(attrs["scalar"])
    return a.data * c, lambda g: [g * c]


def _relu(a, attrs):
    mask = a.data > 0.0
    return a.data * mask, lambda g: [g * mask]


def _sigmoid(a, attrs):
    out = np.where(
        a.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(a.data))),
        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))),
    )
    return out, lambda g: [g * out * (1.0 - out)]


def _tanh(a, attrs):
    out = np.tanh(a.data)
    return out, lambda g: [g * (1.0 - out * out)]


def _softplus(a, attrs):
    # Overflow-safe branch: max(x, 0) + log1p(exp(-|x|)).
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(
        x >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x))),
        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
    )
    return out, lambda g: [g * sig]


def _exp(a, attrs):
    out = np.exp(a.data)
    return out, lambda g: [g * out]


def _log(a, attrs):
    if np.any(a.data <= 0.0):
        raise DomainError("log: non-positive input")
    return np.log(a.data), lambda g: [g / a.data]


def _square(a, attrs):
    return a.data * a.data, lambda g: [g * 2.0 * a.data]


def _sqrt(a, attrs):
    if np.any(a.data <= 0.0):
        raise DomainError("sqrt: non-positive input")
    out = np.sqrt(a.data)
    return out, lambda g: [g * 0.5 / out]


def _sum(a, attrs):
    shape = a.shape
    return np.array(a.data.sum()), lambda g: [np.full(shape, float(g))]


def _mean(a, attrs):
    shape = a.shape
    n = a.data.size
    return np.array(a.data.mean()), lambda g: [np.full(shape, float(g) / n)]


def _concat(tensors, attrs):
    axis = int(attrs["axis"])
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return list(np.split(g, splits, axis=axis))

    return out, backward


def _slice(a, attrs):
    axis = int(attrs["axis"])
    start, stop = int(attrs["start"]), int(attrs["stop"])
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeError(
            f"slice: range [{start}, {stop}) invalid for axis {axis} of {a.shape}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return [full]

    return out, backward


def _reshape(a, attrs):
    shape = tuple(int(s) for s in attrs["shape"])
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: {a.shape} -> {shape} changes element count")
    old = a.shape
    return a.data.reshape(shape), lambda g: [g.reshape(old)]


def _dropout(a, attrs):
    rate = float(attrs["rate"])
    if not (0.0 <= rate < 1.0):
        raise DomainError(f"dropout: rate {rate} outside [0, 1)")
    if not attrs.get("train", False) or rate == 0.0:
        return a.data.copy(), lambda g: [g]
    rng = attrs["rng"]
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return a.data * keep, lambda g: [g * keep]


_UNARY = {
    "scalar_mul": _scalar_mul,
    "relu": _relu,
    "sigmoid": _sigmoid,
    "tanh": _tanh,
    "softplus": _softplus,
    "exp": _exp,
    "log": _log,
    "square": _square,
    "sqrt": _sqrt,
    "sum": _sum,
    "mean": _mean,
    "slice": _slice,
    "reshape": _reshape,
    "dropout": _dropout,
}

_BINARY = {
    "matmul": _matmul,
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
}


def apply_primitive(op_kind: str, inputs: list[Tensor], attrs: dict | None = None) -> Tensor:
    """Apply one registered primitive, recording it on the active tape."""
    attrs = attrs or {}
    if op_kind in _BINARY:
        if len(inputs) != 2:
            raise ShapeError(f"{op_kind}: expected 2 inputs, got {len(inputs)}")
        out_data, backward_fn = _BINARY[op_kind](inputs[0], inputs[1], attrs)
    elif op_kind in _UNARY:
        if len(inputs) != 1:
            raise ShapeError(f"{op_kind}: expected 1 input, got {len(inputs)}")
        out_data, backward_fn = _UNARY[op_kind](inputs[0], attrs)
    elif op_kind == "concat":
        if not inputs:
            raise ShapeError("concat: empty input list")
        out_data, backward_fn = _concat(inputs, attrs)
    else:
        raise DiffError(f"unknown primitive {op_kind!r}")

    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    tape = active_tape()
    if tape is not None and needs_grad:
        tape.record(Node(op_kind, list(inputs), out, backward_fn))
    return out


# Thin wrappers used by the model code.

def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def add(a, b):
    return apply_primitive("add", [a, b])


def sub(a, b):
    return apply_primitive("sub", [a, b])


def mul(a, b):
    return apply_primitive("mul", [a, b])


def div(a, b):
    return apply_primitive("div", [a, b])


def scalar_mul(a, c):
    return apply_primitive("scalar_mul", [a], {"scalar": c})


def relu(a):
    return apply_primitive("relu", [a])


def sigmoid(a):
    return apply_primitive("sigmoid", [a])


def tanh(a):
    return apply_primitive("tanh", [a])


def softplus(a):
    return apply_primitive("softplus", [a])


def exp(a):
    return apply_primitive("exp", [a])


def log(a):
    return apply_primitive("log", [a])


def square(a):
    return apply_primitive("square", [a])


def sqrt(a):
    return apply_primitive("sqrt", [a])


def tsum(a):
    return apply_primitive("sum", [a])


def tmean(a):
    return apply_primitive("mean", [a])


def concat(tensors, axis=0):
    return apply_primitive("concat", list(tensors), {"axis": axis})


def tslice(a, axis, start, stop):
    return apply_primitive("slice", [a], {"axis": axis, "start": start, "stop": stop})


def reshape(a, shape):
    return apply_primitive("reshape", [a], {"shape": shape})


def dropout(a, rate, train, rng=None):
    return apply_primitive("dropout", [a], {"rate": rate, "train": train, "rng": rng})


def tabs(a):
    """|x| composed from relu(x) + relu(-x); subgradient 0 at the kink."""
    return add(relu(a), relu(scalar_mul(a, -1.0)))


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep over the tape, accumulating gradients into .grad.

    Returns a map from id(tensor) to its gradient for every requires_grad
    tensor reached from the loss.  Unreached tensors keep grad None, which
    callers treat as zero.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    produced = {id(node.output) for node in tape.nodes}
    if loss.requires_grad and id(loss) not in produced:
        leaf_grads[id(loss)] = grads[id(loss)]
        loss.accumulate_grad(grads[id(loss)])

    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        input_grads = node.backward_fn(g_out)
        for tensor, g_in in zip(node.inputs, input_grads):
            if g_in is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in
            if key not in produced:
                # Leaf parameter: fold into .grad once all contributions
                # along the tape have been merged.
                pass

    # grads now holds only leaves (outputs were popped as visited).
    for node in tape.nodes:
        for tensor in node.inputs:
            key = id(tensor)
            if key in grads and key not in produced:
                leaf_grads[key] = grads.pop(key)
                tensor.accumulate_grad(leaf_grads[key])
    return leaf_grads


def grad_check(loss_fn, params: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    values and be deterministic (fix any RNG internally).  Error metric:
    |analytic - numeric| / max(1, |numeric|), maximized over all elements.
    """
    if h <= 0:
        raise DomainError("grad_check: step must be positive")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        for p in params
    ]

    max_err = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn().item()
            flat[i] = orig - h
            lm = loss_fn().item()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            max_err = max(max_err, err)
    return max_err
