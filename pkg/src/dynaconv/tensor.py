"""Dense tensors with reverse-mode differentiation over an explicit tape.

Tensors wrap numpy arrays (float32 by default, float64 for verification
runs).  Operations executed while a :class:`Tape` is active append one
entry each; ``Tape.backward`` replays the entries in reverse, visiting
each exactly once and accumulating gradients additively in a fixed order,
so repeated runs produce bit-identical gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError

_active_tape: "Tape | None" = None


class Tensor:
    """A dense array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), self.requires_grad, name=self.name)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Single-writer: at most one tape may be active per execution context.
    """

    def __init__(self):
        self._entries = []  # (inputs: tuple[Tensor], output: Tensor, backward: callable)

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise StateError("a tape is already recording in this context")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def record(self, inputs, output, backward):
        """Append one primitive.

        ``backward(grad_out) -> list[np.ndarray | None]`` must return one
        gradient per input, aligned positionally.
        """
        self._entries.append((tuple(inputs), output, backward))

    def backward(self, loss: Tensor):
        """Accumulate gradients of ``loss`` into every recorded tensor.

        Leaf tensors with ``requires_grad`` end up with ``.grad`` set.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward target must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for inputs, output, backward in reversed(self._entries):
            gout = grads.get(id(output))
            if gout is None:
                continue
            gins = backward(gout)
            for t, g in zip(inputs, gins):
                if g is None:
                    continue
                acc = grads.get(id(t))
                if acc is None:
                    grads[id(t)] = g.copy() if g.base is not None or g is gout else g
                else:
                    acc += g
        seen = set()
        for inputs, _, _ in self._entries:
            for t in inputs:
                if t.requires_grad and id(t) in grads and id(t) not in seen:
                    seen.add(id(t))
                    t.grad = grads[id(t)] if t.grad is None else t.grad + grads[id(t)]


def active_tape() -> Tape | None:
    return _active_tape


def record_op(inputs, out: Tensor, backward) -> Tensor:
    tape = _active_tape
    if tape is not None:
        out.requires_grad = any(t.requires_grad for t in inputs)
        tape.record(inputs, out, backward)
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise primitives (tensor (+) tensor of equal shape, or tensor (+) scalar;
# no other broadcasting)

def add(a: Tensor, b) -> Tensor:
    if np.isscalar(b):
        out = Tensor(a.data + b)
        return record_op((a,), out, lambda g: [g])
    _require_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return record_op((a, b), out, lambda g: [g, g])


def sub(a: Tensor, b) -> Tensor:
    if np.isscalar(b):
        out = Tensor(a.data - b)
        return record_op((a,), out, lambda g: [g])
    _require_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record_op((a, b), out, lambda g: [g, -g])


def mul(a: Tensor, b) -> Tensor:
    if np.isscalar(b):
        return scale(a, b)
    _require_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return record_op((a, b), out, lambda g: [g * b.data, g * a.data])


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * a.data.dtype.type(s))
    return record_op((a,), out, lambda g: [g * s])


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0
    return record_op((a,), out, lambda g: [g * mask])


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias to an (n, c, h, w) map."""
    if x.data.ndim != 4 or bias.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_channel_bias: {x.data.shape} with bias {bias.data.shape}")
    out = Tensor(x.data + bias.data[None, :, None, None])
    return record_op((x, bias), out, lambda g: [g, g.sum(axis=(0, 2, 3))])


def add_row_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-column bias to an (n, f) matrix."""
    if x.data.ndim != 2 or bias.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_row_bias: {x.data.shape} with bias {bias.data.shape}")
    out = Tensor(x.data + bias.data[None, :])
    return record_op((x, bias), out, lambda g: [g, g.sum(axis=0)])


# ---------------------------------------------------------------------------
# matmul / reshape

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    return record_op((a, b), out, lambda g: [g @ b.data.T, a.data.T @ g])


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape
    return record_op((a,), out, lambda g: [g.reshape(orig)])


# ---------------------------------------------------------------------------
# reductions (reduced axes keep extent 1)

def _reduce(kind: str, x: Tensor, axes) -> Tensor:
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    for ax in axes:
        if not 0 <= ax < x.data.ndim:
            raise ShapeError(f"reduce axis {ax} out of range for rank {x.data.ndim}")
        if x.data.shape[ax] == 0:
            raise ShapeError(f"reduce over empty axis {ax}")
    if kind == "sum" or kind == "mean":
        out_arr = x.data.sum(axis=axes, keepdims=True)
        count = 1
        for ax in axes:
            count *= x.data.shape[ax]
        if kind == "mean":
            out_arr = out_arr / count
        out = Tensor(out_arr)
        k = (1.0 / count) if kind == "mean" else 1.0
        shape = x.data.shape

        def backward(g):
            return [np.broadcast_to(g * k, shape).copy()]

        return record_op((x,), out, backward)
    if kind == "max":
        out_arr = x.data.max(axis=axes, keepdims=True)
        out = Tensor(out_arr)
        xdata = x.data
        tail = tuple(range(xdata.ndim - len(axes), xdata.ndim))

        def backward(g):
            # ties route the gradient to the first (index-order) maximal element
            moved = np.moveaxis(xdata, axes, tail)
            lead = moved.shape[: xdata.ndim - len(axes)]
            flat = np.ascontiguousarray(moved).reshape(lead + (-1,))
            first = np.zeros(flat.shape, dtype=xdata.dtype)
            np.put_along_axis(first, flat.argmax(axis=-1)[..., None], 1.0, axis=-1)
            mask = np.moveaxis(first.reshape(moved.shape), tail, axes)
            return [mask * g]

        return record_op((x,), out, backward)
    raise ValueError(f"unknown reduction kind {kind!r}")


def reduce_sum(x: Tensor, axes) -> Tensor:
    return _reduce("sum", x, axes)


def reduce_mean(x: Tensor, axes) -> Tensor:
    return _reduce("mean", x, axes)


def reduce_max(x: Tensor, axes) -> Tensor:
    return _reduce("max", x, axes)


# ---------------------------------------------------------------------------
# softmax cross-entropy

def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax with max-subtraction, on a plain array."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray):
    """Mean negative log true-class probability.

    Returns ``(loss, probs)``; ``probs`` is a plain array (rows sum to 1),
    the gradient flows through ``loss`` only.
    """
    labels = np.asarray(labels)
    n, classes = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} for {n} rows")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels out of range [0, {classes})")
    probs = softmax(logits.data)
    eps = np.finfo(logits.data.dtype).tiny
    loss_val = -np.log(np.maximum(probs[np.arange(n), labels], eps)).mean()
    out = Tensor(np.asarray(loss_val, dtype=logits.data.dtype))

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return [d * (g / n)]

    return record_op((logits,), out, backward), probs


# ---------------------------------------------------------------------------
# gradient verification

@dataclass
class GradCheckFailure:
    param: str
    coord: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    checked: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and not self.failures


def grad_check(f, params, eps: float = 1e-5, tol: float = 1e-4,
               max_coords: int = 32, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` recomputes the scalar loss from ``params`` on every call; params
    must be float64.  Checks ``|analytic - fd| / max(1, |fd|) <= tol`` on up
    to ``max_coords`` coordinates per parameter.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise StateError(f"grad_check requires float64 params, {name} is {p.data.dtype}")
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        if not np.isfinite(loss.data):
            raise StateError("grad_check aborted: non-finite loss")
        tape.backward(loss)
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in params.items():
        size = p.data.size
        coords = np.arange(size) if size <= max_coords else rng.choice(size, max_coords, replace=False)
        flat = p.data.reshape(-1)
        for c in sorted(int(c) for c in coords):
            keep = flat[c]
            flat[c] = keep + eps
            hi = float(np.ravel(f().data)[0])
            flat[c] = keep - eps
            lo = float(np.ravel(f().data)[0])
            flat[c] = keep
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise StateError(f"grad_check aborted: non-finite loss near {name}{c}")
            fd = (hi - lo) / (2 * eps)
            an = float(analytic[name].reshape(-1)[c])
            rel = abs(an - fd) / max(1.0, abs(fd))
            report.checked += 1
            if rel > tol:
                report.failures.append(GradCheckFailure(
                    name, np.unravel_index(c, p.data.shape), an, fd, rel))
    return report
