"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A Tape records every operation in execution order.  Because an operation can
only consume tensors that already exist, the record list is topologically
sorted by construction, and ``Tape.backward`` replays it once in reverse,
accumulating gradients into every tracked tensor it reaches.

Tensors created without a tape are constants: the same op functions then run
forward-only, which doubles as the no-grad inference fast path.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "constant", "grad_check",
    "add", "sub", "mul", "div", "matmul", "neg",
    "exp", "log", "tanh", "relu", "gelu", "softplus", "powc", "xlogx",
    "softmax_last", "logsumexp_last",
    "sum_", "mean_", "concat", "slice_", "index_rows",
    "transpose_", "reshape_", "broadcast_to_",
    "layer_norm", "l2_normalize", "linear",
    "stop_grad", "grad_reverse",
]

EPS_NORM = 1e-12  # additive floor for L2 normalization denominators


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """Dense float64 array plus, when tracked on a tape, a gradient accumulator."""

    __slots__ = ("data", "grad", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int = -1):
        self.data = _as_array(data)
        self.tape = tape
        self.node_id = node_id
        # stays None until backward() reaches this tensor; an unreached grad
        # therefore reads as "no contribution", not as zeros
        self.grad = None

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")

    def __repr__(self):
        tag = f"tracked#{self.node_id}" if self.tracked else "const"
        return f"Tensor({tag}, shape={self.shape})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape_(self, shape)

    def transpose(self, axes=None):
        return transpose_(self, axes)


class Tape:
    """Ordered record of operations; backward replays it in reverse exactly once."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._next_id = 0
        self._used = False

    def __len__(self):
        return len(self._records)

    def leaf(self, data) -> Tensor:
        t = Tensor(data, tape=self, node_id=self._next_id)
        self._next_id += 1
        return t

    def node(self, data, parents: tuple[Tensor, ...], backward) -> Tensor:
        """Register an op result.  ``backward(grad_out)`` must return one gradient
        array (or None) per parent, already reduced to that parent's shape."""
        t = Tensor(data, tape=self, node_id=self._next_id)
        self._next_id += 1
        self._records.append((t, parents, backward))
        return t

    def backward(self, out: Tensor) -> None:
        if self._used:
            raise RuntimeError("backward() already ran on this tape")
        if out.tape is not self:
            raise ValueError("backward target does not belong to this tape")
        if out.size != 1:
            raise ValueError(f"backward target must be scalar, got shape {out.shape}")
        self._used = True
        out.grad = np.ones_like(out.data)
        for res, parents, fn in reversed(self._records):
            if res.grad is None:
                continue  # dead branch: nothing downstream consumed it
            grads = fn(res.grad)
            for p, g in zip(parents, grads):
                if g is None or p.tape is None:
                    continue
                if p.grad is None:
                    p.grad = np.array(g)  # private copy; g may alias a shared buffer
                else:
                    p.grad += g


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that were broadcast to produce it."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: operands have incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    out = a.data + b.data
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.tracked else None,
                _unbroadcast(g, b.shape) if b.tracked else None)

    return tape.node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)
    out = a.data - b.data
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.tracked else None,
                _unbroadcast(-g, b.shape) if b.tracked else None)

    return tape.node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    out = a.data * b.data
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.tracked else None,
                _unbroadcast(g * a.data, b.shape) if b.tracked else None)

    return tape.node(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.tracked else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.tracked else None
        return (ga, gb)

    return tape.node(out, (a, b), backward)


def neg(a) -> Tensor:
    a = _lift(a)
    if a.tape is None:
        return Tensor(-a.data)
    return a.tape.node(-a.data, (a,), lambda g: (-g,))


# -- matmul ----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with optional broadcastable leading batch dims; both
    operands must have ndim >= 2."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must have ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul: batch dimensions disagree for shapes {a.shape} and {b.shape}") from None
    out = a.data @ b.data
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        ga = gb = None
        if a.tracked:
            ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        if b.tracked:
            gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return (ga, gb)

    return tape.node(out, (a, b), backward)


# -- elementwise unary -----------------------------------------------------

def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    if a.tape is None:
        return Tensor(out)
    return a.tape.node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _lift(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)  # non-positive inputs propagate as nan/-inf
    if a.tape is None:
        return Tensor(out)
    return a.tape.node(out, (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    if a.tape is None:
        return Tensor(out)
    return a.tape.node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)
    if a.tape is None:
        return Tensor(out)
    pos = a.data > 0.0
    return a.tape.node(out, (a,), lambda g: (g * pos,))


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """tanh-form Gaussian error linear unit."""
    a = _lift(a)
    x = a.data
    u = _GELU_C * (x + _GELU_A * (x * x * x))  # x**3 via mul: np.power is ~40x slower
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)
    if a.tape is None:
        return Tensor(out)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        return (g * local,)

    return a.tape.node(out, (a,), backward)


def softplus(a) -> Tensor:
    """log(1 + e^x), computed as max(x, 0) + log1p(e^{-|x|}) so large
    magnitudes never overflow."""
    a = _lift(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if a.tape is None:
        return Tensor(out)

    def backward(g):
        # derivative is the logistic sigmoid, evaluated stably
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
        return (g * s,)

    return a.tape.node(out, (a,), backward)


def powc(a, p: float) -> Tensor:
    """Elementwise x**p for a constant exponent."""
    a = _lift(a)
    out = a.data ** p
    if a.tape is None:
        return Tensor(out)
    return a.tape.node(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def xlogx(a) -> Tensor:
    """Elementwise x*log(x) with the 0*log(0) = 0 convention; domain x >= 0.

    The derivative log(x)+1 is taken as 0 at x = 0 (only constant inputs ever
    sit exactly on the boundary in practice)."""
    a = _lift(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)
    if a.tape is None:
        return Tensor(out)

    def backward(g):
        local = np.where(x > 0.0, np.log(np.where(x > 0.0, x, 1.0)) + 1.0, 0.0)
        return (g * local,)

    return a.tape.node(out, (a,), backward)


# -- softmax family --------------------------------------------------------

def softmax_last(a, tau: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis with max-subtraction."""
    if tau <= 0.0:
        raise ValueError(f"softmax temperature must be positive, got {tau}")
    a = _lift(a)
    y = a.data / tau
    y = y - y.max(axis=-1, keepdims=True)
    e = np.exp(y)
    s = e / e.sum(axis=-1, keepdims=True)
    if a.tape is None:
        return Tensor(s)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return ((g - inner) * s / tau,)

    return a.tape.node(s, (a,), backward)


def logsumexp_last(a, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    se = e.sum(axis=-1, keepdims=True)
    out = m + np.log(se)
    if not keepdims:
        out = out[..., 0]
    if a.tape is None:
        return Tensor(out)
    soft = e / se

    def backward(g):
        gg = g if keepdims else g[..., None]
        return (soft * gg,)

    return a.tape.node(out, (a,), backward)


# -- reductions ------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if a.tape is None:
        return Tensor(out)
    axes = _norm_axes(axis, a.ndim)

    def backward(g):
        gg = np.asarray(g)
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return a.tape.node(out, (a,), backward)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


# -- shape surgery ---------------------------------------------------------

def concat(parts, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ValueError("concat of an empty sequence")
    out = np.concatenate([p.data for p in parts], axis=axis)
    tape = _tape_of(*parts)
    if tape is None:
        return Tensor(out)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.tracked:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.append(g[tuple(idx)])
            else:
                grads.append(None)
        return tuple(grads)

    return tape.node(out, tuple(parts), backward)


def slice_(a, key) -> Tensor:
    """Basic indexing (ints / slices / tuples thereof); gradient scatters back."""
    a = _lift(a)
    out = a.data[key]
    if a.tape is None:
        return Tensor(np.array(out, copy=True))

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return a.tape.node(np.array(out, copy=True), (a,), backward)


def index_rows(a, idx) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate gradient."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"index_rows expects a 1-d index array, got shape {idx.shape}")
    out = a.data[idx]
    if a.tape is None:
        return Tensor(out)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return a.tape.node(out, (a,), backward)


def transpose_(a, axes=None) -> Tensor:
    a = _lift(a)
    out = np.transpose(a.data, axes)
    if a.tape is None:
        return Tensor(out)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(np.asarray(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return a.tape.node(out, (a,), backward)


def reshape_(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)
    if a.tape is None:
        return Tensor(out)
    return a.tape.node(out, (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to_(a, shape) -> Tensor:
    a = _lift(a)
    out = np.broadcast_to(a.data, shape).copy()
    if a.tape is None:
        return Tensor(out)
    return a.tape.node(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


# -- composites ------------------------------------------------------------

def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = mean_(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean_(mul(xc, xc), axis=-1, keepdims=True)
    inv = powc(add(var, eps), -0.5)
    return add(mul(mul(xc, inv), gain), bias)


def l2_normalize(x, floor: float = EPS_NORM) -> Tensor:
    """Divide by (L2 norm over the last axis + floor); never divides by zero."""
    n2 = sum_(mul(x, x), axis=-1, keepdims=True)
    n = powc(n2, 0.5)
    return div(x, add(n, floor))


# -- gradient flow control -------------------------------------------------

def stop_grad(a) -> Tensor:
    """Identity forward; the result is a constant, so no gradient flows back."""
    a = _lift(a)
    return Tensor(a.data)


def grad_reverse(a) -> Tensor:
    """Identity forward; backward multiplies the gradient by -1."""
    a = _lift(a)
    if a.tape is None:
        return Tensor(a.data)
    return a.tape.node(np.array(a.data, copy=True), (a,), lambda g: (-g,))


# -- finite-difference checking -------------------------------------------

def grad_check(f, point, step: float = 1e-5, coords=None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a Tensor to a scalar Tensor and must be evaluable on constants.
    ``coords`` optionally restricts the finite-difference sweep to a subset of
    flat coordinate indices (the analytic gradient is always full).
    Relative error per coordinate: |a - c| / (|a| + |c| + 1e-6); the absolute
    floor keeps roundoff on near-zero derivatives (central differences bottom
    out around 1e-10 of the loss scale) from registering as disagreement.
    """
    point = np.array(point, dtype=np.float64)  # private copy; perturbed in place below
    if not (0.0 < step <= 1e-2):
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    tape = Tape()
    x = tape.leaf(point)
    y = f(x)
    if not isinstance(y, Tensor) or y.size != 1:
        raise ValueError("checked function must return a scalar tensor")
    y0 = float(y.data.reshape(-1)[0])
    if not np.isfinite(y0):
        raise ValueError(f"non-finite forward value {y0!r} at the checked point")
    tape.backward(y)
    grad = x.grad if x.grad is not None else np.zeros_like(point)
    analytic = grad.reshape(-1)

    flat = point.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    worst = 0.0
    for i in coords:
        saved = flat[i]
        flat[i] = saved + step
        hi = f(Tensor(point)).item()
        flat[i] = saved - step
        lo = f(Tensor(point)).item()
        flat[i] = saved
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite forward value while perturbing coordinate {i}")
        central = (hi - lo) / (2.0 * step)
        a = analytic[i]
        err = abs(a - central) / (abs(a) + abs(central) + 1e-6)
        if err > worst:
            worst = err
    return worst
