"""Dense float64 tensors with reverse-mode automatic differentiation.

Small on purpose: just the operations the forecasting model needs, each with
a hand-derived backward rule and a finite-difference checker to verify them.
Gradients are recorded on an explicit tape (a Wengert list): every op that
touches a tracked tensor appends one backward closure, and ``Tape.backward``
replays the closures in exact reverse order, accumulating ``+=`` into each
input's ``grad`` buffer so fan-out is handled naturally.

Reductions along the graph-node axis (softmax denominators, message-passing
contractions) sum their terms in sorted value order. Sorted summation depends
only on the multiset of addends, so relabeling the nodes permutes every
intermediate bitwise instead of perturbing the last ulp.
"""

from __future__ import annotations

import threading
import warnings

import numpy as np

from .errors import ShapeMismatchError

# Additive mask value treated as "masked out" by softmax_rows. Large enough
# that exp underflows to exactly 0.0, small enough to stay NaN-free.
MASK_VALUE = -1e9

# When True, every op asserts its output is finite. Slow; meant for tests.
CHECK_FINITE = False

_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of backward closures for one forward pass.

    Use as a context manager; only ops executed while a tape is active are
    recorded. Tapes on different threads are independent.
    """

    def __init__(self):
        self._steps = []

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False

    def __len__(self):
        return len(self._steps)

    def add(self, step):
        self._steps.append(step)

    def backward(self, loss: "Tensor"):
        """Seed d(loss)/d(loss)=1 and replay the tape in reverse."""
        if loss.data.size != 1:
            raise ShapeMismatchError("backward() expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for step in reversed(self._steps):
            step()


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._saved = _active_tape()
        _state.tape = None
        return self

    def __exit__(self, *exc):
        _state.tape = self._saved
        return False


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; ops below do the real work
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out: Tensor, backward) -> Tensor:
    """Common tail for every op: finiteness check + tape recording."""
    if CHECK_FINITE and not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite value produced by an op")
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.add(backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _sorted_sum(x: np.ndarray, axis: int) -> np.ndarray:
    # np.sort's output depends only on the multiset of values, so the
    # subsequent sum is reordering-invariant bitwise.
    return np.sort(x, axis=axis).sum(axis=axis)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _finish(out, backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _finish(out, backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate(-out.grad)

    return _finish(out, backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _finish(out, backward)


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar."""
    a = as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s, a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate(out.grad * s)

    return _finish(out, backward)


def _matmul_check(a: Tensor, b: Tensor):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast as in numpy."""
    a, b = as_tensor(a), as_tensor(b)
    _matmul_check(a, b)
    if b.data.shape[-1] == 1 or a.data.shape[-2] == 1:
        # thin products dispatch to BLAS matvec kernels whose accumulation
        # pattern depends on row position; einsum keeps each row's result
        # identical under row reordering
        data = np.einsum("...ij,...jk->...ik", a.data, b.data)
    else:
        data = a.data @ b.data
    out = Tensor(data, a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a.accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate(_unbroadcast(gb, b.data.shape))

    return _finish(out, backward)


def matmul_sorted(a, b) -> Tensor:
    """Matrix product whose contraction sums terms in sorted value order.

    Use where the contracted axis is the graph-node axis: the result is then
    invariant (bitwise) to how the nodes are numbered. Costs an extra
    O(n log n) sort and materializes the product terms, so keep it off hot
    paths that contract feature or time axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    _matmul_check(a, b)
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeMismatchError("matmul_sorted requires identical batch dims")
    terms = a.data[..., :, :, None] * b.data[..., None, :, :]
    out = Tensor(_sorted_sum(terms, axis=-2), a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b.accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _finish(out, backward)


def transpose(a, axes: tuple) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes), a.requires_grad)
    inverse = np.argsort(axes)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate(np.transpose(out.grad, inverse))

    return _finish(out, backward)


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate(out.grad.reshape(a.data.shape))

    return _finish(out, backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        any(t.requires_grad for t in tensors),
    )
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        g = out.grad
        if g is None:
            return
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _finish(out, backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate(out.grad * (a.data > 0.0))

    return _finish(out, backward)


def abs_(a) -> Tensor:
    # subgradient 0 at exactly 0
    a = as_tensor(a)
    out = Tensor(np.abs(a.data), a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate(out.grad * np.sign(a.data))

    return _finish(out, backward)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def backward():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _finish(out, backward)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax_rows(x, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, numerically stabilized by row-max shift.

    `mask` is an additive array broadcastable to x: 0 keeps an entry,
    MASK_VALUE removes it (output exactly 0 there). Rows with every entry
    masked get all-zero output and a warning, since no distribution exists.
    """
    x = as_tensor(x)
    z = x.data
    masked = None
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), z.shape)
        masked = mask <= MASK_VALUE / 2
        z = z + mask
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    if masked is not None:
        e = np.where(masked, 0.0, e)
    denom = _sorted_sum(e, axis=-1)[..., None]
    dead = denom == 0.0
    if dead.any():
        warnings.warn("softmax_rows: fully masked row(s) produced zero output")
        denom = np.where(dead, 1.0, denom)
    y = e / denom
    out = Tensor(y, x.requires_grad)

    def backward():
        g = out.grad
        if g is None or not x.requires_grad:
            return
        inner = (g * y).sum(axis=-1, keepdims=True)
        x.accumulate(y * (g - inner))

    return _finish(out, backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance,
    then apply the affine (gain, bias)."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(
        xhat * gain.data + bias.data,
        x.requires_grad or gain.requires_grad or bias.requires_grad,
    )

    def backward():
        g = out.grad
        if g is None:
            return
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=lead))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (gx - m1 - xhat * m2))

    return _finish(out, backward)


def conv1d(x, weights, bias=None, causal: bool = False) -> Tensor:
    """1-D convolution along the middle (time) axis of x: (n, t, c_in).

    weights: (k, c_in, c_out). Symmetric mode requires odd k and pads both
    sides; causal mode pads left only, so output[t] never reads inputs > t.
    Output keeps length t.
    """
    x, weights = as_tensor(x), as_tensor(weights)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 3 or weights.ndim != 3:
        raise ShapeMismatchError("conv1d expects x (n,t,c_in), weights (k,c_in,c_out)")
    k, c_in, c_out = weights.data.shape
    n, t, xc = x.data.shape
    if xc != c_in:
        raise ShapeMismatchError(f"conv1d channels disagree: {xc} vs {c_in}")
    if causal:
        pad_l, pad_r = k - 1, 0
    else:
        if k % 2 == 0:
            raise ShapeMismatchError("symmetric conv1d needs an odd kernel size")
        pad_l = pad_r = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad_l, pad_r), (0, 0)))
    y = np.zeros((n, t, c_out))
    for j in range(k):
        y += xp[:, j : j + t, :] @ weights.data[j]
    if bias is not None:
        y += bias.data
    out = Tensor(
        y,
        x.requires_grad
        or weights.requires_grad
        or (bias is not None and bias.requires_grad),
    )

    def backward():
        g = out.grad
        if g is None:
            return
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 1)))
        if weights.requires_grad:
            gw = np.zeros_like(weights.data)
            for j in range(k):
                gw[j] = np.einsum("ntc,ntd->cd", xp[:, j : j + t, :], g)
            weights.accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + t, :] += g @ weights.data[j].T
            x.accumulate(gxp[:, pad_l : pad_l + t, :])

    return _finish(out, backward)


def dropout(x, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.data.shape) >= rate
    factor = keep / (1.0 - rate)
    out = Tensor(x.data * factor, x.requires_grad)

    def backward():
        if out.grad is not None and x.requires_grad:
            x.accumulate(out.grad * factor)

    return _finish(out, backward)


def grad_check(
    function,
    params,
    eps: float = 1e-5,
    max_coords: int = 24,
    seed: int = 0,
) -> float:
    """Compare tape gradients against central finite differences.

    `function` must take no arguments, close over `params` (an iterable of
    Tensors with requires_grad), and return a scalar Tensor. Returns the
    maximum error over sampled coordinates, relative with a unit floor:
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = function()
        tape.backward(loss)
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = range(n) if n <= max_coords else rng.choice(n, max_coords, False)
        for i in coords:
            saved = flat[i]
            flat[i] = saved + eps
            with no_grad():
                up = function().item()
            flat[i] = saved - eps
            with no_grad():
                down = function().item()
            flat[i] = saved
            numeric = (up - down) / (2.0 * eps)
            got = a.reshape(-1)[i]
            err = abs(got - numeric) / max(1.0, abs(got), abs(numeric))
            worst = max(worst, err)
    return worst
