"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything the trajectory model needs is expressed through the primitives
in this module: matrix products, elementwise nonlinearities, concatenation,
softmax, and a few indexing helpers. Each primitive computes its forward
value with numpy and, when a tape is active and an input is tracked,
appends a record holding the inputs, the output, and the local gradient
rule. ``backward`` replays the records in reverse order exactly once,
accumulating gradients additively, so repeated runs are bitwise identical.

Reductions that combine contributions from interchangeable entities
(the softmax normalizer, weighted sums over neighbors, full-tensor sums)
use exactly rounded summation via ``math.fsum``. Their results are then
independent of operand order, which is what makes relabeling pedestrians
a pure permutation of the model's outputs down to the last bit.
"""

import math
import threading
from contextlib import contextmanager

import numpy as np

from .errors import GraphError, NumericalError, ShapeError

_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``tracked`` marks tensors that participate in differentiation: leaves
    created via ``parameter`` and any op output that depends on one while a
    tape is recording.
    """

    __slots__ = ("data", "grad", "tracked", "name", "tape")

    def __init__(self, data, tracked=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim >= 1 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.tracked = tracked
        self.name = name
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, tracked={self.tracked})"


def tensor(data, tracked=False, name=None) -> Tensor:
    return Tensor(data, tracked=tracked, name=name)


def parameter(data, name=None) -> Tensor:
    """A tracked leaf tensor (model weight)."""
    return Tensor(data, tracked=True, name=name)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


class Record:
    """One primitive application: inputs, output, and its gradient rule."""

    __slots__ = ("op", "inputs", "out", "pull")

    def __init__(self, op, inputs, out, pull):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.pull = pull


class Tape:
    """Ordered record of primitive operations.

    Construction order is topological by definition: an op's inputs are
    recorded before the op itself. Used as a context manager; tapes nest,
    and only the innermost one records.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        if not hasattr(_STATE, "stack"):
            _STATE.stack = []
        _STATE.stack.append(_active_tape())
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = _STATE.stack.pop()
        return False


@contextmanager
def no_grad():
    """Temporarily disable recording, e.g. for inference rollouts."""
    if not hasattr(_STATE, "stack"):
        _STATE.stack = []
    _STATE.stack.append(_active_tape())
    _STATE.tape = None
    try:
        yield
    finally:
        _STATE.tape = _STATE.stack.pop()


def _accum(t: Tensor, g) -> None:
    if t.tracked:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _emit(op, inputs, out_data, pull) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        out.tracked = True
        out.tape = tape
        tape.records.append(Record(op, inputs, out, pull))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Fill ``grad`` of every tracked tensor with d(loss)/d(tensor).

    Gradients accumulate additively across fan-out, in the fixed reverse
    tape order. Existing grads are added to, which is what batch
    accumulation over several per-window tapes relies on.
    """
    if loss.tape is not tape:
        raise GraphError("loss tensor was not produced on this tape")
    if loss.data.shape != ():
        raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
    loss.grad = np.array(1.0)
    for rec in reversed(tape.records):
        g = rec.out.grad
        if g is not None:
            rec.pull(g)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix-matrix, matrix-vector, or vector-vector (dot) product."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0]:
        def pull(g):
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)
    elif ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        def pull(g):
            _accum(a, np.outer(g, bd))
            _accum(b, ad.T @ g)
    elif ad.ndim == 1 and bd.ndim == 1 and ad.shape == bd.shape:
        def pull(g):
            _accum(a, g * bd)
            _accum(b, g * ad)
    else:
        raise ShapeError("matmul", ad.shape, bd.shape)
    return _emit("matmul", (a, b), ad @ bd, pull)


def _same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(op, a.data.shape, b.data.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def pull(g):
        _accum(a, g)
        _accum(b, g)

    return _emit("add", (a, b), a.data + b.data, pull)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)

    def pull(g):
        _accum(a, g)
        _accum(b, -g)

    return _emit("sub", (a, b), a.data - b.data, pull)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _same_shape("mul", a, b)

    def pull(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _emit("mul", (a, b), a.data * b.data, pull)


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)

    def pull(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _emit("div", (a, b), a.data / b.data, pull)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain Python scalar (not a tape value)."""
    c = float(c)

    def pull(g):
        _accum(a, g * c)

    return _emit("scale", (a,), a.data * c, pull)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(over="ignore"):
        out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)),
                       np.exp(x) / (1.0 + np.exp(x)))

    def pull(g):
        _accum(a, g * out * (1.0 - out))

    return _emit("sigmoid", (a,), out, pull)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def pull(g):
        _accum(a, g * (1.0 - out * out))

    return _emit("tanh", (a,), out, pull)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def pull(g):
        _accum(a, g * mask)

    return _emit("relu", (a,), np.where(mask, a.data, 0.0), pull)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def pull(g):
        _accum(a, g * out)

    return _emit("exp", (a,), out, pull)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def pull(g):
        _accum(a, g / a.data)

    return _emit("log", (a,), out, pull)


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors along their only axis."""
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat", ())
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat", p.data.shape)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _emit("concat", parts, np.concatenate([p.data for p in parts]), pull)


def softmax(a: Tensor) -> Tensor:
    """Softmax of a non-empty vector, computed with max subtraction.

    The normalizer is an exactly rounded sum, so the output does not depend
    on the order in which the entries were assembled.
    """
    x = a.data
    if x.ndim != 1 or x.shape[0] == 0:
        raise ShapeError("softmax", x.shape)
    e = np.exp(x - np.max(x))
    out = e / math.fsum(e)

    def pull(g):
        inner = float(np.dot(out, g))
        _accum(a, out * (g - inner))

    return _emit("softmax", (a,), out, pull)


def stack(parts) -> Tensor:
    """Stack scalar tensors into a vector."""
    parts = tuple(parts)
    if not parts:
        raise ShapeError("stack", ())
    for p in parts:
        if p.data.shape != ():
            raise ShapeError("stack", p.data.shape)

    def pull(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return _emit("stack", parts, np.array([p.data for p in parts]), pull)


def pick(a: Tensor, i: int) -> Tensor:
    """Extract entry ``i`` of a vector as a scalar."""
    if a.data.ndim != 1 or not 0 <= i < a.data.shape[0]:
        raise ShapeError("pick", a.data.shape)

    def pull(g):
        if a.tracked:
            a.ensure_grad()[i] += g

    return _emit("pick", (a,), np.asarray(a.data[i]), pull)


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 1 or not 0 <= start < stop <= a.data.shape[0]:
        raise ShapeError("slice1d", a.data.shape)

    def pull(g):
        if a.tracked:
            a.ensure_grad()[start:stop] += g

    return _emit("slice1d", (a,), a.data[start:stop].copy(), pull)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data > lo) & (a.data < hi)

    def pull(g):
        _accum(a, g * mask)

    return _emit("clamp", (a,), np.clip(a.data, lo, hi), pull)


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries, exactly rounded (order independent)."""
    out = np.asarray(math.fsum(a.data.flat))

    def pull(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _emit("tsum", (a,), out, pull)


def weighted_sum(w: Tensor, vectors) -> Tensor:
    """``sum_i w[i] * vectors[i]`` for 1-D vectors of equal length.

    For three or more terms each output component is an exactly rounded
    sum, so reordering the (weight, vector) pairs cannot change the result.
    Two-term sums are already order independent.
    """
    vectors = tuple(vectors)
    m = len(vectors)
    if w.data.ndim != 1 or w.data.shape[0] != m or m == 0:
        raise ShapeError("weighted_sum", w.data.shape, (m,))
    k = vectors[0].data.shape[0] if vectors[0].data.ndim == 1 else None
    for v in vectors:
        if v.data.ndim != 1 or v.data.shape[0] != k:
            raise ShapeError("weighted_sum", w.data.shape, v.data.shape)

    wd = w.data
    if m == 1:
        out = wd[0] * vectors[0].data
    elif m == 2:
        out = wd[0] * vectors[0].data + wd[1] * vectors[1].data
    else:
        prods = np.stack([v.data for v in vectors]) * wd[:, None]
        out = np.array([math.fsum(prods[:, j]) for j in range(k)])

    def pull(g):
        for i, v in enumerate(vectors):
            if w.tracked:
                w.ensure_grad()[i] += float(np.dot(v.data, g))
            _accum(v, wd[i] * g)

    return _emit("weighted_sum", (w,) + vectors, out, pull)


# ---------------------------------------------------------------------------
# gradient checking


class FiniteDifferenceReport:
    """Outcome of comparing analytic gradients to central differences."""

    __slots__ = ("max_rel_err", "n_checked", "tol", "worst")

    def __init__(self, max_rel_err, n_checked, tol, worst):
        self.max_rel_err = max_rel_err
        self.n_checked = n_checked
        self.tol = tol
        self.worst = worst  # (param name, flat index, analytic, numeric)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __repr__(self):
        name, idx, a, n = self.worst
        return (f"FiniteDifferenceReport(max_rel_err={self.max_rel_err:.3e}, "
                f"n_checked={self.n_checked}, tol={self.tol:g}, "
                f"worst={name}[{idx}] analytic={a:.6e} numeric={n:.6e})")


def _as_named(params):
    if hasattr(params, "items"):
        return list(params.items())
    return [(t.name or f"param{i}", t) for i, t in enumerate(params)]


def finite_difference_check(f, params, eps=1e-6, tol=1e-5,
                            samples=None, seed=0) -> FiniteDifferenceReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` is a deterministic zero-argument callable that rebuilds the loss
    from the current parameter values and returns a scalar tensor. When
    ``samples`` is given, that many parameter entries are drawn without
    replacement from the concatenated parameter space; otherwise every
    entry is checked. Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    named = _as_named(params)

    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data):
        raise NumericalError("finite_difference_check: loss is not finite")
    zero_grads(t for _, t in named)
    backward(tape, loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in named}

    sizes = [t.size for _, t in named]
    total = int(np.sum(sizes))
    if samples is None or samples >= total:
        chosen = np.arange(total)
    else:
        gen = np.random.Generator(np.random.Philox(key=seed))
        chosen = np.sort(gen.choice(total, size=samples, replace=False))

    bounds = np.cumsum([0] + sizes)

    def eval_loss():
        with no_grad():
            value = float(f().data)
        if not math.isfinite(value):
            raise NumericalError("finite_difference_check: loss is not finite")
        return value

    max_rel = 0.0
    worst = (named[0][0], 0, 0.0, 0.0)
    for flat in chosen:
        pi = int(np.searchsorted(bounds, flat, side="right") - 1)
        name, t = named[pi]
        idx = int(flat - bounds[pi])
        orig = t.data.flat[idx]
        t.data.flat[idx] = orig + eps
        f_plus = eval_loss()
        t.data.flat[idx] = orig - eps
        f_minus = eval_loss()
        t.data.flat[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[name].flat[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        if rel > max_rel:
            max_rel = rel
            worst = (name, idx, a, numeric)
    return FiniteDifferenceReport(max_rel, len(chosen), tol, worst)
