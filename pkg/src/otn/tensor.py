"""Dense rank-<=3 tensors with reverse-mode automatic differentiation.

Everything is 64-bit. A forward pass records its primitive operations on a
Tape; Tape.backward replays the pullbacks in reverse order. Tapes are
confined to one thread; independent tapes on different threads don't share
state.
"""

import threading

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ValueError):
    """A value that must be finite is NaN or infinite."""


class ConfigError(ValueError):
    """An operation was configured with an out-of-range setting."""


_LOCAL = threading.local()


def active_tape():
    return getattr(_LOCAL, "tape", None)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Use as a context manager around the forward computation, then call
    backward() with the scalar loss. A fresh tape is built per forward pass.
    """

    def __init__(self):
        self._records = []

    def __enter__(self):
        if active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tape = None
        return False

    def __len__(self):
        return len(self._records)

    def _record(self, output, pullback):
        self._records.append((output, pullback))

    def backward(self, loss):
        """Populate .grad for every requires_grad tensor reachable from loss.

        Repeated calls without zeroing grads accumulate.
        """
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise DimensionError(
                "backward() needs a scalar loss, got shape %s" % (loss.shape,))
        # clear intermediate grads so a repeated call re-derives them; leaf
        # grads are left alone and therefore accumulate
        for output, _ in self._records:
            if output.grad is not None:
                output.grad.fill(0.0)
        _accumulate(loss, np.ones_like(loss.data))
        for output, pullback in reversed(self._records):
            if output.grad is None or not np.any(output.grad):
                continue
            pullback(output.grad)


class Tensor:
    """Dense array of 64-bit reals with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 3:
            raise DimensionError("rank-%d tensor not supported" % arr.ndim)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, inputs, pullback):
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, pullback)
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to an operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data @ b.data
    except ValueError:
        raise DimensionError(
            "matmul: shapes %s and %s are incompatible" % (a.shape, b.shape))

    def pull(g):
        a2 = a.data.reshape(1, -1) if a.data.ndim == 1 else a.data
        b2 = b.data.reshape(-1, 1) if b.data.ndim == 1 else b.data
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        if a.requires_grad:
            _accumulate(a, (g2 @ b2.T).reshape(a.data.shape))
        if b.requires_grad:
            _accumulate(b, (a2.T @ g2).reshape(b.data.shape))

    return _make(data, (a, b), pull)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError("add: shapes %s and %s" % (a.shape, b.shape))

    def pull(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), pull)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError("sub: shapes %s and %s" % (a.shape, b.shape))

    def pull(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, -_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), pull)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError("mul: shapes %s and %s" % (a.shape, b.shape))

    def pull(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), pull)


def scale(a, c):
    """Multiply by a plain float constant."""
    a = as_tensor(a)
    c = float(c)

    def pull(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), pull)


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def pull(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), pull)


def sigmoid(a):
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def pull(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), pull)


def relu(a):
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def pull(g):
        # relu'(0) = 0 for determinism
        _accumulate(a, g * (a.data > 0.0))

    return _make(data, (a,), pull)


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def pull(g):
        _accumulate(a, g / a.data)

    return _make(data, (a,), pull)


def clip_min(a, floor):
    """max(x, floor) elementwise; gradient is zero where clamping engages."""
    a = as_tensor(a)
    floor = float(floor)
    data = np.maximum(a.data, floor)

    def pull(g):
        _accumulate(a, g * (a.data > floor))

    return _make(data, (a,), pull)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].data.ndim
    ax = axis % ndim if ndim else 0
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or other[:ax] + other[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(
                "concat: shapes %s and %s differ off axis %d"
                % (tuple(ref), tuple(other), ax))
    data = np.concatenate([t.data for t in tensors], axis=ax)
    offsets = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def pull(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * ndim
            sl[ax] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(data, tensors, pull)


def stack_rows(rows):
    """Stack 1-d tensors into a matrix (new leading axis)."""
    rows = [as_tensor(r) for r in rows]
    data = np.stack([r.data for r in rows])

    def pull(g):
        for i, r in enumerate(rows):
            _accumulate(r, g[i])

    return _make(data, rows, pull)


def slice_rows(a, start, stop):
    a = as_tensor(a)
    data = a.data[start:stop]

    def pull(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            _accumulate(a, full)

    return _make(data, (a,), pull)


def pad_rows(a, before, after):
    """Zero-pad along the leading axis."""
    a = as_tensor(a)
    widths = [(before, after)] + [(0, 0)] * (a.data.ndim - 1)
    data = np.pad(a.data, widths)
    n = a.shape[0]

    def pull(g):
        _accumulate(a, g[before:before + n])

    return _make(data, (a,), pull)


def take_rows(a, indices):
    """Gather rows by integer index (embedding lookup)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def pull(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            _accumulate(a, acc)

    return _make(data, (a,), pull)


def get_row(a, i):
    """Single row of a matrix as a vector."""
    a = as_tensor(a)
    data = a.data[i]

    def pull(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[i] = g
            _accumulate(a, full)

    return _make(data, (a,), pull)


def pick(a, index):
    """Scalar element at a (possibly multi-axis) index."""
    a = as_tensor(a)
    idx = index if isinstance(index, tuple) else (index,)
    data = a.data[idx]

    def pull(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            _accumulate(a, full)

    return _make(data, (a,), pull)


def tensor_sum(a):
    a = as_tensor(a)

    def pull(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _make(a.data.sum(), (a,), pull)


def mean_axis0(a):
    a = as_tensor(a)
    n = a.shape[0]
    data = a.data.mean(axis=0)

    def pull(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _make(data, (a,), pull)


def tile_rows(v, n):
    """Repeat a 1-d tensor as n identical rows."""
    v = as_tensor(v)
    data = np.tile(v.data, (n, 1))

    def pull(g):
        _accumulate(v, g.sum(axis=0))

    return _make(data, (v,), pull)


def softmax(v, mask=None):
    """Numerically stable softmax of a vector, optionally masked.

    Masked positions get weight exactly 0 and the remaining weights sum to 1.
    """
    v = as_tensor(v)
    if v.data.ndim != 1:
        raise DimensionError("softmax expects a vector, got shape %s" % (v.shape,))
    if not np.all(np.isfinite(v.data)):
        raise NumericError("softmax input contains NaN or Inf")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.data.shape:
            raise DimensionError("softmax mask shape %s != input %s"
                                 % (mask.shape, v.shape))
        if not mask.any():
            raise NumericError("softmax over an all-masked input is undefined")
    data = np.zeros_like(v.data)
    live = slice(None) if mask is None else mask
    x = v.data[live]
    e = np.exp(x - x.max())
    data[live] = e / e.sum()

    def pull(g):
        # rows of the softmax Jacobian: s_i * (g_i - g.s); zero where masked
        dot = float(g @ data)
        _accumulate(v, data * (g - dot))

    return _make(data, (v,), pull)


def softmax_rows(a):
    """Row-wise softmax of a matrix."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("softmax_rows expects a matrix, got %s" % (a.shape,))
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax input contains NaN or Inf")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def pull(g):
        dot = (g * data).sum(axis=1, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), pull)


def dropout(x, p, mode, rng=None):
    """Inverted dropout: train mode drops with probability p and rescales
    survivors by 1/(1-p); eval mode is the identity."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError("dropout probability %r outside [0, 1)" % (p,))
    if mode == "eval" or p == 0.0:
        return x
    if mode != "train":
        raise ConfigError("dropout mode must be 'train' or 'eval', got %r" % (mode,))
    if rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    data = x.data * keep

    def pull(g):
        _accumulate(x, g * keep)

    return _make(data, (x,), pull)


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "tanh": tanh,
    "relu": relu,
    "concat_last_axis": lambda *ops: concat(ops, axis=-1),
}


def elementwise(op, *operands):
    """Dispatch for the basic elementwise primitives by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ConfigError("unknown elementwise op %r" % (op,)) from None
    return fn(*operands)


def backward(loss):
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() called with no active tape")
    tape.backward(loss)


# ---------------------------------------------------------------------------
# verification


def _named(params):
    if hasattr(params, "named_parameters"):
        return dict(params.named_parameters())
    if isinstance(params, dict):
        return dict(params)
    return {"param_%d" % i: t for i, t in enumerate(params)}


def _scalar_eval(f):
    out = f()
    value = float(np.ravel(out.data)[0]) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(value):
        raise NumericError("objective returned a non-finite value")
    return value


def gradient_check(f, params, eps=1e-5):
    """Compare analytic gradients of f against central finite differences.

    f re-evaluates the scalar objective from the current parameter values and
    must be deterministic. Returns the maximum relative error
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|) over every
    component of every parameter tensor.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    named = _named(params)
    for t in named.values():
        t.zero_grad()
    tape = Tape()
    with tape:
        loss = f()
    if not np.isfinite(float(np.ravel(loss.data)[0])):
        raise NumericError("objective returned a non-finite value")
    tape.backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in named.items()}

    max_err = 0.0
    for name, t in named.items():
        flat = t.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar_eval(f)
            flat[i] = orig - eps
            fm = _scalar_eval(f)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(ana[i] - numeric) / max(1e-8, abs(ana[i]) + abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
