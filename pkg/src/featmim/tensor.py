"""Dense tensors with reverse-mode automatic differentiation.

Storage and kernels are numpy; differentiation is an explicit tape that is
rebuilt every step (define-by-run). Tensors created outside a tape carry no
node and behave as constants. float32 is the training dtype; every op is
dtype-preserving, so the same graph runs in float64 for gradient checks.

Single-threaded: one tape must not be shared across threads during a step.
"""

import struct

import numpy as np

from .errors import DataError, NumericError, ShapeError

GELU_C = float(np.sqrt(2.0 / np.pi))
GELU_A = 0.044715


class Node:
    """Handle linking a tensor to the tape position that produced it."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx


class Tensor:
    """A dense n-d array, optionally attached to a tape."""

    __slots__ = ("data", "node")

    def __init__(self, data, node=None):
        self.data = np.asarray(data)
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = "taped" if self.node is not None else "const"
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, {tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


class Tape:
    """Ordered record of operations plus a registry of named parameters.

    backward() replays the record in exact reverse order; gradients for
    shared inputs accumulate additively.
    """

    def __init__(self):
        self._ops = []  # (out_idx, [(in_idx, grad_fn), ...]) in recording order
        self._n_nodes = 0
        self._params = {}  # name -> Tensor

    def _new_idx(self):
        idx = self._n_nodes
        self._n_nodes += 1
        return idx

    def parameter(self, name, data):
        """Register `data` (shared, not copied) as a named parameter."""
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        t = Tensor(np.asarray(data), Node(self, self._new_idx()))
        self._params[name] = t
        return t

    @property
    def parameters(self):
        return dict(self._params)


def backward(tape, loss):
    """Gradients of a scalar `loss` for every parameter registered on `tape`.

    Returns {name: ndarray} with each gradient shaped like its parameter;
    parameters the loss does not depend on get zeros.
    """
    if loss.node is None or loss.node.tape is not tape:
        raise ShapeError("loss is not a tensor recorded on this tape")
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    grads = [None] * tape._n_nodes
    grads[loss.node.idx] = np.ones((), dtype=loss.data.dtype)
    for out_idx, inputs in reversed(tape._ops):
        g = grads[out_idx]
        if g is None:
            continue
        for in_idx, fn in inputs:
            contrib = fn(g)
            if grads[in_idx] is None:
                grads[in_idx] = contrib
            else:
                grads[in_idx] = grads[in_idx] + contrib
    out = {}
    for name, p in tape._params.items():
        g = grads[p.node.idx]
        out[name] = np.zeros_like(p.data) if g is None else g
    return out


# --- op plumbing ---


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.node is None:
            continue
        if tape is None:
            tape = t.node.tape
        elif tape is not t.node.tape:
            raise RuntimeError("operands recorded on different tapes")
    return tape


def _emit(out_data, pairs):
    """Create the output tensor; record (input node, grad_fn) pairs if taped."""
    taped = [(t, fn) for t, fn in pairs if t.node is not None]
    tape = _tape_of(*[t for t, _ in pairs])
    if tape is None:
        return Tensor(out_data)
    out = Tensor(out_data, Node(tape, tape._new_idx()))
    tape._ops.append((out.node.idx, [(t.node.idx, fn) for t, fn in taped]))
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def constant(data, dtype=None):
    return Tensor(np.asarray(data, dtype=dtype))


def zeros(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype))


# --- elementwise and broadcast ops ---


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = a.data + b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = a.data - b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = a.data * b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def neg(a):
    return _emit(-a.data, [(a, lambda g: -g)])


def square(a):
    return _emit(a.data * a.data, [(a, lambda g: 2.0 * a.data * g)])


def absolute(a):
    return _emit(np.abs(a.data), [(a, lambda g: np.sign(a.data) * g)])


def where(cond, a, b):
    """Select elementwise by a constant boolean array (no gradient via cond)."""
    cond = np.asarray(cond, dtype=bool)
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = np.where(cond, a.data, b.data)
    return _emit(out, [
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), a.data.shape)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), b.data.shape)),
    ])


def relu(a):
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), [(a, lambda g: np.where(mask, g, 0.0))])


def gelu_grad(x):
    """Derivative of the tanh-approximated GELU (module-level for testability)."""
    u = GELU_C * (x + GELU_A * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)


def gelu(a):
    """GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    x = a.data
    out = 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x**3)))
    return _emit(out, [(a, lambda g: gelu_grad(x) * g)])


# --- linear algebra and structure ops ---


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ShapeError(f"matmul needs matching 2-d or 3-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    if a.ndim == 3 and a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"matmul batch extents disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def swap(x):
        return np.swapaxes(x, -1, -2)

    return _emit(out, [
        (a, lambda g: g @ swap(b.data)),
        (b, lambda g: swap(a.data) @ g),
    ])


def transpose(a, axes=None):
    ax = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(ax))
    return _emit(np.transpose(a.data, ax), [(a, lambda g: np.transpose(g, inv))])


def reshape(a, shape):
    orig = a.data.shape
    return _emit(a.data.reshape(shape), [(a, lambda g: g.reshape(orig))])


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def make_fn(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return fn

    return _emit(out, [(t, make_fn(i)) for i, t in enumerate(tensors)])


def gather_rows(a, idx):
    """Select rows along axis 0. Backward scatter-adds (idx may repeat)."""
    idx = np.asarray(idx, dtype=np.int64)

    def fn(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return z

    return _emit(a.data[idx], [(a, fn)])


def scatter_rows(src, idx, n_rows):
    """Place rows of `src` at positions `idx` of a zero [n_rows, ...] tensor.

    idx must be unique; duplicate targets are a contract violation.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise ShapeError("scatter_rows requires unique row indices")
    out = np.zeros((n_rows,) + src.data.shape[1:], dtype=src.data.dtype)
    out[idx] = src.data
    return _emit(out, [(src, lambda g: g[idx])])


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True)

    return _emit(out, [(a, fn)])


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[i] for i in ax]))
    s = tsum(a, axis, keepdims)
    return mul(s, 1.0 / count)


# --- normalisation and activation with fused backward ---


def softmax(a, axis=-1):
    """Numerically stable softmax (max-subtraction). Rows sum to 1."""
    x = a.data
    if not np.isfinite(x).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (g - (g * y).sum(axis=axis, keepdims=True)) * y

    return _emit(y, [(a, fn)])


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalise the last axis to mean 0 / variance 1, then apply affine."""
    if eps <= 0:
        raise ShapeError("layer_norm eps must be positive")
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd
    out = xhat * gain.data + bias.data

    lead = tuple(range(x.data.ndim - 1))

    def fx(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return istd * (dxhat - m1 - xhat * m2)

    return _emit(out, [
        (x, fx),
        (gain, lambda g: (g * xhat).sum(axis=lead).reshape(gain.data.shape)),
        (bias, lambda g: g.sum(axis=lead).reshape(bias.data.shape)),
    ])


# --- binary tensor file format ---
#
# magic "TVEC" | u8 version=1 | u8 dtype (0 = f32) | u8 rank |
# rank * u64 little-endian extents | row-major little-endian payload.

TVEC_MAGIC = b"TVEC"
TVEC_VERSION = 1


def tvec_bytes(array):
    """Encode an array in the tvec format (stored as f32, code 0)."""
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    parts = [TVEC_MAGIC, struct.pack("<BBB", TVEC_VERSION, 0, arr.ndim)]
    for extent in arr.shape:
        parts.append(struct.pack("<Q", extent))
    parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def tvec_from_bytes(blob, label="<bytes>", offset=0):
    """Decode one tvec record starting at `offset`; returns (array, end offset)."""
    if blob[offset:offset + 4] != TVEC_MAGIC:
        raise DataError(f"{label}: bad magic, not a tvec record")
    if len(blob) < offset + 7:
        raise DataError(f"{label}: truncated header")
    version, dtype, rank = struct.unpack("<BBB", blob[offset + 4:offset + 7])
    if version != TVEC_VERSION:
        raise DataError(f"{label}: unsupported tvec version {version}")
    if dtype != 0:
        raise DataError(f"{label}: unsupported dtype code {dtype}")
    off = offset + 7
    if len(blob) < off + 8 * rank:
        raise DataError(f"{label}: truncated extents")
    shape = struct.unpack(f"<{rank}Q", blob[off:off + 8 * rank]) if rank else ()
    off += 8 * rank
    n = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(blob) < off + 4 * n:
        raise DataError(f"{label}: payload holds {len(blob) - off} bytes, expected {4 * n}")
    arr = np.frombuffer(blob[off:off + 4 * n], dtype="<f4").reshape(shape).copy()
    return arr, off + 4 * n


def write_tvec(path, array):
    """Write an array as a tvec file."""
    with open(path, "wb") as f:
        f.write(tvec_bytes(array))


def read_tvec(path):
    """Read a tvec file back as a float32 array."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read tensor file {path}: {e}") from None
    arr, end = tvec_from_bytes(blob, label=str(path))
    if end != len(blob):
        raise DataError(f"{path}: {len(blob) - end} trailing bytes after payload")
    return arr
