"""Dense tensors with reverse-mode differentiation, plus Adam.

Small and explicit: every operation computes its numpy forward value and
registers a closure that pushes gradients to its inputs. ``backward()`` on
a scalar runs the closures in reverse topological order and then frees the
graph. Broadcasting is supported by summing gradients back down to each
input's shape; reductions run in numpy's deterministic order.

ParamSet binary layout (version 1, little-endian):

    magic      4 bytes  b"BSPM"
    version    uint16
    count      uint32
    per record:
        name_len   uint16,  name utf-8 bytes
        dtype      uint8   (0 = float32, 1 = float64)
        ndim       uint8,  dims uint32 x ndim
        data       raw little-endian array bytes
        has_moments uint8
        if 1: step uint64, m array bytes, v array bytes (same dtype/shape)
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, DimensionError, UsageError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (rollouts, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise UsageError("wrapping a Tensor in a Tensor")
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad and _grad_enabled
        self._prev: Tuple["Tensor", ...] = ()
        self._backward = None

    # -- plumbing ---------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def _accumulate(self, grad: np.ndarray, fresh: bool = False) -> None:
        """Add a contribution to this tensor's gradient.

        ``fresh`` marks an array the caller just allocated for us: it can be
        adopted without the defensive copy that views of a consumer's
        gradient buffer need.
        """
        reduced = _unbroadcast(grad, self.data.shape)
        if self.grad is not None:
            self.grad += reduced
        elif fresh or reduced is not grad:
            self.grad = reduced if reduced.dtype == self.data.dtype \
                else reduced.astype(self.data.dtype)
        else:
            self.grad = reduced.astype(self.data.dtype, copy=True)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; frees the graph afterwards."""
        if self.data.size != 1:
            raise UsageError(
                f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()
            if node is not self:
                node._prev = ()
                node._backward = None
        self._prev = ()
        self._backward = None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _ensure(other, self.data.dtype)
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:
            def _back():
                if self.requires_grad:
                    self._accumulate(out.grad)
                if other.requires_grad:
                    other._accumulate(out.grad)
            out._backward = _back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(-out.grad, fresh=True)
            out._backward = _back
        return out

    def __sub__(self, other):
        other = _ensure(other, self.data.dtype)
        out = _node(self.data - other.data, (self, other))
        if out.requires_grad:
            def _back():
                if self.requires_grad:
                    self._accumulate(out.grad)
                if other.requires_grad:
                    other._accumulate(-out.grad, fresh=True)
            out._backward = _back
        return out

    def __rsub__(self, other):
        return _ensure(other, self.data.dtype) - self

    def __mul__(self, other):
        other = _ensure(other, self.data.dtype)
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:
            def _back():
                if self.requires_grad:
                    self._accumulate(out.grad * other.data, fresh=True)
                if other.requires_grad:
                    other._accumulate(out.grad * self.data, fresh=True)
            out._backward = _back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _ensure(other, self.data.dtype)
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:
            def _back():
                if self.requires_grad:
                    self._accumulate(out.grad / other.data, fresh=True)
                if other.requires_grad:
                    other._accumulate(-out.grad * self.data / (other.data * other.data),
                                      fresh=True)
            out._backward = _back
        return out

    def __rtruediv__(self, other):
        return _ensure(other, self.data.dtype) / self

    def __pow__(self, exponent: float):
        out = _node(self.data ** exponent, (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1),
                                 fresh=True)
            out._backward = _back
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        other = _ensure(other, self.data.dtype)
        if self.ndim < 2 or other.ndim < 2:
            raise DimensionError(
                f"matmul needs >= 2-D operands, got {self.shape} @ {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise DimensionError(
                f"matmul contraction mismatch: {self.shape} @ {other.shape}")
        out = _node(self.data @ other.data, (self, other))
        if out.requires_grad:
            def _back():
                if self.requires_grad:
                    self._accumulate(out.grad @ np.swapaxes(other.data, -1, -2),
                                     fresh=True)
                if other.requires_grad:
                    other._accumulate(np.swapaxes(self.data, -1, -2) @ out.grad,
                                      fresh=True)
            out._backward = _back
        return out

    __matmul__ = matmul

    # -- nonlinearities -------------------------------------------------------

    def relu(self) -> "Tensor":
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(out.grad * (self.data > 0), fresh=True)
            out._backward = _back
        return out

    def tanh(self) -> "Tensor":
        out = _node(np.tanh(self.data), (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(out.grad * (1.0 - out.data * out.data), fresh=True)
            out._backward = _back
        return out

    def exp(self) -> "Tensor":
        out = _node(np.exp(self.data), (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(out.grad * out.data, fresh=True)
            out._backward = _back
        return out

    def log(self) -> "Tensor":
        out = _node(np.log(self.data), (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(out.grad / self.data, fresh=True)
            out._backward = _back
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def _back():
                grad = out.grad
                if not keepdims and axis is not None:
                    grad = np.expand_dims(grad, axis)
                self._accumulate(np.broadcast_to(grad, self.data.shape))
            out._backward = _back
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(out.grad.reshape(self.data.shape))
            out._backward = _back
        return out

    def transpose(self) -> "Tensor":
        """Swap the last two axes."""
        if self.ndim < 2:
            raise DimensionError(f"transpose needs >= 2-D, got shape {self.shape}")
        out = _node(np.swapaxes(self.data, -1, -2), (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(np.swapaxes(out.grad, -1, -2))
            out._backward = _back
        return out

    # -- selection --------------------------------------------------------------

    def masked_fill(self, mask, value: float) -> "Tensor":
        """Replace entries where mask is True by a constant."""
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), self.data.shape)
        out = _node(np.where(mask, value, self.data), (self,))
        if out.requires_grad:
            def _back():
                self._accumulate(np.where(mask, 0.0, out.grad), fresh=True)
            out._backward = _back
        return out

    def minimum(self, other: "Tensor") -> "Tensor":
        other = _ensure(other, self.data.dtype)
        out = _node(np.minimum(self.data, other.data), (self, other))
        if out.requires_grad:
            take_self = self.data <= other.data
            def _back():
                if self.requires_grad:
                    self._accumulate(out.grad * take_self, fresh=True)
                if other.requires_grad:
                    other._accumulate(out.grad * ~take_self, fresh=True)
            out._backward = _back
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            inside = (self.data >= lo) & (self.data <= hi)
            def _back():
                self._accumulate(out.grad * inside, fresh=True)
            out._backward = _back
        return out

    def gather(self, indices) -> "Tensor":
        """Pick one entry along the last axis per leading position."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.shape != self.data.shape[:-1]:
            raise DimensionError(
                f"gather indices shape {indices.shape} must match "
                f"leading dims of {self.data.shape}")
        picked = np.take_along_axis(self.data, indices[..., None], axis=-1)
        out = _node(picked[..., 0], (self,))
        if out.requires_grad:
            def _back():
                grad = np.zeros_like(self.data)
                np.add.at(grad.reshape(-1, self.data.shape[-1]),
                          (np.arange(indices.size), indices.reshape(-1)),
                          out.grad.reshape(-1))
                self._accumulate(grad, fresh=True)
            out._backward = _back
        return out

    # -- softmax family -----------------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = _node(y, (self,))
        if out.requires_grad:
            def _back():
                g = out.grad
                inner = (g * y).sum(axis=axis, keepdims=True)
                self._accumulate(y * (g - inner), fresh=True)
            out._backward = _back
        return out

    def log_softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = _node(shifted - log_z, (self,))
        if out.requires_grad:
            def _back():
                g = out.grad
                self._accumulate(g - np.exp(out.data) * g.sum(axis=axis, keepdims=True),
                                 fresh=True)
            out._backward = _back
        return out


def _node(data: np.ndarray, parents: Tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
    return out


def _ensure(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = _node(np.concatenate(datas, axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)
        def _back():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(lo, hi)
                    t._accumulate(out.grad[tuple(index)])
        out._backward = _back
    return out


# -- parameters and optimization ------------------------------------------------


_PARAM_MAGIC = b"BSPM"
_PARAM_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


class ParamSet:
    """Named trainable tensors; the unit of checkpointing."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise UsageError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True)
        # parameters stay trainable even when created under no_grad
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        return self._params.items()

    def tensors(self) -> List[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy_from(self, other: "ParamSet") -> None:
        if self.names() != other.names():
            raise UsageError("parameter sets have different names")
        for name, t in self._params.items():
            t.data = other[name].data.copy()

    def clone(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out

    def global_grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float((t.grad.astype(np.float64) ** 2).sum())
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.global_grad_norm()
        if norm > max_norm and norm > 0.0:
            scale = max_norm / norm
            for t in self._params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm

    # -- serialization ------------------------------------------------------

    def to_bytes(self, adam: Optional["Adam"] = None) -> bytes:
        parts = [struct.pack("<4sHI", _PARAM_MAGIC, _PARAM_VERSION,
                             len(self._params))]
        for name, t in self._params.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data)
            if arr.dtype not in _DTYPE_CODES:
                raise UsageError(f"unsupported dtype {arr.dtype} for {name!r}")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
            state = adam.state.get(name) if adam is not None else None
            if state is None:
                parts.append(struct.pack("<B", 0))
            else:
                step, m, v = state
                parts.append(struct.pack("<BQ", 1, step))
                parts.append(m.astype(arr.dtype.newbyteorder("<")).tobytes())
                parts.append(v.astype(arr.dtype.newbyteorder("<")).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> Tuple["ParamSet", Dict[str, Tuple[int, np.ndarray, np.ndarray]]]:
        try:
            magic, version, count = struct.unpack_from("<4sHI", blob, 0)
        except struct.error as exc:
            raise CheckpointError(f"parameter blob truncated: {exc}") from exc
        if magic != _PARAM_MAGIC:
            raise CheckpointError(f"bad parameter magic {magic!r}")
        if version != _PARAM_VERSION:
            raise CheckpointError(f"unsupported parameter version {version}")
        out = cls()
        moments: Dict[str, Tuple[int, np.ndarray, np.ndarray]] = {}
        off = struct.calcsize("<4sHI")
        try:
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", blob, off)
                off += 2
                name = blob[off:off + name_len].decode("utf-8")
                off += name_len
                code, ndim = struct.unpack_from("<BB", blob, off)
                off += 2
                shape = struct.unpack_from(f"<{ndim}I", blob, off)
                off += 4 * ndim
                dtype = _CODE_DTYPES[code]
                n_items = int(np.prod(shape)) if ndim else 1
                nbytes = n_items * dtype.itemsize
                data = np.frombuffer(blob, dtype=dtype.newbyteorder("<"),
                                     count=n_items, offset=off)
                data = data.astype(dtype).reshape(shape)
                off += nbytes
                out.add(name, data.copy())
                (has_moments,) = struct.unpack_from("<B", blob, off)
                off += 1
                if has_moments:
                    (step,) = struct.unpack_from("<Q", blob, off)
                    off += 8
                    m = np.frombuffer(blob, dtype=dtype.newbyteorder("<"),
                                      count=n_items, offset=off).astype(dtype).reshape(shape)
                    off += nbytes
                    v = np.frombuffer(blob, dtype=dtype.newbyteorder("<"),
                                      count=n_items, offset=off).astype(dtype).reshape(shape)
                    off += nbytes
                    moments[name] = (step, m.copy(), v.copy())
        except (struct.error, KeyError, ValueError) as exc:
            raise CheckpointError(f"parameter blob corrupt: {exc}") from exc
        if off != len(blob):
            raise CheckpointError(
                f"parameter blob has {len(blob) - off} trailing bytes")
        return out, moments


class Adam:
    """Bias-corrected Adam; parameters without gradients are skipped."""

    def __init__(self, params: ParamSet, lr: float = 2.5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        # name -> (step, first moment, second moment)
        self.state: Dict[str, Tuple[int, np.ndarray, np.ndarray]] = {}

    def load_state(self, state: Dict[str, Tuple[int, np.ndarray, np.ndarray]]) -> None:
        self.state = {k: (int(s), m.copy(), v.copy()) for k, (s, m, v) in state.items()}

    def step(self) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            step, m, v = self.state.get(
                name, (0, np.zeros_like(t.data), np.zeros_like(t.data)))
            step += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** step)
            v_hat = v / (1.0 - self.beta2 ** step)
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self.state[name] = (step, m, v)
        self.params.zero_grad()
