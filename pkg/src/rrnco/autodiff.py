"""Minimal reverse-mode autodiff over numpy arrays.

Array-level tape: every op records its parents and a closure mapping the
output gradient to parent gradients. Training runs in float32; switch the
default dtype to float64 for gradient verification.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def use_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar into the graph leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._bwd(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                # grads are never mutated in place, so sharing buffers is safe
                parent.grad = g if parent.grad is None else parent.grad + g


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, bwd) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > 0
    return _make(np.where(keep, a.data, 0.0).astype(a.dtype), (a,),
                 lambda g: (g * keep,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = expit(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    s = np.sqrt(a.data)
    return _make(s, (a,), lambda g: (g * 0.5 / s,))


def _expand_axis(g: np.ndarray, axis, keepdims: bool, shape) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - namespaced
    a = _as_tensor(a)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand_axis(g, axis, keepdims, a.shape),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / out.size
    return _make(out, (a,),
                 lambda g: (_expand_axis(g, axis, keepdims, a.shape) / count,))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def softmax_masked(logits: Tensor, feasible=None, axis: int = -1) -> Tensor:
    """Softmax assigning exactly 0 probability to masked-out entries.

    feasible: boolean array broadcastable to logits, True = allowed. Raises if
    any slice along axis has no allowed entry. Gradients are exactly 0 at
    masked coordinates.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if feasible is None:
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
    else:
        feas = np.broadcast_to(np.asarray(feasible, dtype=bool), x.shape)
        if not feas.any(axis=axis).all():
            raise ValueError("softmax_masked: a slice has every entry masked")
        z = np.where(feas, x, -np.inf)
        m = z.max(axis=axis, keepdims=True)
        e = np.exp(z - m)  # exp(-inf) == 0 exactly at masked entries
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (logits,), bwd)


def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the node axis (axis 1 of (B, N, E)) with learnable affine."""
    mu = mean(x, axis=1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=1, keepdims=True)
    y = div(xc, sqrt(add(var, eps)))
    return add(mul(y, gain), bias)


def gather_nodes(x: Tensor, batch_idx, node_idx) -> Tensor:
    """Pick per-row node slices: out[m] = x[batch_idx[m], node_idx[m]]."""
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    node_idx = np.asarray(node_idx, dtype=np.int64)

    def bwd(g):
        gz = np.zeros_like(x.data)
        np.add.at(gz, (batch_idx, node_idx), g)
        return (gz,)

    return _make(x.data[batch_idx, node_idx], (x,), bwd)


def take_indexed(x: Tensor, idx) -> Tensor:
    """out[m] = x[m, idx[m]] for a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def bwd(g):
        gz = np.zeros_like(x.data)
        np.add.at(gz, (rows, idx), g)
        return (gz,)

    return _make(x.data[rows, idx], (x,), bwd)


class ParamStore:
    """Named learnable tensors addressable by path, in deterministic order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, path: str, data, requires_grad: bool = True) -> Tensor:
        if path in self._params:
            raise ValueError(f"duplicate parameter path {path!r}")
        t = Tensor(np.asarray(data), requires_grad=requires_grad)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    @property
    def dtype(self):
        for t in self._params.values():
            return t.dtype
        return np.dtype(_DEFAULT_DTYPE)

    def n_values(self) -> int:
        return int(np.sum([t.size for t in self._params.values()]))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def to_dtype(self, dtype) -> "ParamStore":
        for t in self._params.values():
            t.data = t.data.astype(dtype)
            t.grad = None
        return self

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for path, t in self._params.items():
            out.add(path, t.data.copy(), requires_grad=t.requires_grad)
        return out

    def grad_global_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.grad_global_norm()
        if norm > max_norm and norm > 0:
            scale = max_norm / norm
            for t in self._params.values():
                if t.grad is not None:
                    t.grad = t.grad * scale
        return norm


def save_params(store: ParamStore, path) -> None:
    """Checkpoint container: u32 manifest length, JSON manifest, raw <f4 payload."""
    manifest = {
        "format": "rrnco-params",
        "version": 1,
        "dtype": "<f4",
        "params": [{"path": p, "shape": list(t.shape)} for p, t in store.items()],
    }
    mbytes = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        for _, t in store.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_params(path) -> ParamStore:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise ValueError("checkpoint truncated: missing manifest length")
    (mlen,) = struct.unpack("<I", buf[:4])
    if len(buf) < 4 + mlen:
        raise ValueError("checkpoint truncated: incomplete manifest")
    manifest = json.loads(buf[4:4 + mlen].decode("utf-8"))
    if manifest.get("format") != "rrnco-params":
        raise ValueError("not a parameter checkpoint")
    store = ParamStore()
    pos = 4 + mlen
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if pos + nbytes > len(buf):
            raise ValueError(f"checkpoint truncated: payload for {entry['path']!r}")
        arr = np.frombuffer(buf[pos:pos + nbytes], dtype="<f4").reshape(shape).copy()
        store.add(entry["path"], arr)
        pos += nbytes
    return store


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_coords: int
    worst_path: str
    worst_index: int
    worst_analytic: float
    worst_numeric: float


def grad_check(f, store: ParamStore, eps: float = 1e-5, max_coords: int = 200,
               seed: int = 0, denom_floor: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f(store) to central differences.

    Checks a random subsample of at most max_coords parameter coordinates.
    f must be deterministic. Relative error uses max(|analytic|, |numeric|,
    denom_floor) as the denominator so near-zero coordinates compare with an
    absolute tolerance of tol * denom_floor.
    """
    out = f(store)
    if not np.isfinite(out.data).all():
        raise ValueError("objective is non-finite")
    store.zero_grad()
    out.backward()
    analytic = {p: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for p, t in store.items()}

    coords = [(p, i) for p, t in store.items() for i in range(t.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picks]

    def eval_f() -> float:
        with no_grad():
            return float(f(store).data)

    report = GradCheckReport(0.0, len(coords), "", -1, 0.0, 0.0)
    for path, i in coords:
        t = store[path]
        orig = t.data.flat[i]
        t.data.flat[i] = orig + eps
        fp = eval_f()
        t.data.flat[i] = orig - eps
        fm = eval_f()
        t.data.flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        an = float(analytic[path].flat[i])
        rel = abs(an - numeric) / max(abs(an), abs(numeric), denom_floor)
        if rel > report.max_rel_err:
            report = GradCheckReport(rel, len(coords), path, int(i), an, numeric)
    return report
