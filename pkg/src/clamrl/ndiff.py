"""Minimal reverse-mode autodiff over 2-D float64 arrays.

The primitive set is exactly what the trajectory encoder, the contrastive
loss, and the actor-critic heads need; there is no general broadcasting.
Every tensor is a 2-D matrix (scalars are (1, 1), row vectors (1, n)).
Gradients accumulate across backward calls until ``ParamStore.zero_grad``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf


class NdiffError(Exception):
    pass


class ShapeError(NdiffError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        detail = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (forward-only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise NdiffError(f"tensors are 2-D; got array of ndim {arr.ndim}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_matrix(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise NdiffError(f"item: tensor has shape {self.shape}, not (1, 1)")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss, accumulating into reachable grads."""
    if loss.shape != (1, 1):
        raise NdiffError(f"backward: loss must be scalar (1, 1), got {loss.shape}")
    if not loss.requires_grad:
        return
    # iterative post-order: graphs can be thousands of nodes deep
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    _accum(loss, np.ones((1, 1)))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out_data = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a (m, n) + b (1, n) for bias rows."""
    bias = a.shape != b.shape
    if bias and not (b.shape == (1, a.shape[1])):
        raise ShapeError("add", a.shape, b.shape)
    out_data = a.data + b.data

    def back(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0, keepdims=True) if bias else g)

    return _make(out_data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), back)


def transpose(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), back)


def concat_cols(parts: list[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols", *[p.shape for p in parts])
    widths = [p.shape[1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=1)

    def back(g):
        ofs = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, ofs:ofs + w])
            ofs += w

    return _make(out_data, tuple(parts), back)


def concat_rows(parts: list[Tensor]) -> Tensor:
    cols = parts[0].shape[1]
    if any(p.shape[1] != cols for p in parts):
        raise ShapeError("concat_rows", *[p.shape for p in parts])
    heights = [p.shape[0] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=0)

    def back(g):
        ofs = 0
        for p, h in zip(parts, heights):
            _accum(p, g[ofs:ofs + h, :])
            ofs += h

    return _make(out_data, tuple(parts), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[1]):
        raise NdiffError(f"slice_cols: [{start}, {stop}) out of range for {a.shape}")

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _make(a.data[:, start:stop].copy(), (a,), back)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Pick one column index per row: out[i, 0] = a[i, indices[i]]."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.shape[0] != a.shape[0]:
        raise ShapeError("gather_rows", a.shape, (idx.shape[0],))
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise NdiffError(f"gather_rows: index out of range for {a.shape}")
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx].reshape(-1, 1)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g[:, 0])
        _accum(a, full)

    return _make(out_data, (a,), back)


def row_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        _accum(a, s * (g - dot))

    return _make(s, (a,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Row-wise normalization followed by per-column gain and bias (1, d)."""
    d = x.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def back(g):
        _accum(gain, (g * xhat).sum(axis=0, keepdims=True))
        _accum(bias, g.sum(axis=0, keepdims=True))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=1, keepdims=True) \
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        _accum(x, inv * term)

    return _make(out_data, (x, gain, bias), back)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    phi = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out_data = a.data * phi

    def back(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        _accum(a, g * (phi + a.data * pdf))

    return _make(out_data, (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), back)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def back(g):
        _accum(a, g * y)

    return _make(y, (a,), back)


def log(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), back)


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, np.full_like(a.data, g[0, 0]))

    return _make(np.array([[a.data.sum()]]), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def back(g):
        _accum(a, np.full_like(a.data, g[0, 0] / n))

    return _make(np.array([[a.data.mean()]]), (a,), back)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (m, n) -> (1, n)."""
    m = a.shape[0]

    def back(g):
        _accum(a, np.repeat(g, m, axis=0) / m)

    return _make(a.data.mean(axis=0, keepdims=True), (a,), back)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("minimum", a.shape, b.shape)
    take_a = a.data <= b.data  # ties route the gradient to the first operand

    def back(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _make(np.where(take_a, a.data, b.data), (a, b), back)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)

    def back(g):
        _accum(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), back)


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit L2 norm; rows with norm <= eps map to zero."""
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    safe = norms > eps
    inv = np.where(safe, 1.0 / np.where(safe, norms, 1.0), 0.0)
    y = a.data * inv

    def back(g):
        rowdot = (y * g).sum(axis=1, keepdims=True)
        _accum(a, (g - y * rowdot) * inv)

    return _make(y, (a,), back)


# ---------------------------------------------------------------------------
# parameters and optimization


class ParamStore:
    """Named trainable tensors; insertion-ordered, names unique."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, data, requires_grad: bool = True) -> Tensor:
        if name in self._entries:
            raise NdiffError(f"ParamStore: duplicate parameter '{name}'")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = np.zeros_like(t.data)

    def copy(self, requires_grad: bool | None = None) -> "ParamStore":
        out = ParamStore()
        for name, t in self._entries.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            out.add(name, t.data.copy(), requires_grad=rg)
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._entries.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._entries):
            missing = set(self._entries) - set(arrays)
            extra = set(arrays) - set(self._entries)
            raise NdiffError(f"load_arrays: name mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, arr in arrays.items():
            t = self._entries[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise NdiffError(f"load_arrays: shape mismatch for '{name}': {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, params: ParamStore, lr: float = 3e-4, beta1: float = 0.9,
             beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update over every parameter in the store."""
    if set(state.m) != set(params.names()):
        raise NdiffError("adam_step: optimizer state does not match parameter names")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise NdiffError(f"adam_step: parameter '{name}' has no gradient")
        g = p.grad
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    """Rescale all gradients in place so their global L2 norm is at most
    max_norm; returns the pre-clip norm."""
    if max_norm <= 0:
        raise NdiffError("clip_grad_norm: max_norm must be positive")
    total = 0.0
    for name, p in params.items():
        if p.grad is None:
            raise NdiffError(f"clip_grad_norm: parameter '{name}' has no gradient")
        total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, int]
    coords_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"grad_check {status}: max rel error {self.max_rel_error:.3e} "
                f"(tol {self.tol:.1e}) at {self.worst_param}{self.worst_index}, "
                f"{self.coords_checked} coordinates")


def grad_check(loss_fn, params: ParamStore, h: float = 1e-5, tol: float = 1e-4,
               max_coords_per_param: int | None = None, rng=None,
               denom_floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` to central differences.

    ``loss_fn`` must rebuild the graph from the current store contents on
    every call. Relative error uses max(|analytic|, |numeric|, denom_floor)
    as denominator so that near-zero gradient pairs do not dominate.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    params.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    worst = (0.0, "", (0, 0))
    checked = 0
    for name, p in params.items():
        n_rows, n_cols = p.data.shape
        coords = [(i, j) for i in range(n_rows) for j in range(n_cols)]
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            picks = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[k] for k in picks]
        for (i, j) in coords:
            orig = p.data[i, j]
            p.data[i, j] = orig + h
            f_plus = loss_fn().item()
            p.data[i, j] = orig - h
            f_minus = loss_fn().item()
            p.data[i, j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name][i, j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), denom_floor)
            checked += 1
            if rel > worst[0]:
                worst = (rel, name, (i, j))
    return GradCheckReport(max_rel_error=worst[0], worst_param=worst[1],
                           worst_index=worst[2], coords_checked=checked, tol=tol)
