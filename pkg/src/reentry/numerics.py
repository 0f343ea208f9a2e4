"""Dense tensors with reverse-mode differentiation.

Just enough machinery for the re-entry model: matrix-vector products,
elementwise sigmoid/tanh, softmax, concatenation, embedding lookup, dot
products, GRU cells (single step and fused sequence), and a
finite-difference gradient checker.  Buffers are numpy arrays; the
default dtype is float64 (checking mode), switchable to float32 for
training via :func:`set_dtype`.  Gradient checks require float64.

Every op builds a node in an implicit tape; ``Tensor.backward()`` walks
the tape once in reverse topological order.  Graphs are single-use: call
``backward`` at most once per forward construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

_DTYPE = np.float64

_DTYPES = {"float64": np.float64, "float32": np.float32}


def set_dtype(name: str) -> None:
    """Set the dtype for tensors created after this call ("float64"/"float32")."""
    global _DTYPE
    if name not in _DTYPES:
        raise ValueError(f"unknown dtype {name!r}, expected one of {sorted(_DTYPES)}")
    _DTYPE = _DTYPES[name]


def get_dtype() -> str:
    return "float64" if _DTYPE is np.float64 else "float32"


class Tensor:
    """A dense array plus an optional gradient slot and tape linkage."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def backward(self) -> None:
        """Reverse-mode sweep from a single-element tensor."""
        if self.value.size != 1:
            raise ValueError("backward() requires a single-element tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # Arithmetic sugar; constants are wrapped on the fly.
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

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named learnable tensor; gradient persists until zeroed."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(value: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(value)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the pre-broadcast shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    val = a.value + b.value

    def backward(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(g, b.value.shape))

    return _node(val, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    val = a.value - b.value

    def backward(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(-_unbroadcast(g, b.value.shape))

    return _node(val, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    val = a.value * b.value

    def backward(g):
        a.accumulate(_unbroadcast(g * b.value, a.value.shape))
        b.accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _node(val, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        a.accumulate(-g)

    return _node(-a.value, (a,), backward)


def matvec(m: Tensor, x: Tensor) -> Tensor:
    """m @ x for a matrix (n, k) and vector (k,)."""
    val = m.value @ x.value

    def backward(g):
        m.accumulate(np.outer(g, x.value))
        x.accumulate(m.value.T @ g)

    return _node(val, (m, x), backward)


def tmatvec(m: Tensor, x: Tensor) -> Tensor:
    """m.T @ x for a matrix (n, k) and vector (n,); yields (k,)."""
    val = m.value.T @ x.value

    def backward(g):
        m.accumulate(np.outer(x.value, g))
        x.accumulate(m.value @ g)

    return _node(val, (m, x), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    val = a.value @ b.value

    def backward(g):
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    return _node(val, (a, b), backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two vectors, returned as a (1,) tensor."""
    val = np.array([a.value @ b.value], dtype=a.value.dtype)

    def backward(g):
        a.accumulate(g[0] * b.value)
        b.accumulate(g[0] * a.value)

    return _node(val, (a, b), backward)


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a (1,) tensor."""
    val = np.array([x.value.sum()], dtype=x.value.dtype)

    def backward(g):
        x.accumulate(np.full_like(x.value, g[0]))

    return _node(val, (x,), backward)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    parts = list(parts)
    val = np.concatenate([p.value for p in parts])
    sizes = [p.value.shape[0] for p in parts]

    def backward(g):
        offset = 0
        for p, n in zip(parts, sizes):
            p.accumulate(g[offset:offset + n])
            offset += n

    return _node(val, parts, backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a (n, d) matrix."""
    rows = list(rows)
    val = np.stack([r.value for r in rows])

    def backward(g):
        for i, r in enumerate(rows):
            r.accumulate(g[i])

    return _node(val, rows, backward)


def hconcat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two matrices along columns."""
    val = np.concatenate([a.value, b.value], axis=1)
    na = a.value.shape[1]

    def backward(g):
        a.accumulate(g[:, :na])
        b.accumulate(g[:, na:])

    return _node(val, (a, b), backward)


def row(m: Tensor, i: int) -> Tensor:
    """Select row i of a matrix."""
    val = m.value[i].copy()

    def backward(g):
        full = np.zeros_like(m.value)
        full[i] = g
        m.accumulate(full)

    return _node(val, (m,), backward)


def flip_rows(m: Tensor) -> Tensor:
    """Reverse row order."""
    val = m.value[::-1].copy()

    def backward(g):
        m.accumulate(g[::-1])

    return _node(val, (m,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # expit saturates instead of overflowing for large |x|.
    return expit(x)


def sigmoid(x: Tensor) -> Tensor:
    val = _sigmoid(x.value)

    def backward(g):
        x.accumulate(g * val * (1.0 - val))

    return _node(val, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    val = np.tanh(x.value)

    def backward(g):
        x.accumulate(g * (1.0 - val * val))

    return _node(val, (x,), backward)


def log(x: Tensor) -> Tensor:
    val = np.log(x.value)

    def backward(g):
        x.accumulate(g / x.value)

    return _node(val, (x,), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the unclipped region."""
    val = np.clip(x.value, lo, hi)
    inside = (x.value > lo) & (x.value < hi)

    def backward(g):
        x.accumulate(g * inside)

    return _node(val, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax over a 1-D tensor; outputs are positive and sum to 1."""
    shifted = x.value - x.value.max()
    e = np.exp(shifted)
    val = e / e.sum()

    def backward(g):
        x.accumulate(val * (g - g @ val))

    return _node(val, (x,), backward)


def embed_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.intp)
    val = table.value[idx]

    def backward(g):
        # Scatter-add straight into the leaf gradient; a dense
        # intermediate the size of the table would dominate runtime.
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        np.add.at(table.grad, idx, g)

    return _node(val, (table,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate <= 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate).astype(x.value.dtype) / (1.0 - rate)
    return mul(x, constant(keep))


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

@dataclass
class GruParams:
    """Weights of one GRU direction: three gates, each with input,
    recurrent and bias blocks."""

    w_z: Parameter
    u_z: Parameter
    b_z: Parameter
    w_r: Parameter
    u_r: Parameter
    b_r: Parameter
    w_h: Parameter
    u_h: Parameter
    b_h: Parameter

    @property
    def hidden_dim(self) -> int:
        return self.b_z.value.shape[0]

    def all(self) -> list[Parameter]:
        return [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
                self.w_h, self.u_h, self.b_h]


def init_gru(rng: np.random.Generator, input_dim: int, hidden_dim: int,
             scale: float, prefix: str) -> GruParams:
    """Uniform(-scale, scale) weights, zero biases."""

    def w(shape, name):
        return Parameter(rng.uniform(-scale, scale, shape), f"{prefix}.{name}")

    def b(name):
        return Parameter(np.zeros(hidden_dim), f"{prefix}.{name}")

    return GruParams(
        w_z=w((hidden_dim, input_dim), "w_z"), u_z=w((hidden_dim, hidden_dim), "u_z"), b_z=b("b_z"),
        w_r=w((hidden_dim, input_dim), "w_r"), u_r=w((hidden_dim, hidden_dim), "u_r"), b_r=b("b_r"),
        w_h=w((hidden_dim, input_dim), "w_h"), u_h=w((hidden_dim, hidden_dim), "u_h"), b_h=b("b_h"),
    )


def gru_cell(p: GruParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU step.

    z = sigma(W_z x + U_z h + b_z), r = sigma(W_r x + U_r h + b_r),
    cand = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * cand.
    The update gate scales the candidate; the reset gate acts inside the
    recurrent term of the candidate.
    """
    if x.value.shape[0] != p.w_z.value.shape[1]:
        raise ValueError(
            f"input dim {x.value.shape[0]} does not match GRU input {p.w_z.value.shape[1]}")
    if h_prev.value.shape[0] != p.hidden_dim:
        raise ValueError(
            f"state dim {h_prev.value.shape[0]} does not match GRU hidden {p.hidden_dim}")
    z = sigmoid(add(add(matvec(p.w_z, x), matvec(p.u_z, h_prev)), p.b_z))
    r = sigmoid(add(add(matvec(p.w_r, x), matvec(p.u_r, h_prev)), p.b_r))
    cand = tanh(add(add(matvec(p.w_h, x), matvec(p.u_h, mul(r, h_prev))), p.b_h))
    return add(mul(sub(1.0, z), h_prev), mul(z, cand))


def gru_sequence(p: GruParams, xs: Tensor, h0: Tensor | None = None,
                 reverse: bool = False) -> Tensor:
    """Run a GRU over a (T, input_dim) sequence; returns all (T, hidden) states.

    A fused tape node: the forward loop caches gate activations and the
    backward replays them in reverse (truncated nowhere -- full BPTT).
    With ``reverse=True`` the recurrence consumes rows last-to-first and
    the output stays aligned to input rows, so ``out[t]`` is the state
    after reading rows T-1..t and ``out[0]`` is the final state of the
    backward direction.
    """
    if xs.value.ndim != 2:
        raise ValueError("gru_sequence expects a (T, input_dim) tensor")
    if xs.value.shape[0] == 0:
        raise ValueError("gru_sequence requires at least one step")
    d = p.hidden_dim
    x_fwd = xs.value[::-1] if reverse else xs.value
    steps = x_fwd.shape[0]
    w_z, u_z, b_z = p.w_z.value, p.u_z.value, p.b_z.value
    w_r, u_r, b_r = p.w_r.value, p.u_r.value, p.b_r.value
    w_h, u_h, b_h = p.w_h.value, p.u_h.value, p.b_h.value
    if xs.value.shape[1] != w_z.shape[1]:
        raise ValueError(
            f"input dim {xs.value.shape[1]} does not match GRU input {w_z.shape[1]}")

    # Input projections for all steps at once.
    xz = x_fwd @ w_z.T + b_z
    xr = x_fwd @ w_r.T + b_r
    xh = x_fwd @ w_h.T + b_h

    h = np.zeros(d, dtype=xs.value.dtype) if h0 is None else h0.value
    h_pre = np.empty((steps, d), dtype=xs.value.dtype)
    zs = np.empty_like(h_pre)
    rs = np.empty_like(h_pre)
    cs = np.empty_like(h_pre)
    hs = np.empty_like(h_pre)
    for t in range(steps):
        h_pre[t] = h
        z = _sigmoid(xz[t] + u_z @ h)
        r = _sigmoid(xr[t] + u_r @ h)
        c = np.tanh(xh[t] + u_h @ (r * h))
        h = (1.0 - z) * h + z * c
        zs[t], rs[t], cs[t], hs[t] = z, r, c, h

    out_val = hs[::-1].copy() if reverse else hs

    def backward(g):
        g_fwd = g[::-1] if reverse else g
        d_xz = np.empty_like(xz)
        d_xr = np.empty_like(xr)
        d_xh = np.empty_like(xh)
        carry = np.zeros(d, dtype=g.dtype)
        for t in range(steps - 1, -1, -1):
            dh = g_fwd[t] + carry
            hp = h_pre[t]
            z, r, c = zs[t], rs[t], cs[t]
            dah = (dh * z) * (1.0 - c * c)
            d_xh[t] = dah
            drh = u_h.T @ dah
            dar = (drh * hp) * r * (1.0 - r)
            d_xr[t] = dar
            daz = (dh * (c - hp)) * z * (1.0 - z)
            d_xz[t] = daz
            carry = dh * (1.0 - z) + drh * r + u_r.T @ dar + u_z.T @ daz
        dx = d_xz @ w_z + d_xr @ w_r + d_xh @ w_h
        xs.accumulate(dx[::-1] if reverse else dx)
        if h0 is not None:
            h0.accumulate(carry)
        p.w_z.accumulate(d_xz.T @ x_fwd)
        p.w_r.accumulate(d_xr.T @ x_fwd)
        p.w_h.accumulate(d_xh.T @ x_fwd)
        # The per-step outer products collapse into one matmul each.
        p.u_z.accumulate(d_xz.T @ h_pre)
        p.u_r.accumulate(d_xr.T @ h_pre)
        p.u_h.accumulate(d_xh.T @ (rs * h_pre))
        p.b_z.accumulate(d_xz.sum(axis=0))
        p.b_r.accumulate(d_xr.sum(axis=0))
        p.b_h.accumulate(d_xh.sum(axis=0))

    parents = [xs] + p.all() + ([h0] if h0 is not None else [])
    return _node(out_val, parents, backward)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of a finite-difference sweep over sampled parameter entries."""

    checked: int
    max_rel_err: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        status = "ok" if self.passed else f"{len(self.violations)} violations"
        return (f"grad check: {self.checked} entries, "
                f"max rel err {self.max_rel_err:.3e} ({status})")


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
               eps: float = 1e-5, tol: float = 1e-4,
               max_entries: int | None = None,
               rng: np.random.Generator | None = None,
               denom_floor: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` must rebuild the forward graph on every call and return a
    single-element tensor.  Checks every parameter entry, or a random
    sample of ``max_entries`` when given.  The relative error denominator
    is floored at ``denom_floor`` so near-zero gradients are compared on
    an absolute scale, below the cancellation noise of the differences.
    """
    if get_dtype() != "float64":
        raise RuntimeError("grad_check requires float64 mode (set_dtype('float64'))")
    params = list(params)
    zero_grads(params)
    loss = loss_fn()
    if not np.isfinite(loss.item()):
        raise ValueError(f"non-finite loss {loss.item()} in grad_check")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    entries = [(i, j) for i, p in enumerate(params) for j in range(p.value.size)]
    if max_entries is not None and len(entries) > max_entries:
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[k] for k in picked]

    report = GradCheckReport(checked=len(entries), max_rel_err=0.0)
    for i, j in entries:
        p = params[i]
        saved = p.value.flat[j]
        p.value.flat[j] = saved + eps
        loss_plus = loss_fn().item()
        p.value.flat[j] = saved - eps
        loss_minus = loss_fn().item()
        p.value.flat[j] = saved
        numeric = (loss_plus - loss_minus) / (2.0 * eps)
        ana = analytic[i].flat[j]
        denom = max(abs(ana), abs(numeric), denom_floor)
        rel = abs(ana - numeric) / denom
        report.max_rel_err = max(report.max_rel_err, rel)
        if rel > tol:
            report.violations.append((p.name, int(j), float(ana), float(numeric), float(rel)))
    return report
