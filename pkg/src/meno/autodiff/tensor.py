"""Reverse-mode autodiff with an optional forward-mode tangent channel.

Tensors carry a primal array and, optionally, a same-shape tangent (dual
part). Tangents propagate through every primitive by the exact directional
derivative rule, so a single forward pass yields both u(x) and J_u(x)·v with
no truncation error. Tangents are plain arrays, never graph nodes: nothing
can differentiate *through* a tangent, which is a deliberate engine
constraint (the training objective wraps the directional derivative in a
stop-gradient, so reverse-over-forward is never needed).

Reverse mode is define-by-run: each op closes over its inputs and registers
a backward rule; ``grad`` topologically sorts the tape and accumulates
vector-Jacobian products into an id-keyed dict, leaving no state on the
tensors themselves.
"""

from __future__ import annotations

import math

import numpy as np

from .. import _kernels


class Tensor:
    """A node in the computation graph: primal value + optional dual value."""

    __slots__ = ("data", "tangent", "requires_grad", "_parents", "_backward")

    def __init__(self, data, tangent=None, requires_grad=False,
                 _parents=(), _backward=None):
        self.data = np.asarray(data)
        if tangent is not None:
            tangent = np.asarray(tangent)
            if tangent.shape != self.data.shape:
                raise ValueError(
                    f"tangent shape {tangent.shape} != data shape {self.data.shape}")
        self.tangent = tangent
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}, dual={self.tangent is not None})"

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _coerce(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take_slice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def param(data, dtype=np.float32) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data, tangent, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, tangent=tangent,
                  requires_grad=needs,
                  _parents=parents if needs else (),
                  _backward=backward if needs else None)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    tan = None
    if a.tangent is not None or b.tangent is not None:
        ta = a.tangent if a.tangent is not None else 0.0
        tb = b.tangent if b.tangent is not None else 0.0
        tan = np.broadcast_to(ta + tb, out.shape).astype(out.dtype, copy=False)

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _make(out, tan, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    tan = None
    if a.tangent is not None or b.tangent is not None:
        ta = a.tangent if a.tangent is not None else 0.0
        tb = b.tangent if b.tangent is not None else 0.0
        tan = np.broadcast_to(ta - tb, out.shape).astype(out.dtype, copy=False)

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(-g, b.data.shape))

    return _make(out, tan, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    tan = None
    if a.tangent is not None or b.tangent is not None:
        tan = np.zeros_like(out)
        if a.tangent is not None:
            tan += a.tangent * b.data
        if b.tangent is not None:
            tan += a.data * b.tangent

    def backward(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, tan, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data
    tan = None
    if a.tangent is not None or b.tangent is not None:
        tan = np.zeros_like(out)
        if a.tangent is not None:
            tan += a.tangent @ b.data
        if b.tangent is not None:
            tan += a.data @ b.tangent

    def backward(g, acc):
        if a.requires_grad:
            acc(a, g @ b.data.T)
        if b.requires_grad:
            acc(b, a.data.T @ g)

    return _make(out, tan, (a, b), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _gelu_val_deriv(x: np.ndarray):
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    th = np.tanh(inner)
    val = 0.5 * x * (1.0 + th)
    sech2 = 1.0 - th ** 2
    deriv = 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
    return val, deriv


def gelu(x: Tensor) -> Tensor:
    val, deriv = _gelu_val_deriv(x.data)
    tan = deriv * x.tangent if x.tangent is not None else None

    def backward(g, acc):
        acc(x, g * deriv)

    return _make(val, tan, (x,), backward)


def _pointwise(x: Tensor, fn, dfn) -> Tensor:
    val = fn(x.data)
    deriv = dfn(x.data)
    tan = deriv * x.tangent if x.tangent is not None else None

    def backward(g, acc):
        acc(x, g * deriv)

    return _make(val, tan, (x,), backward)


def sin(x: Tensor) -> Tensor:
    return _pointwise(x, np.sin, np.cos)


def cos(x: Tensor) -> Tensor:
    return _pointwise(x, np.cos, lambda v: -np.sin(v))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    tan = e * x.tangent if x.tangent is not None else None

    def backward(g, acc):
        acc(x, g * e)

    return _make(e, tan, (x,), backward)


def reciprocal(x: Tensor) -> Tensor:
    if np.any(x.data == 0):
        raise ZeroDivisionError("reciprocal of zero entry")
    inv = 1.0 / x.data
    deriv = -inv * inv
    tan = deriv * x.tangent if x.tangent is not None else None

    def backward(g, acc):
        acc(x, g * deriv)

    return _make(inv, tan, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _axis_tuple(axis, x.data.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    tan = x.tangent.sum(axis=axes, keepdims=keepdims) if x.tangent is not None else None

    def backward(g, acc):
        gg = g
        if not keepdims:
            for a in sorted(axes):
                gg = np.expand_dims(gg, a)
        acc(x, np.broadcast_to(gg, x.data.shape))

    return _make(out, tan, (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _axis_tuple(axis, x.data.ndim)
    n = int(np.prod([x.data.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=keepdims)
    tan = x.tangent.mean(axis=axes, keepdims=keepdims) if x.tangent is not None else None

    def backward(g, acc):
        gg = g / n
        if not keepdims:
            for a in sorted(axes):
                gg = np.expand_dims(gg, a)
        acc(x, np.broadcast_to(gg, x.data.shape))

    return _make(out, tan, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    tan = x.tangent.reshape(shape) if x.tangent is not None else None

    def backward(g, acc):
        acc(x, g.reshape(x.data.shape))

    return _make(out, tan, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = x.data.transpose(axes)
    tan = x.tangent.transpose(axes) if x.tangent is not None else None
    inv = tuple(np.argsort(axes))

    def backward(g, acc):
        acc(x, g.transpose(inv))

    return _make(out, tan, (x,), backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape)
    tan = np.broadcast_to(x.tangent, shape) if x.tangent is not None else None

    def backward(g, acc):
        acc(x, _unbroadcast(g, x.data.shape))

    return _make(out.copy(), None if tan is None else tan.copy(), (x,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    tan = None
    if any(t.tangent is not None for t in tensors):
        tan = np.concatenate(
            [t.tangent if t.tangent is not None else np.zeros_like(t.data)
             for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, acc):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            acc(t, g[tuple(idx)])

    return _make(out, tan, tuple(tensors), backward)


def take_slice(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    tan = x.tangent[idx] if x.tangent is not None else None

    def backward(g, acc):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        acc(x, gx)

    return _make(out.copy(), None if tan is None else tan.copy(), (x,), backward)


# ---------------------------------------------------------------------------
# convolution (hot path, dispatched through _kernels)
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Periodic same-size conv, (B,Ci,H,W) x (Co,Ci,kh,kw) -> (B,Co,H,W)."""
    kh, kw = w.data.shape[2], w.data.shape[3]
    out = _kernels.conv2d_forward(x.data, w.data)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    tan = None
    if x.tangent is not None or w.tangent is not None or (b is not None and b.tangent is not None):
        tan = np.zeros_like(out)
        if x.tangent is not None:
            tan += _kernels.conv2d_forward(x.tangent, w.data)
        if w.tangent is not None:
            tan += _kernels.conv2d_forward(x.data, w.tangent)
        if b is not None and b.tangent is not None:
            tan += b.tangent.reshape(1, -1, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g, acc):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            acc(x, _kernels.conv2d_grad_input(g, w.data))
        if w.requires_grad:
            acc(w, _kernels.conv2d_grad_weight(x.data, g, kh, kw))
        if b is not None and b.requires_grad:
            acc(b, g.sum(axis=(0, 2, 3)))

    return _make(out, tan, parents, backward)


# ---------------------------------------------------------------------------
# truncated spectral multiply (the neural-operator kernel layer core)
# ---------------------------------------------------------------------------

def _corner_rows(n: int, m: int):
    return np.r_[0:m, n - m:n]


def spectral_mul(x: Tensor, wr: Tensor, wi: Tensor, modes_y: int, modes_x: int) -> Tensor:
    """Multiply the retained low-frequency modes of x by complex weights.

    x: (B, Ci, H, W) real; wr/wi: (Ci, Co, 2*modes_y, 2*modes_x) real pair
    forming complex weights over the four corner blocks of the spectrum.
    Output: (B, Co, H, W) real; all modes outside the retained corners are
    exactly zero in the output spectrum.
    """
    B, Ci, H, W = x.data.shape
    if 2 * modes_y > H or 2 * modes_x > W:
        raise ValueError(f"modes ({modes_y},{modes_x}) exceed Nyquist for grid {H}x{W}")
    if wr.data.shape != (Ci, wr.data.shape[1], 2 * modes_y, 2 * modes_x):
        raise ValueError(f"weight shape {wr.data.shape} inconsistent with modes")
    Co = wr.data.shape[1]
    ry = _corner_rows(H, modes_y)
    rx = _corner_rows(W, modes_x)

    def apply(v: np.ndarray, W_c: np.ndarray) -> np.ndarray:
        V = np.fft.fft2(v, axes=(-2, -1))
        A = V[:, :, ry[:, None], rx[None, :]]              # (B, Ci', 2my, 2mx)
        Bm = np.einsum("bimn,iomn->bomn", A, W_c)
        O = np.zeros((v.shape[0], W_c.shape[1], H, W), dtype=complex)
        O[:, :, ry[:, None], rx[None, :]] = Bm
        return np.real(np.fft.ifft2(O, axes=(-2, -1))).astype(v.dtype)

    W_c = wr.data + 1j * wi.data
    out = apply(x.data, W_c)

    tan = None
    if x.tangent is not None or wr.tangent is not None or wi.tangent is not None:
        tan = np.zeros_like(out)
        if x.tangent is not None:
            tan += apply(x.tangent, W_c)
        if wr.tangent is not None or wi.tangent is not None:
            tr = wr.tangent if wr.tangent is not None else 0.0
            ti = wi.tangent if wi.tangent is not None else 0.0
            tan += apply(x.data, tr + 1j * ti)

    def backward(g, acc):
        Ghat = np.fft.fft2(g, axes=(-2, -1))
        gB = Ghat[:, :, ry[:, None], rx[None, :]] / (H * W)   # adjoint of ifft2+embed
        if x.requires_grad:
            # conjugate weights, contract output channels
            gA = np.einsum("bomn,iomn->bimn", gB, np.conj(W_c))
            GO = np.zeros((g.shape[0], Ci, H, W), dtype=complex)
            GO[:, :, ry[:, None], rx[None, :]] = gA
            gx = np.real(np.fft.ifft2(GO, axes=(-2, -1))) * (H * W)
            acc(x, gx.astype(x.data.dtype))
        if wr.requires_grad or wi.requires_grad:
            V = np.fft.fft2(x.data, axes=(-2, -1))
            A = V[:, :, ry[:, None], rx[None, :]]
            c = np.einsum("bomn,bimn->iomn", np.conj(gB), A)
            acc(wr, np.real(c).astype(wr.data.dtype))
            acc(wi, (-np.imag(c)).astype(wi.data.dtype))

    return _make(out, tan, (x, wr, wi), backward)


# ---------------------------------------------------------------------------
# stop-gradient, grad, jvp
# ---------------------------------------------------------------------------

def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; blocks both the reverse pass and the tangent channel."""
    return Tensor(x.data, tangent=None, requires_grad=False)


def _toposort(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order  # children after parents; reverse for backprop


def backward_pass(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar; returns id(tensor) -> gradient."""
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(t: Tensor, g: np.ndarray):
        if not t.requires_grad:
            return
        key = id(t)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = np.array(g, dtype=t.data.dtype, copy=True)

    for node in reversed(_toposort(loss)):
        if node._backward is None:
            continue
        g = grads.get(id(node))
        if g is None:
            continue
        node._backward(g, acc)
    return grads


def grad(loss: Tensor, params) -> list[np.ndarray]:
    """Exact reverse-mode gradients; off-path parameters get zeros."""
    grads = backward_pass(loss)
    return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def jvp(fn, inputs, tangents):
    """Forward-mode directional derivative of fn at `inputs` along `tangents`.

    Returns (outputs, output_tangents) with the same nesting as fn's return.
    Exact (dual-number propagation), no truncation error.
    """
    inputs = list(inputs)
    tangents = list(tangents)
    if len(inputs) != len(tangents):
        raise ValueError("inputs and tangents must have equal length")
    duals = []
    for x, t in zip(inputs, tangents):
        x = np.asarray(x)
        t = np.zeros_like(x) if t is None else np.asarray(t, dtype=x.dtype)
        if t.shape != x.shape:
            raise ValueError(f"tangent shape {t.shape} != input shape {x.shape}")
        duals.append(Tensor(x, tangent=t))
    out = fn(*duals)
    if isinstance(out, (tuple, list)):
        vals = tuple(o.data for o in out)
        tans = tuple(o.tangent if o.tangent is not None else np.zeros_like(o.data) for o in out)
        return vals, tans
    return out.data, (out.tangent if out.tangent is not None else np.zeros_like(out.data))
