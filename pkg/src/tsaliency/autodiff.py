"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every tensor in a computation is wrapped in a :class:`Node`. Operations build
a DAG; :func:`backward` walks it in reverse topological order and accumulates
gradients into every node with ``requires_grad``. Tensors are rank <= 3 and
float64 throughout. Broadcasting is restricted to scalar-with-tensor; anything
else goes through explicit shape ops (``tile``, ``reshape``, ``concat``, ...).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible for an op."""


class GraphError(RuntimeError):
    """Malformed computation graph (e.g. a cycle, or a non-scalar loss)."""


class Node:
    __slots__ = ("value", "grad", "op", "parents", "_backward", "requires_grad")

    def __init__(self, value, op: str = "leaf", parents: tuple = (),
                 requires_grad: bool | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents = parents
        self._backward: Callable[[np.ndarray], None] | None = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all dispatch to the module-level ops below
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)


def constant(value) -> Node:
    return Node(value, op="const", requires_grad=False)


def parameter(value) -> Node:
    return Node(np.array(value, dtype=np.float64), op="param", requires_grad=True)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _accum(node: Node, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    node.grad = g if node.grad is None else node.grad + g


def _check_elementwise(op: str, a: Node, b: Node) -> None:
    # equal shapes, or one side is a scalar (rank 0)
    if a.value.shape == b.value.shape:
        return
    if a.value.ndim == 0 or b.value.ndim == 0:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.value.shape} vs {b.value.shape}")


def _reduce_to(g: np.ndarray, target: Node) -> np.ndarray:
    # collapse the gradient of a scalar operand that was broadcast against a tensor
    if target.value.ndim == 0 and np.ndim(g) != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("add", a, b)
    out = Node(a.value + b.value, "add", (a, b))

    def backward(g):
        _accum(a, _reduce_to(g, a))
        _accum(b, _reduce_to(g, b))
    out._backward = backward
    return out


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("sub", a, b)
    out = Node(a.value - b.value, "sub", (a, b))

    def backward(g):
        _accum(a, _reduce_to(g, a))
        _accum(b, _reduce_to(-g, b))
    out._backward = backward
    return out


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("mul", a, b)
    out = Node(a.value * b.value, "mul", (a, b))

    def backward(g):
        _accum(a, _reduce_to(g * b.value, a))
        _accum(b, _reduce_to(g * a.value, b))
    out._backward = backward
    return out


def div(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("div", a, b)
    out = Node(a.value / b.value, "div", (a, b))

    def backward(g):
        _accum(a, _reduce_to(g / b.value, a))
        _accum(b, _reduce_to(-g * a.value / (b.value * b.value), b))
    out._backward = backward
    return out


def neg(a) -> Node:
    a = _wrap(a)
    out = Node(-a.value, "neg", (a,))

    def backward(g):
        _accum(a, -g)
    out._backward = backward
    return out


def matmul(a, b) -> Node:
    """Matrix product. Supported: (m,k)@(k,n), (m,k)@(k,), (k,)@(k,n),
    (B,m,k)@(k,n), (B,m,k)@(B,k,n)."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    ok = (
        (av.ndim == 2 and bv.ndim == 2 and av.shape[1] == bv.shape[0])
        or (av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0])
        or (av.ndim == 1 and bv.ndim == 2 and av.shape[0] == bv.shape[0])
        or (av.ndim == 3 and bv.ndim == 2 and av.shape[2] == bv.shape[0])
        or (av.ndim == 3 and bv.ndim == 3 and av.shape[0] == bv.shape[0]
            and av.shape[2] == bv.shape[1])
    )
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} vs {bv.shape}")
    out = Node(av @ bv, "matmul", (a, b))

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            _accum(a, g @ bv.T)
            _accum(b, av.T @ g)
        elif av.ndim == 2 and bv.ndim == 1:
            _accum(a, np.outer(g, bv))
            _accum(b, av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            _accum(a, bv @ g)
            _accum(b, np.outer(av, g))
        elif av.ndim == 3 and bv.ndim == 2:
            _accum(a, g @ bv.T)
            _accum(b, np.tensordot(av, g, axes=([0, 1], [0, 1])))
        else:  # (B,m,k)@(B,k,n)
            _accum(a, g @ np.swapaxes(bv, 1, 2))
            _accum(b, np.swapaxes(av, 1, 2) @ g)
    out._backward = backward
    return out


def conv1d_causal(x, kernel, stride: int = 1) -> Node:
    """Causal 1-D convolution: the output at time t sees inputs at times <= t
    only (zero padding on the past side).

    Shapes: x (w,) with kernel (K,), or x (w,C_in) / (B,w,C_in) with kernel
    (C_out,C_in,K).
    """
    if stride != 1:
        raise ShapeError("conv1d_causal: only stride=1 is supported")
    x, kernel = _wrap(x), _wrap(kernel)
    xv, kv = x.value, kernel.value

    if xv.ndim == 1 and kv.ndim == 1:
        k = kv.shape[0]
        w = xv.shape[0]
        xp = np.concatenate([np.zeros(k - 1), xv])
        outv = np.zeros(w)
        for j in range(k):
            outv += kv[j] * xp[j:j + w]
        out = Node(outv, "conv1d_causal", (x, kernel))

        def backward(g):
            if x.requires_grad:
                gx = np.zeros(w + k - 1)
                for j in range(k):
                    gx[j:j + w] += kv[j] * g
                _accum(x, gx[k - 1:])
            if kernel.requires_grad:
                gk = np.array([float(np.dot(xp[j:j + w], g)) for j in range(k)])
                _accum(kernel, gk)
        out._backward = backward
        return out

    squeeze = False
    if xv.ndim == 2 and kv.ndim == 3:
        xv3 = xv[None, :, :]
        squeeze = True
    elif xv.ndim == 3 and kv.ndim == 3:
        xv3 = xv
    else:
        raise ShapeError(f"conv1d_causal: incompatible shapes {xv.shape} vs {kv.shape}")
    c_out, c_in, k = kv.shape
    if xv3.shape[2] != c_in:
        raise ShapeError(
            f"conv1d_causal: input channels {xv3.shape[2]} != kernel channels {c_in}")
    bsz, w, _ = xv3.shape
    xp = np.concatenate([np.zeros((bsz, k - 1, c_in)), xv3], axis=1)
    outv = np.zeros((bsz, w, c_out))
    for j in range(k):
        outv += xp[:, j:j + w, :] @ kv[:, :, j].T
    out = Node(outv[0] if squeeze else outv, "conv1d_causal", (x, kernel))

    def backward(g):
        g3 = g[None, :, :] if squeeze else g
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + w, :] += g3 @ kv[:, :, j]
            gx = gxp[:, k - 1:, :]
            _accum(x, gx[0] if squeeze else gx)
        if kernel.requires_grad:
            gk = np.zeros_like(kv)
            for j in range(k):
                gk[:, :, j] = np.tensordot(g3, xp[:, j:j + w, :], axes=([0, 1], [0, 1]))
            _accum(kernel, gk)
    out._backward = backward
    return out


def sigmoid(x) -> Node:
    x = _wrap(x)
    v = x.value
    pos = v >= 0
    ev = np.exp(np.where(pos, -v, v))  # exponent always <= 0, no overflow
    s = np.where(pos, 1.0 / (1.0 + ev), ev / (1.0 + ev))
    out = Node(s, "sigmoid", (x,))
    sv = out.value

    def backward(g):
        _accum(x, g * sv * (1.0 - sv))
    out._backward = backward
    return out


def tanh(x) -> Node:
    x = _wrap(x)
    out = Node(np.tanh(x.value), "tanh", (x,))
    tv = out.value

    def backward(g):
        _accum(x, g * (1.0 - tv * tv))
    out._backward = backward
    return out


def relu(x) -> Node:
    x = _wrap(x)
    out = Node(np.maximum(x.value, 0.0), "relu", (x,))

    def backward(g):
        _accum(x, g * (x.value > 0))
    out._backward = backward
    return out


def softmax(x, axis: int = -1) -> Node:
    x = _wrap(x)
    v = x.value
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Node(s, "softmax", (x,))

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        _accum(x, s * (g - dot))
    out._backward = backward
    return out


def mean(x, axis: int | None = None, keepdims: bool = False) -> Node:
    x = _wrap(x)
    out = Node(np.mean(x.value, axis=axis, keepdims=keepdims), "mean", (x,))
    shape = x.value.shape
    count = x.value.size if axis is None else shape[axis]

    def backward(g):
        if axis is None:
            _accum(x, np.full(shape, float(g) / count))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(ge, shape) / count)
    out._backward = backward
    return out


def tensor_sum(x, axis: int | None = None, keepdims: bool = False) -> Node:
    x = _wrap(x)
    out = Node(np.sum(x.value, axis=axis, keepdims=keepdims), "sum", (x,))
    shape = x.value.shape

    def backward(g):
        if axis is None:
            _accum(x, np.full(shape, float(g)))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(ge, shape).copy())
    out._backward = backward
    return out


def mse(a, b) -> Node:
    """Mean squared error over all elements; scalar output."""
    a, b = _wrap(a), _wrap(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mse: incompatible shapes {a.value.shape} vs {b.value.shape}")
    d = a.value - b.value
    n = d.size
    out = Node(np.mean(d * d), "mse", (a, b))

    def backward(g):
        _accum(a, (2.0 * float(g) / n) * d)
        _accum(b, (-2.0 * float(g) / n) * d)
    out._backward = backward
    return out


def power(x, p: float) -> Node:
    x = _wrap(x)
    p = float(p)
    out = Node(x.value ** p, "pow", (x,))

    def backward(g):
        _accum(x, g * p * x.value ** (p - 1.0))
    out._backward = backward
    return out


def sqrt(x) -> Node:
    x = _wrap(x)
    out = Node(np.sqrt(x.value), "sqrt", (x,))
    sv = out.value

    def backward(g):
        _accum(x, g / (2.0 * sv))
    out._backward = backward
    return out


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = [_wrap(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: empty input")
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), "concat", tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]

    def backward(g):
        start = 0
        for n, s in zip(nodes, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + s)
            _accum(n, g[tuple(idx)])
            start += s
    out._backward = backward
    return out


def slice_node(x, key) -> Node:
    """Basic slicing (slices and non-negative ints only, no steps)."""
    x = _wrap(x)
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if isinstance(k, slice):
            if k.step not in (None, 1):
                raise ShapeError("slice: steps are not supported")
        elif not isinstance(k, int) or k < 0:
            raise ShapeError("slice: only non-negative ints and step-1 slices")
    out = Node(x.value[key], "slice", (x,))

    def backward(g):
        gx = np.zeros_like(x.value)
        gx[key] = g
        _accum(x, gx)
    out._backward = backward
    return out


def reshape(x, shape: tuple) -> Node:
    x = _wrap(x)
    out = Node(x.value.reshape(shape), "reshape", (x,))
    orig = x.value.shape

    def backward(g):
        _accum(x, g.reshape(orig))
    out._backward = backward
    return out


def transpose(x, axes: tuple | None = None) -> Node:
    x = _wrap(x)
    out = Node(np.transpose(x.value, axes), "transpose", (x,))
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        _accum(x, np.transpose(g, inv))
    out._backward = backward
    return out


def flip(x, axis: int) -> Node:
    x = _wrap(x)
    out = Node(np.flip(x.value, axis=axis).copy(), "flip", (x,))

    def backward(g):
        _accum(x, np.flip(g, axis=axis))
    out._backward = backward
    return out


def tile(x, axis: int, reps: int) -> Node:
    """Repeat a size-1 axis ``reps`` times (explicit broadcast)."""
    x = _wrap(x)
    if x.value.shape[axis] != 1:
        raise ShapeError(f"tile: axis {axis} of shape {x.value.shape} must have size 1")
    out = Node(np.repeat(x.value, reps, axis=axis), "tile", (x,))

    def backward(g):
        _accum(x, g.sum(axis=axis, keepdims=True))
    out._backward = backward
    return out


def _toposort(root: Node) -> list[Node]:
    """Post-order over the ancestors of ``root`` that require gradients.

    Raises GraphError if a cycle is reachable (possible only through manual
    mutation of ``parents``).
    """
    order: list[Node] = []
    done: set[int] = set()
    stack: list[list] = [[root, 0]]
    onpath = {id(root)}
    while stack:
        frame = stack[-1]
        node, i = frame
        if i < len(node.parents):
            frame[1] = i + 1
            p = node.parents[i]
            if not p.requires_grad or id(p) in done:
                continue
            if id(p) in onpath:
                raise GraphError(f"cycle detected through op {p.op!r}")
            onpath.add(id(p))
            stack.append([p, 0])
        else:
            stack.pop()
            onpath.discard(id(node))
            done.add(id(node))
            order.append(node)
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` for every reachable node
    with ``requires_grad``. ``loss`` must be scalar."""
    if loss.value.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


def _relu_kink_exclusions(loss: Node, params: Sequence[Node], h: float) -> set:
    """Coordinates of params that sit within ``h`` of a relu kink when the
    relu is applied to the parameter directly."""
    excluded: set[tuple[int, int]] = set()
    param_ids = {id(p): i for i, p in enumerate(params)}
    seen: set[int] = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.op == "relu" and id(node.parents[0]) in param_ids:
            pi = param_ids[id(node.parents[0])]
            flat = node.parents[0].value.reshape(-1)
            for ci in np.nonzero(np.abs(flat) < h)[0]:
                excluded.add((pi, int(ci)))
        stack.extend(node.parents)
    return excluded


def grad_check(f: Callable[[Sequence[Node]], Node], params: Sequence[Node],
               h: float = 1e-5, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Compare the reverse-mode gradient of ``f(params)`` against central
    finite differences.

    Returns the max relative error |a-b| / max(1e-8, |a|+|b|) over checked
    coordinates. Coordinates lying on a relu kink (parameter fed straight
    into a relu with |value| < h) are excluded. ``max_coords`` caps the
    number of coordinates checked per parameter (random but seeded).
    """
    zero_grad(params)
    loss = f(params)
    backward(loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy()
                for p in params]
    excluded = _relu_kink_exclusions(loss, params, h)
    zero_grad(params)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
            coords.sort()
        for ci in coords:
            if (pi, int(ci)) in excluded:
                continue
            orig = flat[ci]
            flat[ci] = orig + h
            fp = float(f(params).value)
            flat[ci] = orig - h
            fm = float(f(params).value)
            flat[ci] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic[pi].reshape(-1)[ci])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
