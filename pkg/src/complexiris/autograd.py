"""Reverse-mode differentiation over complex tensors.

Gradients follow the real-pair convention: the gradient of a real loss C
with respect to a complex value z is stored as ``dC/dRe z + i dC/dIm z``.
Each op's backward function maps the gradient of its output to gradients of
its inputs in that same convention, which is exactly the four-term chain
rule obtained by treating Re and Im as independent real variables.

For a C-linear map y = L x the rule reduces to ``g_x = L^H g_y``; for an
elementwise product y = a b it gives ``g_a = g_y conj(b)``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .ctensor import ComplexTensor


class GraphError(RuntimeError):
    pass


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, value: ComplexTensor, parents: Sequence["Node"] = (),
                 backward_fn: Callable | None = None, op: str = "leaf",
                 requires_grad: bool | None = None, name: str | None = None):
        self.value = value
        self.grad: ComplexTensor | None = None
        self.parents = tuple(parents)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        # no need to keep closures alive when nothing upstream wants a gradient
        self.backward_fn = backward_fn if requires_grad else None
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Node":
        return Node(self.value)

    # sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


class Parameter(Node):
    """Trainable leaf.

    ``real_only`` parameters keep their imaginary plane pinned at zero; the
    optimizer discards the imaginary part of their gradient.
    """

    __slots__ = ("real_only", "trainable")

    def __init__(self, value: ComplexTensor, name: str | None = None,
                 real_only: bool = False, trainable: bool = True):
        super().__init__(value, requires_grad=True, op="param", name=name)
        self.real_only = real_only
        self.trainable = trainable


def constant(value: ComplexTensor) -> Node:
    return Node(value, requires_grad=False, op="const")


def _topo_order(root: Node):
    order = []
    state = {}  # id -> 1 visiting, 2 done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        st = state.get(key)
        if st == 2:
            continue
        if st == 1:
            raise GraphError(f"cycle detected at {node!r}")
        state[key] = 1
        stack.append((node, True))
        for p in node.parents:
            if not p.requires_grad:
                continue
            pst = state.get(id(p))
            if pst == 1:
                raise GraphError(f"cycle detected at {p!r}")
            if pst is None:
                stack.append((p, False))
    return order


def _accumulate(node: Node, g: ComplexTensor):
    if g.shape != node.value.shape:
        raise GraphError(f"gradient shape {g.shape} does not match {node!r}")
    if node.grad is None:
        node.grad = ComplexTensor(g.re.copy(), g.im.copy())
    else:
        node.grad.re += g.re
        node.grad.im += g.im


def backward(loss: Node, seed: float | ComplexTensor = 1.0, check_real: bool = True):
    """Back-propagate from a scalar real loss.

    Returns the list of :class:`Parameter` leaves reached, each with
    ``.grad`` populated. Gradients accumulate across fan-out.
    """
    if loss.value.size != 1:
        raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
    if check_real and float(np.abs(loss.value.im).max()) != 0.0:
        raise GraphError("loss must be real (imaginary part is nonzero)")
    if not loss.requires_grad:
        return []
    if isinstance(seed, ComplexTensor):
        g0 = seed.reshape(loss.shape).astype(loss.value.dtype)
    else:
        g0 = ComplexTensor(np.full(loss.shape, seed, loss.value.dtype))
    order = _topo_order(loss)
    for node in order:
        if node is not loss and not isinstance(node, Parameter):
            node.grad = None
    loss.grad = None
    _accumulate(loss, g0)
    params = []
    for node in reversed(order):
        if node.grad is None:
            continue
        if node.backward_fn is None:
            if isinstance(node, Parameter):
                params.append(node)
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            _accumulate(parent, g)
        # intermediate gradients are not needed once propagated
        node.grad = None
        node.backward_fn = None
    return params


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def _wrap(x) -> Node:
    if isinstance(x, Node):
        return x
    if isinstance(x, ComplexTensor):
        return constant(x)
    z = complex(x)
    return constant(ComplexTensor.scalar(z.real, z.imag))


def _unbroadcast(g: ComplexTensor, shape) -> ComplexTensor:
    if g.shape == tuple(shape):
        return g
    re, im = g.re, g.im
    while re.ndim > len(shape):
        re, im = re.sum(0), im.sum(0)
    for ax, n in enumerate(shape):
        if n == 1 and re.shape[ax] != 1:
            re, im = re.sum(ax, keepdims=True), im.sum(ax, keepdims=True)
    return ComplexTensor(re, im)


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    out = ComplexTensor(a.value.re + b.value.re, a.value.im + b.value.im)
    sa, sb = a.shape, b.shape
    return Node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    out = ComplexTensor(a.value.re - b.value.re, a.value.im - b.value.im)
    sa, sb = a.shape, b.shape
    return Node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    out = ComplexTensor(av.re * bv.re - av.im * bv.im, av.re * bv.im + av.im * bv.re)

    def bw(g):
        ga = ComplexTensor(g.re * bv.re + g.im * bv.im, g.im * bv.re - g.re * bv.im)
        gb = ComplexTensor(g.re * av.re + g.im * av.im, g.im * av.re - g.re * av.im)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return Node(out, (a, b), bw, "mul")


def scale(a: Node, s: float) -> Node:
    v = a.value
    return Node(ComplexTensor(v.re * s, v.im * s), (a,),
                lambda g: (ComplexTensor(g.re * s, g.im * s),), "scale")


def real_part(a: Node) -> Node:
    v = a.value
    return Node(ComplexTensor(v.re, np.zeros_like(v.im)), (a,),
                lambda g: (ComplexTensor(g.re, np.zeros_like(g.im)),), "real")


def abs2(a: Node) -> Node:
    """|z|^2 as a real-valued complex tensor; gradient is 2 z times the real seed."""
    v = a.value
    out = ComplexTensor(v.re * v.re + v.im * v.im, np.zeros_like(v.re))
    return Node(out, (a,), lambda g: (ComplexTensor(2 * g.re * v.re, 2 * g.re * v.im),), "abs2")


def sum_all(a: Node) -> Node:
    v = a.value
    shape = v.shape
    out = ComplexTensor(np.array(v.re.sum()), np.array(v.im.sum()))

    def bw(g):
        return (ComplexTensor(np.broadcast_to(g.re, shape), np.broadcast_to(g.im, shape)),)

    return Node(out, (a,), bw, "sum")


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = [_wrap(n) for n in nodes]
    axis = axis % nodes[0].value.ndim
    out = ComplexTensor(np.concatenate([n.value.re for n in nodes], axis),
                        np.concatenate([n.value.im for n in nodes], axis))
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def bw(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Node(out, nodes, bw, "concat")


def index(a: Node, idx) -> Node:
    """Basic/advanced indexing along the leading axis (gather)."""
    v = a.value
    out = ComplexTensor(v.re[idx], v.im[idx])

    def bw(g):
        re = np.zeros_like(v.re)
        im = np.zeros_like(v.im)
        np.add.at(re, idx, g.re)
        np.add.at(im, idx, g.im)
        return (ComplexTensor(re, im),)

    return Node(out, (a,), bw, "index")


def roll(a: Node, shift: int, axis: int) -> Node:
    v = a.value
    out = ComplexTensor(np.roll(v.re, shift, axis), np.roll(v.im, shift, axis))
    return Node(out, (a,), lambda g: (ComplexTensor(np.roll(g.re, -shift, axis),
                                                    np.roll(g.im, -shift, axis)),), "roll")
