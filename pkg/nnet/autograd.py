"""
Tape-based reverse-mode differentiation over numpy arrays.

A `Node` wraps a float64 array. Operations on nodes record a backward closure
only when one of their inputs requires a gradient, so evaluating a network on
constant parameters builds no graph at all.
"""
import numpy as np
from scipy.special import expit

from utils.exceptions import ContractError, ShapeError

GELU_K = np.sqrt(2.0 / np.pi)
GELU_C = 0.044715


class Node:
    __slots__ = ('value', 'grad', 'requires_grad', '_parents', '_backward')
    # ndarray <op> Node defers to the reflected Node operators
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value.reshape(-1)[0])

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def leaf(value):
    """A node that collects a gradient."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def as_node(value):
    if isinstance(value, Node):
        return value
    return Node(value)


def _record(value, parents, backward):
    if any(p.requires_grad for p in parents):
        return Node(value, requires_grad=True, parents=parents, backward=backward)
    return Node(value)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_node(a), as_node(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.value + b.value, (a, b), backward)


def sub(a, b):
    a, b = as_node(a), as_node(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.value - b.value, (a, b), backward)


def mul(a, b):
    a, b = as_node(a), as_node(b)

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _record(a.value * b.value, (a, b), backward)


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return _record(a.value @ b.value, (a, b), backward)


def transpose(a):
    a = as_node(a)

    def backward(g):
        return (g.T,)

    return _record(a.value.T, (a,), backward)


def square(a):
    a = as_node(a)

    def backward(g):
        return (2.0 * a.value * g,)

    return _record(a.value * a.value, (a,), backward)


def tanh(a):
    a = as_node(a)
    out = np.tanh(a.value)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _record(out, (a,), backward)


def gelu(a):
    """GELU, tanh approximation."""
    a = as_node(a)
    x = a.value
    inner = GELU_K * (x + GELU_C * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = GELU_K * (1.0 + 3.0 * GELU_C * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner),)

    return _record(out, (a,), backward)


def softplus(a):
    """log(1 + exp(a)), stable for large |a|."""
    a = as_node(a)

    def backward(g):
        return (g * expit(a.value),)

    return _record(np.logaddexp(0.0, a.value), (a,), backward)


def total(a, axis=None):
    a = as_node(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record(a.value.sum(axis=axis), (a,), backward)


def mean(a, axis=None):
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(total(a, axis=axis), 1.0 / count)


def concat(nodes, axis=-1):
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), backward)


def take_rows(table, ids):
    """Embedding lookup: rows of `table` selected by integer `ids`."""
    table = as_node(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(table.value)
        np.add.at(out, ids, g)
        return (out,)

    return _record(table.value[ids], (table,), backward)


ACTIVATIONS = {
    'gelu': gelu,
    'tanh': tanh,
    'identity': lambda a: as_node(a),
}


def backward(root):
    """
    Accumulate d(root)/d(leaf) into `.grad` of every node that requires it.

    Raises:
        ContractError: If `root` is not a scalar node
    """
    if not isinstance(root, Node) or root.value.size != 1:
        shape = getattr(root, 'shape', type(root).__name__)
        raise ContractError(f"Gradients need a scalar loss, got {shape}")
    if not root.requires_grad:
        return

    # Topological order, iteratively to survive deep graphs
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
