"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the graph rooted at a scalar loss in reverse topological order.

Gradients are reset on every ``backward`` call, so running it twice on the
same graph gives the same numbers instead of silently doubling them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, NonFiniteError, ShapeError

_node_ids = itertools.count()


class Tensor:
    """A node in a differentiation graph.

    Leaves are created directly; everything else comes out of an op.
    ``requires_grad`` marks trainable leaves and propagates to results.
    """

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.id = next(_node_ids)
        self._grad_fn = None
        self._kink = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, op, grad_fn, kink=None) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.name = ""
    out.op = op
    out.parents = tuple(parents)
    out.id = next(_node_ids)
    out._grad_fn = grad_fn if out.requires_grad else None
    out._kink = kink
    return out


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _matrix(op, a: Tensor):
    if a.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-D tensor, got shape {a.shape}")


# --- ops -------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _matrix("matmul", a)
    _matrix("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data @ b.data, (a, b), "matmul",
                   lambda g: (g @ b.data.T, a.data.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _same_shape("mul", a, b)
    return _result(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-m vector to every row of an n x m matrix."""
    _matrix("add_bias", a)
    if b.shape != (a.shape[1],):
        raise ShapeError(f"add_bias: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), "add_bias", lambda g: (g, g.sum(axis=0)))


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    active = a.data > 0
    return _result(np.where(active, a.data, 0.0), (a,), "relu",
                   lambda g: (g * active,), kink=active)


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), "square", lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; the derivative at exactly 0 is taken as 0."""
    if np.any(a.data < 0):
        raise DomainError(f"sqrt of negative value {a.data.min()!r}")
    out = np.sqrt(a.data)
    positive = out > 0
    safe = np.where(positive, out, 1.0)
    return _result(out, (a,), "sqrt",
                   lambda g: (np.where(positive, g / (2.0 * safe), 0.0),), kink=positive)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value {a.data.min()!r}")
    return _result(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient is blocked where the floor binds."""
    passed = a.data >= floor
    return _result(np.where(passed, a.data, floor), (a,), "clamp_min",
                   lambda g: (g * passed,), kink=passed)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), "scale", lambda g: (g * c,))


def softmax_rows(a: Tensor) -> Tensor:
    _matrix("softmax_rows", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), "softmax_rows", grad_fn)


def log_softmax_rows(a: Tensor) -> Tensor:
    _matrix("log_softmax_rows", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return _result(out, (a,), "log_softmax_rows",
                   lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    if axis is None:
        return _result(np.asarray(a.data.sum()), (a,), "sum",
                       lambda g: (np.broadcast_to(g, a.shape).copy(),))
    axis = axis % a.ndim

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(a.data.sum(axis=axis), (a,), "sum", grad_fn)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError(f"mean over an empty axis of shape {a.shape}")
    return scale(sum(a, axis), 1.0 / count)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    _matrix("concat_rows", a)
    _matrix("concat_rows", b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: shape mismatch {a.shape} vs {b.shape}")
    n = a.shape[0]
    return _result(np.vstack([a.data, b.data]), (a, b), "concat_rows",
                   lambda g: (g[:n], g[n:]))


def row_select(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"row_select: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise ShapeError(f"row_select: index out of range for shape {a.shape}")

    def grad_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), "row_select", grad_fn)


def pick(a: Tensor, columns) -> Tensor:
    """Take one entry per row: ``out[i] = a[i, columns[i]]``."""
    _matrix("pick", a)
    cols = np.asarray(columns, dtype=np.intp)
    if cols.shape != (a.shape[0],):
        raise ShapeError(f"pick: shape mismatch {a.shape} vs {cols.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= a.shape[1]):
        raise ShapeError(f"pick: column out of range for shape {a.shape}")
    rows = np.arange(a.shape[0])

    def grad_fn(g):
        out = np.zeros_like(a.data)
        out[rows, cols] = g
        return (out,)

    return _result(a.data[rows, cols], (a,), "pick", grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: shape mismatch {a.shape} vs {shape}")
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


# --- graph and backward ----------------------------------------------------


class Graph:
    """The nodes reachable from ``output``, in topological order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _topological_order(output)
        self._ids = {n.id for n in self.nodes}

    def __contains__(self, t: Tensor) -> bool:
        return t.id in self._ids

    def __len__(self):
        return len(self.nodes)

    def records(self) -> list[tuple[int, str, tuple[int, ...]]]:
        """(node id, op kind, input ids) for every node."""
        return [(n.id, n.op, tuple(p.id for p in n.parents)) for n in self.nodes]

    def kink_signature(self) -> tuple[bytes, ...]:
        """Branch masks of relu/sqrt/clamp nodes; changes when a kink is crossed."""
        return tuple(np.packbits(n._kink).tobytes() for n in self.nodes if n._kink is not None)


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor | Graph, params=None):
    """Populate ``.grad`` on every node reachable from a scalar loss.

    Args:
        loss: scalar output tensor, or a :class:`Graph` built from one.
        params: optional parameter tensors. Those not reachable from the
            loss get a zero gradient.

    Returns:
        The list of gradients for ``params`` (None if no params given).
    """
    graph = loss if isinstance(loss, Graph) else Graph(loss)
    out = graph.output
    if out.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {out.shape}")
    for node in graph.nodes:
        if node.requires_grad:
            node.grad = np.zeros_like(node.data)
    out.grad = np.ones_like(out.data)
    for node in reversed(graph.nodes):
        if node._grad_fn is None:
            continue
        for parent, g in zip(node.parents, node._grad_fn(node.grad)):
            if parent.requires_grad:
                parent.grad += g
    if params is None:
        return None
    grads = []
    for p in params:
        if p not in graph or p.grad is None:
            p.grad = np.zeros_like(p.data)
        grads.append(p.grad)
    return grads


# --- gradient check --------------------------------------------------------


@dataclass
class GradCheck:
    max_error: float
    checked: int
    skipped: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)
    worst: tuple[int, tuple[int, ...]] | None = None
    tolerance: float | None = None

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.max_error <= self.tolerance


def gradient_check(fn, params, step: float = 1e-6, tolerance: float | None = None) -> GradCheck:
    """Compare backprop gradients with central differences.

    ``fn`` takes no arguments and rebuilds the scalar loss from the current
    values of ``params``. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``. A coordinate is skipped
    when the +step and -step evaluations fall on different sides of a
    relu/sqrt/clamp kink.
    """
    if not 0 < step <= 1e-3:
        raise ContractError(f"step must be in (0, 1e-3], got {step}")
    params = list(params)
    analytic = [g.copy() for g in backward(fn(), params)]
    result = GradCheck(max_error=0.0, checked=0, tolerance=tolerance)
    for pi, p in enumerate(params):
        for coord in np.ndindex(p.shape):
            where = f"param {pi} ({p.name or 'unnamed'}) at {coord}"
            a = analytic[pi][coord]
            if not np.isfinite(a):
                raise NonFiniteError(f"non-finite analytic gradient for {where}")
            orig = p.data[coord]
            try:
                p.data[coord] = orig + step
                up = fn()
                p.data[coord] = orig - step
                down = fn()
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite loss while perturbing {where}") from exc
            finally:
                p.data[coord] = orig
            if Graph(up).kink_signature() != Graph(down).kink_signature():
                result.skipped.append((pi, coord))
                continue
            numeric = (up.item() - down.item()) / (2.0 * step)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"non-finite numeric gradient for {where}")
            err = abs(a - numeric) / max(1.0, abs(numeric))
            result.checked += 1
            if result.worst is None or err > result.max_error:
                result.max_error = err
                result.worst = (pi, coord)
    return result


# --- optimizer -------------------------------------------------------------


def sgd_step(params, grads, learning_rate: float, momentum: float = 0.0, velocity=None):
    """One in-place SGD update with heavy-ball momentum.

    ``v <- momentum * v + g``; ``w <- w - learning_rate * v``. Returns the
    velocity buffers, which the caller passes back in on the next call.
    """
    if learning_rate <= 0:
        raise ContractError(f"learning rate must be > 0, got {learning_rate}")
    if not 0 <= momentum < 1:
        raise ContractError(f"momentum must be in [0, 1), got {momentum}")
    params = list(params)
    grads = list(grads)
    if len(grads) != len(params):
        raise ContractError(f"{len(params)} params but {len(grads)} grads")
    if velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    for p, g, v in zip(params, grads, velocity):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"grad shape {g.shape} does not match param shape {p.shape}")
        v *= momentum
        v += g
        p.data -= learning_rate * v
    return velocity


class SGD:
    """Stateful wrapper around :func:`sgd_step`; keeps momentum buffers."""

    def __init__(self, params, learning_rate: float, momentum: float = 0.0):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = None
        # validate eagerly
        if learning_rate <= 0:
            raise ContractError(f"learning rate must be > 0, got {learning_rate}")
        if not 0 <= momentum < 1:
            raise ContractError(f"momentum must be in [0, 1), got {momentum}")

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        self.velocity = sgd_step(self.params, grads, self.learning_rate, self.momentum, self.velocity)
