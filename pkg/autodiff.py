# autodiff.py: reverse-mode differentiation over dense float64 arrays

from __future__ import annotations

import itertools
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ShapeError, TargetIndexError


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)

DTYPE = np.float64
_node_ids = itertools.count()

ArrayLike = Union[np.ndarray, Sequence, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


# ---------------------------
# Tensor
# ---------------------------

class Tensor:
    """
    Immutable float64 array plus the bookkeeping needed to differentiate through it.

    `grad` is only filled by `Tensor.backward()`; the functional entry point
    `gradients()` leaves every tensor untouched.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_inputs", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 _inputs: Tuple["Tensor", ...] = (), _op: str = "leaf",
                 _backward: Optional[BackwardFn] = None):
        array = np.array(data, dtype=DTYPE)
        array.setflags(write=False)
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.op = _op
        self._inputs = _inputs
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """Run the tape behind this tensor and store gradients on every node that requires one."""
        tape = Tape.record(self)
        grads = tape.backward(self, grad)
        for node in tape.nodes:
            if node.requires_grad and node.node_id in grads:
                node.grad = grads[node.node_id]

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return add(self, negate(_as_tensor(other)))
    def __rsub__(self, other): return add(other, negate(self))
    def __mul__(self, other): return multiply(self, other)
    def __rmul__(self, other): return multiply(other, self)
    def __neg__(self): return negate(self)
    def __matmul__(self, other): return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


class Tape:
    """Nodes behind one output in topological order (every input precedes its consumers)."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in visited:
                continue
            visited.add(node.node_id)
            stack.append((node, True))
            for parent in node._inputs:
                if parent.node_id not in visited:
                    stack.append((parent, False))
        return cls(order)

    @property
    def entries(self) -> List[Tuple[str, Tuple[int, ...], int]]:
        """(op, input node-ids, output node-id) for every recorded primitive."""
        return [
            (node.op, tuple(p.node_id for p in node._inputs), node.node_id)
            for node in self.nodes if node._inputs
        ]

    def backward(self, root: Tensor, grad: Optional[ArrayLike] = None) -> Dict[int, np.ndarray]:
        if grad is None:
            seed = np.ones_like(root.data)
        else:
            seed = np.array(grad, dtype=DTYPE)
            if seed.shape != root.data.shape:
                raise ShapeError(f"AUTODIFF: seed gradient shape {seed.shape} does not match output {root.shape}")

        grads: Dict[int, np.ndarray] = {root.node_id: seed}
        for node in reversed(self.nodes):
            upstream = grads.get(node.node_id)
            if upstream is None or node._backward is None:
                continue
            for parent, parent_grad in zip(node._inputs, node._backward(upstream)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + parent_grad
                else:
                    grads[parent.node_id] = parent_grad
        return grads


def gradients(loss: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
    """
    Gradient of a scalar loss with respect to each tensor in `wrt`.

    Tensors the loss does not depend on get a zero gradient. Nothing is stored
    on the tensors themselves, so parameter sets can be shared between tapes.
    """
    if loss.data.size != 1:
        raise ShapeError(f"AUTODIFF: gradients() needs a scalar loss, got shape {loss.shape}")
    grads = Tape.record(loss).backward(loss)
    return [np.array(grads.get(t.node_id, np.zeros_like(t.data))) for t in wrt]


# ---------------------------
# Helpers
# ---------------------------

def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, inputs: Tuple[Tensor, ...], op: str, backward: BackwardFn) -> Tensor:
    requires_grad = any(t.requires_grad for t in inputs)
    if not requires_grad:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _inputs=inputs, _op=op, _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeError(f"AUTODIFF: {op} cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------
# Primitives
# ---------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), "add", backward)


def negate(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "multiply")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), "mul", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"AUTODIFF: matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) never overflows; saturates to exactly 0.0 / 1.0 far from the origin
    exp_neg_abs = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + exp_neg_abs), exp_neg_abs / (1.0 + exp_neg_abs))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), "sigmoid", backward)


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = (x.data > 0).astype(DTYPE)
    return _make(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"AUTODIFF: logits must be 2-D (batch x classes), got {logits.shape}")
    batch, n_classes = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != batch:
        raise ShapeError(f"AUTODIFF: {targets.shape[0]} targets for a batch of {batch}")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise TargetIndexError(f"AUTODIFF: target index out of range [0, {n_classes}): {targets.tolist()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sum_exp = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sum_exp)
    rows = np.arange(batch)
    loss = -log_probs[rows, targets].mean()

    def backward(g):
        delta = exp / sum_exp
        delta[rows, targets] -= 1.0
        return (g * delta / batch,)

    return _make(np.array(loss), (logits,), "softmax_xent", backward)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    tensors = [_as_tensor(t) for t in tensors]
    leading = {t.shape[:-1] for t in tensors}
    if len(leading) != 1:
        raise ShapeError(f"AUTODIFF: concat needs matching leading dims, got {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), "concat", backward)


def mean(x: Tensor) -> Tensor:
    """Mean along the first axis."""
    if x.data.ndim == 0 or x.shape[0] == 0:
        raise ShapeError(f"AUTODIFF: mean over an empty first axis, shape {x.shape}")
    count = x.shape[0]

    def backward(g):
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(x.data.mean(axis=0), (x,), "mean", backward)


def reduce_sum(x: Tensor) -> Tensor:
    return _make(np.array(x.data.sum()), (x,), "sum", lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"AUTODIFF: cannot reshape {x.shape} to {shape}") from None
    return _make(out, (x,), "reshape", lambda g: (g.reshape(x.shape),))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.shape[-1]:
        raise ShapeError(f"AUTODIFF: slice [{start}:{stop}] outside last axis of {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _make(x.data[..., start:stop], (x,), "slice", backward)


def one_hot(index: Union[int, Sequence[int]], n: int) -> Tensor:
    indices = np.asarray(index, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise TargetIndexError(f"AUTODIFF: one_hot index out of range [0, {n}): {indices.tolist()}")
    return Tensor(np.eye(n, dtype=DTYPE)[indices])


# ---------------------------
# Optimizer
# ---------------------------

def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> List[Tensor]:
    """p <- p - lr * g, returned as fresh leaf tensors (inputs are never modified)."""
    if lr < 0:
        raise ValueError(f"AUTODIFF: learning rate must be non-negative, got {lr}")
    if len(params) != len(grads):
        raise ShapeError(f"AUTODIFF: {len(params)} parameters but {len(grads)} gradients")
    updated = []
    for param, grad in zip(params, grads):
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != param.data.shape:
            raise ShapeError(f"AUTODIFF: gradient shape {grad.shape} does not match parameter {param.shape}")
        updated.append(Tensor(param.data - lr * grad, requires_grad=param.requires_grad))
    return updated
