import contextvars
from typing import Callable, List, Optional, Sequence, Tuple

import attr
import numpy as np

from tied_mixer.errors import ContractError

_ACTIVE_TAPE: "contextvars.ContextVar[Optional[Tape]]" = contextvars.ContextVar(
    "tied_mixer_active_tape", default=None
)


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    Leaf tensors created with ``requires_grad=True`` get a zeroed gradient
    buffer right away. Tensors produced by recorded operations get theirs
    when ``backward`` runs.

    >>> t = Tensor([[1, 2], [3, 4]])
    >>> t.shape, t.requires_grad, t.grad is None
    ((2, 2), False, True)
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if requires_grad else None
        )
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Wrap a float64 array without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = False
        tensor.grad = None
        tensor.name = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        name = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{name})"


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor.wrap(np.asarray(value, dtype=np.float64))


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@attr.s(auto_attribs=True, eq=False)
class TapeNode:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


class Tape:
    """Ordered record of executed primitives. Use as a context manager to
    make it the active tape of the current thread/context.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._tokens: list = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self):
        return len(self.nodes)

    def append(self, node: TapeNode):
        self.nodes.append(node)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def record(op: str, inputs: Sequence[Tensor], output: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap ``output`` in a tensor and, if a tape is active and any input
    needs a gradient, add the producing node to the tape."""
    out = Tensor.wrap(output)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.append(TapeNode(op, tuple(inputs), out, vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Fill ``grad`` of every gradient-requiring tensor on ``tape`` with the
    derivative of the scalar ``loss``. Existing gradients of those tensors are
    reset first; contributions from several uses of one tensor are summed.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or not any(node.output is loss for node in tape.nodes):
        raise ContractError("loss was not produced by an operation on this tape")

    for node in tape.nodes:
        node.output.grad = np.zeros_like(node.output.data)
        for tensor in node.inputs:
            if tensor.requires_grad:
                tensor.grad = np.zeros_like(tensor.data)
    loss.grad = np.ones_like(loss.data)

    for node in reversed(tape.nodes):
        upstream = node.output.grad
        if upstream is None or not upstream.any():
            continue
        grads = node.vjp(upstream)
        for tensor, grad in zip(node.inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            tensor.grad += grad  # type: ignore[operator]


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting added or stretched so it
    matches ``shape``.

    >>> unbroadcast(np.ones((4, 3)), (3,)).tolist()
    [4.0, 4.0, 4.0]
    >>> unbroadcast(np.ones((2, 4, 3)), (4, 1)).tolist()
    [[6.0], [6.0], [6.0], [6.0]]
    """
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)
