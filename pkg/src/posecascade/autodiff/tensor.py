"""Dense tensors and the tape that records differentiable operations on them.

A ``Tensor`` wraps a numpy array (``float32`` for training, ``float64`` for gradient verification)
plus an optional gradient of the same shape. Operations in ``posecascade.autodiff.ops`` append a
``TapeRecord`` to the tape that is active in the current context (see ``Tape``); ``backprop`` then
replays the records in reverse order.

Outside of a ``with Tape():`` block nothing is recorded, which is how inference runs.
"""

import collections.abc
import contextvars
import dataclasses
import enum
import math
import typing

import numpy as np
import numpy.typing as npt

from posecascade.utils import CodedError


Array = npt.NDArray[np.floating[typing.Any]]


class AutodiffErrorCode(str, enum.Enum):
    shape_mismatch = "Tensor shapes are incompatible"
    invalid_argument = "Invalid operation argument"
    out_of_bounds = "Region window lies outside the feature map"
    non_scalar_loss = "Backpropagation must start from a scalar tensor"
    missing_gradient = "Parameter has no gradient"
    state_mismatch = "Optimizer state does not match the parameters"


class AutodiffError(CodedError):
    pass


class ShapeError(AutodiffError):
    def __init__(self, detail: str):
        super().__init__(AutodiffErrorCode.shape_mismatch, detail)


class Tensor:
    """Dense N-dimensional array with an optional gradient slot.

    Image-like data uses the N×C×H×W layout. ``requires_grad`` marks leaves (parameters, or inputs
    under verification) whose gradient must be kept; results of recorded operations inherit it.
    """

    def __init__(
        self,
        data: npt.ArrayLike,
        requires_grad: bool = False,
        dtype: npt.DTypeLike = np.float32,
    ):
        array = np.array(data, dtype=dtype)
        if any(extent < 1 for extent in array.shape):
            raise ShapeError(f"extents must be >= 1, got {array.shape}")
        self.data: Array = array
        self.grad: Array | None = None
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, array: Array, requires_grad: bool = False) -> "Tensor":
        # Keeps the dtype of ``array``; used by operations to build their outputs.
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.grad = None
        tensor.requires_grad = requires_grad
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def dtype(self) -> np.dtype[typing.Any]:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        return self.data

    def as_float64(self) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=np.float64)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: Array) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient {grad.shape} does not match tensor {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


BackwardRule = collections.abc.Callable[[Array], tuple[Array | None, ...]]


@dataclasses.dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule
    """Maps the gradient of ``output`` to one gradient (or ``None``) per input. The saved forward
    context lives in the closure."""


_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "posecascade_active_tape", default=None
)


class Tape:
    """Ordered record of operations, filled while the tape is active::

        with Tape() as tape:
            loss = smooth_l1_loss(model(x), y)
        backprop(tape, loss)

    Records are appended in execution order, so every record's inputs were produced by earlier
    records (or are leaves).
    """

    def __init__(self) -> None:
        self.records: list[TapeRecord] = []
        self._tokens: list[contextvars.Token["Tape | None"]] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc_info: object) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    return _active_tape.get()


def record(
    op: str, inputs: collections.abc.Sequence[Tensor], output: Array, backward: BackwardRule
) -> Tensor:
    """Wrap ``output`` in a Tensor and, when a tape is active and some input needs a gradient,
    append the operation to that tape."""
    tape = _active_tape.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(output, requires_grad=needs_grad)
    if tape is not None and needs_grad:
        tape.records.append(TapeRecord(op, tuple(inputs), result, backward))
    return result


def backprop_from(tape: Tape, node: Tensor, seed: Array) -> None:
    """Reverse-mode sweep over ``tape`` starting at ``node`` with upstream gradient ``seed``.

    Gradients accumulate additively on every tensor that needs one, so fan-out is summed.
    """
    node.accumulate_grad(np.asarray(seed, dtype=node.dtype))
    for rec in reversed(tape.records):
        upstream = rec.output.grad
        if upstream is None:
            continue
        grads = rec.backward(upstream)
        for tensor, grad in zip(rec.inputs, grads, strict=True):
            if grad is not None and tensor.requires_grad:
                tensor.accumulate_grad(grad)


def backprop(tape: Tape, loss: Tensor) -> None:
    if loss.size != 1:
        raise AutodiffError(AutodiffErrorCode.non_scalar_loss, f"got shape {loss.shape}")
    backprop_from(tape, loss, np.ones_like(loss.data))
