"""The differentiable operations the networks are built from.

Every function takes and returns ``Tensor`` objects, computes its forward pass with numpy and, when
a ``Tape`` is active, records a backward rule. Outputs keep the dtype of the first input.
"""

import collections.abc
import typing

import numpy as np

from posecascade.autodiff.tensor import (
    Array,
    AutodiffError,
    AutodiffErrorCode,
    ShapeError,
    Tensor,
    record,
)


class Window(typing.Protocol):
    """Anything shaped like ``posecascade.geometry.domain.RegionWindow``."""

    @property
    def b_u(self) -> int: ...
    @property
    def b_v(self) -> int: ...
    @property
    def w(self) -> int: ...
    @property
    def h(self) -> int: ...


def _require_rank(name: str, tensor: Tensor, rank: int) -> None:
    if len(tensor.shape) != rank:
        raise ShapeError(f"{name} must have rank {rank}, got shape {tensor.shape}")


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an N×C×H×W input with K×C×kh×kw weights plus a per-filter bias.

    The sum runs one kernel offset at a time (a ``tensordot`` per offset), so no im2col buffer of
    size C·kh·kw·H'·W' is ever materialized.
    """
    _require_rank("conv2d input", x, 4)
    _require_rank("conv2d weights", weights, 4)
    n, c, h, w = x.shape
    k, wc, kh, kw = weights.shape
    if wc != c:
        raise ShapeError(f"input has {c} channels but weights expect {wc} ({weights.shape})")
    if bias.shape != (k,):
        raise ShapeError(f"bias must have shape ({k},), got {bias.shape}")
    if stride < 1 or pad < 0:
        raise AutodiffError(AutodiffErrorCode.invalid_argument, f"stride={stride}, pad={pad}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {kh}×{kw} larger than padded input {h + 2 * pad}×{w + 2 * pad}")

    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data

    def window(i: int, j: int) -> tuple[slice, slice, slice, slice]:
        return (
            slice(None),
            slice(None),
            slice(i, i + stride * (h_out - 1) + 1, stride),
            slice(j, j + stride * (w_out - 1) + 1, stride),
        )

    # Accumulated as K×N×H'×W' and transposed once at the end.
    acc = np.zeros((k, n, h_out, w_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(weights.data[:, :, i, j], xp[window(i, j)], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3) + bias.data[None, :, None, None]

    def backward(grad: Array) -> tuple[Array, Array, Array]:
        grad_t = grad.transpose(1, 0, 2, 3)
        grad_xp = np.zeros_like(xp)
        grad_w = np.zeros_like(weights.data)
        for i in range(kh):
            for j in range(kw):
                sl = window(i, j)
                grad_w[:, :, i, j] = np.tensordot(grad_t, xp[sl], axes=([1, 2, 3], [0, 2, 3]))
                grad_xp[sl] += np.tensordot(
                    weights.data[:, :, i, j], grad_t, axes=([0], [0])
                ).transpose(1, 0, 2, 3)
        grad_x = grad_xp[:, :, pad : pad + h, pad : pad + w] if pad else grad_xp
        return grad_x, grad_w, grad.sum(axis=(0, 2, 3))

    return record("conv2d", (x, weights, bias), np.ascontiguousarray(out), backward)


def maxpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Max over ``window``×``window`` cells. Ties go to the first maximum in row-major order."""
    if window < 1 or stride < 1:
        raise AutodiffError(
            AutodiffErrorCode.invalid_argument, f"window={window}, stride={stride}"
        )
    _require_rank("maxpool2d input", x, 4)
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}×{w}")

    views = np.lib.stride_tricks.sliding_window_view(x.data, (window, window), axis=(2, 3))
    views = views[:, :, ::stride, ::stride]
    h_out, w_out = views.shape[2], views.shape[3]
    flat = views.reshape(n, c, h_out, w_out, window * window)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def backward(grad: Array) -> tuple[Array]:
        grad_x = np.zeros_like(x.data)
        for offset in range(window * window):
            di, dj = divmod(offset, window)
            routed = np.where(argmax == offset, grad, 0)
            grad_x[
                :,
                :,
                di : di + stride * (h_out - 1) + 1 : stride,
                dj : dj + stride * (w_out - 1) + 1 : stride,
            ] += routed
        return (grad_x,)

    return record("maxpool2d", (x,), np.ascontiguousarray(out), backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.dtype)

    def backward(grad: Array) -> tuple[Array]:
        return (grad * positive,)

    return record("relu", (x,), out, backward)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map of an N×D input with D×E weights and an E bias."""
    _require_rank("linear input", x, 2)
    _require_rank("linear weights", weights, 2)
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(f"input {x.shape} cannot multiply weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"bias must have shape ({weights.shape[1]},), got {bias.shape}")
    out = x.data @ weights.data + bias.data

    def backward(grad: Array) -> tuple[Array, Array, Array]:
        return grad @ weights.data.T, x.data.T @ grad, grad.sum(axis=0)

    return record("linear", (x, weights, bias), out, backward)


def dropout(x: Tensor, rate: float, training: bool, seed: int) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate), so inference is the identity.

    The mask only depends on ``seed`` (and the shape).
    """
    if not 0.0 <= rate < 1.0:
        raise AutodiffError(AutodiffErrorCode.invalid_argument, f"dropout rate {rate}")
    if not training or rate == 0.0:
        return x
    rng = np.random.default_rng(seed)
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    out = x.data * mask

    def backward(grad: Array) -> tuple[Array]:
        return (grad * mask,)

    return record("dropout", (x,), out, backward)


def concat(inputs: collections.abc.Sequence[Tensor], axis: int = 1) -> Tensor:
    if not inputs:
        raise AutodiffError(AutodiffErrorCode.invalid_argument, "nothing to concatenate")
    first = inputs[0].shape
    axis = axis % len(first)
    for tensor in inputs[1:]:
        other = tensor.shape
        if len(other) != len(first) or any(
            a != b for d, (a, b) in enumerate(zip(first, other)) if d != axis
        ):
            raise ShapeError(f"cannot concatenate {first} with {other} along axis {axis}")
    if len(inputs) == 1:
        return inputs[0]
    out = np.concatenate([t.data for t in inputs], axis=axis)
    boundaries = np.cumsum([t.shape[axis] for t in inputs])[:-1]

    def backward(grad: Array) -> tuple[Array, ...]:
        return tuple(np.split(grad, boundaries, axis=axis))

    return record("concat", tuple(inputs), out, backward)


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual branches differ: {a.shape} vs {b.shape}")

    def backward(grad: Array) -> tuple[Array, Array]:
        return grad, grad

    return record("residual_add", (a, b), a.data + b.data, backward)


def flatten(x: Tensor) -> Tensor:
    """N×... → N×D."""
    shape = x.shape

    def backward(grad: Array) -> tuple[Array]:
        return (grad.reshape(shape),)

    return record("flatten", (x,), x.data.reshape(shape[0], -1), backward)


def region_crop(features: Tensor, windows: Window | collections.abc.Sequence[Window]) -> Tensor:
    """Crop ``features[n, :, b_v:b_v+h, b_u:b_u+w]``.

    ``windows`` is either one window shared by the whole batch or one window per batch item; in
    the second case all windows must have the same extents.
    """
    _require_rank("region_crop input", features, 4)
    n, _, h_f, w_f = features.shape
    per_item = isinstance(windows, collections.abc.Sequence)
    items: list[Window] = list(windows) if per_item else [windows]  # type: ignore[list-item]
    if per_item and len(items) != n:
        raise ShapeError(f"{len(items)} windows for a batch of {n}")
    w, h = items[0].w, items[0].h
    for win in items:
        if (win.w, win.h) != (w, h):
            raise ShapeError(f"window extents differ: {(w, h)} vs {(win.w, win.h)}")
        if win.b_u < 0 or win.b_v < 0 or win.b_u + w > w_f or win.b_v + h > h_f:
            raise AutodiffError(
                AutodiffErrorCode.out_of_bounds,
                f"({win.b_u}, {win.b_v}, {w}, {h}) on a {h_f}×{w_f} map",
            )

    if per_item:
        out = np.stack(
            [
                features.data[i, :, win.b_v : win.b_v + h, win.b_u : win.b_u + w]
                for i, win in enumerate(items)
            ]
        )
    else:
        win = items[0]
        out = features.data[:, :, win.b_v : win.b_v + h, win.b_u : win.b_u + w].copy()

    def backward(grad: Array) -> tuple[Array]:
        grad_f = np.zeros_like(features.data)
        if per_item:
            for i, win in enumerate(items):
                grad_f[i, :, win.b_v : win.b_v + h, win.b_u : win.b_u + w] += grad[i]
        else:
            win = items[0]
            grad_f[:, :, win.b_v : win.b_v + h, win.b_u : win.b_u + w] += grad
        return (grad_f,)

    return record("region_crop", (features,), out, backward)


def smooth_l1_loss(pred: Tensor, target: Tensor, beta: float = 0.01) -> Tensor:
    """Mean over all elements of 0.5·x²/beta (|x| < beta) or |x| − 0.5·beta, x = pred − target."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    if beta <= 0:
        raise AutodiffError(AutodiffErrorCode.invalid_argument, f"beta={beta}")
    diff = pred.data - target.data
    abs_diff = np.abs(diff)
    per_element = np.where(abs_diff < beta, 0.5 * diff * diff / beta, abs_diff - 0.5 * beta)
    count = diff.size
    out = np.asarray(per_element.mean(), dtype=pred.dtype)

    def backward(grad: Array) -> tuple[Array, Array]:
        d_pred = grad * np.clip(diff / beta, -1.0, 1.0) / count
        return d_pred.astype(pred.dtype), (-d_pred).astype(target.dtype)

    return record("smooth_l1_loss", (pred, target), out, backward)
