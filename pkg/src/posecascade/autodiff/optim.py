import collections.abc
import dataclasses

import numpy as np

from posecascade.autodiff.tensor import Array, AutodiffError, AutodiffErrorCode, Tensor


@dataclasses.dataclass
class OptimState:
    velocities: list[Array]
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0005

    @classmethod
    def for_params(
        cls,
        params: collections.abc.Sequence[Tensor],
        learning_rate: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0005,
    ) -> "OptimState":
        return cls(
            velocities=[np.zeros_like(p.data) for p in params],
            learning_rate=learning_rate,
            momentum=momentum,
            weight_decay=weight_decay,
        )


def sgd_momentum_step(params: collections.abc.Sequence[Tensor], state: OptimState) -> None:
    """v ← momentum·v + grad + weight_decay·param; param ← param − lr·v; then clear gradients.

    Parameters and velocities are updated in place.
    """
    if len(params) != len(state.velocities):
        raise AutodiffError(
            AutodiffErrorCode.state_mismatch,
            f"{len(params)} parameters, {len(state.velocities)} velocity buffers",
        )
    for index, (param, velocity) in enumerate(zip(params, state.velocities)):
        if param.grad is None:
            raise AutodiffError(AutodiffErrorCode.missing_gradient, f"parameter #{index}")
        if velocity.shape != param.data.shape:
            raise AutodiffError(
                AutodiffErrorCode.state_mismatch,
                f"parameter #{index}: {param.data.shape} vs velocity {velocity.shape}",
            )
    for param, velocity in zip(params, state.velocities):
        assert param.grad is not None
        velocity *= state.momentum
        velocity += param.grad
        if state.weight_decay:
            velocity += state.weight_decay * param.data
        param.data -= state.learning_rate * velocity
        param.grad = None
