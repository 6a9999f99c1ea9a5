"""Finite-difference verification of the backward rules.

``finite_difference_gradient`` compares the tape's analytic gradient with central differences.
The output of the operation under test is reduced to a scalar with a fixed random projection
``L = Σ out ⊙ R``, so every output element takes part and no extra differentiable reduction is
needed.

``op_cases`` registers one case per differentiable operation; ``run_gradcheck_suite`` runs a
registry of cases over several random configurations and reports the worst error per case.
"""

import collections.abc
import dataclasses

import numpy as np

from posecascade.autodiff import ops
from posecascade.autodiff.tensor import Tape, Tensor, backprop_from


OpUnderTest = collections.abc.Callable[[collections.abc.Sequence[Tensor]], Tensor]


def finite_difference_gradient(
    op: OpUnderTest,
    inputs: collections.abc.Sequence[Tensor],
    eps: float = 1e-3,
    max_elements: int | None = None,
    seed: int = 0,
) -> float:
    """Max over checked elements of |analytic − numeric| / max(1e-8, |analytic| + |numeric|).

    Only inputs with ``requires_grad`` are perturbed. Pass ``float64`` tensors: in ``float32`` the
    central differences are too noisy to be meaningful. ``max_elements`` samples that many
    elements per input (all of them when ``None``).
    """
    rng = np.random.default_rng(seed)
    for tensor in inputs:
        tensor.zero_grad()
    with Tape() as tape:
        out = op(inputs)
    projection = rng.standard_normal(out.shape).astype(out.dtype)
    backprop_from(tape, out, projection)

    def objective() -> float:
        return float(np.sum(op(inputs).data * projection))

    worst = 0.0
    for tensor in inputs:
        if not tensor.requires_grad:
            continue
        analytic = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = rng.choice(flat.size, size=max_elements, replace=False)
        for index in indices:
            original = flat[index]
            flat[index] = original + eps
            plus = objective()
            flat[index] = original - eps
            minus = objective()
            flat[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(analytic.reshape(-1)[index])
            error = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
            worst = max(worst, error)
    return worst


@dataclasses.dataclass
class GradcheckCase:
    name: str
    build: collections.abc.Callable[[np.random.Generator], tuple[OpUnderTest, list[Tensor]]]
    """Draws one random configuration: the operation and its (float64) inputs."""
    max_elements: int | None = None
    eps: float | None = None
    """Overrides the suite step, for deep networks where ReLU kinks sit close to the inputs."""


@dataclasses.dataclass
class GradcheckRow:
    op: str
    configs: int
    max_relative_error: float
    passed: bool


def _leaf(rng: np.random.Generator, *shape: int, away_from_zero: bool = False) -> Tensor:
    values = rng.standard_normal(shape)
    if away_from_zero:
        # Keeps ReLU inputs off the kink.
        values = np.where(np.abs(values) < 0.05, np.sign(values) * 0.05 + values, values)
    return Tensor(values, requires_grad=True, dtype=np.float64)


def _conv_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    c, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    size = int(rng.integers(4, 7))
    kernel = int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    inputs = [_leaf(rng, 2, c, size, size), _leaf(rng, k, c, kernel, kernel), _leaf(rng, k)]
    return (lambda t: ops.conv2d(t[0], t[1], t[2], stride=stride, pad=pad)), inputs


def _maxpool_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    # A permutation of well separated values: no ties, and eps cannot reorder a window.
    size = int(rng.integers(2, 4)) * 2
    values = rng.permutation(2 * size * size).reshape(1, 2, size, size) * 0.1
    inputs = [Tensor(values, requires_grad=True, dtype=np.float64)]
    return (lambda t: ops.maxpool2d(t[0], window=2, stride=2)), inputs


def _relu_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    return (lambda t: ops.relu(t[0])), [_leaf(rng, 3, 5, away_from_zero=True)]


def _linear_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    d, e = int(rng.integers(1, 9)), int(rng.integers(1, 5))
    inputs = [_leaf(rng, 4, d), _leaf(rng, d, e), _leaf(rng, e)]
    return (lambda t: ops.linear(t[0], t[1], t[2])), inputs


def _dropout_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    seed = int(rng.integers(0, 2**31))
    return (lambda t: ops.dropout(t[0], 0.5, training=True, seed=seed)), [_leaf(rng, 4, 6)]


def _concat_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    inputs = [_leaf(rng, 2, int(rng.integers(1, 4))) for _ in range(int(rng.integers(1, 4)))]
    return (lambda t: ops.concat(t, axis=1)), inputs


def _residual_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    return (lambda t: ops.residual_add(t[0], t[1])), [_leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 4)]


@dataclasses.dataclass(frozen=True)
class _Win:
    b_u: int
    b_v: int
    w: int
    h: int


def _crop_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    size = 6
    w, h = int(rng.integers(1, size + 1)), int(rng.integers(1, size + 1))
    first = _Win(int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1)), w, h)
    second = _Win(int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1)), w, h)

    def op(t: collections.abc.Sequence[Tensor]) -> Tensor:
        both = ops.region_crop(t[0], [first, second])
        return ops.residual_add(both, ops.region_crop(t[0], first))

    return op, [_leaf(rng, 2, 2, size, size)]


def _flatten_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    return (lambda t: ops.flatten(t[0])), [_leaf(rng, 2, 3, 2, 2)]


def _smooth_l1_case(rng: np.random.Generator) -> tuple[OpUnderTest, list[Tensor]]:
    beta = 0.5
    target = rng.standard_normal((3, 6))
    # Differences kept at least 0.05 away from |x| = beta.
    offsets = rng.uniform(0.0, 1.5, size=(3, 6))
    offsets = np.where(np.abs(offsets - beta) < 0.05, offsets + 0.1, offsets)
    offsets *= rng.choice([-1.0, 1.0], size=(3, 6))
    pred = Tensor(target + offsets, requires_grad=True, dtype=np.float64)
    target_tensor = Tensor(target, dtype=np.float64)
    return (lambda t: ops.smooth_l1_loss(t[0], t[1], beta=beta)), [pred, target_tensor]


def op_cases() -> dict[str, GradcheckCase]:
    cases = [
        GradcheckCase("conv2d", _conv_case),
        GradcheckCase("maxpool2d", _maxpool_case),
        GradcheckCase("relu", _relu_case),
        GradcheckCase("linear", _linear_case),
        GradcheckCase("dropout", _dropout_case),
        GradcheckCase("concat", _concat_case),
        GradcheckCase("residual_add", _residual_case),
        GradcheckCase("region_crop", _crop_case),
        GradcheckCase("flatten", _flatten_case),
        GradcheckCase("smooth_l1_loss", _smooth_l1_case),
    ]
    return {case.name: case for case in cases}


def run_gradcheck_suite(
    registry: collections.abc.Mapping[str, GradcheckCase],
    configs_per_op: int = 10,
    eps: float = 1e-3,
    tolerance: float = 1e-3,
    seed: int = 0,
) -> list[GradcheckRow]:
    rows: list[GradcheckRow] = []
    for position, (name, case) in enumerate(registry.items()):
        rng = np.random.default_rng([seed, position])
        worst = 0.0
        for config in range(configs_per_op):
            op, inputs = case.build(rng)
            error = finite_difference_gradient(
                op,
                inputs,
                eps=case.eps or eps,
                max_elements=case.max_elements,
                seed=config,
            )
            worst = max(worst, error)
        rows.append(GradcheckRow(name, configs_per_op, worst, worst < tolerance))
    return rows
