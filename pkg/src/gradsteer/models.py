"""Hypothesis functions, quadratic losses, the training objective and the
validation functional, with analytic gradients and finite-difference
Hessian-vector products.

Built-in model kinds:

* ``michaelis_menten``: h(w) = theta0 * w / (theta1 + w), 2 parameters,
  scalar input. Guarded against the pole at theta1 = -w.
* ``linear``: h(x) = <theta, x>. Constant Hessian, used as an exact
  fixture in adjoint tests and for linear-quadratic oracle problems.
* ``exponential``: h(x) = theta0 * exp(theta1 * x), a smooth nonlinear
  2-parameter fixture.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .core import Array, Dataset

SINGULARITY_GUARD = 1e-9
HVP_BASE_STEP = 1e-5


class SingularityError(ArithmeticError):
    """Model evaluation hit a (near-)singular denominator."""

    def __init__(self, theta, x):
        self.theta = np.asarray(theta, dtype=float)
        self.x = x
        super().__init__(
            f"singular model denominator at theta={self.theta.tolist()}, input={x}")


class ModelKind(Enum):
    MICHAELIS_MENTEN = "michaelis_menten"
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


class LossScale(Enum):
    HALF = "half"  # 0.5 * (yhat - y)^2
    ONE = "one"    # (yhat - y)^2

    @property
    def factor(self) -> float:
        return 0.5 if self is LossScale.HALF else 1.0


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    param_dim: int = 2

    def __post_init__(self):
        if self.kind in (ModelKind.MICHAELIS_MENTEN, ModelKind.EXPONENTIAL):
            if self.param_dim != 2:
                raise ValueError(f"{self.kind.value} model has exactly 2 parameters")
        if self.param_dim < 1:
            raise ValueError("param_dim must be positive")


@dataclass(frozen=True)
class Objective:
    """Mean loss of a model over a dataset."""

    model: ModelSpec
    dataset: Dataset
    loss_scale: LossScale = LossScale.HALF

    def __post_init__(self):
        if self.model.kind is ModelKind.LINEAR:
            if self.dataset.inputs.shape[1] != self.model.param_dim:
                raise ValueError("linear model needs input dimension == param_dim")
        elif self.dataset.inputs.shape[1] != 1:
            raise ValueError(f"{self.model.kind.value} model takes scalar inputs")


def loss(yhat: float, y: float, scale: LossScale = LossScale.HALF) -> float:
    r = float(yhat) - float(y)
    return scale.factor * r * r


def _mm_check(theta: Array, w: Array):
    d = theta[1] + w
    if np.abs(d).min() <= SINGULARITY_GUARD:
        bad = w[np.abs(d).argmin()]
        raise SingularityError(theta, float(bad))
    return d


def _predict_batch(model: ModelSpec, theta: Array, inputs: Array) -> Array:
    if model.kind is ModelKind.MICHAELIS_MENTEN:
        w = inputs[:, 0]
        d = _mm_check(theta, w)
        return theta[0] * w / d
    if model.kind is ModelKind.LINEAR:
        return inputs @ theta
    w = inputs[:, 0]
    return theta[0] * np.exp(theta[1] * w)


def predict(model: ModelSpec, theta, x) -> float:
    """Model prediction for one input sample."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    x_arr = np.atleast_2d(np.asarray(x, dtype=float))
    return float(_predict_batch(model, theta, x_arr)[0])


def value_function(obj: Objective) -> Callable[[Array], float]:
    """Bind the dataset once; returns theta -> J(theta)."""
    model, scale = obj.model, obj.loss_scale.factor
    inputs, outputs = obj.dataset.inputs, obj.dataset.outputs
    m = float(len(outputs))

    def value(theta: Array) -> float:
        r = _predict_batch(model, theta, inputs) - outputs
        return scale * (r @ r) / m

    return value


def gradient_function(obj: Objective) -> Callable[[Array], Array]:
    """Bind the dataset once; returns theta -> grad J(theta).

    The bound closure is the hot path of every integration sweep, so the
    per-model formulas below stay lean (few temporaries, dot products).
    """
    scale = 2.0 * obj.loss_scale.factor
    outputs = obj.dataset.outputs
    m = float(len(outputs))

    if obj.model.kind is ModelKind.MICHAELIS_MENTEN:
        w = obj.dataset.inputs[:, 0]

        def grad(theta: Array) -> Array:
            d = theta[1] + w
            if np.abs(d).min() <= SINGULARITY_GUARD:
                raise SingularityError(theta, float(w[np.abs(d).argmin()]))
            q = w / d
            r = theta[0] * q - outputs
            return (scale / m) * np.array([r @ q, -theta[0] * (r @ (q / d))])

        return grad

    if obj.model.kind is ModelKind.LINEAR:
        x = obj.dataset.inputs

        def grad(theta: Array) -> Array:
            r = x @ theta - outputs
            return (scale / m) * (r @ x)

        return grad

    w = obj.dataset.inputs[:, 0]

    def grad(theta: Array) -> Array:
        e = np.exp(theta[1] * w)
        r = theta[0] * e - outputs
        return (scale / m) * np.array([r @ e, theta[0] * (r @ (w * e))])

    return grad


def objective_value(obj: Objective, theta) -> float:
    return value_function(obj)(np.asarray(theta, dtype=float))


def objective_gradient(obj: Objective, theta) -> Array:
    return gradient_function(obj)(np.asarray(theta, dtype=float))


def hvp_function(obj: Objective) -> Callable[[Array, Array], Array]:
    """theta, v -> (Hessian J)(theta) @ v by central differences of the
    analytic gradient; exact for the linear model."""
    grad = gradient_function(obj)

    def hvp(theta: Array, v: Array) -> Array:
        nv = float(np.sqrt(v @ v))
        if nv == 0.0:
            return np.zeros_like(theta)
        h = HVP_BASE_STEP / (1.0 + nv)
        return (grad(theta + h * v) - grad(theta - h * v)) / (2.0 * h)

    return hvp


def objective_hvp(obj: Objective, theta, v) -> Array:
    return hvp_function(obj)(np.asarray(theta, dtype=float),
                             np.asarray(v, dtype=float))


def validation_phi(model: ModelSpec, theta, validation: Dataset,
                   scale: LossScale = LossScale.HALF) -> float:
    """Mean loss over a validation dataset (the model quality measure)."""
    return objective_value(Objective(model, validation, scale), theta)


def validation_phi_grad(model: ModelSpec, theta, validation: Dataset,
                        scale: LossScale = LossScale.HALF) -> Array:
    return objective_gradient(Objective(model, validation, scale), theta)
