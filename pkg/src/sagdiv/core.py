"""Domain types, the L-infinity ball projection and the pointwise losses.

Two losses are supported:

* ``quadratic``: ``l(y, y') = (y - y')**2 / 2``
* ``logistic_bce``: ``l(y, y') = bce(y, F(y'))`` with ``F(t) = sigmoid(t / beta)``,
  the natural loss for binary outcomes under a logistic link.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError

QUADRATIC = "quadratic"
LOGISTIC_BCE = "logistic_bce"
LOSS_KINDS = (QUADRATIC, LOGISTIC_BCE)


def _as_2d(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be a vector or a matrix, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class Dataset:
    """Matched samples of covariates ``x`` (n, d_x), instruments ``z`` (n, d_z)
    and outcomes ``y`` (n,)."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _as_2d(self.x, "x")
        z = _as_2d(self.z, "z")
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = x.shape[0]
        if n < 1:
            raise InvalidInputError("dataset must contain at least one row")
        if z.shape[0] != n or y.shape[0] != n:
            raise InvalidInputError(
                f"row counts differ: x={n}, z={z.shape[0]}, y={y.shape[0]}"
            )
        if x.shape[1] < 1 or z.shape[1] < 1:
            raise InvalidInputError("x and z need at least one column")
        for name, a in (("x", x), ("z", z), ("y", y)):
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{name} contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def take(self, index) -> "Dataset":
        return Dataset(self.x[index], self.z[index], self.y[index])


@dataclass(frozen=True)
class SearchSetSpec:
    """The ball ``{h : |h(x)| <= bound}``."""

    bound: float = 10.0

    def __post_init__(self):
        if not (math.isfinite(self.bound) and self.bound > 0):
            raise InvalidInputError(f"bound must be positive and finite, got {self.bound}")

    @property
    def diameter(self) -> float:
        return 2.0 * self.bound


def project_linf(values, bound: float) -> np.ndarray:
    """Project pointwise onto ``[-bound, bound]``.

    Equal to ``min(h+, A) - min(h-, A)`` with ``h+``/``h-`` the positive and
    negative parts, i.e. plain clipping.
    """
    if not bound > 0:
        raise InvalidInputError(f"bound must be positive, got {bound}")
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("cannot project non-finite values")
    return np.clip(values, -bound, bound)


@dataclass(frozen=True)
class LossSpec:
    """Pointwise loss with derivative in its second argument.

    ``lipschitz`` bounds the Lipschitz constant of the derivative jointly in
    both arguments and ``c0`` is ``|d2 l(0, 0)|``.
    """

    kind: str = QUADRATIC
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidInputError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.kind == LOGISTIC_BCE and not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidInputError(f"beta must be positive, got {self.beta}")

    @classmethod
    def quadratic(cls) -> "LossSpec":
        return cls(QUADRATIC)

    @classmethod
    def logistic_bce(cls, beta: float) -> "LossSpec":
        return cls(LOGISTIC_BCE, float(beta))

    @property
    def lipschitz(self) -> float:
        if self.kind == QUADRATIC:
            return 1.0
        return max(1.0 / self.beta, 1.0 / (4.0 * self.beta**2))

    @property
    def c0(self) -> float:
        if self.kind == QUADRATIC:
            return 0.0
        return 1.0 / (2.0 * self.beta)

    def link(self, t):
        """Map the second loss argument to the outcome scale."""
        if self.kind == QUADRATIC:
            return np.asarray(t, dtype=float)
        return expit(np.asarray(t, dtype=float) / self.beta)

    def _check_y(self, y):
        if self.kind == LOGISTIC_BCE and np.any((y < 0) | (y > 1)):
            raise InvalidInputError("logistic_bce requires y in [0, 1]")

    def value(self, y, y_pred):
        y = np.asarray(y, dtype=float)
        y_pred = np.asarray(y_pred, dtype=float)
        if self.kind == QUADRATIC:
            return 0.5 * (y - y_pred) ** 2
        self._check_y(y)
        t = y_pred / self.beta
        # -log sigmoid(t) = log(1 + e^{-t}), -log(1 - sigmoid(t)) = log(1 + e^{t})
        return y * np.logaddexp(0.0, -t) + (1.0 - y) * np.logaddexp(0.0, t)

    def deriv2(self, y, y_pred, extend: bool = False):
        """Derivative in the second argument.

        The cross-entropy is affine in ``y``, so with ``extend=True`` the same
        formula is applied to any real ``y`` instead of rejecting values
        outside [0, 1]; this is the gradient of the affine extension.
        """
        y = np.asarray(y, dtype=float)
        y_pred = np.asarray(y_pred, dtype=float)
        if self.kind == QUADRATIC:
            return y_pred - y
        if not extend:
            self._check_y(y)
        return (expit(y_pred / self.beta) - y) / self.beta

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(d["kind"], float(d.get("beta", 1.0)))


def loss_value(spec: LossSpec, y, y_pred):
    return spec.value(y, y_pred)


def loss_deriv2(spec: LossSpec, y, y_pred):
    return spec.deriv2(y, y_pred)


@dataclass(frozen=True)
class LearningRateSchedule:
    """Step sizes ``alpha_1..alpha_M``."""

    values: np.ndarray = field(repr=False)
    kind: str = "custom"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size == 0 or not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise InvalidInputError("learning rates must be positive and finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def inverse_sqrt(cls, n_iter: int) -> "LearningRateSchedule":
        if n_iter < 1:
            raise InvalidInputError("n_iter must be >= 1")
        return cls(np.full(n_iter, 1.0 / math.sqrt(n_iter)), kind="inverse_sqrt")

    @classmethod
    def custom(cls, values) -> "LearningRateSchedule":
        return cls(values, kind="custom")

    def __len__(self) -> int:
        return self.values.size
