"""Reference estimators: two-stage least squares, kernel IV and a confounded kernel ridge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import Dataset
from .errors import DegenerateDataError, InvalidInputError, NumericalError
from .estimators import CMEOperatorModel, fit_cme_operator
from .kernel import (
    DEFAULT_REG_GRID,
    JITTER,
    RidgeModel,
    StandardizedKernel,
    fit_ridge,
    kfold_indices,
    refine_reg_search,
    select_ridge_lambda,
)


def _with_intercept(a: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(a.shape[0]), a])


def _ols(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise DegenerateDataError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef


@dataclass(frozen=True)
class TSLSModel:
    first_stage: np.ndarray  # (1 + d_z, d_x)
    coef: np.ndarray  # (1 + d_x,), intercept first

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return _with_intercept(x) @ self.coef

    __call__ = predict

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def slope(self) -> np.ndarray:
        return self.coef[1:]

    def to_dict(self) -> dict:
        return {"first_stage": self.first_stage.tolist(), "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TSLSModel":
        return cls(np.asarray(d["first_stage"], dtype=float), np.asarray(d["coef"], dtype=float))


def fit_2sls(data: Dataset) -> TSLSModel:
    n, dx = data.x.shape
    dz = data.z.shape[1]
    if n <= dz + 1 or n <= dx + 1:
        raise InvalidInputError("too few samples for two-stage least squares")
    z1 = _with_intercept(data.z)
    first = _ols(z1, data.x)
    x_hat = z1 @ first
    coef = _ols(_with_intercept(x_hat), data.y)
    return TSLSModel(first, coef)


@dataclass
class KIVModel:
    """Kernel IV: stage 1 embeds X given Z on the first half, stage 2 fits
    ``h(x) = sum_i alpha_i k_X(x_i, x)`` on the second half."""

    stage1: CMEOperatorModel
    x_kernel: StandardizedKernel
    alpha: np.ndarray
    xi: float

    def predict(self, x) -> np.ndarray:
        return self.x_kernel(x, self.stage1.x_train) @ self.alpha

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "stage1": self.stage1.to_dict(),
            "x_kernel": self.x_kernel.to_dict(),
            "alpha": self.alpha.tolist(),
            "xi": self.xi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KIVModel":
        return cls(
            CMEOperatorModel.from_dict(d["stage1"]),
            StandardizedKernel.from_dict(d["x_kernel"]),
            np.asarray(d["alpha"], dtype=float),
            float(d["xi"]),
        )


def _kiv_alpha(w, k_xx, y2, xi):
    m = y2.size
    a = w @ w.T + m * xi * k_xx
    # k_xx is numerically singular, so the jitter has to follow the scale of a
    jitter = JITTER * max(1.0, float(np.mean(np.diag(a))))
    try:
        factor = linalg.cho_factor(a + jitter * np.eye(a.shape[0]), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"KIV stage-2 factorization failed: {exc}") from exc
    return linalg.cho_solve(factor, w @ y2)


def _stage2_objective(rule, first, w, k_xx, y2, stage1, n_folds, seed):
    if rule == "embedded":
        g1 = stage1.weights(first.z).T @ k_xx

        def objective(reg):
            try:
                alpha = _kiv_alpha(w, k_xx, y2, reg)
            except NumericalError:
                return float("nan")
            return float(np.mean((first.y - g1 @ alpha) ** 2))

    elif rule == "direct":

        def objective(reg):
            try:
                alpha = _kiv_alpha(w, k_xx, y2, reg)
            except NumericalError:
                return float("nan")
            return float(np.mean((first.y - k_xx @ alpha) ** 2))

    elif rule == "kfold":
        folds = kfold_indices(y2.size, n_folds, seed)

        def objective(reg):
            total = 0.0
            for i, test in enumerate(folds):
                train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
                try:
                    alpha = _kiv_alpha(w[:, train], k_xx, y2[train], reg)
                except NumericalError:
                    return float("nan")
                total += float(np.mean((y2[test] - w[:, test].T @ alpha) ** 2))
            return total / len(folds)

    else:
        raise InvalidInputError(f"unknown xi rule {rule!r}")
    return objective


def fit_kiv(
    data: Dataset, lam: float | None = None, xi: float | None = None, seed: int = 0, n_folds: int = 5,
    xi_rule: str = "direct",
) -> KIVModel:
    """Two-stage kernel IV with a 50/50 split.

    When ``xi`` is None it is the refined minimizer of a validation error
    picked by ``xi_rule``:

    ``"direct"``
        first-half outcomes against the fitted function at the first-half
        covariates (the default);
    ``"embedded"``
        first-half outcomes against the fitted function pushed through the
        in-sample stage-1 embedding;
    ``"kfold"``
        K-fold error of predicting second-half outcomes from their stage-1
        embeddings.
    """
    if data.n < 20:
        raise InvalidInputError("KIV needs at least 20 samples")
    half = data.n // 2
    first, second = data.take(slice(0, half)), data.take(slice(half, None))
    stage1 = fit_cme_operator(first, lam=lam, seed=seed)
    x_kernel = StandardizedKernel.fit(first.x, seed=seed)
    k_xx = x_kernel(first.x, first.x)
    w = k_xx @ stage1.weights(second.z)  # (n1, m)
    y2 = second.y

    if xi is None:
        objective = _stage2_objective(xi_rule, first, w, k_xx, y2, stage1, n_folds, seed)
        xi = refine_reg_search(objective, DEFAULT_REG_GRID)
    elif not xi > 0:
        raise InvalidInputError("xi must be positive")
    return KIVModel(stage1, x_kernel, _kiv_alpha(w, k_xx, y2, xi), float(xi))


def fit_naive_krr(data: Dataset, lam: float | None = None, seed: int = 0) -> RidgeModel:
    """Kernel ridge of Y on X ignoring the instrument (biased under confounding)."""
    if data.n < 10:
        raise InvalidInputError("need at least 10 samples")
    kernel = StandardizedKernel.fit(data.x, seed=seed)
    k = kernel(data.x, data.x)
    if lam is None:
        lam = select_ridge_lambda(k, data.y, seed=seed)
    return fit_ridge(k, data.y, lam, inputs=data.x, kernel=kernel)
