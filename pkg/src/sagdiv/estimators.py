"""Preliminary estimators consumed by the stochastic gradient loop.

* :class:`DensityRatioModel` -- joint over product-of-marginals density ratio of
  (X, Z), fitted by unconstrained least-squares importance fitting (uLSIF).
* :class:`ConditionalMeanModel` -- kernel ridge regression of Y on Z.
* :class:`CMEOperatorModel` -- conditional expectation operator
  ``h -> E[h(X) | Z = z]`` via kernel mean embeddings (first stage of KIV).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .core import Dataset
from .errors import InvalidInputError, NumericalError
from .kernel import (
    DEFAULT_REG_GRID,
    JITTER,
    RidgeModel,
    RidgeCVObjective,
    StandardizedKernel,
    fit_ridge,
    kfold_indices,
    refine_reg_search,
)

DEFAULT_N_BASIS = 200
DEFAULT_CAP = 25.0
RIDGE_LENGTHSCALE_SCALES = (0.5, 1.0, 2.0, 4.0)
ULSIF_REG_GRID = (10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-5)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random permutation without fixed points (a single random cycle)."""
    if n < 2:
        return np.arange(n)
    order = rng.permutation(n)
    perm = np.empty(n, dtype=int)
    perm[order] = np.roll(order, -1)
    return perm


@dataclass(frozen=True)
class DensityRatioModel:
    """``Phi(x, z) = sum_j w_j k_x(x, cx_j) k_z(z, cz_j)`` clipped to ``[0, cap]``."""

    x_kernel: StandardizedKernel
    z_kernel: StandardizedKernel
    centers_x: np.ndarray
    centers_z: np.ndarray
    weights: np.ndarray
    cap: float = DEFAULT_CAP
    lam: float = float("nan")

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise InvalidInputError("density ratio weights must be nonnegative")
        if not (np.isfinite(self.cap) and self.cap > 0):
            raise InvalidInputError("cap must be positive and finite")

    def __call__(self, x, z) -> np.ndarray:
        """Evaluate at paired rows ``(x_i, z_i)``."""
        x = self.x_kernel.transform(x)
        z = self.z_kernel.transform(z)
        if x.shape[0] != z.shape[0]:
            raise InvalidInputError("x and z must have the same number of rows")
        basis = self._kx(x) * self._kz(z)
        return np.clip(basis @ self.weights, 0.0, self.cap)

    def cross(self, x, z) -> np.ndarray:
        """Matrix ``Phi(x_i, z_m)`` over all pairs of rows, shape (len(x), len(z))."""
        return np.clip(self.left_factor(x) @ self.right_factor(z).T, 0.0, self.cap)

    def left_factor(self, x) -> np.ndarray:
        return self._kx(self.x_kernel.transform(x)) * self.weights

    def right_factor(self, z) -> np.ndarray:
        return self._kz(self.z_kernel.transform(z))

    def _kx(self, xs):
        return _gauss(xs, self.x_kernel.transform(self.centers_x), self.x_kernel.spec.lengthscale)

    def _kz(self, zs):
        return _gauss(zs, self.z_kernel.transform(self.centers_z), self.z_kernel.spec.lengthscale)

    def to_dict(self) -> dict:
        return {
            "x_kernel": self.x_kernel.to_dict(),
            "z_kernel": self.z_kernel.to_dict(),
            "centers_x": self.centers_x.tolist(),
            "centers_z": self.centers_z.tolist(),
            "weights": self.weights.tolist(),
            "cap": self.cap,
            "lam": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DensityRatioModel":
        return cls(
            StandardizedKernel.from_dict(d["x_kernel"]),
            StandardizedKernel.from_dict(d["z_kernel"]),
            np.asarray(d["centers_x"], dtype=float),
            np.asarray(d["centers_z"], dtype=float),
            np.asarray(d["weights"], dtype=float),
            float(d["cap"]),
            float(d["lam"]),
        )


def _gauss(a, b, lengthscale):
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * lengthscale**2))


def eval_density_ratio(model: DensityRatioModel, x, z) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise InvalidInputError("non-finite query point")
    return float(model(x, z)[0])


def _ulsif_solve(h_mat, h_vec, lam):
    b = h_vec.size
    try:
        factor = linalg.cho_factor(h_mat + (lam + JITTER) * np.eye(b), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"uLSIF system is singular: {exc}") from exc
    return np.maximum(linalg.cho_solve(factor, h_vec), 0.0)


def fit_density_ratio(
    data: Dataset,
    lam: float | None = None,
    n_basis: int | None = None,
    cap: float = DEFAULT_CAP,
    seed: int = 0,
    n_folds: int = 5,
    bandwidth_scale: tuple[float, float] = (1.0, 1.0),
    product_pairs: str = "derangement",
    lam_grid=ULSIF_REG_GRID,
) -> DensityRatioModel:
    """Fit the density ratio of (X, Z) against the product of its marginals.

    Numerator samples are the observed pairs.  With
    ``product_pairs="derangement"`` the denominator pairs each ``x_i`` with
    ``z_pi(i)`` for a fixed-seed derangement ``pi``; ``"all"`` uses every
    ``(x_i, z_j)`` combination, which factorizes into a Hadamard product of
    the two blocks' second moments.  The weights solve ``(H + lam I) w = h``
    and are clipped at zero afterwards.  When ``lam`` is None it is chosen by
    iterative refinement of the held-out uLSIF criterion ``w'Hw / 2 - h'w``
    over ``n_folds`` folds.

    ``n_basis`` centers (None means ``min(n, 200)``) are drawn from
    the observed pairs.  Lengthscales are the median heuristic of each block
    times ``bandwidth_scale``.  The defaults target the squared error of the
    ratio itself; :func:`sagdiv.sagd.fit_kernel_sagdiv` overrides them with a
    sharper setting that suits the gradient loop better.
    """
    n = data.n
    if n_basis is None:
        n_basis = min(n, DEFAULT_N_BASIS)
    if n_basis < 1 or n < n_basis:
        raise InvalidInputError(f"need 1 <= n_basis <= n, got n_basis={n_basis}, n={n}")
    if lam is not None and not lam > 0:
        raise InvalidInputError("lam must be positive")
    if not cap > 0:
        raise InvalidInputError("cap must be positive")
    if len(bandwidth_scale) != 2 or not all(f > 0 for f in bandwidth_scale):
        raise InvalidInputError(f"bandwidth_scale must be two positive factors, got {bandwidth_scale}")
    if product_pairs not in ("derangement", "all"):
        raise InvalidInputError(f"unknown product_pairs {product_pairs!r}")
    rng = np.random.default_rng(seed)
    centers = np.sort(rng.choice(n, n_basis, replace=False))
    perm = derangement(n, rng)

    x_kernel = StandardizedKernel.fit(data.x, seed=seed).rescaled(bandwidth_scale[0])
    z_kernel = StandardizedKernel.fit(data.z, seed=seed).rescaled(bandwidth_scale[1])
    kx = x_kernel(data.x, data.x[centers])
    kz = z_kernel(data.z, data.z[centers])
    phi_num = kx * kz

    def moments(idx):
        if product_pairs == "all":
            h_mat = (kx[idx].T @ kx[idx] / idx.size) * (kz[idx].T @ kz[idx] / idx.size)
        else:
            phi_den = kx[idx] * kz[perm[idx]]
            h_mat = phi_den.T @ phi_den / idx.size
        return h_mat, phi_num[idx].mean(axis=0)

    if lam is None:
        folds = kfold_indices(n, n_folds, seed)
        parts = []
        for i, test in enumerate(folds):
            train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
            parts.append((moments(train), moments(test)))

        def objective(reg):
            total = 0.0
            for (h_tr, v_tr), (h_te, v_te) in parts:
                w = _ulsif_solve(h_tr, v_tr, reg)
                total += 0.5 * w @ h_te @ w - v_te @ w
            return total / len(parts)

        lam = refine_reg_search(objective, lam_grid)

    weights = _ulsif_solve(*moments(np.arange(n)), lam)
    return DensityRatioModel(
        x_kernel, z_kernel, data.x[centers].copy(), data.z[centers].copy(), weights, float(cap), float(lam)
    )


@dataclass(frozen=True)
class ConditionalMeanModel:
    """Estimate of ``r(z) = E[Y | Z = z]``.

    With ``raw_y`` set there is no fitted regressor: the gradient loop uses
    the observed ``y_m`` paired with each instrument draw instead.
    """

    ridge: RidgeModel | None = None
    raw_y: bool = False

    def __post_init__(self):
        if (self.ridge is None) != self.raw_y:
            raise InvalidInputError("exactly one of ridge / raw_y must be set")

    def predict(self, z) -> np.ndarray:
        if self.raw_y:
            raise InvalidInputError("a raw-Y model has no predictions; pass observed y to the loop")
        return self.ridge.predict(z)

    __call__ = predict

    def to_dict(self) -> dict:
        return {"raw_y": self.raw_y, "ridge": None if self.ridge is None else self.ridge.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalMeanModel":
        ridge = None if d["ridge"] is None else RidgeModel.from_dict(d["ridge"])
        return cls(ridge, bool(d["raw_y"]))


def fit_conditional_mean(
    data: Dataset,
    raw_y: bool = False,
    lam: float | None = None,
    seed: int = 0,
    n_folds: int = 5,
    lengthscale_scales=RIDGE_LENGTHSCALE_SCALES,
) -> ConditionalMeanModel:
    """Kernel ridge regression of Y on Z.

    The Gaussian lengthscale is the median heuristic times one of
    ``lengthscale_scales`` and is cross-validated together with ``lam``
    (a fixed ``lam`` is used as given).  On a near-linear regression the
    median heuristic alone is too short: the ridge then shrinks towards zero
    away from the data and the held-out error roughly doubles.
    """
    if raw_y:
        return ConditionalMeanModel(None, raw_y=True)
    if data.n < 10:
        raise InvalidInputError("cross-validation needs at least 10 samples")
    if len(lengthscale_scales) == 0 or not all(f > 0 for f in lengthscale_scales):
        raise InvalidInputError("lengthscale_scales must be a non-empty list of positive factors")
    base = StandardizedKernel.fit(data.z, seed=seed)
    folds = kfold_indices(data.n, n_folds, seed)
    best = None
    for factor in lengthscale_scales:
        kernel = base.rescaled(factor)
        k = kernel(data.z, data.z)
        objective = RidgeCVObjective(k, data.y, folds)
        reg = lam if lam is not None else refine_reg_search(objective, DEFAULT_REG_GRID)
        score = objective(reg)
        if best is None or score < best[0]:
            best = (score, kernel, k, reg)
    _, kernel, k, reg = best
    return ConditionalMeanModel(fit_ridge(k, data.y, reg, inputs=data.z, kernel=kernel))


@dataclass
class CMEOperatorModel:
    """``E[h(X) | Z = z] ~ sum_i gamma_i(z) h(x_i)`` with
    ``gamma(z) = (K_ZZ + n lam I)^{-1} k_Z(z)``."""

    x_train: np.ndarray
    z_train: np.ndarray
    z_kernel: StandardizedKernel
    lam: float

    def __post_init__(self):
        n = self.z_train.shape[0]
        k = self.z_kernel(self.z_train, self.z_train)
        try:
            self._factor = linalg.cho_factor(k + (n * self.lam + JITTER) * np.eye(n), lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"CME factorization failed: {exc}") from exc

    @property
    def n(self) -> int:
        return self.x_train.shape[0]

    def weights(self, z) -> np.ndarray:
        """Weight matrix (n, q) whose column j is ``gamma(z_j)``."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(1, -1)
        return linalg.cho_solve(self._factor, self.z_kernel(self.z_train, z))

    def apply(self, values, z) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n:
            raise InvalidInputError(f"expected {self.n} values, got {values.shape[0]}")
        return self.weights(z).T @ values

    def to_dict(self) -> dict:
        return {
            "x_train": self.x_train.tolist(),
            "z_train": self.z_train.tolist(),
            "z_kernel": self.z_kernel.to_dict(),
            "lam": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CMEOperatorModel":
        return cls(
            np.asarray(d["x_train"], dtype=float),
            np.asarray(d["z_train"], dtype=float),
            StandardizedKernel.from_dict(d["z_kernel"]),
            float(d["lam"]),
        )


def apply_cme(model: CMEOperatorModel, values, z) -> float:
    z = np.asarray(z, dtype=float).reshape(1, -1)
    return float(model.apply(values, z)[0])


class _Stage1Objective:
    """Held-out KIV stage-1 loss as a function of ``lam``.

    Fits the embedding on (x1, z1) and measures on (x2, z2)
    ``mean_j |phi(x2_j) - sum_i gamma_i(z2_j) phi(x1_i)|^2`` in the x-RKHS,
    dropping the constant ``k(x, x) = 1`` term.
    """

    def __init__(self, x1, z1, x2, z2, x_kernel, z_kernel):
        self.n1 = x1.shape[0]
        self.m = x2.shape[0]
        evals, evecs = np.linalg.eigh(z_kernel(z1, z1))
        self.evals = np.maximum(evals, 0.0)
        q = evecs.T @ z_kernel(z1, z2)
        p = evecs.T @ x_kernel(x1, x2)
        self.pq = np.sum(p * q, axis=1)
        self.a = evecs.T @ x_kernel(x1, x1) @ evecs
        self.qq = q @ q.T

    def __call__(self, lam: float) -> float:
        d = 1.0 / (self.evals + self.n1 * lam + JITTER)
        cross = np.sum(d * self.pq)
        quad = np.sum((d[:, None] * self.a * d[None, :]) * self.qq)
        return float((-2.0 * cross + quad) / self.m)


def fit_cme_operator(
    data: Dataset, lam: float | None = None, seed: int = 0, val_fraction: float = 0.5
) -> CMEOperatorModel:
    """Kernel mean embedding estimate of the conditional expectation operator.

    ``lam`` defaults to the refined minimizer of the held-out stage-1 loss on
    a fixed-seed split of ``data``; the final operator uses all rows.
    """
    n = data.n
    if n < 10:
        raise InvalidInputError("need at least 10 samples")
    z_kernel = StandardizedKernel.fit(data.z, seed=seed)
    if lam is None:
        x_kernel = StandardizedKernel.fit(data.x, seed=seed)
        perm = np.random.default_rng(seed).permutation(n)
        n_val = max(1, int(round(val_fraction * n)))
        fit_idx, val_idx = np.sort(perm[n_val:]), np.sort(perm[:n_val])
        objective = _Stage1Objective(
            data.x[fit_idx], data.z[fit_idx], data.x[val_idx], data.z[val_idx], x_kernel, z_kernel
        )
        lam = refine_reg_search(objective, DEFAULT_REG_GRID)
    elif not lam > 0:
        raise InvalidInputError("lam must be positive")
    return CMEOperatorModel(data.x.copy(), data.z.copy(), z_kernel, float(lam))
