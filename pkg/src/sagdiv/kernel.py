"""Gaussian kernels, closed-form kernel ridge regression and regularization search."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateDataError, InvalidInputError, NumericalError, SearchFailureError

JITTER = 1e-10
MEDIAN_MAX_POINTS = 2000
DEFAULT_REG_GRID = (1e-1, 1e-3, 1e-5, 1e-7)


def median_heuristic(points, max_points: int = MEDIAN_MAX_POINTS, seed: int = 0) -> float:
    """Median of the pairwise Euclidean distances between rows of ``points``.

    Above ``max_points`` rows a fixed-seed subsample is used.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        raise InvalidInputError("median heuristic needs at least two points")
    if points.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(points.shape[0], max_points, replace=False)
        points = points[np.sort(idx)]
    med = float(np.median(pdist(points)))
    if med <= 0:
        if np.all(points == points[0]):
            raise DegenerateDataError("all points are identical")
        # more than half the pairs coincide; fall back to the mean positive distance
        d = pdist(points)
        med = float(d[d > 0].mean())
    return med


@dataclass(frozen=True)
class KernelSpec:
    lengthscale: float

    def __post_init__(self):
        if not (math.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise InvalidInputError(f"lengthscale must be positive and finite, got {self.lengthscale}")


def gram(spec: KernelSpec, a, b) -> np.ndarray:
    """Gaussian Gram matrix ``exp(-|a_i - b_j|^2 / (2 l^2))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq = cdist(a, b, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.lengthscale**2))


@dataclass(frozen=True)
class StandardizedKernel:
    """Gaussian kernel applied after per-column standardization.

    The lengthscale is the median heuristic of the standardized training
    points; mean and scale are kept so new points are mapped consistently.
    """

    mean: np.ndarray
    scale: np.ndarray
    spec: KernelSpec

    @classmethod
    def fit(cls, points, seed: int = 0) -> "StandardizedKernel":
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        mean = points.mean(axis=0)
        scale = points.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        ls = median_heuristic((points - mean) / scale, seed=seed)
        return cls(mean, scale, KernelSpec(ls))

    def rescaled(self, factor: float) -> "StandardizedKernel":
        return StandardizedKernel(self.mean, self.scale, KernelSpec(self.spec.lengthscale * factor))

    def transform(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.shape[1] != self.mean.size:
            raise InvalidInputError(
                f"expected {self.mean.size} columns, got {points.shape[1]}"
            )
        return (points - self.mean) / self.scale

    def __call__(self, a, b) -> np.ndarray:
        return gram(self.spec, self.transform(a), self.transform(b))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "lengthscale": self.spec.lengthscale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizedKernel":
        return cls(
            np.asarray(d["mean"], dtype=float),
            np.asarray(d["scale"], dtype=float),
            KernelSpec(float(d["lengthscale"])),
        )


def _cholesky(a: np.ndarray):
    try:
        return linalg.cho_factor(a + JITTER * np.eye(a.shape[0]), lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Cholesky factorization failed: {exc}") from exc


@dataclass(frozen=True)
class RidgeModel:
    """Kernel ridge fit ``c = (K + m lam I)^{-1} y``.

    ``inputs`` and ``kernel`` are optional so the bare linear algebra can be
    used with a precomputed Gram matrix.
    """

    coef: np.ndarray
    lam: float
    inputs: np.ndarray | None = None
    kernel: StandardizedKernel | None = None

    def predict(self, query) -> np.ndarray:
        return predict_ridge(self, query)

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "coef": self.coef.tolist(),
            "lam": self.lam,
            "inputs": None if self.inputs is None else self.inputs.tolist(),
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RidgeModel":
        return cls(
            np.asarray(d["coef"], dtype=float),
            float(d["lam"]),
            None if d["inputs"] is None else np.asarray(d["inputs"], dtype=float),
            None if d["kernel"] is None else StandardizedKernel.from_dict(d["kernel"]),
        )


def fit_ridge(k, y, lam: float, inputs=None, kernel: StandardizedKernel | None = None) -> RidgeModel:
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    m = k.shape[0]
    if k.shape != (m, m) or y.size != m:
        raise InvalidInputError(f"gram shape {k.shape} incompatible with y of length {y.size}")
    if not lam > 0:
        raise InvalidInputError(f"lam must be positive, got {lam}")
    factor = _cholesky(k + m * lam * np.eye(m))
    coef = linalg.cho_solve(factor, y)
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
    return RidgeModel(coef, float(lam), inputs, kernel)


def predict_ridge(model: RidgeModel, query) -> np.ndarray:
    """Predict at ``query`` points, or pass a precomputed cross-Gram
    (q, m) matrix when the model carries no kernel."""
    if model.kernel is None:
        k = np.asarray(query, dtype=float)
    else:
        k = model.kernel(query, model.inputs)
    return k @ model.coef


def refine_reg_search(
    objective: Callable[[float], float],
    initial: Sequence[float] = DEFAULT_REG_GRID,
    offset: float | None = None,
    iterations: int = 3,
) -> float:
    """Iterative refinement of a regularization parameter.

    Each round takes the best candidate, rebuilds the candidate list as
    ``best + k * offset`` for ``k = -5..5`` and divides ``offset`` by 10.
    Non-positive candidates are skipped, ties go to the lowest index.
    ``offset=None`` uses a tenth of the first round's winner.
    """
    candidates = [float(c) for c in initial]
    if not candidates or any(not c > 0 for c in candidates):
        raise InvalidInputError("initial candidates must be non-empty and positive")
    if offset is not None and not offset > 0:
        raise InvalidInputError("offset must be positive")
    if iterations < 1:
        raise InvalidInputError("iterations must be >= 1")

    best = math.nan
    for _ in range(iterations):
        scores = [objective(c) for c in candidates]
        finite = [(s, i) for i, s in enumerate(scores) if math.isfinite(s)]
        if not finite:
            raise SearchFailureError(f"objective is non-finite for all candidates {candidates}")
        best = candidates[min(finite)[1]]
        if offset is None:
            offset = best / 10.0
        candidates = [best + k * offset for k in range(-5, 6)]
        candidates = [c for c in candidates if c > 0]
        offset /= 10.0
    return best


def kfold_indices(n: int, n_folds: int, seed: int) -> list[np.ndarray]:
    if n_folds < 2 or n < n_folds:
        raise InvalidInputError(f"need 2 <= n_folds <= n, got n_folds={n_folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_folds)]


def cross_validate(
    folds: Sequence[np.ndarray],
    candidates: Sequence[float],
    fit: Callable[[np.ndarray, float], object],
    score: Callable[[object, np.ndarray], float],
) -> float:
    """Return the candidate with the smallest mean held-out score.

    ``fit(train_idx, lam)`` returns a model, ``score(model, test_idx)`` its
    mean squared error on the held-out fold.
    """
    if len(candidates) == 0:
        raise InvalidInputError("no candidates to cross-validate")
    if len(folds) < 2:
        raise InvalidInputError("cross validation needs at least two folds")
    errors = [cv_error(folds, lam, fit, score) for lam in candidates]
    return float(candidates[int(np.argmin(errors))])


def cv_error(folds, lam, fit, score) -> float:
    n = sum(len(f) for f in folds)
    total = 0.0
    for i, test in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        total += score(fit(train, lam), test)
    # fold scores are summed in fold order, so the mean does not depend on scheduling
    return total / len(folds) if n else math.nan


class RidgeCVObjective:
    """``lam -> mean held-out squared error`` of kernel ridge on fixed folds.

    Each fold's training Gram is eigendecomposed once so that evaluating a
    new ``lam`` costs a few matrix-vector products.
    """

    def __init__(self, k: np.ndarray, y: np.ndarray, folds: Sequence[np.ndarray]):
        self._parts = []
        for i, test in enumerate(folds):
            train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
            evals, evecs = np.linalg.eigh(k[np.ix_(train, train)])
            proj = evecs.T @ y[train]
            cross = k[np.ix_(test, train)] @ evecs
            self._parts.append((len(train), evals, proj, cross, y[test]))

    def __call__(self, lam: float) -> float:
        errs = []
        for m, evals, proj, cross, y_test in self._parts:
            pred = cross @ (proj / (np.maximum(evals, 0.0) + m * lam + JITTER))
            errs.append(np.mean((pred - y_test) ** 2))
        return float(np.mean(errs))


def select_ridge_lambda(
    k, y, seed: int = 0, n_folds: int = 5, initial=DEFAULT_REG_GRID, iterations: int = 3
) -> float:
    """Cross-validated ``lam`` for kernel ridge, refined iteratively."""
    y = np.asarray(y, dtype=float).reshape(-1)
    folds = kfold_indices(y.size, n_folds, seed)
    return refine_reg_search(RidgeCVObjective(np.asarray(k), y, folds), initial, None, iterations)
