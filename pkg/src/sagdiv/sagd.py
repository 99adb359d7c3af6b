"""Projected functional stochastic approximate gradient descent for NPIV.

At step ``m`` with instrument draw ``z_m`` the iterate is updated pointwise as

    h_m(x) = clip(h_{m-1}(x) - alpha_m * g_m * Phi(x, z_m), -A, A),
    g_m = d2 l(r(z_m), E[h_{m-1}(X) | Z = z_m]),

and the estimate is the average of ``h_{K+1}, ..., h_M``.  Clipping destroys
any finite basis, so a fitted model stores the chain ``(z_m, alpha_m, g_m)``
and replays it at query points.  Iterate values are tracked at the CME
training covariates because that is where the operator estimate needs them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, LearningRateSchedule, LossSpec, SearchSetSpec
from .errors import DivergenceError, InvalidInputError, UnsupportedScenarioError
from .estimators import (
    CMEOperatorModel,
    ConditionalMeanModel,
    DensityRatioModel,
    fit_cme_operator,
    fit_conditional_mean,
    fit_density_ratio,
)

GRADIENT_LIMIT = 1e6
EVAL_CHUNK = 2048


@dataclass(frozen=True)
class SAGDConfig:
    warm_up: int = 100
    search_set: SearchSetSpec = field(default_factory=SearchSetSpec)
    loss: LossSpec = field(default_factory=LossSpec.quadratic)
    schedule: LearningRateSchedule | None = None  # None: 1/sqrt(M)

    def schedule_for(self, n_iter: int) -> np.ndarray:
        if self.warm_up < 0 or self.warm_up >= n_iter:
            raise InvalidInputError(f"warm-up must satisfy 0 <= K < M, got K={self.warm_up}, M={n_iter}")
        schedule = self.schedule or LearningRateSchedule.inverse_sqrt(n_iter)
        if len(schedule) < n_iter:
            raise InvalidInputError(f"schedule has {len(schedule)} rates, need {n_iter}")
        return schedule.values[:n_iter]


@dataclass
class SAGDModel:
    """Fitted estimate, evaluable at arbitrary covariates."""

    density_ratio: DensityRatioModel
    anchors: np.ndarray
    gradients: np.ndarray
    step_sizes: np.ndarray
    bound: float
    warm_up: int
    train_x: np.ndarray
    train_values: np.ndarray

    @property
    def n_iter(self) -> int:
        return self.anchors.shape[0]

    def __call__(self, x) -> np.ndarray:
        return eval_sagd(self, x)

    predict = __call__

    def to_dict(self) -> dict:
        return {
            "density_ratio": self.density_ratio.to_dict(),
            "anchors": self.anchors.tolist(),
            "gradients": self.gradients.tolist(),
            "step_sizes": self.step_sizes.tolist(),
            "bound": self.bound,
            "warm_up": self.warm_up,
            "train_x": self.train_x.tolist(),
            "train_values": self.train_values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SAGDModel":
        return cls(
            DensityRatioModel.from_dict(d["density_ratio"]),
            np.asarray(d["anchors"], dtype=float),
            np.asarray(d["gradients"], dtype=float),
            np.asarray(d["step_sizes"], dtype=float),
            float(d["bound"]),
            int(d["warm_up"]),
            np.asarray(d["train_x"], dtype=float),
            np.asarray(d["train_values"], dtype=float),
        )


def fit_sagdiv(
    density_ratio: DensityRatioModel,
    conditional_mean: ConditionalMeanModel,
    cme: CMEOperatorModel,
    z_stream,
    config: SAGDConfig = SAGDConfig(),
    y_stream=None,
) -> SAGDModel:
    """Run the gradient loop over the instrument draws in ``z_stream``.

    The preliminary estimators must come from data independent of
    ``z_stream``.  A raw-Y ``conditional_mean`` uses ``y_stream[m]`` in place
    of ``r(z_m)``.  For the logistic loss, values of ``r`` outside [0, 1]
    (kernel ridge overshoot) go through the affine extension of the gradient.
    """
    z_stream = np.asarray(z_stream, dtype=float)
    if z_stream.ndim == 1:
        z_stream = z_stream[:, None]
    n_iter = z_stream.shape[0]
    alphas = config.schedule_for(n_iter)
    bound = config.search_set.bound
    loss = config.loss

    if conditional_mean.raw_y:
        if y_stream is None:
            raise InvalidInputError("raw-Y mode needs the outcomes paired with z_stream")
        targets = np.asarray(y_stream, dtype=float).reshape(-1)
        if targets.size != n_iter:
            raise InvalidInputError("y_stream and z_stream lengths differ")
    else:
        # not clipped to [0, 1] for the logistic loss: the gradient is affine in
        # the target, and clipping a ridge fit removes its overshoots but keeps
        # its undershoots, which biases the update
        targets = conditional_mean.predict(z_stream)

    phi = _phi_by_step(density_ratio, cme.x_train, density_ratio.right_factor(z_stream))  # (M, n)
    gamma = np.ascontiguousarray(cme.weights(z_stream).T)  # (M, n)

    values = np.zeros(cme.n)
    total = np.zeros(cme.n)
    grads = np.empty(n_iter)
    for m in range(n_iter):
        s = gamma[m] @ values
        g = float(loss.deriv2(targets[m], s, extend=True))
        if not (math.isfinite(s) and math.isfinite(g)):
            raise DivergenceError(m + 1, f"non-finite iterate (E[h](z)={s}, gradient={g})")
        if abs(g) > GRADIENT_LIMIT:
            raise DivergenceError(m + 1, f"|gradient| = {abs(g):.3g} exceeds {GRADIENT_LIMIT:g}")
        grads[m] = g
        values = np.clip(values - (alphas[m] * g) * phi[m], -bound, bound)
        if m >= config.warm_up:
            total += values

    return SAGDModel(
        density_ratio=density_ratio,
        anchors=z_stream.copy(),
        gradients=grads,
        step_sizes=alphas.copy(),
        bound=bound,
        warm_up=config.warm_up,
        train_x=cme.x_train,
        train_values=total / (n_iter - config.warm_up),
    )


# uLSIF settings for the gradient loop: every row a center, a fixed small
# ridge and the instrument lengthscale at a quarter of its median heuristic.
# This is a poor estimate of the ratio in squared error (the ridge shrinkage
# of the cross-validated fit is traded for an inflated, flatter surface), but
# the cross-validated fit shrinks the ratio towards zero where X is sparse,
# which is where the true ratio is largest, and the loop then barely moves
# the iterate in the tails of X.
SHARP_DENSITY_OPTIONS = {"lam": 1e-3, "n_basis": "all", "bandwidth_scale": (1.0, 0.25)}


def fit_kernel_sagdiv(
    data: Dataset,
    z_stream,
    config: SAGDConfig = SAGDConfig(),
    y_stream=None,
    raw_y: bool = False,
    seed: int = 0,
    density_options: dict | None = None,
) -> SAGDModel:
    """Fit the three preliminary estimators on ``data`` and run the loop.

    The density ratio is fitted with :data:`SHARP_DENSITY_OPTIONS`, updated
    by ``density_options``; the literal value ``"all"`` for ``n_basis``
    means one center per row.
    """
    options = {**SHARP_DENSITY_OPTIONS, **(density_options or {})}
    if options.get("n_basis") == "all":
        options["n_basis"] = data.n
    density_ratio = fit_density_ratio(data, seed=seed, **options)
    conditional_mean = fit_conditional_mean(data, raw_y=raw_y, seed=seed)
    cme = fit_cme_operator(data, seed=seed)
    return fit_sagdiv(density_ratio, conditional_mean, cme, z_stream, config, y_stream)


def _phi_by_step(density_ratio: DensityRatioModel, x, right: np.ndarray) -> np.ndarray:
    """Density ratio ``Phi(x_i, z_m)`` laid out as (M, len(x))."""
    return np.clip(right @ density_ratio.left_factor(x).T, 0.0, density_ratio.cap)


def _replay(phi: np.ndarray, steps: np.ndarray, bound: float, warm_up: int) -> np.ndarray:
    values = np.zeros(phi.shape[1])
    total = np.zeros(phi.shape[1])
    for m in range(phi.shape[0]):
        values = np.clip(values - steps[m] * phi[m], -bound, bound)
        if m >= warm_up:
            total += values
    return total / (phi.shape[0] - warm_up)


def eval_sagd(model: SAGDModel, x) -> np.ndarray:
    """Replay the clipped recurrence at each row of ``x`` and average."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite query point")
    steps = model.step_sizes * model.gradients
    right = model.density_ratio.right_factor(model.anchors)
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], EVAL_CHUNK):
        chunk = x[start : start + EVAL_CHUNK]
        phi = _phi_by_step(model.density_ratio, chunk, right)
        out[start : start + EVAL_CHUNK] = _replay(phi, steps, model.bound, model.warm_up)
    return out


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    std_error: float
    n_samples: int
    inner_bias: float = 0.0  # estimated upward bias from the finite inner average (quadratic loss)


def mc_projected_risk(h, scenario, loss: LossSpec, n_z: int = 500, n_x: int = 200, seed: int = 0) -> RiskEstimate:
    """Nested Monte Carlo estimate of ``E[l(r(Z), E[h(X) | Z])]``.

    ``scenario`` must provide ``sample_z(rng, n)``, ``r(z)`` and
    ``sample_x_given_z(rng, z, n_x)`` returning an ``(len(z), n_x)`` array.
    For the logistic loss the link is applied inside the loss, which gives the
    binary-outcome risk.
    """
    for attr in ("sample_z", "r", "sample_x_given_z"):
        if not callable(getattr(scenario, attr, None)):
            raise UnsupportedScenarioError(f"scenario does not provide {attr}()")
    rng = np.random.default_rng(seed)
    z = scenario.sample_z(rng, n_z)
    r = scenario.r(z)
    xs = scenario.sample_x_given_z(rng, z, n_x)
    hv = np.asarray(h(xs.reshape(-1, 1)), dtype=float).reshape(n_z, n_x)
    proj = hv.mean(axis=1)
    losses = loss.value(r, proj)
    bias = 0.0
    if loss.kind == "quadratic":
        bias = float(0.5 * np.mean(hv.var(axis=1, ddof=1)) / n_x) if n_x > 1 else math.inf
    return RiskEstimate(
        value=float(losses.mean()),
        std_error=float(losses.std(ddof=1) / math.sqrt(n_z)) if n_z > 1 else math.inf,
        n_samples=n_z * n_x,
        inner_bias=bias,
    )
