"""Synthetic data-generating processes, truth oracles and evaluation metrics.

Continuous outcome::

    Z = (Z1, Z2) ~ Unif([-3, 3]^2),  eps ~ N(0, 1),  gamma, delta ~ N(0, 0.1)
    X = Z1 + eps + gamma,            Y = h(X) + eps + delta

Binary outcome::

    eta ~ Logistic(0, beta),  gamma ~ N(0, 0.1)
    X = Z1 + eta + gamma,     Y = 1{E[h(X) | Z] + eta > 0}

Normal variances above are variances, not standard deviations.
"""
from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import expit, ndtr

from .core import Dataset
from .core import LossSpec, SearchSetSpec
from .errors import InvalidInputError, SagdivError, UnsupportedScenarioError

CONTINUOUS = "continuous"
BINARY = "binary"
RESPONSES = ("step", "abs", "linear", "sin")
BINARY_RESPONSES = ("linear", "sin")
NOISE_VAR = 0.1
CONFOUNDER_VAR = 1.0
BUDGETS = {"paper": 3000, "half": 1500}
GH_ORDER = 64
METHODS = ("sagdiv-kernel", "sagdiv-rawy", "kiv", "2sls", "naive")
CURVE_GRID = np.linspace(-4.0, 4.0, 200)


def h_star(response: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if response == "step":
        return (x > 0).astype(float)
    if response == "abs":
        return np.abs(x)
    if response == "linear":
        return x.copy()
    if response == "sin":
        return np.sin(x)
    raise UnsupportedScenarioError(f"unknown response {response!r}")


def gauss_hermite_mean(f: Callable, centers, var: float, order: int = GH_ORDER) -> np.ndarray:
    """``E[f(c + W)]`` for ``W ~ N(0, var)`` by Gauss-Hermite quadrature."""
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    centers = np.asarray(centers, dtype=float).reshape(-1, 1)
    vals = f(centers + math.sqrt(2.0 * var) * nodes[None, :])
    return vals @ weights / math.sqrt(math.pi)


def normal_conditional_mean(response: str, z1, var: float) -> np.ndarray:
    """Closed form ``E[h(z1 + W)]`` with ``W ~ N(0, var)``."""
    z1 = np.asarray(z1, dtype=float)
    sd = math.sqrt(var)
    if response == "linear":
        return z1.copy()
    if response == "sin":
        return np.sin(z1) * math.exp(-var / 2.0)
    if response == "step":
        return ndtr(z1 / sd)
    if response == "abs":
        # mean of a folded normal
        return sd * math.sqrt(2.0 / math.pi) * np.exp(-(z1**2) / (2.0 * var)) + z1 * (1.0 - 2.0 * ndtr(-z1 / sd))
    raise UnsupportedScenarioError(f"unknown response {response!r}")


def logistic_sin_factor(beta: float) -> float:
    """``E[sin(z1 + eta + gamma)] / sin(z1)`` for the binary design."""
    return beta * math.pi * math.exp(-NOISE_VAR / 2.0) / math.sinh(beta * math.pi)


@dataclass(frozen=True)
class ScenarioSpec:
    outcome: str = CONTINUOUS
    response: str = "linear"
    budget: int = BUDGETS["paper"]
    n_test: int = 1000
    beta: float = math.sqrt(0.1)

    def __post_init__(self):
        if self.outcome not in (CONTINUOUS, BINARY):
            raise UnsupportedScenarioError(f"unknown outcome {self.outcome!r}")
        if self.response not in RESPONSES:
            raise UnsupportedScenarioError(f"unknown response {self.response!r}; expected one of {RESPONSES}")
        if self.outcome == BINARY and self.response not in BINARY_RESPONSES:
            raise UnsupportedScenarioError(
                f"binary outcome needs an analytic E[h(X)|Z]; supported responses are {BINARY_RESPONSES}"
            )
        if self.budget < 50:
            raise InvalidInputError("sample budget too small")
        if not self.beta > 0:
            raise InvalidInputError("beta must be positive")

    @property
    def name(self) -> str:
        return f"{self.outcome}-{self.response}"

    @property
    def n_estimator(self) -> int:
        """Triples used by the preliminary estimators: 3N + 2N samples fill the budget."""
        return self.budget // 5

    @property
    def n_sagd(self) -> int:
        return 2 * self.n_estimator

    @property
    def n_baseline(self) -> int:
        return self.budget // 3


class ScenarioOracle:
    """Truth for one design: ``h*``, ``r(z) = E[Y | Z = z]`` and X | Z sampling."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec

    def h_star(self, x) -> np.ndarray:
        return h_star(self.spec.response, np.asarray(x, dtype=float).reshape(-1))

    def sample_z(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-3.0, 3.0, size=(n, 2))

    def _confounder(self, rng, size):
        if self.spec.outcome == CONTINUOUS:
            return rng.normal(0.0, math.sqrt(CONFOUNDER_VAR), size=size)
        return rng.logistic(0.0, self.spec.beta, size=size)

    def sample_x_given_z(self, rng, z, n_x: int) -> np.ndarray:
        z1 = np.asarray(z, dtype=float).reshape(len(z), -1)[:, :1]
        shape = (z1.shape[0], n_x)
        return z1 + self._confounder(rng, shape) + rng.normal(0.0, math.sqrt(NOISE_VAR), size=shape)

    def structural_mean(self, z) -> np.ndarray:
        """``E[h*(X) | Z = z]``."""
        z1 = np.asarray(z, dtype=float).reshape(len(z), -1)[:, 0]
        if self.spec.outcome == CONTINUOUS:
            return normal_conditional_mean(self.spec.response, z1, CONFOUNDER_VAR + NOISE_VAR)
        if self.spec.response == "linear":
            return z1.copy()
        return logistic_sin_factor(self.spec.beta) * np.sin(z1)

    def structural_mean_quadrature(self, z) -> np.ndarray:
        """Numerical ``E[h*(X) | Z = z]`` (continuous designs only).

        Gauss-Hermite for the smooth responses; step and abs have a kink at
        zero that Gauss-Hermite resolves only to about 1e-2, so they use
        adaptive quadrature split at the kink.
        """
        if self.spec.outcome != CONTINUOUS:
            raise UnsupportedScenarioError("quadrature oracle covers Gaussian noise only")
        z1 = np.asarray(z, dtype=float).reshape(len(z), -1)[:, 0]
        var = CONFOUNDER_VAR + NOISE_VAR
        f = lambda x: h_star(self.spec.response, x)  # noqa: E731
        if self.spec.response in ("linear", "sin"):
            return gauss_hermite_mean(f, z1, var)
        sd = math.sqrt(var)
        out = np.empty(z1.size)
        for i, c in enumerate(z1):
            def integrand(x, c=c):
                return float(f(np.array(x))) * math.exp(-((x - c) ** 2) / (2 * var)) / (sd * math.sqrt(2 * math.pi))

            lo, hi = c - 12 * sd, c + 12 * sd
            out[i] = sum(
                integrate.quad(integrand, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
                for a, b in ((lo, min(0.0, hi)), (max(0.0, lo), hi))
                if a < b
            )
        return out

    def r(self, z) -> np.ndarray:
        m = self.structural_mean(z)
        if self.spec.outcome == CONTINUOUS:
            return m
        return expit(m / self.spec.beta)


@dataclass
class GeneratedData:
    """One realization of a scenario.

    ``estimator_data`` feeds the preliminary estimators, ``z_stream`` (with the
    paired ``y_stream``) the gradient loop, ``baseline_data`` the one-shot
    methods; each block comes from its own random substream.
    """

    spec: ScenarioSpec
    estimator_data: Dataset
    z_stream: np.ndarray
    y_stream: np.ndarray
    baseline_data: Dataset
    test_x: np.ndarray
    test_h: np.ndarray
    oracle: ScenarioOracle = field(repr=False)


def _draw_triples(oracle: ScenarioOracle, rng: np.random.Generator, n: int) -> Dataset:
    spec = oracle.spec
    z = oracle.sample_z(rng, n)
    u = oracle._confounder(rng, n)
    gam = rng.normal(0.0, math.sqrt(NOISE_VAR), size=n)
    x = z[:, 0] + u + gam
    if spec.outcome == CONTINUOUS:
        delta = rng.normal(0.0, math.sqrt(NOISE_VAR), size=n)
        y = h_star(spec.response, x) + u + delta
    else:
        y = (oracle.structural_mean(z) + u > 0).astype(float)
    return Dataset(x[:, None], z, y)


def _generate(spec: ScenarioSpec, seed: int) -> GeneratedData:
    oracle = ScenarioOracle(spec)
    est_rng, stream_rng, base_rng, test_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
    )
    estimator_data = _draw_triples(oracle, est_rng, spec.n_estimator)
    stream = _draw_triples(oracle, stream_rng, spec.n_sagd)
    baseline_data = _draw_triples(oracle, base_rng, spec.n_baseline)
    test = _draw_triples(oracle, test_rng, spec.n_test)
    return GeneratedData(
        spec=spec,
        estimator_data=estimator_data,
        z_stream=stream.z,
        y_stream=stream.y,
        baseline_data=baseline_data,
        test_x=test.x,
        test_h=oracle.h_star(test.x),
        oracle=oracle,
    )


def gen_continuous(spec: ScenarioSpec, seed: int = 0) -> GeneratedData:
    if spec.outcome != CONTINUOUS:
        raise UnsupportedScenarioError("gen_continuous needs a continuous-outcome spec")
    return _generate(spec, seed)


def gen_binary(spec: ScenarioSpec, seed: int = 0) -> GeneratedData:
    if spec.outcome != BINARY:
        raise UnsupportedScenarioError("gen_binary needs a binary-outcome spec")
    return _generate(spec, seed)


def generate(spec: ScenarioSpec, seed: int = 0) -> GeneratedData:
    return _generate(spec, seed)


def mse_vs_truth(predicted, truth) -> tuple[float, float]:
    """Mean squared error against the structural function, raw and log10."""
    predicted = np.asarray(predicted, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if predicted.size != truth.size:
        raise InvalidInputError(f"length mismatch: {predicted.size} vs {truth.size}")
    mse = float(np.mean((predicted - truth) ** 2))
    return mse, (math.log10(mse) if mse > 0 else -math.inf)


def derive_seed(master: int, name: str) -> int:
    """Child seed for the named substream, e.g. ``"dgp/continuous-sin/seed-3"``.

    The first eight bytes of ``sha256(f"{master}/{name}")`` read as a
    little-endian integer and shifted right by one bit, so the result fits in
    a signed 64-bit integer.
    """
    if master < 0:
        raise InvalidInputError("master seed must be non-negative")
    digest = hashlib.sha256(f"{master}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class CellResult:
    """One (repetition, method) entry of a benchmark run."""

    scenario: str
    method: str
    seed: int
    mse: float
    log10_mse: float
    rv_samples: int
    fit_seconds: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class RunReport:
    spec: ScenarioSpec
    methods: tuple[str, ...]
    master_seed: int
    cells: list[CellResult]
    curves: dict[str, np.ndarray]  # method -> values on CURVE_GRID, first repetition
    truth_curve: np.ndarray

    def mse(self, method: str) -> np.ndarray:
        return np.array([c.mse for c in self.cells if c.method == method and c.ok])

    def failures(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]

    def summary(self) -> dict:
        out = {}
        for method in self.methods:
            values = self.mse(method)
            entry = {
                "n_ok": int(values.size),
                "n_failed": sum(1 for c in self.cells if c.method == method and not c.ok),
                "mse": [c.mse for c in self.cells if c.method == method],
            }
            if values.size:
                q25, med, q75 = np.quantile(values, [0.25, 0.5, 0.75])
                entry.update(median=float(med), q25=float(q25), q75=float(q75))
            else:
                entry.update(median=None, q25=None, q75=None)
            out[method] = entry
        return out


def sagd_config_for(spec: ScenarioSpec, warm_up: int = 100, bound: float = 10.0):
    from .sagd import SAGDConfig

    loss = LossSpec.quadratic() if spec.outcome == CONTINUOUS else LossSpec.logistic_bce(spec.beta)
    return SAGDConfig(warm_up=warm_up, search_set=SearchSetSpec(bound), loss=loss)


def fit_method(method: str, data: GeneratedData, seed: int, options: dict | None = None):
    """Fit ``method`` on its share of ``data``; returns ``(model, rv_samples)``.

    ``options`` holds per-method overrides: ``warm_up``, ``bound`` and
    ``density_ratio`` (keyword arguments for the density-ratio fit) for the
    SAGD-IV variants, ``xi_rule`` for KIV.
    """
    from .baselines import fit_2sls, fit_kiv, fit_naive_krr
    from .sagd import fit_kernel_sagdiv

    options = dict(options or {})
    spec = data.spec
    if method in ("sagdiv-kernel", "sagdiv-rawy"):
        config = sagd_config_for(spec, options.pop("warm_up", 100), options.pop("bound", 10.0))
        density = options.pop("density_ratio", None)
        _reject_leftovers(method, options)
        if method == "sagdiv-kernel":
            est, z, y = data.estimator_data, data.z_stream, None
            samples = 3 * est.n + z.shape[0]
        else:
            # the stream also spends its outcomes, so shrink both blocks to keep the budget
            n = spec.budget // 7
            m = (spec.budget - 3 * n) // 2
            est, z, y = data.estimator_data.take(slice(0, n)), data.z_stream[:m], data.y_stream[:m]
            samples = 3 * n + 2 * z.shape[0]
        model = fit_kernel_sagdiv(
            est, z, config, y_stream=y, raw_y=(method == "sagdiv-rawy"), seed=seed, density_options=density
        )
        return model, samples
    base = data.baseline_data
    if method == "kiv":
        xi_rule = options.pop("xi_rule", "direct")
        _reject_leftovers(method, options)
        return fit_kiv(base, seed=seed, xi_rule=xi_rule), 3 * base.n
    _reject_leftovers(method, options)
    if method == "2sls":
        return fit_2sls(base), 3 * base.n
    if method == "naive":
        return fit_naive_krr(base, seed=seed), 3 * base.n
    raise InvalidInputError(f"unknown method {method!r}; expected one of {METHODS}")


def _reject_leftovers(method, options):
    if options:
        raise InvalidInputError(f"unknown options for {method}: {sorted(options)}")


def _run_repetition(spec, methods, rep, master_seed, options, timings):
    data = generate(spec, derive_seed(master_seed, f"dgp/{spec.name}/seed-{rep}"))
    fit_seed = derive_seed(master_seed, f"estimators/seed-{rep}") % 2**32
    cells, curves = [], {}
    for method in methods:
        start = time.perf_counter()
        try:
            model, samples = fit_method(method, data, fit_seed, (options or {}).get(method))
            mse, log_mse = mse_vs_truth(model(data.test_x), data.test_h)
            if rep == 0:
                curves[method] = np.asarray(model(CURVE_GRID[:, None]), dtype=float)
            error = None
        except (SagdivError, np.linalg.LinAlgError, ValueError) as exc:
            mse, log_mse, samples, error = math.nan, math.nan, 0, f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - start if timings else None
        cells.append(CellResult(spec.name, method, rep, mse, log_mse, samples, elapsed, error))
    return cells, curves


def run_scenario(
    spec: ScenarioSpec,
    methods: Sequence[str] = METHODS,
    repetitions: int = 10,
    master_seed: int = 0,
    options: dict | None = None,
    threads: int = 1,
    timings: bool = False,
) -> RunReport:
    """Fit every method on every repetition and score it on the shared test set.

    Repetition ``i`` draws its data from ``derive_seed(master_seed,
    "dgp/<scenario>/seed-i")`` and seeds estimator randomness (folds, basis
    centers) from ``"estimators/seed-i"``.  Failures are recorded per cell.
    Wall-clock timings are only collected when ``timings`` is set, so that
    reports stay reproducible byte for byte by default.
    """
    if repetitions < 1:
        raise InvalidInputError("repetitions must be >= 1")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise InvalidInputError(f"unknown method {m!r}; expected one of {METHODS}")
    if threads < 1:
        raise InvalidInputError("threads must be >= 1")

    def job(rep):
        return _run_repetition(spec, methods, rep, master_seed, options, timings)

    if threads == 1:
        results = [job(rep) for rep in range(repetitions)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(repetitions)))
    cells = [c for rep_cells, _ in results for c in rep_cells]
    return RunReport(
        spec=spec,
        methods=methods,
        master_seed=master_seed,
        cells=cells,
        curves=results[0][1],
        truth_curve=h_star(spec.response, CURVE_GRID),
    )
