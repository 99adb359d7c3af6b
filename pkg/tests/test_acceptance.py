"""Acceptance criteria 1-9, one test each.

Every test collects named checks, prints a single PASS/FAIL line (also
repeated in the terminal summary) and then fails if any check failed.
"""
import json
import math
import time

import numpy as np
import pytest

from sagdiv.benchmarks import ScenarioSpec, derive_seed, generate, logistic_sin_factor, run_scenario
from sagdiv.cli.config import parse_config
from sagdiv.cli.main import fit_on_data, main
from sagdiv.cli.persistence import load_model, save_model
from sagdiv.core import Dataset, LossSpec, project_linf
from sagdiv.estimators import (
    DensityRatioModel,
    fit_cme_operator,
    fit_conditional_mean,
    fit_density_ratio,
)
from sagdiv.kernel import KernelSpec, StandardizedKernel
from sagdiv.sagd import SHARP_DENSITY_OPTIONS, SAGDConfig, SAGDModel, eval_sagd, fit_sagdiv, mc_projected_risk

pytestmark = pytest.mark.slow

RESPONSES = ("step", "abs", "linear", "sin")
REPS = 10
BETA = math.sqrt(0.1)


class Checks:
    def __init__(self, number, report):
        self.number = number
        self.report = report
        self.items = []
        self.start = time.perf_counter()

    def add(self, label, ok, detail=""):
        self.items.append((label, bool(ok), detail))

    def runtime(self, limit):
        elapsed = time.perf_counter() - self.start
        self.add(f"runtime < {limit:g}s", elapsed < limit, f"{elapsed:.1f}s")

    def finish(self):
        failed = [f"{label} ({detail})" if detail else label for label, ok, detail in self.items if not ok]
        status = "FAIL" if failed else "PASS"
        line = f"Criterion {self.number}: {status} ({len(self.items) - len(failed)}/{len(self.items)} checks)"
        if failed:
            line += " failed: " + "; ".join(failed)
        self.report[self.number] = line
        print(line)
        for label, ok, detail in self.items:
            print(f"    [{'ok' if ok else 'FAIL'}] {label} {detail}")
        assert not failed, line


_REPORTS = {}


def _report(outcome, response, budget, methods):
    key = (outcome, response, budget)
    if key not in _REPORTS:
        _REPORTS[key] = run_scenario(ScenarioSpec(outcome, response, budget), methods, REPS)
    return _REPORTS[key]


def _mses(report, method):
    return np.array([c.mse for c in report.cells if c.method == method])


def _continuous(response):
    return _report("continuous", response, 3000, ["sagdiv-kernel", "sagdiv-rawy", "kiv", "2sls", "naive"])


def _unit_kernel(d):
    return StandardizedKernel(np.zeros(d), np.ones(d), KernelSpec(1.0))


def test_criterion_1_loss_contracts(acceptance_report):
    checks = Checks(1, acceptance_report)
    for loss in (LossSpec.quadratic(), LossSpec.logistic_bce(BETA)):
        rng = np.random.default_rng(0)
        n = 1000
        y = rng.uniform(0, 1, n) if loss.kind == "logistic_bce" else rng.normal(0, 3, n)
        yp = rng.normal(0, 3, n)
        h = 1e-5
        fd = (loss.value(y, yp + h) - loss.value(y, yp - h)) / (2 * h)
        rel = np.max(np.abs(loss.deriv2(y, yp) - fd) / np.maximum(np.abs(fd), 1e-2))
        checks.add(f"{loss.kind}: derivative vs central differences", rel <= 1e-6, f"max rel err {rel:.1e}")
        u = rng.uniform(0, 1, n) if loss.kind == "logistic_bce" else rng.normal(0, 3, n)
        up = rng.normal(0, 3, n)
        lhs = np.abs(loss.deriv2(y, yp) - loss.deriv2(u, up))
        rhs = loss.lipschitz * (np.abs(y - u) + np.abs(yp - up))
        checks.add(f"{loss.kind}: Lipschitz bound L={loss.lipschitz:.3g}", np.all(lhs <= rhs + 1e-12))
        growth = np.abs(loss.deriv2(y, yp)) <= loss.c0 + loss.lipschitz * (np.abs(y) + np.abs(yp)) + 1e-12
        checks.add(f"{loss.kind}: growth bound C0={loss.c0:.3g}", np.all(growth))
    checks.runtime(1.0)
    checks.finish()


def test_criterion_2_projection_and_ball(acceptance_report):
    checks = Checks(2, acceptance_report)
    rng = np.random.default_rng(1)
    idempotent = lipschitz = in_ball = True
    for _ in range(100):
        bound = rng.uniform(0.1, 20)
        v, w = rng.normal(0, 10, 50), rng.normal(0, 10, 50)
        p = project_linf(v, bound)
        idempotent &= np.array_equal(project_linf(p, bound), p)
        lipschitz &= np.all(np.abs(p - project_linf(w, bound)) <= np.abs(v - w))

        m, n_centers = int(rng.integers(1, 30)), 4
        ratio = DensityRatioModel(
            _unit_kernel(1), _unit_kernel(2), rng.normal(size=(n_centers, 1)),
            rng.uniform(-2, 2, size=(n_centers, 2)), rng.uniform(0, 3, n_centers), rng.uniform(1, 30),
        )
        model = SAGDModel(
            density_ratio=ratio, anchors=rng.uniform(-3, 3, size=(m, 2)), gradients=rng.normal(0, 50, m),
            step_sizes=rng.uniform(0.01, 3, m), bound=bound, warm_up=int(rng.integers(0, m)),
            train_x=np.zeros((1, 1)), train_values=np.zeros(1),
        )
        in_ball &= np.all(np.abs(eval_sagd(model, rng.normal(0, 5, size=(20, 1)))) <= bound)
    checks.add("projection idempotent", idempotent)
    checks.add("projection 1-Lipschitz", lipschitz)
    checks.add("eval_sagd range inside [-A, A]", in_ball)
    checks.runtime(1.0)
    checks.finish()


def test_criterion_3_estimator_oracles(acceptance_report):
    checks = Checks(3, acceptance_report)
    rng = np.random.default_rng(0)
    n = 2000
    indep = Dataset(rng.normal(size=(n, 1)), rng.uniform(-3, 3, size=(n, 2)), np.zeros(n))
    ratio = fit_density_ratio(indep, seed=0)
    mean_ratio = ratio(rng.normal(size=(n, 1)), rng.uniform(-3, 3, size=(n, 2))).mean()
    checks.add("uLSIF unit ratio in [0.85, 1.15]", 0.85 <= mean_ratio <= 1.15, f"{mean_ratio:.3f}")

    data = generate(ScenarioSpec("continuous", "linear", budget=5000), 11).estimator_data
    cme = fit_cme_operator(data, seed=0)
    h, g = rng.normal(size=cme.n), rng.normal(size=cme.n)
    z = rng.uniform(-3, 3, size=(20, 2))
    gap = np.max(np.abs(cme.apply(2 * h + g, z) - 2 * cme.apply(h, z) - cme.apply(g, z)))
    checks.add("CME linearity to 1e-10", gap <= 1e-10, f"{gap:.1e}")

    z_test = np.random.default_rng(12).uniform(-3, 3, size=(2000, 2))
    rmse = np.sqrt(np.mean((cme.apply(data.x[:, 0], z_test) - z_test[:, 0]) ** 2))
    checks.add("CME RMSE vs E[X|Z] <= 0.2 (n=1000)", rmse <= 0.2, f"{rmse:.3f}")

    r_hat = fit_conditional_mean(data, seed=0)
    rmse = np.sqrt(np.mean((r_hat(z_test) - z_test[:, 0]) ** 2))
    checks.add("r_hat held-out RMSE vs z1 <= 0.15", rmse <= 0.15, f"{rmse:.3f}")
    checks.runtime(120.0)
    checks.finish()


def test_criterion_4_excess_risk_decay(acceptance_report):
    checks = Checks(4, acceptance_report)
    g = generate(ScenarioSpec("continuous", "linear"), 0)
    data = g.estimator_data
    options = {**SHARP_DENSITY_OPTIONS, "n_basis": data.n}
    ratio = fit_density_ratio(data, seed=0, **options)
    r_hat = fit_conditional_mean(data, seed=0)
    cme = fit_cme_operator(data, seed=0)
    z_stream = g.oracle.sample_z(np.random.default_rng(1000), 2000)
    loss = LossSpec.quadratic()
    risks = {}
    for m in (200, 1000, 2000):
        model = fit_sagdiv(ratio, r_hat, cme, z_stream[:m], SAGDConfig())
        risks[m] = mc_projected_risk(model, g.oracle, loss, n_z=1000, n_x=200, seed=7)
    zero = mc_projected_risk(lambda x: np.zeros(len(x)), g.oracle, loss, n_z=4000, n_x=2, seed=7)
    for a, b in ((200, 1000), (1000, 2000)):
        se = math.hypot(risks[a].std_error, risks[b].std_error)
        checks.add(
            f"R(h_{b}) <= R(h_{a}) + 2 SE", risks[b].value <= risks[a].value + 2 * se,
            f"{risks[b].value:.4f} vs {risks[a].value:.4f} + 2*{se:.4f}",
        )
    checks.add(
        "R(h_2000) < R(0)/5", risks[2000].value < zero.value / 5, f"{risks[2000].value:.4f} vs {zero.value / 5:.4f}"
    )
    checks.runtime(300.0)
    checks.finish()


def test_criterion_5_continuous_benchmark(acceptance_report):
    checks = Checks(5, acceptance_report)
    med = {r: {m: float(np.median(_mses(_continuous(r), m))) for m in ("sagdiv-kernel", "kiv", "2sls", "naive")}
           for r in RESPONSES}
    for r in RESPONSES:
        checks.add(f"(a) {r}: SAGD < naive", med[r]["sagdiv-kernel"] < med[r]["naive"],
                   f"{med[r]['sagdiv-kernel']:.4f} vs {med[r]['naive']:.4f}")
    best = min(med["linear"], key=med["linear"].get)
    checks.add("(b) linear: 2SLS lowest", best == "2sls", f"lowest is {best}")
    for r in ("step", "abs", "sin"):
        checks.add(f"(b) {r}: SAGD < 2SLS", med[r]["sagdiv-kernel"] < med[r]["2sls"],
                   f"{med[r]['sagdiv-kernel']:.4f} vs {med[r]['2sls']:.4f}")
    for r in ("sin", "step"):
        checks.add(f"(c) {r}: SAGD <= 3 x KIV", med[r]["sagdiv-kernel"] <= 3 * med[r]["kiv"],
                   f"{med[r]['sagdiv-kernel']:.4f} vs {med[r]['kiv']:.4f}")
    checks.add("(c) abs: SAGD < KIV", med["abs"]["sagdiv-kernel"] < med["abs"]["kiv"],
               f"{med['abs']['sagdiv-kernel']:.4f} vs {med['abs']['kiv']:.4f}")
    failed = sum(c.error is not None for r in RESPONSES for c in _continuous(r).cells)
    checks.add("no failed cells", failed == 0, f"{failed} failed")
    checks.runtime(900.0)
    checks.finish()


def test_criterion_6_binary_benchmark(acceptance_report):
    checks = Checks(6, acceptance_report)
    for r in ("linear", "sin"):
        report = _report("binary", r, 3000, ["sagdiv-kernel"])
        binary = float(np.median(_mses(report, "sagdiv-kernel")))
        spec = ScenarioSpec("binary", r)
        zero = float(np.median([
            np.mean(generate(spec, derive_seed(0, f"dgp/{spec.name}/seed-{i}")).test_h ** 2) for i in range(REPS)
        ]))
        continuous = float(np.median(_mses(_continuous(r), "sagdiv-kernel")))
        checks.add(f"{r}: median MSE finite", math.isfinite(binary), f"{binary:.4f}")
        checks.add(f"{r}: below 0-function", binary < zero, f"{binary:.4f} vs {zero:.4f}")
        checks.add(f"{r}: within 4x continuous", binary <= 4 * continuous, f"{binary:.4f} vs {continuous:.4f}")

    expected = BETA * math.pi * math.exp(-0.05) / math.sinh(BETA * math.pi)
    gap = abs(logistic_sin_factor(BETA) - expected)
    checks.add("E[sin X|Z] coefficient closed form to 1e-12", gap <= 1e-12, f"{gap:.1e}")
    rng = np.random.default_rng(12)
    z1, n = 1.1, 1_000_000
    draws = np.sin(z1 + rng.logistic(0, BETA, n) + rng.normal(0, math.sqrt(0.1), n))
    se = draws.std(ddof=1) / math.sqrt(n)
    dev = abs(draws.mean() - logistic_sin_factor(BETA) * math.sin(z1))
    checks.add("coefficient vs 1e6-draw MC within 3 SE", dev <= 3 * se, f"{dev:.1e} vs {3 * se:.1e}")
    checks.runtime(600.0)
    checks.finish()


def _median_se(values, n_boot=2000, seed=0):
    """Bootstrap standard error of the median over seeds."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    return float(np.std(np.median(values[idx], axis=1), ddof=1))


def test_criterion_7_raw_y_ablation(acceptance_report):
    checks = Checks(7, acceptance_report)
    report = _continuous("sin")
    raw, kernel = _mses(report, "sagdiv-rawy"), _mses(report, "sagdiv-kernel")
    se = math.hypot(_median_se(raw), _median_se(kernel, seed=1))
    checks.add(
        "raw-Y median >= kernel median - 2 SE", np.median(raw) >= np.median(kernel) - 2 * se,
        f"{np.median(raw):.4f} vs {np.median(kernel):.4f} - 2*{se:.4f}",
    )
    checks.runtime(300.0)
    checks.finish()


def test_criterion_8_small_data(acceptance_report):
    checks = Checks(8, acceptance_report)
    for r in RESPONSES:
        report = _report("continuous", r, 1500, ["sagdiv-kernel", "naive"])
        sagd, naive = np.median(_mses(report, "sagdiv-kernel")), np.median(_mses(report, "naive"))
        checks.add(f"{r}: SAGD < naive at budget 1500", sagd < naive, f"{sagd:.4f} vs {naive:.4f}")
    checks.runtime(600.0)
    checks.finish()


def test_criterion_9_determinism_and_persistence(acceptance_report, tmp_path):
    checks = Checks(9, acceptance_report)
    cfg = tmp_path / "bench.yaml"
    cfg.write_text(
        "scenarios: [{outcome: continuous, response: abs}, {outcome: binary, response: sin}]\n"
        "methods: [sagdiv-kernel, sagdiv-rawy, kiv, 2sls, naive]\nrepetitions: 2\nbudget: 600\n"
    )
    codes = [main(["bench", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    checks.add("bench exits 0", codes == [0, 0], str(codes))
    for name in ("results.csv", "curves.csv", "summary.json"):
        same = (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        checks.add(f"{name} byte-identical on rerun", same)
    checks.add("summary parses", isinstance(json.loads((tmp_path / "a" / "summary.json").read_text()), dict))

    d = generate(ScenarioSpec("continuous", "sin", budget=1500), 3).baseline_data
    x = np.random.default_rng(0).uniform(-5, 5, size=(100, 1))
    for method in ("sagdiv-kernel", "sagdiv-rawy", "kiv", "2sls", "naive"):
        model = fit_on_data(parse_config(f"method: {method}"), Dataset(d.x, d.z, d.y), 0)
        save_model(tmp_path / f"{method}.json", method, model)
        _, loaded, _ = load_model(tmp_path / f"{method}.json")
        gap = float(np.max(np.abs(loaded(x) - model(x))))
        checks.add(f"{method} round trip to 1e-12", gap <= 1e-12, f"{gap:.1e}")
    checks.finish()
