"""``sagdiv bench | fit | predict``.

Set ``SAGDIV_LOG_LEVEL`` (e.g. ``DEBUG``) to change logging verbosity.
Exit codes: 0 success, 1 some benchmark cells failed, 2 bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from ..baselines import KIVModel, TSLSModel, fit_2sls, fit_kiv, fit_naive_krr
from ..benchmarks import CURVE_GRID, BINARY, run_scenario
from ..core import Dataset, LossSpec, SearchSetSpec
from ..errors import InvalidInputError, SagdivError
from ..kernel import RidgeModel
from ..sagd import SAGDConfig, SAGDModel, fit_kernel_sagdiv
from .config import RunConfig, load_config
from .persistence import load_model, save_model
from .tables import fmt, read_covariates, read_dataset, write_csv

log = logging.getLogger("sagdiv")

RESULT_COLUMNS = ["scenario", "method", "seed", "mse", "log10_mse", "fit_seconds", "rv_samples", "error"]


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


def cmd_bench(cfg: RunConfig, out_dir, threads: int = 1) -> int:
    if not cfg.scenarios:
        raise InvalidInputError("bench config lists no scenarios")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result_rows, curve_rows, summary = [], [], {}
    failed = 0
    for spec in cfg.scenarios:
        log.info("running %s: %d repetitions of %s", spec.name, cfg.repetitions, ", ".join(cfg.methods))
        report = run_scenario(spec, cfg.methods, cfg.repetitions, cfg.seed, cfg.options, threads, cfg.timings)
        for c in report.cells:
            result_rows.append(
                [c.scenario, c.method, c.seed, fmt(c.mse), fmt(c.log10_mse), fmt(c.fit_seconds), c.rv_samples, c.error or ""]
            )
        for c in report.failures():
            failed += 1
            log.error("%s / %s / seed %d failed: %s", c.scenario, c.method, c.seed, c.error)
        curve_rows += [[spec.name, "truth", fmt(x), fmt(v)] for x, v in zip(CURVE_GRID, report.truth_curve)]
        for method, values in report.curves.items():
            curve_rows += [[spec.name, method, fmt(x), fmt(v)] for x, v in zip(CURVE_GRID, values)]
        summary[spec.name] = report.summary()
    write_csv(out_dir / "results.csv", RESULT_COLUMNS, result_rows)
    write_csv(out_dir / "curves.csv", ["scenario", "method", "x", "h"], curve_rows)
    doc = {"config_sha256": cfg.sha256, "master_seed": cfg.seed, "repetitions": cfg.repetitions, "scenarios": summary}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 1 if failed else 0


def fit_on_data(cfg: RunConfig, data: Dataset, seed: int):
    """Fit ``cfg.method`` on user data.

    SAGD-IV variants use the first third of the rows for the preliminary
    estimators and the remaining rows as the instrument stream.
    """
    opts = dict(cfg.options.get(cfg.method, {}))
    if cfg.method in ("sagdiv-kernel", "sagdiv-rawy"):
        n_est = data.n // 3
        if n_est < 10:
            raise InvalidInputError("SAGD-IV needs at least 30 rows")
        est, stream = data.take(slice(0, n_est)), data.take(slice(n_est, None))
        loss = LossSpec.logistic_bce(cfg.beta) if cfg.outcome == BINARY else LossSpec.quadratic()
        config = SAGDConfig(opts.get("warm_up", 100), SearchSetSpec(opts.get("bound", 10.0)), loss)
        return fit_kernel_sagdiv(
            est, stream.z, config, y_stream=stream.y, raw_y=(cfg.method == "sagdiv-rawy"),
            seed=seed, density_options=opts.get("density_ratio"),
        )
    if cfg.method == "kiv":
        return fit_kiv(data, seed=seed, xi_rule=opts.get("xi_rule", "direct"))
    if cfg.method == "2sls":
        return fit_2sls(data)
    return fit_naive_krr(data, seed=seed)


def cmd_fit(cfg: RunConfig, data_path, out_path) -> int:
    data = read_dataset(data_path)
    model = fit_on_data(cfg, data, cfg.seed)
    save_model(out_path, cfg.method, model, {"config_sha256": cfg.sha256, "seed": cfg.seed})
    log.info("wrote %s model to %s", cfg.method, out_path)
    return 0


def _x_dim(model) -> int:
    if isinstance(model, SAGDModel):
        return model.train_x.shape[1]
    if isinstance(model, KIVModel):
        return model.stage1.x_train.shape[1]
    if isinstance(model, TSLSModel):
        return model.coef.size - 1
    if isinstance(model, RidgeModel):
        return model.inputs.shape[1]
    raise InvalidInputError(f"cannot determine covariate dimension of {type(model).__name__}")


def cmd_predict(model_path, data_path, out_path) -> int:
    _, model, _ = load_model(model_path)
    x = read_covariates(data_path)
    d = _x_dim(model)
    if x.shape[1] != d:
        raise InvalidInputError(f"model expects {d} covariate columns, file has {x.shape[1]}")
    pred = np.asarray(model(x), dtype=float) if x.shape[0] else np.empty(0)
    header = [f"x_{j}" for j in range(d)] + ["h_hat"]
    write_csv(out_path, header, [[fmt(v) for v in row] + [fmt(p)] for row, p in zip(x, pred)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for repetitions")
    parser = argparse.ArgumentParser(prog="sagdiv", description="Kernel SAGD-IV experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    bench = sub.add_parser("bench", parents=[common], help="run benchmark scenarios")
    bench.add_argument("--config", required=True)
    bench.add_argument("--out", required=True, help="output directory")
    fit = sub.add_parser("fit", parents=[common], help="fit a model on a data CSV")
    fit.add_argument("--config", required=True)
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True, help="model JSON path")
    predict = sub.add_parser("predict", parents=[common], help="predict with a saved model")
    predict.add_argument("--model", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SAGDIV_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise InvalidInputError("--threads must be >= 1")
        if args.command == "predict":
            return cmd_predict(args.model, args.data, args.out)
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise InvalidInputError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.command == "bench":
            return cmd_bench(cfg, args.out, args.threads)
        return cmd_fit(cfg, args.data, args.out)
    except (SagdivError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
