"""Command-line surface.

Subcommands: simulate, fit, predict, compare, sweep, estimate-alpha.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Diagnostics go to stderr; machine-readable output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .dataio import RunConfig, load_config, load_csv, save_csv
from .em import EMConfig, fit
from .evaluate import (
    ComparisonResult,
    SweepSpec,
    estimate_fractional_orders,
    rolling_prediction_report,
    run_latent_comparison,
    run_reveal_sweep,
)
from .exceptions import (
    CovarianceError,
    DataFormatError,
    DimensionMismatchError,
    FracnetidError,
    NumericalSingularityError,
    SingularSystemError,
    UnidentifiableInputError,
)
from .model import InputSequence, ModelParams, TimeSeriesMatrix, simulate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    NumericalSingularityError,
    SingularSystemError,
    UnidentifiableInputError,
    CovarianceError,
    np.linalg.LinAlgError,
)
_DATA_ERRORS = (DataFormatError, DimensionMismatchError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fracnetid", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument(
            "--threads",
            type=int,
            default=int(os.environ.get("FRACNETID_THREADS", "1")),
            help="worker pool size (env FRACNETID_THREADS)",
        )
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--plots", action="store_true", help="emit SVG plots")

    sp = sub.add_parser("simulate", help="simulate a model to trajectory CSV files")
    sp.add_argument("--params", required=True, help="model parameter JSON")
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--noiseless", action="store_true")
    sp.add_argument("--inputs", default=None, help="optional input CSV (time rows)")
    common(sp)

    sp = sub.add_parser("fit", help="fit the latent model per a run config")
    sp.add_argument("--config", required=True)
    common(sp)

    sp = sub.add_parser("predict", help="evaluate k-step predictions of a fitted model")
    sp.add_argument("--params", required=True, help="model parameter JSON")
    sp.add_argument("--data", required=True, help="dataset CSV")
    sp.add_argument("--horizon", type=int, default=5)
    sp.add_argument("--train-frac", type=float, default=0.8)
    common(sp)

    sp = sub.add_parser("compare", help="latent vs no-latent comparison table")
    sp.add_argument("--config", required=True)
    common(sp)

    sp = sub.add_parser("sweep", help="reveal-sweep table over a hidden pool")
    sp.add_argument("--config", required=True)
    common(sp)

    sp = sub.add_parser("estimate-alpha", help="per-channel fractional order estimates")
    sp.add_argument("--data", required=True)
    common(sp)

    return parser


def _out_dir(args, cfg: RunConfig | None = None) -> str:
    out = args.out or (cfg.out_dir if cfg is not None else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _resolve_alphas(cfg: RunConfig, data: TimeSeriesMatrix):
    """Vectors from the config, or data-driven estimates on request."""
    if isinstance(cfg.alpha_obs, str):
        alpha_obs = estimate_fractional_orders(
            TimeSeriesMatrix(values=data.values[cfg.observed_ids])
        )
    else:
        alpha_obs = np.asarray(cfg.alpha_obs, dtype=np.float64)
    if isinstance(cfg.alpha_lat, str):
        source = cfg.calibration_dataset
        if source is None:
            raise DataFormatError(
                "alpha_lat='estimate' needs calibration_dataset with those channels"
            )
        calib = load_csv(source)
        alpha_lat = estimate_fractional_orders(
            TimeSeriesMatrix(values=calib.values[cfg.hidden_ids])
        )
    else:
        alpha_lat = np.asarray(cfg.alpha_lat, dtype=np.float64)
    return alpha_obs, alpha_lat


def _write_csv_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow(row)


def _maybe_plot_trace(values, path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(np.arange(1, len(values) + 1), values, marker="o", markersize=2.5)
    ax.set_xlabel("iteration")
    ax.set_ylabel(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _maybe_plot_series(series: TimeSeriesMatrix, path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.2))
    labels = series.channel_labels or [f"ch{i}" for i in range(series.n_channels)]
    for i in range(series.n_channels):
        ax.plot(series.values[i], label=labels[i], linewidth=0.9)
    ax.set_xlabel("sample")
    ax.set_title(title)
    if series.n_channels <= 12:
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    params = ModelParams.from_json(args.params)
    out = _out_dir(args)
    inputs = None
    if args.inputs is not None:
        mat = load_csv(args.inputs)
        inputs = InputSequence(mat.values)
    seed = None if args.noiseless else (args.seed if args.seed is not None else 0)
    observed, latent = simulate(params, steps=args.steps, inputs=inputs, seed=seed)
    save_csv(observed, os.path.join(out, "observed.csv"))
    save_csv(latent, os.path.join(out, "latent.csv"))
    if args.plots:
        _maybe_plot_series(observed, os.path.join(out, "observed.svg"), "simulated observed channels")
    print(os.path.join(out, "observed.csv"))
    return EXIT_OK


def _load_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.em.seed = args.seed
    data = load_csv(cfg.dataset)
    for cid in list(cfg.observed_ids) + list(cfg.hidden_ids):
        if not (0 <= cid < data.n_channels):
            raise DataFormatError(f"channel id {cid} not in dataset ({data.n_channels} channels)")
    alpha_obs, alpha_lat = _resolve_alphas(cfg, data)
    return cfg, data, alpha_obs, alpha_lat


def _cmd_fit(args) -> int:
    cfg, data, alpha_obs, alpha_lat = _load_run(args)
    out = _out_dir(args, cfg)
    observed = TimeSeriesMatrix(values=data.values[cfg.observed_ids])
    report = fit(observed, alpha_obs, alpha_lat, m=cfg.m, p=cfg.p, config=cfg.em)
    path = os.path.join(out, "fit_report.json")
    report.to_json(path)
    if args.plots:
        _maybe_plot_trace(report.q_trace, os.path.join(out, "q_trace.svg"), "fit value")
    print(path)
    return EXIT_OK


def _cmd_predict(args) -> int:
    params = ModelParams.from_json(args.params)
    data = load_csv(args.data)
    out = _out_dir(args)
    report = rolling_prediction_report(
        params, data, horizon=args.horizon, train_frac=args.train_frac
    )
    if args.format == "json":
        path = os.path.join(out, "prediction_report.json")
        with open(path, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2)
            fh.write("\n")
    else:
        path = os.path.join(out, "prediction_report.csv")
        rows = [["channel", "relative_error"]]
        labels = data.channel_labels or [f"ch{i}" for i in range(data.n_channels)]
        for lbl, err in zip(labels, report.per_node_error):
            rows.append([lbl, f"{err:.17g}"])
        rows.append(["mean", f"{report.mean_error:.17g}"])
        _write_csv_rows(path, rows)
    if args.plots:
        _maybe_plot_series(
            report.predictions, os.path.join(out, "predictions.svg"), "held-out predictions"
        )
    print(path)
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg, data, alpha_obs, alpha_lat = _load_run(args)
    out = _out_dir(args, cfg)

    def one_seed(i: int) -> ComparisonResult:
        import dataclasses

        sub = dataclasses.replace(cfg.em, seed=cfg.em.seed + i)
        return run_latent_comparison(
            data, cfg.observed_ids, cfg.hidden_ids, alpha_obs, alpha_lat,
            config=sub, horizon=cfg.horizon, n_seeds=1, p=cfg.p,
            lam=cfg.lam_baseline, train_frac=cfg.train_frac, protocol=cfg.protocol,
            pool=cfg.pool,
        )

    if args.threads > 1 and cfg.seeds > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            parts = list(pool.map(one_seed, range(cfg.seeds)))
    else:
        parts = [one_seed(i) for i in range(cfg.seeds)]
    merged = ComparisonResult(
        observed_ids=list(cfg.observed_ids),
        hidden_ids=list(cfg.hidden_ids),
        horizon=cfg.horizon,
        rows=[r for part in parts for r in part.rows],
    )
    if args.format == "json":
        path = os.path.join(out, "comparison.json")
        with open(path, "w") as fh:
            json.dump(merged.to_json_dict(), fh, indent=2)
            fh.write("\n")
    else:
        path = os.path.join(out, "comparison.csv")
        _write_csv_rows(path, merged.to_csv_rows())
    print(path)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg, data, alpha_obs, alpha_lat = _load_run(args)
    if cfg.sweep is None:
        raise DataFormatError("sweep command needs a 'sweep' section in the config")
    out = _out_dir(args, cfg)
    spec = SweepSpec(
        fixed_observed=[int(i) for i in cfg.sweep["fixed_observed"]],
        reveal_order=[int(i) for i in cfg.sweep.get("reveal_order", [])],
        hidden_pool=[int(i) for i in cfg.sweep["hidden_pool"]],
    )
    alphas = np.zeros(data.n_channels)
    alphas[cfg.observed_ids] = alpha_obs
    alphas[cfg.hidden_ids] = alpha_lat
    result = run_reveal_sweep(
        data, spec, alphas, config=cfg.em, horizon=cfg.horizon, p=cfg.p,
        lam=cfg.lam_baseline, train_frac=cfg.train_frac, protocol=cfg.protocol,
        pool=cfg.pool,
    )
    if args.format == "json":
        path = os.path.join(out, "sweep.json")
        with open(path, "w") as fh:
            json.dump(result.to_json_dict(), fh, indent=2)
            fh.write("\n")
    else:
        path = os.path.join(out, "sweep.csv")
        _write_csv_rows(path, result.to_csv_rows())
    print(path)
    return EXIT_OK


def _cmd_estimate_alpha(args) -> int:
    data = load_csv(args.data)
    orders, degenerate = estimate_fractional_orders(data, return_diagnostics=True)
    labels = data.channel_labels or [f"ch{i}" for i in range(data.n_channels)]
    if args.format == "json":
        doc = {
            "orders": [float(v) for v in orders],
            "degenerate": [bool(b) for b in degenerate],
            "labels": labels,
        }
        print(json.dumps(doc, indent=2))
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["channel", "order", "degenerate"])
        for lbl, v, b in zip(labels, orders, degenerate):
            w.writerow([lbl, f"{v:.17g}", int(b)])
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
    "estimate-alpha": _cmd_estimate_alpha,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (*_DATA_ERRORS, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FracnetidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
