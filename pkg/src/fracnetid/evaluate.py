"""Prediction, error metrics, order estimation, and comparison harnesses.

The headline experiment fits the latent model and the no-latent baseline
on a training prefix, rolls k-step predictions over the held-out tail,
and reports the root-relative error per channel:

    e_i = sqrt( sum_k (x_i[k] - xhat_i[k])^2 / sum_k x_i[k]^2 )

Prediction anchors use only information available at the anchor: filtered
latent means up to the previous step, and zero for any input at or after
the anchor.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .em import EMConfig, FitReport, fit
from .exceptions import DimensionMismatchError
from .fracops import build_kernel
from .kalman import run_filter
from .model import (
    BaselineFit,
    InputSequence,
    ModelParams,
    TimeSeriesMatrix,
    baseline_fit_no_latent,
)


# ---------------------------------------------------------------------------
# k-step prediction
# ---------------------------------------------------------------------------


def predict_k_steps(
    params: ModelParams,
    observed_history,
    z_hat_history: Optional[np.ndarray] = None,
    inputs: Optional[InputSequence] = None,
    horizon: int = 1,
    return_latent: bool = False,
):
    """Noiseless forward iteration from the end of a history.

    ``observed_history`` holds x_0 .. x_t (the anchor is its last column);
    ``z_hat_history`` holds filtered means z_0 .. z_{t-1}.  The missing
    latent sample at the anchor is extended with the one-step predictor,
    then the stacked recursion runs ``horizon`` steps with all unknown
    future inputs held at zero.  Returns the predicted observed block
    (n, horizon); with ``return_latent=True`` also the predicted latent
    block (m, horizon+1) starting at the anchor.
    """
    n, m, p = params.n, params.m, params.p
    x = observed_history.values if isinstance(observed_history, TimeSeriesMatrix) else np.asarray(observed_history, dtype=np.float64)
    if x.shape[0] != n:
        raise DimensionMismatchError(f"history has {x.shape[0]} channels, model expects {n}")
    t = x.shape[1] - 1
    if t < 1:
        raise DimensionMismatchError("need at least 2 history samples to predict")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")

    if m > 0:
        if z_hat_history is None:
            raise DimensionMismatchError("z_hat_history is required when m > 0")
        zh = np.asarray(z_hat_history, dtype=np.float64)
        if zh.shape != (m, t):
            raise DimensionMismatchError(
                f"z_hat_history must have shape ({m}, {t}), got {zh.shape}"
            )
    else:
        zh = np.zeros((0, t))

    # Known input history; anything at or after the anchor stays zero.
    u_hist = np.zeros((p, max(t, 1)))
    if inputs is not None and p > 0 and inputs.values.size:
        avail = min(inputs.values.shape[1], t - 1)
        u_hist[:, 1 : 1 + avail] = inputs.values[:, :avail]

    d = n + m
    A = params.stacked_A()
    B = params.stacked_B()
    psi = build_kernel(params.stacked_alphas(), t + horizon).coeffs
    psi_lat = psi[n:]

    s = np.zeros((d, t + 1 + horizon))
    s[:n, : t + 1] = x
    if m > 0:
        s[n:, :t] = zh
        ext = params.A21 @ x[:, t - 1] + params.A22 @ zh[:, t - 1]
        if p > 0:
            ext = ext + params.B2 @ u_hist[:, t - 1]
        ext = ext - (psi_lat[:, 1 : t + 1] * zh[:, ::-1]).sum(axis=1)
        s[n:, t] = ext

    for i in range(1, horizon + 1):
        tau = t + i
        drift = A @ s[:, tau - 1]
        tail = (psi[:, 1 : tau + 1] * s[:, tau - 1 :: -1]).sum(axis=1)
        s[:, tau] = drift - tail

    pred_obs = TimeSeriesMatrix(values=s[:n, t + 1 :].copy())
    if return_latent:
        return pred_obs, s[n:, t:].copy()
    return pred_obs


def relative_error(truth, predicted) -> np.ndarray:
    """Root-relative error per channel; NaN flags a zero-energy channel."""
    xt = truth.values if isinstance(truth, TimeSeriesMatrix) else np.asarray(truth, dtype=np.float64)
    xp = predicted.values if isinstance(predicted, TimeSeriesMatrix) else np.asarray(predicted, dtype=np.float64)
    if xt.shape != xp.shape:
        raise DimensionMismatchError(f"shapes differ: {xt.shape} vs {xp.shape}")
    num = ((xt - xp) ** 2).sum(axis=1)
    den = (xt**2).sum(axis=1)
    out = np.full(xt.shape[0], np.nan)
    ok = den > 0
    out[ok] = np.sqrt(num[ok] / den[ok])
    return out


# ---------------------------------------------------------------------------
# Long-memory order estimation (detrended fluctuation analysis)
# ---------------------------------------------------------------------------


def _dfa_exponent(x: np.ndarray) -> float:
    n = x.size
    profile = np.cumsum(x - x.mean())
    sizes = np.unique(
        np.clip(np.round(np.logspace(np.log10(4), np.log10(n // 4), 12)), 4, n // 4).astype(int)
    )
    log_s, log_f = [], []
    for s in sizes:
        nseg = n // s
        if nseg < 2:
            continue
        segs = profile[: nseg * s].reshape(nseg, s)
        tgrid = np.arange(s, dtype=np.float64)
        # Linear detrend per segment via least squares on a shared grid.
        tg = tgrid - tgrid.mean()
        denom = (tg**2).sum()
        slopes = segs @ tg / denom
        resid = segs - segs.mean(axis=1, keepdims=True) - slopes[:, None] * tg[None, :]
        f2 = (resid**2).mean()
        if f2 <= 0:
            continue
        log_s.append(np.log(s))
        log_f.append(0.5 * np.log(f2))
    if len(log_s) < 3:
        return float("nan")
    slope = np.polyfit(np.asarray(log_s), np.asarray(log_f), 1)[0]
    return float(slope)


def estimate_fractional_orders(series: TimeSeriesMatrix, return_diagnostics: bool = False):
    """Heuristic per-channel order from the scaling of detrended fluctuations.

    A channel whose order-``a`` difference is white scales with exponent
    a + 1/2, so the estimate is the fitted exponent minus one half
    (clipped to [0, 2]).  This is an initializer, not part of the fitting
    loop, which takes orders as given.
    """
    x = series.values
    n, T = x.shape
    if T < 64:
        raise ValueError(f"need at least 64 samples per channel, have {T}")
    orders = np.zeros(n)
    degenerate = np.zeros(n, dtype=bool)
    for c in range(n):
        if np.ptp(x[c]) == 0.0:
            degenerate[c] = True
            continue
        h = _dfa_exponent(x[c])
        if not np.isfinite(h):
            degenerate[c] = True
            continue
        orders[c] = float(np.clip(h - 0.5, 0.0, 2.0))
    if return_diagnostics:
        return orders, degenerate
    return orders


# ---------------------------------------------------------------------------
# Rolling-origin evaluation shared by the harnesses
# ---------------------------------------------------------------------------


@dataclass
class PredictionReport:
    horizon: int
    per_node_error: np.ndarray
    mean_error: float
    predictions: TimeSeriesMatrix

    def to_json_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "per_node_error": [None if not np.isfinite(v) else float(v) for v in self.per_node_error],
            "mean_error": None if not np.isfinite(self.mean_error) else float(self.mean_error),
            "predictions": self.predictions.values.tolist(),
        }


def _anchors(T: int, horizon: int, train_frac: float, protocol: str) -> list[int]:
    t0 = max(1, int(np.ceil(train_frac * T)) - 1)
    t_last = T - 1 - horizon
    if t_last < t0:
        raise DimensionMismatchError(
            f"record too short for horizon {horizon} with train fraction {train_frac}"
        )
    if protocol == "single":
        return [t0]
    if protocol == "rolling":
        return list(range(t0, t_last + 1))
    raise ValueError(f"protocol must be 'rolling' or 'single', got {protocol!r}")


def rolling_prediction_report(
    params: ModelParams,
    observed: TimeSeriesMatrix,
    inputs: Optional[InputSequence] = None,
    horizon: int = 5,
    train_frac: float = 0.8,
    protocol: str = "rolling",
    pool: str = "all",
    error_channels: Optional[Sequence[int]] = None,
) -> PredictionReport:
    """Evaluate k-step predictions over the held-out tail of a record.

    Each rolling anchor forecasts ``horizon`` steps; with ``pool='all'``
    every forecast step enters the error sum (the error averages leads
    1..horizon), with ``pool='final'`` only the horizon-step value does.
    The single protocol scores one forecast from the first anchor.
    """
    if pool not in ("all", "final"):
        raise ValueError(f"pool must be 'all' or 'final', got {pool!r}")
    x = observed.values
    T = x.shape[1]
    m = params.m
    anchors = _anchors(T, horizon, train_frac, protocol)

    zf = None
    if m > 0:
        filt = run_filter(params, observed, inputs=inputs)
        zf = filt.z_hat_full()

    if protocol == "single":
        t = anchors[0]
        pred = predict_k_steps(
            params, x[:, : t + 1], zf[:, :t] if m > 0 else None, inputs, horizon
        )
        truth = x[:, t + 1 : t + 1 + horizon]
        pred_vals = pred.values
    else:
        cols_pred = []
        cols_truth = []
        for t in anchors:
            pr = predict_k_steps(
                params, x[:, : t + 1], zf[:, :t] if m > 0 else None, inputs, horizon
            )
            if pool == "all":
                cols_pred.append(pr.values)
                cols_truth.append(x[:, t + 1 : t + 1 + horizon])
            else:
                cols_pred.append(pr.values[:, -1:])
                cols_truth.append(x[:, t + horizon : t + horizon + 1])
        pred_vals = np.hstack(cols_pred)
        truth = np.hstack(cols_truth)

    errors = relative_error(truth, pred_vals)
    sel = np.arange(x.shape[0]) if error_channels is None else np.asarray(error_channels, dtype=int)
    chosen = errors[sel]
    mean_err = float(np.nanmean(chosen)) if chosen.size else float("nan")
    return PredictionReport(
        horizon=horizon,
        per_node_error=errors,
        mean_error=mean_err,
        predictions=TimeSeriesMatrix(values=pred_vals),
    )


def baseline_params(bl: BaselineFit, alpha_obs) -> ModelParams:
    """Wrap a no-latent fit as a zero-latent model for prediction."""
    n = bl.A.shape[0]
    p = bl.B1.shape[1]
    return ModelParams(
        A11=bl.A,
        A12=np.zeros((n, 0)),
        A21=np.zeros((0, n)),
        A22=np.zeros((0, 0)),
        B1=bl.B1,
        B2=np.zeros((0, p)),
        Sigma1=bl.Sigma1,
        Sigma2=np.zeros((0, 0)),
        alpha_obs=alpha_obs,
        alpha_lat=np.zeros(0),
    )


# ---------------------------------------------------------------------------
# Latent vs no-latent comparison (one observed/hidden split)
# ---------------------------------------------------------------------------


@dataclass
class ComparisonRow:
    seed: int
    errors_with: np.ndarray
    errors_without: np.ndarray
    mean_with: float
    mean_without: float
    converged: bool
    iterations: int


@dataclass
class ComparisonResult:
    observed_ids: list[int]
    hidden_ids: list[int]
    horizon: int
    rows: list[ComparisonRow]

    @property
    def win_rate(self) -> float:
        wins = [r.mean_with <= r.mean_without for r in self.rows]
        return float(np.mean(wins)) if wins else float("nan")

    def to_json_dict(self) -> dict:
        return {
            "observed_ids": list(self.observed_ids),
            "hidden_ids": list(self.hidden_ids),
            "horizon": self.horizon,
            "win_rate": self.win_rate,
            "rows": [
                {
                    "seed": r.seed,
                    "errors_with": r.errors_with.tolist(),
                    "errors_without": r.errors_without.tolist(),
                    "mean_with": r.mean_with,
                    "mean_without": r.mean_without,
                    "converged": r.converged,
                    "iterations": r.iterations,
                }
                for r in self.rows
            ],
        }

    def to_csv_rows(self) -> list[list]:
        head = ["seed", "mean_without", "mean_with", "converged", "iterations"]
        head += [f"without_ch{i}" for i in self.observed_ids]
        head += [f"with_ch{i}" for i in self.observed_ids]
        out = [head]
        for r in self.rows:
            row = [r.seed, f"{r.mean_without:.17g}", f"{r.mean_with:.17g}", int(r.converged), r.iterations]
            row += [f"{v:.17g}" for v in r.errors_without]
            row += [f"{v:.17g}" for v in r.errors_with]
            out.append(row)
        return out


def run_latent_comparison(
    data: TimeSeriesMatrix,
    observed_ids: Sequence[int],
    hidden_ids: Sequence[int],
    alpha_obs,
    alpha_lat,
    config: Optional[EMConfig] = None,
    horizon: int = 5,
    n_seeds: int = 1,
    p: int = 0,
    lam: float = 0.0,
    train_frac: float = 0.8,
    protocol: str = "rolling",
    pool: str = "all",
) -> ComparisonResult:
    """Fit both models on a training prefix and compare tail predictions.

    Seeds offset the fit initialization; the record itself is fixed.  The
    without-latent column always uses the same training prefix and the
    same anchors, so the two columns differ only in the model.
    """
    config = config or EMConfig()
    observed_ids = [int(i) for i in observed_ids]
    hidden_ids = [int(i) for i in hidden_ids]
    x_obs = data.values[observed_ids]
    T = x_obs.shape[1]
    T_train = int(np.ceil(train_frac * T))
    train = TimeSeriesMatrix(values=x_obs[:, :T_train].copy())
    full = TimeSeriesMatrix(values=x_obs.copy())
    m = len(hidden_ids)
    alpha_obs = np.asarray(alpha_obs, dtype=np.float64).ravel()
    alpha_lat = np.asarray(alpha_lat, dtype=np.float64).ravel()

    rows = []
    for i in range(n_seeds):
        cfg = dataclasses.replace(config, seed=config.seed + i)
        rep = fit(train, alpha_obs, alpha_lat, m=m, p=p, config=cfg)
        with_report = rolling_prediction_report(
            rep.theta_final, full, inputs=_padded_inputs(rep, T) if p > 0 else None,
            horizon=horizon, train_frac=train_frac, protocol=protocol, pool=pool,
        )

        bl = baseline_fit_no_latent(train, alpha_obs, lam=lam if p > 0 else 0.0, p=p)
        base_model = baseline_params(bl, alpha_obs)
        without_report = rolling_prediction_report(
            base_model, full, inputs=_padded_baseline_inputs(bl, T) if p > 0 else None,
            horizon=horizon, train_frac=train_frac, protocol=protocol, pool=pool,
        )

        ew = with_report.per_node_error
        eo = without_report.per_node_error
        rows.append(
            ComparisonRow(
                seed=cfg.seed,
                errors_with=ew,
                errors_without=eo,
                mean_with=float(np.nanmean(ew)),
                mean_without=float(np.nanmean(eo)),
                converged=rep.converged,
                iterations=rep.iterations,
            )
        )
    return ComparisonResult(
        observed_ids=observed_ids, hidden_ids=hidden_ids, horizon=horizon, rows=rows
    )


def _padded_inputs(rep: FitReport, T: int) -> InputSequence:
    vals = rep.inputs_final.values
    p = vals.shape[0]
    out = np.zeros((p, T - 2))
    out[:, : vals.shape[1]] = vals
    return InputSequence(out)


def _padded_baseline_inputs(bl: BaselineFit, T: int) -> InputSequence:
    vals = bl.inputs.values
    p = vals.shape[0]
    out = np.zeros((p, T - 2))
    out[:, : vals.shape[1]] = vals
    return InputSequence(out)


# ---------------------------------------------------------------------------
# Reveal sweep (move channels from hidden pool to observed set)
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    """Which channels stay fixed, which get revealed, and in what order."""

    fixed_observed: list[int]
    reveal_order: list[int]
    hidden_pool: list[int]

    def __post_init__(self):
        fixed = set(self.fixed_observed)
        pool = set(self.hidden_pool)
        if fixed & pool:
            raise ValueError("fixed_observed and hidden_pool must be disjoint")
        if not set(self.reveal_order) <= pool:
            raise ValueError("reveal_order must be a subset of hidden_pool")
        if len(set(self.reveal_order)) != len(self.reveal_order):
            raise ValueError("reveal_order has duplicates")

    def positions(self):
        """(observed_ids, hidden_ids) per sweep position."""
        out = []
        for i in range(len(self.reveal_order) + 1):
            revealed = self.reveal_order[:i]
            observed = list(self.fixed_observed) + list(revealed)
            hidden = [c for c in self.hidden_pool if c not in revealed]
            out.append((observed, hidden))
        return out


@dataclass
class SweepResult:
    spec: SweepSpec
    horizon: int
    labels: list[str]
    errors_without: list[float]
    errors_with: list[float]
    converged: list[bool]

    def to_json_dict(self) -> dict:
        return {
            "fixed_observed": list(self.spec.fixed_observed),
            "reveal_order": list(self.spec.reveal_order),
            "hidden_pool": list(self.spec.hidden_pool),
            "horizon": self.horizon,
            "labels": list(self.labels),
            "errors_without": [float(v) for v in self.errors_without],
            "errors_with": [float(v) for v in self.errors_with],
            "converged": list(map(bool, self.converged)),
        }

    def to_csv_rows(self) -> list[list]:
        out = [["position"] + self.labels]
        out.append(["without_latent"] + [f"{v:.17g}" for v in self.errors_without])
        out.append(["with_latent"] + [f"{v:.17g}" for v in self.errors_with])
        return out


def run_reveal_sweep(
    data: TimeSeriesMatrix,
    spec: SweepSpec,
    alphas,
    config: Optional[EMConfig] = None,
    horizon: int = 5,
    p: int = 0,
    lam: float = 0.0,
    train_frac: float = 0.8,
    protocol: str = "rolling",
    pool: str = "all",
) -> SweepResult:
    """Fit both models at every reveal position of the sweep.

    Reported errors are averaged over the fixed observed channels only,
    so columns are comparable as the observed set grows.
    """
    config = config or EMConfig()
    alphas = np.asarray(alphas, dtype=np.float64).ravel()
    if alphas.shape[0] != data.n_channels:
        raise DimensionMismatchError("alphas must cover every channel of the data")
    for cid in list(spec.fixed_observed) + list(spec.hidden_pool):
        if not (0 <= cid < data.n_channels):
            raise DimensionMismatchError(f"channel id {cid} out of range")

    n_fixed = len(spec.fixed_observed)
    labels, errs_wo, errs_wi, convs = [], [], [], []
    for observed, hidden in spec.positions():
        res = run_latent_comparison(
            data,
            observed,
            hidden,
            alphas[observed],
            alphas[hidden],
            config=config,
            horizon=horizon,
            n_seeds=1,
            p=p,
            lam=lam,
            train_frac=train_frac,
            protocol=protocol,
            pool=pool,
        )
        row = res.rows[0]
        fixed_idx = np.arange(n_fixed)
        errs_wi.append(float(np.nanmean(row.errors_with[fixed_idx])))
        errs_wo.append(float(np.nanmean(row.errors_without[fixed_idx])))
        convs.append(row.converged)
        revealed = [str(c) for c in observed[n_fixed:]]
        labels.append("phi" if not revealed else "+" + ",".join(revealed))
    return SweepResult(
        spec=spec,
        horizon=horizon,
        labels=labels,
        errors_without=errs_wo,
        errors_with=errs_wi,
        converged=convs,
    )
