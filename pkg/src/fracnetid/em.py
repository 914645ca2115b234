"""Alternating estimation of parameters, latent states, and inputs.

One iteration runs the latent-state filter, re-estimates the sparse
inputs, then updates every coupling/input/noise block in closed form
(block normal equations for the A/B blocks, expected residual second
moments for the noise blocks).  The fractional orders are consumed as
inputs and stay fixed throughout; see ``evaluate.estimate_fractional_orders``
for a data-driven initializer.

The reported fit quality is the expected complete-data log likelihood
with additive constants dropped (not the marginal likelihood of the
observations).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import CovarianceError, DimensionMismatchError, SingularSystemError
from .fracops import build_kernel, frac_diff_values
from .inputs import estimate_all_inputs, resolve_lambda
from .kalman import FilterResult, _filter_prepared
from .model import InputSequence, ModelParams, TimeSeriesMatrix

FIT_REPORT_FORMAT_VERSION = 1


@dataclass
class EMConfig:
    """Knobs of the alternating fit.

    ``lam=None`` resolves to a tenth of the first timestep's
    shrink-to-zero threshold once the first input estimate runs.  ``tol``
    is relative: the loop stops when |dQ| < tol * |Q|.
    """

    lam: Optional[float] = None
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0
    init_range: float = 1.0
    input_tol: float = 1e-8
    input_max_iter: int = 2000

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.init_range <= 0:
            raise ValueError(f"init_range must be > 0, got {self.init_range}")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


@dataclass
class EStepQuantities:
    """Everything the parameter update needs from one E-step.

    ``x``/``xr`` are the record and its fractional difference, (n, N+1).
    ``z_hat_full`` is (m, N) with the initial condition in column 0;
    ``P_hat_full`` is (N, m, m); ``u_full`` is (p, N) with u_0 in column
    0; ``zr`` is the fractional difference of ``z_hat_full``; ``psi_lat``
    holds the latent-order coefficient table for lags 0 .. N-1.
    """

    x: np.ndarray
    xr: np.ndarray
    z_hat_full: np.ndarray
    P_hat_full: np.ndarray
    u_full: np.ndarray
    zr: np.ndarray
    psi_lat: np.ndarray

    @property
    def N(self) -> int:
        return self.x.shape[1] - 1


def build_estep_quantities(
    observed: TimeSeriesMatrix,
    alpha_obs,
    alpha_lat,
    filt: FilterResult,
    inputs: Optional[InputSequence] = None,
    p: int = 0,
) -> EStepQuantities:
    """Assemble the update bundle from a filter pass and input estimates."""
    x = observed.values
    T = x.shape[1]
    N = T - 1
    alpha_obs = np.asarray(alpha_obs, dtype=np.float64).ravel()
    alpha_lat = np.asarray(alpha_lat, dtype=np.float64).ravel()
    m = alpha_lat.shape[0]

    xr = frac_diff_values(x, build_kernel(alpha_obs, T - 1))
    zf = filt.z_hat_full()
    Pf = filt.P_hat_full()
    if zf.shape != (m, N):
        raise DimensionMismatchError(
            f"filter output covers {zf.shape[1]} steps, record implies {N}"
        )
    psi_lat = build_kernel(alpha_lat, N - 1).coeffs if m > 0 else np.zeros((0, N))
    zr = frac_diff_values(zf, build_kernel(alpha_lat, N - 1)) if m > 0 else np.zeros((0, N))

    if inputs is None:
        u_full = np.zeros((p, N))
    else:
        u_full = np.zeros((inputs.p, N))
        if inputs.values.shape[1] != N - 1:
            raise DimensionMismatchError(
                f"inputs must cover {N - 1} steps, got {inputs.values.shape[1]}"
            )
        u_full[:, 1:] = inputs.values
    return EStepQuantities(x, xr, zf, Pf, u_full, zr, psi_lat)


def _solve_block(G: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve G W = C for symmetric PSD G, ridging if G is singular."""
    d = G.shape[0]
    if d == 0:
        return np.zeros((0, C.shape[1])), False
    scale = max(1.0, float(np.abs(G).max()))
    try:
        cf = cho_factor(G, lower=True, check_finite=False)
        if np.min(np.abs(np.diag(cf[0]))) <= 1e-6 * np.sqrt(scale):
            raise np.linalg.LinAlgError
        return cho_solve(cf, C, check_finite=False), False
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-8 * float(np.trace(G)) / d
    if ridge <= 0.0:
        if float(np.abs(C).max(initial=0.0)) == 0.0:
            return np.zeros((d, C.shape[1])), True
        raise SingularSystemError("Gram matrix is zero with a nonzero right-hand side")
    Gr = G + ridge * np.eye(d)
    cf = cho_factor(Gr, lower=True, check_finite=False)
    return cho_solve(cf, C, check_finite=False), True


def _floor_spd(S: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    if S.shape[0] == 0:
        return S.copy()
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    return (V * np.clip(w, floor, None)) @ V.T


def _lagged_cov_sum(Pf: np.ndarray, psi_lat: np.ndarray, N: int) -> np.ndarray:
    """sum_{k=1..N-1} sum_{j=2..k} C_j P_{k-j} C_j' with diagonal C_j.

    Uses cumulative sums of the covariance history: the inner double sum
    collapses to sum_j outer(c_j, c_j) * (sum_{l<=N-1-j} P_l).
    """
    m = Pf.shape[1]
    if m == 0 or N < 3:
        return np.zeros((m, m))
    CP = np.cumsum(Pf, axis=0)
    psis = psi_lat[:, 2:N]          # lags j = 2 .. N-1
    hist = CP[N - 3 :: -1]          # cumulative sums N-1-j = N-3 .. 0
    return np.einsum("ai,bi,iab->ab", psis, psis, hist)


def _residual_moments(theta: ModelParams, eq: EStepQuantities):
    """Expected residual second moments S1 (over N steps) and S2 (N-1)."""
    n, m, p = theta.n, theta.m, theta.p
    N = eq.N
    X1 = eq.x[:, 0:N]
    Z1 = eq.z_hat_full[:, 0:N]
    U1 = eq.u_full[:, 0:N]

    R1 = eq.xr[:, 1 : N + 1] - theta.A11 @ X1
    if m > 0:
        R1 = R1 - theta.A12 @ Z1
    if p > 0:
        R1 = R1 - theta.B1 @ U1
    S1 = R1 @ R1.T
    if m > 0:
        S1 = S1 + theta.A12 @ eq.P_hat_full.sum(axis=0) @ theta.A12.T

    if m == 0:
        return S1, np.zeros((0, 0))

    X2 = eq.x[:, 0 : N - 1]
    Z2 = eq.z_hat_full[:, 0 : N - 1]
    U2 = eq.u_full[:, 0 : N - 1]
    R2 = eq.zr[:, 1:N] - theta.A21 @ X2 - theta.A22 @ Z2
    if p > 0:
        R2 = R2 - theta.B2 @ U2
    Am = np.diag(eq.psi_lat[:, 1]) - theta.A22
    Pf_head = eq.P_hat_full[0 : N - 1].sum(axis=0)
    S2 = (
        R2 @ R2.T
        + eq.P_hat_full[1:N].sum(axis=0)
        + Am @ Pf_head @ Am.T
        + _lagged_cov_sum(eq.P_hat_full, eq.psi_lat, N)
    )
    return S1, S2


def m_step(theta_shape: ModelParams, eq: EStepQuantities) -> tuple[ModelParams, bool]:
    """Closed-form update of all coupling/input/noise blocks.

    ``theta_shape`` only supplies dimensions and the (fixed) fractional
    orders.  Returns the updated parameters and a flag saying whether a
    singular Gram matrix forced a ridge-regularized solve.
    """
    n, m, p = theta_shape.n, theta_shape.m, theta_shape.p
    N = eq.N
    ridge_used = False

    X1 = eq.x[:, 0:N]
    Z1 = eq.z_hat_full[:, 0:N]
    U1 = eq.u_full[:, 0:N]
    D1 = np.vstack([X1, Z1, U1])
    G1 = D1 @ D1.T
    if m > 0:
        G1[n : n + m, n : n + m] += eq.P_hat_full[0:N].sum(axis=0)
    C1 = D1 @ eq.xr[:, 1 : N + 1].T
    W1, r1 = _solve_block(G1, C1)
    ridge_used |= r1
    A11 = W1[:n].T
    A12 = W1[n : n + m].T
    B1 = W1[n + m :].T

    if m > 0:
        X2 = eq.x[:, 0 : N - 1]
        Z2 = eq.z_hat_full[:, 0 : N - 1]
        U2 = eq.u_full[:, 0 : N - 1]
        D2 = np.vstack([X2, Z2, U2])
        G2 = D2 @ D2.T
        Pf_head = eq.P_hat_full[0 : N - 1].sum(axis=0)
        G2[n : n + m, n : n + m] += Pf_head
        C2 = D2 @ eq.zr[:, 1:N].T
        C2[n : n + m] += Pf_head * eq.psi_lat[:, 1][None, :]
        W2, r2 = _solve_block(G2, C2)
        ridge_used |= r2
        A21 = W2[:n].T
        A22 = W2[n : n + m].T
        B2 = W2[n + m :].T
    else:
        A21 = np.zeros((0, n))
        A22 = np.zeros((0, 0))
        B2 = np.zeros((0, p))

    updated = ModelParams(
        A11=A11,
        A12=A12,
        A21=A21,
        A22=A22,
        B1=B1,
        B2=B2,
        Sigma1=np.eye(n),
        Sigma2=np.eye(m),
        alpha_obs=theta_shape.alpha_obs,
        alpha_lat=theta_shape.alpha_lat,
    )
    S1, S2 = _residual_moments(updated, eq)
    updated.Sigma1 = _floor_spd(S1 / N)
    updated.Sigma2 = _floor_spd(S2 / (N - 1)) if m > 0 else np.zeros((0, 0))
    return updated, ridge_used


def sigma_updates_paper_form(theta: ModelParams, eq: EStepQuantities):
    """Literal one-sided noise updates (residual times target transpose).

    Kept for transcription checks only: at the block optimum these equal
    the expected residual second moments, but away from it they can be
    asymmetric or indefinite.  Returned unsymmetrized and unfloored.
    """
    n, m, p = theta.n, theta.m, theta.p
    N = eq.N
    X1 = eq.x[:, 0:N]
    Z1 = eq.z_hat_full[:, 0:N]
    U1 = eq.u_full[:, 0:N]
    R1 = eq.xr[:, 1 : N + 1] - theta.A11 @ X1
    if m > 0:
        R1 = R1 - theta.A12 @ Z1
    if p > 0:
        R1 = R1 - theta.B1 @ U1
    Sigma1_raw = R1 @ eq.xr[:, 1 : N + 1].T / N

    if m == 0:
        return Sigma1_raw, np.zeros((0, 0))

    Zr = eq.zr[:, 1:N]
    X2 = eq.x[:, 0 : N - 1]
    Z2 = eq.z_hat_full[:, 0 : N - 1]
    U2 = eq.u_full[:, 0 : N - 1]
    Pf_head = eq.P_hat_full[0 : N - 1].sum(axis=0)
    acc = eq.P_hat_full[1:N].sum(axis=0).copy()
    # sum over k of sum_{j=1..k} C_j P_{k-j} C_j'
    psi1 = eq.psi_lat[:, 1]
    acc += np.outer(psi1, psi1) * Pf_head
    acc += _lagged_cov_sum(eq.P_hat_full, eq.psi_lat, N)
    acc += Zr @ Zr.T
    acc -= theta.A21 @ (X2 @ Zr.T)
    acc -= theta.A22 @ (Pf_head * psi1[None, :] + Z2 @ Zr.T)
    if p > 0:
        acc -= theta.B2 @ (U2 @ Zr.T)
    Sigma2_raw = acc / (N - 1)
    return Sigma1_raw, Sigma2_raw


def _pd_logdet_inv(S: np.ndarray, name: str) -> tuple[float, np.ndarray]:
    try:
        cf = cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise CovarianceError(f"{name} must be positive definite for the fit value") from None
    logdet = 2.0 * float(np.sum(np.log(np.abs(np.diag(cf[0])))))
    inv = cho_solve(cf, np.eye(S.shape[0]), check_finite=False)
    return logdet, inv


def q_value(theta: ModelParams, eq: EStepQuantities) -> float:
    """Expected complete-data log likelihood, additive constants dropped."""
    m = theta.m
    N = eq.N
    S1, S2 = _residual_moments(theta, eq)

    logdet1, W1 = _pd_logdet_inv(theta.Sigma1, "Sigma1")
    q = -0.5 * N * logdet1 - 0.5 * float(np.trace(W1 @ S1))

    if m > 0:
        logdet2, W2 = _pd_logdet_inv(theta.Sigma2, "Sigma2")
        q += -0.5 * (N - 1) * logdet2 - 0.5 * float(np.trace(W2 @ S2))
    return float(q)


@dataclass
class FitReport:
    """Outcome of one alternating fit."""

    theta_final: ModelParams
    q_trace: np.ndarray
    z_hat_final: np.ndarray
    inputs_final: InputSequence
    iterations: int
    converged: bool
    config: EMConfig
    lam_resolved: float
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "format_version": FIT_REPORT_FORMAT_VERSION,
            "theta": self.theta_final.to_json_dict(),
            "q_trace": [float(v) for v in self.q_trace],
            "z_hat": self.z_hat_final.tolist(),
            "inputs": self.inputs_final.values.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "config": cfg,
            "lam_resolved": self.lam_resolved,
            "warnings": list(self.warnings),
        }

    def to_json(self, path=None) -> str:
        doc = json.dumps(self.to_json_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(doc + "\n")
        return doc


def _init_params(
    n: int, m: int, p: int, alpha_obs, alpha_lat, seed: int, init_range: float
) -> ModelParams:
    rng = np.random.default_rng(seed)

    def draw(rows, cols):
        return rng.uniform(-init_range, init_range, size=(rows, cols))

    return ModelParams(
        A11=draw(n, n),
        A12=draw(n, m),
        A21=draw(m, n),
        A22=draw(m, m),
        B1=draw(n, p),
        B2=draw(m, p),
        Sigma1=np.eye(n),
        Sigma2=np.eye(m),
        alpha_obs=alpha_obs,
        alpha_lat=alpha_lat,
    )


def fit(
    observed: TimeSeriesMatrix,
    alpha_obs,
    alpha_lat,
    m: int,
    p: int,
    config: Optional[EMConfig] = None,
) -> FitReport:
    """Identify the full parameter set from one observed record.

    Latent dimension ``m`` and input dimension ``p`` are user choices;
    the fractional orders are fixed inputs.  The loop alternates the
    latent filter, the sparse input step (when ``p > 0``), and the
    closed-form parameter update until the fit value stalls.
    """
    config = config or EMConfig()
    x = observed.values
    n, T = x.shape
    N = T - 1
    alpha_obs = np.asarray(alpha_obs, dtype=np.float64).ravel()
    alpha_lat = np.asarray(alpha_lat, dtype=np.float64).ravel()
    if alpha_obs.shape != (n,):
        raise DimensionMismatchError(f"alpha_obs must have length {n}")
    if alpha_lat.shape != (m,):
        raise DimensionMismatchError(f"alpha_lat must have length {m}")
    if N < max(n + m + p + 2, 3):
        raise DimensionMismatchError(
            f"record too short: need N >= {max(n + m + p + 2, 3)}, have {N}"
        )

    warnings: list[str] = []
    xr = frac_diff_values(x, build_kernel(alpha_obs, T - 1))
    kern_lat = build_kernel(alpha_lat, N - 1)
    psi_lat = kern_lat.coeffs if m > 0 else np.zeros((0, N))

    params = _init_params(n, m, p, alpha_obs, alpha_lat, config.seed, config.init_range)
    u_full = np.zeros((p, N))
    z0 = np.zeros(m)
    P0 = np.eye(m)
    lam = config.lam if config.lam is not None else 0.0
    lam_resolved = lam

    if m == 0 and p == 0:
        filt = _filter_prepared(params, x, xr, u_full, z0, P0, psi_lat)
        eq = EStepQuantities(x, xr, filt.z_hat_full(), filt.P_hat_full(), u_full,
                             np.zeros((0, N)), psi_lat)
        params, ridged = m_step(params, eq)
        if ridged:
            warnings.append("ridge-regularized Gram solve at iteration 1")
        q = q_value(params, eq)
        return FitReport(
            theta_final=params,
            q_trace=np.array([q]),
            z_hat_final=np.zeros((0, N - 1)),
            inputs_final=InputSequence(np.zeros((0, N - 1))),
            iterations=1,
            converged=True,
            config=config,
            lam_resolved=0.0,
        )

    q_trace: list[float] = []
    converged = False
    zf = np.zeros((m, N))
    it = 0
    for it in range(1, config.max_iter + 1):
        filt = _filter_prepared(params, x, xr, u_full, z0, P0, psi_lat)
        zf = filt.z_hat_full()
        Pf = filt.P_hat_full()
        zr = frac_diff_values(zf, kern_lat) if m > 0 else np.zeros((0, N))

        if p > 0:
            if config.lam is None and it == 1:
                lam = resolve_lambda(params, observed, zf, xr=xr, zr=zr)
                lam_resolved = lam
            seq = estimate_all_inputs(
                params, observed, zf, lam,
                tol=config.input_tol, max_iter=config.input_max_iter,
                xr=xr, zr=zr,
            )
            u_full[:, 1:] = seq.values

        eq = EStepQuantities(x, xr, zf, Pf, u_full, zr, psi_lat)
        params, ridged = m_step(params, eq)
        if ridged:
            warnings.append(f"ridge-regularized Gram solve at iteration {it}")
        q = q_value(params, eq)
        q_trace.append(q)
        if len(q_trace) >= 2:
            dq = abs(q_trace[-1] - q_trace[-2])
            if dq <= config.tol * abs(q_trace[-1]):
                converged = True
                break

    return FitReport(
        theta_final=params,
        q_trace=np.asarray(q_trace),
        z_hat_final=zf[:, 1:].copy(),
        inputs_final=InputSequence(u_full[:, 1:].copy()),
        iterations=it,
        converged=converged,
        config=config,
        lam_resolved=lam_resolved,
        warnings=warnings,
    )
