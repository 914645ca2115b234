"""Latent-state filtering for the coupled long-memory system.

The filter tracks the latent block conditioned on observations one step
ahead (the state equation ties z_k to x_{k+1}), so filtered estimates
exist for k = 1 .. N-1 when the record holds x_0 .. x_N.  Prediction
covariances accumulate contributions from every past filtered covariance
through the lagged coefficient diagonals; conditional cross-covariances
between distinct past steps are taken as zero (the tree-structured
conditioning approximation), which is what makes the recursion closed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import backend
from .exceptions import CovarianceError, DimensionMismatchError, NumericalSingularityError
from .fracops import build_kernel, frac_diff_values
from .model import InputSequence, ModelParams, TimeSeriesMatrix, check_psd


@dataclass
class FilterResult:
    """Filtered and predicted latent moments for steps k = 1 .. N-1.

    Column ``k-1`` (or slot ``k-1``) of each array holds step ``k``.
    ``z0``/``P0`` are the initial condition at step 0.
    """

    z_hat: np.ndarray
    P_hat: np.ndarray
    z_tilde: np.ndarray
    P_tilde: np.ndarray
    gains: np.ndarray
    innovations: np.ndarray
    z0: np.ndarray
    P0: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.z_hat.shape[1]

    def z_hat_full(self) -> np.ndarray:
        """(m, N) means including the initial condition in column 0."""
        return np.hstack([self.z0[:, None], self.z_hat])

    def P_hat_full(self) -> np.ndarray:
        """(N, m, m) covariances including the initial condition in slot 0."""
        return np.concatenate([self.P0[None], self.P_hat], axis=0)


def _inv_spd(S: np.ndarray, name: str) -> np.ndarray:
    if S.shape[0] == 0:
        return S.copy()
    try:
        cf = cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalSingularityError(f"{name} is not positive definite") from None
    if np.min(np.abs(np.diag(cf[0]))) <= 1e-12:
        raise NumericalSingularityError(f"{name} is numerically singular")
    out = cho_solve(cf, np.eye(S.shape[0]), check_finite=False)
    return 0.5 * (out + out.T)


def _filter_prepared(
    params: ModelParams,
    x: np.ndarray,
    xr: np.ndarray,
    u_full: np.ndarray,
    z0: np.ndarray,
    P0: np.ndarray,
    psi_lat: np.ndarray,
) -> FilterResult:
    """Filter over a record whose fractional difference is precomputed.

    ``x``/``xr`` are (n, N+1); ``u_full`` is (p, N) with u_0 in column 0;
    ``psi_lat`` must cover lags 0 .. N-1.
    """
    n, m, p = params.n, params.m, params.p
    N = x.shape[1] - 1
    K = N - 1

    y = xr[:, 2 : N + 1] - params.A11 @ x[:, 1:N]
    if p > 0:
        y = y - params.B1 @ u_full[:, 1:N]

    if m == 0:
        return FilterResult(
            z_hat=np.zeros((0, K)),
            P_hat=np.zeros((K, 0, 0)),
            z_tilde=np.zeros((0, K)),
            P_tilde=np.zeros((K, 0, 0)),
            gains=np.zeros((K, 0, n)),
            innovations=y.copy(),
            z0=z0.copy(),
            P0=P0.copy(),
        )

    ctrl = params.A21 @ x[:, 0 : N - 1]
    if p > 0:
        ctrl = ctrl + params.B2 @ u_full[:, 0 : N - 1]

    Sigma1_inv = _inv_spd(params.Sigma1, "observation covariance Sigma1")
    G = params.A12.T @ Sigma1_inv @ params.A12
    G = 0.5 * (G + G.T)

    z_hat, P_hat, z_tilde, P_tilde, gains, innov = backend.kalman_sweep(
        np.ascontiguousarray(params.A12),
        np.ascontiguousarray(params.A22),
        np.ascontiguousarray(params.Sigma1),
        np.ascontiguousarray(G),
        np.ascontiguousarray(params.Sigma2),
        np.ascontiguousarray(psi_lat),
        np.ascontiguousarray(ctrl),
        np.ascontiguousarray(y),
        np.ascontiguousarray(z0),
        np.ascontiguousarray(P0),
    )
    return FilterResult(
        z_hat=z_hat,
        P_hat=P_hat,
        z_tilde=z_tilde,
        P_tilde=P_tilde,
        gains=gains,
        innovations=innov,
        z0=z0.copy(),
        P0=P0.copy(),
    )


def run_filter(
    params: ModelParams,
    observed: TimeSeriesMatrix,
    inputs: Optional[InputSequence] = None,
    z0: Optional[np.ndarray] = None,
    P0: Optional[np.ndarray] = None,
) -> FilterResult:
    """Run the latent-state filter over one observed record.

    The record must hold at least 3 samples (x_0 plus two more) so that at
    least one filtered step exists.  ``inputs`` covers u_1 .. u_{N-1};
    missing inputs are treated as zero.
    """
    n, m, p = params.n, params.m, params.p
    x = observed.values
    if x.shape[0] != n:
        raise DimensionMismatchError(
            f"observed has {x.shape[0]} channels, model expects {n}"
        )
    T = x.shape[1]
    if T < 3:
        raise DimensionMismatchError("need at least 3 samples to filter")
    N = T - 1

    z0 = np.zeros(m) if z0 is None else np.asarray(z0, dtype=np.float64).ravel()
    P0 = np.eye(m) if P0 is None else np.asarray(P0, dtype=np.float64)
    if z0.shape != (m,):
        raise DimensionMismatchError(f"z0 must have length {m}")
    if P0.shape != (m, m):
        raise DimensionMismatchError(f"P0 must have shape ({m}, {m})")
    check_psd(P0, "P0")

    u_full = np.zeros((p, N))
    if inputs is not None and p > 0:
        if inputs.values.shape != (p, N - 1):
            raise DimensionMismatchError(
                f"inputs must have shape ({p}, {N - 1}), got {inputs.values.shape}"
            )
        u_full[:, 1:] = inputs.values

    kern_obs = build_kernel(params.alpha_obs, T - 1)
    xr = frac_diff_values(x, kern_obs)
    psi_lat = build_kernel(params.alpha_lat, N - 1).coeffs if m > 0 else np.zeros((0, N))

    return _filter_prepared(params, x, xr, u_full, z0, P0, psi_lat)
