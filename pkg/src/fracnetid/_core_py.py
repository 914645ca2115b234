"""Pure numpy implementation of the hot kernels.

The compiled twin lives in ``_core_cy.pyx``; ``backend.py`` picks one at
import time.  Both expose the same three functions with identical
signatures and semantics:

- ``gl_table``: long-memory difference coefficients per channel.
- ``frac_diff``: causal truncated convolution of a series with a table.
- ``kalman_sweep``: the latent-state filter recursion over one record.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import NumericalSingularityError

# Smallest acceptable Cholesky pivot before a matrix is declared singular.
PIVOT_TOL = 1e-12


def gl_table(alphas: np.ndarray, horizon: int) -> np.ndarray:
    """Coefficient table c[i, j] for lags j = 0..horizon, one row per channel.

    Built with the multiplicative recurrence
    ``c[i, j] = c[i, j-1] * (j - 1 - alphas[i]) / j`` and ``c[i, 0] = 1``,
    which is exact for integer orders and avoids gamma-function poles.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    n = alphas.shape[0]
    out = np.empty((n, horizon + 1), dtype=np.float64)
    out[:, 0] = 1.0
    if horizon >= 1:
        j = np.arange(1, horizon + 1, dtype=np.float64)
        factors = (j[None, :] - 1.0 - alphas[:, None]) / j[None, :]
        np.cumprod(factors, axis=1, out=out[:, 1:])
    return out


def frac_diff(values: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Channelwise causal convolution: out[:, k] = sum_j coeffs[:, j] * values[:, k-j].

    The sum runs over j = 0..min(k, J); history before the first sample is
    treated as zero.
    """
    values = np.asarray(values, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n, T = values.shape
    out = np.empty_like(values)
    for c in range(n):
        out[c] = np.convolve(values[c], coeffs[c])[:T]
    return out


def _spd_solve(M: np.ndarray, rhs: np.ndarray, step: int, what: str) -> np.ndarray:
    c, lower = _spd_factor(M, step, what)
    return cho_solve((c, lower), rhs, check_finite=False)


def _spd_inv(M: np.ndarray, step: int, what: str) -> np.ndarray:
    c, lower = _spd_factor(M, step, what)
    out = cho_solve((c, lower), np.eye(M.shape[0]), check_finite=False)
    return 0.5 * (out + out.T)


def _spd_factor(M: np.ndarray, step: int, what: str):
    try:
        c, lower = cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalSingularityError(
            f"{what} is not positive definite at step {step}"
        ) from None
    if np.min(np.abs(np.diag(c))) <= PIVOT_TOL:
        raise NumericalSingularityError(
            f"{what} has a Cholesky pivot below {PIVOT_TOL:g} at step {step}"
        )
    return c, lower


def kalman_sweep(
    A12: np.ndarray,
    A22: np.ndarray,
    Sigma1: np.ndarray,
    G: np.ndarray,
    Sigma2: np.ndarray,
    psi_lat: np.ndarray,
    ctrl: np.ndarray,
    y: np.ndarray,
    z0: np.ndarray,
    P0: np.ndarray,
):
    """Latent-state filter recursion for steps k = 1..K.

    Parameters
    ----------
    A12 : (n, m) measurement map from latent states to observed residuals.
    A22 : (m, m) latent coupling block.
    Sigma1 : (n, n) observation-noise covariance (must be positive definite).
    G : (m, m) precomputed A12.T @ inv(Sigma1) @ A12.
    psi_lat : (m, J+1) latent-order coefficient table, J+1 > K.
    ctrl : (m, K) known drift per step, column k-1 = A21 x_{k-1} + B2 u_{k-1}.
    y : (n, K) pseudo-measurements per step.
    z0 : (m,) initial latent mean.
    P0 : (m, m) initial latent covariance.

    Returns
    -------
    z_hat : (m, K) filtered means, column k-1 holds step k.
    P_hat : (K, m, m) filtered covariances.
    z_tilde : (m, K) one-step predicted means.
    P_tilde : (K, m, m) predicted covariances.
    gains : (K, m, n) gain matrices.
    innov : (n, K) innovations (pseudo-measurement minus its prediction).
    """
    m = A22.shape[0]
    n = A12.shape[0]
    K = y.shape[1]

    # Full history buffers; column/slot 0 holds the initial condition.
    zh = np.empty((m, K + 1))
    zh[:, 0] = z0
    Ph = np.empty((K + 1, m, m))
    Ph[0] = P0

    z_tilde = np.empty((m, K))
    P_tilde = np.empty((K, m, m))
    gains = np.empty((K, m, n))
    innov = np.empty((n, K))

    psi1 = psi_lat[:, 1]
    Am = A22 - np.diag(psi1)

    for k in range(1, K + 1):
        # Predicted mean: drift plus coupling minus the long-memory tail.
        tail = (psi_lat[:, 1 : k + 1] * zh[:, k - 1 :: -1]).sum(axis=1)
        zt = ctrl[:, k - 1] + A22 @ zh[:, k - 1] - tail

        # Predicted covariance accumulates every past filtered covariance.
        Pt = Am @ Ph[k - 1] @ Am.T + Sigma2
        if k >= 2:
            psis = psi_lat[:, 2 : k + 1]
            hist = Ph[k - 2 :: -1]
            Pt = Pt + np.einsum("ai,bi,iab->ab", psis, psis, hist, optimize=False)
        Pt = 0.5 * (Pt + Pt.T)

        # Gain from the innovation covariance.
        S = Sigma1 + A12 @ Pt @ A12.T
        S = 0.5 * (S + S.T)
        Kk = _spd_solve(S, A12 @ Pt, k, "innovation covariance").T

        r = y[:, k - 1] - A12 @ zt
        zh[:, k] = zt + Kk @ r

        # Information-form update of the covariance.
        Pt_inv = _spd_inv(Pt, k, "predicted covariance")
        Pnew = _spd_inv(G + Pt_inv, k, "posterior information")
        Ph[k] = 0.5 * (Pnew + Pnew.T)

        z_tilde[:, k - 1] = zt
        P_tilde[k - 1] = Pt
        gains[k - 1] = Kk
        innov[:, k - 1] = r

    return zh[:, 1:].copy(), Ph[1:].copy(), z_tilde, P_tilde, gains, innov
