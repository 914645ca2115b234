"""Per-timestep estimation of sparse unknown inputs.

Each input vector minimizes a weighted least-squares residual over both
state blocks plus an L1 penalty:

    f(u) = v1' W1 v1 + v2' W2 v2 + lam * ||u||_1
    v1 = a1 - B1 u,   v2 = a2 - B2 u

solved by proximal gradient (ISTA) with step 1/L, L the largest
eigenvalue of 2 (B1' W1 B1 + B2' W2 B2).  The conditional distribution of
each input is collapsed to a point mass at the minimizer; no input
uncertainty is propagated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DimensionMismatchError, UnidentifiableInputError
from .fracops import build_kernel, frac_diff_values
from .kalman import _inv_spd
from .model import InputSequence, ModelParams, TimeSeriesMatrix


@dataclass
class InputProblem:
    """One timestep's input-estimation problem."""

    a1: np.ndarray
    a2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.B1.shape[1] != self.B2.shape[1]:
            raise DimensionMismatchError("B1 and B2 must agree on input dimension")
        if self.a1.shape[0] != self.B1.shape[0] or self.a2.shape[0] != self.B2.shape[0]:
            raise DimensionMismatchError("targets must match input-map row counts")

    @property
    def p(self) -> int:
        return self.B1.shape[1]


@dataclass
class InputSolution:
    u: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objective_history: np.ndarray = field(repr=False, default=None)


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lambda_max(problem: InputProblem) -> float:
    """Smallest penalty for which the all-zero input is optimal."""
    b = problem.B1.T @ problem.W1 @ problem.a1 + problem.B2.T @ problem.W2 @ problem.a2
    return 2.0 * float(np.abs(b).max()) if b.size else 0.0


def default_lambda(problem: InputProblem) -> float:
    """Heuristic penalty, a tenth of the shrink-to-zero threshold."""
    return 0.1 * lambda_max(problem)


def _objective(problem: InputProblem, u: np.ndarray) -> float:
    v1 = problem.a1 - problem.B1 @ u
    v2 = problem.a2 - problem.B2 @ u
    return float(v1 @ problem.W1 @ v1 + v2 @ problem.W2 @ v2 + problem.lam * np.abs(u).sum())


def _stationary(g: np.ndarray, u: np.ndarray, lam: float, tol: float) -> bool:
    pos = u > 0
    neg = u < 0
    zero = ~(pos | neg)
    ok = np.abs(g[pos] + lam) <= tol
    if not np.all(ok):
        return False
    if not np.all(np.abs(g[neg] - lam) <= tol):
        return False
    return bool(np.all(np.abs(g[zero]) <= lam + tol))


def solve_input(problem: InputProblem, tol: float = 1e-10, max_iter: int = 5000) -> InputSolution:
    """Minimize the penalized residual for one timestep.

    Converged means every coordinate satisfies the soft-threshold
    stationarity condition within ``tol``; otherwise the best iterate is
    returned with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    p = problem.p
    if p == 0:
        u = np.zeros(0)
        return InputSolution(u, _objective(problem, u), 0, True, np.zeros(0))

    H = problem.B1.T @ problem.W1 @ problem.B1 + problem.B2.T @ problem.W2 @ problem.B2
    H = 0.5 * (H + H.T)
    b = problem.B1.T @ problem.W1 @ problem.a1 + problem.B2.T @ problem.W2 @ problem.a2
    L = 2.0 * float(np.linalg.eigvalsh(H).max())

    if L <= 0.0:
        if problem.lam == 0.0:
            raise UnidentifiableInputError(
                "input maps are zero under the given weights and lam = 0"
            )
        u = np.zeros(p)
        return InputSolution(u, _objective(problem, u), 0, True, np.array([_objective(problem, u)]))

    u = np.zeros(p)
    history = [_objective(problem, u)]
    g = 2.0 * (H @ u) - 2.0 * b
    if _stationary(g, u, problem.lam, tol):
        return InputSolution(u, history[0], 0, True, np.asarray(history))

    step = 1.0 / L
    shrink = problem.lam * step
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = soft_threshold(u - step * g, shrink)
        history.append(_objective(problem, u))
        g = 2.0 * (H @ u) - 2.0 * b
        if _stationary(g, u, problem.lam, tol):
            converged = True
            break

    return InputSolution(u, history[-1], it, converged, np.asarray(history))


def _prepare_estimation(params: ModelParams, observed: TimeSeriesMatrix,
                        z_hat_full: np.ndarray, xr, zr):
    m = params.m
    x = observed.values
    T = x.shape[1]
    N = T - 1
    if z_hat_full.shape != (m, N):
        raise DimensionMismatchError(
            f"z_hat_full must have shape ({m}, {N}), got {z_hat_full.shape}"
        )
    if xr is None:
        xr = frac_diff_values(x, build_kernel(params.alpha_obs, T - 1))
    if zr is None:
        zr = (
            frac_diff_values(z_hat_full, build_kernel(params.alpha_lat, N - 1))
            if m > 0
            else np.zeros((0, N))
        )
    W1 = _inv_spd(params.Sigma1, "Sigma1")
    W2 = _inv_spd(params.Sigma2, "Sigma2")
    return x, N, xr, zr, W1, W2


def _problem_at(params: ModelParams, x, xr, zr, z_hat_full, W1, W2, k: int, N: int,
                lam: float) -> InputProblem:
    """Problem for the input stored at k (driving the step into sample k+1)."""
    p = params.p
    a1 = xr[:, k + 1] - params.A11 @ x[:, k] - params.A12 @ z_hat_full[:, k]
    if k + 1 <= N - 1 and params.m > 0:
        a2 = zr[:, k + 1] - params.A21 @ x[:, k] - params.A22 @ z_hat_full[:, k]
        return InputProblem(a1, a2, params.B1, params.B2, W1, W2, lam)
    return InputProblem(a1, np.zeros(0), params.B1, np.zeros((0, p)),
                        W1, np.zeros((0, 0)), lam)


def resolve_lambda(
    params: ModelParams,
    observed: TimeSeriesMatrix,
    z_hat_full: np.ndarray,
    xr: Optional[np.ndarray] = None,
    zr: Optional[np.ndarray] = None,
) -> float:
    """Heuristic penalty from the first timestep's problem."""
    x, N, xr, zr, W1, W2 = _prepare_estimation(params, observed, z_hat_full, xr, zr)
    return default_lambda(_problem_at(params, x, xr, zr, z_hat_full, W1, W2, 1, N, 0.0))


def estimate_all_inputs(
    params: ModelParams,
    observed: TimeSeriesMatrix,
    z_hat_full: np.ndarray,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 5000,
    xr: Optional[np.ndarray] = None,
    zr: Optional[np.ndarray] = None,
) -> InputSequence:
    """Estimate u_1 .. u_{N-1}, one independent solve per timestep.

    ``z_hat_full`` is (m, N) with the initial condition in column 0.  The
    input at k drives the step into sample k+1, so its residuals are the
    sample-(k+1) ones; the last input sees only the observed residual
    because no filtered latent exists past N-1.  ``xr``/``zr`` may be
    passed to reuse precomputed fractional differences.
    """
    p = params.p
    if p == 0:
        return InputSequence(np.zeros((0, observed.n_samples - 2)))
    x, N, xr, zr, W1, W2 = _prepare_estimation(params, observed, z_hat_full, xr, zr)

    out = np.zeros((p, N - 1))
    for k in range(1, N):
        prob = _problem_at(params, x, xr, zr, z_hat_full, W1, W2, k, N, lam)
        try:
            sol = solve_input(prob, tol=tol, max_iter=max_iter)
        except UnidentifiableInputError as exc:
            raise UnidentifiableInputError(f"{exc} (timestep {k})") from None
        out[:, k - 1] = sol.u
    return InputSequence(out)
