"""Model containers, the forward simulator, and the no-latent baseline.

The system couples observed channels ``x`` (n of them) and latent channels
``z`` (m) through a linear map applied to a long-memory difference of the
stacked state:

    diff_alpha(s)[k+1] = A s[k] + B u[k] + e[k],     s = (x; z)

Solving for ``s[k+1]`` (the lag-0 coefficient is 1) gives the forward
recursion used everywhere in this package:

    s[k+1] = A s[k] + B u[k] + e[k] - sum_{j=1..k+1} C_j * s[k+1-j]

with ``C_j`` the diagonal per-channel coefficient at lag j.  History
before the first sample is zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import (
    CovarianceError,
    DimensionMismatchError,
    SingularSystemError,
)
from .fracops import build_kernel, frac_diff_values

PARAMS_FORMAT_VERSION = 1


@dataclass
class TimeSeriesMatrix:
    """A channels x time trajectory with optional metadata."""

    values: np.ndarray
    channel_labels: Optional[list[str]] = None
    sample_rate: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatchError(
                f"values must be channels x time, got shape {self.values.shape}"
            )
        if self.values.shape[1] < 1:
            raise DimensionMismatchError("time length must be >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory contains non-finite values")
        if self.channel_labels is not None and len(self.channel_labels) != self.values.shape[0]:
            raise DimensionMismatchError("channel_labels length must match channel count")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]


@dataclass
class InputSequence:
    """Estimated or injected inputs u_1 .. u_{N-1}; u_k drives step k -> k+1."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatchError(
                f"input values must be p x (N-1), got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("input sequence contains non-finite values")

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def sparsity(self) -> float:
        """Fraction of nonzero entries (diagnostic)."""
        if self.values.size == 0:
            return 0.0
        return float(np.count_nonzero(self.values)) / self.values.size


def check_psd(S: np.ndarray, name: str, sym_tol: float = 1e-12, eig_tol: float = -1e-10) -> None:
    """Raise CovarianceError unless S is symmetric PSD within tolerance."""
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise CovarianceError(f"{name} must be square, got shape {S.shape}")
    if S.size == 0:
        return
    scale = max(1.0, float(np.abs(S).max()))
    if float(np.abs(S - S.T).max()) > sym_tol * scale:
        raise CovarianceError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    if w.size and float(w.min()) < eig_tol * scale:
        raise CovarianceError(f"{name} has negative eigenvalue {w.min():.3e}")


def psd_factor(S: np.ndarray) -> np.ndarray:
    """Factor F with F @ F.T = S for a symmetric PSD matrix (eigh based)."""
    if S.shape[0] == 0:
        return S.copy()
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass
class ModelParams:
    """Full parameter set of the coupled observed/latent system."""

    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    Sigma1: np.ndarray
    Sigma2: np.ndarray
    alpha_obs: np.ndarray
    alpha_lat: np.ndarray

    def __post_init__(self):
        for name in ("A11", "A12", "A21", "A22", "B1", "B2", "Sigma1", "Sigma2"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64)))
        self.alpha_obs = np.asarray(self.alpha_obs, dtype=np.float64).ravel()
        self.alpha_lat = np.asarray(self.alpha_lat, dtype=np.float64).ravel()
        self.validate()

    @property
    def n(self) -> int:
        return self.A11.shape[0]

    @property
    def m(self) -> int:
        return self.A22.shape[0]

    @property
    def p(self) -> int:
        return self.B1.shape[1]

    def validate(self) -> None:
        n = self.A11.shape[0]
        m = self.A22.shape[0]
        p = self.B1.shape[1]
        expected = {
            "A11": (n, n),
            "A12": (n, m),
            "A21": (m, n),
            "A22": (m, m),
            "B1": (n, p),
            "B2": (m, p),
            "Sigma1": (n, n),
            "Sigma2": (m, m),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionMismatchError(f"{name} must have shape {shape}, got {got}")
        if self.alpha_obs.shape != (n,):
            raise DimensionMismatchError(f"alpha_obs must have length {n}")
        if self.alpha_lat.shape != (m,):
            raise DimensionMismatchError(f"alpha_lat must have length {m}")
        for name in ("A11", "A12", "A21", "A22", "B1", "B2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if not (np.all(np.isfinite(self.alpha_obs)) and np.all(np.isfinite(self.alpha_lat))):
            raise ValueError("fractional orders must be finite")
        check_psd(self.Sigma1, "Sigma1")
        check_psd(self.Sigma2, "Sigma2")

    # -- block helpers ---------------------------------------------------

    def stacked_A(self) -> np.ndarray:
        top = np.hstack([self.A11, self.A12])
        bot = np.hstack([self.A21, self.A22])
        return np.vstack([top, bot])

    def stacked_B(self) -> np.ndarray:
        return np.vstack([self.B1, self.B2])

    def stacked_alphas(self) -> np.ndarray:
        return np.concatenate([self.alpha_obs, self.alpha_lat])

    # -- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "format_version": PARAMS_FORMAT_VERSION,
            "n": self.n,
            "m": self.m,
            "p": self.p,
            "A11": self.A11.tolist(),
            "A12": self.A12.tolist(),
            "A21": self.A21.tolist(),
            "A22": self.A22.tolist(),
            "B1": self.B1.tolist(),
            "B2": self.B2.tolist(),
            "Sigma1": self.Sigma1.tolist(),
            "Sigma2": self.Sigma2.tolist(),
            "alpha_obs": self.alpha_obs.tolist(),
            "alpha_lat": self.alpha_lat.tolist(),
        }

    def to_json(self, path=None) -> str:
        doc = json.dumps(self.to_json_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(doc + "\n")
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelParams":
        if doc.get("format_version") != PARAMS_FORMAT_VERSION:
            raise ValueError(
                f"unsupported params format_version {doc.get('format_version')!r}"
            )
        n, m, p = int(doc["n"]), int(doc["m"]), int(doc["p"])

        def arr(key, shape):
            a = np.asarray(doc[key], dtype=np.float64).reshape(shape)
            return a

        return cls(
            A11=arr("A11", (n, n)),
            A12=arr("A12", (n, m)),
            A21=arr("A21", (m, n)),
            A22=arr("A22", (m, m)),
            B1=arr("B1", (n, p)),
            B2=arr("B2", (m, p)),
            Sigma1=arr("Sigma1", (n, n)),
            Sigma2=arr("Sigma2", (m, m)),
            alpha_obs=np.asarray(doc["alpha_obs"], dtype=np.float64),
            alpha_lat=np.asarray(doc["alpha_lat"], dtype=np.float64),
        )

    @classmethod
    def from_json(cls, source) -> "ModelParams":
        if isinstance(source, str) and source.lstrip().startswith("{"):
            doc = json.loads(source)
        else:
            with open(source) as fh:
                doc = json.load(fh)
        return cls.from_json_dict(doc)


def make_params(
    A11, A12, A21, A22, B1, B2, Sigma1, Sigma2, alpha_obs, alpha_lat
) -> ModelParams:
    """Convenience constructor accepting lists or arrays."""
    return ModelParams(A11, A12, A21, A22, B1, B2, Sigma1, Sigma2, alpha_obs, alpha_lat)


def zero_params(n: int, m: int, p: int, alpha_obs, alpha_lat) -> ModelParams:
    return ModelParams(
        A11=np.zeros((n, n)),
        A12=np.zeros((n, m)),
        A21=np.zeros((m, n)),
        A22=np.zeros((m, m)),
        B1=np.zeros((n, p)),
        B2=np.zeros((m, p)),
        Sigma1=np.eye(n),
        Sigma2=np.eye(m),
        alpha_obs=alpha_obs,
        alpha_lat=alpha_lat,
    )


# ---------------------------------------------------------------------------
# Forward simulation
# ---------------------------------------------------------------------------


def simulate(
    params: ModelParams,
    steps: int,
    x0: Optional[np.ndarray] = None,
    z0: Optional[np.ndarray] = None,
    inputs: Optional[InputSequence] = None,
    seed: Optional[int] = None,
) -> tuple[TimeSeriesMatrix, TimeSeriesMatrix]:
    """Simulate ``steps`` samples (the first column is the initial state).

    ``seed=None`` means noiseless; any integer seed draws Gaussian noise
    reproducibly (two runs with the same seed are bitwise identical).
    Inputs cover u_1 .. u_{steps-2}; u_0 is zero by convention.
    """
    n, m, p = params.n, params.m, params.p
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    d = n + m
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).ravel()
    z0 = np.zeros(m) if z0 is None else np.asarray(z0, dtype=np.float64).ravel()
    if x0.shape != (n,) or z0.shape != (m,):
        raise DimensionMismatchError("initial states must match model dimensions")

    u_full = np.zeros((p, max(steps - 1, 0)))
    if inputs is not None and p > 0:
        vals = inputs.values
        if vals.shape != (p, max(steps - 2, 0)):
            raise DimensionMismatchError(
                f"inputs must have shape ({p}, {max(steps - 2, 0)}), got {vals.shape}"
            )
        if steps >= 3:
            u_full[:, 1:] = vals

    A = params.stacked_A()
    B = params.stacked_B()
    psi = build_kernel(params.stacked_alphas(), max(steps - 1, 0)).coeffs

    noise = None
    if seed is not None and steps > 1:
        rng = np.random.default_rng(seed)
        F1 = psd_factor(params.Sigma1)
        F2 = psd_factor(params.Sigma2)
        e1 = F1 @ rng.standard_normal((n, steps - 1))
        e2 = F2 @ rng.standard_normal((m, steps - 1))
        noise = np.vstack([e1, e2])

    s = np.zeros((d, steps))
    s[:, 0] = np.concatenate([x0, z0])
    for k in range(steps - 1):
        drift = A @ s[:, k]
        if p > 0:
            drift = drift + B @ u_full[:, k]
        if noise is not None:
            drift = drift + noise[:, k]
        tail = (psi[:, 1 : k + 2] * s[:, k::-1]).sum(axis=1)
        s[:, k + 1] = drift - tail

    observed = TimeSeriesMatrix(values=s[:n].copy())
    latent = TimeSeriesMatrix(values=s[n:].copy())
    return observed, latent


# ---------------------------------------------------------------------------
# No-latent baseline
# ---------------------------------------------------------------------------


@dataclass
class BaselineFit:
    A: np.ndarray
    B1: np.ndarray
    Sigma1: np.ndarray
    inputs: InputSequence


def baseline_fit_no_latent(
    observed: TimeSeriesMatrix,
    alpha_obs,
    lam: float = 0.0,
    p: int = 0,
    max_rounds: int = 20,
    round_tol: float = 1e-8,
    input_tol: float = 1e-8,
    input_max_iter: int = 2000,
) -> BaselineFit:
    """Fit the comparison model that ignores latent channels.

    Regresses the fractional difference of each sample on the previous
    sample (and input), alternating least squares with the sparse input
    step when ``p > 0``.  With ``p = 0`` this is one-shot least squares.
    """
    from .inputs import InputProblem, solve_input

    x = observed.values
    n, T = x.shape
    alpha_obs = np.asarray(alpha_obs, dtype=np.float64).ravel()
    if alpha_obs.shape != (n,):
        raise DimensionMismatchError(f"alpha_obs must have length {n}")
    n_eq = T - 1
    if n_eq < n + p + 1:
        raise SingularSystemError(
            f"need at least {n + p + 1} regression samples, have {n_eq}"
        )

    kernel = build_kernel(alpha_obs, T - 1)
    xr = frac_diff_values(x, kernel)
    Y = xr[:, 1:]  # targets for samples 1..T-1
    X_prev = x[:, : T - 1]

    u_full = np.zeros((p, T - 1))  # drivers u_0..u_{T-2}; u_0 stays zero

    A = np.zeros((n, n))
    B1 = np.zeros((n, p))
    Sigma1 = np.eye(n)

    rounds = max_rounds if (p > 0 and lam >= 0.0) else 1
    prev = None
    for _ in range(rounds):
        D = np.vstack([X_prev, u_full]) if p > 0 else X_prev
        G = D @ D.T
        C = D @ Y.T
        try:
            cf = cho_factor(G, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise SingularSystemError("regressor Gram matrix is singular") from None
        if np.min(np.abs(np.diag(cf[0]))) <= 1e-12 * max(1.0, float(np.abs(G).max())):
            raise SingularSystemError("regressor Gram matrix is singular")
        W = cho_solve(cf, C, check_finite=False).T
        A, B1 = W[:, :n], W[:, n:]

        R = Y - A @ X_prev - (B1 @ u_full if p > 0 else 0.0)
        Sigma1 = R @ R.T / n_eq
        Sigma1 = 0.5 * (Sigma1 + Sigma1.T)
        w, V = np.linalg.eigh(Sigma1)
        Sigma1 = (V * np.clip(w, 1e-10, None)) @ V.T

        if p == 0:
            break

        W1 = np.linalg.inv(Sigma1)
        empty = np.zeros((0, p))
        W2 = np.zeros((0, 0))
        # Input u_k drives sample k+1; estimate u_1..u_{T-2} from the
        # residual of the sample each one produces.
        for k in range(1, T - 1):
            a1 = xr[:, k + 1] - A @ x[:, k]
            prob = InputProblem(a1=a1, a2=np.zeros(0), B1=B1, B2=empty, W1=W1, W2=W2, lam=lam)
            sol = solve_input(prob, tol=input_tol, max_iter=input_max_iter)
            u_full[:, k] = sol.u

        cur = (A.copy(), B1.copy(), u_full.copy())
        if prev is not None:
            delta = max(
                float(np.abs(cur[0] - prev[0]).max()),
                float(np.abs(cur[1] - prev[1]).max()) if p > 0 else 0.0,
                float(np.abs(cur[2] - prev[2]).max()) if u_full.size else 0.0,
            )
            if delta < round_tol:
                break
        prev = cur

    return BaselineFit(A=A, B1=B1, Sigma1=Sigma1, inputs=InputSequence(u_full[:, 1:]))
