"""Long-memory (Grunwald-Letnikov) difference coefficients and transforms.

The discrete fractional difference of order ``a`` weights the entire past
of a signal:

    diff_a(x)[k] = sum_{j=0..k} c(a, j) * x[k - j]

with ``c(a, 0) = 1`` and ``c(a, j) = c(a, j-1) * (j - 1 - a) / j``.  The
coefficients equal gamma(j - a) / (gamma(-a) * gamma(j + 1)), but the
recurrence avoids gamma poles at nonnegative integer orders and is stable
for all lags.  History before the first sample is treated as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .exceptions import DimensionMismatchError


def gl_coeff(alpha: float, j: int) -> float:
    """Single difference coefficient of order ``alpha`` at lag ``j``."""
    if j < 0:
        raise ValueError(f"lag must be nonnegative, got {j}")
    return float(backend.gl_table(np.array([alpha]), j)[0, j])


@dataclass(frozen=True)
class GLKernel:
    """Per-channel coefficient table for lags 0..horizon.

    Attributes
    ----------
    alphas : (C,) fractional orders, one per channel.
    horizon : max lag J covered by the table.
    coeffs : (C, J+1) coefficient table.
    """

    alphas: np.ndarray
    horizon: int
    coeffs: np.ndarray = field(repr=False)

    @property
    def n_channels(self) -> int:
        return self.alphas.shape[0]


def build_kernel(alphas, horizon: int) -> GLKernel:
    """Build the coefficient table for the given orders.

    ``horizon`` must be at least the largest lag the table will be asked
    for; transforms of a length-T series need horizon >= T - 1 unless
    truncation is requested explicitly.
    """
    alphas = np.asarray(alphas, dtype=np.float64).ravel()
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    if not np.all(np.isfinite(alphas)):
        raise ValueError("fractional orders must be finite")
    coeffs = backend.gl_table(alphas, horizon)
    return GLKernel(alphas=alphas, horizon=horizon, coeffs=coeffs)


def frac_diff_values(values: np.ndarray, kernel: GLKernel, truncate: int | None = None) -> np.ndarray:
    """Fractional difference of a (channels x time) array.

    With ``truncate=J_max`` only the most recent ``J_max`` lags enter each
    sum; the default keeps the full history, which is what every fitted
    quantity in this package uses.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatchError(f"expected 2-D array, got shape {values.shape}")
    n, T = values.shape
    if kernel.n_channels != n:
        raise DimensionMismatchError(
            f"kernel has {kernel.n_channels} channels, series has {n}"
        )
    max_lag = T - 1 if truncate is None else min(truncate, T - 1)
    if kernel.horizon < max_lag:
        raise DimensionMismatchError(
            f"kernel horizon {kernel.horizon} is shorter than required lag {max_lag}"
        )
    return backend.frac_diff(values, kernel.coeffs[:, : max_lag + 1])


def frac_diff(series, kernel: GLKernel, truncate: int | None = None):
    """Fractional difference of a TimeSeriesMatrix, preserving metadata."""
    from .model import TimeSeriesMatrix

    out = frac_diff_values(series.values, kernel, truncate=truncate)
    return TimeSeriesMatrix(
        values=out,
        channel_labels=series.channel_labels,
        sample_rate=series.sample_rate,
    )
