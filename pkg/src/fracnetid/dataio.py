"""CSV ingestion and run configuration.

Dataset files are plain CSV with one column per channel, one row per
sample, a header row of channel labels, and an optional leading comment
line ``# sample_rate=<hz>``.  Values survive a save/load round trip
bit for bit (shortest round-trip decimal encoding).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .em import EMConfig
from .exceptions import DataFormatError
from .model import TimeSeriesMatrix

CONFIG_FORMAT_VERSION = 1


def load_csv(path) -> TimeSeriesMatrix:
    """Load a channels x time matrix from a time-rows CSV file."""
    if not os.path.exists(path):
        raise DataFormatError(f"dataset file not found: {path}")
    sample_rate = None
    rows: list[list[float]] = []
    header: Optional[list[str]] = None
    with open(path, newline="") as fh:
        lineno = 0
        for record in csv.reader(fh):
            lineno += 1
            if not record:
                continue
            first = record[0].strip()
            if first.startswith("#"):
                text = ",".join(record).lstrip("#").strip()
                if "=" in text:
                    key, _, val = text.partition("=")
                    if key.strip() == "sample_rate":
                        try:
                            sample_rate = float(val.strip())
                        except ValueError:
                            raise DataFormatError(
                                f"{path}:{lineno}: bad sample_rate {val.strip()!r}"
                            ) from None
                continue
            if header is None:
                header = [c.strip() for c in record]
                continue
            if len(record) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(record)}"
                )
            vals = []
            for col, cell in enumerate(record):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{lineno}: column {col + 1} is not numeric: {cell!r}"
                    ) from None
                if v != v or v in (float("inf"), float("-inf")):
                    raise DataFormatError(
                        f"{path}:{lineno}: column {col + 1} is not finite"
                    )
                vals.append(v)
            rows.append(vals)
    if header is None or not rows:
        raise DataFormatError(f"{path}: no data rows")
    import numpy as np

    values = np.asarray(rows, dtype=np.float64).T
    return TimeSeriesMatrix(values=values, channel_labels=header, sample_rate=sample_rate)


def save_csv(series: TimeSeriesMatrix, path) -> None:
    """Write a time-rows CSV that ``load_csv`` reads back bit for bit."""
    labels = series.channel_labels or [f"ch{i}" for i in range(series.n_channels)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if series.sample_rate is not None:
            fh.write(f"# sample_rate={series.sample_rate!r}\n")
        w.writerow(labels)
        for k in range(series.n_samples):
            w.writerow([repr(float(v)) for v in series.values[:, k]])


_TOP_KEYS = {
    "format_version",
    "dataset",
    "observed_ids",
    "hidden_ids",
    "alpha_obs",
    "alpha_lat",
    "calibration_dataset",
    "m",
    "p",
    "em",
    "horizon",
    "seeds",
    "lam_baseline",
    "train_frac",
    "protocol",
    "pool",
    "out_dir",
    "sweep",
}
_EM_KEYS = {"lam", "max_iter", "tol", "seed", "init_range", "input_tol", "input_max_iter"}
_SWEEP_KEYS = {"fixed_observed", "reveal_order", "hidden_pool"}


@dataclass
class RunConfig:
    """Validated contents of a run configuration document."""

    dataset: str
    observed_ids: list[int]
    hidden_ids: list[int]
    alpha_obs: object  # list of floats or the string "estimate"
    alpha_lat: object
    em: EMConfig = field(default_factory=EMConfig)
    m: Optional[int] = None
    p: int = 0
    horizon: int = 5
    seeds: int = 1
    lam_baseline: float = 0.0
    train_frac: float = 0.8
    protocol: str = "rolling"
    pool: str = "all"
    out_dir: str = "."
    calibration_dataset: Optional[str] = None
    sweep: Optional[dict] = None

    def __post_init__(self):
        if self.m is None:
            self.m = len(self.hidden_ids)
        for name in ("observed_ids", "hidden_ids"):
            ids = getattr(self, name)
            if len(set(ids)) != len(ids):
                raise DataFormatError(f"{name} has duplicate entries")
        if set(self.observed_ids) & set(self.hidden_ids):
            raise DataFormatError("observed_ids and hidden_ids overlap")
        for nm, ref in (("alpha_obs", self.observed_ids), ("alpha_lat", self.hidden_ids)):
            v = getattr(self, nm)
            if isinstance(v, str):
                if v != "estimate":
                    raise DataFormatError(f"{nm} must be a vector or 'estimate'")
            elif len(v) != len(ref):
                raise DataFormatError(
                    f"{nm} has {len(v)} entries for {len(ref)} channels"
                )
        if self.sweep is not None:
            unknown = set(self.sweep) - _SWEEP_KEYS
            if unknown:
                raise DataFormatError(f"unknown sweep keys: {sorted(unknown)}")


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise DataFormatError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(doc, where=str(path))


def config_from_dict(doc: dict, where: str = "config") -> RunConfig:
    if not isinstance(doc, dict):
        raise DataFormatError(f"{where}: top level must be an object")
    if doc.get("format_version") != CONFIG_FORMAT_VERSION:
        raise DataFormatError(
            f"{where}: format_version must be {CONFIG_FORMAT_VERSION}"
        )
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise DataFormatError(f"{where}: unknown keys: {sorted(unknown)}")
    for key in ("dataset", "observed_ids", "hidden_ids", "alpha_obs", "alpha_lat"):
        if key not in doc:
            raise DataFormatError(f"{where}: missing required key {key!r}")
    em_doc = doc.get("em", {})
    if not isinstance(em_doc, dict):
        raise DataFormatError(f"{where}: 'em' must be an object")
    unknown = set(em_doc) - _EM_KEYS
    if unknown:
        raise DataFormatError(f"{where}: unknown em keys: {sorted(unknown)}")
    try:
        em = EMConfig(**em_doc)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: bad em config: {exc}") from None
    kwargs = {k: v for k, v in doc.items() if k not in ("format_version", "em")}
    try:
        return RunConfig(em=em, **kwargs)
    except TypeError as exc:
        raise DataFormatError(f"{where}: {exc}") from None
