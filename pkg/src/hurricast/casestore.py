"""On-disk case store: the ingest output consumed by train/predict/evaluate."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BundleFormatError
from .forecasts import iso_utc, parse_utc
from .storm_data import ForecastCase, layout_hash

STORE_VERSION = 1


def save_case_store(path, cases: list[ForecastCase], extra: dict | None = None) -> None:
    n = len(cases)
    arrays = {
        "version": np.array(STORE_VERSION),
        "layout": np.array(layout_hash()),
        "sid": np.array([c.storm_id for c in cases]),
        "iso_t0": np.array([iso_utc(c.t0) for c in cases]),
        "lat0": np.array([c.lat0 for c in cases]),
        "lon0": np.array([c.lon0 for c in cases]),
        "history": (np.stack([c.history_stat for c in cases])
                    if n else np.zeros((0, 8, 0))),
        "target_wind": np.array([c.target_intensity for c in cases]),
        "target_dlat": np.array([c.target_dlat for c in cases]),
        "target_dlon": np.array([c.target_dlon for c in cases]),
        "basin": np.array([c.basin for c in cases]),
        "split": np.array([c.split or "" for c in cases]),
    }
    for key, value in (extra or {}).items():
        arrays[f"extra_{key}"] = np.array(value)
    np.savez(path, **arrays)


def load_case_store(path) -> list[ForecastCase]:
    path = Path(path)
    if not path.exists():
        raise BundleFormatError(f"case store not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != STORE_VERSION:
            raise BundleFormatError(
                f"{path}: case store version {int(data['version'])}, "
                f"expected {STORE_VERSION}")
        if str(data["layout"]) != layout_hash():
            raise BundleFormatError(f"{path}: feature layout mismatch")
        cases = []
        for i in range(len(data["sid"])):
            split = str(data["split"][i])
            cases.append(ForecastCase(
                storm_id=str(data["sid"][i]),
                t0=parse_utc(str(data["iso_t0"][i])),
                lat0=float(data["lat0"][i]),
                lon0=float(data["lon0"][i]),
                history_stat=data["history"][i].copy(),
                target_intensity=float(data["target_wind"][i]),
                target_dlat=float(data["target_dlat"][i]),
                target_dlon=float(data["target_dlon"][i]),
                basin=str(data["basin"][i]),
                split=split or None,
            ))
    return cases


def filter_split(cases: list[ForecastCase], split: str) -> list[ForecastCase]:
    if split == "all":
        return list(cases)
    return [c for c in cases if c.split == split]
