"""Forecast records and their CSV interchange formats."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Sequence


def parse_utc(text: str) -> datetime:
    t = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def iso_utc(t: datetime) -> str:
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class ForecastRecord:
    """One model's 24-hour prediction for one case."""

    model: str
    storm_id: str
    t0: datetime
    pred_wind: float
    pred_dlat: float
    pred_dlon: float
    pred_lat: float
    pred_lon: float

    @property
    def key(self) -> tuple[str, str]:
        return (self.storm_id, iso_utc(self.t0))


FORECAST_CSV_HEADER = ["sid", "iso_t0", "pred_wind", "pred_dlat", "pred_dlon",
                       "pred_lat", "pred_lon"]
OPERATIONAL_CSV_HEADER = ["model_id", "sid", "iso_t0", "lead_hours",
                          "pred_lat", "pred_lon", "pred_wind"]


def write_forecast_csv(path, records: Iterable[ForecastRecord],
                       comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(FORECAST_CSV_HEADER)
        for r in records:
            writer.writerow([
                r.storm_id, iso_utc(r.t0), f"{r.pred_wind:.4f}",
                f"{r.pred_dlat:.6f}", f"{r.pred_dlon:.6f}",
                f"{r.pred_lat:.6f}", f"{r.pred_lon:.6f}",
            ])


def read_forecast_csv(path, model: str = "") -> list[ForecastRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            out.append(ForecastRecord(
                model=model,
                storm_id=row["sid"],
                t0=parse_utc(row["iso_t0"]),
                pred_wind=float(row["pred_wind"]),
                pred_dlat=float(row["pred_dlat"]),
                pred_dlon=float(row["pred_dlon"]),
                pred_lat=float(row["pred_lat"]),
                pred_lon=float(row["pred_lon"]),
            ))
    return out


def write_operational_csv(path, records: Iterable[ForecastRecord],
                          lead_hours: int = 24, comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(OPERATIONAL_CSV_HEADER)
        for r in records:
            writer.writerow([
                r.model, r.storm_id, iso_utc(r.t0), lead_hours,
                f"{r.pred_lat:.6f}", f"{r.pred_lon:.6f}", f"{r.pred_wind:.4f}",
            ])


def read_operational_csv(path) -> dict[str, list[ForecastRecord]]:
    """Operational members keyed by model id; displacements are left NaN
    (members report positions) and derived against case positions later."""
    out: dict[str, list[ForecastRecord]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            record = ForecastRecord(
                model=row["model_id"],
                storm_id=row["sid"],
                t0=parse_utc(row["iso_t0"]),
                pred_wind=float(row["pred_wind"]),
                pred_dlat=math.nan,
                pred_dlon=math.nan,
                pred_lat=float(row["pred_lat"]),
                pred_lon=float(row["pred_lon"]),
            )
            out.setdefault(record.model, []).append(record)
    return out
