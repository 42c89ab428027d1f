"""Verification metrics, skill arithmetic and benchmark comparison tables."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .forecasts import ForecastRecord
from .storm_data import ForecastCase

EARTH_RADIUS_KM = 6371.0

# reported values round track skills to integers and intensity skills to one
# decimal; recomputation from the published MAEs must land within these
SKILL_TOLERANCE = {"track": 0.55, "intensity": 0.05}


def mae(preds: Sequence[float], truths: Sequence[float]) -> float:
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if preds.shape != truths.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {truths.shape}")
    if preds.size == 0:
        raise ValueError("mae of empty input")
    return float(np.mean(np.abs(truths - preds)))


def error_sd(preds: Sequence[float], truths: Sequence[float]) -> float:
    """Sample standard deviation (ddof=1) of the absolute errors."""
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if preds.size < 2:
        raise ValueError("error_sd needs at least 2 samples")
    return float(np.std(np.abs(truths - preds), ddof=1))


def haversine(p1: tuple[float, float], p2: tuple[float, float]) -> float:
    """Great-circle distance in km on a sphere of radius 6371 km.

    Longitude differences are wrapped into (-180, 180] so paths across the
    antimeridian measure the short way round.
    """
    lat1, lon1 = p1
    lat2, lon2 = p2
    dlon = (lon2 - lon1) % 360.0
    if dlon > 180.0:
        dlon -= 360.0
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    a = (math.sin(math.radians(lat2 - lat1) / 2.0) ** 2
         + math.cos(phi1) * math.cos(phi2) * math.sin(math.radians(dlon) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def skill(e_baseline: float, e_forecast: float) -> float:
    """Percent error reduction relative to a baseline; positive is better."""
    if e_baseline <= 0:
        raise ValueError(f"baseline error must be > 0, got {e_baseline}")
    if e_forecast < 0:
        raise ValueError(f"forecast error must be >= 0, got {e_forecast}")
    return 100.0 * (e_baseline - e_forecast) / e_baseline


@dataclass
class EvalReport:
    model: str
    basin: str
    case_count: int
    mae: float
    error_sd: float
    skill: float | None = None
    baseline: str | None = None


def _align(forecasts: Iterable[ForecastRecord],
           cases: Sequence[ForecastCase]) -> list[ForecastRecord]:
    by_key = {f.key: f for f in forecasts}
    missing = [case.key for case in cases if case.key not in by_key]
    if missing:
        shown = ", ".join(f"{sid}@{t0}" for sid, t0 in missing[:5])
        raise ValueError(f"{len(missing)} cases without forecasts (first: {shown})")
    return [by_key[case.key] for case in cases]


def _position_errors(forecasts: Iterable[ForecastRecord],
                     cases: Sequence[ForecastCase]) -> np.ndarray:
    aligned = _align(forecasts, cases)
    errors = np.empty(len(cases))
    for i, (f, case) in enumerate(zip(aligned, cases)):
        true_pos = (case.lat0 + case.target_dlat, case.lon0 + case.target_dlon)
        if math.isnan(f.pred_lat) or math.isnan(f.pred_lon):
            pred_pos = (case.lat0 + f.pred_dlat, case.lon0 + f.pred_dlon)
        else:
            pred_pos = (f.pred_lat, f.pred_lon)
        errors[i] = haversine(true_pos, pred_pos)
    return errors


def _intensity_errors(forecasts: Iterable[ForecastRecord],
                      cases: Sequence[ForecastCase]) -> np.ndarray:
    aligned = _align(forecasts, cases)
    truth = np.array([case.target_intensity for case in cases])
    pred = np.array([f.pred_wind for f in aligned])
    return np.abs(truth - pred)


def _report(errors: np.ndarray, model: str, basin: str,
            baseline_errors: np.ndarray | None, baseline: str | None) -> EvalReport:
    report = EvalReport(
        model=model,
        basin=basin,
        case_count=len(errors),
        mae=float(errors.mean()),
        error_sd=float(np.std(errors, ddof=1)) if len(errors) > 1 else 0.0,
        baseline=baseline,
    )
    if baseline_errors is not None:
        report.skill = skill(float(baseline_errors.mean()), report.mae)
    elif baseline is not None:
        warnings.warn(f"baseline {baseline!r} forecasts missing, skill omitted")
        report.baseline = None
    return report


def evaluate_track(forecasts: Iterable[ForecastRecord], cases: Sequence[ForecastCase],
                   model: str = "model", basin: str = "ALL",
                   baseline_forecasts: Iterable[ForecastRecord] | None = None,
                   baseline: str | None = None) -> EvalReport:
    """Great-circle position error (km) at the 24 h valid time.

    Displacement-only forecasts are converted to positions using the case's
    t0 position before the distance is taken.
    """
    errors = _position_errors(forecasts, cases)
    base = _position_errors(baseline_forecasts, cases) if baseline_forecasts else None
    return _report(errors, model, basin, base, baseline)


def evaluate_intensity(forecasts: Iterable[ForecastRecord], cases: Sequence[ForecastCase],
                       model: str = "model", basin: str = "ALL",
                       baseline_forecasts: Iterable[ForecastRecord] | None = None,
                       baseline: str | None = None) -> EvalReport:
    """Absolute 1-minute wind error (kt) at the 24 h valid time."""
    errors = _intensity_errors(forecasts, cases)
    base = _intensity_errors(baseline_forecasts, cases) if baseline_forecasts else None
    return _report(errors, model, basin, base, baseline)


# --------------------------------------------------------------------------
# Comparison tables
# --------------------------------------------------------------------------

@dataclass
class ComparisonTable:
    basins: list[str]
    models: list[str]
    rows: dict[tuple[str, str], EvalReport]  # (model, basin) -> report
    baseline: str

    def best(self, basin: str, attr: str) -> float:
        values = [getattr(self.rows[(m, basin)], attr) for m in self.models
                  if (m, basin) in self.rows and getattr(self.rows[(m, basin)], attr) is not None]
        return (max if attr == "skill" else min)(values)

    def to_csv_text(self) -> str:
        out = ["model," + ",".join(
            f"{b}_mae,{b}_skill,{b}_error_sd,{b}_cases" for b in self.basins)]
        for m in self.models:
            cells = [m]
            for b in self.basins:
                r = self.rows.get((m, b))
                if r is None:
                    cells += ["", "", "", ""]
                else:
                    cells += [f"{r.mae:.4f}",
                              "" if r.skill is None else f"{r.skill:.4f}",
                              f"{r.error_sd:.4f}", str(r.case_count)]
            out.append(",".join(cells))
        return "\n".join(out) + "\n"

    def to_text(self) -> str:
        """Aligned text; the best value per basin and column is starred."""
        header = ["model"]
        for b in self.basins:
            header += [f"{b} MAE", f"{b} skill%", f"{b} err sd"]
        lines = [header]
        for m in self.models:
            cells = [m]
            for b in self.basins:
                r = self.rows.get((m, b))
                if r is None:
                    cells += ["-", "-", "-"]
                    continue
                star_mae = "*" if r.mae == self.best(b, "mae") else ""
                star_sd = "*" if r.error_sd == self.best(b, "error_sd") else ""
                if r.skill is None:
                    skill_txt = "-"
                else:
                    star_skill = "*" if r.skill == self.best(b, "skill") else ""
                    skill_txt = f"{r.skill:.1f}{star_skill}"
                cells += [f"{r.mae:.2f}{star_mae}", skill_txt,
                          f"{r.error_sd:.2f}{star_sd}"]
            lines.append(cells)
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
            for row in lines) + "\n"


def build_comparison_table(reports: Sequence[EvalReport],
                           baseline: str) -> ComparisonTable:
    """Arrange per-(model, basin) reports side by side; comparisons within a
    basin must share the same case set, so differing counts are an error."""
    if not reports:
        raise ValueError("no reports to tabulate")
    basins = sorted({r.basin for r in reports})
    models = list(dict.fromkeys(r.model for r in reports))
    rows: dict[tuple[str, str], EvalReport] = {}
    for r in reports:
        rows[(r.model, r.basin)] = r
    for b in basins:
        counts = {rows[(m, b)].case_count for m in models if (m, b) in rows}
        if len(counts) > 1:
            raise ValueError(
                f"case counts differ within basin {b}: {sorted(counts)}; "
                "models must be compared on the same cases")
    return ComparisonTable(basins=basins, models=models, rows=rows, baseline=baseline)


# --------------------------------------------------------------------------
# Published benchmark fixtures
# --------------------------------------------------------------------------

@dataclass
class FixtureRow:
    table: str
    task: str          # "track" | "intensity"
    basin: str
    category: str
    model: str
    cases: int
    mae: float
    skill: float
    error_sd: float
    baseline: str
    baseline_mae: float
    provenance: str


def default_fixture_path():
    return resources.files("hurricast").joinpath("data/tables_fixture.csv")


def load_fixture_rows(path=None) -> list[FixtureRow]:
    if path is None:
        text = default_fixture_path().read_text(encoding="utf-8")
        lines = text.splitlines()
    else:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    reader = csv.DictReader(line for line in lines if not line.startswith("#"))
    rows = []
    for row in reader:
        rows.append(FixtureRow(
            table=row["table"], task=row["task"], basin=row["basin"],
            category=row["category"], model=row["model"], cases=int(row["cases"]),
            mae=float(row["mae"]), skill=float(row["skill"]),
            error_sd=float(row["error_sd"]), baseline=row["baseline"],
            baseline_mae=float(row["baseline_mae"]), provenance=row["provenance"],
        ))
    return rows


@dataclass
class SkillCheck:
    row: FixtureRow
    computed: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return abs(self.computed - self.row.skill) <= self.tolerance


def verify_fixture_skills(rows: Sequence[FixtureRow]) -> list[SkillCheck]:
    """Recompute every fixture row's skill from the published MAEs."""
    out = []
    for row in rows:
        computed = skill(row.baseline_mae, row.mae)
        out.append(SkillCheck(row=row, computed=computed,
                              tolerance=SKILL_TOLERANCE[row.task]))
    return out
