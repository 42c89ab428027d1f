"""Synthetic storm generator for desk-scale end-to-end runs.

Storms are random walks with persistent velocity; intensity follows a
mean-reverting AR(1) core optionally driven by (a) a seasonal term visible in
the statistical features and (b) a latent vortex-amplitude AR(1) process
visible only in the reanalysis cubes. 24-hour targets are therefore
closed-form functions of the state plus Gaussian noise, and the manifest
records the analytic error floor of the Bayes predictor given the full state.

Signal placement:
    statistical - seasonal drift only (cubes carry no predictive signal)
    vision      - vortex-amplitude drift only (invisible to the statistical
                  features except through past wind increments)
    both        - both drift terms
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .forecasts import ForecastRecord, iso_utc, write_operational_csv
from .storm_data import StormTrack, RawStormRecord, write_track_csv
from .tensor_ops import cube_filename, write_hcub
from .evaluation import haversine

# intensity core dynamics (kt):  c' = MU + RHO_C (c - MU) + drift + noise
MU = 70.0
RHO_C = 0.95
GAMMA_VIZ = 2.0      # kt per unit vortex amplitude per step
BETA_STAT = 0.8      # kt per unit seasonal term per step
RHO_A = 0.9          # vortex amplitude persistence
SIGMA_A = 0.3        # vortex amplitude innovation sd
RHO_V = 0.9          # velocity persistence (deg per 3 h)
SIGMA_V_BASE = 0.004  # velocity innovation sd per unit noise_sd
MAP_NOISE = 0.05     # per-pixel clutter sd in the cubes
WIND_CLIP = (25.0, 170.0)  # safety only; parameters keep it inactive

STEPS_AHEAD = 8  # 24 h at 3-h cadence

BASIN_SETUP = {
    # basin: (lat range, lon range, (vbar_lat, vbar_lon), wind period)
    "NA": ((12.0, 28.0), (-75.0, -40.0), (0.03, -0.05), "1min"),
    "EP": ((10.0, 20.0), (-140.0, -100.0), (0.02, -0.06), "1min"),
    "WP": ((8.0, 22.0), (125.0, 155.0), (0.03, -0.06), "10min"),
    "SI": ((-22.0, -8.0), (55.0, 90.0), (-0.02, -0.05), "10min"),
    "SP": ((-22.0, -10.0), (155.0, 175.0), (-0.02, 0.04), "10min"),
}
BASIN_CYCLE = tuple(BASIN_SETUP)

# storms cycle through eras so every split is populated: 14 train,
# 3 validation, 3 test out of every 20
ERA_CYCLE = ("train",) * 14 + ("val",) * 3 + ("test",) * 3
ERA_YEARS = {"train": (1980, 2011), "val": (2012, 2015), "test": (2016, 2019)}


@dataclass
class SyntheticSpec:
    storms: int = 200
    steps: int = 40
    signal: str = "both"      # statistical | vision | both
    noise_sd: float = 2.0
    seed: int = 7

    def __post_init__(self):
        if self.storms < 1:
            raise ConfigError(f"storms must be >= 1, got {self.storms}")
        if self.steps < 22:
            # 21 records after the start are needed for the >60 h selection rule
            raise ConfigError(f"steps must be >= 22, got {self.steps}")
        if self.signal not in ("statistical", "vision", "both"):
            raise ConfigError(f"unknown signal placement {self.signal!r}")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")

    @property
    def gamma(self) -> float:
        return GAMMA_VIZ if self.signal in ("vision", "both") else 0.0

    @property
    def beta(self) -> float:
        return BETA_STAT if self.signal in ("statistical", "both") else 0.0


@dataclass
class StormLatents:
    track: StormTrack
    core: np.ndarray       # c_t (kt)
    amp: np.ndarray        # vortex amplitude a_t
    seasonal: np.ndarray   # s_t
    vlat: np.ndarray
    vlon: np.ndarray
    vbar: tuple[float, float]
    cubes: np.ndarray      # (steps, 9, 25, 25), float32-ready


def analytic_floors(spec: SyntheticSpec) -> dict:
    """MAE of the Bayes predictor given the full generator state at t0."""
    rho_pow = RHO_C ** np.arange(STEPS_AHEAD)
    var_core = spec.noise_sd ** 2 * float(np.sum(rho_pow ** 2))
    var_amp = 0.0
    if spec.gamma > 0:
        for m in range(1, STEPS_AHEAD):
            coef = sum(RHO_C ** (STEPS_AHEAD - 1 - k) * RHO_A ** (k - m)
                       for k in range(m, STEPS_AHEAD))
            var_amp += coef ** 2
        var_amp *= spec.gamma ** 2 * SIGMA_A ** 2
    intensity_sd = math.sqrt(var_core + var_amp)

    sigma_v = SIGMA_V_BASE * spec.noise_sd
    geo = sum((sum(RHO_V ** j for j in range(STEPS_AHEAD - 1 - i)) ** 2)
              for i in range(STEPS_AHEAD - 1))
    disp_sd = sigma_v * math.sqrt(geo)
    return {
        "intensity_mae_kt": intensity_sd * math.sqrt(2.0 / math.pi),
        "intensity_residual_sd_kt": intensity_sd,
        "displacement_residual_sd_deg": disp_sd,
        # Rayleigh mean for two equal independent components, small-angle
        "track_mae_km_approx": disp_sd * math.sqrt(math.pi / 2.0) * 111.195,
    }


def _seasonal(day_of_year: int) -> float:
    return math.sin(2.0 * math.pi * day_of_year / 365.0)


def _make_cube_step(amp: float, wind: float, rng: np.random.Generator) -> np.ndarray:
    grid = np.arange(25.0)
    x, y = np.meshgrid(grid, grid, indexing="xy")
    r2 = (x - 12.0) ** 2 + (y - 12.0) ** 2
    vortex = np.exp(-r2 / 32.0)
    swirl = np.exp(-r2 / 72.0)
    swirl_u = -(y - 12.0) / 12.0 * swirl
    swirl_v = (x - 12.0) / 12.0 * swirl
    cube = np.empty((9, 25, 25))
    for lvl in range(3):
        cube[lvl] = (1.0 + 0.2 * lvl) + (0.8 + 0.1 * lvl) * amp * vortex
        cube[3 + lvl] = 0.3 * swirl_u * (wind / 60.0) + 0.5 * amp * vortex
        cube[6 + lvl] = 0.3 * swirl_v * (wind / 60.0) + 0.5 * amp * vortex
    cube += MAP_NOISE * rng.standard_normal((9, 25, 25))
    return cube


def _bearing_deg(lat1, lon1, lat2, lon2) -> float:
    """Initial great-circle bearing, degrees east of north."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dlon = math.radians(lon2 - lon1)
    y = math.sin(dlon) * math.cos(phi2)
    x = (math.cos(phi1) * math.sin(phi2)
         - math.sin(phi1) * math.cos(phi2) * math.cos(dlon))
    return math.degrees(math.atan2(y, x)) % 360.0


def _simulate_storm(spec: SyntheticSpec, index: int,
                    rng: np.random.Generator) -> StormLatents:
    era = ERA_CYCLE[index % len(ERA_CYCLE)]
    year = int(rng.integers(ERA_YEARS[era][0], ERA_YEARS[era][1] + 1))
    month = int(rng.integers(1, 11))
    day = int(rng.integers(1, 21))
    hour = int(rng.integers(0, 8)) * 3
    start = datetime(year, month, day, hour, tzinfo=timezone.utc)
    basin = BASIN_CYCLE[index % len(BASIN_CYCLE)]
    (lat_lo, lat_hi), (lon_lo, lon_hi), vbar, period = BASIN_SETUP[basin]
    sid = f"SY{year}{index:04d}"

    n = spec.steps
    sigma_v = SIGMA_V_BASE * spec.noise_sd
    lat = np.empty(n)
    lon = np.empty(n)
    vlat = np.empty(n)
    vlon = np.empty(n)
    core = np.empty(n)
    amp = np.empty(n)
    seasonal = np.empty(n)

    lat[0] = rng.uniform(lat_lo, lat_hi)
    lon[0] = rng.uniform(lon_lo, lon_hi)
    vlat[0] = vbar[0] + rng.uniform(-0.02, 0.02)
    vlon[0] = vbar[1] + rng.uniform(-0.02, 0.02)
    core[0] = rng.uniform(45.0, 95.0)
    amp[0] = rng.normal(0.0, SIGMA_A / math.sqrt(1.0 - RHO_A ** 2))

    times = [start + k * timedelta(hours=3) for k in range(n)]
    for k in range(n):
        seasonal[k] = _seasonal(times[k].timetuple().tm_yday)
    for k in range(n - 1):
        lat[k + 1] = lat[k] + vlat[k]
        lon[k + 1] = lon[k] + vlon[k]
        vlat[k + 1] = RHO_V * vlat[k] + (1 - RHO_V) * vbar[0] + sigma_v * rng.standard_normal()
        vlon[k + 1] = RHO_V * vlon[k] + (1 - RHO_V) * vbar[1] + sigma_v * rng.standard_normal()
        drift = spec.gamma * amp[k] + spec.beta * seasonal[k]
        core[k + 1] = (MU + RHO_C * (core[k] - MU) + drift
                       + spec.noise_sd * rng.standard_normal())
        amp[k + 1] = RHO_A * amp[k] + SIGMA_A * rng.standard_normal()
    wind = np.clip(core, *WIND_CLIP)

    cubes = np.empty((n, 9, 25, 25))
    for k in range(n):
        cubes[k] = _make_cube_step(amp[k], wind[k], rng)

    records = []
    for k in range(n):
        if k == 0:
            speed_kt = 0.0
            direction = _bearing_deg(lat[0], lon[0], lat[0] + vlat[0], lon[0] + vlon[0])
        else:
            dist_km = haversine((lat[k - 1], lon[k - 1]), (lat[k], lon[k]))
            speed_kt = dist_km / 1.852 / 3.0
            direction = _bearing_deg(lat[k - 1], lon[k - 1], lat[k], lon[k])
        reported = wind[k] * (0.93 if period == "10min" else 1.0)
        records.append(RawStormRecord(
            storm_id=sid,
            timestamp=times[k],
            lat=float(lat[k]),
            lon=float(lon[k]),
            wmo_wind=float(reported),
            wmo_pressure=float(np.clip(1010.0 - 0.75 * (wind[k] - 30.0), 880.0, 1022.0)),
            dist_to_land=float(abs(lat[k]) * 66.6),
            storm_speed=float(speed_kt),
            storm_dir=float(direction),
            nature="TS",
            basin=basin,
            wind_avg_period=period,
        ))
    return StormLatents(StormTrack(sid, records), core, amp, seasonal,
                        vlat, vlon, vbar, cubes)


def bayes_predictions(spec: SyntheticSpec, storm: StormLatents,
                      i: int) -> tuple[float, float, float]:
    """Conditional-mean 24 h targets given the full state at step i."""
    wind = MU + RHO_C ** STEPS_AHEAD * (storm.core[i] - MU)
    for k in range(STEPS_AHEAD):
        decay = RHO_C ** (STEPS_AHEAD - 1 - k)
        wind += decay * (spec.gamma * RHO_A ** k * storm.amp[i]
                         + spec.beta * storm.seasonal[i + k])
    dlat = sum(RHO_V ** k * storm.vlat[i] + (1 - RHO_V ** k) * storm.vbar[0]
               for k in range(STEPS_AHEAD))
    dlon = sum(RHO_V ** k * storm.vlon[i] + (1 - RHO_V ** k) * storm.vbar[1]
               for k in range(STEPS_AHEAD))
    return wind, dlat, dlon


def _operational_members(spec: SyntheticSpec, storms: list[StormLatents],
                         rng: np.random.Generator) -> list[ForecastRecord]:
    """Two synthetic operational members: truth plus bias plus noise."""
    members = [
        ("OPA", 4.0, 5.0, (0.25, -0.2), 0.35),
        ("OPB", -4.0, 5.0, (-0.25, 0.2), 0.35),
    ]
    out = []
    for storm in storms:
        track = storm.track
        n = len(track.records)
        for i in range(STEPS_AHEAD - 1, n - STEPS_AHEAD):
            future = track.records[i + STEPS_AHEAD]
            true_wind = future.wind_1min()
            for model, wind_bias, wind_sd, pos_bias, pos_sd in members:
                plat = future.lat + pos_bias[0] + pos_sd * rng.standard_normal()
                plon = future.lon + pos_bias[1] + pos_sd * rng.standard_normal()
                out.append(ForecastRecord(
                    model=model,
                    storm_id=track.storm_id,
                    t0=track.records[i].timestamp,
                    pred_wind=float(true_wind + wind_bias + wind_sd * rng.standard_normal()),
                    pred_dlat=math.nan,
                    pred_dlon=math.nan,
                    pred_lat=float(plat),
                    pred_lon=float(plon),
                ))
    return out


def generate_synthetic(spec: SyntheticSpec, out_dir) -> dict:
    """Write tracks.csv, cubes/, ops.csv and the ground-truth manifest.

    Deterministic for a fixed spec: reruns produce byte-identical outputs.
    """
    out = Path(out_dir)
    (out / "cubes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    storms = [_simulate_storm(spec, i, rng) for i in range(spec.storms)]

    spec_comment = (f"spec: storms={spec.storms} steps={spec.steps} "
                    f"signal={spec.signal} noise_sd={spec.noise_sd} seed={spec.seed}")
    comments = ["generated-by: hurricast synth", spec_comment]
    write_track_csv(out / "tracks.csv", [s.track for s in storms], comments)

    for storm in storms:
        name = cube_filename(storm.track.storm_id, storm.track.records[0].timestamp)
        write_hcub(out / "cubes" / name, storm.cubes)

    ops = _operational_members(spec, storms, rng)
    write_operational_csv(out / "ops.csv", ops, comments=comments)

    with open(out / "manifest.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {comments[0]}\n# {comments[1]}\n")
        fh.write("sid,iso_t0,bayes_wind,bayes_dlat,bayes_dlon,amp,core\n")
        n_cases = 0
        for storm in storms:
            records = storm.track.records
            for i in range(STEPS_AHEAD - 1, len(records) - STEPS_AHEAD):
                wind, dlat, dlon = bayes_predictions(spec, storm, i)
                fh.write(f"{storm.track.storm_id},{iso_utc(records[i].timestamp)},"
                         f"{wind:.4f},{dlat:.6f},{dlon:.6f},"
                         f"{storm.amp[i]:.6f},{storm.core[i]:.4f}\n")
                n_cases += 1

    summary = {
        "spec": asdict(spec),
        "storms": spec.storms,
        "cases": n_cases,
        "floors": analytic_floors(spec),
        "dynamics": {
            "mu": MU, "rho_core": RHO_C, "gamma_vision": spec.gamma,
            "beta_seasonal": spec.beta, "rho_amp": RHO_A, "sigma_amp": SIGMA_A,
            "rho_velocity": RHO_V, "sigma_velocity": SIGMA_V_BASE * spec.noise_sd,
        },
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
