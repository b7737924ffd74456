"""Scenario configuration, CSV ingestion, fleets, forecasts and result export."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from dataclasses import dataclass, field, fields
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import EvRecord, GridSignals, TimeGrid, qos

ALGORITHMS = ("proposed", "occma", "ocsa_f", "ocsa_n", "edf")

# N -> (M, max load kW, peak kW), the four scenarios of the evaluation
TABLE_SCENARIOS = {
    25: (2, 100.0, 120.0),
    50: (4, 200.0, 240.0),
    100: (8, 400.0, 440.0),
    200: (16, 800.0, 850.0),
}

BUNDLED_DAY = "synthetic_day.csv"
BUNDLED_COLUMNS = {"base_load": "load_mw", "price": "price", "solar": "solar_mw", "wind": "wind_mw"}


class ConfigError(ValueError):
    pass


class IngestionError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    n_evs: int = 25
    n_stations: int = 2
    max_load_kw: float = 100.0
    peak_kw: float = 120.0
    v_charg_init: float = 350.0
    v_dead: float = 200.0
    eta: float = 1.0
    alpha: float = 0.001
    b_max: float = 20.0
    k_actions: int = 5
    charging_efficiency: float = 0.9
    rng_seed: int = 0
    arrival_mean: float = 8.0
    arrival_std: float = 1.0
    departure_mean: float = 17.0
    departure_std: float = 1.0
    forecast_price_noise_std: Optional[float] = None  # None -> 0.1 * mean price
    forecast_renewable_noise_std: Optional[float] = None  # None -> 0.1 * mean per-unit output
    algorithm: str = "proposed"
    capacity_kwh: float = 40.0
    max_rate_kw: float = 6.6
    solar_capacity: float = 30.0
    wind_capacity: float = 10.0
    slot_count: int = 96
    slot_hours: float = 0.25
    lambda_max_init: float = 40.0
    series_path: Optional[str] = None  # None -> bundled synthetic day
    price_scale: float = 0.1  # file price units -> money per kWh
    solar_installed: float = 12000.0
    wind_installed: float = 6000.0
    deadline_time_unit: str = "slots"  # unit of f and d inside the deadline game
    finish_forecast: str = "noisy"  # "noisy" or "truth" for finish-time estimation

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_evs < 1 or self.n_stations < 1:
            raise ConfigError("n_evs and n_stations must be >= 1")
        if not self.peak_kw > 0:
            raise ConfigError("peak_kw must be > 0")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; valid: {', '.join(ALGORITHMS)}")
        if not 0 < self.charging_efficiency <= 1:
            raise ConfigError("charging_efficiency must be in (0, 1]")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.v_charg_init <= 0 or self.v_dead < 0:
            raise ConfigError("v_charg_init must be > 0 and v_dead >= 0")
        if self.k_actions < 1:
            raise ConfigError("k_actions must be >= 1")
        if self.deadline_time_unit not in ("slots", "hours"):
            raise ConfigError("deadline_time_unit must be 'slots' or 'hours'")
        if self.finish_forecast not in ("noisy", "truth"):
            raise ConfigError("finish_forecast must be 'noisy' or 'truth'")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.slot_count, self.slot_hours)

    @property
    def action_offsets(self) -> tuple:
        half = self.k_actions // 2
        return tuple(range(-half, self.k_actions - half))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def for_table_scenario(self, n_evs: int) -> "ScenarioConfig":
        if n_evs not in TABLE_SCENARIOS:
            raise ConfigError(f"no table scenario for N={n_evs}")
        m, load, peak = TABLE_SCENARIOS[n_evs]
        return self.replace(n_evs=n_evs, n_stations=m, max_load_kw=load, peak_kw=peak)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, **overrides) -> "ScenarioConfig":
        values = read_config_file(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)


def _coerce(key, raw, type_name):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    optional = "Optional" in str(type_name)
    if optional and text.lower() in ("", "none", "null"):
        return None
    base = str(type_name).replace("Optional[", "").rstrip("]")
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return text


def read_config_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
    return values


# -- series ingestion ----------------------------------------------------------

@dataclass
class SeriesBundle:
    """Signals resampled onto the grid.

    ``raw`` keeps the slot means in file units (before normalization) so the
    bundle can be exported and re-ingested exactly.
    """

    timestamps: list
    base_load_kw: np.ndarray
    price_per_kwh: np.ndarray
    solar_per_unit: np.ndarray
    wind_per_unit: np.ndarray
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("base_load_kw", "price_per_kwh", "solar_per_unit", "wind_per_unit"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if len(arr) != n:
                raise IngestionError(f"{name} has {len(arr)} values for {n} timestamps")
            setattr(self, name, arr)

    def to_signals(self, peak_kw: float, charging_efficiency: float) -> GridSignals:
        return GridSignals(self.base_load_kw, self.price_per_kwh, self.solar_per_unit,
                           self.wind_per_unit, peak_kw, charging_efficiency)


def parse_timestamp(text: str) -> float:
    """ISO-8601 or epoch seconds -> epoch seconds (naive ISO taken as UTC)."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def read_columns(path, columns) -> tuple:
    """Read a headed CSV; return (timestamps, {column: values})."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        missing = [c for c in ["timestamp", *columns] if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing column(s) {', '.join(missing)}")
        t_idx = header.index("timestamp")
        idx = {c: header.index(c) for c in columns}
        stamps, values = [], {c: [] for c in columns}
        for rowno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                stamps.append(parse_timestamp(row[t_idx]))
                for c, j in idx.items():
                    values[c].append(float(row[j]))
            except (ValueError, IndexError) as exc:
                raise IngestionError(f"{path}: row {rowno}: {exc}") from None
    return np.array(stamps, dtype=float), {c: np.array(v, dtype=float) for c, v in values.items()}


def resample_to_grid(stamps: np.ndarray, values: np.ndarray, grid: TimeGrid,
                     origin: Optional[float] = None, source: str = "series") -> np.ndarray:
    """Slot means.  Rows must be strictly increasing with gaps of at most one slot."""
    if len(stamps) == 0:
        raise IngestionError(f"{source}: no rows")
    step = grid.slot_seconds
    diffs = np.diff(stamps)
    bad = np.nonzero(diffs <= 0)[0]
    if len(bad):
        raise IngestionError(f"{source}: row {bad[0] + 3}: timestamps not strictly increasing")
    gaps = np.nonzero(diffs > step + 1e-6)[0]
    if len(gaps):
        raise IngestionError(f"{source}: row {gaps[0] + 3}: gap larger than one slot")
    if origin is None:
        origin = day_origin(stamps[0]) + grid.origin_hour * 3600.0
    slot = np.floor((stamps - origin) / step + 1e-9).astype(int)
    keep = (slot >= 0) & (slot < grid.slot_count)
    sums = np.bincount(slot[keep], weights=values[keep], minlength=grid.slot_count)
    counts = np.bincount(slot[keep], minlength=grid.slot_count)
    empty = np.nonzero(counts == 0)[0]
    if len(empty):
        raise IngestionError(f"{source}: no rows for slot {empty[0]}")
    return sums / counts


def day_origin(epoch: float) -> float:
    dt = datetime.fromtimestamp(epoch, tz=timezone.utc)
    return dt.replace(hour=0, minute=0, second=0, microsecond=0).timestamp()


def load_series(path, column_map: dict, grid: TimeGrid, max_load_kw: float,
                solar_installed: float, wind_installed: float,
                price_scale: float = 1.0) -> SeriesBundle:
    """Read one CSV with a ``timestamp`` column and one column per signal.

    ``column_map`` maps ``base_load``, ``price``, ``solar`` and ``wind`` to
    column names.  A value may also be a ``(path, column)`` pair to read that
    signal from a separate ``timestamp,value`` style file.
    """
    required = ("base_load", "price", "solar", "wind")
    missing = [k for k in required if k not in column_map]
    if missing:
        raise IngestionError(f"column_map lacks {', '.join(missing)}")
    raw, origin, stamps0 = {}, None, None
    for key in required:
        spec = column_map[key]
        src, col = (spec if isinstance(spec, (tuple, list)) else (path, spec))
        stamps, vals = read_columns(src, [col])
        if origin is None:
            origin = day_origin(stamps[0]) + grid.origin_hour * 3600.0
            stamps0 = stamps
        raw[key] = resample_to_grid(stamps, vals[col], grid, origin, source=f"{src}:{col}")
    timestamps = [datetime.fromtimestamp(origin + t * grid.slot_seconds, tz=timezone.utc)
                  .strftime("%Y-%m-%dT%H:%M:%S") for t in range(grid.slot_count)]
    return bundle_from_raw(timestamps, raw, max_load_kw, solar_installed, wind_installed, price_scale)


def bundle_from_raw(timestamps, raw, max_load_kw, solar_installed, wind_installed,
                    price_scale=1.0) -> SeriesBundle:
    load = raw["base_load"]
    peak = float(np.max(load))
    if not peak > 0:
        raise IngestionError("base load series is not positive")
    return SeriesBundle(
        timestamps=list(timestamps),
        base_load_kw=load / peak * max_load_kw,
        price_per_kwh=np.maximum(raw["price"], 0.0) * price_scale,
        solar_per_unit=np.clip(raw["solar"] / solar_installed, 0.0, 1.0),
        wind_per_unit=np.clip(raw["wind"] / wind_installed, 0.0, 1.0),
        raw={k: np.asarray(v, dtype=float) for k, v in raw.items()},
    )


def export_series(bundle: SeriesBundle, path):
    """Write the resampled raw series in the ingestible multi-column layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *BUNDLED_COLUMNS.values()])
        for t, stamp in enumerate(bundle.timestamps):
            w.writerow([stamp, *(repr(float(bundle.raw[k][t])) for k in BUNDLED_COLUMNS)])


def bundled_day_path() -> Path:
    return Path(str(resources.files("evgame") / "data" / BUNDLED_DAY))


def load_scenario_series(cfg: ScenarioConfig) -> SeriesBundle:
    path = cfg.series_path or bundled_day_path()
    return load_series(path, BUNDLED_COLUMNS, cfg.grid, cfg.max_load_kw,
                       cfg.solar_installed, cfg.wind_installed, cfg.price_scale)


def synthetic_day(seed: int = 20180501, step_minutes: int = 5) -> dict:
    """A system-operator style day in MW and $/MWh.

    Base load has a morning and an evening hump, solar is a bell over daylight,
    wind is a noisy AR(1) around a night-heavy mean, and the price follows the
    system net load (load minus renewables).
    """
    rng = np.random.default_rng(seed)
    n = 24 * 60 // step_minutes
    h = np.arange(n) * step_minutes / 60.0
    load_pu = (0.60 + 0.16 * np.exp(-((h - 8.5) / 1.8) ** 2)
               + 0.10 * np.exp(-((h - 13.0) / 3.0) ** 2)
               + 0.36 * np.exp(-((h - 19.5) / 2.4) ** 2))
    load_mw = 30000.0 * load_pu
    solar_pu = 0.85 * np.clip(np.sin(np.pi * (h - 6.25) / 13.5), 0.0, None) ** 1.3
    solar_mw = 12000.0 * solar_pu
    wind_pu = np.empty(n)
    level = 0.0
    for i in range(n):
        level = 0.97 * level + rng.normal(0.0, 0.02)
        wind_pu[i] = 0.32 + 0.14 * np.cos(2 * np.pi * (h[i] - 3.0) / 24.0) + level
    wind_mw = 6000.0 * np.clip(wind_pu, 0.02, 0.95)
    net = load_mw - solar_mw - wind_mw
    net_pu = (net - net.min()) / (net.max() - net.min())
    price = 18.0 + 52.0 * net_pu ** 1.6 + rng.normal(0.0, 1.0, n)
    start = datetime(2018, 5, 1)
    stamps = [(start + timedelta(minutes=step_minutes * i)).strftime("%Y-%m-%dT%H:%M:%S")
              for i in range(n)]
    return {"timestamp": stamps, "load_mw": load_mw, "price": np.maximum(price, 0.0),
            "solar_mw": solar_mw, "wind_mw": wind_mw}


def write_synthetic_day(path, **kwargs):
    day = synthetic_day(**kwargs)
    cols = ["timestamp", "load_mw", "price", "solar_mw", "wind_mw"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, stamp in enumerate(day["timestamp"]):
            w.writerow([stamp] + [f"{day[c][i]:.4f}" for c in cols[1:]])


# -- forecasts and fleets --------------------------------------------------------

def make_forecast(truth: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """truth + N(0, sigma) per slot, clipped at zero."""
    truth = np.asarray(truth, dtype=float)
    return np.maximum(truth + rng.normal(0.0, sigma, size=truth.shape), 0.0)


@dataclass
class Forecasts:
    price: np.ndarray
    solar_per_unit: np.ndarray
    wind_per_unit: np.ndarray
    base_load_kw: np.ndarray


def scenario_forecasts(cfg: ScenarioConfig, bundle: SeriesBundle) -> Forecasts:
    """Seeded forecasts; the stream is independent of the fleet stream."""
    rng = np.random.default_rng([cfg.rng_seed, 1])
    p_sigma = (cfg.forecast_price_noise_std if cfg.forecast_price_noise_std is not None
               else 0.1 * float(np.mean(bundle.price_per_kwh)))
    price = make_forecast(bundle.price_per_kwh, p_sigma, rng)
    out = {}
    for name in ("solar_per_unit", "wind_per_unit"):
        truth = getattr(bundle, name)
        sigma = (cfg.forecast_renewable_noise_std if cfg.forecast_renewable_noise_std is not None
                 else 0.1 * float(np.mean(truth)))
        out[name] = np.clip(make_forecast(truth, sigma, rng), 0.0, 1.0)
    return Forecasts(price, out["solar_per_unit"], out["wind_per_unit"], bundle.base_load_kw.copy())


def generate_fleet(cfg: ScenarioConfig, grid: Optional[TimeGrid] = None) -> list:
    grid = grid or cfg.grid
    rng = np.random.default_rng([cfg.rng_seed, 0])
    n = cfg.n_evs
    soc = rng.uniform(0.0, 1.0, n)
    arr_h = rng.normal(cfg.arrival_mean, cfg.arrival_std, n)
    dep_h = rng.normal(cfg.departure_mean, cfg.departure_std, n)
    station = rng.integers(0, cfg.n_stations, n)
    last = grid.slot_count - 1
    fleet = []
    for i in range(n):
        a = min(max(grid.slot_of_hour(arr_h[i]), 0), last - 1)
        v = min(max(grid.slot_of_hour(dep_h[i]), a + 1), last)
        fleet.append(EvRecord(
            id=i, station=int(station[i]), arrival_slot=a, deadline_slot=v,
            capacity_kwh=cfg.capacity_kwh, target_soc=1.0, soc=float(soc[i]),
            max_rate_kw=cfg.max_rate_kw, b_max=cfg.b_max, v_dead=cfg.v_dead,
        ))
    return fleet


# -- export --------------------------------------------------------------------

SLOT_COLUMNS = [
    "slot", "station", "price", "base_load_kw", "purchase_kwh", "renewable_kwh",
    "renewable_used_kwh", "available_kwh", "delivered_kwh", "cost", "q_queue",
    "z_queue", "v_charg", "dq2", "bound_q", "dz2", "bound_z",
]
EV_COLUMNS = [
    "ev", "station", "arrival_slot", "original_deadline_slot", "final_deadline_slot",
    "finish_slot", "demand_kwh", "delivered_kwh", "unmet_kwh", "qos",
]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def export_results(run, out_dir) -> dict:
    """Write ``slots.csv``, ``evs.csv`` and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"slots": out / "slots.csv", "evs": out / "evs.csv", "summary": out / "summary.json"}

    def write_csv(path, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in header])
        _atomic_write(path, buf.getvalue())

    write_csv(paths["slots"], SLOT_COLUMNS, run.slot_rows())
    write_csv(paths["evs"], EV_COLUMNS, run.ev_rows())
    _atomic_write(paths["summary"], json.dumps(run.summary(), indent=2, sort_keys=False) + "\n")
    return paths


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
