"""Deterministic synthetic disturbance/load data and the simulated calendar.

The simulated calendar is fixed: years of exactly 365 days (no leap
years, no DST), months with the usual lengths, and the anchor is
Monday 00:00, January 1 of the start year.  At ts = 0.5 h a year is
17,520 steps.

Generated series are seeded and byte-reproducible.  They are statistical
stand-ins shaped to match the magnitudes of a mid-size commercial site
(~250 kW average demand, 750 kW PV peak); they are NOT measurements.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_MONTH_STARTS = tuple(int(x) for x in np.concatenate([[0], np.cumsum(MONTH_DAYS)]))
DAYS_PER_YEAR = 365

CSV_HEADER = "timestamp,theta_air_C,p_pv_kW,p_dem_kW,p_server1_kW,p_server2_kW"


class DataFormatError(ValueError):
    """A CSV file does not match the documented schema."""


@dataclass(frozen=True)
class CalendarClock:
    """Anchor of the simulated calendar plus a step cursor.

    start_year labels timestamps only; start_dow 0 means the anchor day
    is a Monday.  ts must divide 24 h evenly.
    """

    start_year: int = 2022
    start_dow: int = 0
    ts: float = 0.5
    k: int = 0

    def __post_init__(self):
        if self.ts <= 0 or abs(24.0 / self.ts - round(24.0 / self.ts)) > 1e-12:
            raise ValueError("ts must divide 24 h evenly")
        if self.k < 0:
            raise ValueError("step index must be nonnegative")

    @property
    def steps_per_day(self) -> int:
        return round(24.0 / self.ts)

    @property
    def steps_per_year(self) -> int:
        return self.steps_per_day * DAYS_PER_YEAR


def tod(clock: CalendarClock, k) -> np.ndarray | float:
    """Time of day in hours, in [0, 24)."""
    return (np.asarray(k) * clock.ts) % 24.0


def dow(clock: CalendarClock, k) -> np.ndarray | int:
    """Day of week, 0 = Monday at the anchor."""
    day = np.asarray(k) * clock.ts // 24.0
    return (day.astype(int) + clock.start_dow) % 7


def day_index(clock: CalendarClock, k) -> np.ndarray | int:
    return (np.asarray(k) * clock.ts // 24.0).astype(int)


def month_index(clock: CalendarClock, k) -> np.ndarray | int:
    """Months elapsed since the anchor (0-based, runs past 11 across years)."""
    day = np.asarray(day_index(clock, k))
    doy = day % DAYS_PER_YEAR
    month_in_year = np.searchsorted(_MONTH_STARTS, doy, side="right") - 1
    return (day // DAYS_PER_YEAR) * 12 + month_in_year


def month_start_step(clock: CalendarClock, month: int) -> int:
    """First step of the given absolute month index."""
    year, m = divmod(month, 12)
    day = year * DAYS_PER_YEAR + _MONTH_STARTS[m]
    return day * clock.steps_per_day


def date_parts(clock: CalendarClock, k: int) -> tuple[int, int, int, int, int]:
    """(year, month 1..12, day 1..31, hour, minute) of step k."""
    day = int(day_index(clock, k))
    year = clock.start_year + day // DAYS_PER_YEAR
    doy = day % DAYS_PER_YEAR
    month = int(np.searchsorted(_MONTH_STARTS, doy, side="right"))
    dom = doy - _MONTH_STARTS[month - 1] + 1
    hours = tod(clock, k)
    return year, month, dom, int(hours), int(round((hours % 1.0) * 60))


def iso_timestamp(clock: CalendarClock, k: int) -> str:
    y, mo, d, h, mi = date_parts(clock, k)
    return f"{y:04d}-{mo:02d}-{d:02d}T{h:02d}:{mi:02d}:00"


def step_of_timestamp(clock: CalendarClock, stamp: str) -> int:
    m = re.fullmatch(r"(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):00", stamp)
    if m is None:
        raise DataFormatError(f"bad timestamp {stamp!r}")
    y, mo, d, h, mi = (int(g) for g in m.groups())
    if not 1 <= mo <= 12 or not 1 <= d <= MONTH_DAYS[mo - 1]:
        raise DataFormatError(f"timestamp {stamp!r} is not a simulated-calendar date")
    day = (y - clock.start_year) * DAYS_PER_YEAR + _MONTH_STARTS[mo - 1] + (d - 1)
    hours = day * 24.0 + h + mi / 60.0
    k = hours / clock.ts
    if abs(k - round(k)) > 1e-9 or k < 0:
        raise DataFormatError(f"timestamp {stamp!r} is not on the {clock.ts} h sampling grid")
    return round(k)


@dataclass(frozen=True)
class TimeSeriesFrame:
    """Aligned per-step exogenous records over [start, start + n)."""

    start: int
    ts: float
    theta_air: np.ndarray  # degC
    p_pv: np.ndarray       # kW, >= 0
    p_dem: np.ndarray      # kW, <= 0 (consumption)
    p_server: np.ndarray   # kW, (n, 2), >= 0 magnitudes
    tod: np.ndarray        # h in [0, 24)
    dow: np.ndarray        # 0..6

    def __post_init__(self):
        n = len(self.theta_air)
        for name in ("theta_air", "p_pv", "p_dem", "tod", "dow"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise DataFormatError(f"column {name} must have length {n}")
            object.__setattr__(self, name, arr)
        ps = np.ascontiguousarray(self.p_server, dtype=float)
        if ps.shape != (n, 2):
            raise DataFormatError("p_server must have shape (n, 2)")
        object.__setattr__(self, "p_server", ps)
        self.validate()

    def validate(self) -> None:
        for name in ("theta_air", "p_pv", "p_dem", "p_server"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                row = int(np.argwhere(~np.isfinite(arr))[0][0])
                raise DataFormatError(f"non-finite {name} at row {row}")
        if np.any(self.p_pv < 0):
            raise DataFormatError(f"p_pv < 0 at row {int(np.argmax(self.p_pv < 0))}")
        if np.any(self.p_dem > 0):
            raise DataFormatError(f"p_dem > 0 at row {int(np.argmax(self.p_dem > 0))}")
        if np.any(self.p_server < 0):
            raise DataFormatError("p_server must be nonnegative")
        total_server = self.p_server.sum(axis=1)
        bad = total_server > -self.p_dem + 1e-9
        if np.any(bad):
            raise DataFormatError(f"server load exceeds total load at row {int(np.argmax(bad))}")

    @property
    def n(self) -> int:
        return len(self.theta_air)

    @property
    def end(self) -> int:
        return self.start + self.n

    def loc(self, k: int) -> int:
        """Array row of absolute step k."""
        i = k - self.start
        if not 0 <= i < self.n:
            raise IndexError(f"step {k} outside frame [{self.start}, {self.end})")
        return i

    def window(self, k: int, n: int) -> "TimeSeriesFrame":
        """View of n steps starting at absolute step k."""
        i = self.loc(k)
        if i + n > self.n:
            raise IndexError(f"window [{k}, {k + n}) runs past frame end {self.end}")
        sl = slice(i, i + n)
        return TimeSeriesFrame(start=k, ts=self.ts, theta_air=self.theta_air[sl],
                               p_pv=self.p_pv[sl], p_dem=self.p_dem[sl],
                               p_server=self.p_server[sl], tod=self.tod[sl],
                               dow=self.dow[sl])


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic weather/load generator.

    All targets (means, amplitudes) are configuration, seeded, and not
    ground truth of any real site.  Units: degC, kW, h.
    """

    seed: int = 42
    theta_mean: float = 9.0
    theta_annual_amp: float = 9.0
    theta_diurnal_amp: float = 3.5
    theta_noise_std: float = 1.6
    theta_ar1: float = 0.9
    pv_capacity: float = 750.0
    pv_seasonal_floor: float = 0.30
    pv_cloud_floor: float = 0.15
    demand_base: float = 130.0
    demand_work_bump: float = 110.0
    demand_noise_std: float = 9.0
    demand_ar1: float = 0.9
    server_base: tuple[float, float] = (45.0, 35.0)
    server_drift_amp: tuple[float, float] = (8.0, 6.0)
    server_noise_std: float = 2.0
    work_start: float = 7.0
    work_end: float = 19.0


def _ar1(rng: np.random.Generator, n: int, coeff: float, std: float) -> np.ndarray:
    """Stationary AR(1) noise with the given marginal standard deviation."""
    innov = rng.standard_normal(n) * std * np.sqrt(max(1.0 - coeff ** 2, 1e-12))
    out = lfilter([1.0], [1.0, -coeff], innov)
    return np.asarray(out)


def work_ramp(tod_h: np.ndarray, dow_d: np.ndarray, start: float, end: float) -> np.ndarray:
    """Workday occupancy shape: 1 inside [start, end) on Mon-Fri, with
    one-hour ramps ending at `start` and starting at `end`."""
    up = np.clip(tod_h - (start - 1.0), 0.0, 1.0)
    down = np.clip((end + 1.0) - tod_h, 0.0, 1.0)
    return np.minimum(up, down) * (dow_d < 5)


def solar_shape(tod_h: np.ndarray, doy: np.ndarray, seasonal_floor: float) -> np.ndarray:
    """Clear-sky production shape in [0, 1]: a daytime sine bump scaled by
    a seasonal factor peaking at midsummer (day 172)."""
    bump = np.sin(np.pi * (tod_h - 6.0) / 12.0)
    bump = np.where((tod_h > 6.0) & (tod_h < 18.0), np.maximum(bump, 0.0), 0.0)
    season = seasonal_floor + (1.0 - seasonal_floor) * 0.5 * (
        1.0 + np.cos(2.0 * np.pi * (doy - 172) / DAYS_PER_YEAR))
    return bump * season


def generate_span(cfg: GeneratorConfig, clock: CalendarClock, n_steps: int,
                  start: int = 0) -> TimeSeriesFrame:
    """Deterministic synthetic span of n_steps starting at absolute step `start`."""
    if n_steps <= 0:
        raise ValueError("n_steps must be positive")
    rng = np.random.default_rng(cfg.seed)
    k = start + np.arange(n_steps)
    tod_h = tod(clock, k)
    dow_d = dow(clock, k).astype(float)
    doy = day_index(clock, k) % DAYS_PER_YEAR

    annual = -cfg.theta_annual_amp * np.cos(2.0 * np.pi * doy / DAYS_PER_YEAR)
    diurnal = cfg.theta_diurnal_amp * np.cos(2.0 * np.pi * (tod_h - 15.0) / 24.0)
    theta_air = cfg.theta_mean + annual + diurnal + _ar1(
        rng, n_steps, cfg.theta_ar1, cfg.theta_noise_std)

    cloud_raw = _ar1(rng, n_steps, 0.97, 1.0)
    cloud = cfg.pv_cloud_floor + (1.0 - cfg.pv_cloud_floor) / (1.0 + np.exp(-1.2 * cloud_raw))
    p_pv = cfg.pv_capacity * solar_shape(tod_h, doy, cfg.pv_seasonal_floor) * cloud

    drift = np.stack([
        base + amp * np.sin(2.0 * np.pi * (doy + 40.0 * (j + 1)) / DAYS_PER_YEAR)
        for j, (base, amp) in enumerate(zip(cfg.server_base, cfg.server_drift_amp))
    ], axis=1)
    server_noise = np.stack([
        _ar1(rng, n_steps, 0.95, cfg.server_noise_std) for _ in range(2)], axis=1)
    p_server = np.maximum(drift + server_noise, 5.0)

    busy = work_ramp(tod_h, dow_d, cfg.work_start, cfg.work_end)
    base_load = cfg.demand_base + cfg.demand_work_bump * busy + _ar1(
        rng, n_steps, cfg.demand_ar1, cfg.demand_noise_std)
    base_load = np.maximum(base_load, 10.0)
    p_dem = -(base_load + p_server.sum(axis=1))

    return TimeSeriesFrame(start=start, ts=clock.ts, theta_air=theta_air, p_pv=p_pv,
                           p_dem=p_dem, p_server=p_server, tod=tod_h,
                           dow=dow(clock, k).astype(float))


def write_csv(frame: TimeSeriesFrame, clock: CalendarClock, path) -> None:
    """Write the documented CSV schema (one row per step, ISO timestamps)."""
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for i in range(frame.n):
            k = frame.start + i
            vals = ",".join(repr(float(v)) for v in (
                frame.theta_air[i], frame.p_pv[i], frame.p_dem[i],
                frame.p_server[i, 0], frame.p_server[i, 1]))
            f.write(f"{iso_timestamp(clock, k)},{vals}\n")


def load_csv(path, clock: CalendarClock | None = None) -> TimeSeriesFrame:
    """Parse the documented CSV schema back into a TimeSeriesFrame.

    Raises DataFormatError naming the offending row on missing columns,
    non-monotone timestamps, NaN, or invariant violations.
    """
    clock = clock or CalendarClock()
    with open(path) as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise DataFormatError(
                f"bad header: expected {CSV_HEADER!r}, got {header!r}")
        stamps: list[int] = []
        cols: list[list[float]] = [[], [], [], [], []]
        for row, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise DataFormatError(f"row {row}: expected 6 columns, got {len(parts)}")
            try:
                k = step_of_timestamp(clock, parts[0])
                values = [float(v) for v in parts[1:]]
            except (DataFormatError, ValueError) as exc:
                raise DataFormatError(f"row {row}: {exc}") from exc
            if any(not np.isfinite(v) for v in values):
                raise DataFormatError(f"row {row}: non-finite value")
            if stamps and k != stamps[-1] + 1:
                raise DataFormatError(f"row {row}: timestamps not contiguous/monotone")
            stamps.append(k)
            for c, v in zip(cols, values):
                c.append(v)
    if not stamps:
        raise DataFormatError("empty file: no data rows")
    start = stamps[0]
    k = start + np.arange(len(stamps))
    try:
        return TimeSeriesFrame(
            start=start, ts=clock.ts, theta_air=np.array(cols[0]), p_pv=np.array(cols[1]),
            p_dem=np.array(cols[2]), p_server=np.stack([cols[3], cols[4]], axis=1),
            tod=tod(clock, k), dow=dow(clock, k).astype(float))
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
