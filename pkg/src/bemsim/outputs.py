"""Deterministic CSV logs, summary tables and minimal SVG line charts.

Floats are written with shortest round-trip repr so that metrics
recomputed from a CSV equal the in-memory values exactly and reruns are
byte-identical.  Wall-clock timings never enter these files.
"""

from __future__ import annotations

import os

import numpy as np

from .building import N_BUILDING, N_ZONES
from .config import WorldConfig
from .datagen import CalendarClock, iso_timestamp
from .metrics import metric_weights, monthly_series, rmse_tracking, wmare, wmre
from .mpc import zone_weights
from .scenarios import ScenarioResult

_STEP_COLUMNS = (
    ["k", "timestamp"]
    + [f"theta_{i}_C" for i in range(1, N_ZONES + 1)] + ["e_bat_kWh"]
    + [f"q_heat_{i}_kW" for i in range(1, N_BUILDING + 1)]
    + [f"q_cool_{i}_kW" for i in range(1, N_ZONES + 1)]
    + ["p_grid_kW", "p_buy_kW", "p_sell_kW", "p_chp_kW", "p_bat_kW", "q_rad_kW"]
    + [f"eps_true_{i}_K" for i in range(1, N_ZONES + 1)]
    + [f"eps_hat_{i}_K" for i in range(1, N_ZONES + 1)]
    + [f"eps_target_{i}_K" for i in range(1, N_ZONES + 1)]
    + ["j_comf", "j_server", "j_mon", "solver_status", "solver_iterations",
       "failsafe"]
)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scenario_csv(result: ScenarioResult, clock: CalendarClock, path) -> None:
    with open(path, "w") as f:
        f.write(",".join(_STEP_COLUMNS) + "\n")
        for i in range(result.n_steps):
            k = int(result.steps[i])
            pg = result.p_grid[i]
            row = [str(k), iso_timestamp(clock, k)]
            row += [_fmt(v) for v in result.theta[i]]
            row.append(_fmt(result.e_bat[i]))
            row += [_fmt(v) for v in result.q_heat[i]]
            row += [_fmt(v) for v in result.q_cool[i]]
            row += [_fmt(pg), _fmt(max(pg, 0.0)), _fmt(max(-pg, 0.0)),
                    _fmt(result.p_chp[i]), _fmt(result.p_bat[i]),
                    _fmt(result.q_rad[i])]
            row += [_fmt(v) for v in result.eps_true[i]]
            row += [_fmt(v) for v in result.eps_hat[i]]
            row += [_fmt(v) for v in result.eps_target[i]]
            row += [_fmt(result.j_comf[i]), _fmt(result.j_server[i]),
                    _fmt(result.j_mon[i]), result.solver_status[i],
                    str(int(result.solver_iterations[i])),
                    str(int(result.failsafe[i]))]
            f.write(",".join(row) + "\n")


def read_scenario_log(path) -> dict:
    """Parse a scenario step CSV back into arrays (for metric recomputation)."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != list(_STEP_COLUMNS):
            raise ValueError(f"{path}: unexpected step-log header")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if not rows:
        raise ValueError(f"{path}: empty step log")
    col = {name: j for j, name in enumerate(header)}
    out = {"k": np.array([int(r[col["k"]]) for r in rows])}
    for prefix, count, unit in (("theta", N_ZONES, "C"),
                                ("eps_true", N_ZONES, "K"),
                                ("eps_hat", N_ZONES, "K"),
                                ("eps_target", N_ZONES, "K")):
        idx = [col[f"{prefix}_{i}_{unit}"] for i in range(1, count + 1)]
        out[prefix] = np.array([[float(r[j]) for j in idx] for r in rows])
    return out


def recompute_metrics(log: dict, world: WorldConfig) -> tuple[dict, dict]:
    """(aggregate, monthly) metrics from a parsed step log."""
    w = metric_weights(world.building)
    wthb, _ = zone_weights(world.building)
    resid = log["eps_target"] - log["eps_hat"]
    ref = world.control.ref_comfort
    agg = {
        "wmare_K": wmare(resid, w),
        "wmre_K": wmre(resid, w),
        "rmse_tracking_K": rmse_tracking(log["theta"], wthb, ref),
    }
    monthly = monthly_series(log["k"], resid, log["theta"], w, wthb,
                             world.clock, ref)
    return agg, monthly


def write_summary_csv(results: dict, path) -> None:
    """Table-style summary: one row per metric, one column per scenario."""
    sids = list(results)
    with open(path, "w") as f:
        f.write("metric," + ",".join(sids) + "\n")
        for metric in ("wmare_K", "wmre_K", "rmse_tracking_K"):
            vals = [_fmt(results[s].metrics[metric]) for s in sids]
            f.write(metric + "," + ",".join(vals) + "\n")


def write_monthly_csv(results: dict, path) -> None:
    with open(path, "w") as f:
        f.write("scenario,month,wmare_K,wmre_K,rmse_tracking_K\n")
        for sid, res in results.items():
            mo = res.monthly
            for j, m in enumerate(mo["month"]):
                f.write(f"{sid},{m},{_fmt(mo['wmare'][j])},{_fmt(mo['wmre'][j])},"
                        f"{_fmt(mo['rmse'][j])}\n")


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _svg_chart(series: dict, title: str, y_label: str, path) -> None:
    """Minimal standalone SVG: one polyline per scenario over month index."""
    width, height = 720, 420
    ml, mr, mt, mb = 70, 160, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    ys = [v for vals in series.values() for v in vals[1]]
    xs = [v for vals in series.values() for v in vals[0]]
    if not ys:
        ys, xs = [0.0, 1.0], [0.0, 1.0]
    y_lo, y_hi = min(ys), max(ys)
    if y_hi - y_lo < 1e-12:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = min(xs), max(xs)
    if x_hi - x_lo < 1e-12:
        x_hi = x_lo + 1.0

    def sx(x):
        return ml + pw * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return mt + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{ml}" y="24" font-family="sans-serif" font-size="16">'
             f'{title}</text>']
    # axes and gridlines
    for j in range(5):
        yv = y_lo + (y_hi - y_lo) * j / 4
        parts.append(f'<line x1="{ml}" y1="{sy(yv):.1f}" x2="{ml + pw}" '
                     f'y2="{sy(yv):.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{ml - 8}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{yv:.4g}</text>')
    for x in sorted(set(int(v) for v in xs)):
        parts.append(f'<text x="{sx(x):.1f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{x}</text>')
    parts.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" '
                 f'stroke="black"/>')
    parts.append(f'<text x="{ml + pw / 2:.0f}" y="{height - 12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">month of study year</text>')
    parts.append(f'<text x="18" y="{mt + ph / 2:.0f}" font-family="sans-serif" '
                 f'font-size="12" transform="rotate(-90 18 {mt + ph / 2:.0f})" '
                 f'text-anchor="middle">{y_label}</text>')
    for j, (sid, (mx, my)) in enumerate(series.items()):
        color = _PALETTE[j % len(_PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(mx, my))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        ly = mt + 18 * j
        parts.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 34}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 40}" y="{ly + 4}" '
                     f'font-family="sans-serif" font-size="12">{sid}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def write_charts(results: dict, out_dir) -> list:
    files = []
    for key, title, ylab, fname in (
            ("wmare", "Monthly weighted mean absolute residual error",
             "WMARE [K]", "wmare_monthly.svg"),
            ("wmre", "Monthly weighted mean residual error (bias)",
             "WMRE [K]", "wmre_monthly.svg"),
            ("rmse", "Monthly temperature-tracking RMSE",
             "RMSE [K]", "rmse_monthly.svg")):
        series = {}
        for sid, res in results.items():
            months = [m - min(res.monthly["month"]) + 1 for m in res.monthly["month"]]
            series[sid] = (months, res.monthly[key])
        path = os.path.join(out_dir, fname)
        _svg_chart(series, title, ylab, path)
        files.append(path)
    return files


def write_outputs(results: dict, world: WorldConfig, out_dir) -> list:
    """Step CSV per scenario, summary CSV, monthly CSV and SVG charts."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for sid, res in results.items():
        path = os.path.join(out_dir, f"steps_{sid}.csv")
        write_scenario_csv(res, world.clock, path)
        files.append(path)
    summary = os.path.join(out_dir, "summary.csv")
    write_summary_csv(results, summary)
    files.append(summary)
    monthly = os.path.join(out_dir, "monthly.csv")
    write_monthly_csv(results, monthly)
    files.append(monthly)
    files += write_charts(results, out_dir)
    return files
