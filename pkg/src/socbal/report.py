"""CSV time-series files and metrics recomputed from them.

The metrics here are derived from the sampled table with whole-array numpy
operations, independently of the per-row accumulator inside the loop, so the
two paths can be checked against each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .battery import Mode
from .errors import MalformedInput
from .simulation import MetricsContext, RunMetrics, TimeSeries, timeseries_columns

CSV_NAME = "timeseries.csv"
SUMMARY_NAME = "summary.json"


def csv_columns(n: int) -> list[str]:
    """Pinned CSV column order: the time series without the floor counter."""
    return timeseries_columns(n)[:-1]


def csv_header(n: int) -> str:
    return ",".join(csv_columns(n))


def write_timeseries_csv(ts: TimeSeries, path) -> None:
    width = 4 * ts.n + 5
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(csv_header(ts.n) + "\n")
        for row in ts.data[:, :width].tolist():
            fh.write(",".join(map(repr, row)) + "\n")


def read_timeseries_csv(path) -> tuple[int, np.ndarray]:
    """Return (N, rows). Raises MalformedInput on any structural defect."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.endswith("\n"):
        raise MalformedInput(f"{path}: file does not end with a newline (truncated?)")
    lines = text.splitlines()
    if not lines:
        raise MalformedInput(f"{path}: empty file")
    header = lines[0].split(",")
    if (len(header) - 5) % 4 != 0 or len(header) < 9:
        raise MalformedInput(f"{path}: header has {len(header)} columns, expected 4N + 5")
    n = (len(header) - 5) // 4
    if header != csv_columns(n):
        raise MalformedInput(f"{path}: header does not match the expected column order for N = {n}")
    if len(lines) < 2:
        raise MalformedInput(f"{path}: no data rows")
    data = np.empty((len(lines) - 1, len(header)))
    for k, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(header):
            raise MalformedInput(f"{path}: line {k} has {len(fields)} fields, expected {len(header)}")
        try:
            data[k - 2] = [float(f) for f in fields]
        except ValueError as exc:
            raise MalformedInput(f"{path}: line {k}: {exc}") from None
    if not np.all(np.isfinite(data[:, 0])) or np.any(np.diff(data[:, 0]) <= 0):
        raise MalformedInput(f"{path}: time column is not strictly increasing")
    return n, data


def load_context(csv_path) -> MetricsContext:
    summary = Path(csv_path).with_name(SUMMARY_NAME)
    if not summary.exists():
        raise MalformedInput(f"{summary} not found next to the CSV")
    try:
        return MetricsContext.from_dict(json.loads(summary.read_text(encoding="utf-8"))["context"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"{summary}: bad context block ({exc})") from None


def _settle(t: np.ndarray, bad: np.ndarray) -> Optional[float]:
    if not bad.any():
        return float(t[0])
    last = int(np.flatnonzero(bad)[-1])
    if last == len(t) - 1:
        return None
    return float(t[last + 1])


def _monotone_violations(t: np.ndarray, v: np.ndarray, dt: float) -> int:
    if len(v) < 2:
        return 0
    dv = np.diff(v)
    tol = 10.0 * dt * float(np.max(np.abs(dv) / np.diff(t)))
    return int(np.count_nonzero(dv > tol))


def metrics_from_table(data: np.ndarray, ctx: MetricsContext) -> RunMetrics:
    n = ctx.n
    t = data[:, 0]
    soc = data[:, 1 : 1 + n]
    p_hat = data[:, 1 + 2 * n : 1 + 3 * n]
    x_hat = data[:, 1 + 3 * n : 1 + 4 * n]
    pstar, psum, v1, v2 = (data[:, 4 * n + k] for k in range(1, 5))

    energy = np.asarray(ctx.energy_scale)
    x = energy * soc if ctx.mode is Mode.DISCHARGING else energy * (1.0 - soc)
    x_a = x.sum(axis=1) / n
    err_p = np.abs(p_hat - (pstar / n)[:, None]).max(axis=1)
    err_s = np.abs(x_hat - x_a[:, None]).max(axis=1)
    track = np.abs(psum - pstar)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = x[:, :, None] / x[:, None, :]
    ratio[~np.all(x > 0, axis=1)] = np.inf
    drift = np.abs(ratio - ratio[0]).max(axis=(1, 2))
    sx = x.sum(axis=1)
    sum_rel = np.abs(x_hat.sum(axis=1) - sx) / np.abs(sx)
    outside = (x.min(axis=1) < ctx.a1) | (x.max(axis=1) > ctx.a2)

    after = t >= ctx.tb - 0.5 * ctx.dt
    kb = int(np.argmax(after)) if after.any() else None

    def sel(series):
        return float(series[after].max()) if kb is not None else None

    x_a_tb = float(x_a[kb]) if kb is not None else None
    state_tol = 0.01 * (x_a_tb if x_a_tb is not None else float(x_a[-1]))
    v1_bad = _monotone_violations(t, v1, ctx.dt)
    v2_bad = _monotone_violations(t, v2, ctx.dt)
    return RunMetrics(
        power_obs_err_at_tb=float(err_p[kb]) if kb is not None else None,
        max_power_obs_err_after_tb=sel(err_p),
        state_obs_err_at_tb=float(err_s[kb]) if kb is not None else None,
        max_state_obs_err_after_tb=sel(err_s),
        x_a_at_tb=x_a_tb,
        tracking_err_after_tb=sel(track),
        power_settle_time=_settle(t, err_p > 0.01 * ctx.p_high / n),
        state_settle_time=_settle(t, err_s > state_tol),
        soc_spread_initial=float(np.ptp(soc[0])),
        soc_spread_final=float(np.ptp(soc[-1])),
        soc_mean_initial=float(soc[0].sum() / n),
        soc_mean_final=float(soc[-1].sum() / n),
        ratio_drift_after_tb=sel(drift),
        sum_identity_max_rel=float(sum_rel.max()),
        lyapunov_v1_violations=v1_bad,
        lyapunov_v2_violations=v2_bad,
        lyapunov_monotone=v1_bad == 0 and v2_bad == 0,
        state_bounds_violated_at=float(t[np.argmax(outside)]) if outside.any() else None,
        final_time=float(t[-1]),
    )


@dataclass(frozen=True)
class Check:
    name: str
    value: Optional[float]
    limit: Optional[float]
    passed: bool


def acceptance_checks(m: RunMetrics, ctx: MetricsContext) -> list[Check]:
    """Pass/fail rows against the observer tolerances and the scenario's eps values."""

    def le(name, value, limit):
        ok = value is not None and limit is not None and value <= limit
        return Check(name, value, limit, ok)

    checks = [
        le("power observer error after tb", m.max_power_obs_err_after_tb, 0.01 * ctx.p_high / ctx.n),
        le("state observer error after tb", m.max_state_obs_err_after_tb, None if m.x_a_at_tb is None else 0.01 * m.x_a_at_tb),
        le("sum identity (relative)", m.sum_identity_max_rel, 1e-9),
        Check("Lyapunov monotone", float(m.lyapunov_v1_violations + m.lyapunov_v2_violations), 0.0, m.lyapunov_monotone),
    ]
    if ctx.eps_power is not None:
        checks.append(le("power tracking error after tb", m.tracking_err_after_tb, ctx.eps_power))
    if ctx.eps_soc is not None:
        checks.append(le("final SoC spread", m.soc_spread_final, ctx.eps_soc))
    return checks


def format_checks(checks: list[Check]) -> str:
    def fmt(v):
        return "-" if v is None else f"{v:.6g}"

    width = max(len(c.name) for c in checks)
    lines = [f"{'check':<{width}}  {'value':>12}  {'limit':>12}  result"]
    for c in checks:
        lines.append(f"{c.name:<{width}}  {fmt(c.value):>12}  {fmt(c.limit):>12}  {'PASS' if c.passed else 'FAIL'}")
    return "\n".join(lines)
