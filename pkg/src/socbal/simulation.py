"""Scenario assembly, gain validation and the synchronous fixed-step loop
coupling the battery fleet, both observers and the allocation controller."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import battery, observers
from .battery import BatteryUnit, Mode, StateBounds
from .controller import ControllerConfig, allocate_powers
from .errors import ParameterValidationError
from .observers import GainSchedule, PowerObserverParams, StateObserverParams
from .profiles import PowerProfile, ProfileBounds, desired_power, profile_bounds
from .topology import SpectralSummary, Topology, h_matrix, laplacian, spectral_summary

log = logging.getLogger(__name__)

# Relative width of the sign boundary layer, against P_high / N for the power
# observer and a2 for the state observer.
SIGN_LAYER_FRACTION = 1e-6


@dataclass(frozen=True)
class ObserverInit:
    """Initial observer states.

    ``zero``: p_hat(0) = 0 and q(0) = 0, so x_hat(0) = x(0).
    ``exact``: p_hat(0) = p*(t0) / N and q(0) the minimum-norm solution of
    L q = x_a(0) 1 - x(0), i.e. both estimates start at the true averages.
    Explicit vectors override either choice.
    """

    kind: str = "zero"
    p_hat0: Optional[tuple[float, ...]] = None
    q0: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("zero", "exact"):
            raise ValueError(f"unknown observer init '{self.kind}'")


@dataclass(frozen=True)
class AcceptanceThresholds:
    eps_soc: Optional[float] = None
    eps_power: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    units: tuple[BatteryUnit, ...]
    topology: Topology
    power_params: PowerObserverParams
    state_params: StateObserverParams
    profile: PowerProfile
    mode: Mode
    dt: float
    horizon: float
    output_stride: int = 1
    controller: Optional[ControllerConfig] = None
    state_bounds: Optional[StateBounds] = None
    acceptance: AcceptanceThresholds = field(default_factory=AcceptanceThresholds)
    init: ObserverInit = field(default_factory=ObserverInit)
    validation_override: Optional[str] = None  # documented reason; running still needs the explicit flag
    name: str = "scenario"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.output_stride < 1:
            raise ValueError("output_stride must be at least 1")
        if len(self.units) != self.topology.n:
            raise ValueError(f"{len(self.units)} units but topology has {self.topology.n} nodes")
        if any(u.mode is not self.mode for u in self.units):
            raise ValueError("every unit must run in the scenario mode")
        if self.controller is not None and self.controller.reference_sign != self.mode.reference_sign:
            raise ValueError("controller reference_sign disagrees with the scenario mode")
        for vec in (self.init.p_hat0, self.init.q0):
            if vec is not None and len(vec) != self.topology.n:
                raise ValueError("initial observer vectors must have one entry per unit")

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    name: str
    description: str
    value: float
    threshold: float
    margin: float
    passed: bool
    applicable: bool = True
    note: str = ""


@dataclass(frozen=True)
class ValidationReport:
    conditions: tuple[Condition, ...]
    bounds: ProfileBounds
    spectrum: SpectralSummary

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_parameters(s: Scenario) -> ValidationReport:
    """Check the observer gains against the convergence and boundedness conditions."""
    n = s.n
    spectrum = spectral_summary(s.topology)
    pb = profile_bounds(s.profile, s.horizon)
    pg, sg = s.power_params.schedule, s.state_params.schedule
    out = []

    alpha_min = pb.eps / n
    note = f"profile jumps at t = {', '.join(f'{j:g}' for j in pb.jumps)}" if pb.jumps else ""
    out.append(
        Condition(
            "alpha_bound",
            "alpha >= eps / N",
            s.power_params.alpha,
            alpha_min,
            s.power_params.alpha - alpha_min,
            s.power_params.alpha >= alpha_min,
            note=note,
        )
    )

    if n > 1:
        beta_min = pb.p_high / (math.sqrt(n) * spectrum.lambda2_L)
        beta = s.state_params.beta
        out.append(Condition("beta_bound", "beta >= P_high / (sqrt(N) lambda2(L))", beta, beta_min, beta - beta_min, beta >= beta_min))
    else:
        out.append(Condition("beta_bound", "beta >= P_high / (sqrt(N) lambda2(L))", s.state_params.beta, 0.0, math.inf, True, applicable=False, note="single unit"))

    val = pg.psi * pg.r * spectrum.lambda_min_H
    out.append(Condition("power_boundedness", "psi r lambda_min(H) > 2", val, 2.0, val - 2.0, val > 2.0))

    if n > 1:
        val = sg.psi * sg.r * spectrum.lambda2_L**2
        out.append(Condition("state_boundedness", "psi r lambda2(L)^2 > 2", val, 2.0, val - 2.0, val > 2.0))
    else:
        out.append(Condition("state_boundedness", "psi r lambda2(L)^2 > 2", 0.0, 2.0, math.inf, True, applicable=False, note="single unit"))

    return ValidationReport(tuple(out), pb, spectrum)


# -- resolved run settings ----------------------------------------------------


@dataclass(frozen=True)
class RunSettings:
    """Every default of a scenario made concrete for one run."""

    bounds: StateBounds
    controller: ControllerConfig
    power_schedule: GainSchedule
    state_schedule: GainSchedule
    power_layer: float
    state_layer: float
    p_high: float


def resolve_settings(s: Scenario) -> RunSettings:
    spectrum = spectral_summary(s.topology)
    bounds = s.state_bounds or battery.default_bounds(s.units)
    ctrl = s.controller or ControllerConfig(denominator_floor=bounds.a1, reference_sign=s.mode.reference_sign)
    pg, sg = s.power_params.schedule, s.state_params.schedule
    if pg.omega_cap is None:
        pg = replace(pg, omega_cap=observers.default_power_omega_cap(pg, s.dt, spectrum.lambda_max_H))
    if sg.omega_cap is None:
        sg = replace(sg, omega_cap=observers.default_state_omega_cap(sg, s.dt, spectrum.lambda_max_L))
    p_high = profile_bounds(s.profile, s.horizon).p_high
    power_layer = s.power_params.sign_layer
    if power_layer is None:
        power_layer = SIGN_LAYER_FRACTION * p_high / s.n
    state_layer = s.state_params.sign_layer
    if state_layer is None:
        state_layer = SIGN_LAYER_FRACTION * bounds.a2
    return RunSettings(bounds, ctrl, pg, sg, power_layer, state_layer, p_high)


def initial_observer_states(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """(p_hat(0), q(0)) for the scenario's init rule."""
    n = s.n
    if s.init.kind == "exact":
        x0 = np.array([battery.unit_state(u) for u in s.units])
        p0 = s.mode.reference_sign * desired_power(s.profile, s.power_params.schedule.t0)
        p_hat = np.full(n, p0 / n)
        lap = laplacian(s.topology).astype(float)
        q = np.linalg.lstsq(lap, x0.mean() - x0, rcond=None)[0]
    else:
        p_hat = np.zeros(n)
        q = np.zeros(n)
    if s.init.p_hat0 is not None:
        p_hat = np.array(s.init.p_hat0, dtype=float)
    if s.init.q0 is not None:
        q = np.array(s.init.q0, dtype=float)
    return p_hat, q


# -- outputs ------------------------------------------------------------------


def timeseries_columns(n: int) -> list[str]:
    idx = range(1, n + 1)
    return (
        ["t"]
        + [f"s_{i}" for i in idx]
        + [f"p_{i}" for i in idx]
        + [f"phat_{i}" for i in idx]
        + [f"xhat_{i}" for i in idx]
        + ["pstar", "psum", "V1", "V2", "floor_active"]
    )


@dataclass(frozen=True)
class AbortInfo:
    reason: str
    time: float
    message: str


@dataclass
class TimeSeries:
    """Sampled trajectories; one row per output step, 4N + 6 columns."""

    n: int
    data: np.ndarray
    abort: Optional[AbortInfo] = None

    @property
    def columns(self) -> list[str]:
        return timeseries_columns(self.n)

    def _block(self, k: int) -> np.ndarray:
        return self.data[:, 1 + k * self.n : 1 + (k + 1) * self.n]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def soc(self) -> np.ndarray:
        return self._block(0)

    @property
    def p(self) -> np.ndarray:
        return self._block(1)

    @property
    def p_hat(self) -> np.ndarray:
        return self._block(2)

    @property
    def x_hat(self) -> np.ndarray:
        return self._block(3)

    @property
    def pstar(self) -> np.ndarray:
        return self.data[:, 4 * self.n + 1]

    @property
    def psum(self) -> np.ndarray:
        return self.data[:, 4 * self.n + 2]

    @property
    def V1(self) -> np.ndarray:
        return self.data[:, 4 * self.n + 3]

    @property
    def V2(self) -> np.ndarray:
        return self.data[:, 4 * self.n + 4]

    @property
    def floor_active(self) -> np.ndarray:
        return self.data[:, 4 * self.n + 5]


@dataclass(frozen=True)
class MetricsContext:
    """Scenario facts needed to turn sampled rows into metrics."""

    n: int
    energy_scale: tuple[float, ...]
    mode: Mode
    t0: float
    tb: float
    dt: float
    p_high: float
    a1: float
    a2: float
    eps_soc: Optional[float] = None
    eps_power: Optional[float] = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["energy_scale"] = list(self.energy_scale)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsContext":
        d = dict(d)
        d["energy_scale"] = tuple(float(v) for v in d["energy_scale"])
        d["mode"] = Mode(d["mode"])
        return cls(**d)


def metrics_context(s: Scenario, settings: Optional[RunSettings] = None) -> MetricsContext:
    settings = settings or resolve_settings(s)
    return MetricsContext(
        n=s.n,
        energy_scale=tuple(u.energy_scale for u in s.units),
        mode=s.mode,
        t0=s.power_params.schedule.t0,
        tb=s.power_params.schedule.tb,
        dt=s.dt,
        p_high=settings.p_high,
        a1=settings.bounds.a1,
        a2=settings.bounds.a2,
        eps_soc=s.acceptance.eps_soc,
        eps_power=s.acceptance.eps_power,
    )


@dataclass(frozen=True)
class RunMetrics:
    power_obs_err_at_tb: Optional[float]
    max_power_obs_err_after_tb: Optional[float]
    state_obs_err_at_tb: Optional[float]
    max_state_obs_err_after_tb: Optional[float]
    x_a_at_tb: Optional[float]
    tracking_err_after_tb: Optional[float]
    power_settle_time: Optional[float]
    state_settle_time: Optional[float]
    soc_spread_initial: float
    soc_spread_final: float
    soc_mean_initial: float
    soc_mean_final: float
    ratio_drift_after_tb: Optional[float]
    sum_identity_max_rel: float
    lyapunov_v1_violations: int
    lyapunov_v2_violations: int
    lyapunov_monotone: bool
    state_bounds_violated_at: Optional[float]
    final_time: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def lyapunov_diagnostics(v: np.ndarray, h_inv: np.ndarray, x_hat: np.ndarray, x_a: float) -> tuple[float, float]:
    """V1 = 1/2 v^T H^-1 v and V2 = 1/2 |x_hat - x_a 1|^2."""
    e = x_hat - x_a
    return 0.5 * float(v @ h_inv @ v), 0.5 * float(e @ e)


def monotone_violations(t: Sequence[float], values: Sequence[float], dt: float) -> int:
    """Count sample-to-sample increases beyond 10 dt times the largest sampled |dV/dt|."""
    if len(values) < 2:
        return 0
    rates = [abs(values[k + 1] - values[k]) / (t[k + 1] - t[k]) for k in range(len(values) - 1)]
    tol = 10.0 * dt * max(rates)
    return sum(1 for k in range(len(values) - 1) if values[k + 1] - values[k] > tol)


def _settle_time(times: list[float], errors: list[float], tol: float) -> Optional[float]:
    last_bad = None
    for k, e in enumerate(errors):
        if e > tol:
            last_bad = k
    if last_bad is None:
        return times[0]
    if last_bad == len(errors) - 1:
        return None
    return times[last_bad + 1]


class _RowMetrics:
    """Accumulates per-row scalars inside the loop; finalised after the run."""

    def __init__(self, ctx: MetricsContext):
        self.ctx = ctx
        self.t: list[float] = []
        self.err_p: list[float] = []
        self.err_s: list[float] = []
        self.x_a: list[float] = []
        self.track: list[float] = []
        self.drift: list[float] = []
        self.sum_rel = 0.0
        self.v1: list[float] = []
        self.v2: list[float] = []
        self.violated_at: Optional[float] = None
        self.x0: Optional[np.ndarray] = None
        self.soc_first: Optional[np.ndarray] = None
        self.soc_last: Optional[np.ndarray] = None

    def add(self, t, soc, x, x_hat, p_hat, pstar, psum, v1, v2):
        n = self.ctx.n
        if self.x0 is None:
            self.x0 = x.copy()
            self.soc_first = soc.copy()
        self.soc_last = soc.copy()
        x_a = x.sum() / n
        self.t.append(t)
        self.err_p.append(float(np.max(np.abs(p_hat - pstar / n))))
        self.err_s.append(float(np.max(np.abs(x_hat - x_a))))
        self.x_a.append(float(x_a))
        self.track.append(abs(psum - pstar))
        ratio = x[:, None] / x[None, :] if np.all(x > 0) else np.full((n, n), np.inf)
        ratio0 = self.x0[:, None] / self.x0[None, :]
        self.drift.append(float(np.max(np.abs(ratio - ratio0))))
        sx = x.sum()
        self.sum_rel = max(self.sum_rel, abs(x_hat.sum() - sx) / abs(sx))
        self.v1.append(v1)
        self.v2.append(v2)
        if self.violated_at is None and (x.min() < self.ctx.a1 or x.max() > self.ctx.a2):
            self.violated_at = t

    def finish(self) -> RunMetrics:
        ctx = self.ctx
        after = [k for k, t in enumerate(self.t) if t >= ctx.tb - 0.5 * ctx.dt]
        kb = after[0] if after else None

        def sel(series):
            return max(series[k] for k in after) if after else None

        x_a_tb = self.x_a[kb] if kb is not None else None
        state_tol = 0.01 * (x_a_tb if x_a_tb is not None else self.x_a[-1])
        v1_bad = monotone_violations(self.t, self.v1, ctx.dt)
        v2_bad = monotone_violations(self.t, self.v2, ctx.dt)
        return RunMetrics(
            power_obs_err_at_tb=self.err_p[kb] if kb is not None else None,
            max_power_obs_err_after_tb=sel(self.err_p),
            state_obs_err_at_tb=self.err_s[kb] if kb is not None else None,
            max_state_obs_err_after_tb=sel(self.err_s),
            x_a_at_tb=x_a_tb,
            tracking_err_after_tb=sel(self.track),
            power_settle_time=_settle_time(self.t, self.err_p, 0.01 * ctx.p_high / ctx.n),
            state_settle_time=_settle_time(self.t, self.err_s, state_tol),
            soc_spread_initial=float(self.soc_first.max() - self.soc_first.min()),
            soc_spread_final=float(self.soc_last.max() - self.soc_last.min()),
            soc_mean_initial=float(self.soc_first.sum() / ctx.n),
            soc_mean_final=float(self.soc_last.sum() / ctx.n),
            ratio_drift_after_tb=sel(self.drift),
            sum_identity_max_rel=float(self.sum_rel),
            lyapunov_v1_violations=v1_bad,
            lyapunov_v2_violations=v2_bad,
            lyapunov_monotone=v1_bad == 0 and v2_bad == 0,
            state_bounds_violated_at=self.violated_at,
            final_time=self.t[-1],
        )


# -- the loop -----------------------------------------------------------------

_min = np.minimum.reduce
_max = np.maximum.reduce


def run(s: Scenario, *, override_validation: bool = False) -> tuple[TimeSeries, RunMetrics]:
    """Integrate the closed loop with explicit Euler at step ``s.dt``.

    Each step reads one snapshot of every node, computes the consensus
    signals, allocations and derivatives from it, then commits all updates
    at once. Aborts on SoC leaving [0, 1] or a unit state leaving [a1, a2];
    the partial series then carries ``abort``.
    """
    report = validate_parameters(s)
    if not report.passed and not override_validation:
        raise ParameterValidationError(report)
    if s.horizon <= s.power_params.schedule.tb - s.power_params.schedule.t0:
        log.warning("horizon %.3g ends before the observer deadline", s.horizon)

    cfg = resolve_settings(s)
    ctx = metrics_context(s, cfg)
    n, dt = s.n, s.dt
    mode = s.mode
    sign = mode.reference_sign

    lap = laplacian(s.topology).astype(float)
    h = h_matrix(s.topology).astype(float)
    pinning = s.topology.pinning.astype(float)
    h_inv = np.linalg.inv(h)
    energy = np.array([u.energy_scale for u in s.units])
    soc = np.array([u.soc for u in s.units])
    p_hat, q = initial_observer_states(s)

    alpha, beta = s.power_params.alpha, s.state_params.beta
    pg, sg = cfg.power_schedule, cfg.state_schedule
    gain_p, gain_s = pg.base_gain, sg.base_gain
    a1, a2 = cfg.bounds.a1, cfg.bounds.a2
    t0 = pg.t0

    acc = _RowMetrics(ctx)
    rows = []
    abort = None
    width = 4 * n + 6
    steps = s.steps

    def record(t, x, x_hat, v, p, pstar, floors):
        psum = float(p.sum())
        v1, v2 = lyapunov_diagnostics(v, h_inv, x_hat, x.sum() / n)
        row = np.empty(width)
        row[0] = t
        row[1 : 1 + n] = soc
        row[1 + n : 1 + 2 * n] = p
        row[1 + 2 * n : 1 + 3 * n] = p_hat
        row[1 + 3 * n : 1 + 4 * n] = x_hat
        row[4 * n + 1 :] = (pstar, psum, v1, v2, floors)
        rows.append(row)
        acc.add(t, soc, x, x_hat, p_hat, pstar, psum, v1, v2)

    for k in range(steps + 1):
        t = t0 + k * dt
        pstar = sign * desired_power(s.profile, t)
        x = battery.fleet_states(energy, soc, mode)
        x_hat = lap @ q + x
        xi = lap @ x_hat
        v = observers.power_consensus_vector(p_hat, h, pinning, pstar / n)
        p, floor_mask = allocate_powers(x, x_hat, p_hat, cfg.controller)

        if _min(x) < a1 or _max(x) > a2:
            unit = int(np.argmax((x < a1) | (x > a2))) + 1
            record(t, x, x_hat, v, p, pstar, int(floor_mask.sum()))
            abort = AbortInfo("Assumption1Violated", t, f"unit {unit} state {x[unit - 1]:.6g} J outside [{a1:.6g}, {a2:.6g}]")
            break
        recorded = k % s.output_stride == 0
        if recorded:
            record(t, x, x_hat, v, p, pstar, int(floor_mask.sum()))
        if k == steps:
            break

        w_p = observers.omega(t, pg)
        w_s = observers.omega(t, sg)
        p_hat = p_hat + dt * (-alpha * observers.sgn_vector(v, cfg.power_layer) - gain_p * w_p * v)
        q = q + dt * (-beta * observers.sgn_vector(xi, cfg.state_layer) - gain_s * w_s * xi)
        new_soc = battery.fleet_soc_step(soc, p, dt, energy)
        if _min(new_soc) < 0.0 or _max(new_soc) > 1.0:
            unit = int(np.argmax((new_soc < 0.0) | (new_soc > 1.0))) + 1
            if not recorded:
                record(t, x, x_hat, v, p, pstar, int(floor_mask.sum()))
            abort = AbortInfo("SocOutOfRange", t + dt, f"unit {unit} SoC would move to {new_soc[unit - 1]!r}")
            break
        soc = new_soc

    ts = TimeSeries(n=n, data=np.vstack(rows), abort=abort)
    if abort is not None:
        log.warning("run aborted at t=%.6g: %s", abort.time, abort.message)
    return ts, acc.finish()


def _run_one(args):
    s, override = args
    return run(s, override_validation=override)


def run_many(scenarios: Sequence[Scenario], *, override_validation: bool = False, max_workers: Optional[int] = None):
    """Run independent scenarios concurrently in worker processes."""
    jobs = [(s, override_validation) for s in scenarios]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_one, jobs))
