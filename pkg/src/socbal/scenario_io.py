"""Scenario files: strict YAML schema, SI conversion and bundled presets.

Unknown keys are rejected with a suggestion; every semantic problem in a
file is collected and reported together.
"""

from __future__ import annotations

import difflib
import math
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from . import profiles
from .battery import SECONDS_PER_HOUR, Mode, StateBounds, unit_from_config
from .controller import ControllerConfig
from .errors import ParseError, ScenarioValidationError, TopologyError
from .observers import GainSchedule, PowerObserverParams, StateObserverParams
from .profiles import PowerProfile, ProfileKind, Segment
from .simulation import AcceptanceThresholds, ObserverInit, Scenario
from .topology import build_topology

TOP_KEYS = {
    "name", "mode", "units", "topology", "observers", "initial_state", "profile",
    "controller", "state_bounds", "integration", "acceptance", "validation_override",
}
UNIT_KEYS = {"capacity_ah", "voltage", "soc"}
TOPOLOGY_KEYS = {"edges", "access_flags"}
OBSERVER_KEYS = {
    "t0", "tb", "psi", "r", "alpha", "beta",
    "power_sign_layer", "state_sign_layer", "power_omega_cap", "state_omega_cap",
}
INIT_KEYS = {"init", "p_hat", "q"}
PROFILE_KEYS = {
    ProfileKind.CASE1_SINUSOID: {"kind", "amplitude", "offset", "frequency", "phase"},
    ProfileKind.CONSTANT: {"kind", "value"},
    ProfileKind.CASE2_PIECEWISE: {"kind", "periodic", "hold_after_end"},
    ProfileKind.PIECEWISE: {"kind", "periodic", "hold_after_end", "segments"},
}
SEGMENT_KEYS = {"start", "end", "offset", "slope", "amplitude", "frequency", "phase"}
CONTROLLER_KEYS = {"denominator_floor"}
BOUNDS_KEYS = {"a1", "a2"}
INTEGRATION_KEYS = {"dt", "horizon", "output_stride"}
ACCEPTANCE_KEYS = {"eps_soc", "eps_power"}

_MISSING = object()


# -- YAML with line numbers ---------------------------------------------------


def _to_python(node, path: str, lines: dict):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            if key in out:
                raise ParseError("duplicate key", field=f"{path}.{key}".lstrip("."), line=key_node.start_mark.line + 1)
            child = f"{path}.{key}".lstrip(".")
            out[key] = _to_python(value_node, child, lines)
            lines[child] = key_node.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.SafeLoader("").construct_object(node, deep=True)


def _load_yaml(text: str) -> tuple[dict, dict]:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(str(exc).splitlines()[0], line=mark.line + 1 if mark else None) from None
    if root is None:
        raise ParseError("empty scenario file")
    lines: dict = {}
    data = _to_python(root, "", lines)
    if not isinstance(data, dict):
        raise ParseError("top level must be a mapping", line=1)
    return data, lines


class _Reader:
    def __init__(self, lines: dict):
        self.lines = lines
        self.problems: list[str] = []

    def line(self, path: str) -> Optional[int]:
        return self.lines.get(path)

    def mapping(self, value, path: str, allowed: set) -> dict:
        if not isinstance(value, dict):
            raise ParseError("expected a mapping", field=path, line=self.line(path))
        for key in value:
            if key not in allowed:
                close = difflib.get_close_matches(str(key), sorted(allowed), n=1)
                hint = f"; did you mean '{close[0]}'?" if close else ""
                raise ParseError(f"unknown key '{key}'{hint}", field=f"{path}.{key}".lstrip("."), line=self.line(f"{path}.{key}".lstrip(".")))
        return value

    def number(self, m: dict, path: str, key: str, default: Any = _MISSING) -> Any:
        full = f"{path}.{key}".lstrip(".")
        if key not in m or m[key] is None:
            if default is _MISSING:
                raise ParseError("required value missing", field=full, line=self.line(path))
            return default
        return self._as_float(m[key], full)

    def _as_float(self, v, full: str) -> float:
        if isinstance(v, bool):
            raise ParseError("expected a number, got a boolean", field=full, line=self.line(full))
        if isinstance(v, (int, float)):
            return float(v)
        if isinstance(v, str):
            try:
                return float(v)
            except ValueError:
                pass
        raise ParseError(f"expected a number, got {v!r}", field=full, line=self.line(full))

    def numbers(self, m: dict, path: str, key: str, default: Any = _MISSING) -> Any:
        full = f"{path}.{key}".lstrip(".")
        if key not in m or m[key] is None:
            if default is _MISSING:
                raise ParseError("required list missing", field=full, line=self.line(path))
            return default
        if not isinstance(m[key], list):
            raise ParseError("expected a list", field=full, line=self.line(full))
        return [self._as_float(v, f"{full}[{i}]") for i, v in enumerate(m[key])]

    def integer(self, m: dict, path: str, key: str, default: Any = _MISSING) -> Any:
        full = f"{path}.{key}".lstrip(".")
        if key not in m or m[key] is None:
            if default is _MISSING:
                raise ParseError("required value missing", field=full, line=self.line(path))
            return default
        v = m[key]
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(f"expected an integer, got {v!r}", field=full, line=self.line(full))
        return v

    def boolean(self, m: dict, path: str, key: str, default: bool) -> bool:
        v = m.get(key, default)
        if v is None:
            return default
        if not isinstance(v, bool):
            full = f"{path}.{key}".lstrip(".")
            raise ParseError(f"expected true/false, got {v!r}", field=full, line=self.line(full))
        return v

    def string(self, m: dict, path: str, key: str, default: Any = _MISSING) -> Any:
        full = f"{path}.{key}".lstrip(".")
        if key not in m or m[key] is None:
            if default is _MISSING:
                raise ParseError("required value missing", field=full, line=self.line(path))
            return default
        if not isinstance(m[key], str):
            raise ParseError(f"expected a string, got {m[key]!r}", field=full, line=self.line(full))
        return m[key]

    def check(self, ok: bool, message: str, path: str) -> bool:
        if not ok:
            line = self.line(path)
            self.problems.append(f"{path}{f' (line {line})' if line else ''}: {message}")
        return ok


# -- parsing ------------------------------------------------------------------


def parse_scenario(path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    return parse_scenario_text(text)


def parse_scenario_text(text: str) -> Scenario:
    data, lines = _load_yaml(text)
    r = _Reader(lines)
    top = r.mapping(data, "", TOP_KEYS)

    name = r.string(top, "", "name", "scenario")
    mode_name = r.string(top, "", "mode")
    try:
        mode = Mode(mode_name)
    except ValueError:
        raise ParseError(f"mode must be one of {[m.value for m in Mode]}", field="mode", line=r.line("mode")) from None

    # units
    raw_units = top.get("units")
    if not isinstance(raw_units, list) or not raw_units:
        raise ParseError("expected a non-empty list of units", field="units", line=r.line("units"))
    unit_cfg = []
    for i, u in enumerate(raw_units):
        p = f"units[{i}]"
        u = r.mapping(u, p, UNIT_KEYS)
        cap, volt, soc = r.number(u, p, "capacity_ah"), r.number(u, p, "voltage"), r.number(u, p, "soc")
        ok = r.check(cap > 0, f"unit {i + 1}: capacity must be positive, got {cap}", f"{p}.capacity_ah")
        ok &= r.check(volt > 0, f"unit {i + 1}: voltage must be positive, got {volt}", f"{p}.voltage")
        ok &= r.check(0.0 <= soc <= 1.0, f"unit {i + 1}: soc {soc} outside [0, 1]", f"{p}.soc")
        unit_cfg.append((cap, volt, soc) if ok else None)
    n = len(unit_cfg)

    # topology
    tp = r.mapping(top.get("topology"), "topology", TOPOLOGY_KEYS)
    raw_edges = tp.get("edges") or []
    if not isinstance(raw_edges, list):
        raise ParseError("expected a list of [i, j] pairs", field="topology.edges", line=r.line("topology.edges"))
    edges = []
    for k, e in enumerate(raw_edges):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in e)):
            raise ParseError("edge must be a pair of unit numbers", field=f"topology.edges[{k}]", line=r.line(f"topology.edges[{k}]"))
        edges.append(tuple(e))
    flags = tp.get("access_flags")
    if not (isinstance(flags, list) and all(isinstance(b, int) and not isinstance(b, bool) for b in flags)):
        raise ParseError("expected a list of 0/1 flags", field="topology.access_flags", line=r.line("topology.access_flags"))
    topology = None
    try:
        topology = build_topology(n, edges, flags)
    except TopologyError as exc:
        r.check(False, f"{type(exc).__name__}: {exc}", "topology")

    # observers
    op = "observers"
    ob = r.mapping(top.get(op), op, OBSERVER_KEYS)
    t0, tb = r.number(ob, op, "t0", 0.0), r.number(ob, op, "tb")
    psi, rr = r.number(ob, op, "psi"), r.number(ob, op, "r")
    alpha, beta = r.number(ob, op, "alpha"), r.number(ob, op, "beta")
    p_layer, s_layer = r.number(ob, op, "power_sign_layer", None), r.number(ob, op, "state_sign_layer", None)
    p_cap, s_cap = r.number(ob, op, "power_omega_cap", None), r.number(ob, op, "state_omega_cap", None)
    ok_obs = r.check(tb > t0, f"tb={tb} must exceed t0={t0}", f"{op}.tb")
    ok_obs &= r.check(t0 >= 0, "t0 must be nonnegative", f"{op}.t0")
    ok_obs &= r.check(psi > 0, "psi must be positive", f"{op}.psi")
    ok_obs &= r.check(rr > 0, "r must be positive", f"{op}.r")
    ok_obs &= r.check(alpha >= 0, "alpha must be nonnegative", f"{op}.alpha")
    ok_obs &= r.check(beta >= 0, "beta must be nonnegative", f"{op}.beta")
    for key, val in (("power_sign_layer", p_layer), ("state_sign_layer", s_layer)):
        ok_obs &= r.check(val is None or val >= 0, "must be nonnegative", f"{op}.{key}")
    for key, val in (("power_omega_cap", p_cap), ("state_omega_cap", s_cap)):
        ok_obs &= r.check(val is None or val >= 1, "must be at least 1", f"{op}.{key}")

    # initial observer state
    ip = "initial_state"
    init = ObserverInit()
    if top.get(ip) is not None:
        im = r.mapping(top[ip], ip, INIT_KEYS)
        kind = r.string(im, ip, "init", "zero")
        p_hat0, q0 = r.numbers(im, ip, "p_hat", None), r.numbers(im, ip, "q", None)
        ok = r.check(kind in ("zero", "exact"), f"init must be 'zero' or 'exact', got '{kind}'", f"{ip}.init")
        ok &= r.check(p_hat0 is None or len(p_hat0) == n, f"p_hat needs {n} entries", f"{ip}.p_hat")
        ok &= r.check(q0 is None or len(q0) == n, f"q needs {n} entries", f"{ip}.q")
        if ok:
            init = ObserverInit(kind, tuple(p_hat0) if p_hat0 else None, tuple(q0) if q0 else None)

    profile = _parse_profile(r, top.get("profile"))

    # controller / bounds
    controller = None
    if top.get("controller") is not None:
        cm = r.mapping(top["controller"], "controller", CONTROLLER_KEYS)
        floor = r.number(cm, "controller", "denominator_floor")
        if r.check(floor > 0, "denominator_floor must be positive", "controller.denominator_floor"):
            controller = ControllerConfig(floor, mode.reference_sign)
    bounds = None
    if top.get("state_bounds") is not None:
        bm = r.mapping(top["state_bounds"], "state_bounds", BOUNDS_KEYS)
        a1, a2 = r.number(bm, "state_bounds", "a1"), r.number(bm, "state_bounds", "a2")
        if r.check(0 < a1 < a2, f"need 0 < a1 < a2, got a1={a1}, a2={a2}", "state_bounds"):
            bounds = StateBounds(a1, a2)

    ig = r.mapping(top.get("integration"), "integration", INTEGRATION_KEYS)
    dt = r.number(ig, "integration", "dt")
    horizon = r.number(ig, "integration", "horizon")
    stride = r.integer(ig, "integration", "output_stride", 1)
    r.check(dt > 0, "dt must be positive", "integration.dt")
    r.check(horizon > 0, "horizon must be positive", "integration.horizon")
    r.check(stride >= 1, "output_stride must be at least 1", "integration.output_stride")

    acceptance = AcceptanceThresholds()
    if top.get("acceptance") is not None:
        am = r.mapping(top["acceptance"], "acceptance", ACCEPTANCE_KEYS)
        acceptance = AcceptanceThresholds(r.number(am, "acceptance", "eps_soc", None), r.number(am, "acceptance", "eps_power", None))

    override = r.string(top, "", "validation_override", None)

    if r.problems:
        raise ScenarioValidationError(r.problems)

    units = tuple(unit_from_config(cap, volt, soc, mode) for cap, volt, soc in unit_cfg)
    power_sched = GainSchedule(t0, tb, psi, rr, p_cap)
    state_sched = GainSchedule(t0, tb, psi, rr, s_cap)
    return Scenario(
        units=units,
        topology=topology,
        power_params=PowerObserverParams(alpha, power_sched, p_layer),
        state_params=StateObserverParams(beta, state_sched, s_layer),
        profile=profile,
        mode=mode,
        dt=dt,
        horizon=horizon,
        output_stride=stride,
        controller=controller,
        state_bounds=bounds,
        acceptance=acceptance,
        init=init,
        validation_override=override,
        name=name,
    )


def _parse_profile(r: _Reader, raw) -> PowerProfile:
    path = "profile"
    if not isinstance(raw, dict):
        raise ParseError("expected a mapping", field=path, line=r.line(path))
    kind_name = r.string(raw, path, "kind")
    try:
        kind = ProfileKind(kind_name)
    except ValueError:
        names = [k.value for k in ProfileKind]
        close = difflib.get_close_matches(kind_name, names, n=1)
        hint = f"; did you mean '{close[0]}'?" if close else ""
        raise ParseError(f"unknown profile kind '{kind_name}'{hint}", field="profile.kind", line=r.line("profile.kind")) from None
    r.mapping(raw, path, PROFILE_KEYS[kind])
    if kind is ProfileKind.CASE1_SINUSOID:
        return profiles.case1_sinusoid(
            r.number(raw, path, "amplitude", 4200.0),
            r.number(raw, path, "offset", 4200.0),
            r.number(raw, path, "frequency", 1.0),
            r.number(raw, path, "phase", 0.0),
        )
    if kind is ProfileKind.CONSTANT:
        return profiles.constant(r.number(raw, path, "value"))
    periodic = r.boolean(raw, path, "periodic", False)
    hold = r.boolean(raw, path, "hold_after_end", kind is ProfileKind.CASE2_PIECEWISE)
    if kind is ProfileKind.CASE2_PIECEWISE:
        return profiles.case2_piecewise(periodic=periodic, hold_after_end=hold)
    raw_segments = raw.get("segments")
    if not isinstance(raw_segments, list) or not raw_segments:
        raise ParseError("expected a non-empty list of segments", field="profile.segments", line=r.line("profile.segments"))
    segments = []
    for i, sm in enumerate(raw_segments):
        sp = f"profile.segments[{i}]"
        sm = r.mapping(sm, sp, SEGMENT_KEYS)
        end = sm.get("end")
        fields = {k: r.number(sm, sp, k, 0.0) for k in ("offset", "slope", "amplitude", "frequency", "phase")}
        try:
            segments.append(Segment(r.number(sm, sp, "start"), math.inf if end in (None, ".inf") else r.number(sm, sp, "end"), **fields))
        except ValueError as exc:
            raise ParseError(str(exc), field=sp, line=r.line(sp)) from None
    try:
        return profiles.piecewise(segments, periodic=periodic, hold_after_end=hold)
    except ValueError as exc:
        raise ParseError(str(exc), field="profile.segments", line=r.line("profile.segments")) from None


# -- emission -----------------------------------------------------------------


def _amp_hours(coulombs: float) -> float:
    """An Ah value whose SI conversion reproduces ``coulombs`` exactly."""
    ah = coulombs / SECONDS_PER_HOUR
    for direction in (math.inf, -math.inf):
        cand = ah
        for _ in range(4):
            if cand * SECONDS_PER_HOUR == coulombs:
                return cand
            cand = math.nextafter(cand, direction)
    return ah


def scenario_to_dict(s: Scenario) -> dict:
    pg, sg = s.power_params.schedule, s.state_params.schedule
    if (pg.t0, pg.tb, pg.psi, pg.r) != (sg.t0, sg.tb, sg.psi, sg.r):
        raise ValueError("scenario files share t0, tb, psi and r between both observers")
    units = [
        {"capacity_ah": _amp_hours(u.capacity_coulombs), "voltage": u.voltage, "soc": u.soc}
        for u in s.units
    ]
    obs = {"t0": pg.t0, "tb": pg.tb, "psi": pg.psi, "r": pg.r, "alpha": s.power_params.alpha, "beta": s.state_params.beta}
    for key, val in (
        ("power_sign_layer", s.power_params.sign_layer),
        ("state_sign_layer", s.state_params.sign_layer),
        ("power_omega_cap", pg.omega_cap),
        ("state_omega_cap", sg.omega_cap),
    ):
        if val is not None:
            obs[key] = val
    out: dict = {
        "name": s.name,
        "mode": s.mode.value,
        "units": units,
        "topology": {"edges": [list(e) for e in s.topology.edges], "access_flags": list(s.topology.access_flags)},
        "observers": obs,
    }
    if s.init != ObserverInit():
        init: dict = {"init": s.init.kind}
        if s.init.p_hat0 is not None:
            init["p_hat"] = list(s.init.p_hat0)
        if s.init.q0 is not None:
            init["q"] = list(s.init.q0)
        out["initial_state"] = init
    out["profile"] = _profile_to_dict(s.profile)
    if s.controller is not None:
        out["controller"] = {"denominator_floor": s.controller.denominator_floor}
    if s.state_bounds is not None:
        out["state_bounds"] = {"a1": s.state_bounds.a1, "a2": s.state_bounds.a2}
    out["integration"] = {"dt": s.dt, "horizon": s.horizon, "output_stride": s.output_stride}
    acc = {k: v for k, v in (("eps_soc", s.acceptance.eps_soc), ("eps_power", s.acceptance.eps_power)) if v is not None}
    if acc:
        out["acceptance"] = acc
    if s.validation_override is not None:
        out["validation_override"] = s.validation_override
    return out


def _profile_to_dict(p: PowerProfile) -> dict:
    if p.kind is ProfileKind.CASE1_SINUSOID:
        amplitude, offset, frequency, phase = p.params
        return {"kind": p.kind.value, "amplitude": amplitude, "offset": offset, "frequency": frequency, "phase": phase}
    if p.kind is ProfileKind.CONSTANT:
        return {"kind": p.kind.value, "value": p.params[0]}
    d = {"kind": p.kind.value, "periodic": p.periodic, "hold_after_end": p.hold_after_end}
    if p.kind is ProfileKind.PIECEWISE:
        d["segments"] = [
            {"start": g.start, "end": g.end, "offset": g.offset, "slope": g.slope, "amplitude": g.amplitude, "frequency": g.frequency, "phase": g.phase}
            for g in p.segments
        ]
    return d


def emit_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=None)


# -- presets ------------------------------------------------------------------


def preset_names() -> list[str]:
    root = resources.files("socbal") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    path = resources.files("socbal") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise KeyError(f"no preset named '{name}' (known: {', '.join(preset_names())})")
    return path.read_text(encoding="utf-8")


def load_preset(name: str) -> Scenario:
    return parse_scenario_text(preset_text(name))


def load_scenario(ref) -> Scenario:
    """Load a scenario from a file path, or from a bundled preset by name."""
    path = Path(ref)
    if path.exists():
        return parse_scenario(path)
    if str(ref) in preset_names():
        return load_preset(str(ref))
    raise FileNotFoundError(f"no scenario file or preset named '{ref}'")
