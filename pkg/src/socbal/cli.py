"""Command-line entry points: simulate, validate, report and sweep.

Exit codes: 0 success, 1 failed checks or a runtime abort, 2 unreadable or
invalid input, 3 gain validation failed and no override was given.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import report as rpt
from .errors import MalformedInput, ParseError, ScenarioValidationError, TopologyError
from .scenario_io import load_scenario, preset_names
from .simulation import (
    Scenario,
    ValidationReport,
    metrics_context,
    resolve_settings,
    run,
    validate_parameters,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_REJECTED = 3

VALIDATION_NAME = "validation.json"

log = logging.getLogger("socbal")


def _finite(v):
    """JSON has no infinities; write them as strings."""
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _finite(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite(x) for x in v]
    return v


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(_finite(obj), indent=2) + "\n", encoding="utf-8")


def format_validation(rep: ValidationReport) -> str:
    lines = []
    for c in rep.conditions:
        status = "n/a " if not c.applicable else ("PASS" if c.passed else "FAIL")
        line = f"[{status}] {c.name:<18} {c.description:<40} value={c.value:.10g}  threshold={c.threshold:.10g}  margin={c.margin:.10g}"
        if c.note:
            line += f"  ({c.note})"
        lines.append(line)
    s = rep.spectrum
    lines.append(
        f"spectrum: lambda2(L)={s.lambda2_L:.10g} lambda_max(L)={s.lambda_max_L:.10g} "
        f"lambda_min(H)={s.lambda_min_H:.10g} lambda_max(H)={s.lambda_max_H:.10g}"
    )
    b = rep.bounds
    lines.append(f"profile: P_low={b.p_low:.10g} P_high={b.p_high:.10g} eps={b.eps:.10g}")
    lines.append("overall: " + ("PASS" if rep.passed else "FAIL"))
    return "\n".join(lines)


def validation_dict(rep: ValidationReport) -> dict:
    return {
        "passed": rep.passed,
        "conditions": [asdict(c) for c in rep.conditions],
        "spectrum": asdict(rep.spectrum),
        "profile_bounds": asdict(rep.bounds),
    }


def _load(ref) -> Optional[Scenario]:
    try:
        return load_scenario(ref)
    except (ParseError, ScenarioValidationError, TopologyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None


# -- commands -----------------------------------------------------------------


def simulate_to_dir(s: Scenario, out_dir, override_validation: bool = False) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = validate_parameters(s)
    _dump(validation_dict(rep), out / VALIDATION_NAME)
    override = {"requested": override_validation, "reason": s.validation_override}
    if not rep.passed and not override_validation:
        failed = ", ".join(c.name for c in rep.conditions if not c.passed)
        hint = f" (scenario notes: {s.validation_override})" if s.validation_override else ""
        print(f"{s.name}: gain validation failed: {failed}; pass --override-validation to run anyway{hint}", file=sys.stderr)
        _dump({"scenario": s.name, "status": "rejected", "validation_passed": False, "override": override}, out / rpt.SUMMARY_NAME)
        return EXIT_REJECTED
    override["used"] = not rep.passed

    settings = resolve_settings(s)
    ts, metrics = run(s, override_validation=override_validation)
    rpt.write_timeseries_csv(ts, out / rpt.CSV_NAME)
    summary = {
        "scenario": s.name,
        "status": "aborted" if ts.abort else "ok",
        "abort": asdict(ts.abort) if ts.abort else None,
        "validation_passed": rep.passed,
        "override": override,
        "rows": int(ts.data.shape[0]),
        "floor_active_rows": int((ts.floor_active > 0).sum()),
        "settings": {
            "power_omega_cap": settings.power_schedule.omega_cap,
            "state_omega_cap": settings.state_schedule.omega_cap,
            "power_sign_layer": settings.power_layer,
            "state_sign_layer": settings.state_layer,
            "denominator_floor": settings.controller.denominator_floor,
        },
        "context": metrics_context(s, settings).to_dict(),
        "metrics": metrics.to_dict(),
    }
    _dump(summary, out / rpt.SUMMARY_NAME)
    if ts.abort:
        print(f"{s.name}: aborted at t={ts.abort.time:.6g}: {ts.abort.reason}: {ts.abort.message}", file=sys.stderr)
        return EXIT_FAILED
    if override["used"]:
        print(f"{s.name}: ran with failed gain validation (override)")
    print(f"{s.name}: wrote {ts.data.shape[0]} rows to {out / rpt.CSV_NAME}")
    return EXIT_OK


def cmd_simulate(scenario, out_dir, override_validation: bool = False) -> int:
    s = _load(scenario)
    if s is None:
        return EXIT_INPUT
    return simulate_to_dir(s, out_dir, override_validation)


def cmd_validate(scenario) -> int:
    s = _load(scenario)
    if s is None:
        return EXIT_INPUT
    rep = validate_parameters(s)
    print(format_validation(rep))
    return EXIT_OK if rep.passed else EXIT_FAILED


def cmd_report(csv_path) -> int:
    try:
        n, data = rpt.read_timeseries_csv(csv_path)
        ctx = rpt.load_context(csv_path)
    except (MalformedInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if ctx.n != n:
        print(f"error: CSV has {n} units but the summary describes {ctx.n}", file=sys.stderr)
        return EXIT_INPUT
    checks = rpt.acceptance_checks(rpt.metrics_from_table(data, ctx), ctx)
    print(rpt.format_checks(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED


def _sweep_job(args) -> tuple[str, int]:
    path, out, override = args
    logging.disable(logging.WARNING)
    s = _load(path)
    if s is None:
        return path, EXIT_INPUT
    return path, simulate_to_dir(s, out, override)


def cmd_sweep(directory, out_dir=None, override_validation: bool = False, workers: Optional[int] = None) -> int:
    root = Path(directory)
    files = sorted(p for p in root.iterdir() if p.suffix in (".yaml", ".yml"))
    if not files:
        print(f"error: no scenario files in {root}", file=sys.stderr)
        return EXIT_INPUT
    base = Path(out_dir) if out_dir else root / "out"
    jobs = [(str(p), str(base / p.stem), override_validation) for p in files]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_sweep_job, jobs))
    for path, code in results:
        print(f"{'ok  ' if code == EXIT_OK else f'exit {code}'}  {path}")
    return max(code for _, code in results)


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socbal", description="Distributed SoC balancing simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario and write its outputs")
    p.add_argument("scenario", help="scenario file or bundled preset name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--override-validation", action="store_true", help="run even if the gain conditions fail")

    p = sub.add_parser("validate", help="check observer gains against the convergence conditions")
    p.add_argument("scenario")

    p = sub.add_parser("report", help="recompute metrics from a written time series")
    p.add_argument("csv")

    p = sub.add_parser("sweep", help="simulate every scenario file in a directory")
    p.add_argument("directory")
    p.add_argument("--out", default=None, help="output root (default: <directory>/out)")
    p.add_argument("--override-validation", action="store_true")
    p.add_argument("--workers", type=int, default=None)

    sub.add_parser("presets", help="list bundled presets")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate":
        return cmd_simulate(args.scenario, args.out, args.override_validation)
    if args.command == "validate":
        return cmd_validate(args.scenario)
    if args.command == "report":
        return cmd_report(args.csv)
    if args.command == "sweep":
        return cmd_sweep(args.directory, args.out, args.override_validation, args.workers)
    print("\n".join(preset_names()))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
