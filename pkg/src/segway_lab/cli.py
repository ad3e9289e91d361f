"""Command-line entry point.

Subcommands: ``synth`` (gain synthesis), ``analyze`` (certificate checks
on a report), ``simulate`` (batch scenario run to CSV), ``serve`` (live
teleop service).  Exit codes are a stable contract: 0 success, 1 input
error, 2 synthesis infeasible at the bracket top, 3 simulation diverged.

Every artifact directory receives a ``manifest.json`` recording the
command, resolved inputs, seed and outputs; re-running the same command
with the same seed reproduces the CSV byte for byte.  The environment
variable ``SEGWAY_LAB_SEED`` overrides any configured seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, analysis, synthesis
from .plant import PlantState, assemble_linear_model, load_params, preset_ecp220
from .sim import (Scenario, SimulationDiverged, empirical_l2_gain, load_scenario,
                  resolve_controller, resolve_plant, run_closed_loop)
from .textio import TextFormatError

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_DIVERGED = 3

def _effective_seed(configured: int) -> int:
    env = os.environ.get("SEGWAY_LAB_SEED")
    return int(env) if env else configured


def _write_manifest(out_dir: Path, command: str, seed: int, inputs: dict, outputs: list[str]):
    manifest = {
        "command": command,
        "tool": "segway-lab",
        "version": __version__,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _bundled_scenario(name: str) -> str | None:
    stem = name.removesuffix(".scn")
    candidate = resources.files("segway_lab").joinpath(f"data/{stem}.scn")
    if candidate.is_file():
        return candidate.read_text()
    return None


def cmd_synth(args) -> int:
    seed = _effective_seed(args.seed)
    if args.preset:
        ss, plant_id = preset_ecp220(), args.preset
        if args.preset != "ecp220":
            print(f"error: unknown preset {args.preset!r} (only 'ecp220')", file=sys.stderr)
            return EXIT_INPUT
    else:
        try:
            params = load_params(args.plant)
            ss = assemble_linear_model(params)
        except (OSError, ValueError) as exc:
            print(f"error: cannot load plant file {args.plant}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        plant_id = str(args.plant)
    try:
        result = synthesis.minimize_gamma(ss, args.gamma_lo, args.gamma_hi, args.tol, seed=seed)
    except synthesis.SynthesisError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    cl = analysis.closed_loop_full_info(ss, result.gains.k_bar)
    eigs = np.linalg.eigvals(cl.A)
    report = synthesis.format_report(result, ss, plant_id, eigs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report)
    _write_manifest(out.parent, "synth", seed,
                    {"plant": plant_id, "gamma_lo": args.gamma_lo,
                     "gamma_hi": args.gamma_hi, "tol": args.tol},
                    [out.name])
    print(f"gamma* = {result.gains.gamma_achieved:.4f}")
    print(f"k_bar  = {result.gains.k_bar.ravel()}")
    print(f"k_out  = {result.gains.k_out.ravel()}")
    print(f"lmi lambda_max = {result.lmi_lambda_max:.3e} (margin {result.feasibility_margin:.3e})")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        report = synthesis.load_report(args.report)
    except (OSError, TextFormatError) as exc:
        print(f"error: cannot read report {args.report}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        ss, _ = resolve_plant(report.plant_id, Path(args.report).parent)
    except (OSError, ValueError) as exc:
        print(f"error: cannot resolve plant {report.plant_id!r}: {exc}", file=sys.stderr)
        return EXIT_INPUT

    a_full = ss.A + ss.B2 @ report.k_bar
    eig_full = np.linalg.eigvals(a_full)
    stable = analysis.is_hurwitz(a_full)
    print(f"plant: {report.plant_id}")
    print(f"gamma_star: {report.gamma_star:.6g}")
    print("full-information loop eigenvalues:")
    for ev in sorted(eig_full, key=lambda e: e.real):
        print(f"  {ev.real:+.6f} {ev.imag:+.6f}j")
    print(f"full-information loop: {'stable' if stable else 'UNSTABLE'}")

    zero_eigs, moving = analysis.navigation_spectrum(ss, report.k_out)
    print("output-feedback loop eigenvalues:")
    a_of = analysis.output_feedback_matrix(ss, report.k_out)
    for ev in sorted(np.linalg.eigvals(a_of), key=lambda e: e.real):
        print(f"  {ev.real:+.6f} {ev.imag:+.6f}j")
    nav = len(zero_eigs) == 1 and all(ev.real < 0 for ev in moving)
    print(f"navigation spectrum (one free disk mode, rest decaying): {'yes' if nav else 'NO'}")

    if stable:
        norm = analysis.hinf_norm(analysis.closed_loop_full_info(ss, report.k_bar))
        print(f"closed-loop hinf norm: {norm:.6g} (level {report.gamma_star:.6g})")
        if report.y is not None:
            P = np.linalg.inv(report.y)
            residual = analysis.verify_dissipation(P, report.k_bar, ss, report.gamma_star)
            source = "report Lyapunov data"
        else:
            P = analysis.certificate_from_riccati(ss, report.k_bar, report.gamma_star)
            residual = analysis.verify_dissipation(P, report.k_bar, ss, report.gamma_star)
            source = "Riccati reconstruction"
        print(f"dissipation residual ({source}): {residual:.3e} "
              f"({'certified' if residual < 0 else 'NOT certified'})")
    else:
        print("closed-loop hinf norm: infinite (unstable)")
    return EXIT_OK


def _resolve_scenario_arg(path_arg: str) -> tuple[Scenario, Path | None, str]:
    path = Path(path_arg)
    if path.is_file():
        return load_scenario(path), path.parent, str(path)
    bundled = _bundled_scenario(path_arg)
    if bundled is not None:
        from .sim import parse_scenario
        return parse_scenario(bundled), None, f"bundled:{path_arg}"
    raise FileNotFoundError(f"no such scenario file or bundled scenario: {path_arg}")


def cmd_simulate(args) -> int:
    try:
        scenario, base_dir, scenario_id = _resolve_scenario_arg(args.scenario)
        seed = _effective_seed(scenario.sim.rng_seed)
        scenario = dataclasses.replace(
            scenario, sim=dataclasses.replace(scenario.sim, rng_seed=seed))
        ss, plant_id = resolve_plant(scenario.plant, base_dir)
        ctrl_cfg, k_bar = resolve_controller(scenario, base_dir)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x0 = PlantState.from_array(scenario.x0)

    diverged = False
    try:
        trace = run_closed_loop(ss, ctrl_cfg, scenario.profile, scenario.sim, x0)
    except SimulationDiverged as exc:
        trace = exc.trace
        diverged = True

    trace_path = out_dir / "trace.csv"
    trace_path.write_text(trace.to_csv())
    outputs = [trace_path.name]

    summary = ""
    if len(trace):
        summary = (f"final theta1 = {trace.theta1[-1]:+.6f} rad, "
                   f"max |theta2| = {np.abs(trace.theta2).max():.6f} rad, "
                   f"max |u| = {np.abs(trace.u).max():.6f}")
    if args.empirical_gain and not diverged:
        try:
            gain = empirical_l2_gain(ss, k_bar, scenario.profile, scenario.sim)
            summary += f", empirical L2 gain = {gain:.4f}"
        except ValueError as exc:
            summary += f", empirical L2 gain unavailable ({exc})"
    _write_manifest(out_dir, "simulate", seed,
                    {"scenario": scenario_id, "plant": plant_id,
                     "controller": scenario.controller}, outputs)
    if diverged:
        print(f"DIVERGED; partial trace kept at {trace_path}. {summary}", file=sys.stderr)
        return EXIT_DIVERGED
    print(summary)
    print(f"trace written to {trace_path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .teleop import TeleopServer, TeleopSession, create_app

    try:
        if args.scenario:
            scenario, _base, _sid = _resolve_scenario_arg(args.scenario)
        else:
            scenario = Scenario()
        tick_dt = 1.0 / args.tick_hz
        scenario = dataclasses.replace(
            scenario,
            sim=dataclasses.replace(scenario.sim, dt=tick_dt, duration=max(tick_dt, 1e9 * tick_dt)),
        )
        session = TeleopSession(scenario)
        server = TeleopServer(session, tick_hz=args.tick_hz, broadcast_hz=args.broadcast_hz)
        app = create_app(server)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"teleop service on ws://{args.host}:{args.port}/ws "
          f"(tick {args.tick_hz} Hz, broadcast {args.broadcast_hz} Hz)")
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except OSError as exc:
        print(f"error: cannot serve on {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        # uvicorn exits 3 on startup failure (e.g. port already bound)
        if exc.code:
            print(f"error: cannot serve on {args.host}:{args.port} (startup failed, "
                  f"likely the port is in use)", file=sys.stderr)
            return EXIT_INPUT
    finally:
        trace_path = out_dir / "session_trace.csv"
        trace_path.write_text(session.trace().to_csv())
        _write_manifest(out_dir, "serve", scenario.sim.rng_seed,
                        {"tick_hz": args.tick_hz, "broadcast_hz": args.broadcast_hz},
                        [trace_path.name])
        print(f"session trace flushed to {trace_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segway-lab",
        description="Rotary-pendulum Segway workbench: synthesize, verify, simulate, drive.",
    )
    parser.add_argument("--version", action="version", version=f"segway-lab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a robust output-feedback gain")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("plant", nargs="?", help="plant parameter file")
    src.add_argument("--preset", help="named plant preset (ecp220)")
    p.add_argument("--gamma-lo", type=float, default=0.05)
    p.add_argument("--gamma-hi", type=float, default=500.0)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synthesis_report.txt")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="verify the certificates of a synthesis report")
    p.add_argument("report")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run a scenario file to a CSV trace")
    p.add_argument("scenario", help="scenario file path or bundled name (maneuver)")
    p.add_argument("--out-dir", default="sim_out")
    p.add_argument("--empirical-gain", action="store_true",
                   help="also measure the L2 gain of the full-information loop")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the live teleop service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--tick-hz", type=float, default=200.0)
    p.add_argument("--broadcast-hz", type=float, default=30.0)
    p.add_argument("--scenario", help="scenario file providing plant/controller defaults")
    p.add_argument("--out-dir", default="teleop_out")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except TextFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
