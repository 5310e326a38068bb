"""Command-line front end.

Subcommands::

    bsvie solve       --scenario f.toml --out-dir out   # Y/Z/K CSVs + summary + manifest
    bsvie verify      --scenario f.toml --out-dir out   # full verification report
    bsvie resolvent   --scenario f.toml --out-dir out   # resolvent kernel dump + diagnostics
    bsvie convergence --scenario f.toml --out-dir out   # refinement studies and slopes
    bsvie replay      --manifest out/manifest.json      # rerun and compare output hashes

Exit codes: 0 success, 1 domain or verification failure, 2 I/O failure.
CSV cells use 17-significant-digit decimal formatting, so identical
(scenario, seed, flags) runs produce byte-identical files; ``--threads`` caps
simulation workers without affecting any result.  ``BSVIE_OUT_DIR`` provides
the default output directory.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .resolvent import kernel_from_scenario, neumann_resolvent, resolvent_residual
from .scenario import Scenario, ScenarioError, load_scenario, rebuild, scenario_hash
from .simulate import girsanov_weights, simulate_paths
from .solver import SolutionTriplet, martingale_part, solve_triplet
from .verify import (format_report, report_to_dict, resolvent_convergence,
                     residual_refinement, run_verification, smoothness_check)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2

_OVERRIDE_FLAGS = ("grid_steps", "paths", "seed", "neumann_tol", "residual_tol")


def _fmt(x: float) -> str:
    return "%.17g" % x


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _apply_overrides(s: Scenario, args: argparse.Namespace) -> Scenario:
    return rebuild(
        s,
        n_steps=args.grid_steps,
        n_paths=args.paths,
        seed=args.seed,
        neumann_tol=args.neumann_tol,
        residual_tol=args.residual_tol,
    )


def _resolved_params(s: Scenario, args: argparse.Namespace) -> dict:
    return {
        "T": s.grid.horizon,
        "n_steps": s.grid.n_steps,
        "n_paths": s.mc.n_paths,
        "seed": s.mc.seed,
        "neumann_tol": s.tol.neumann_tol,
        "residual_tol": s.tol.residual_tol,
        "threads": getattr(args, "threads", 1),
        "inject_fault": getattr(args, "inject_fault", None),
        "dump_paths": getattr(args, "dump_paths", False),
        "steps": getattr(args, "steps", None),
    }


def _write_manifest(out_dir: str, command: str, scenario_path: str, s: Scenario,
                    args: argparse.Namespace, outputs: list[str]) -> str:
    manifest = {
        "manifest_version": 1,
        "package_version": __version__,
        "command": command,
        "scenario_path": os.path.abspath(scenario_path),
        "scenario_sha256": scenario_hash(s),
        "resolved": _resolved_params(s, args),
        "overrides": {flag: getattr(args, flag, None) for flag in _OVERRIDE_FLAGS},
        "outputs": {name: _sha256_file(os.path.join(out_dir, name)) for name in outputs},
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = os.path.join(out_dir, "manifest.json")
    _write_json(path, manifest)
    return path


# ---------------------------------------------------------------------------
# CSV writers


def _write_y_csv(path: str, s: Scenario, triplet: SolutionTriplet) -> None:
    y = triplet.y
    lines = ["t,a,b,c"]
    for i, t in enumerate(s.grid.nodes):
        lines.append(f"{_fmt(t)},{_fmt(y.a[i])},{_fmt(y.b[i])},{_fmt(y.c[i])}")
    _write_lines(path, lines)


def _write_z_csv(path: str, s: Scenario, triplet: SolutionTriplet) -> None:
    nodes = s.grid.nodes
    lines = ["i,j,t,s,z"]
    for i in range(s.grid.n_nodes):
        for j in range(i, s.grid.n_nodes):
            lines.append(f"{i},{j},{_fmt(nodes[i])},{_fmt(nodes[j])},{_fmt(triplet.z[i, j])}")
    _write_lines(path, lines)


def _write_k_csv(path: str, s: Scenario, triplet: SolutionTriplet) -> None:
    nodes = s.grid.nodes
    lines = ["i,j,m,t,s,mark,k"]
    for m in range(s.levy.n_marks):
        mark = s.levy.marks[m]
        for i in range(s.grid.n_nodes):
            for j in range(i, s.grid.n_nodes):
                lines.append(
                    f"{i},{j},{m},{_fmt(nodes[i])},{_fmt(nodes[j])},"
                    f"{_fmt(mark)},{_fmt(triplet.k[i, j, m])}"
                )
    _write_lines(path, lines)


def _write_psi_csv(path: str, s: Scenario, psi: np.ndarray) -> None:
    nodes = s.grid.nodes
    lines = ["i,j,t_i,t_j,psi"]
    for i in range(s.grid.n_nodes):
        for j in range(i, s.grid.n_nodes):
            lines.append(f"{i},{j},{_fmt(nodes[i])},{_fmt(nodes[j])},{_fmt(psi[i, j])}")
    _write_lines(path, lines)


def _write_paths_csv(path: str, s: Scenario, threads: int) -> None:
    paths = simulate_paths(s, threads=threads)
    weights = girsanov_weights(s, paths)
    m = weights.m
    lines = ["path,node,t,B,J,M"]
    for p in range(paths.n_paths):
        for i, t in enumerate(s.grid.nodes):
            lines.append(f"{p},{i},{_fmt(t)},{_fmt(paths.b[p, i])},"
                         f"{_fmt(paths.j[p, i])},{_fmt(m[p, i])}")
    _write_lines(path, lines)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_solve(args: argparse.Namespace) -> int:
    s = _apply_overrides(load_scenario(args.scenario), args)
    phi = kernel_from_scenario(s)
    table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
    triplet = solve_triplet(s, table, phi)
    u_part = martingale_part(s, triplet.y, phi)

    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_y_csv(os.path.join(out_dir, "y_coefficients.csv"), s, triplet)
    _write_z_csv(os.path.join(out_dir, "z_grid.csv"), s, triplet)
    _write_k_csv(os.path.join(out_dir, "k_grid.csv"), s, triplet)
    terminal_gap = max(
        abs(float(triplet.y.a[-1] - s.terminal.f0[-1])),
        abs(float(triplet.y.b[-1] - s.terminal.f1[-1])),
        abs(float(triplet.y.c[-1] - s.terminal.f2[-1])),
    )
    summary = {
        "scenario_sha256": scenario_hash(s),
        "grid": {"T": s.grid.horizon, "n_steps": s.grid.n_steps},
        "n_marks": s.levy.n_marks,
        "resolvent": {
            "order": table.n_terms_used,
            "tail_bound": table.tail_bound,
            "identity_residual": resolvent_residual(phi, table.psi),
        },
        "terminal_match_gap": terminal_gap,
        "max_conditional_coefficient": u_part.max_conditional_coefficient,
        "outputs": ["y_coefficients.csv", "z_grid.csv", "k_grid.csv"],
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    _write_manifest(out_dir, "solve", args.scenario, s, args,
                    ["y_coefficients.csv", "z_grid.csv", "k_grid.csv", "summary.json"])
    print(f"solve: wrote 5 files to {out_dir} "
          f"(resolvent order {table.n_terms_used}, tail {table.tail_bound:.3e})")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    s = _apply_overrides(load_scenario(args.scenario), args)
    report = run_verification(s, threads=args.threads, inject_fault=args.inject_fault)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "verification_report.json"), report_to_dict(report))
    outputs = ["verification_report.json"]
    if args.dump_paths:
        _write_paths_csv(os.path.join(out_dir, "paths.csv"), s, args.threads)
        outputs.append("paths.csv")
    _write_manifest(out_dir, "verify", args.scenario, s, args, outputs)
    print(format_report(report))
    return EXIT_OK if report.passed else EXIT_DOMAIN


def cmd_resolvent(args: argparse.Namespace) -> int:
    s = _apply_overrides(load_scenario(args.scenario), args)
    phi = kernel_from_scenario(s)
    table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
    identity_residual = resolvent_residual(phi, table.psi)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_psi_csv(os.path.join(out_dir, "psi.csv"), s, table.psi.values)
    diagnostics = {
        "scenario_sha256": scenario_hash(s),
        "grid": {"T": s.grid.horizon, "n_steps": s.grid.n_steps},
        "order": table.n_terms_used,
        "tail_bound": table.tail_bound,
        "identity_residual": identity_residual,
        "max_abs_psi": table.psi.max_abs,
    }
    _write_json(os.path.join(out_dir, "resolvent.json"), diagnostics)
    _write_manifest(out_dir, "resolvent", args.scenario, s, args, ["psi.csv", "resolvent.json"])
    print(f"resolvent: order {table.n_terms_used}, tail bound {table.tail_bound:.3e}, "
          f"identity residual {identity_residual:.3e}, "
          f"psi(t_0, T) = {table.psi.values[0, -1]:.6f}")
    return EXIT_OK


def cmd_convergence(args: argparse.Namespace) -> int:
    s = _apply_overrides(load_scenario(args.scenario), args)
    steps = args.steps
    study = resolvent_convergence(s, steps)
    smooth = smoothness_check(s, steps)
    refinement = residual_refinement(s, steps, threads=args.threads)

    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    lines = ["n_steps,dt,resolvent_identity_residual,residual_rms,residual_rms_se,gradient_sum"]
    for idx, n in enumerate(steps):
        lines.append(
            f"{n},{_fmt(s.grid.horizon / n)},{_fmt(study.residuals[idx])},"
            f"{_fmt(refinement.rms[idx])},{_fmt(refinement.rms_se[idx])},"
            f"{_fmt(smooth.gradient_sums[idx])}"
        )
    _write_lines(os.path.join(out_dir, "convergence.csv"), lines)
    payload = {
        "scenario_sha256": scenario_hash(s),
        "steps": list(steps),
        "resolvent": {
            "residuals": list(study.residuals),
            "slope": study.slope,
            "r_squared": study.r_squared,
        },
        "smoothness": {
            "gradient_sums": list(smooth.gradient_sums),
            "sum_ratios": list(smooth.sum_ratios),
            "fd_gaps": list(smooth.fd_gaps),
            "fd_order": smooth.fd_order,
            "passed": smooth.passed,
        },
        "residual_refinement": {
            "rms": list(refinement.rms),
            "rms_se": list(refinement.rms_se),
            "monotone_within_se": refinement.monotone_within_se,
        },
    }
    _write_json(os.path.join(out_dir, "convergence.json"), payload)
    _write_manifest(out_dir, "convergence", args.scenario, s, args,
                    ["convergence.csv", "convergence.json"])
    print(f"convergence: resolvent-identity slope {study.slope:.3f} (R^2 {study.r_squared:.4f}) "
          f"over n_steps {list(steps)}")
    print(f"residual rms {['%.3e' % v for v in refinement.rms]} "
          f"monotone within SE: {refinement.monotone_within_se}")
    print(f"smoothness: gradient sums {['%.3e' % v for v in smooth.gradient_sums]}, "
          f"fd order {smooth.fd_order}, passed {smooth.passed}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    with open(args.manifest, "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    command = manifest["command"]
    resolved = manifest["resolved"]
    replay_args = argparse.Namespace(
        scenario=manifest["scenario_path"],
        out_dir=args.out_dir,
        grid_steps=resolved["n_steps"],
        paths=resolved["n_paths"],
        seed=resolved["seed"],
        neumann_tol=resolved["neumann_tol"],
        residual_tol=resolved["residual_tol"],
        threads=resolved.get("threads", 1),
        inject_fault=resolved.get("inject_fault"),
        dump_paths=resolved.get("dump_paths", False),
        steps=resolved.get("steps") or [50, 100, 200],
    )
    runner = {"solve": cmd_solve, "verify": cmd_verify,
              "resolvent": cmd_resolvent, "convergence": cmd_convergence}.get(command)
    if runner is None:
        raise ScenarioError(f"manifest records unknown command {command!r}")
    runner(replay_args)

    mismatches = []
    for name, recorded in manifest["outputs"].items():
        replayed_path = os.path.join(args.out_dir, name)
        if not os.path.exists(replayed_path):
            mismatches.append(f"{name}: missing after replay")
        elif _sha256_file(replayed_path) != recorded:
            mismatches.append(f"{name}: hash differs from manifest")
    if mismatches:
        print("replay mismatch:\n  " + "\n  ".join(mismatches), file=sys.stderr)
        return EXIT_DOMAIN
    print(f"replay: {len(manifest['outputs'])} outputs reproduced bit-exactly")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(parser: argparse.ArgumentParser, with_mc: bool = True) -> None:
    parser.add_argument("--scenario", required=True, help="scenario TOML file")
    parser.add_argument("--out-dir", default=os.environ.get("BSVIE_OUT_DIR"),
                        help="output directory (default: $BSVIE_OUT_DIR)")
    parser.add_argument("--grid-steps", type=int, default=None, help="override grid.n_steps")
    parser.add_argument("--neumann-tol", type=float, default=None, help="override tol.neumann_tol")
    parser.add_argument("--residual-tol", type=float, default=None, help="override tol.residual_tol")
    if with_mc:
        parser.add_argument("--paths", type=int, default=None, help="override mc.n_paths")
        parser.add_argument("--seed", type=int, default=None, help="override mc.seed")
        parser.add_argument("--threads", type=int, default=1,
                            help="worker cap for path simulation (never changes results)")
    else:
        parser.set_defaults(paths=None, seed=None, threads=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsvie", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="compute and export the solution triplet")
    _add_common(p_solve)
    p_solve.set_defaults(func=cmd_solve, inject_fault=None, dump_paths=False, steps=None)

    p_verify = sub.add_parser("verify", help="run the full verification suite")
    _add_common(p_verify)
    p_verify.add_argument("--inject-fault", choices=("z", "k"), default=None,
                          help="test hook: corrupt the named analytic grid by +1")
    p_verify.add_argument("--dump-paths", action="store_true",
                          help="also dump a per-path CSV (large)")
    p_verify.set_defaults(func=cmd_verify, steps=None)

    p_res = sub.add_parser("resolvent", help="export the resolvent kernel and diagnostics")
    _add_common(p_res, with_mc=False)
    p_res.set_defaults(func=cmd_resolvent, inject_fault=None, dump_paths=False, steps=None)

    p_conv = sub.add_parser("convergence", help="grid-refinement studies")
    _add_common(p_conv)
    p_conv.add_argument("--steps", type=_step_list, default=[50, 100, 200],
                        help="comma-separated refinement steps (default 50,100,200)")
    p_conv.set_defaults(func=cmd_convergence, inject_fault=None, dump_paths=False)

    p_replay = sub.add_parser("replay", help="rerun a manifest and compare output hashes")
    p_replay.add_argument("--manifest", required=True, help="manifest.json from a previous run")
    p_replay.add_argument("--out-dir", default=os.environ.get("BSVIE_OUT_DIR"),
                          help="directory for the replayed outputs")
    p_replay.set_defaults(func=cmd_replay)
    return parser


def _step_list(text: str) -> list[int]:
    try:
        steps = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad step list {text!r}") from exc
    if not steps or any(n < 1 for n in steps):
        raise argparse.ArgumentTypeError(f"bad step list {text!r}")
    return steps


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out_dir", None) is None:
        print("error: --out-dir is required (or set BSVIE_OUT_DIR)", file=sys.stderr)
        return EXIT_IO
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for violation in exc.violations:
            print(f"  violation: {violation}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
