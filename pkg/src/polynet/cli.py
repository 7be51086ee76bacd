"""Command-line interface: ``polynet compile|integrate|compare|perturb``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .compiler import compile_polynet
from .errors import BlowUpError, SpecError
from .integrators import PRESET_TABLEAUS, load_tableau
from .polyode import PolynomialSystem, preset
from .reference import DEFAULT_IC, divergence, perturbation_experiment, run, spin_up
from .trajectory import Trajectory, fmt

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3

OUTPUT_ENV = "POLYNET_OUTPUT_DIR"
ENGINES = ("neural", "classical-matched", "classical-naive")


class ConfigError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def load_system(args) -> PolynomialSystem:
    if args.spec and args.preset:
        raise ConfigError("give exactly one of --preset and --spec")
    if args.spec:
        return PolynomialSystem.load(args.spec)
    name = args.preset or "lorenz63"
    params = {}
    if name == "lorenz63":
        params = {"sigma": args.sigma, "rho": args.rho, "beta": args.beta}
    return preset(name, **params)


def _method(args, h):
    m = args.method
    if m in ("rk4", "abm2"):
        if args.tableau:
            raise ConfigError("--tableau only applies to --method rk")
        return m
    if m == "rk" or m.startswith("rk:"):
        spec = m[3:] if m.startswith("rk:") else args.tableau
        if not spec:
            raise ConfigError("--method rk needs a tableau (rk:<preset|file> or --tableau)")
        return load_tableau(spec, h)
    raise ConfigError(f"unknown method {m!r}; use rk4, abm2 or rk:<tableau>")


def _seed(args, n_vars):
    policy = args.seed_policy
    if policy == "rk4-bootstrap":
        return "rk4-bootstrap", None
    if policy.startswith("explicit:"):
        path = Path(policy[len("explicit:"):])
        try:
            x1 = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read explicit seed {path}: {exc}") from None
        x1 = np.asarray(x1, dtype=float).ravel()
        if x1.shape != (n_vars,):
            raise ConfigError(f"explicit seed must have {n_vars} values")
        return "explicit", x1
    raise ConfigError(f"unknown seed policy {policy!r}")


def _run_config(args):
    if not args.h > 0:
        raise ConfigError("--h must be positive")
    if args.steps < 0:
        raise ConfigError("--steps must be >= 0")
    sys_ = load_system(args)
    method = _method(args, args.h)
    if args.x0:
        x0 = np.array(_floats(args.x0, "--x0"))
        if x0.shape != (sys_.n_vars,):
            raise ConfigError(f"--x0 needs {sys_.n_vars} values")
    else:
        x0 = np.array(DEFAULT_IC if sys_.n_vars == 3 else [1.0] * sys_.n_vars)
    policy, x1 = _seed(args, sys_.n_vars)
    return sys_, method, x0, policy, x1


def _method_label(method):
    return method if isinstance(method, str) else f"rk:{method.name}"


def _manifest(command, argv, sys_, extra):
    out = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "system": sys_.to_dict(),
    }
    out.update(extra)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


# -- commands ---------------------------------------------------------------


def cmd_compile(args, argv):
    sys_ = load_system(args)
    net = compile_polynet(sys_)
    out = _out_dir(args)
    stats = net.stats()
    dot_path = out / f"{args.name}.dot"
    report_path = out / f"{args.name}_report.json"
    dot_path.write_text(net.to_dot())
    _write_json(report_path, {**stats, "hidden_monomials": [str(m) for m in net.hidden_nodes]})
    for key in ("n_vars", "max_degree", "hidden_nodes", "bound"):
        print(f"{key}={stats[key]}")
    return EXIT_OK


def cmd_integrate(args, argv):
    sys_, method, x0, policy, x1 = _run_config(args)
    out = _out_dir(args)
    csv_path = out / f"{args.name}.csv"
    truncated = False
    failed_step = None
    try:
        traj = run(sys_, method, args.engine, x0, args.steps, args.h, policy, x1)
    except BlowUpError as exc:
        traj, truncated, failed_step = exc.trajectory, True, exc.step
    traj.write_csv(csv_path)
    manifest = _manifest(
        "integrate",
        argv,
        sys_,
        {
            "method": _method_label(method),
            "tableau": None if isinstance(method, str) else method.to_dict(),
            "engine": args.engine,
            "h": args.h,
            "n_steps": args.steps,
            "x0": [fmt(v) for v in x0],
            "seed_policy": args.seed_policy,
            "outputs": [csv_path.name],
            "rows": len(traj),
            "truncated": truncated,
            "failed_step": failed_step,
        },
    )
    _write_json(out / f"{args.name}.manifest.json", manifest)
    if truncated:
        print(f"error: integration blew up at step {failed_step}; partial trajectory written",
              file=sys.stderr)
        return EXIT_BLOWUP
    print(f"wrote {csv_path} ({len(traj)} rows)")
    return EXIT_OK


def cmd_compare(args, argv):
    if args.csv_a or args.csv_b:
        if not (args.csv_a and args.csv_b):
            raise ConfigError("give both --csv-a and --csv-b")
        a = Trajectory.read_csv(args.csv_a)
        b = Trajectory.read_csv(args.csv_b)
        sys_ = None
        source = {"csv_a": args.csv_a, "csv_b": args.csv_b}
    else:
        sys_, method, x0, policy, x1 = _run_config(args)
        a = run(sys_, method, args.engine_a, x0, args.steps, args.h, policy, x1)
        b = run(sys_, method, args.engine_b, x0, args.steps, args.h, policy, x1)
        source = {
            "method": _method_label(method),
            "engine_a": args.engine_a,
            "engine_b": args.engine_b,
            "h": args.h,
            "n_steps": args.steps,
            "x0": [fmt(v) for v in x0],
        }
    try:
        series = divergence(a, b, "a-vs-b")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(args)
    csv_path = out / f"{args.name}.csv"
    series.write_csv(csv_path)
    summary = {
        "max_distance": series.max_distance,
        "threshold": args.threshold,
        "first_exceedance_step": series.first_exceedance(args.threshold),
    }
    _write_json(out / f"{args.name}_summary.json", summary)
    manifest = {"command": "compare", "argv": list(argv), "version": __version__, **source,
                "outputs": [csv_path.name, f"{args.name}_summary.json"]}
    if sys_ is not None:
        manifest["system"] = sys_.to_dict()
    _write_json(out / f"{args.name}.manifest.json", manifest)
    print(f"max_distance={summary['max_distance']!r}")
    print(f"first_exceedance_step={summary['first_exceedance_step']}")
    return EXIT_OK


def cmd_perturb(args, argv):
    deltas = _floats(args.deltas, "--deltas")
    if not deltas:
        raise ConfigError("--deltas must list at least one perturbation")
    sys_, method, x0_arg, policy, x1 = _run_config(args)
    if args.x0:
        x0 = x0_arg
    else:
        x0 = spin_up(sys_, x0_arg, args.h, args.spinup)
    series = perturbation_experiment(
        sys_, method, args.h, args.steps, deltas, x0=x0, include_neural=not args.no_neural
    )
    out = _out_dir(args)
    names = []
    summary = []
    for i, s in enumerate(series):
        tag = f"delta{i}" if i < len(deltas) else "neural_vs_naive"
        path = out / f"{args.name}_{tag}.csv"
        s.write_csv(path)
        names.append(path.name)
        summary.append({
            "label": s.label,
            "file": path.name,
            "initial_distance": float(s.distances[0]) if len(s) else None,
            "max_distance": s.max_distance,
            "first_exceedance_step": s.first_exceedance(args.threshold),
        })
    _write_json(out / f"{args.name}_summary.json", {"threshold": args.threshold, "series": summary})
    manifest = _manifest("perturb", argv, sys_, {
        "method": _method_label(method),
        "h": args.h,
        "n_steps": args.steps,
        "spinup_steps": None if args.x0 else args.spinup,
        "x0": [fmt(v) for v in x0],
        "deltas": deltas,
        "direction": "e1",
        "matched": True,
        "outputs": names,
    })
    _write_json(out / f"{args.name}.manifest.json", manifest)
    for row in summary:
        print(f"{row['label']}: max={row['max_distance']!r} first_exceedance={row['first_exceedance_step']}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _system_args(p):
    g = p.add_argument_group("system")
    g.add_argument("--preset", help="built-in system (lorenz63, decay); default lorenz63")
    g.add_argument("--spec", help="system file (YAML/JSON)")
    g.add_argument("--sigma", type=float, default=10.0)
    g.add_argument("--rho", type=float, default=28.0)
    g.add_argument("--beta", type=float, default=8.0 / 3.0)


def _run_args(p, steps=10000):
    _system_args(p)
    g = p.add_argument_group("integration")
    g.add_argument("--method", default="rk4", help="rk4 | abm2 | rk:<tableau preset or file>")
    g.add_argument("--tableau", help=f"tableau for --method rk: preset {list(PRESET_TABLEAUS)} or file")
    g.add_argument("--h", type=float, default=0.01)
    g.add_argument("--steps", type=int, default=steps)
    g.add_argument("--x0", help="initial state, comma-separated")
    g.add_argument("--seed-policy", default="rk4-bootstrap",
                   help="abm2 start-up: rk4-bootstrap | explicit:<file with x1 as a JSON list>")


def build_parser():
    parser = argparse.ArgumentParser(prog="polynet", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a system to a PolyNet; write DOT and a report")
    _system_args(p)
    p.add_argument("--out")
    p.add_argument("--name", default="polynet")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("integrate", help="integrate and write a trajectory CSV + manifest")
    _run_args(p)
    p.add_argument("--engine", choices=ENGINES, default="neural")
    p.add_argument("--out")
    p.add_argument("--name", default="trajectory")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("compare", help="divergence between two runs or two trajectory CSVs")
    _run_args(p)
    p.add_argument("--engine-a", choices=ENGINES, default="neural")
    p.add_argument("--engine-b", choices=ENGINES, default="classical-matched")
    p.add_argument("--csv-a")
    p.add_argument("--csv-b")
    p.add_argument("--threshold", type=float, default=1e-6)
    p.add_argument("--out")
    p.add_argument("--name", default="divergence")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("perturb", help="initial-condition perturbation experiment")
    _run_args(p, steps=40000)
    p.add_argument("--deltas", required=True, help="comma-separated perturbations, e.g. 1e-15,3e-15")
    p.add_argument("--spinup", type=int, default=1000)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--no-neural", action="store_true", help="skip the neural-vs-naive series")
    p.add_argument("--out")
    p.add_argument("--name", default="perturb")
    p.set_defaults(func=cmd_perturb)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args, argv)
    except (ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
