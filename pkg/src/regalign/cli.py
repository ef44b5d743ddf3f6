"""Command-line interface: ``regalign <command> [options]``.

Exit codes are a stable contract: 0 on success, 1 on an input or validation
error, 2 when the solver stops without meeting its convergence test.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as rio
from .correspondence import (CorrespondencePair, CorrespondenceSet, IcpConfig, all_pairs,
                             build_correspondences, chain_pairing)
from .cost import build_cost, evaluate_ls_objective
from .errors import DisconnectedGraphError, RegistrationError
from .evaluation import (ErrorReport, determinant_audit, generate_scene, noise_sweep, random_cloud,
                         rotation_error, sweep_to_csv)
from .geometry import RigidTransform
from .solver import SolverConfig, admm_solve, alignment_cost, umeyama_fit

log = logging.getLogger("regalign")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
DEFAULT_OUT = "regalign-out"


@dataclass
class RunConfig:
    solver: SolverConfig
    icp: IcpConfig
    pairing: object = "chain"
    inputs: list = field(default_factory=list)
    out: Path = Path(DEFAULT_OUT)
    log_level: str = "WARNING"

    def __post_init__(self):
        for p in self.inputs:
            if not Path(p).exists():
                raise FileNotFoundError(f"no such file: {p}")

    def pairs_for(self, m: int) -> list:
        if self.pairing == "chain":
            return chain_pairing(m)
        if self.pairing == "all":
            return all_pairs(m)
        return list(self.pairing)


# ---------------------------------------------------------------- argument parsing

class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors, so they exit with 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list:
    return [float(v) for v in str(text).replace(",", " ").split()]


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", metavar="PATH", help="flat key = value file; flags override it")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rho", type=float, default=10.0, help="ADMM penalty (default 10)")
    g.add_argument("--max-iter", type=int, default=1000, help="ADMM iteration cap")
    g.add_argument("--eps", type=float, default=1e-8, help="ADMM stopping tolerance per matrix entry")
    g.add_argument("--init", choices=["spectral", "identity"], default="spectral")
    g.add_argument("--pairing", default="chain", metavar="chain|all|FILE")
    g.add_argument("--out", metavar="DIR", default=None, help=f"output directory (default {DEFAULT_OUT})")
    g.add_argument("--center", action="store_true", help="subtract the centroid of every input set")
    g.add_argument("--log-level", default=None, help="overrides the REGALIGN_LOG environment variable")
    return p


def _icp_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ICP options")
    g.add_argument("--icp-iter", type=int, default=50)
    g.add_argument("--trim-factor", type=float, default=3.0)
    g.add_argument("--trim-scale", choices=["rms", "std"], default="rms")
    g.add_argument("--max-distance", type=float, default=None)


def _match_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("scans", nargs="*", help="point files (.csv, .ply, .json, .xyz)")
    p.add_argument("--scene", metavar="PATH", help="scene.json written by 'simulate'")
    p.add_argument("--correspondences", metavar="PATH", help="correspondence JSON; skips ICP")
    p.add_argument("--index-matches", action="store_true",
                   help="match point k of one set with point k of the other for every pair")
    _icp_options(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regalign", description="Joint rigid registration of point sets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[_common_parser()], help="write a synthetic turntable scene")
    p.add_argument("--model", metavar="PATH", help="model point file (default: random ellipsoid cloud)")
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--dim", type=int, choices=[2, 3], default=3)
    p.add_argument("-m", "--num-scans", type=int, default=10)
    p.add_argument("--theta", type=float, default=30.0, help="turntable step in degrees")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--perturb-deg", type=float, default=None,
                   help="near-aligned scans with at most this much rotation")
    p.add_argument("--format", choices=["csv", "ply", "json"], default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correspond", parents=[_common_parser()], help="pairwise Picky-ICP correspondences")
    p.add_argument("scans", nargs="+")
    _icp_options(p)
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("register", parents=[_common_parser()], help="joint registration by ADMM")
    _match_options(p)
    p.add_argument("--ground-truth", metavar="PATH", help="transform JSON for the error report")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", parents=[_common_parser()], help="compare transforms against ground truth")
    p.add_argument("transforms")
    p.add_argument("ground_truth")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[_common_parser()], help="rotation error over a sigma x eta grid")
    p.add_argument("--model", metavar="PATH")
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--dim", type=int, choices=[2, 3], default=3)
    p.add_argument("-m", "--num-scans", type=int, default=10)
    p.add_argument("--theta", type=float, default=30.0)
    p.add_argument("--sigmas", type=_float_list, default=[0.0, 0.01, 0.05])
    p.add_argument("--etas", type=_float_list, default=[0.0, 0.3, 0.7])
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("umeyama", parents=[_common_parser()], help="closed-form fit of two index-matched sets")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(func=cmd_umeyama)

    p = sub.add_parser("trace", parents=[_common_parser()], help="ADMM convergence traces for several rho")
    _match_options(p)
    p.add_argument("--rhos", type=_float_list, default=[1.0, 10.0, 100.0])
    p.set_defaults(func=cmd_trace, init="identity")
    return parser


def read_config_file(path) -> dict:
    """``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    values = {}
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split(sep, 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> None:
    """Turn config-file entries into subparser defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub = sub_action.choices.get(known.command)
    if sub is None:
        return
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in read_config_file(known.config).items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise ValueError(f"unknown config key {key!r} for '{known.command}'")
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise ValueError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)


def _setup_logging(level: str | None) -> None:
    level = level or os.environ.get("REGALIGN_LOG", "WARNING")
    level = int(level) if str(level).isdigit() else getattr(logging, str(level).upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"unknown log level {level!r}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


# ---------------------------------------------------------------- helpers

def _pairing(value: str):
    if value in ("chain", "all"):
        return value
    return rio.load_pairing(value)


def _run_config(args, inputs=()) -> RunConfig:
    solver = SolverConfig(rho=args.rho, max_iterations=args.max_iter, eps_abs=args.eps,
                          init_mode=args.init, seed=args.seed)
    icp = IcpConfig(
        max_iterations=getattr(args, "icp_iter", 50),
        trim_factor=getattr(args, "trim_factor", 3.0),
        trim_scale=getattr(args, "trim_scale", "rms"),
        max_distance=getattr(args, "max_distance", None),
        seed=args.seed,
    )
    return RunConfig(solver=solver, icp=icp, pairing=_pairing(args.pairing), inputs=list(inputs),
                     out=Path(args.out or DEFAULT_OUT), log_level=args.log_level or "WARNING")


def _load_sets(paths, center: bool) -> list:
    return [rio.load_point_set(p, id=k, center=center) for k, p in enumerate(paths)]


def _index_matches(sets, pairs) -> CorrespondenceSet:
    out = []
    for i, j in pairs:
        n = min(len(sets[i]), len(sets[j]))
        k = np.arange(n)
        out.append(CorrespondencePair(i, j, np.column_stack([k, k])))
    return CorrespondenceSet(len(sets), out)


def _gather_inputs(args, cfg: RunConfig):
    """Point sets, correspondences and optional ground truth for register/trace."""
    scene = None
    scans = list(args.scans)
    if args.scene:
        scene_path = Path(args.scene)
        if not scene_path.exists():
            raise FileNotFoundError(f"no such file: {scene_path}")
        scene = json.loads(scene_path.read_text())
        base = scene_path.parent
        scans = scans or [base / s for s in scene["scans"]]
    if not scans:
        raise ValueError("no input point sets")
    sets = _load_sets(scans, args.center)
    if len(sets) < 2:
        raise ValueError("need at least two point sets")

    if args.correspondences:
        corr = rio.load_correspondences(args.correspondences)
    elif args.index_matches:
        corr = _index_matches(sets, cfg.pairs_for(len(sets)))
    elif scene is not None:
        corr = rio.load_correspondences(Path(args.scene).parent / scene["correspondences"])
    else:
        corr = build_correspondences(sets, cfg.pairs_for(len(sets)), cfg.icp)
    corr.validate(sets)

    truth = getattr(args, "ground_truth", None)
    if truth is None and scene is not None:
        truth = Path(args.scene).parent / scene["ground_truth"]
    return sets, corr, truth


def _fmt_matrix(R) -> str:
    return "[" + "; ".join(" ".join(f"{v: .6f}" for v in row) for row in np.asarray(R)) + "]"


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = _run_config(args, [args.model] if args.model else [])
    if args.model:
        model = rio.load_point_set(args.model, center=args.center)
    else:
        model = random_cloud(args.n_points, args.dim, seed=args.seed)
    scene_pairing = "all" if cfg.pairing == "all" else "chain"
    scene = generate_scene(model, args.num_scans, args.theta, args.sigma, args.eta, seed=args.seed,
                           pairing=scene_pairing, perturb_deg=args.perturb_deg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for k, scan in enumerate(scene.scans):
        name = f"scan_{k:03d}.{args.format}"
        rio.save_point_set(scan, out / name)
        names.append(name)
    rio.save_transforms(scene.true_transforms, out / "ground_truth.json")
    rio.save_correspondences(scene.correspondences, out / "correspondences.json")
    rio.save_correspondences(scene.true_correspondences, out / "true_correspondences.json")
    meta = {
        "m": scene.m, "theta": args.theta, "sigma": args.sigma, "eta": args.eta, "seed": args.seed,
        "perturb_deg": args.perturb_deg, "scans": names, "ground_truth": "ground_truth.json",
        "correspondences": "correspondences.json", "true_correspondences": "true_correspondences.json",
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=1))
    print(f"wrote {scene.m} scans to {out}")
    return EXIT_OK


def cmd_correspond(args) -> int:
    cfg = _run_config(args, args.scans)
    sets = _load_sets(args.scans, args.center)
    corr = build_correspondences(sets, cfg.pairs_for(len(sets)), cfg.icp)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rio.save_correspondences(corr, cfg.out / "correspondences.json")
    for p in corr.pairs:
        print(f"pair ({p.i}, {p.j}): {p.n} matches")
    return EXIT_OK


def cmd_register(args) -> int:
    cfg = _run_config(args, args.scans)
    sets, corr, truth = _gather_inputs(args, cfg)
    C = build_cost(sets, corr)
    it, reg = admm_solve(C, cfg.solver)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rio.save_transforms(reg.transforms, cfg.out / "transforms.json")
    rio.write_trace(it.history, cfg.out / "trace.csv")
    cost = evaluate_ls_objective(sets, corr, reg.transforms)
    print(f"objective {reg.objective_value:.10g} (direct {cost:.10g}) after {reg.iterations_used} "
          f"iterations, converged={reg.converged}")
    if truth is not None:
        true_t = rio.load_transforms(truth)
        err, per_set = rotation_error([t.rotation for t in true_t], reg.rotations)
        report = ErrorReport(err, per_set, determinant_audit(reg.transforms), reg.objective_value)
        (cfg.out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
        print(f"rotation error {err:.6g} rad")
    return EXIT_OK if reg.converged else EXIT_NONCONVERGED


def cmd_evaluate(args) -> int:
    cfg = _run_config(args, [args.transforms, args.ground_truth])
    est = rio.load_transforms(args.transforms)
    true_t = rio.load_transforms(args.ground_truth)
    err, per_set = rotation_error([t.rotation for t in true_t], [t.rotation for t in est])
    report = ErrorReport(err, per_set, determinant_audit(est))
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    print(f"rotation error {err:.6g} rad")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _run_config(args, [args.model] if args.model else [])
    if args.model:
        model = rio.load_point_set(args.model, center=args.center)
    else:
        model = random_cloud(args.n_points, args.dim, seed=args.seed)
    rows = noise_sweep(model, args.num_scans, args.sigmas, args.etas, trials=args.trials,
                       seed=args.seed, theta=args.theta, solver_cfg=cfg.solver)
    cfg.out.mkdir(parents=True, exist_ok=True)
    text = sweep_to_csv(rows)
    (cfg.out / "sweep.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_umeyama(args) -> int:
    X = rio.load_point_set(args.first, id=0, center=args.center)
    Y = rio.load_point_set(args.second, id=1, center=args.center)
    if len(X) != len(Y):
        raise ValueError(f"index-matched sets differ in size: {len(X)} vs {len(Y)}")
    T = umeyama_fit(X.points, Y.points)
    corr = _index_matches([X, Y], [(0, 1)])
    transforms = [RigidTransform.identity(X.dim), T]
    doc = {
        "rotation": T.rotation.tolist(),
        "translation": T.translation.tolist(),
        "cost": evaluate_ls_objective([X, Y], corr, transforms),
        "pair_cost": alignment_cost(X.points, Y.points, T),
    }
    print(json.dumps(doc, indent=1))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rio.save_transforms(transforms, out / "transforms.json")
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = _run_config(args, args.scans)
    sets, corr, _ = _gather_inputs(args, cfg)
    C = build_cost(sets, corr)
    cfg.out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for rho in args.rhos:
        solver = SolverConfig(rho=rho, max_iterations=cfg.solver.max_iterations, eps_abs=cfg.solver.eps_abs,
                              init_mode=cfg.solver.init_mode, seed=cfg.solver.seed)
        it, reg = admm_solve(C, solver)
        path = cfg.out / f"trace_rho_{rho:g}.csv"
        rio.write_trace(it.history, path)
        print(f"rho {rho:g}: objective {it.history[-1].objective:.10g}, {it.iteration} iterations, "
              f"converged={reg.converged} -> {path}")
        if not reg.converged:
            status = EXIT_NONCONVERGED
    return status


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError) as exc:
        print(f"regalign: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        _setup_logging(args.log_level)
        return args.func(args)
    except DisconnectedGraphError as exc:
        print(f"regalign: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RegistrationError, ValueError, KeyError, OSError) as exc:
        msg = exc.strerror + f": {exc.filename}" if isinstance(exc, OSError) and exc.filename else exc
        print(f"regalign: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
