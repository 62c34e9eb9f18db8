"""Command line entry point."""
from __future__ import annotations

import argparse
import json
import sys

from ..energy import ProblemParams
from ..mesh import DomainSpec, build_mesh
from ..morse import nondegeneracy_certificate
from ..multisolve import ContinuationSchedule, continue_alpha, nehari_bumps, newton_solve
from ..nehari import bump, minimize_on_nehari
from ..nonlinearity import NonlinearitySpec
from . import reports
from .certificates import verify_ps, verify_splus
from .experiments import (
    ExperimentConfig,
    config_for,
    feature_points,
    perturbation_experiment,
    solve_cell,
    topology_experiment,
)

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file mirroring ExperimentConfig")
    common.add_argument("--domain", choices=["interval", "rectangle", "disk", "annulus"])
    common.add_argument("--R", type=float, help="disk radius")
    common.add_argument("--r0", type=float, help="annulus inner radius")
    common.add_argument("--r1", type=float, help="annulus outer radius")
    common.add_argument("--h", type=float, help="target mesh size")
    common.add_argument("--p", type=float)
    common.add_argument("--q", type=float)
    common.add_argument("--eps", type=_floats, help="comma separated list")
    common.add_argument("--alpha", type=float)
    common.add_argument("--samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--n", type=_ints, help="comma separated list of n for the forced study")
    common.add_argument("--out", help="output directory")

    ap = _Parser(prog="pmorse", description="Multiple positive solutions of singularly "
                 "perturbed p-Laplace problems: solvers, Morse data and certificates.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="ground state by Nehari minimization")
    sub.add_parser("sweep", parents=[common], help="solution counts over an eps sweep")
    sub.add_parser("morse", parents=[common], help="Morse report of the ground state branch")
    sub.add_parser("perturb", parents=[common], help="forced perturbation study")
    sub.add_parser("verify", parents=[common], help="sampled inequality certificates")
    sub.add_parser("mesh-dump", parents=[common], help="write the mesh as JSON")
    return ap


DEFAULT_EPS = {"disk": [0.2], "annulus": [0.4, 0.2, 0.1, 0.05]}


def resolve_config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    if "domain" in base and not args.domain:
        domain = DomainSpec.from_dict(base["domain"])
    else:
        shape = args.domain or "disk"
        if shape == "disk":
            domain = DomainSpec.disk(args.R if args.R is not None else 1.0)
        elif shape == "annulus":
            domain = DomainSpec.annulus(args.r0 if args.r0 is not None else 1.0,
                                        args.r1 if args.r1 is not None else 2.0)
        elif shape == "interval":
            domain = DomainSpec.interval(0.0, args.R if args.R is not None else 1.0)
        else:
            side = args.R if args.R is not None else 1.0
            domain = DomainSpec.rectangle(side, side)
    if "spec" in base and args.p is None and args.q is None:
        spec = NonlinearitySpec.from_dict(base["spec"])
    else:
        spec = NonlinearitySpec.homogeneous(args.q if args.q is not None else 3.0,
                                            args.p if args.p is not None else 1.5,
                                            dimension=domain.dim)
    eps = args.eps or base.get("eps_list") or DEFAULT_EPS.get(domain.shape, [0.2])
    h = args.h if args.h is not None else base.get("h_mesh", 1.0 / 32)
    kw = {k: v for k, v in base.items() if k not in ("domain", "spec", "eps_list", "h_mesh")}
    if "schedule" in kw:
        kw["schedule"] = ContinuationSchedule(**kw["schedule"])
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.n:
        kw["n_list"] = args.n
    kw.pop("out_dir", None)
    return config_for(domain, spec, eps, h, **kw)


def _emit(args, report: dict, config: ExperimentConfig):
    report = reports.with_provenance(report, config.to_dict())
    text = reports.dumps(report)
    if args.out:
        reports.Emitter(args.out).report(report)
    else:
        sys.stdout.write(text)
    return report


def cmd_solve(args, config):
    eps = config.eps_list[0]
    mesh = build_mesh(config.domain, config.h_mesh)
    params = ProblemParams(config.spec, eps, 0.0)
    init = bump(mesh, feature_points(config.domain)[0], max(eps, 0.1))
    rec = minimize_on_nehari(mesh, params, init)
    rec.field_ref = "fields/ground_state.json"
    report = {"kind": "solve", "eps": eps, "mesh_hash": mesh.mesh_hash, "n_nodes": mesh.n_nodes,
              "solution": rec.to_dict()}
    _emit(args, report, config)
    if args.out:
        em = reports.Emitter(args.out)
        em.mesh(mesh)
        em.field(mesh, rec.u, "ground_state.json")
    return EXIT_OK if rec.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args, config):
    report = topology_experiment(config)
    if args.out:
        reports.emit_topology(args.out, report, config.to_dict())
    else:
        sys.stdout.write(reports.dumps(reports.with_provenance(report, config.to_dict())))
    if all("error" in r for r in report["rows"]):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_morse(args, config):
    eps = config.eps_list[0]
    alpha = args.alpha if args.alpha is not None else 1e-4
    if not alpha > 0:
        raise ValueError("the Morse report needs alpha > 0")
    mesh = build_mesh(config.domain, config.h_mesh)
    sched = config.schedule
    alphas = tuple(a for a in sched.alphas if a > alpha) + (alpha,)
    params = ProblemParams(config.spec, eps, alphas[0])
    # start on the ground state branch: Nehari minimizer, then Newton at the head
    ground = minimize_on_nehari(mesh, params.with_alpha(0.0),
                                nehari_bumps(mesh, params, feature_points(config.domain)[:1])[0])
    if not ground.converged:
        return EXIT_NOT_CONVERGED
    rec = newton_solve(mesh, ground.u, params, budget=config.newton_budget)
    if not rec.converged:
        return EXIT_NOT_CONVERGED
    path = continue_alpha(mesh, rec, params,
                          ContinuationSchedule(alphas, final_zero=False, stage_budget=sched.stage_budget))
    last = path[-1]
    if not last.converged or len(path) < len(alphas):
        return EXIT_NOT_CONVERGED
    ok, rep = nondegeneracy_certificate(mesh, last.u, params.with_alpha(alpha))
    report = {"kind": "morse", "eps": eps, "alpha": alpha, "solution": last.to_dict(),
              "morse": rep.to_dict(), "nondegenerate": ok}
    _emit(args, report, config)
    return EXIT_OK


def cmd_perturb(args, config):
    eps = config.eps_list[0]
    base = solve_cell(config, eps)
    if base["count"] == 0:
        return EXIT_NOT_CONVERGED
    report = perturbation_experiment(config, eps, base)
    report["kind"] = "perturb"
    _emit(args, report, config)
    if args.out:
        reports.Emitter(args.out).table(report["rows"], reports.PERTURB_COLUMNS)
    return EXIT_OK


def cmd_verify(args, config):
    p = args.p if args.p is not None else config.spec.p
    alpha = args.alpha if args.alpha is not None else 1e-3
    eps = config.eps_list[0]
    params = ProblemParams(config.spec if args.p is None else
                           NonlinearitySpec.homogeneous(config.spec.q, p), eps, alpha)
    seed = args.seed if args.seed is not None else 0
    sp = verify_splus(params, sample_count=args.samples or 10_000, seed=seed)
    ps = verify_ps(params, seed=seed)
    report = {"kind": "verify", "splus": sp.to_dict(), "ps": ps.to_dict(),
              "passed": sp.passed and ps.passed}
    _emit(args, report, config)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_mesh_dump(args, config):
    mesh = build_mesh(config.domain, config.h_mesh)
    if args.out:
        reports.Emitter(args.out).mesh(mesh)
    else:
        sys.stdout.write(reports.dumps(mesh.to_dict(), indent=None))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "morse": cmd_morse, "perturb": cmd_perturb,
            "verify": cmd_verify, "mesh-dump": cmd_mesh_dump}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = resolve_config(args)
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"pmorse: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args, config)
    except ValueError as exc:
        print(f"pmorse: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run_cli())

