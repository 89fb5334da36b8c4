"""Command-line entry point ``distobs``.

Exit codes:
  analyze     0 condition holds, 2 fails, 1 input error
  synthesize  0 converged, 2 condition fails (without --force), 3 budget
              exhausted, 4 fixed-mode gate tripped, 1 input error
  control     0 converged, 2 assumptions fail, 3 budget exhausted, 1 input error
  simulate    0 ok, 2 trace diverged, 1 input error
  verify      0 certificates reproduce and pass, 2 otherwise, 1 input error
  campaign    0 ok, 1 input error
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np
import yaml

from . import __version__
from .control import (
    build_plant_observer,
    compose_distributed_controller,
    composed_closed_loop,
    equivalence_gap,
    proposition2_pipeline,
)
from .fixedmodes import FixedModeError, build_triple, unstable_fixed_modes
from .io import FormatError, Solution, load_problem, load_solution, save_solution
from .numerics import Tolerances, spectral_radius
from .plant import theorem1_condition
from .simulator import NoiseModel, fit_decay_rate, run, write_csv
from .synthesis import design_observer, error_matrix, synthesize_gains
from .weights import build_weight_matrix, weight_violations

EXIT_OK, EXIT_INPUT, EXIT_FAIL, EXIT_BUDGET, EXIT_ANOMALY = 0, 1, 2, 3, 4
CERT_TOL = 1e-9


def _fmt(z):
    z = complex(z)
    return f"{z.real:.6g}" if abs(z.imag) < 1e-12 else f"{z.real:.6g}{z.imag:+.6g}j"


def _settings(args, pr):
    """Merge problem options with command-line overrides."""
    o = dict(pr.options)
    tol = pr.tol
    over = {}
    if args.tol_rank is not None:
        over["rank_rel_tol"] = args.tol_rank
    if args.tol_eig is not None:
        over["eig_sep_tol"] = args.tol_eig
    if over:
        tol = Tolerances(**{**tol.to_dict(), **over})
    return {
        "seed": args.seed if args.seed is not None else int(o.get("seed", 0)),
        "mu": args.mu if args.mu is not None else o.get("mu"),
        "nu": args.nu if args.nu is not None else o.get("nu"),
        "restarts": args.restarts if args.restarts is not None else int(o.get("restarts", 8)),
        "max_iters": args.max_iters if args.max_iters is not None else int(o.get("max_iters", 2000)),
        "tol": tol,
    }


def _print_components(pr, verdict):
    print("source components:")
    for c in verdict.components:
        status = "detectable" if c.detectable else f"NOT detectable (witness {_fmt(c.witness)})"
        print(f"  {{{', '.join(map(str, c.vertices))}}}: {status}")


def cmd_analyze(args):
    pr = load_problem(args.problem)
    s = _settings(args, pr)
    v = theorem1_condition(pr.plant, pr.graph, s["tol"])
    _print_components(pr, v)
    print(f"omniscience achievable: {'yes' if v.holds else 'no'}")
    return EXIT_OK if v.holds else EXIT_FAIL


def _provenance(args, s, command):
    return {"command": command, "seed": s["seed"], "tolerances": s["tol"].to_dict(),
            "restarts": s["restarts"], "max_iters": s["max_iters"]}


def cmd_synthesize(args):
    pr = load_problem(args.problem)
    s = _settings(args, pr)
    tol = s["tol"]
    v = theorem1_condition(pr.plant, pr.graph, tol)
    _print_components(pr, v)
    if not v.holds and not args.force:
        print("detectability condition fails; use --force to search anyway")
        return EXIT_FAIL
    if v.holds:
        try:
            wm, res, tries = design_observer(pr.graph, pr.plant, seed=s["seed"], mu=s["mu"],
                                             restarts=s["restarts"], max_iters=s["max_iters"], tol=tol)
        except FixedModeError as exc:
            print(f"anomaly: fixed-mode gate failed although the condition holds: {exc}")
            return EXIT_ANOMALY
    else:
        wm = build_weight_matrix(pr.graph, pr.plant.A, tol, s["seed"])
        fm = unstable_fixed_modes(build_triple(wm, pr.plant), tol)
        print(f"unstable fixed modes: {[_fmt(l) for l in fm.fixed_modes()]}")
        res = synthesize_gains(wm, pr.plant, s["mu"], seed=s["seed"], restarts=s["restarts"],
                               max_iters=s["max_iters"], tol=tol, check_fixed_modes=False)
        tries = 1
    fm = unstable_fixed_modes(build_triple(wm, pr.plant), tol)
    cert = {"observer_radius": res.closed_loop_radius, "observer_pass": bool(res.closed_loop_radius < 1.0),
            "has_unstable_fixed_mode": fm.verdict, "mu": res.gains.mu, "w_attempts": tries,
            "mu_escalations": res.escalations}
    sol = Solution(wm, res.gains, None, cert, _provenance(args, s, "synthesize"))
    save_solution(sol, args.output)
    print(f"closed-loop error radius: {res.closed_loop_radius:.12g} ({'converged' if res.converged else 'not converged'})")
    print(f"solution written to {args.output}")
    return EXIT_OK if res.converged else EXIT_BUDGET


def cmd_control(args):
    pr = load_problem(args.problem)
    if pr.plant.B_blocks is None:
        raise FormatError("plant.B is required for the control command", path=args.problem)
    s = _settings(args, pr)
    res = proposition2_pipeline(pr.plant, pr.graph, seed=s["seed"], mu=s["mu"], nu=s["nu"],
                                restarts=s["restarts"], max_iters=s["max_iters"], tol=s["tol"])
    print(f"plant stabilizable: {'yes' if res.stabilizable else 'no'}")
    _print_components(pr, res.theorem1)
    for note in res.notes:
        print(f"note: {note}")
    if res.status.startswith("assumption"):
        print(f"status: {res.status}")
        return EXIT_FAIL
    cert = {"status": res.status,
            "observer_radius": res.observer.closed_loop_radius if res.observer else None}
    if res.decoupled is not None:
        cert.update(controller_radius=res.closed_loop_radius, equivalence_gap=res.equivalence_gap,
                    nu=res.decoupled.controllers.nu)
    if res.weights is not None and res.observer is not None:
        sol = Solution(res.weights, res.observer.gains,
                       res.decoupled.controllers if res.decoupled else None, cert,
                       _provenance(args, s, "control"))
        save_solution(sol, args.output)
        print(f"solution written to {args.output}")
    print(f"status: {res.status}")
    if res.closed_loop_radius is not None:
        print(f"closed-loop radius: {res.closed_loop_radius:.12g}")
    return EXIT_OK if res.converged else EXIT_BUDGET


def cmd_simulate(args):
    pr = load_problem(args.problem)
    sol = load_solution(args.solution, pr)
    s = _settings(args, pr)
    p = pr.plant
    rng = np.random.default_rng(s["seed"])
    x0 = rng.standard_normal(p.n)
    if args.zero_error:
        xhat0 = np.tile(x0, (p.m, 1))
    else:
        e = rng.standard_normal((p.m, p.n))
        e *= args.initial_error / max(np.linalg.norm(e, axis=1).max(), 1e-300)
        xhat0 = x0 - e
    noise = NoiseModel(args.noise, args.noise) if args.noise > 0 else None
    tr = run(p, sol.weights, sol.gains, x0, xhat0, horizon=args.horizon, noise=noise,
             seed=s["seed"], graph=pr.graph)
    if args.csv:
        write_csv(tr, args.csv)
        print(f"trace written to {args.csv}")
    final = float(tr.max_error()[-1])
    rate = fit_decay_rate(tr.max_error(), floor=1e-12, scale=np.linalg.norm(tr.x, axis=1))
    print(f"final max error: {final:.6g}")
    print(f"fitted decay rate: {'n/a' if rate is None else f'{rate:.6g}'}")
    if tr.overflow_step is not None:
        print(f"overflow at step {tr.overflow_step}; trace truncated")
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(args):
    pr = load_problem(args.problem)
    sol = load_solution(args.solution, pr)
    s = _settings(args, pr)
    p = pr.plant
    ok = True
    r = spectral_radius(error_matrix(sol.weights, p, sol.gains))
    stored = sol.certificates.get("observer_radius")
    print(f"observer radius: {r:.12g}" + (f" (stored {stored:.12g})" if stored is not None else ""))
    if stored is not None and abs(r - float(stored)) > CERT_TOL:
        print("mismatch with stored observer radius")
        ok = False
    ok &= r < 1.0
    Wm = sol.weights.W
    viol = weight_violations(Wm, pr.graph)
    for v in viol:
        print(f"weight problem: {v}")
    ok &= not viol
    if sol.decoupled is not None:
        sys_po = build_plant_observer(p, sol.weights, sol.gains, s["tol"], check=False)
        ctrl = compose_distributed_controller(sol.gains, sol.decoupled, sol.weights, p)
        rc = spectral_radius(composed_closed_loop(ctrl, p))
        gap = equivalence_gap(ctrl, sys_po, sol.decoupled, p)
        stored = sol.certificates.get("controller_radius")
        print(f"controller radius: {rc:.12g}" + (f" (stored {stored:.12g})" if stored is not None else ""))
        print(f"interconnection gap: {gap:.3g}")
        if stored is not None and abs(rc - float(stored)) > CERT_TOL:
            print("mismatch with stored controller radius")
            ok = False
        ok &= rc < 1.0 and gap <= 1e-12
    print("verified" if ok else "verification failed")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_campaign(args):
    from .campaign import run_config

    with open(args.config) as fh:
        try:
            cfg = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise FormatError(f"YAML syntax error: {exc}", path=args.config) from exc
    if not isinstance(cfg, dict):
        raise FormatError("campaign config must be a mapping", path=args.config)
    if args.seed is not None:
        for e in cfg.get("campaigns", []) or []:
            e.setdefault("master_seed", args.seed)
    try:
        results = run_config(cfg)
    except (TypeError, ValueError) as exc:
        raise FormatError(str(exc), path=args.config) from exc
    text = json.dumps({"master_seed": args.seed, "results": results}, indent=2, default=_json_default)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    for r in results:
        print(f"{r['name']}: {json.dumps(r['aggregates'], default=_json_default)}")
    if not results:
        print("no campaigns configured")
    return EXIT_OK


def _json_default(x):
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return None if math.isnan(x) else float(x)
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x)}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol-rank", type=float, help="relative singular-value threshold")
    common.add_argument("--tol-eig", type=float, help="eigenvalue separation threshold")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--mu", type=int, help="observer augmented order per vertex")
    common.add_argument("--nu", type=int, help="controller order per vertex")
    common.add_argument("--restarts", type=int, help="search restarts")
    common.add_argument("--max-iters", type=int, help="iterations per search stage")
    common.add_argument("--force", action="store_true", help="search even when the condition fails")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="distobs", parents=[common],
                                 description="Distributed observers over directed graphs.")
    ap.add_argument("--version", action="version", version=f"distobs {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="check the detectability condition")
    a.add_argument("problem")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synthesize", parents=[common], help="build W and observer gains")
    s.add_argument("problem")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synthesize)

    c = sub.add_parser("control", parents=[common], help="design distributed stabilizing controllers")
    c.add_argument("problem")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(func=cmd_control)

    m = sub.add_parser("simulate", parents=[common], help="simulate the observer network")
    m.add_argument("problem")
    m.add_argument("solution")
    m.add_argument("--horizon", type=int, default=200)
    m.add_argument("--csv")
    m.add_argument("--noise", type=float, default=0.0, help="uniform noise amplitude")
    m.add_argument("--initial-error", type=float, default=1.0)
    m.add_argument("--zero-error", action="store_true", help="start every estimate at x(0)")
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", parents=[common], help="recompute stored certificates")
    v.add_argument("problem")
    v.add_argument("solution")
    v.set_defaults(func=cmd_verify)

    k = sub.add_parser("campaign", parents=[common], help="run randomized campaigns")
    k.add_argument("config")
    k.add_argument("-o", "--output")
    k.set_defaults(func=cmd_campaign)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
