"""Command-line entry points.

Exit status: 0 success, 1 usage or output error, 2 configuration error,
3 infeasible run, 4 gradient check outside tolerance.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from ._parallel import WORKERS_ENV, pmap
from ._version import __version__
from .config import FeasibilityWarning, load_config
from .errors import ConfigError, EvaluationError, InfeasibleError
from .export import ExportError, export
from .gradcheck import check_gradient
from .optimizer import AscentConfig, optimize, write_iterations_csv, write_iterations_json
from .simulation import run_simulation

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_GRADIENT = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "policy", None):
        changes["policy"] = args.policy
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    if getattr(args, "ipa", None):
        changes["ipa"] = args.ipa
    return cfg.replace(**changes) if changes else cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    rec = run_simulation(cfg)
    paths = export(rec, args.out)
    print(f"J_total = {rec.J_total:.10g}")
    print(f"J_mean  = {rec.J_mean:.10g}")
    print("dJ/dtheta = " + " ".join(f"{g:.6g}" for g in rec.dJ_dtheta))
    print(f"events = {len(rec.events)}, samples = {len(rec.times)}")
    for p in paths.values():
        print(f"wrote {p}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load(args)
    ascent = AscentConfig(theta0=args.theta0, max_iters=args.iters,
                          step_rule=args.step if args.step is not None else "normalized",
                          shared=not args.per_agent)

    def show(r):
        print(f"n={r.n:3d} theta=" + ",".join(f"{v:.6f}" for v in r.theta)
              + f" J={r.J:.8g} |dJ|={np.linalg.norm(r.dJ_dtheta):.4g}", flush=True)

    records = optimize(cfg, ascent, callback=show)
    out = Path(args.out)
    write_iterations_json(records, out / "iterations.json")
    write_iterations_csv(records, out / "iterations.csv")
    status = "converged" if records[-1].converged else "stopped at max_iters"
    print(f"{status}; final theta = " + ",".join(f"{v:.6f}" for v in records[-1].theta))
    return EXIT_OK


def cmd_check_gradient(args) -> int:
    cfg = _load(args)
    theta = None if args.theta is None else np.array(args.theta, dtype=float)
    if theta is not None and theta.size == 1:
        theta = np.full(cfg.n, theta[0])
    report = check_gradient(cfg, delta=args.delta, theta=theta, workers=args.workers,
                            rel_tol=args.rel_tol)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_GRADIENT


def _run_policy(job):
    cfg, policy = job
    rec = run_simulation(cfg.replace(policy=policy, ipa="off"))
    return rec.times, rec.running_J, rec.J_total, rec.J_mean


def cmd_compare(args) -> int:
    cfg = _load(args)
    policies = ("frfs", "sdf")
    results = dict(zip(policies, pmap(_run_policy, [(cfg, p) for p in policies],
                                      args.workers)))
    T = cfg.horizon
    ts = np.arange(0.0, T, args.every)
    ts = np.append(ts, T) if T > 0 else ts
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "comparison.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "J_frfs", "J_sdf"])
            for t in ts:
                w.writerow([repr(float(t))] + [repr(float(np.interp(t, *results[p][:2])))
                                               for p in policies])
        jf, js = results["frfs"][2], results["sdf"][2]
        gap = abs(jf - js) / abs(jf) if jf else 0.0
        doc = {"code_version": __version__, "horizon": T,
               "J_total": {p: float(results[p][2]) for p in policies},
               "J_mean": {p: float(results[p][3]) for p in policies},
               "relative_gap": float(gap)}
        (out / "comparison.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write to {out}: {exc.strerror or exc}") from None
    print(f"{'policy':<8}{'J_total':>18}{'J_mean':>14}")
    for p in policies:
        print(f"{p:<8}{results[p][2]:>18.8g}{results[p][3]:>14.8g}")
    print(f"relative gap |J_frfs - J_sdf| / J_frfs = {gap:.4%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybridcover",
                     description="Coverage with recharging agents: simulate and tune "
                                 "recharge thresholds.",
                     epilog=f"Parallel runs honour {WORKERS_ENV}.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, policy=True):
        p.add_argument("--config", required=True,
                       help="YAML config file or bundled name (e.g. paper_s6)")
        p.add_argument("--horizon", type=float, help="override run.horizon")
        if policy:
            p.add_argument("--policy", choices=("frfs", "sdf"))

    p = sub.add_parser("simulate", help="run once and write CSV/JSON output")
    common(p)
    p.add_argument("--ipa", choices=("exact", "exogenous", "off"))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="gradient ascent on the recharge thresholds")
    common(p)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--theta0", type=float, default=0.5)
    p.add_argument("--step", type=float, help="fixed step instead of the normalised rule")
    p.add_argument("--per-agent", action="store_true", help="one threshold per agent")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("check-gradient", help="IPA versus central finite differences")
    common(p)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--theta", type=float, nargs="+")
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_check_gradient)

    p = sub.add_parser("compare-schedulers", help="run FRFS and SDF side by side")
    common(p, policy=False)
    p.add_argument("--every", type=float, default=100.0, help="table time spacing")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    with warnings.catch_warnings():
        warnings.simplefilter("always", FeasibilityWarning)
        try:
            return args.func(args)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except InfeasibleError as exc:
            print(f"infeasible: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        except EvaluationError as exc:
            print(f"evaluation failed: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE if isinstance(exc.cause, InfeasibleError) else EXIT_CONFIG
        except OSError as exc:
            print(f"output error: {exc}", file=sys.stderr)
            return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
