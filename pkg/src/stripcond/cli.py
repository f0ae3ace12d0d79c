"""Command-line front end.

Subcommands: simulate, potential, condition (strip|hit), lamperti,
lastpassage, ladderbox, verify <suite|all>, report.  Global flags: --seed,
--threads, --config, --out, --format.  Exit codes: 0 pass, 1 suite failure,
2 usage or configuration error.

CSV outputs carry a header comment with the configuration hash and seed;
JSON reports are key-sorted and timestamp-free, so identical configuration
and seed produce byte-identical files for any --threads value.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import (conditioning, config, ladderbox, lamperti, lastpassage,
               models, potential, suites, verify)
from .config import ConfigError
from .models import RngStream, SubordinatorSpec


def _spec_from_args(args) -> SubordinatorSpec:
    doc = {"family": args.family}
    if args.family == "drift":
        doc["kappa"] = args.kappa
    elif args.family == "poisson":
        doc["jump_rate"] = args.rate
    elif args.family == "compound_poisson_drift":
        doc.update(kappa=args.kappa, jump_rate=args.rate,
                   jump_law={"kind": "exponential", "rate": args.jump_mean_inv})
    elif args.family == "stable":
        doc["alpha"] = args.alpha
    elif args.family == "gamma":
        doc.update(gamma_shape=args.shape, gamma_rate=args.rate)
    return SubordinatorSpec.from_json(doc)


def _add_spec_flags(p):
    p.add_argument("--family", required=True,
                   choices=["drift", "poisson", "compound_poisson_drift",
                            "stable", "gamma"])
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--shape", type=float, default=1.0)
    p.add_argument("--jump-mean-inv", type=float, default=1.0,
                   help="rate of the exponential jump law")


def _csv_header(cfg, seed) -> str:
    return f"config-hash={config.config_hash(cfg)} seed={seed}"


def _out_path(args, name: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def cmd_simulate(args, cfg) -> int:
    spec = _spec_from_args(args)
    rng = RngStream(args.seed, 1)
    paths = [models.sample_path(spec, args.horizon, args.mode,
                                rng.child(i), dt=args.dt)
             for i in range(args.n_paths)]
    target = _out_path(args, "paths.csv")
    with open(target, "w") as fh:
        models.paths_to_csv(paths, fh, _csv_header(cfg, args.seed))
    print(f"wrote {target}")
    return 0


def cmd_potential(args, cfg) -> int:
    spec = _spec_from_args(args)
    xs = np.linspace(args.x_min, args.x_max, args.x_points)
    table = potential.build_table(spec, args.q, xs)
    target = _out_path(args, "potential.csv")
    with open(target, "w") as fh:
        fh.write(f"# {_csv_header(cfg, args.seed)}\n")
        fh.write("x,U,u,provenance\n")
        for i, x in enumerate(table.xs):
            u_val = "" if table.density is None or not np.isfinite(table.density[i]) \
                else repr(float(table.density[i]))
            fh.write(f"{x!r},{table.values[i]!r},{u_val},{table.provenance.value}\n")
    print(f"wrote {target}")
    return 0


def cmd_condition(args, cfg) -> int:
    spec = _spec_from_args(args)
    rng = RngStream(args.seed, 2)
    if args.kind == "strip":
        law = conditioning.StripLaw(spec, args.a, args.x0)
        if args.histogram:
            term = conditioning.sample_terminal_batch(law, args.n_paths, rng)
            target = _out_path(args, "strip_terminal.csv")
            with open(target, "w") as fh:
                fh.write(f"# {_csv_header(cfg, args.seed)}\n")
                fh.write("terminal\n")
                for v in term:
                    fh.write(f"{v!r}\n")
            print(f"wrote {target}")
            return 0
        paths = [conditioning.sample_strip(law, args.method, rng.child(i),
                                           dt=args.dt, horizon=args.horizon)
                 for i in range(args.n_paths)]
    else:
        law = conditioning.HitLaw(spec, args.y, args.x0)
        paths = [conditioning.sample_hit(law, rng.child(i), dt=args.dt,
                                         horizon=args.horizon)
                 for i in range(args.n_paths)]
    target = _out_path(args, f"{args.kind}_paths.csv")
    with open(target, "w") as fh:
        models.paths_to_csv(paths, fh, _csv_header(cfg, args.seed))
    print(f"wrote {target}")
    return 0


def cmd_lamperti(args, cfg) -> int:
    lams = np.linspace(args.lam_min, args.lam_max, args.lam_points)
    target = _out_path(args, "lamperti.csv")
    emp = {}
    if args.empirical:
        gen = RngStream(args.seed, 3).generator()
        xi = lamperti.xi_at_clock_batch(args.alpha, [1.0], args.empirical,
                                        5e-4, gen)[0]
        for lam in lams:
            v = np.where(np.isfinite(xi), np.exp(lam * xi), 0.0)
            emp[float(lam)] = -math.log(max(v.mean(), 1e-300))
    with open(target, "w") as fh:
        fh.write(f"# {_csv_header(cfg, args.seed)}\n")
        fh.write("lambda,phi,phi_down,phi_circ,empirical\n")
        for lam in lams:
            e = emp.get(float(lam), "")
            fh.write(f"{lam!r},{lamperti.phi_xi(lam, args.alpha)!r},"
                     f"{lamperti.phi_down(lam, args.alpha)!r},"
                     f"{lamperti.phi_circ(lam, args.alpha)!r},{e}\n")
    print(f"wrote {target}")
    return 0


def cmd_lastpassage(args, cfg) -> int:
    if args.chain_file:
        doc = json.loads(Path(args.chain_file).read_text())
        chain = lastpassage.CtmcSpec(np.asarray(doc["generator"], dtype=float),
                                     doc.get("start", 0))
    else:
        chain = lastpassage.BUNDLED_CHAINS[args.chain]()
    law = lastpassage.LastPassageLaw(chain, args.a)
    rows = {
        "audit_AB": law.audit_assumptions(),
        "h": [lastpassage.h_limit(chain, x) for x in range(chain.n_states)],
        "h_q at q=1": [lastpassage.h_q_exact(chain, x, 1.0)
                       for x in range(chain.n_states)],
        "excessive_identity_residual": lastpassage.check_excessive_identity(
            chain, min(1, chain.n_states - 1), 1.0, 1.0),
        "g_window_identity_residual": lastpassage.g_window_identity_residual(
            chain, chain.start, args.a, 1.0),
        "excursion_entrance_mass": lastpassage.excursion_entrance_mass(law),
    }
    target = _out_path(args, "lastpassage.json")
    target.write_text(json.dumps(rows, sort_keys=True, indent=2,
                                 default=float) + "\n")
    print(f"wrote {target}")
    return 0


def cmd_ladderbox(args, cfg) -> int:
    law = ladderbox.LadderBoxLaw(args.a, args.b)
    rows = {
        "V_box_q0": ladderbox.V_box(law, 0.0),
        "V_box_q": {str(q): ladderbox.V_box(law, q) for q in (0.25, 0.5, 1.0)},
        "V_b_infinity": math.sqrt(2.0 * args.a / math.pi),
        "h_s(0,0,0) at s=a/2": ladderbox.h_s_box(law, 0.0, 0.0, 0.0, args.a / 2),
        "kappa(1,0)": ladderbox.kappa_ladder_time(1.0),
    }
    target = _out_path(args, "ladderbox.json")
    target.write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    print(f"wrote {target}")
    return 0


def cmd_verify(args, cfg) -> int:
    try:
        results = suites.run_suite(args.suite, args.seed, args.threads, cfg)
    except KeyError:
        print(f"unknown suite {args.suite!r}; choose from "
              f"{sorted(suites.SUITES) + ['all']}", file=sys.stderr)
        return 2
    doc = {
        "seed": args.seed,
        "config_hash": config.config_hash(cfg),
        "suites": {k: verify.report_block_to_json(v)
                   for k, v in results.items()},
    }
    doc["passed"] = all(r["passed"] for block in doc["suites"].values()
                        for r in block)
    target = _out_path(args, "verify_report.json")
    target.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    for name, block in results.items():
        for rep in block:
            print(f"{name}: {rep}")
    print(f"wrote {target}")
    return 0 if doc["passed"] else 1


def cmd_report(args, cfg) -> int:
    doc = json.loads(Path(args.report_file).read_text())
    n_pass = n_fail = 0
    for name, block in doc.get("suites", {}).items():
        for rep in block:
            ok = rep["passed"]
            n_pass += ok
            n_fail += not ok
            flag = "PASS" if ok else "FAIL"
            print(f"[{flag}] {name}/{rep['name']} stat={rep['statistic']:.4g}")
    print(f"{n_pass} passed, {n_fail} failed (config {doc.get('config_hash')})")
    return 0 if n_fail == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stripcond",
        description="conditioned-subordinator simulation and verification")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--config", type=str, default=None)
    ap.add_argument("--out", type=str, default=".")
    ap.add_argument("--format", choices=["csv", "json"], default="csv")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample subordinator paths")
    _add_spec_flags(p)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--mode", choices=["jump_exact", "grid"], default="grid")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--n-paths", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("potential", help="emit U and u tables")
    _add_spec_flags(p)
    p.add_argument("--q", type=float, default=0.0)
    p.add_argument("--x-min", type=float, default=0.1)
    p.add_argument("--x-max", type=float, default=4.0)
    p.add_argument("--x-points", type=int, default=20)
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("condition", help="conditioned samplers")
    p.add_argument("kind", choices=["strip", "hit"])
    _add_spec_flags(p)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--y", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--method", choices=["importance_weight",
                                        "path_decomposition"],
                   default="path_decomposition")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--n-paths", type=int, default=1)
    p.add_argument("--histogram", action="store_true",
                   help="emit terminal values only")
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("lamperti", help="Laplace-exponent tables")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--lam-min", type=float, default=0.0)
    p.add_argument("--lam-max", type=float, default=2.0)
    p.add_argument("--lam-points", type=int, default=9)
    p.add_argument("--empirical", type=int, default=0,
                   help="paths for the empirical exponent column")
    p.set_defaults(func=cmd_lamperti)

    p = sub.add_parser("lastpassage", help="chain conditioning diagnostics")
    p.add_argument("--chain", choices=sorted(lastpassage.BUNDLED_CHAINS),
                   default="two_state")
    p.add_argument("--chain-file", type=str, default=None,
                   help="JSON {generator: [[...]], start: int}")
    p.add_argument("--a", type=float, default=1.0)
    p.set_defaults(func=cmd_lastpassage)

    p = sub.add_parser("ladderbox", help="time-space box diagnostics")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=1.0)
    p.set_defaults(func=cmd_ladderbox)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", help="suite name or 'all'")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="summarise a JSON verify report")
    p.add_argument("report_file")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = config.load(args.config)
        cfg["seed"] = args.seed
        cfg["threads"] = args.threads
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:  # surface usage and numeric errors as exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
