"""Command-line front end.

Exit codes: 0 success or feasible, 1 infeasible, 2 usage or I/O error,
3 model validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import LtlSyntaxError, ModelValidationError, MorapError, NotCoSafe
from .logic import dfa_to_json, task_dfa
from .model import mdp_to_json
from .solver import (DEFAULT_ITERATION_CAP, DEFAULT_PARETO_EPS, MorapInstance, ParetoResult,
                     pareto_point, synthesize)

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_MODEL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("morap") / "data" / name))


def load_instance(path: str) -> tuple[MorapInstance, np.ndarray | None]:
    p = Path(path)
    if not p.exists() and bundled_path(path).exists():
        p = bundled_path(path)
    with open(p) as fh:
        obj = json.load(fh)
    agents = []
    for a in obj.get("agents", []):
        if isinstance(a, dict) and "path" in a:
            with open(p.parent / a["path"]) as fh:
                a = json.load(fh)
        agents.append(a)
    obj = dict(obj, agents=agents)
    norm = obj.get("norm")
    return MorapInstance.from_json(obj), None if norm is None else np.asarray(norm, dtype=float)


def parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def write_pareto_csv(result: ParetoResult, path) -> None:
    d = result.t.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter"] + [f"w_{k + 1}" for k in range(d)] + [f"r_{k + 1}" for k in range(d)])
        fmt = lambda xs: [format(float(x), ".9g") for x in xs]
        for k, it in enumerate(result.iterations, 1):
            w.writerow([k] + fmt(it.w) + fmt(it.r))
        blank = [""] * d
        t_up = result.t_up if result.t_up is not None else np.full(d, np.nan)
        w.writerow(["tUp"] + blank + fmt(t_up))
        w.writerow(["tDown"] + blank + fmt(result.t_down))


def _engine(args):
    from .engine import make_engine
    return make_engine(args.workers)


def _solve(args, verify: bool):
    inst, norm = load_instance(args.instance)
    if args.norm:
        with open(args.norm) as fh:
            norm = np.asarray(json.load(fh), dtype=float)
    t = inst.pad_thresholds(parse_floats(args.thresholds))
    if args.centralised:
        from .centralised import build_centralised, centralised_pareto_point
        inst.validate()
        res = centralised_pareto_point(build_centralised(inst), t, norm, args.eps,
                                       args.max_iter, verify_only=verify)
    else:
        with _engine(args) as engine:
            res = pareto_point(inst, t, norm, args.eps, engine, args.max_iter, verify_only=verify)
    return inst, t, res


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    print(text)
    if out:
        Path(out).write_text(text + "\n")


def _oracle_report(inst, t, feasible) -> dict:
    from .oracle import build_feasibility_lp, solve_lp
    lp = solve_lp(build_feasibility_lp(inst, t))
    return {"lp": lp, "agree": lp == feasible}


def cmd_verify(args) -> int:
    inst, t, res = _solve(args, verify=True)
    payload = {"feasible": res.feasible, "tDown": [float(x) for x in res.t_down],
               "tUp": None if res.t_up is None else [float(x) for x in res.t_up],
               "iterations": len(res.iterations)}
    if args.oracle:
        payload["oracle"] = _oracle_report(inst, t, res.feasible)
    _emit(payload, args.out)
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_pareto(args, synth: bool = False) -> int:
    inst, t, res = _solve(args, verify=False)
    synthesis = None
    if synth and res.feasible and not args.centralised:
        synthesis = synthesize(res)
    payload = res.to_json(synthesis)
    if synthesis is not None:
        payload["marginals"] = synthesis.marginals(inst.n).tolist()
    if args.oracle:
        payload["oracle"] = _oracle_report(inst, t, res.feasible)
    if args.csv:
        write_pareto_csv(res, args.csv)
    _emit(payload, args.out)
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def _warehouse_config(args):
    from .warehouse import WarehouseConfig
    if args.config:
        with open(args.config) as fh:
            obj = json.load(fh)
    else:
        obj = {}
    for key in ("W", "H", "n", "slip", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            obj[key] = val
    if getattr(args, "deadline", None) is not None:
        obj["deadline"] = None if args.deadline == 0 else args.deadline
    return WarehouseConfig.from_json(obj)


def cmd_gen_warehouse(args) -> int:
    from .warehouse import generate_instance
    cfg = _warehouse_config(args)
    inst = generate_instance(cfg)
    payload = {"config": cfg.to_json(),
               "agents": [mdp_to_json(m, c) for m, c in zip(inst.agents, inst.costs)],
               "tasks": [f"F(at_rack_{k} & carrying & F(at_feed & carrying & F(at_rack_{k} & !carrying)))"
                         for k in range(cfg.n)],
               "deadline": cfg.step_bound}
    text = json.dumps(payload)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .warehouse import generate_instance
    from .solver import supporting_point
    base = _warehouse_config(args)
    rows = []
    with _engine(args) as engine:
        for n in parse_floats(args.agents).astype(int):
            cfg = type(base).from_json(dict(base.to_json(), n=int(n), racks=None))
            t0 = time.perf_counter()
            inst = generate_instance(cfg)
            states = inst.total_product_states()
            build = time.perf_counter() - t0
            ref = supporting_point(inst, np.full(2 * n, 1.0 / (2 * n)), engine).r
            t = np.concatenate([ref[:n] * args.cost_slack, np.full(n, args.prob)])
            t0 = time.perf_counter()
            res = pareto_point(inst, t, eps=args.eps, engine=engine, max_iter=args.max_iter)
            solve = time.perf_counter() - t0
            row = {"n": int(n), "product_states": int(states), "build_s": round(build, 4),
                   "iterations": len(res.iterations), "solve_s": round(solve, 4),
                   "per_iteration_s": round(solve / max(1, len(res.iterations)), 4),
                   "feasible": bool(res.feasible)}
            if n <= args.centralised_max:
                from .centralised import build_centralised
                row["centralised_states"] = build_centralised(inst).num_states
            rows.append(row)
            print(json.dumps(row), flush=True)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def cmd_export_dfa(args) -> int:
    dfa = task_dfa(args.formula, args.deadline)
    _emit(dfa_to_json(dfa), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def solver_args(p):
        p.add_argument("--instance", required=True)
        p.add_argument("--thresholds", required=True,
                       help="comma separated: agent cost bounds, then task probabilities")
        p.add_argument("--eps", type=float, default=DEFAULT_PARETO_EPS)
        p.add_argument("--norm", help="JSON file holding the norm matrix")
        p.add_argument("--workers", type=int)
        p.add_argument("--centralised", action="store_true")
        p.add_argument("--oracle", action="store_true")
        p.add_argument("--max-iter", type=int, default=DEFAULT_ITERATION_CAP)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("verify", help="decide feasibility of a threshold vector")
    solver_args(p)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("pareto", help="feasibility plus nearest Pareto point")
    solver_args(p)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_pareto)
    p = sub.add_parser("synth", help="pareto query and random-assignment synthesis")
    solver_args(p)
    p.add_argument("--csv")
    p.set_defaults(func=lambda a: cmd_pareto(a, synth=True))

    def wh_args(p):
        p.add_argument("--config")
        p.add_argument("--W", type=int)
        p.add_argument("--H", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--slip", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--deadline", type=int, help="step bound; 0 disables it")
        p.add_argument("--out")

    p = sub.add_parser("gen-warehouse", help="write a warehouse instance as JSON")
    wh_args(p)
    p.set_defaults(func=cmd_gen_warehouse)
    p = sub.add_parser("bench", help="warehouse scaling run")
    wh_args(p)
    p.add_argument("--agents", default="1,2,3,4")
    p.add_argument("--eps", type=float, default=DEFAULT_PARETO_EPS)
    p.add_argument("--prob", type=float, default=0.9)
    p.add_argument("--cost-slack", type=float, default=1.1)
    p.add_argument("--max-iter", type=int, default=DEFAULT_ITERATION_CAP)
    p.add_argument("--workers", type=int)
    p.add_argument("--centralised-max", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("export-dfa", help="translate a co-safe formula to DFA JSON")
    p.add_argument("--formula", required=True)
    p.add_argument("--deadline", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_dfa)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ModelValidationError as exc:
        print(f"model validation error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, json.JSONDecodeError, UsageError, LtlSyntaxError, NotCoSafe,
            KeyError, ValueError, MorapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
