"""Command-line front door: simplification, constants, oracle, simulation,
evaluation, search, and report merging.

All numbers in outputs are exact rational strings; repeated runs with the
same inputs produce byte-identical files.  Exit codes: 0 exact result,
1 parse/usage error, 2 refusal (caps or infeasibility), 3 heuristic result.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from typing import Optional

from .core import (
    DomainError,
    Epsilon,
    Instance,
    Objective,
    PrecisionError,
    RefusalError,
    SchemeConfig,
    format_rational,
    parse_rational,
)
from .schedule import Schedule, check_schedule_feasibility, evaluate_objective
from . import algmap, oracle, search, simplify


EXIT_OK = 0
EXIT_PARSE = 1
EXIT_REFUSAL = 2
EXIT_HEURISTIC = 3


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read JSON from {path}: {exc}") from exc


def _write_json(path: Optional[str], obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    data = _load_json(path)
    if not isinstance(data, dict):
        raise DomainError("config file must hold a JSON object")
    return data


def scheme_from(config: dict, epsilon: Optional[str] = None, **overrides) -> SchemeConfig:
    section = dict(config.get("scheme", {}))
    if epsilon is not None:
        section["epsilon"] = epsilon
    for key, value in overrides.items():
        if value is not None:
            section[key] = value
    if "epsilon" not in section and "ε" not in section:
        raise DomainError("no epsilon given (config scheme.epsilon or --epsilon)")
    return SchemeConfig.from_obj(section)


def universe_from(config: dict, cfg: SchemeConfig) -> search.Universe:
    section = config.get("universe")
    if section is None:
        raise DomainError("config has no universe section")
    objective = Objective(**{
        k: (parse_rational(v) if k in ("k", "alpha") else v)
        for k, v in section.get("objective", {"kind": "weighted_completion"}).items()
    })
    mode = section.get("mode", "product")
    if mode == "product":
        return search.build_universe(
            cfg,
            section["proc_exps"],
            section.get("weight_exps", [0]),
            m=int(section.get("m", 1)),
            preemptive=bool(section.get("preemptive", True)),
            objective=objective,
            x_max=section.get("x_max"),
            repeat=section.get("repeat"),
        )
    if mode == "explicit":
        catalogs = [
            [tuple(tuple(spec) for spec in ms) for ms in cat] for cat in section["catalogs"]
        ]
        return search.explicit_universe(
            cfg,
            catalogs,
            m=int(section.get("m", 1)),
            preemptive=bool(section.get("preemptive", True)),
            objective=objective,
            repeat=section.get("repeat"),
        )
    raise DomainError(f"unknown universe mode {mode!r}")


def load_map(spec: str) -> algmap.AlgorithmMap:
    if spec.startswith("builtin:"):
        return algmap.builtin_map(spec.split(":", 1)[1])
    with open(spec) as fh:
        return algmap.AlgorithmMap.from_jsonl(spec, fh.read())


def oracle_cache_from(config: dict) -> Optional[oracle.OracleCache]:
    path = config.get("oracle", {}).get("cache_path")
    if path is None:
        return None
    cache = oracle.OracleCache.load(path)
    cache.path = path
    return cache


def _save_cache(cache: Optional[oracle.OracleCache]) -> None:
    if cache is not None and getattr(cache, "path", None):
        cache.save(cache.path)


# -- subcommands ----------------------------------------------------------------


def cmd_simplify(args) -> int:
    config = load_config(args.config)
    inst = Instance.from_obj(_load_json(args.instance))
    cfg = scheme_from(config, args.epsilon)
    result = simplify.simplify_pipeline(inst, cfg, rescale=args.rescale)
    _write_json(args.out, result.instance.to_obj())
    ledger = [
        {"lemma": c.lemma, "factor": format_rational(c.factor)} for c in result.certificates
    ]
    _write_json(args.certificates, ledger)
    return EXIT_OK


def cmd_constants(args) -> int:
    eps = Epsilon(parse_rational(args.epsilon))
    cfg = None
    if args.config:
        cfg = scheme_from(load_config(args.config), args.epsilon)
    report = simplify.theoretical_constants(eps, args.m, cfg)
    if args.table:
        width = max(len(k) for k in report)
        for key, value in report.items():
            sys.stdout.write(f"{key.ljust(width)}  {value}\n")
    else:
        _write_json(args.out, report)
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = load_config(args.config)
    inst = Instance.from_obj(_load_json(args.instance))
    cfg = scheme_from(config, args.epsilon or format_rational(inst.eps.value))
    cache = oracle_cache_from(config)
    snapped = {"auto": None, "raw": False, "snapped": True}[args.completions]
    result = oracle.opt_value(
        inst, cfg, grid=not args.refined, snapped=snapped, cache=cache,
        want_witness=args.witness is not None,
    )
    _save_cache(cache)
    payload = {
        "value": format_rational(result.value),
        "grid": result.grid,
        "snapped": result.snapped,
        "nodes": result.nodes,
    }
    _write_json(args.out, payload)
    if args.witness and result.witness is not None:
        _write_json(args.witness, result.witness.to_obj())
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    inst = Instance.from_obj(_load_json(args.instance))
    cfg = scheme_from(config, args.epsilon or format_rational(inst.eps.value))
    amap = load_map(args.map)
    sched = algmap.simulate(amap, inst, cfg)
    violation = check_schedule_feasibility(sched)
    if violation is not None:
        raise RefusalError(f"simulated schedule infeasible: {violation}")
    payload = sched.to_obj()
    from .schedule import interval_view

    grouped = interval_view(sched, cfg)
    if grouped is not None:
        payload["intervals"] = grouped
    _write_json(args.out, payload)
    return EXIT_OK


def _report_payload(rep: search.CompetitiveReport) -> dict:
    return rep.to_obj()


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    cfg = scheme_from(config, args.epsilon)
    uni = universe_from(config, cfg)
    amap = load_map(args.map)
    cache = oracle_cache_from(config)
    rep = search.evaluate_map(amap, uni, args.policy, cache)
    _save_cache(cache)
    _write_json(args.out, _report_payload(rep))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["end_configuration", "ratio"])
            for key, ratio in sorted(rep.table):
                writer.writerow([key, format_rational(ratio)])
    return EXIT_OK


def cmd_search(args) -> int:
    config = load_config(args.config)
    cfg = scheme_from(config, args.epsilon)
    uni = universe_from(config, cfg)
    cache = oracle_cache_from(config)
    outcome = search.search_best_map(
        uni,
        args.policy,
        cache,
        exhaustive=args.exhaustive,
        heuristic_lookahead=args.heuristic,
    )
    _save_cache(cache)
    if args.out_map:
        with open(args.out_map, "w") as fh:
            fh.write(outcome.best_map.to_jsonl())
    _write_json(args.out_report, _report_payload(outcome.report))
    return EXIT_HEURISTIC if outcome.report.heuristic else EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        data = _load_json(path)
        rows.append(
            {
                "source": path,
                "map": data.get("map"),
                "policy": data.get("policy"),
                "rho": data.get("rho"),
                "end_classes": data.get("end_classes"),
                "heuristic": data.get("heuristic", False),
            }
        )
    rows.sort(key=lambda r: (str(r["rho"]), str(r["map"])))
    _write_json(args.out, {"reports": rows})
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source", "map", "policy", "rho", "end_classes", "heuristic"])
            for r in rows:
                writer.writerow([r["source"], r["map"], r["policy"], r["rho"], r["end_classes"], r["heuristic"]])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapsched",
        description="Exact competitive-ratio evaluation and search for online scheduling maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (scheme/universe/oracle sections)")
        p.add_argument("--epsilon", help="accuracy parameter, e.g. 1/2 (overrides config)")

    p = sub.add_parser("simplify", help="run the simplification pipeline on an instance")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--out", help="transformed instance JSON (stdout if omitted)")
    p.add_argument("--certificates", help="loss-certificate ledger JSON (stdout if omitted)")
    p.add_argument("--rescale", action="store_true", help="apply non-preemptive part rescaling")
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser("constants", help="evaluate the closed-form constants")
    p.add_argument("--config")
    p.add_argument("--epsilon", required=True)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--table", action="store_true", help="print aligned text instead of JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("oracle", help="offline optimum of a small instance")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--refined", action="store_true", help="exact continuous optimum instead of the grid")
    p.add_argument("--completions", choices=["auto", "raw", "snapped"], default="auto")
    p.add_argument("--witness", help="write the witness schedule JSON here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("simulate", help="run an algorithm map on an instance")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--map", required=True, help="builtin:<name> or a map .jsonl file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="competitive ratio of a map over a universe")
    common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--policy", choices=["grid", "refined"], default="grid")
    p.add_argument("--csv", help="per-end-configuration ratio CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="search the best map over a universe")
    common(p)
    p.add_argument("--policy", choices=["grid", "refined"], default="grid")
    p.add_argument("--exhaustive", action="store_true", help="plain enumeration, no pruning")
    p.add_argument("--heuristic", type=int, help="greedy lookahead depth (non-exact mode)")
    p.add_argument("--out-map")
    p.add_argument("--out-report")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="merge competitive reports into one table")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, PrecisionError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except RefusalError as exc:
        sys.stderr.write(f"refused: {exc}\n")
        return EXIT_REFUSAL


if __name__ == "__main__":
    sys.exit(main())
