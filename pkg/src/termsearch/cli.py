"""Command-line entry point: ``termsearch <command> [flags]``.

Every command writes its artifacts plus a ``<artifact>.manifest.json``
recording the parameters needed to rerun it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .arena import ENGINE_SPEC_HELP, make_openings, parse_engine_spec, play_grid
from .dataset import (
    DEFAULT_TRACE_LEN,
    Dataset,
    ScoreCache,
    ScoringPolicy,
    accuracy_report,
    format_report,
    generate_dataset,
    make_scorer,
    relabel_curriculum,
    replay_feasible,
)
from .exprlang import DEFAULT_MAX_LEN, ExpressionError, canonical_key, parse_prefix, to_infix
from .mcs import DiscoveryConfig, discover

log = logging.getLogger("termsearch")

FORMAT_VERSION = 1


class CommandError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(primary: Path, command: str, params: dict, artifacts: list[Path], started: float) -> None:
    manifest = {
        "format": "termsearch-manifest",
        "version": FORMAT_VERSION,
        "command": command,
        "params": params,
        "artifacts": [str(p) for p in artifacts],
        "tool_version": __version__,
        "duration_seconds": round(time.perf_counter() - started, 3),
    }
    _write_json(primary.with_name(primary.name + ".manifest.json"), manifest)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def _load_dataset(path: str) -> Dataset:
    if not Path(path).is_file():
        raise CommandError(f"dataset file not found: {path}")
    return Dataset.load(path)


def _policy(args) -> ScoringPolicy:
    return ScoringPolicy(
        budget=args.budget,
        top_k=args.top_k,
        early_stop_threshold=getattr(args, "threshold", 80),
        early_stop_after=getattr(args, "after", 200),
        early_stop=not getattr(args, "no_early_stop", True),
    )


def cmd_gen_dataset(args) -> None:
    started = time.perf_counter()
    if args.label_mode == "sh" and not replay_feasible(args.branching, args.label_budget, args.trace_len):
        raise CommandError(
            f"schedule infeasible: Sequential Halving with --label-budget {args.label_budget} over "
            f"{args.branching} arms needs more than --trace-len {args.trace_len} evaluations per arm"
        )
    if args.trace_len < 32:
        raise CommandError("--trace-len must be at least 32")
    dataset = generate_dataset(
        args.states, args.branching, args.depth, args.trace_len, args.c_inner, args.label_budget,
        args.opening_plies, args.seed, label_mode=args.label_mode,
    )
    out = Path(args.out)
    dataset.write(out)
    print(f"wrote {len(dataset)} states to {out} (skipped {dataset.params['skipped']} positions)")
    _write_manifest(out, "gen-dataset", vars_of(args), [out], started)


def cmd_relabel(args) -> None:
    started = time.perf_counter()
    dataset = _load_dataset(args.dataset)
    try:
        relabeled = relabel_curriculum(dataset, args.budget)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    out = Path(args.out)
    relabeled.write(out)
    print(f"relabeled {len(relabeled)} states with Sequential Halving ({args.budget} evaluations) -> {out}")
    _write_manifest(out, "relabel", vars_of(args), [out], started)


def cmd_discover(args) -> None:
    started = time.perf_counter()
    if args.budget_exprs is None and args.budget_seconds is None:
        raise CommandError("set --budget-exprs or --budget-seconds")
    dataset = _load_dataset(args.dataset)
    config = DiscoveryConfig(
        mode=args.mode, temperature=args.temperature, max_len=args.max_len, worker_count=args.workers,
        budget_exprs=args.budget_exprs, budget_seconds=args.budget_seconds, seed=args.seed,
        shared_table=not args.independent,
    )
    cache = ScoreCache()
    scorer = make_scorer(dataset, _policy(args), cache)
    out = Path(args.out)
    # wall-clock stamps only for time-budgeted runs, so count-budgeted logs are reproducible
    timed = args.budget_seconds is not None
    records = []

    def on_improve(point) -> None:
        rec = {"type": "improvement", "evaluated": point.evaluated, "score": point.score,
               "expression": canonical_key(point.expression)}
        if timed:
            rec["elapsed"] = round(point.elapsed, 6)
        records.append(rec)
        log.info("%6d  %g  %s", point.evaluated, point.score, to_infix(point.expression))

    result = discover(config, scorer, on_improve)
    records.insert(0, {"type": "header", "format": "termsearch-discovery", "version": FORMAT_VERSION,
                       "states": len(dataset), "mode": config.mode, "temperature": config.temperature})
    records.append({
        "type": "summary", "evaluated": result.evaluated_count, "best_score": result.best_score,
        "best_expression": canonical_key(result.best_expression), "distinct_scored": len(cache),
        "memo_hits": cache.hits, "failures": result.failures,
    })
    out.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    ranked = sorted(
        ((entry.hits, key) for key, entry in cache.items() if not entry.stopped),
        key=lambda t: (-t[0], len(t[1].split()), t[1]),
    )[: args.top_terms]
    best_path = out.with_name(out.name + ".best.json")
    _write_json(best_path, [
        {"expression": key, "infix": to_infix(parse_prefix(key)), "hits": hits, "states": len(dataset)}
        for hits, key in ranked
    ])
    print(f"best {result.best_score:g}/{len(dataset)}: {to_infix(result.best_expression)} "
          f"after {result.evaluated_count} expressions")
    _write_manifest(out, "discover", vars_of(args), [out, best_path], started)


def cmd_eval_term(args) -> None:
    started = time.perf_counter()
    dataset = _load_dataset(args.dataset)
    terms = []
    for text in args.term:
        try:
            terms.append(parse_prefix(text))
        except ExpressionError as exc:
            raise CommandError(f"cannot parse term {text!r}: {exc}") from exc
    try:
        rows = accuracy_report(terms, dataset, _policy(args))
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    print(format_report(rows))
    if args.out:
        out = Path(args.out)
        _write_json(out, [
            {"term": r.term, "infix": r.infix, "hits": r.hits, "states": r.states, "accuracy": r.accuracy}
            for r in rows
        ])
        _write_manifest(out, "eval-term", vars_of(args), [out], started)


def cmd_match(args) -> None:
    started = time.perf_counter()
    try:
        engine_a = parse_engine_spec(args.engine_a)
        engine_b = parse_engine_spec(args.engine_b)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    if args.openings is not None:
        if args.games is not None and args.games != 2 * args.openings:
            raise CommandError("--games must be twice --openings (each opening is played from both sides)")
        n_openings = args.openings
    else:
        games = 400 if args.games is None else args.games
        if games < 2 or games % 2:
            raise CommandError("--games must be a positive even number (each opening is played twice)")
        n_openings = games // 2
    if n_openings < 1:
        raise CommandError("--openings must be positive")
    try:
        openings = make_openings(n_openings, args.branching, args.depth, args.opening_plies, args.seed)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    grid_a = args.grid_a or [engine_a.c]
    grid_b = args.grid_b or [engine_b.c]
    table = play_grid(engine_a, engine_b, grid_a, grid_b, openings, args.evals, args.workers)
    out = Path(args.out)
    cells = [
        [{"winrate": r.winrate, "wins": r.wins, "games": r.games, "ci95": [r.ci_low, r.ci_high]} for r in row]
        for row in table
    ]
    _write_json(out, {
        "format": "termsearch-match", "version": FORMAT_VERSION,
        "engine_a": engine_a.describe(), "engine_b": engine_b.describe(),
        "cells_from": "engine_b", "rows": grid_a, "columns": grid_b, "evals": args.evals, "cells": cells,
    })
    games_path = out.with_name(out.name + ".games.jsonl")
    with open(games_path, "w") as fh:
        for i, ca in enumerate(grid_a):
            for j, cb in enumerate(grid_b):
                for rec in table[i][j].records:
                    fh.write(json.dumps({"row": ca, "column": cb, **rec.to_json()}, sort_keys=True) + "\n")
    print(f"winrate of {engine_b.kind} (columns) against {engine_a.kind} (rows), {args.evals} evaluations:")
    print("a \\ b  " + " ".join(f"{c:>8g}" for c in grid_b))
    for ca, row in zip(grid_a, table):
        print(f"{ca:<6g} " + " ".join(f"{100 * r.winrate:7.2f}%" for r in row))
    _write_manifest(out, "match", vars_of(args), [out, games_path], started)


def vars_of(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="termsearch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate a cached-search dataset")
    p.add_argument("--states", type=int, default=200)
    p.add_argument("--branching", type=int, default=8)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--trace-len", type=int, default=DEFAULT_TRACE_LEN)
    p.add_argument("--c-inner", type=float, default=0.2)
    p.add_argument("--label-mode", choices=("sh", "puct"), default="sh",
                   help="sh: Sequential Halving labels (curriculum); puct: PUCT search labels")
    p.add_argument("--label-budget", type=int, default=128)
    p.add_argument("--opening-plies", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("relabel", help="relabel a dataset with larger-budget Sequential Halving")
    p.add_argument("--dataset", required=True)
    p.add_argument("--budget", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_relabel)

    def scoring_flags(p, early_stop: bool) -> None:
        p.add_argument("--budget", type=int, default=32, help="evaluations per state")
        p.add_argument("--top-k", type=int, default=5)
        if early_stop:
            p.add_argument("--threshold", type=int, default=80)
            p.add_argument("--after", type=int, default=200)
            p.add_argument("--no-early-stop", action="store_true")

    p = sub.add_parser("discover", help="sample and score exploration terms")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("uniform", "amaf"), default="uniform")
    p.add_argument("--temperature", type=float, default=5.0)
    p.add_argument("--budget-exprs", type=int)
    p.add_argument("--budget-seconds", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--independent", action="store_true", help="one AMAF table per worker")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-terms", type=int, default=20)
    p.add_argument("--out", required=True)
    scoring_flags(p, early_stop=True)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("eval-term", help="accuracy of given terms on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--term", action="append", required=True, help='prefix text, e.g. "+ pr * * 2 sc sc"')
    p.add_argument("--out")
    scoring_flags(p, early_stop=False)
    p.set_defaults(func=cmd_eval_term)

    p = sub.add_parser("match", help="head-to-head matches over a grid of constants",
                       epilog=ENGINE_SPEC_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--engine-a", required=True)
    p.add_argument("--engine-b", required=True)
    p.add_argument("--evals", type=int, default=32)
    p.add_argument("--games", type=int, help="games per grid cell (default 400)")
    p.add_argument("--openings", type=int, help="number of openings; each is played twice")
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--opening-plies", type=int, default=2)
    p.add_argument("--grid-a", type=_float_list, help="constants for engine A (rows)")
    p.add_argument("--grid-b", type=_float_list, help="constants for engine B (columns)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CommandError as exc:
        print(f"termsearch {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
