"""Head-to-head matches between search engines on synthetic games."""

from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .exprlang import Expression, ExpressionError, canonical_key, parse_prefix
from .game import PGameState, heuristic_eval
from .mcts import puct_search, shuss_move

ENGINE_KINDS = ("puct", "puct+term", "shuss")

ENGINE_SPEC_HELP = """\
Engine specs are KIND:key=value,key=value,...
  puct:c=0.2                                   plain PUCT with constant c
  puct+term:c_e=0.15,term="/ 1 log + sc nb"    PUCT (constant c_e) plus a root term
                                               (optional weight=, multiplies the term)
  shuss:c_s=0.2,k=5,term="+ pr * * 2 sc sc"    Sequential Halving on the k best-prior
                                               moves, inner PUCT constant c_s
Every kind accepts evals=N to override the per-move evaluation budget.
Terms use the prefix grammar (whitespace-separated tokens)."""


@dataclass(frozen=True)
class EngineSpec:
    kind: str
    c: float = 0.2
    term: Expression | None = None
    k: int = 5
    weight: float = 1.0
    evals: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ENGINE_KINDS:
            raise ValueError(f"unknown engine kind {self.kind!r}")
        if self.kind != "puct" and self.term is None:
            raise ValueError(f"engine {self.kind!r} needs a term")

    def with_constant(self, c: float) -> EngineSpec:
        return replace(self, c=c)

    def describe(self) -> str:
        if self.kind == "puct":
            return f"puct:c={self.c:g}"
        key = "c_e" if self.kind == "puct+term" else "c_s"
        extra = f",k={self.k}" if self.kind == "shuss" else ""
        return f'{self.kind}:{key}={self.c:g}{extra},term="{canonical_key(self.term)}"'

    def choose(self, state: PGameState, evals: int) -> int:
        evals = self.evals or evals
        if self.kind == "shuss":
            return shuss_move(state, evals, self.k, self.c, self.term)
        term = self.term if self.kind == "puct+term" else None
        move, _ = puct_search(state, evals, self.c, term, self.weight)
        return move


_SPEC_ITEM = re.compile(r'\s*(\w+)\s*=\s*("[^"]*"|\'[^\']*\'|[^,]*)\s*(?:,|$)')
_CONSTANT_KEYS = {"puct": "c", "puct+term": "c_e", "shuss": "c_s"}


def parse_engine_spec(text: str) -> EngineSpec:
    kind, sep, rest = text.partition(":")
    kind = kind.strip()
    if not sep or kind not in ENGINE_KINDS:
        raise ValueError(f"malformed engine spec {text!r}; expected one of {', '.join(ENGINE_KINDS)}")
    values: dict[str, str] = {}
    pos = 0
    while pos < len(rest):
        m = _SPEC_ITEM.match(rest, pos)
        if not m or m.end() == pos:
            raise ValueError(f"malformed engine spec {text!r} near {rest[pos:]!r}")
        values[m.group(1)] = m.group(2).strip().strip("\"'")
        pos = m.end()
    allowed = {_CONSTANT_KEYS[kind], "evals"}
    if kind != "puct":
        allowed |= {"term"}
    if kind == "puct+term":
        allowed |= {"weight"}
    if kind == "shuss":
        allowed |= {"k"}
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"engine {kind!r} does not take {', '.join(sorted(unknown))}")
    try:
        kwargs: dict = {"kind": kind}
        if _CONSTANT_KEYS[kind] in values:
            kwargs["c"] = float(values[_CONSTANT_KEYS[kind]])
        if "term" in values:
            kwargs["term"] = parse_prefix(values["term"])
        if "k" in values:
            kwargs["k"] = int(values["k"])
        if "weight" in values:
            kwargs["weight"] = float(values["weight"])
        if "evals" in values:
            kwargs["evals"] = int(values["evals"])
        return EngineSpec(**kwargs)
    except ExpressionError as exc:
        raise ValueError(f"engine spec {text!r}: {exc}") from exc


def make_openings(
    count: int,
    branching: int = 4,
    depth: int = 8,
    plies: int = 2,
    seed: int = 0,
    balance: float = 0.1,
    max_tries: int = 50,
) -> list[PGameState]:
    """Book openings: ``plies`` moves sampled from the heuristic policy on fresh trees.

    An opening is kept when its heuristic value is within ``balance`` of 0.5;
    after ``max_tries`` rejections the last candidate is kept anyway.
    """
    if plies >= depth:
        raise ValueError("openings must leave moves to play")
    rng = np.random.default_rng(seed)
    openings = []
    for _ in range(count):
        for _ in range(max_tries):
            state = PGameState(int(rng.integers(0, 2**63)), branching, depth)
            for _ in range(plies):
                _, priors = heuristic_eval(state)
                state = state.play(int(rng.choice(branching, p=priors)))
            value, _ = heuristic_eval(state)
            if abs(value - 0.5) <= balance:
                break
        openings.append(state)
    return openings


@dataclass(frozen=True)
class GameRecord:
    seed: int
    opening: tuple[int, ...]
    moves: tuple[int, ...]
    a_player: int  # game player (0 moves first) engine A controlled
    first_player_value: float

    @property
    def first_player_won(self) -> bool:
        return self.first_player_value >= 0.5

    @property
    def a_won(self) -> bool:
        return self.first_player_won == (self.a_player == 0)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "opening": list(self.opening),
            "moves": list(self.moves),
            "a_player": self.a_player,
            "value": self.first_player_value,
            "a_won": self.a_won,
        }


@dataclass
class MatchConfig:
    engine_a: EngineSpec
    engine_b: EngineSpec
    openings: Sequence[PGameState]
    evals: int = 32
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.openings:
            raise ValueError("need at least one opening")
        if self.evals < 1:
            raise ValueError("evals must be >= 1")


@dataclass
class MatchResult:
    wins: int
    games: int
    ci_low: float
    ci_high: float
    records: list[GameRecord] = field(default_factory=list)

    @property
    def winrate(self) -> float:
        return self.wins / self.games


def play_game(engine_a: EngineSpec, engine_b: EngineSpec, opening: PGameState, a_player: int, evals: int) -> GameRecord:
    state = opening
    moves = []
    while not state.is_terminal:
        engine = engine_a if state.to_move == a_player else engine_b
        move = engine.choose(state, evals)
        moves.append(move)
        state = state.play(move)
    return GameRecord(opening.seed, opening.path, tuple(moves), a_player, state.first_player_value())


def _play_job(args) -> GameRecord:
    return play_game(*args)


def play_match(config: MatchConfig) -> MatchResult:
    """Play every opening twice, engine A taking each side once.

    Returns engine A's wins with a 95% Wilson interval and all game records.
    """
    jobs = [
        (config.engine_a, config.engine_b, opening, a_player, config.evals)
        for opening in config.openings
        for a_player in (0, 1)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            records = list(pool.map(_play_job, jobs, chunksize=4))
    else:
        records = [_play_job(job) for job in jobs]
    wins = sum(r.a_won for r in records)
    ci = binomtest(wins, len(records)).proportion_ci(0.95, method="wilson")
    return MatchResult(wins, len(records), float(ci.low), float(ci.high), records)


def play_grid(
    engine_a: EngineSpec,
    engine_b: EngineSpec,
    grid_a: Sequence[float],
    grid_b: Sequence[float],
    openings: Sequence[PGameState],
    evals: int = 32,
    workers: int = 1,
) -> list[list[MatchResult]]:
    """Winrates of engine B against engine A over a grid of their constants.

    Rows follow ``grid_a`` (engine A's constant), columns ``grid_b``; each cell is
    reported from engine B's side, matching the usual "discovered term vs PUCT"
    layout where A is the baseline.
    """
    table = []
    for ca in grid_a:
        row = []
        for cb in grid_b:
            cfg = MatchConfig(engine_b.with_constant(cb), engine_a.with_constant(ca), openings, evals, workers)
            row.append(play_match(cfg))
        table.append(row)
    return table
