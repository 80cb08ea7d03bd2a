"""Cached-search datasets and fast scoring of candidate exploration terms.

Each record is a position with, for every qualifying root move, its prior and
the sequence of evaluations that successive one-evaluation PUCT calls below
the move returned.  Sequential Halving can then be replayed over those traces
for any term without running the search again.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bandits import (
    DEFAULT_LAMBDA,
    DEFAULT_MIN_PRIOR,
    RootArm,
    filter_top_prior,
    run_sequential_halving,
    sh_schedule,
    survivors_count,
)
from .exprlang import Expression, canonical_key, evaluate_array, parse_prefix, to_infix
from .game import PGameState, heuristic_eval
from .mcts import PuctSearch, puct_search

logger = logging.getLogger(__name__)

FORMAT_NAME = "termsearch-dataset"
FORMAT_VERSION = 1
DEFAULT_TRACE_LEN = 38
SC_TERM = parse_prefix("sc")


@dataclass(frozen=True)
class CachedArm:
    move: int
    prior: float
    evals: tuple[float, ...]


@dataclass(frozen=True)
class CachedState:
    state_id: str
    seed: int
    branching: int
    depth: int
    path: tuple[int, ...]
    arms: tuple[CachedArm, ...]
    label: int

    def root_arms(self) -> list[RootArm]:
        return [RootArm(a.move, a.prior, list(a.evals)) for a in self.arms]

    def to_json(self) -> dict:
        return {
            "state_id": self.state_id,
            "tree": {"seed": self.seed, "branching": self.branching, "depth": self.depth, "path": list(self.path)},
            "label": self.label,
            "arms": [{"move": a.move, "prior": a.prior, "evals": list(a.evals)} for a in self.arms],
        }

    @classmethod
    def from_json(cls, obj: dict) -> CachedState:
        tree = obj["tree"]
        arms = tuple(CachedArm(int(a["move"]), float(a["prior"]), tuple(map(float, a["evals"]))) for a in obj["arms"])
        return cls(
            obj["state_id"], int(tree["seed"]), int(tree["branching"]), int(tree["depth"]),
            tuple(tree["path"]), arms, int(obj["label"]),
        )


@dataclass
class Dataset:
    trace_len: int
    states: list[CachedState]
    params: dict = field(default_factory=dict)
    _prepared: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.states)

    def header(self) -> dict:
        return {"format": FORMAT_NAME, "version": FORMAT_VERSION, "trace_len": self.trace_len, "params": self.params}

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(s.to_json(), sort_keys=True) for s in self.states]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> Dataset:
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("format") != FORMAT_NAME:
                raise ValueError(f"{path}: not a {FORMAT_NAME} file")
            if header.get("version") != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported format version {header.get('version')}")
            states = [CachedState.from_json(json.loads(line)) for line in fh if line.strip()]
        return cls(int(header["trace_len"]), states, header.get("params", {}))

    def with_labels(self, labels: Sequence[int], **params) -> Dataset:
        states = [replace(s, label=lab) for s, lab in zip(self.states, labels)]
        return Dataset(self.trace_len, states, {**self.params, **params})


# ---------------------------------------------------------------------------
# generation


def replay_feasible(n_arms: int, budget: int, trace_len: int, lam: float = DEFAULT_LAMBDA) -> bool:
    if n_arms < 2:
        return True
    if budget < n_arms:
        return False
    return sh_schedule(budget, n_arms, lam).per_arm_max <= trace_len


def arm_trace(state: PGameState, move: int, length: int, c: float) -> tuple[float, ...]:
    """``length`` successive one-evaluation PUCT calls below ``move``, from the mover's side."""
    search = PuctSearch(state.play(move), c)
    return tuple(1.0 - search.descend() for _ in range(length))


def generate_dataset(
    state_count: int,
    branching: int = 8,
    depth: int = 8,
    trace_len: int = DEFAULT_TRACE_LEN,
    c_inner: float = 0.2,
    label_budget: int = 512,
    opening_plies: int = 2,
    seed: int = 0,
    min_prior: float = DEFAULT_MIN_PRIOR,
    replay_budget: int | None = None,
    label_mode: str = "puct",
) -> Dataset:
    """Sample positions and cache one evaluation trace per qualifying root move.

    Positions come from ``opening_plies`` moves of the heuristic policy on
    fresh trees.  With ``label_mode="puct"`` labels are the moves of a PUCT
    search with ``label_budget`` evaluations; with ``"sh"`` they come from
    :func:`relabel_curriculum` at that budget.  Positions with fewer than two
    moves of prior >= ``min_prior`` (or, when ``replay_budget`` is set, whose
    arm count cannot replay that Sequential Halving budget from ``trace_len``
    evaluations) are resampled.
    """
    if label_mode not in ("puct", "sh"):
        raise ValueError(f"unknown label mode {label_mode!r}")
    if label_mode == "sh":
        replay_budget = label_budget if replay_budget is None else max(replay_budget, label_budget)
    if state_count < 1:
        raise ValueError("state_count must be >= 1")
    if trace_len < 32:
        raise ValueError("trace_len must be >= 32")
    if opening_plies >= depth:
        raise ValueError("opening_plies must be smaller than depth")
    rng = np.random.default_rng(seed)
    states: list[CachedState] = []
    skipped = 0
    while len(states) < state_count:
        position = PGameState(int(rng.integers(0, 2**63)), branching, depth)
        for _ in range(opening_plies):
            _, priors = heuristic_eval(position)
            position = position.play(int(rng.choice(branching, p=priors)))
        _, priors = heuristic_eval(position)
        qualifying = sorted((a for a in range(branching) if priors[a] >= min_prior), key=lambda a: -priors[a])
        if len(qualifying) < 2 or (
            replay_budget is not None and not replay_feasible(len(qualifying), replay_budget, trace_len)
        ):
            skipped += 1
            continue
        if label_mode == "puct":
            label, _ = puct_search(position, label_budget, c_inner)
        else:
            label = qualifying[0]  # placeholder until the relabel pass below
        if label not in qualifying:
            skipped += 1
            continue
        arms = tuple(CachedArm(a, priors[a], arm_trace(position, a, trace_len, c_inner)) for a in qualifying)
        states.append(
            CachedState(f"s{len(states):05d}", position.seed, branching, depth, position.path, arms, label)
        )
    attempts = state_count + skipped
    logger.info("generated %d states, skipped %d of %d positions (%.1f%%)",
                state_count, skipped, attempts, 100.0 * skipped / attempts)
    params = {
        "state_count": state_count, "branching": branching, "depth": depth, "trace_len": trace_len,
        "c_inner": c_inner, "label_budget": label_budget, "opening_plies": opening_plies, "seed": seed,
        "min_prior": min_prior, "replay_budget": replay_budget, "skipped": skipped,
        "label_mode": label_mode, "label_source": f"puct-{label_budget}",
    }
    dataset = Dataset(trace_len, states, params)
    if label_mode == "sh":
        dataset = relabel_curriculum(dataset, label_budget)
    return dataset


def relabel_curriculum(dataset: Dataset, sh_budget: int, lam: float = DEFAULT_LAMBDA) -> Dataset:
    """Relabel every state with the winner of plain Sequential Halving (term ``sc``)."""
    for s in dataset.states:
        if not replay_feasible(len(s.arms), sh_budget, dataset.trace_len, lam):
            raise ValueError(
                f"state {s.state_id}: Sequential Halving with budget {sh_budget} over {len(s.arms)} arms "
                f"needs more than the {dataset.trace_len} cached evaluations per arm"
            )
    labels = [run_sequential_halving(s.root_arms(), sh_budget, SC_TERM, lam).id for s in dataset.states]
    return dataset.with_labels(labels, label_source=f"sh-{sh_budget}")


# ---------------------------------------------------------------------------
# scoring


@dataclass(frozen=True)
class ScoringPolicy:
    budget: int = 32
    early_stop_threshold: int = 80
    early_stop_after: int = 200
    top_k: int = 5
    min_prior: float = DEFAULT_MIN_PRIOR
    early_stop: bool = True
    lam: float = DEFAULT_LAMBDA

    def without_early_stop(self) -> ScoringPolicy:
        return replace(self, early_stop=False)


@dataclass(frozen=True)
class ScoreEntry:
    hits: int
    stopped: bool  # True when the count is a partial, early-stopped one


class ScoreCache:
    """Scores keyed by canonical term text; one cache per (dataset, policy).

    Plain dict operations are atomic under the GIL, so concurrent workers may
    read and insert freely; a race only duplicates work.
    """

    def __init__(self) -> None:
        self._scores: dict[str, ScoreEntry] = {}
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> ScoreEntry | None:
        entry = self._scores.get(key)
        if entry is None:
            self.misses += 1
        else:
            self.hits += 1
        return entry

    def put(self, key: str, entry: ScoreEntry) -> None:
        self._scores[key] = entry

    def items(self) -> list[tuple[str, ScoreEntry]]:
        return list(self._scores.items())

    def __len__(self) -> int:
        return len(self._scores)

    def __contains__(self, key: str) -> bool:
        return key in self._scores


@dataclass
class _ArmGroup:
    """States sharing an arm count, stacked for vectorized replay."""

    n_arms: int
    priors: np.ndarray  # (S, n)
    prefix: np.ndarray  # (S, n, K + 1)
    label_pos: np.ndarray  # (S,), -1 when the label is not among the arms


def _restrict(state: CachedState, policy: ScoringPolicy) -> list[RootArm]:
    return filter_top_prior(state.root_arms(), policy.top_k, policy.min_prior)


def _group_states(states: Iterable[CachedState], policy: ScoringPolicy) -> list[_ArmGroup]:
    buckets: dict[int, list] = {}
    for s in states:
        arms = _restrict(s, policy)
        ids = [a.id for a in arms]
        buckets.setdefault(len(arms), []).append(
            ([a.prior for a in arms], [a.prefix_sums for a in arms], ids.index(s.label) if s.label in ids else -1)
        )
    groups = []
    for n, rows in sorted(buckets.items()):
        groups.append(_ArmGroup(
            n,
            np.array([r[0] for r in rows], dtype=np.float64),
            np.array([r[1] for r in rows], dtype=np.float64),
            np.array([r[2] for r in rows], dtype=np.int64),
        ))
    return groups


def _prepared(dataset: Dataset, policy: ScoringPolicy) -> tuple[list[_ArmGroup], list[_ArmGroup]]:
    """Arm groups for the early-stop window and for the remaining states."""
    split = policy.early_stop_after if policy.early_stop and policy.early_stop_after < len(dataset) else len(dataset)
    key = (policy.top_k, policy.min_prior, split)
    cached = dataset._prepared.get(key)
    if cached is None:
        cached = (_group_states(dataset.states[:split], policy), _group_states(dataset.states[split:], policy))
        dataset._prepared[key] = cached
    return cached


def _batch_hits(groups: list[_ArmGroup], term: Expression, policy: ScoringPolicy, trace_len: int) -> int:
    hits = 0
    for g in groups:
        n_states = len(g.label_pos)
        if g.n_arms == 1:
            hits += int(np.count_nonzero(g.label_pos == 0))
            continue
        schedule = sh_schedule(policy.budget, g.n_arms, policy.lam)
        if schedule.per_arm_max > trace_len:
            raise ValueError(
                f"budget {policy.budget} over {g.n_arms} arms needs {schedule.per_arm_max} evaluations per arm, "
                f"traces hold {trace_len}"
            )
        alive = np.tile(np.arange(g.n_arms), (n_states, 1))
        rows = np.arange(n_states)[:, None]
        consumed = nb = 0
        for t, m in schedule.rounds:
            consumed += t
            nb += t * m
            sc = g.prefix[rows, alive, consumed]
            pr = g.priors[rows, alive]
            values = evaluate_array(term, sc, pr, float(consumed), float(nb))
            keep = survivors_count(m, policy.lam)
            # stable sort on the negated values: first maximum wins, like a repeated argmax
            order = np.argsort(-values, axis=1, kind="stable")[:, :keep]
            order.sort(axis=1)
            alive = np.take_along_axis(alive, order, axis=1)
        hits += int(np.count_nonzero(alive[:, 0] == g.label_pos))
    return hits


def _replay_hits(states: Iterable[CachedState], term: Expression, policy: ScoringPolicy) -> int:
    """Reference path: one literal Sequential Halving run per state."""
    hits = 0
    for s in states:
        winner = run_sequential_halving(_restrict(s, policy), policy.budget, term, policy.lam)
        hits += winner.id == s.label
    return hits


def score_term(
    term: Expression,
    dataset: Dataset,
    policy: ScoringPolicy = ScoringPolicy(),
    cache: ScoreCache | None = None,
    method: str = "batch",
) -> ScoreEntry:
    """Count the states whose label Sequential Halving cut by ``term`` recovers.

    With early stopping on, scoring aborts after ``early_stop_after`` states
    when fewer than ``early_stop_threshold`` hits were found, returning that
    partial count flagged as stopped.
    """
    key = canonical_key(term)
    if cache is not None:
        entry = cache.get(key)
        if entry is not None:
            return entry
    if method == "batch":
        head, tail = _prepared(dataset, policy)
        count = lambda groups: _batch_hits(groups, term, policy, dataset.trace_len)  # noqa: E731
    elif method == "replay":
        split = policy.early_stop_after if policy.early_stop and policy.early_stop_after < len(dataset) else len(dataset)
        head, tail = dataset.states[:split], dataset.states[split:]
        count = lambda states: _replay_hits(states, term, policy)  # noqa: E731
    else:
        raise ValueError(f"unknown scoring method {method!r}")
    hits = count(head)
    if tail and hits < policy.early_stop_threshold:
        entry = ScoreEntry(hits, True)
    else:
        entry = ScoreEntry(hits + (count(tail) if tail else 0), False)
    if cache is not None:
        cache.put(key, entry)
    return entry


def score_expression(
    term: Expression,
    dataset: Dataset,
    policy: ScoringPolicy = ScoringPolicy(),
    cache: ScoreCache | None = None,
    method: str = "batch",
) -> int:
    return score_term(term, dataset, policy, cache, method).hits


def make_scorer(dataset: Dataset, policy: ScoringPolicy = ScoringPolicy(), cache: ScoreCache | None = None):
    """Closure suitable for :func:`termsearch.mcs.discover`."""
    cache = ScoreCache() if cache is None else cache

    def scorer(term: Expression) -> int:
        return score_expression(term, dataset, policy, cache)

    scorer.cache = cache  # type: ignore[attr-defined]
    return scorer


@dataclass(frozen=True)
class AccuracyRow:
    term: str
    infix: str
    hits: int
    states: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.hits / self.states if self.states else 0.0


def accuracy_report(terms: Sequence[Expression], dataset: Dataset, policy: ScoringPolicy = ScoringPolicy()) -> list[AccuracyRow]:
    """Full (never early-stopped) accuracy of each term, in input order."""
    policy = policy.without_early_stop()
    return [
        AccuracyRow(canonical_key(t), to_infix(t), score_expression(t, dataset, policy), len(dataset))
        for t in terms
    ]


def format_report(rows: Sequence[AccuracyRow]) -> str:
    width = max([len("term")] + [len(r.infix) for r in rows])
    lines = [f"{'term':<{width}}  accuracy  hits/states"]
    for r in rows:
        lines.append(f"{r.infix:<{width}}  {r.accuracy:7.2f}%  {r.hits}/{r.states}")
    return "\n".join(lines)
