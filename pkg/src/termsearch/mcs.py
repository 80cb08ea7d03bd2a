"""Monte Carlo sampling of expressions, AMAF statistics and the discovery loop."""

from __future__ import annotations

import bisect
import itertools
import logging
import math
import random
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exprlang import (
    ATOMS,
    ATOM_INDEX,
    DEFAULT_MAX_LEN,
    Atom,
    Expression,
    ExpressionError,
    legal_atoms_for,
)

logger = logging.getLogger(__name__)

UNIFORM_EPS = 1e-12


@dataclass
class AmafTable:
    """All-moves-as-first statistics over expression playouts.

    An atom's statistics count every playout that contains it, once per
    playout however often it occurs there.
    """

    total_playouts: int = 0
    total_score: float = 0.0
    counts: list[int] = field(default_factory=lambda: [0] * len(ATOMS))
    score_sums: list[float] = field(default_factory=lambda: [0.0] * len(ATOMS))
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def per_atom(self, atom: Atom) -> tuple[int, float]:
        i = ATOM_INDEX[atom]
        return self.counts[i], self.score_sums[i]

    def mean(self) -> float:
        return self.total_score / self.total_playouts if self.total_playouts else 0.0

    def deviations(self) -> list[float]:
        """mu_a: each atom's mean playout score minus the global mean (0 if unseen)."""
        if not self.total_playouts:
            return [0.0] * len(ATOMS)
        mu = self.total_score / self.total_playouts
        return [s / c - mu if c else 0.0 for c, s in zip(self.counts, self.score_sums)]


def update_amaf(table: AmafTable, expr: Expression, score: float) -> AmafTable:
    if expr.open_leaves != 0:
        raise ExpressionError("update_amaf needs a complete expression")
    distinct = {ATOM_INDEX[a] for a in expr.tokens}
    with table._lock:
        table.total_playouts += 1
        table.total_score += score
        for i in distinct:
            table.counts[i] += 1
            table.score_sums[i] += score
    return table


def amaf_probabilities(table: AmafTable, legal: Sequence[Atom], temperature: float) -> list[float]:
    """Sampling distribution over ``legal`` from AMAF values at temperature tau.

    p_a is proportional to AMAF(a) ** tau = exp(tau * mu_a / maxi), normalized over
    the legal atoms.  Falls back to uniform when there is no signal yet.
    """
    n = len(legal)
    if not n:
        raise ValueError("no legal atoms")
    mus = table.deviations()
    maxi = max(abs(m) for m in mus)
    if maxi <= UNIFORM_EPS:
        return [1.0 / n] * n
    logits = [temperature * mus[ATOM_INDEX[a]] / maxi for a in legal]
    top = max(logits)
    weights = [math.exp(x - top) for x in logits]
    z = sum(weights)
    # floor keeps every legal atom reachable at very high temperatures
    probs = [max(w / z, sys.float_info.min) for w in weights]
    z = sum(probs)
    return [p / z for p in probs]


def uniform_playout(expr: Expression, rng: random.Random) -> Expression:
    """Complete ``expr`` by drawing uniformly among the legal atoms at each step."""
    tokens = list(expr.tokens)
    open_leaves = expr.open_leaves
    max_len = expr.max_len
    while open_leaves:
        legal = legal_atoms_for(len(tokens), open_leaves, max_len)
        atom = legal[rng.randrange(len(legal))]
        tokens.append(atom)
        open_leaves += atom.arity - 1
    return Expression(tuple(tokens), 0, max_len)


def amaf_playout(expr: Expression, rng: random.Random, table: AmafTable, temperature: float) -> Expression:
    tokens = list(expr.tokens)
    open_leaves = expr.open_leaves
    max_len = expr.max_len
    while open_leaves:
        legal = legal_atoms_for(len(tokens), open_leaves, max_len)
        cdf = list(itertools.accumulate(amaf_probabilities(table, legal, temperature)))
        i = bisect.bisect_right(cdf, rng.random() * cdf[-1])
        atom = legal[min(i, len(legal) - 1)]
        tokens.append(atom)
        open_leaves += atom.arity - 1
    return Expression(tuple(tokens), 0, max_len)


@dataclass
class DiscoveryConfig:
    mode: str = "uniform"  # "uniform" | "amaf"
    temperature: float = 5.0
    max_len: int = DEFAULT_MAX_LEN
    worker_count: int = 1
    budget_exprs: int | None = None
    budget_seconds: float | None = None
    seed: int = 0
    shared_table: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("uniform", "amaf"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be finite and positive")
        if self.worker_count < 1 or self.max_len < 1:
            raise ValueError("worker_count and max_len must be >= 1")
        if self.budget_exprs is None and self.budget_seconds is None:
            raise ValueError("set budget_exprs or budget_seconds")
        if self.budget_exprs is not None and self.budget_exprs < 1:
            raise ValueError("budget_exprs must be positive")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ValueError("budget_seconds must be positive")


@dataclass(frozen=True)
class TimelinePoint:
    elapsed: float
    evaluated: int
    score: float
    expression: Expression


@dataclass
class DiscoveryLog:
    best_expression: Expression | None = None
    best_score: float = -math.inf
    evaluated_count: int = 0
    failures: int = 0
    timeline: list[TimelinePoint] = field(default_factory=list)

    def best_at(self, evaluated: int) -> float:
        """Best-so-far score after ``evaluated`` sampled expressions."""
        best = -math.inf
        for point in self.timeline:
            if point.evaluated > evaluated:
                break
            best = point.score
        return best


def worker_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def discover(
    config: DiscoveryConfig,
    scorer: Callable[[Expression], float],
    on_improve: Callable[[TimelinePoint], None] | None = None,
) -> DiscoveryLog:
    """Sample, score and keep the best expression until the budget runs out.

    Workers are threads sharing the best-so-far record and, unless
    ``config.shared_table`` is off, one AMAF table.  A single worker with a
    fixed seed is bit-reproducible; ``elapsed`` timestamps are the only
    non-deterministic field.
    """
    log = DiscoveryLog()
    lock = threading.Lock()
    start = time.perf_counter()
    deadline = None if config.budget_seconds is None else start + config.budget_seconds
    shared = AmafTable()
    issued = 0

    def claim() -> bool:
        nonlocal issued
        with lock:
            if config.budget_exprs is not None and issued >= config.budget_exprs:
                return False
            if deadline is not None and time.perf_counter() >= deadline:
                return False
            issued += 1
            return True

    def work(worker_seed: int) -> None:
        rng = random.Random(worker_seed)
        table = shared if config.shared_table else AmafTable()
        root = Expression.empty(config.max_len)
        while claim():
            if config.mode == "amaf":
                expr = amaf_playout(root, rng, table, config.temperature)
            else:
                expr = uniform_playout(root, rng)
            failed = False
            try:
                score = float(scorer(expr))
            except Exception:  # a broken term must not stop the run
                logger.exception("scorer failed on %s; scoring it 0", expr)
                score, failed = 0.0, True
            if config.mode == "amaf":
                update_amaf(table, expr, score)
            with lock:
                log.evaluated_count += 1
                log.failures += failed
                if score > log.best_score:
                    log.best_score = score
                    log.best_expression = expr
                    point = TimelinePoint(time.perf_counter() - start, log.evaluated_count, score, expr)
                    log.timeline.append(point)
                    if on_improve is not None:
                        on_improve(point)

    seeds = worker_seeds(config.seed, config.worker_count)
    if config.worker_count == 1:
        work(seeds[0])
    else:
        threads = [threading.Thread(target=work, args=(s,), daemon=True) for s in seeds]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    return log
