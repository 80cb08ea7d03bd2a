"""Sequential Halving over root arms with expression-driven cuts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .exprlang import EvalContext, Expression, evaluate

DEFAULT_LAMBDA = 0.5
DEFAULT_MIN_PRIOR = 0.01


class TraceExhausted(RuntimeError):
    """An arm was asked for more cached evaluations than it stores."""


@dataclass
class RootArm:
    """One root move: its prior and the evaluations drawn for it so far.

    Cached arms replay ``trace`` in order.  Live arms carry a ``sampler``
    that produces the next evaluation on demand (it is appended to the trace).
    """

    id: int
    prior: float
    trace: list[float] = field(default_factory=list)
    consumed: int = 0
    sampler: Callable[[], float] | None = None
    prefix_sums: list[float] = field(default_factory=lambda: [0.0])

    def __post_init__(self) -> None:
        self.trace = list(self.trace)
        if len(self.prefix_sums) != len(self.trace) + 1:
            sums = [0.0]
            for v in self.trace:
                sums.append(sums[-1] + v)
            self.prefix_sums = sums

    @property
    def sc(self) -> float:
        return self.prefix_sums[self.consumed]

    @property
    def q(self) -> float:
        return self.sc / self.consumed if self.consumed else 0.0

    def draw(self, times: int = 1) -> None:
        for _ in range(times):
            if self.consumed == len(self.trace):
                if self.sampler is None:
                    raise TraceExhausted(f"arm {self.id}: all {len(self.trace)} cached evaluations used")
                value = float(self.sampler())
                self.trace.append(value)
                self.prefix_sums.append(self.prefix_sums[-1] + value)
            self.consumed += 1

    def fresh(self) -> RootArm:
        """Copy with nothing consumed, sharing the immutable cached data."""
        return RootArm(self.id, self.prior, self.trace, 0, self.sampler, list(self.prefix_sums))


@dataclass(frozen=True)
class HalvingSchedule:
    rounds: tuple[tuple[int, int], ...]  # (samples per arm, arms in round)

    @property
    def total_consumed(self) -> int:
        return sum(t * n for t, n in self.rounds)

    @property
    def per_arm_max(self) -> int:
        """Evaluations drawn from an arm that survives every round."""
        return sum(t for t, _ in self.rounds)


def survivors_count(n: int, lam: float = DEFAULT_LAMBDA) -> int:
    # clamp so every cut makes progress whatever lambda is
    return max(1, min(n - 1, math.ceil(lam * n)))


def sh_schedule(budget: int, n: int, lam: float = DEFAULT_LAMBDA) -> HalvingSchedule:
    """Round plan of Sequential Halving for ``n`` arms and ``budget`` samples.

    >>> sh_schedule(32, 8).rounds
    ((1, 8), (3, 4), (6, 2))
    """
    if n < 1:
        raise ValueError("need at least one arm")
    if not 0 < lam < 1:
        raise ValueError("cutting ratio must be in (0, 1)")
    if budget < n:
        raise ValueError(f"budget {budget} cannot sample each of {n} arms once")
    sizes = [n]
    while sizes[-1] > 1:
        sizes.append(survivors_count(sizes[-1], lam))
    n_rounds = len(sizes) - 1
    remaining = budget
    rounds = []
    for r in range(n_rounds):
        t = remaining // (sizes[r] * (n_rounds - r))
        remaining -= t * sizes[r]
        rounds.append((t, sizes[r]))
    return HalvingSchedule(tuple(rounds))


def select_survivors(arms: Sequence[RootArm], lam: float, term: Expression, nb_total: float) -> list[RootArm]:
    """Keep the arms that maximize ``term``, picked greedily by repeated argmax.

    The first maximum wins ties.  Survivors are returned in their input order.
    """
    scores = [evaluate(term, EvalContext(a.sc, a.prior, a.consumed, nb_total)) for a in arms]
    keep = survivors_count(len(arms), lam) if len(arms) > 1 else 1
    chosen: set[int] = set()
    for _ in range(keep):
        best, best_score = -1, -math.inf
        for j, s in enumerate(scores):
            if j not in chosen and s > best_score:
                best, best_score = j, s
        chosen.add(best)
    return [a for j, a in enumerate(arms) if j in chosen]


def run_sequential_halving(
    arms: Sequence[RootArm], budget: int, term: Expression, lam: float = DEFAULT_LAMBDA
) -> RootArm:
    """Sequential Halving whose cuts rank arms by ``term``.

    ``nb`` in the term's context is the number of evaluations drawn so far
    across all arms.  The arms' ``consumed`` counters are advanced in place.
    """
    survivors = list(arms)
    if len(survivors) == 1:
        return survivors[0]
    schedule = sh_schedule(budget, len(survivors), lam)
    nb = sum(a.consumed for a in survivors)
    for t, _ in schedule.rounds:
        for arm in survivors:
            arm.draw(t)
        nb += t * len(survivors)
        survivors = select_survivors(survivors, lam, term, nb)
    return survivors[0]


def filter_top_prior(arms: Sequence[RootArm], k: int, min_prior: float = DEFAULT_MIN_PRIOR) -> list[RootArm]:
    """The ``k`` highest-prior arms with prior >= ``min_prior``, by descending prior."""
    if k < 1:
        raise ValueError("k must be >= 1")
    passing = [a for a in arms if a.prior >= min_prior]
    if not passing:
        raise ValueError(f"no arm has a prior >= {min_prior}")
    passing.sort(key=lambda a: -a.prior)  # stable: index order among equal priors
    return passing[:k]


def qtilde(q: float, standard_amaf: float, n_root_a: int, c: float) -> float:
    """SHUSS score Q + C * StandardAMAF(a) / N(root, a)."""
    if n_root_a < 1:
        raise ValueError("N(root, a) must be >= 1")
    return q + c * standard_amaf / n_root_a
