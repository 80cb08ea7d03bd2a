"""PUCT search with an optional root exploration term, and SHUSS root selection.

Values live in [0, 1] and are stored from the point of view of the player
to move at the node owning the statistics; backup flips ``v -> 1 - v`` per ply.
Unvisited children have Q = 0.
"""

from __future__ import annotations

import math
from typing import Optional

from .bandits import DEFAULT_MIN_PRIOR, RootArm, filter_top_prior, run_sequential_halving
from .exprlang import EvalContext, Expression, evaluate
from .game import PGameState, heuristic_eval


def puct_score(q: float, prior: float, n_parent: float, n_a: float, c: float) -> float:
    return q + c * prior * math.sqrt(n_parent) / (1 + n_a)


def augmented_root_score(
    q: float,
    prior: float,
    n_parent: float,
    n_a: float,
    c_e: float,
    term: Expression,
    ctx: EvalContext,
    weight: float = 1.0,
) -> float:
    """PUCT score plus ``weight * term(ctx)``; only meant for the root node."""
    return puct_score(q, prior, n_parent, n_a, c_e) + weight * evaluate(term, ctx)


class SearchNode:
    __slots__ = ("state", "value", "priors", "visits", "child_visits", "child_values", "children")

    def __init__(self, state: PGameState):
        self.state = state
        self.value, self.priors = heuristic_eval(state)
        self.visits = 1
        n = len(self.priors)
        self.child_visits = [0] * n
        self.child_values = [0.0] * n
        self.children: list[Optional[SearchNode]] = [None] * n

    @property
    def is_terminal(self) -> bool:
        return not self.priors

    def q(self, a: int) -> float:
        n = self.child_visits[a]
        return self.child_values[a] / n if n else 0.0


class PuctSearch:
    """An incremental PUCT tree; each :meth:`descend` is one evaluation.

    The first call creates and evaluates the root.  Every call returns the
    evaluation it produced, backed up to the root player's point of view.
    """

    def __init__(
        self,
        state: PGameState,
        c: float,
        root_term: Expression | None = None,
        term_weight: float = 1.0,
    ):
        self.state = state
        self.c = c
        self.root_term = root_term
        self.term_weight = term_weight
        self.root: SearchNode | None = None

    def _select(self, node: SearchNode, at_root: bool) -> int:
        sqrt_n = math.sqrt(node.visits)
        use_term = at_root and self.root_term is not None
        best, best_score = 0, -math.inf
        for a, prior in enumerate(node.priors):
            n_a = node.child_visits[a]
            w = node.child_values[a]
            score = (w / n_a if n_a else 0.0) + self.c * prior * sqrt_n / (1 + n_a)
            if use_term:
                ctx = EvalContext(w, prior, n_a, node.visits)
                score += self.term_weight * evaluate(self.root_term, ctx)
            if score > best_score:
                best, best_score = a, score
        return best

    def descend(self) -> float:
        if self.root is None:
            self.root = SearchNode(self.state)
            return self.root.value
        node = self.root
        if node.is_terminal:
            node.visits += 1
            return node.value
        edges = []
        while True:
            a = self._select(node, not edges)
            edges.append((node, a))
            child = node.children[a]
            if child is None:
                child = node.children[a] = SearchNode(node.state.play(a))
                break
            if child.is_terminal:
                child.visits += 1
                break
            node = child
        v = child.value
        for parent, a in reversed(edges):
            v = 1.0 - v
            parent.child_values[a] += v
            parent.child_visits[a] += 1
            parent.visits += 1
        return v

    def best_move(self) -> int:
        """Most visited root move; ties go to the higher prior, then the lower index."""
        root = self.root
        return max(range(len(root.priors)), key=lambda a: (root.child_visits[a], root.priors[a], -a))


def puct_search(
    root: PGameState,
    budget: int,
    c: float,
    root_term: Expression | None = None,
    term_weight: float = 1.0,
) -> tuple[int, SearchNode]:
    """Run ``budget`` evaluations of PUCT from ``root``; return (move, root node)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if root.is_terminal:
        raise ValueError("cannot search from a terminal state")
    search = PuctSearch(root, c, root_term, term_weight)
    for _ in range(budget):
        search.descend()
    return search.best_move(), search.root


def arm_sampler(state: PGameState, move: int, c: float):
    """Successive one-evaluation PUCT calls below ``move``, seen from the mover's side."""
    search = PuctSearch(state.play(move), c)
    return lambda: 1.0 - search.descend()


def shuss_move(
    root: PGameState,
    budget: int,
    k: int,
    c_s: float,
    term: Expression,
    min_prior: float = DEFAULT_MIN_PRIOR,
) -> int:
    """Sequential Halving over the ``k`` best-prior root moves, cut by ``term``.

    Sampling an arm once is one further PUCT evaluation (constant ``c_s``)
    in that move's own subtree.
    """
    if root.is_terminal:
        raise ValueError("cannot search from a terminal state")
    _, priors = heuristic_eval(root)
    arms = [RootArm(a, p, sampler=arm_sampler(root, a, c_s)) for a, p in enumerate(priors)]
    arms = filter_top_prior(arms, k, min_prior)
    if len(arms) < 2:
        return arms[0].id
    return run_sequential_halving(arms, budget, term).id
