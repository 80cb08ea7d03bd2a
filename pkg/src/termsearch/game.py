"""Deterministic hash-valued game trees (P-game style) standing in for a real game.

Every node of a uniform tree (branching ``B``, ``D`` plies) draws a number in
[0, 1) from SplitMix64 folded along its path (:func:`hash_value`).  The value
of a node is the mean of the draws on the path from the root to it, read from
the first player's point of view, so interior values carry information about
the leaves below them.  A finished game is a first-player win when its
terminal value is >= 0.5.  Values handed to search are always from the point
of view of the player to move at the node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

MASK64 = (1 << 64) - 1
PRIOR_TEMPERATURE = 0.3
LOOKAHEAD = 2
ORACLE_MAX_LEAVES = 10**7


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _step(state: int, index: int) -> int:
    return splitmix64(state ^ (index + 1))


def _unit(state: int) -> float:
    return (state >> 11) / 9007199254740992.0  # 2**53


def fold_path(seed: int, path) -> int:
    state = splitmix64(seed & MASK64)
    for index in path:
        state = _step(state, index)
    return state


def hash_value(seed: int, path) -> float:
    """Draw in [0, 1) of the node reached by ``path`` in tree ``seed``."""
    return _unit(fold_path(seed, path))


def _fold_total(seed: int, path) -> tuple[int, float]:
    state = splitmix64(seed & MASK64)
    total = _unit(state)
    for index in path:
        state = _step(state, index)
        total += _unit(state)
    return state, total


def node_value(seed: int, path) -> float:
    """First-player value of a node: mean of the draws from the root down to it."""
    _, total = _fold_total(seed, path)
    return total / (len(path) + 1)


@dataclass(frozen=True)
class PGameState:
    seed: int
    branching: int
    depth: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(self.path) > self.depth:
            raise ValueError("path longer than the tree depth")
        if any(not 0 <= i < self.branching for i in self.path):
            raise ValueError(f"move index out of range in {self.path}")

    @property
    def to_move(self) -> int:
        return len(self.path) % 2

    @property
    def is_terminal(self) -> bool:
        return len(self.path) == self.depth

    def play(self, move: int) -> PGameState:
        if self.is_terminal:
            raise ValueError("no moves from a terminal state")
        return PGameState(self.seed, self.branching, self.depth, self.path + (move,))

    def first_player_value(self) -> float:
        return node_value(self.seed, self.path)


def _negamax(state: int, total: float, ply: int, remaining: int, branching: int, depth: int) -> float:
    """Negamax value for the player to move; ``total`` sums the draws down to this node."""
    if remaining == 0 or ply == depth:
        v = total / (ply + 1)
        return v if ply % 2 == 0 else 1.0 - v
    best = -math.inf
    for i in range(branching):
        child = _step(state, i)
        v = 1.0 - _negamax(child, total + _unit(child), ply + 1, remaining - 1, branching, depth)
        if v > best:
            best = v
    return best


def softmax(values, temperature: float) -> tuple[float, ...]:
    top = max(values)
    weights = [math.exp((v - top) / temperature) for v in values]
    z = sum(weights)
    return tuple(w / z for w in weights)


@lru_cache(maxsize=1 << 20)
def heuristic_eval(state: PGameState) -> tuple[float, tuple[float, ...]]:
    """(value for the player to move, priors over the children).

    The value is a depth-2 negamax with frontier nodes valued by
    :func:`node_value`.  A child's prior is a softmax (temperature 0.3) of
    its depth-1 negamax value seen from the mover's side, so the policy
    favours the move the value lookahead likes best.  Terminal states get
    their own value and no priors.
    """
    node, total = _fold_total(state.seed, state.path)
    ply = len(state.path)
    if state.is_terminal:
        return _negamax(node, total, ply, 0, state.branching, state.depth), ()
    child_values = []
    for i in range(state.branching):
        child = _step(node, i)
        child_values.append(
            1.0 - _negamax(child, total + _unit(child), ply + 1, LOOKAHEAD - 1, state.branching, state.depth)
        )
    return max(child_values), softmax(child_values, PRIOR_TEMPERATURE)


def negamax_oracle(state: PGameState) -> float:
    """Exact game value for the player to move (full-tree negamax)."""
    remaining = state.depth - len(state.path)
    if state.branching**remaining > ORACLE_MAX_LEAVES:
        raise ValueError(f"tree too large for the oracle: {state.branching}^{remaining} leaves")
    node, total = _fold_total(state.seed, state.path)
    return _negamax(node, total, len(state.path), remaining, state.branching, state.depth)


def optimal_moves(state: PGameState) -> list[int]:
    """Moves achieving the exact negamax value (test oracle)."""
    values = [1.0 - negamax_oracle(state.play(i)) for i in range(state.branching)]
    best = max(values)
    return [i for i, v in enumerate(values) if v == best]
