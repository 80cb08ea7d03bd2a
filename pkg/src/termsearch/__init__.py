"""Sampling-based discovery of root exploration terms for PUCT and SHUSS."""

__version__ = "0.1.0"

from .bandits import RootArm, filter_top_prior, qtilde, run_sequential_halving, select_survivors, sh_schedule
from .dataset import (
    Dataset,
    ScoreCache,
    ScoringPolicy,
    accuracy_report,
    generate_dataset,
    relabel_curriculum,
    score_expression,
)
from .exprlang import (
    ATOMS,
    EvalContext,
    Expression,
    ExpressionError,
    canonical_key,
    evaluate,
    is_complete,
    legal_atoms,
    parse_infix,
    parse_prefix,
    push_atom,
    to_infix,
)
from .game import PGameState, hash_value, heuristic_eval, negamax_oracle
from .mcs import AmafTable, DiscoveryConfig, amaf_playout, amaf_probabilities, discover, uniform_playout, update_amaf
from .mcts import augmented_root_score, puct_score, puct_search, shuss_move
