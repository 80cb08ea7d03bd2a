"""Expression alphabet, incremental generation game and protected evaluation.

Expressions are prefix (preorder) token sequences.  A partial expression
tracks its number of open leaves, i.e. child slots not yet filled, which
bounds how large the finished expression can become.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_MAX_LEN = 12

DIV_EPS = 1e-12
LOG_FLOOR = 1e-12
EXP_CLAMP = 60.0
EQ_RTOL = 1e-9
# results of + - * / saturate here so nothing overflows to inf
SATURATION = 1e300


class ExpressionError(ValueError):
    """Raised on contract violations: illegal atoms, incomplete input, bad text."""


@dataclass(frozen=True)
class Atom:
    symbol: str
    arity: int
    kind: str  # "constant" | "variable" | "operator"
    constant_value: float | None = None

    def __repr__(self) -> str:
        return f"Atom({self.symbol!r})"


CONSTANTS = tuple(Atom(s, 0, "constant", float(s)) for s in ("1", "2", "3", "100"))
VARIABLES = tuple(Atom(s, 0, "variable") for s in ("sc", "pr", "nbp", "nb"))
BINARY_OPS = tuple(Atom(s, 2, "operator") for s in ("+", "-", "*", "/", "=", "max", "min"))
UNARY_OPS = tuple(Atom(s, 1, "operator") for s in ("log", "exp"))

ATOMS: tuple[Atom, ...] = CONSTANTS + VARIABLES + BINARY_OPS + UNARY_OPS
ATOM_BY_SYMBOL = {a.symbol: a for a in ATOMS}
ATOM_INDEX = {a: i for i, a in enumerate(ATOMS)}

# legal atoms depend only on the slack left in the token budget
_BY_MAX_ARITY = tuple(tuple(a for a in ATOMS if a.arity <= k) for k in range(3))


class EvalContext(NamedTuple):
    """Statistics of one candidate move: score sum, prior, its playouts, all playouts."""

    sc: float
    pr: float
    nbp: float
    nb: float


@dataclass(frozen=True)
class Expression:
    tokens: tuple[Atom, ...] = ()
    open_leaves: int = 1
    max_len: int = DEFAULT_MAX_LEN

    @classmethod
    def empty(cls, max_len: int = DEFAULT_MAX_LEN) -> Expression:
        return cls((), 1, max_len)

    @classmethod
    def from_tokens(cls, tokens: Iterable[Atom], max_len: int | None = None) -> Expression:
        tokens = tuple(tokens)
        if max_len is None:
            max_len = max(DEFAULT_MAX_LEN, len(tokens))
        return cls(tokens, count_open_leaves(tokens), max_len)

    def __len__(self) -> int:
        return len(self.tokens)

    def __str__(self) -> str:
        return " ".join(a.symbol for a in self.tokens)


def count_open_leaves(tokens: Sequence[Atom]) -> int:
    """Open leaves recomputed from scratch: 1 + sum(arity - 1)."""
    return 1 + sum(a.arity - 1 for a in tokens)


def is_complete(expr: Expression) -> bool:
    return expr.open_leaves == 0


def legal_atoms(expr: Expression) -> list[Atom]:
    """Atoms that can be appended without overflowing the token budget.

    An atom ``a`` is legal when ``len + open_leaves + arity(a) <= max_len``.
    """
    if expr.open_leaves < 1:
        raise ExpressionError("legal_atoms called on a complete expression")
    slack = expr.max_len - len(expr.tokens) - expr.open_leaves
    if slack < 0:
        raise ExpressionError("expression already exceeds its token budget")
    return list(_BY_MAX_ARITY[min(slack, 2)])


def legal_atoms_for(n_tokens: int, open_leaves: int, max_len: int) -> tuple[Atom, ...]:
    """Tuple form of :func:`legal_atoms` for hot loops working on raw counters."""
    return _BY_MAX_ARITY[min(max_len - n_tokens - open_leaves, 2)]


def push_atom(expr: Expression, atom: Atom) -> Expression:
    if expr.open_leaves < 1:
        raise ExpressionError("cannot push onto a complete expression")
    if len(expr.tokens) + expr.open_leaves + atom.arity > expr.max_len:
        raise ExpressionError(f"atom {atom.symbol!r} is not legal here (max_len={expr.max_len})")
    return Expression(expr.tokens + (atom,), expr.open_leaves - 1 + atom.arity, expr.max_len)


def _require_complete(expr: Expression) -> None:
    if expr.open_leaves != 0:
        raise ExpressionError(f"expression is incomplete ({expr.open_leaves} open leaves): {expr}")


# ---------------------------------------------------------------------------
# protected evaluation


def _sat(x: float) -> float:
    if x > SATURATION:
        return SATURATION
    if x < -SATURATION:
        return -SATURATION
    return x


def _log(x: float) -> float:
    # numpy's log/exp so scalar and batch evaluation agree to the last bit
    return float(np.log(x if x > LOG_FLOOR else LOG_FLOOR))


def _exp(x: float) -> float:
    return float(np.exp(min(max(x, -EXP_CLAMP), EXP_CLAMP)))


def _eq(x: float, y: float) -> float:
    return 1.0 if abs(x - y) <= EQ_RTOL * max(1.0, abs(x), abs(y)) else 0.0


def _div(x: float, y: float) -> float:
    if abs(y) <= DIV_EPS:
        return 0.0
    return _sat(x / y)


_SCALAR_BINARY = {
    "+": lambda x, y: _sat(x + y),
    "-": lambda x, y: _sat(x - y),
    "*": lambda x, y: _sat(x * y),
    "/": _div,
    "=": _eq,
    "max": max,
    "min": min,
}
_SCALAR_UNARY = {"log": _log, "exp": _exp}


def evaluate(expr: Expression, ctx: EvalContext) -> float:
    """Evaluate a complete expression by recursive descent over the prefix form."""
    _require_complete(expr)
    tokens = expr.tokens
    variables = ctx._asdict()
    pos = 0

    def walk() -> float:
        nonlocal pos
        atom = tokens[pos]
        pos += 1
        if atom.arity == 0:
            if atom.constant_value is not None:
                return atom.constant_value
            return float(variables[atom.symbol])
        if atom.arity == 1:
            return _SCALAR_UNARY[atom.symbol](walk())
        left = walk()
        right = walk()
        return _SCALAR_BINARY[atom.symbol](left, right)

    return walk()


def _np_div(x, y):
    guard = np.abs(y) <= DIV_EPS
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = x / np.where(guard, 1.0, y)
    return np.where(guard, 0.0, np.clip(out, -SATURATION, SATURATION))


def _np_eq(x, y):
    tol = EQ_RTOL * np.maximum(np.maximum(np.abs(x), np.abs(y)), 1.0)
    return np.where(np.abs(x - y) <= tol, 1.0, 0.0)


def _np_sat(op):
    def f(x, y):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.clip(op(x, y), -SATURATION, SATURATION)

    return f


_ARRAY_BINARY = {
    "+": _np_sat(np.add),
    "-": _np_sat(np.subtract),
    "*": _np_sat(np.multiply),
    "/": _np_div,
    "=": _np_eq,
    "max": np.maximum,
    "min": np.minimum,
}
_ARRAY_UNARY = {
    "log": lambda x: np.log(np.maximum(x, LOG_FLOOR)),
    "exp": lambda x: np.exp(np.clip(x, -EXP_CLAMP, EXP_CLAMP)),
}


def evaluate_array(expr: Expression, sc, pr, nbp, nb) -> np.ndarray:
    """Vectorized :func:`evaluate`: context fields may be broadcastable arrays.

    Same protected semantics as the scalar path; the result always has the
    broadcast shape of the inputs, even for constant expressions.
    """
    _require_complete(expr)
    variables = {k: np.asarray(v, dtype=np.float64) for k, v in zip(("sc", "pr", "nbp", "nb"), (sc, pr, nbp, nb))}
    shape = np.broadcast_shapes(*(np.shape(v) for v in variables.values()))
    tokens = expr.tokens
    pos = 0

    def walk():
        nonlocal pos
        atom = tokens[pos]
        pos += 1
        if atom.arity == 0:
            if atom.constant_value is not None:
                return atom.constant_value
            return variables[atom.symbol]
        if atom.arity == 1:
            return _ARRAY_UNARY[atom.symbol](walk())
        left = walk()
        right = walk()
        return _ARRAY_BINARY[atom.symbol](left, right)

    return np.broadcast_to(np.asarray(walk(), dtype=np.float64), shape)


# ---------------------------------------------------------------------------
# text forms


def canonical_key(expr: Expression) -> str:
    """Memoization key: the space-joined prefix symbols, no algebraic folding."""
    return " ".join(a.symbol for a in expr.tokens)


to_prefix = canonical_key

_INFIX_SYMBOLS = {"+", "-", "*", "/", "="}


def to_infix(expr: Expression) -> str:
    """Fully parenthesized rendering, e.g. ``(pr + ((2 * sc) * sc))``."""
    _require_complete(expr)
    tokens = expr.tokens
    pos = 0

    def walk() -> str:
        nonlocal pos
        atom = tokens[pos]
        pos += 1
        if atom.arity == 0:
            return atom.symbol
        if atom.arity == 1:
            return f"{atom.symbol}({walk()})"
        left, right = walk(), walk()
        if atom.symbol in _INFIX_SYMBOLS:
            return f"({left} {atom.symbol} {right})"
        return f"{atom.symbol}({left}, {right})"

    return walk()


def parse_prefix(text: str, max_len: int | None = None) -> Expression:
    """Parse whitespace-separated prefix tokens such as ``"+ pr * * 2 sc sc"``."""
    words = text.split()
    if not words:
        raise ExpressionError("empty expression text")
    tokens = []
    open_leaves = 1
    for i, word in enumerate(words):
        atom = ATOM_BY_SYMBOL.get(word)
        if atom is None:
            raise ExpressionError(f"unknown token {word!r} at position {i}")
        if open_leaves == 0:
            raise ExpressionError(f"trailing token {word!r} at position {i} after a complete expression")
        tokens.append(atom)
        open_leaves += atom.arity - 1
    if open_leaves:
        raise ExpressionError(f"incomplete expression {text!r}: {open_leaves} operand(s) missing")
    expr = Expression.from_tokens(tokens, max_len)
    if len(tokens) > expr.max_len:
        raise ExpressionError(f"expression has {len(tokens)} tokens, more than max_len={expr.max_len}")
    return expr


def _lex_infix(text: str) -> list[str]:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "(),+-*/=":
            out.append(ch)
            i += 1
        else:
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] in "._"):
                j += 1
            if j == i:
                raise ExpressionError(f"unexpected character {ch!r} at offset {i}")
            out.append(text[i:j])
            i = j
    return out


def parse_infix(text: str, max_len: int | None = None) -> Expression:
    """Parse the fully parenthesized form produced by :func:`to_infix`."""
    lexemes = _lex_infix(text)
    pos = 0
    tokens: list[Atom] = []

    def expect(s: str) -> None:
        nonlocal pos
        if pos >= len(lexemes) or lexemes[pos] != s:
            got = lexemes[pos] if pos < len(lexemes) else "end of input"
            raise ExpressionError(f"expected {s!r}, got {got!r}")
        pos += 1

    def term() -> None:
        nonlocal pos
        if pos >= len(lexemes):
            raise ExpressionError("unexpected end of input")
        lex = lexemes[pos]
        if lex == "(":
            pos += 1
            slot = len(tokens)
            tokens.append(None)  # type: ignore[arg-type]
            term()
            if pos >= len(lexemes) or lexemes[pos] not in _INFIX_SYMBOLS:
                raise ExpressionError("expected an infix operator")
            tokens[slot] = ATOM_BY_SYMBOL[lexemes[pos]]
            pos += 1
            term()
            expect(")")
            return
        atom = ATOM_BY_SYMBOL.get(lex)
        if atom is None:
            raise ExpressionError(f"unknown token {lex!r}")
        pos += 1
        tokens.append(atom)
        if atom.arity == 0:
            return
        expect("(")
        term()
        if atom.arity == 2:
            expect(",")
            term()
        expect(")")

    term()
    if pos != len(lexemes):
        raise ExpressionError(f"trailing input {' '.join(lexemes[pos:])!r}")
    return Expression.from_tokens(tokens, max_len)
