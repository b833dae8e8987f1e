"""Owner-defined acceptance rules over measures and structure, never text.

Rule language, one rule per line, first match wins, default quarantine:

    reject if kind == narrative and depth(ctx) == 0 and implantation(ctx) < 1.0
    accept if flags <= 2 or origin == wayfarer-step
    quarantine if true

Atoms: ``<measure>(ctx) <cmp> <number>`` with measures depth, utility,
implantation, visibility, closeness, flag_count; ``flags <cmp> <number>``;
``kind == <kindname>``; ``origin == <originname>``.  Combinators: and, or,
not, parentheses.  ``ctx`` is the candidate grafted onto the local view.
There is deliberately no operator over content text, labels as text or
author identity, so a rule can only see where a piece sits, not what it
says; quoted strings outside kind and origin names are a syntax error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import EDGE_KINDS, NODE_KINDS, ORIGINS, PieceId, PieceOfKnowledge, Territory
from .errors import MmmError
from .measures import MEASURE_NAMES, IncidenceView, MeasureConfig, build_view, measure_value

VERDICTS = ("accept", "reject", "quarantine")
_CMPS = ("<", "<=", "==", "=", ">=", ">")
_KIND_NAMES = NODE_KINDS + EDGE_KINDS + ("edge",)


@dataclass(frozen=True)
class MeasureAtom:
    name: str
    cmp: str
    threshold: float


@dataclass(frozen=True)
class FlagAtom:
    cmp: str
    threshold: float


@dataclass(frozen=True)
class KindAtom:
    kind: str


@dataclass(frozen=True)
class OriginAtom:
    origin: str


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    inner: object


@dataclass(frozen=True)
class All:
    parts: tuple


@dataclass(frozen=True)
class AnyOf:
    parts: tuple


@dataclass(frozen=True)
class GatekeeperRule:
    verdict: str
    expr: object
    text: str


@dataclass(frozen=True)
class GateDecision:
    verdict: str  # accept | reject | quarantine
    fired_rule: Optional[str] = None


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<lparen>\()|(?P<rparen>\))"
    r"|(?P<cmp><=|>=|==|<|>|=)"
    r"|(?P<number>\d+(?:\.\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:-[A-Za-z0-9_]+)*)"
    r"|(?P<quoted>\"[^\"]*\"|'[^']*')"
    r"|(?P<bad>\S))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            break
        pos = m.end()
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "bad":
            raise MmmError("SYNTAX_ERROR", f"unexpected character {value!r}")
        if value.strip():
            tokens.append((kind, value))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]], text: str):
        self.tokens = tokens
        self.text = text
        self.pos = 0

    def peek(self) -> Optional[tuple[str, str]]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise MmmError("SYNTAX_ERROR", f"unexpected end of rule in {self.text!r}")
        self.pos += 1
        return tok

    def expect_ident(self, *values: str) -> str:
        kind, value = self.take()
        if kind != "ident" or (values and value not in values):
            raise MmmError("SYNTAX_ERROR", f"expected {' or '.join(values) or 'a name'}, got {value!r}")
        return value

    def parse_rule(self) -> GatekeeperRule:
        verdict = self.expect_ident(*VERDICTS)
        self.expect_ident("if")
        expr = self.parse_or()
        if self.peek() is not None:
            raise MmmError("SYNTAX_ERROR", f"trailing input after rule: {self.peek()[1]!r}")
        return GatekeeperRule(verdict, expr, self.text)

    def parse_or(self):
        parts = [self.parse_and()]
        while self.peek() == ("ident", "or"):
            self.take()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else AnyOf(tuple(parts))

    def parse_and(self):
        parts = [self.parse_unary()]
        while self.peek() == ("ident", "and"):
            self.take()
            parts.append(self.parse_unary())
        return parts[0] if len(parts) == 1 else All(tuple(parts))

    def parse_unary(self):
        tok = self.peek()
        if tok is None:
            raise MmmError("SYNTAX_ERROR", f"unexpected end of rule in {self.text!r}")
        if tok == ("ident", "not"):
            self.take()
            return Not(self.parse_unary())
        if tok[0] == "lparen":
            self.take()
            expr = self.parse_or()
            kind, value = self.take()
            if kind != "rparen":
                raise MmmError("SYNTAX_ERROR", f"expected ')', got {value!r}")
            return expr
        return self.parse_atom()

    def parse_atom(self):
        kind, value = self.take()
        if kind == "quoted":
            raise MmmError("SYNTAX_ERROR", "quoted text is only legal as a kind or origin name")
        if kind == "number":
            raise MmmError("SYNTAX_ERROR", f"bare number {value!r} is not a condition")
        if kind != "ident":
            raise MmmError("SYNTAX_ERROR", f"unexpected {value!r}")
        if value == "true":
            return Const(True)
        if value == "false":
            return Const(False)
        if value == "kind":
            self._expect_equality()
            name = self._name_token()
            if name not in _KIND_NAMES:
                raise MmmError("SYNTAX_ERROR", f"unknown kind name {name!r}")
            return KindAtom(name)
        if value == "origin":
            self._expect_equality()
            name = self._name_token()
            if name not in ORIGINS:
                raise MmmError("SYNTAX_ERROR", f"unknown origin name {name!r}")
            return OriginAtom(name)
        if value == "flags":
            return FlagAtom(self._cmp_token(), self._number_token())
        if self.peek() is not None and self.peek()[0] == "lparen":
            if value not in MEASURE_NAMES:
                raise MmmError("UNKNOWN_MEASURE", f"unknown measure {value!r}")
            self.take()
            self.expect_ident("ctx")
            kind2, value2 = self.take()
            if kind2 != "rparen":
                raise MmmError("SYNTAX_ERROR", f"expected ')', got {value2!r}")
            return MeasureAtom(value, self._cmp_token(), self._number_token())
        raise MmmError("SYNTAX_ERROR", f"unknown word {value!r}; rules see measures and "
                                       "structure only, never content")

    def _expect_equality(self) -> None:
        kind, value = self.take()
        if kind != "cmp" or value not in ("==", "="):
            raise MmmError("SYNTAX_ERROR", f"expected '==', got {value!r}")

    def _name_token(self) -> str:
        kind, value = self.take()
        if kind == "quoted":
            return value[1:-1]
        if kind == "ident":
            return value
        raise MmmError("SYNTAX_ERROR", f"expected a name, got {value!r}")

    def _cmp_token(self) -> str:
        kind, value = self.take()
        if kind != "cmp":
            raise MmmError("SYNTAX_ERROR", f"expected a comparator, got {value!r}")
        return "==" if value == "=" else value

    def _number_token(self) -> float:
        kind, value = self.take()
        if kind != "number":
            raise MmmError("SYNTAX_ERROR", f"expected a number, got {value!r}")
        return float(value)


def parse_rule(text: str) -> GatekeeperRule:
    """Parse one rule line."""
    stripped = text.strip()
    if not stripped:
        raise MmmError("SYNTAX_ERROR", "empty rule")
    return _Parser(_tokenize(stripped), stripped).parse_rule()


def parse_rules(text: str) -> list[GatekeeperRule]:
    """Parse a rule file: one rule per line, '#' comments and blanks allowed."""
    rules = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rules.append(parse_rule(line))
    return rules


def rules_text(rules: Iterable[GatekeeperRule]) -> str:
    return "".join(rule.text + "\n" for rule in rules)


# ---------------------------------------------------------------------------
# evaluation


def _compare(lhs: float, cmp: str, rhs: float) -> bool:
    if cmp == "<":
        return lhs < rhs
    if cmp == "<=":
        return lhs <= rhs
    if cmp == "==":
        return lhs == rhs
    if cmp == ">=":
        return lhs >= rhs
    return lhs > rhs


def _eval_expr(expr, view: IncidenceView, cfg: MeasureConfig, pid: PieceId,
               local_ids: frozenset[PieceId]) -> bool:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Not):
        return not _eval_expr(expr.inner, view, cfg, pid, local_ids)
    if isinstance(expr, All):
        return all(_eval_expr(p, view, cfg, pid, local_ids) for p in expr.parts)
    if isinstance(expr, AnyOf):
        return any(_eval_expr(p, view, cfg, pid, local_ids) for p in expr.parts)
    if isinstance(expr, KindAtom):
        piece = view.pieces[view.require(pid)]
        if expr.kind == "edge":
            return piece.is_edge
        if piece.is_edge:
            return piece.edge_kind == expr.kind
        return piece.kind == expr.kind
    if isinstance(expr, OriginAtom):
        return view.origins.get(view.require(pid)) == expr.origin
    if isinstance(expr, FlagAtom):
        return _compare(view.flag_counts.get(view.require(pid), 0), expr.cmp, expr.threshold)
    if isinstance(expr, MeasureAtom):
        value = measure_value(view, pid, cfg, expr.name, local_ids=local_ids)
        return _compare(value, expr.cmp, expr.threshold)
    raise MmmError("SYNTAX_ERROR", f"unknown expression node {expr!r}")


def evaluate_piece(
    rules: list[GatekeeperRule],
    pid: PieceId,
    view: IncidenceView,
    cfg: MeasureConfig,
    local_ids: frozenset[PieceId] = frozenset(),
) -> GateDecision:
    """First matching rule wins; quarantine when nothing fires.  The view
    carries each piece's origin, actual for held pieces and prospective for
    grafted candidates."""
    for index, rule in enumerate(rules):
        if _eval_expr(rule.expr, view, cfg, pid, local_ids):
            return GateDecision(rule.verdict, f"{index}: {rule.text}")
    return GateDecision("quarantine")


def evaluate(
    rules: list[GatekeeperRule],
    candidate_pieces: Iterable[PieceOfKnowledge],
    territory: Territory,
    cfg: MeasureConfig,
    origin: str = "accepted-share",
) -> dict[PieceId, GateDecision]:
    """Gate every candidate piece on the graft of the candidate onto the
    local view; measures see local pieces and the whole candidate."""
    pieces = list(candidate_pieces)
    view = build_view(territory, pieces, extra_origin=origin)
    local_ids = frozenset(territory.ids())
    return {p.id: evaluate_piece(rules, p.id, view, cfg, local_ids) for p in pieces}


# A configuration preset for community territories meant as open common
# grounds: structural housekeeping only, humans review the rest.
NEUTRAL_GROUNDS_RULES_TEXT = """\
# open discussion grounds: position and flags gate entry, meaning never does
reject if flags > 5
accept if kind == question
accept if kind == edge
accept if depth(ctx) >= 1 or implantation(ctx) >= 0.5
quarantine if true
"""
