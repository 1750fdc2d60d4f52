"""Formula AST and parser for the probabilistic/conditional logic.

State formulas combine propositions, boolean connectives, and the
probabilistic operators ``P{<,<=,>,>=}a[path]`` and
``CP{<,<=,>,>=}a[path|path]``.  Path formulas are ``F p``, ``G p`` and
``p U q`` with purely propositional arguments; nesting a path quantifier
inside a path argument is rejected at parse time.  ``F p`` is rewritten to
``true U p`` while parsing, so downstream code only ever sees U and G.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .models import MarkovModel, QleakError


class FormulaError(QleakError):
    pass


# --- propositional layer ---------------------------------------------------


@dataclass(frozen=True)
class Prop:
    name: str


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "StateFormula"


@dataclass(frozen=True)
class And:
    left: "StateFormula"
    right: "StateFormula"


@dataclass(frozen=True)
class Or:
    left: "StateFormula"
    right: "StateFormula"


# --- path layer -------------------------------------------------------------


@dataclass(frozen=True)
class Until:
    left: "PropFormula"
    right: "PropFormula"


@dataclass(frozen=True)
class Globally:
    arg: "PropFormula"


PathFormula = Union[Until, Globally]


@dataclass(frozen=True)
class ProbQuery:
    op: str  # one of < <= > >=
    bound: Fraction
    path: PathFormula


@dataclass(frozen=True)
class CondQuery:
    op: str
    bound: Fraction
    num: PathFormula  # the conditioned formula phi
    den: PathFormula  # the condition psi


PropFormula = Union[Prop, BoolLit, Not, And, Or]
StateFormula = Union[PropFormula, ProbQuery, CondQuery]

TRUE = BoolLit(True)
FALSE = BoolLit(False)


def finally_(arg: PropFormula) -> Until:
    """F p, normalized as true U p."""
    return Until(TRUE, arg)


def is_propositional(f: StateFormula) -> bool:
    if isinstance(f, (Prop, BoolLit)):
        return True
    if isinstance(f, Not):
        return is_propositional(f.arg)
    if isinstance(f, (And, Or)):
        return is_propositional(f.left) and is_propositional(f.right)
    return False


def eval_prop(f: PropFormula, labels: frozenset[str]) -> bool:
    if isinstance(f, Prop):
        return f.name in labels
    if isinstance(f, BoolLit):
        return f.value
    if isinstance(f, Not):
        return not eval_prop(f.arg, labels)
    if isinstance(f, And):
        return eval_prop(f.left, labels) and eval_prop(f.right, labels)
    if isinstance(f, Or):
        return eval_prop(f.left, labels) or eval_prop(f.right, labels)
    raise FormulaError(f"not a propositional formula: {f!r}")


def sat_states(m: MarkovModel, f: PropFormula) -> frozenset[int]:
    return frozenset(s for s in range(m.n) if eval_prop(f, m.labels[s]))


# --- parsing ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<op>CP|P)(?P<rel><=|>=|<|>)(?P<bound>[0-9]+(?:/[0-9]+|\.[0-9]+)?)"
    r"|(?P<sym>[()\[\]!&|])"
    r"|(?P<word>[A-Za-z_][A-Za-z0-9_]*))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip():
                raise FormulaError(f"syntax error at column {pos + 1}: {text[pos:].strip()[:20]!r}")
            break
        pos = m.end()
        if m.group("op"):
            tokens.append(("query", m.group("op") + "\x00" + m.group("rel") + "\x00" + m.group("bound")))
        elif m.group("sym"):
            tokens.append(("sym", m.group("sym")))
        else:
            tokens.append(("word", m.group("word")))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, kind: str, value: str | None = None):
        k, v = self.take()
        if k != kind or (value is not None and v != value):
            raise FormulaError(f"expected {value or kind!r}, found {v!r}")
        return v

    def done(self) -> bool:
        return self.pos >= len(self.tokens)

    # state := or_expr over atoms (propositions and P/CP queries)
    def state_formula(self) -> StateFormula:
        return self._or(self._state_atom)

    def _or(self, atom) -> StateFormula:
        left = self._and(atom)
        while self.peek() == ("sym", "|"):
            self.take()
            left = Or(left, self._and(atom))
        return left

    def _and(self, atom) -> StateFormula:
        left = self._unary(atom)
        while self.peek() == ("sym", "&"):
            self.take()
            left = And(left, self._unary(atom))
        return left

    def _unary(self, atom) -> StateFormula:
        kind, value = self.peek()
        if (kind, value) == ("sym", "!"):
            self.take()
            return Not(self._unary(atom))
        if (kind, value) == ("sym", "("):
            self.take()
            inner = self._or(atom)
            self.expect("sym", ")")
            return inner
        return atom()

    def _state_atom(self) -> StateFormula:
        kind, value = self.peek()
        if kind == "query":
            self.take()
            op, rel, bound = value.split("\x00")
            self.expect("sym", "[")
            if op == "P":
                path = self._path(stop_at_bar=False)
                self.expect("sym", "]")
                return ProbQuery(rel, Fraction(bound), path)
            num = self._path(stop_at_bar=True)
            self.expect("sym", "|")
            den = self._path(stop_at_bar=False)
            self.expect("sym", "]")
            return CondQuery(rel, Fraction(bound), num, den)
        if kind == "word":
            return self._prop_atom()
        raise FormulaError(f"unexpected token {value!r}")

    def _prop_atom(self) -> PropFormula:
        kind, value = self.take()
        if kind != "word":
            raise FormulaError(f"expected a proposition, found {value!r}")
        if value == "true":
            return TRUE
        if value == "false":
            return FALSE
        # F/G/U are reserved words; P and CP are only operators when glued
        # to a relation and bound, so they remain usable as propositions.
        if value in ("F", "G", "U"):
            raise FormulaError(f"misplaced path operator {value!r}")
        return Prop(value)

    # Propositional subformula inside a path operator.  stop_at_bar makes a
    # top-level "|" act as the CP separator instead of disjunction.
    def _prop(self, stop_at_bar: bool) -> PropFormula:
        left = self._prop_and()
        while self.peek() == ("sym", "|") and not stop_at_bar:
            self.take()
            left = Or(left, self._prop_and())
        return left

    def _prop_and(self) -> PropFormula:
        left = self._prop_unary()
        while self.peek() == ("sym", "&"):
            self.take()
            left = And(left, self._prop_unary())
        return left

    def _prop_unary(self) -> PropFormula:
        kind, value = self.peek()
        if (kind, value) == ("sym", "!"):
            self.take()
            return Not(self._prop_unary())
        if (kind, value) == ("sym", "("):
            self.take()
            inner = self._prop(stop_at_bar=False)
            self.expect("sym", ")")
            return inner
        if kind == "query":
            raise FormulaError("nested path quantifiers are not allowed")
        return self._prop_atom()

    def _path(self, stop_at_bar: bool, negated: bool = False) -> PathFormula:
        kind, value = self.peek()
        if (kind, value) == ("sym", "!"):
            self.take()
            return self._path(stop_at_bar, not negated)
        if kind == "word" and value == "F":
            self.take()
            arg = self._prop(stop_at_bar)
            return Globally(Not(arg)) if negated else finally_(arg)
        if kind == "word" and value == "G":
            self.take()
            arg = self._prop(stop_at_bar)
            return finally_(Not(arg)) if negated else Globally(arg)
        left = self._prop(stop_at_bar=True)
        if self.peek() == ("word", "U"):
            self.take()
            right = self._prop(stop_at_bar)
            if negated:
                raise FormulaError("negated until is outside the supported fragment")
            return Until(left, right)
        raise FormulaError("expected a path formula (F p, G p, or p U q)")


def parse_formula(text: str) -> StateFormula:
    """Parse a state formula; raises :class:`FormulaError` on bad input."""
    parser = _Parser(_tokenize(text))
    formula = parser.state_formula()
    if not parser.done():
        raise FormulaError(f"trailing input after formula: {parser.peek()[1]!r}")
    return formula


# --- printing ---------------------------------------------------------------


def format_prop(f: PropFormula) -> str:
    if isinstance(f, Prop):
        return f.name
    if isinstance(f, BoolLit):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return f"!{_wrap(f.arg)}"
    if isinstance(f, And):
        return f"{_wrap(f.left)} & {_wrap(f.right)}"
    if isinstance(f, Or):
        return f"{_wrap(f.left)} | {_wrap(f.right)}"
    raise FormulaError(f"cannot print {f!r}")


def _wrap(f: PropFormula) -> str:
    if isinstance(f, (Prop, BoolLit, Not)):
        return format_prop(f)
    return f"({format_prop(f)})"


def format_path(p: PathFormula) -> str:
    if isinstance(p, Globally):
        return f"G {_wrap(p.arg)}"
    return f"{_wrap(p.left)} U {_wrap(p.right)}"


def format_formula(f: StateFormula) -> str:
    if isinstance(f, ProbQuery):
        return f"P{f.op}{f.bound}[ {format_path(f.path)} ]"
    if isinstance(f, CondQuery):
        return f"CP{f.op}{f.bound}[ {format_path(f.num)} | {format_path(f.den)} ]"
    if isinstance(f, Not):
        return f"!({format_formula(f.arg)})"
    if isinstance(f, And):
        return f"({format_formula(f.left)}) & ({format_formula(f.right)})"
    if isinstance(f, Or):
        return f"({format_formula(f.left)}) | ({format_formula(f.right)})"
    return format_prop(f)
