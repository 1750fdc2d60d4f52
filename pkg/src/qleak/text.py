"""Bit-exact textual format for models and reports.

Model grammar (line based, ``#`` starts a comment)::

    model mc|mdp|ihs
    state <id> [<prop> ...]
    init <id>
    row <src> : <p> <dst> [, <p> <dst>]...          # mc
    choice <src> <label> : <p> <dst> [, ...]        # mdp, repeatable per src
    act <src> : <p> <action> <dst> [, ...]          # ihs
    secret <a> ...                                   # ihs
    observable <a> ...                               # ihs
    variable-prior                                   # ihs flag

Probabilities are ``num/den`` or decimal literals; both parse to exact
rationals.  For a variable-prior system the initial state takes one
``act init : 1 <secret> <dst>`` line per secret.

Rationals in reports are printed as ``num/den`` (plus a decimal
approximation in text format); json and csv never round-trip through
floats.
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Optional, Sequence, Union

from .models import (
    Distribution,
    Ihs,
    MarkovModel,
    ModelError,
    QleakError,
    as_prob,
    validate_ihs,
    validate_interactive_ihs,
    validate_model,
)


class ParseError(QleakError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _parse_prob(token: str, line: int) -> Fraction:
    try:
        return as_prob(token)
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"bad probability {token!r}: {exc}", line) from None


def _split_entries(tokens: list[str], line: int) -> list[list[str]]:
    entries: list[list[str]] = [[]]
    for tok in tokens:
        if tok == ",":
            entries.append([])
        else:
            entries[-1].append(tok)
    if any(not e for e in entries):
        raise ParseError("empty transition entry", line)
    return entries


def parse_model(text: str) -> Union[MarkovModel, Ihs]:
    """Parse and validate a model; raises ParseError or ModelError."""
    kind: Optional[str] = None
    names: list[str] = []
    name_to_id: dict[str, int] = {}
    labels: list[frozenset[str]] = []
    init_name: Optional[str] = None
    init_line = 0
    secret: list[str] = []
    observable: list[str] = []
    variable_prior = False
    # raw transition records, resolved after all states are known
    rows: list[tuple[int, str, list[list[str]]]] = []  # (line, src, entries)
    mdp_choices: list[tuple[int, str, str, list[list[str]]]] = []
    acts: list[tuple[int, str, list[list[str]]]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        tokens = body.replace(",", " , ").replace(":", " : ").split()
        head = tokens[0]
        if head == "model":
            if kind is not None:
                raise ParseError("duplicate model line", lineno)
            if len(tokens) != 2 or tokens[1] not in ("mc", "mdp", "ihs"):
                raise ParseError("expected: model mc|mdp|ihs", lineno)
            kind = tokens[1]
        elif head == "state":
            if len(tokens) < 2:
                raise ParseError("expected: state <id> [<prop>...]", lineno)
            name = tokens[1]
            if name in name_to_id:
                raise ParseError(f"duplicate state {name!r}", lineno)
            name_to_id[name] = len(names)
            names.append(name)
            labels.append(frozenset(tokens[2:]))
        elif head == "init":
            if len(tokens) != 2:
                raise ParseError("expected: init <id>", lineno)
            init_name, init_line = tokens[1], lineno
        elif head == "row":
            if len(tokens) < 3 or tokens[2] != ":":
                raise ParseError("expected: row <src> : <p> <dst> [, ...]", lineno)
            rows.append((lineno, tokens[1], _split_entries(tokens[3:], lineno)))
        elif head == "choice":
            if len(tokens) < 4 or tokens[3] != ":":
                raise ParseError("expected: choice <src> <label> : <p> <dst> [, ...]", lineno)
            mdp_choices.append((lineno, tokens[1], tokens[2], _split_entries(tokens[4:], lineno)))
        elif head == "act":
            if len(tokens) < 3 or tokens[2] != ":":
                raise ParseError("expected: act <src> : <p> <action> <dst> [, ...]", lineno)
            acts.append((lineno, tokens[1], _split_entries(tokens[3:], lineno)))
        elif head == "secret":
            secret.extend(tokens[1:])
        elif head == "observable":
            observable.extend(tokens[1:])
        elif head == "variable-prior":
            variable_prior = True
        else:
            raise ParseError(f"unknown directive {head!r}", lineno)

    if kind is None:
        raise ParseError("missing model line", 1)
    if not names:
        raise ParseError("model has no states", 1)
    if init_name is None:
        raise ParseError("missing init line", 1)
    if init_name not in name_to_id:
        raise ParseError(f"unknown initial state {init_name!r}", init_line)
    init = name_to_id[init_name]

    def state_id(token: str, line: int) -> int:
        if token not in name_to_id:
            raise ParseError(f"unknown state {token!r}", line)
        return name_to_id[token]

    if kind in ("mc", "mdp"):
        if acts or secret or observable or variable_prior:
            raise ParseError("ihs directives in a mc/mdp model", 1)
        per_state: list[list[tuple[str, Distribution]]] = [[] for _ in names]
        records = (
            [(ln, src, "0", ent) for ln, src, ent in rows]
            if kind == "mc"
            else [(ln, src, lab, ent) for ln, src, lab, ent in mdp_choices]
        )
        if kind == "mc" and mdp_choices:
            raise ParseError("choice lines in an mc model (use row)", mdp_choices[0][0])
        if kind == "mdp" and rows:
            raise ParseError("row lines in an mdp model (use choice)", rows[0][0])
        for ln, src, label, entries in records:
            s = state_id(src, ln)
            pairs = []
            for entry in entries:
                if len(entry) != 2:
                    raise ParseError(f"expected '<p> <dst>', found {' '.join(entry)!r}", ln)
                pairs.append((state_id(entry[1], ln), _parse_prob(entry[0], ln)))
            try:
                dist = Distribution.of(pairs)
            except ValueError as exc:
                raise ParseError(str(exc), ln) from None
            if kind == "mc" and per_state[s]:
                raise ParseError(f"duplicate row for state {src!r}", ln)
            per_state[s].append((label, dist))
        for s, cs in enumerate(per_state):
            if not cs:
                raise ParseError(f"state {names[s]!r} has no outgoing transitions", 1)
        model = MarkovModel(
            kind=kind,
            states=tuple(names),
            init=init,
            labels=tuple(labels),
            choices=tuple(tuple(cs) for cs in per_state),
        )
        report = validate_model(model)
        if report:
            raise ModelError(report)
        return model

    # ihs
    if rows or mdp_choices:
        raise ParseError("row/choice lines in an ihs model (use act)", 1)
    trans: list[Optional[Distribution]] = [None] * len(names)
    branches: list[tuple[str, int]] = []
    for ln, src, entries in acts:
        s = state_id(src, ln)
        pairs = []
        for entry in entries:
            if len(entry) != 3:
                raise ParseError(f"expected '<p> <action> <dst>', found {' '.join(entry)!r}", ln)
            p = _parse_prob(entry[0], ln)
            pairs.append(((entry[1], state_id(entry[2], ln)), p))
        if variable_prior and s == init:
            if len(pairs) != 1 or pairs[0][1] != 1:
                raise ParseError(
                    "variable-prior initial branches must be single entries with probability 1", ln
                )
            (action, target), _ = pairs[0]
            branches.append((action, target))
            continue
        if trans[s] is not None:
            raise ParseError(f"duplicate act line for state {src!r}", ln)
        try:
            trans[s] = Distribution.of(pairs)
        except ValueError as exc:
            raise ParseError(str(exc), ln) from None

    ihs = Ihs(
        states=tuple(names),
        init=init,
        secret_actions=tuple(dict.fromkeys(secret)),
        observable_actions=tuple(dict.fromkeys(observable)),
        trans=tuple(trans),
        variable_prior=variable_prior,
        init_branches=tuple(branches),
    )
    # secrets-at-start systems and interactive ones are both legal inputs
    report = validate_ihs(ihs)
    if report:
        interactive_report = validate_interactive_ihs(ihs)
        if interactive_report:
            raise ModelError(
                interactive_report if len(interactive_report) <= len(report) else report
            )
    return ihs


# ---------------------------------------------------------------------------
# serialization


def format_rational(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)


def _fmt_state_line(name: str, labels: frozenset[str]) -> str:
    return f"state {name} {' '.join(sorted(labels))}".rstrip()


def serialize_model(m: Union[MarkovModel, Ihs]) -> str:
    """Inverse of :func:`parse_model`; parse(serialize(x)) == x exactly."""
    lines: list[str] = []
    if isinstance(m, MarkovModel):
        lines.append(f"model {m.kind}")
        for s, name in enumerate(m.states):
            lines.append(_fmt_state_line(name, m.labels[s]))
        lines.append(f"init {m.states[m.init]}")
        for s in range(m.n):
            for label, dist in m.choices[s]:
                entries = " , ".join(
                    f"{format_rational(p)} {m.states[t]}" for t, p in dist.items()
                )
                if m.is_mc:
                    lines.append(f"row {m.states[s]} : {entries}")
                else:
                    lines.append(f"choice {m.states[s]} {label} : {entries}")
        return "\n".join(lines) + "\n"

    lines.append("model ihs")
    for s, name in enumerate(m.states):
        lines.append(f"state {name}")
    lines.append(f"init {m.states[m.init]}")
    if m.secret_actions:
        lines.append(f"secret {' '.join(m.secret_actions)}")
    if m.observable_actions:
        lines.append(f"observable {' '.join(m.observable_actions)}")
    if m.variable_prior:
        lines.append("variable-prior")
        for action, target in m.init_branches:
            lines.append(f"act {m.states[m.init]} : 1 {action} {m.states[target]}")
    for q in range(m.n):
        dist = m.trans[q]
        if dist is None:
            continue
        entries = " , ".join(
            f"{format_rational(p)} {action} {m.states[t]}" for (action, t), p in dist.items()
        )
        lines.append(f"act {m.states[q]} : {entries}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# report emission
#
# Reports are plain dict/list trees whose leaves may be Fractions; emit_report
# renders them deterministically.  The json schema for query results is
# {"query": ..., "result": {"value"?, "verdict"?, "witnesses"?, "bounds"?}}
# with every rational as a "num/den" string.


def _jsonable(node):
    if isinstance(node, Fraction):
        return format_rational(node)
    if isinstance(node, dict):
        return {k: _jsonable(v) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_jsonable(v) for v in node]
    return node


def _text_value(node) -> str:
    if isinstance(node, Fraction):
        approx = f" (~{float(node):.6g})" if node.denominator != 1 else ""
        return format_rational(node) + approx
    if isinstance(node, (list, tuple)):
        return "[" + ", ".join(_text_value(v) for v in node) + "]"
    return str(node)


def _text_lines(node, indent: str = "") -> list[str]:
    lines = []
    if isinstance(node, dict):
        for key, value in node.items():
            if isinstance(value, dict) or _is_record_list(value):
                lines.append(f"{indent}{key}:")
                lines.extend(_text_lines(value, indent + "  "))
            else:
                lines.append(f"{indent}{key}: {_text_value(value)}")
    elif _is_record_list(node):
        for item in node:
            lines.append(f"{indent}-")
            lines.extend(_text_lines(item, indent + "  "))
    else:
        lines.append(f"{indent}{_text_value(node)}")
    return lines


def _is_record_list(node) -> bool:
    return isinstance(node, (list, tuple)) and any(isinstance(v, dict) for v in node)


def emit_report(report, fmt: str = "text") -> str:
    """Render an analysis result as deterministic text, json, or csv."""
    if fmt == "json":
        return json.dumps(_jsonable(report), indent=2, sort_keys=False) + "\n"
    if fmt == "csv":
        rows = report.get("csv") if isinstance(report, dict) else None
        if rows is None:
            raise QleakError("this report has no csv form")
        return "\n".join(",".join(_csv_cell(c) for c in row) for row in rows) + "\n"
    if fmt == "text":
        body = {k: v for k, v in report.items() if k != "csv"} if isinstance(report, dict) else report
        return "\n".join(_text_lines(body)) + "\n"
    raise QleakError(f"unknown report format {fmt!r}")


def _csv_cell(cell) -> str:
    if isinstance(cell, Fraction):
        return format_rational(cell)
    return str(cell)
