"""Command-line front end: batch reports over model files.

Exit codes: 0 property holds / success, 1 property violated (counterexample
emitted), 2 usage or parse error, 3 invalid model.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from typing import Optional, Union

from . import diagnostics, leakage as leak_mod
from .cpctl import CheckResult, check_cpctl, cp_bounds
from .formulas import (
    CondQuery,
    FormulaError,
    ProbQuery,
    TRUE,
    Until,
    format_formula,
    is_propositional,
    parse_formula,
)
from .graphs import SchedulerLimitError
from .models import Ihs, MarkovModel, ModelError, Prior, QleakError, validate_ihs, validate_model
from .text import ParseError, emit_report, format_rational, parse_model

EXIT_HOLDS = 0
EXIT_VIOLATED = 1
EXIT_USAGE = 2
EXIT_INVALID = 3


def _load(path: str) -> Union[MarkovModel, Ihs]:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def _parse_prior(text: str) -> Prior:
    entries = []
    for item in text.split(","):
        name, _, value = item.partition("=")
        if not value:
            raise FormulaError(f"bad prior entry {item!r}; expected name=prob")
        entries.append((name.strip(), Fraction(value.strip())))
    return Prior.of(entries)


def _trace_label(trace: tuple[str, ...]) -> str:
    return ".".join(trace) if trace else "<empty>"


def _witness_rows(model: MarkovModel, ce: diagnostics.TorrentCounterexample) -> list[dict]:
    return [
        {
            "rail": [model.states[s] for s in w.rail],
            "mass": w.mass,
            "representant": [model.states[s] for s in w.representant],
            "representant_mass": w.representant_mass,
        }
        for w in ce.witnesses
    ]


def _cmd_check(args) -> int:
    model = _load(args.model)
    formula = parse_formula(args.formula)
    report: dict = {"query": format_formula(formula)}
    if args.bounds_only:
        if not isinstance(formula, CondQuery):
            raise FormulaError("--bounds-only applies to CP queries")
        lower, upper = cp_bounds(model, formula.num, formula.den)
        verdict = None
        if formula.op in ("<", "<="):
            if (upper < formula.bound) or (upper == formula.bound and formula.op == "<="):
                verdict = "holds"
            elif lower > formula.bound or (lower == formula.bound and formula.op == "<"):
                verdict = "violated"
        report["result"] = {
            "bounds": {"lower": lower, "upper": upper},
            "verdict": verdict or "unknown",
        }
        print(emit_report(report, args.out), end="")
        return EXIT_VIOLATED if verdict == "violated" else EXIT_HOLDS

    result: CheckResult = check_cpctl(model, formula)
    body: dict = {"verdict": "holds" if result.verdict else "violated"}
    if result.value is not None:
        body["value"] = result.value
    if (
        not result.verdict
        and isinstance(formula, ProbQuery)
        and formula.op in ("<", "<=")
        and isinstance(formula.path, Until)
        and formula.path.left == TRUE
        and is_propositional(formula.path.right)
    ):
        ce = diagnostics.torrent_counterexample(
            model, formula.path.right, formula.bound, strict=(formula.op == "<")
        )
        if ce is not None:
            chain = model
            body["witnesses"] = _witness_rows(chain, ce)
            body["witness_mass"] = ce.total_mass
    report["result"] = body
    print(emit_report(report, args.out), end="")
    return EXIT_HOLDS if result.verdict else EXIT_VIOLATED


def _require_ihs(model) -> Ihs:
    if not isinstance(model, Ihs):
        raise ModelError(["this command needs an information-hiding system (model ihs)"])
    return model


def _joint_report(h: Ihs) -> tuple[leak_mod.JointMatrix, dict[tuple, Fraction]]:
    if not validate_ihs(h):
        joint = leak_mod.joint_matrix(h)
        prior = leak_mod.prior_of(h)
        rows = {(s,): prior.get(s) for s in prior.support()}
    else:
        joint = leak_mod.interactive_joint(h)
        rows = joint.row_masses()
    return joint, rows


def _cmd_leakage(args) -> int:
    model = _require_ihs(_load(args.model))
    if args.max:
        if not model.variable_prior:
            raise ModelError(["--max needs a variable-prior system"])
        value, prior = leak_mod.max_leakage(model, args.max)
        report = {
            "query": f"max-leakage {args.max}",
            "result": {
                "value": value,
                "argmax_prior": {name: p for name, p in prior.entries},
            },
        }
        print(emit_report(report, args.out), end="")
        return EXIT_HOLDS
    if model.variable_prior:
        if not args.prior:
            raise FormulaError("a variable-prior system needs --prior or --max")
        model = leak_mod.instantiate_prior(model, _parse_prior(args.prior))
    if args.approx:
        epsilon = Fraction(args.epsilon) if args.epsilon else None
        pl = diagnostics.partial_leakage(model, args.approx, epsilon=epsilon, budget=args.budget)
        report = {
            "query": f"leakage approximation ({args.approx})",
            "result": {
                "groups_used": pl.groups_used,
                "bounds": {"lower": pl.leak_lower, "upper": pl.leak_upper},
                "row_mass": {_trace_label(s): v for s, v in pl.row_mass.items()},
            },
        }
        print(emit_report(report, args.out), end="")
        return EXIT_HOLDS
    joint, rows = _joint_report(model)
    rep = leak_mod.leakage_from_joint(joint, rows)
    report = {
        "query": "leakage",
        "result": {
            "prior": {_trace_label(s): v for s, v in rows.items()},
            "prior_vulnerability": rep.prior_vuln,
            "posterior_vulnerability": rep.post_vuln,
            "multiplicative": rep.multiplicative,
            "additive": rep.additive,
        },
    }
    print(emit_report(report, args.out), end="")
    return EXIT_HOLDS


def _matrix_csv(secrets, observables, cells) -> list[list]:
    header = ["secret"] + [_trace_label(o) for o in observables]
    rows = [header]
    for s in secrets:
        rows.append([_trace_label(s)] + [cells.get((s, o), Fraction(0)) for o in observables])
    return rows


def _cmd_channel(args) -> int:
    model = _require_ihs(_load(args.model))
    if model.variable_prior:
        if not args.prior:
            raise FormulaError("a variable-prior system needs --prior")
        model = leak_mod.instantiate_prior(model, _parse_prior(args.prior))
    channel = leak_mod.channel_matrix(model)
    report = {
        "query": "channel matrix",
        "result": {
            "secrets": [_trace_label(s) for s in channel.secrets],
            "observables": [_trace_label(o) for o in channel.observables],
            "rows": {
                _trace_label(s): {
                    _trace_label(o): channel.get(s, o) for o in channel.observables
                }
                for s in channel.secrets
            },
        },
        "csv": _matrix_csv(channel.secrets, channel.observables, channel.cells),
    }
    print(emit_report(report, args.out), end="")
    return EXIT_HOLDS


def _cmd_joint(args) -> int:
    model = _require_ihs(_load(args.model))
    if model.variable_prior:
        if not args.prior:
            raise FormulaError("a variable-prior system needs --prior")
        model = leak_mod.instantiate_prior(model, _parse_prior(args.prior))
    joint, rows = _joint_report(model)
    report = {
        "query": "joint matrix",
        "result": {
            "prior": {_trace_label(s): v for s, v in rows.items()},
            "total": joint.total(),
        },
        "csv": _matrix_csv(joint.secrets, joint.observables, joint.cells),
    }
    print(emit_report(report, args.out), end="")
    return EXIT_HOLDS


def _cmd_counterexample(args) -> int:
    model = _load(args.model)
    if isinstance(model, Ihs):
        raise ModelError(["counterexamples are for mc/mdp models"])
    target = parse_formula(args.target)
    if not is_propositional(target):
        raise FormulaError("--target must be a propositional formula")
    bound = Fraction(args.bound)
    ce = diagnostics.torrent_counterexample(model, target, bound, strict=args.strict)
    rel = "<" if args.strict else "<="
    query = f"P{rel}{format_rational(bound)}[ F {args.target} ]"
    if ce is None:
        print(emit_report({"query": query, "result": {"verdict": "holds"}}, args.out), end="")
        return EXIT_HOLDS
    report = {
        "query": query,
        "result": {
            "verdict": "violated",
            "witness_mass": ce.total_mass,
            "witnesses": _witness_rows(model, ce),
        },
    }
    print(emit_report(report, args.out), end="")
    return EXIT_VIOLATED


def _cmd_sources(args) -> int:
    model = _require_ihs(_load(args.model))
    if model.variable_prior:
        if not args.prior:
            raise FormulaError("a variable-prior system needs --prior")
        model = leak_mod.instantiate_prior(model, _parse_prior(args.prior))
    report_data = diagnostics.leakage_sources(model, args.top)
    entries = []
    for e in report_data.entries:
        entry = {
            "observable": _trace_label(e.observable),
            "mass": e.joint_mass,
            "witnesses": [
                {
                    "path": w.description,
                    "mass": w.mass,
                    **(
                        {
                            "hint": f"{w.hint[0]} -{w.hint[1]}-> {w.hint[2]}",
                            "hint_prob": w.hint[3],
                        }
                        if w.hint
                        else {}
                    ),
                }
                for w in e.witnesses
            ],
        }
        if len(e.best_secrets) > 1:
            entry["note"] = "no dominant secret (tie)"
            entry["secrets"] = [_trace_label(s) for s in e.best_secrets]
        else:
            entry["secret"] = _trace_label(e.best_secrets[0])
        entries.append(entry)
    print(emit_report({"query": "leakage sources", "result": {"observables": entries}}, args.out), end="")
    return EXIT_HOLDS


def _cmd_validate(args) -> int:
    with open(args.model, encoding="utf-8") as fh:
        text = fh.read()
    try:
        model = parse_model(text)
    except ModelError as exc:
        print(emit_report({"query": "validate", "result": {"verdict": "invalid", "violations": exc.report}}, args.out), end="")
        return EXIT_INVALID
    kind = model.kind if isinstance(model, MarkovModel) else "ihs"
    print(emit_report({"query": "validate", "result": {"verdict": "valid", "kind": kind}}, args.out), end="")
    return EXIT_HOLDS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qleak",
        description="Conditional-probability model checking and information-leakage analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("model", help="model file")
        p.add_argument("--out", choices=["text", "json", "csv"], default="text")
        p.set_defaults(fn=fn)
        return p

    p = add("check", _cmd_check, help="decide a P/CP formula")
    p.add_argument("--formula", required=True)
    p.add_argument("--bounds-only", action="store_true", help="cheap CP bounds instead of the exact value")

    p = add("leakage", _cmd_leakage, help="vulnerability and leakage of an IHS")
    p.add_argument("--prior", help="instantiate a variable prior, e.g. a=1/3,b=2/3")
    p.add_argument("--max", choices=["mult", "add"], help="maximum leakage over priors")
    p.add_argument("--approx", choices=["paths", "regexTerms", "sccGroups"], help="partial-matrix approximation strategy")
    p.add_argument("--epsilon", help="stop when the certificate is this tight")
    p.add_argument("--budget", type=int, help="maximum number of path groups")

    p = add("channel", _cmd_channel, help="channel matrix of a secrets-first IHS")
    p.add_argument("--prior", help="instantiate a variable prior first")

    p = add("joint", _cmd_joint, help="joint matrix (works for interactive systems)")
    p.add_argument("--prior", help="instantiate a variable prior first")

    p = add("counterexample", _cmd_counterexample, help="torrent counterexample to P<=p[F target]")
    p.add_argument("--target", required=True, help="propositional goal formula")
    p.add_argument("--bound", required=True, help="probability bound")
    p.add_argument("--strict", action="store_true", help="strict bound P<p")

    p = add("sources", _cmd_sources, help="high-leakage sources of an IHS")
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--prior", help="instantiate a variable prior first")

    add("validate", _cmd_validate, help="validate a model file")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ParseError, FormulaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SchedulerLimitError, QleakError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
