"""Conditional-probability model checking.

The engine decides ``CP{<,<=,>,>=}a[phi|psi]`` queries.  On a Markov chain
the conditional probability is the exact quotient P(phi and psi)/P(psi),
computed on a product with small status automata.  On an MDP the optimum
over schedulers is computed with the pair-expression algebra: after the
stopping condition is absorbed and every SCC reduced away, a recursion over
the acyclic model propagates disjunctions of (P(phi and psi), P(psi)) pairs,
pruned by the congruence rules that preserve the optimal quotient, and the
answer is the maximum quotient at the initial state (or the minimum, for
lower-bounded queries, via the dual rules).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

from .formulas import (
    And,
    BoolLit,
    CondQuery,
    FormulaError,
    Globally,
    Not,
    Or,
    PathFormula,
    ProbQuery,
    Prop,
    PropFormula,
    StateFormula,
    TRUE,
    Until,
    eval_prop,
    sat_states,
)
from .graphs import (
    MdpReduction,
    absorption_values_mc,
    reduce_mdp_acyclic,
    topological_states,
)
from .models import ONE, ZERO, Distribution, MarkovModel, ModelError
from .reach import opt_prob, opt_vector, until_opt

Pair = tuple[Fraction, Fraction]


# ---------------------------------------------------------------------------
# pair expressions and the congruence rules


def _normalize_pairs(pairs: Sequence[Pair], mode: str) -> tuple[Pair, ...]:
    work = sorted(set(pairs))
    while True:
        before = list(work)
        # rule 1: equal first components
        by_p: dict[Fraction, Pair] = {}
        for p, q in work:
            if p not in by_p:
                by_p[p] = (p, q)
            else:
                q0 = by_p[p][1]
                by_p[p] = (p, min(q0, q) if mode == "max" else max(q0, q))
        work = sorted(by_p.values())
        # rule 2: equal second components
        by_q: dict[Fraction, Pair] = {}
        for p, q in work:
            if q not in by_q:
                by_q[q] = (p, q)
            else:
                p0 = by_q[q][0]
                by_q[q] = (max(p0, p) if mode == "max" else min(p0, p), q)
        work = sorted(by_q.values())
        # rule 3: (p,q) and (p+a,q+a) collapse to the upper (max) / lower (min)
        drop = set()
        for i, (p1, q1) in enumerate(work):
            for p2, q2 in work[i + 1 :]:
                if p2 - p1 == q2 - q1:
                    drop.add((p1, q1) if mode == "max" else (p2, q2))
        work = sorted(x for x in work if x not in drop)
        if work == before:
            return tuple(work)


@dataclass(frozen=True)
class DeltaExpr:
    """Finite disjunction of (P(phi and psi), P(psi)) pairs, kept normalized
    under the congruence that preserves the optimal quotient."""

    pairs: tuple[Pair, ...]
    mode: str = "max"

    def __post_init__(self):
        for p, q in self.pairs:
            if q < p or p < 0:
                raise ValueError(f"malformed pair ({p}, {q})")

    @staticmethod
    def of(pairs: Sequence[Pair], mode: str = "max") -> "DeltaExpr":
        if not pairs:
            raise ValueError("a pair expression cannot be empty")
        return DeltaExpr(_normalize_pairs(pairs, mode), mode)

    @staticmethod
    def single(p: Fraction, q: Fraction, mode: str = "max") -> "DeltaExpr":
        return DeltaExpr.of([(p, q)], mode)


def delta_scale(c: Fraction, d: DeltaExpr) -> DeltaExpr:
    return DeltaExpr.of([(c * p, c * q) for p, q in d.pairs], d.mode)


def delta_add(a: DeltaExpr, b: DeltaExpr) -> DeltaExpr:
    if a.mode != b.mode:
        raise ValueError("cannot add pair expressions of different modes")
    return DeltaExpr.of(
        [(p1 + p2, q1 + q2) for p1, q1 in a.pairs for p2, q2 in b.pairs], a.mode
    )


def delta_or(a: DeltaExpr, b: DeltaExpr) -> DeltaExpr:
    return DeltaExpr.of(list(a.pairs) + list(b.pairs), a.mode)


def delta_rmax(d: DeltaExpr) -> Fraction:
    """Maximum quotient: max of p/q over q != 0, or 0 when none."""
    return max((p / q for p, q in d.pairs if q != 0), default=ZERO)


def delta_rmin(d: DeltaExpr) -> Fraction:
    """Minimum quotient, with the empty-scheduler convention of 1."""
    return min((p / q for p, q in d.pairs if q != 0), default=ONE)


# ---------------------------------------------------------------------------
# stopping conditions


@dataclass(frozen=True)
class StoppingCondition:
    """Propositional condition that freezes a conditional query: once a path
    hits it, both path formulas are decided or reduce to a plain optimum."""

    formula: PropFormula

    @staticmethod
    def of_path(path: PathFormula) -> PropFormula:
        if isinstance(path, Until):
            return Or(Not(path.left), path.right)
        return Not(path.arg)

    @staticmethod
    def for_query(num: PathFormula, den: PathFormula) -> "StoppingCondition":
        return StoppingCondition(
            Or(StoppingCondition.of_path(num), StoppingCondition.of_path(den))
        )


# ---------------------------------------------------------------------------
# the recursive pair-expression systems

BaseTag = tuple  # ("base", role, mode) | ("base", None) | ("step", choice, ((succ, pair), ...))


@dataclass
class DeltaSystem:
    """Per-state pair expressions over the reduced acyclic MDP, with enough
    provenance to rebuild a scheduler realizing any surviving pair."""

    exprs: dict[int, DeltaExpr]
    prov: dict[int, dict[Pair, BaseTag]]
    reduction: MdpReduction
    mode: str
    num: Until
    den: PathFormula


def _fold_choice(
    dist: Distribution,
    child: dict[int, tuple[DeltaExpr, dict[Pair, BaseTag]]],
    mode: str,
) -> dict[Pair, BaseTag]:
    # one ⊕-fold over the successors of a single distribution, tracking which
    # child pair produced each sum
    acc: dict[Pair, tuple] = {(ZERO, ZERO): ()}
    for t, p in dist.items():
        expr_t, _ = child[t]
        nxt: dict[Pair, tuple] = {}
        for (ap, aq), assign in acc.items():
            for tp, tq in expr_t.pairs:
                key = (ap + p * tp, aq + p * tq)
                if key not in nxt:
                    nxt[key] = assign + ((t, (tp, tq)),)
        acc = nxt
    return {pair: ("step", assign) for pair, assign in acc.items()}


def delta_system(
    m: MarkovModel, num: Until, den: PathFormula, mode: str = "max"
) -> DeltaSystem:
    """Build the pair-expression system for CP[num|den] on an MDP.

    ``mode="max"`` computes the expressions whose maximum quotient at the
    initial state is CP+; ``mode="min"`` the dual system for CP-.
    """
    if not isinstance(num, Until):
        raise FormulaError("the conditioned formula must be an until (F is rewritten to U)")
    stop = StoppingCondition.for_query(num, den)
    stop_states = sat_states(m, stop.formula)
    reduction = reduce_mdp_acyclic(m, stop_states)
    red = reduction.mdp

    flip = "min" if mode == "max" else "max"
    den_plus = opt_vector(m, den, "max")
    den_minus = opt_vector(m, den, "min")
    num_plus = opt_vector(m, num, "max")
    num_minus = opt_vector(m, num, "min")
    den_hi = den_plus if mode == "max" else den_minus
    den_lo = den_minus if mode == "max" else den_plus
    num_hi = num_plus if mode == "max" else num_minus

    phi1 = sat_states(red, num.left)
    phi2 = sat_states(red, num.right)
    if isinstance(den, Until):
        psi1 = sat_states(red, den.left)
        psi2 = sat_states(red, den.right)
    else:
        psi1 = sat_states(red, den.arg)
        psi2 = frozenset()

    exprs: dict[int, DeltaExpr] = {}
    prov: dict[int, dict[Pair, BaseTag]] = {}

    def set_base(s: int, p: Fraction, q: Fraction, tag: BaseTag):
        exprs[s] = DeltaExpr.single(p, q, mode)
        prov[s] = {exprs[s].pairs[0]: tag}

    until_den = isinstance(den, Until)
    for s in topological_states(red):
        if s == reduction.trap or (s not in reduction.stop_states and red.is_absorbing(s)):
            # mass that circulates forever among stopping-free states:
            # no until ever resolves, and G psi1 holds throughout
            if until_den:
                set_base(s, ZERO, ZERO, ("base", None))
            else:
                set_base(s, ZERO, ONE, ("base", None))
            continue
        if until_den:
            if s in phi2:
                v = den_hi[s]
                set_base(s, v, v, ("base", "den", mode))
            elif s in psi2:
                set_base(s, num_hi[s], ONE, ("base", "num", mode))
            elif s not in phi1:
                set_base(s, ZERO, den_lo[s], ("base", "den", flip))
            elif s not in psi1:
                set_base(s, ZERO, ZERO, ("base", None))
            else:
                _recursive_case(red, s, exprs, prov, mode)
        else:
            if s in phi2:
                v = den_hi[s]
                set_base(s, v, v, ("base", "den", mode))
            elif s not in psi1:
                set_base(s, ZERO, ZERO, ("base", None))
            elif s not in phi1:
                set_base(s, ZERO, den_lo[s], ("base", "den", flip))
            else:
                _recursive_case(red, s, exprs, prov, mode)

    return DeltaSystem(exprs=exprs, prov=prov, reduction=reduction, mode=mode, num=num, den=den)


def _recursive_case(red: MarkovModel, s: int, exprs, prov, mode: str):
    child = {t: (exprs[t], prov[t]) for t in red.successors(s)}
    collected: dict[Pair, BaseTag] = {}
    for i, (_, dist) in enumerate(red.choices[s]):
        for pair, tag in _fold_choice(dist, child, mode).items():
            if pair not in collected:
                collected[pair] = ("step", i, tag[1])
    expr = DeltaExpr.of(list(collected), mode)
    exprs[s] = expr
    prov[s] = {pair: collected[pair] for pair in expr.pairs}


def delta_until(
    m: MarkovModel, phi1: PropFormula, phi2: PropFormula, psi1: PropFormula, psi2: PropFormula
) -> dict[int, DeltaExpr]:
    """Spec-facing wrapper: expressions for CP+[phi1 U phi2 | psi1 U psi2]."""
    return delta_system(m, Until(phi1, phi2), Until(psi1, psi2), "max").exprs


def delta_globally(
    m: MarkovModel, phi1: PropFormula, phi2: PropFormula, psi1: PropFormula
) -> dict[int, DeltaExpr]:
    """Spec-facing wrapper: expressions for CP+[phi1 U phi2 | G psi1]."""
    return delta_system(m, Until(phi1, phi2), Globally(psi1), "max").exprs


# ---------------------------------------------------------------------------
# products with status automata: exact P(f1 and f2) on Markov chains and
# optimal bounds on MDPs

_PEND, _SAT, _FAIL, _ALIVE = "P", "S", "F", "A"


def _init_status(path: PathFormula, labels: frozenset[str]) -> str:
    if isinstance(path, Until):
        if eval_prop(path.right, labels):
            return _SAT
        if not eval_prop(path.left, labels):
            return _FAIL
        return _PEND
    return _ALIVE if eval_prop(path.arg, labels) else _FAIL


def _step_status(path: PathFormula, status: str, labels: frozenset[str]) -> str:
    if status in (_SAT, _FAIL):
        return status
    return _init_status(path, labels)


def _is_decided(statuses: tuple[str, ...]) -> tuple[bool, bool]:
    """(rejected, at accept frontier): any failure rejects; the frontier is
    every until satisfied with every globally part still alive."""
    rejected = _FAIL in statuses
    accepted = not rejected and all(st in (_SAT, _ALIVE) for st in statuses)
    return rejected, accepted


def _globally_conjunct(formulas: Sequence[PathFormula]) -> Optional[PropFormula]:
    args = [p.arg for p in formulas if isinstance(p, Globally)]
    if not args:
        return None
    out = args[0]
    for a in args[1:]:
        out = And(out, a)
    return out


def _frontier_values(m: MarkovModel, formulas: Sequence[PathFormula], mode: str) -> list[Fraction]:
    """Value of hitting the accept frontier at each state: the probability
    that every globally-part holds forever from there (1 if none)."""
    g_all = _globally_conjunct(formulas)
    if g_all is None:
        return [ONE] * m.n
    return opt_vector(m, Globally(g_all), mode)


def build_status_product(
    m: MarkovModel, formulas: Sequence[PathFormula], absorb_accepts: bool = True
) -> tuple[MarkovModel, dict[int, tuple[int, tuple[str, ...]]], dict[tuple, int], list[int], list[int]]:
    """Synchronous product of ``m`` with the per-formula status trackers.

    Returns (product model, product→(state, statuses), (state, statuses)→product,
    accepting product states, rejecting product states).  Rejecting states
    are always absorbing; accepting ones only when ``absorb_accepts`` (the
    counterexample streams keep expanding through them).
    """
    start = (m.init, tuple(_init_status(f, m.labels[m.init]) for f in formulas))
    index: dict[tuple, int] = {start: 0}
    info: list[tuple[int, tuple[str, ...]]] = [start]
    accepts: list[int] = []
    rejects: list[int] = []
    queue = [start]
    while queue:
        key = queue.pop()
        s, statuses = key
        rejected, accepted = _is_decided(statuses)
        if rejected or (accepted and absorb_accepts):
            continue
        for _, dist in m.choices[s]:
            for t, _p in dist.items():
                nxt = (t, tuple(_step_status(f, st, m.labels[t]) for f, st in zip(formulas, statuses)))
                if nxt not in index:
                    index[nxt] = len(info)
                    info.append(nxt)
                    queue.append(nxt)
    # second pass: now that all product states exist, build the rows
    choices = []
    for pid, (s, statuses) in enumerate(info):
        rejected, accepted = _is_decided(statuses)
        if rejected:
            rejects.append(pid)
        elif accepted:
            accepts.append(pid)
        if rejected or (accepted and absorb_accepts):
            choices.append((("0", Distribution.dirac(pid)),))
            continue
        per_state = []
        for label, dist in m.choices[s]:
            entries: dict[int, Fraction] = {}
            for t, p in dist.items():
                nxt = (t, tuple(_step_status(f, st, m.labels[t]) for f, st in zip(formulas, statuses)))
                tid = index[nxt]
                entries[tid] = entries.get(tid, ZERO) + p
            per_state.append((label, Distribution.of(entries)))
        choices.append(tuple(per_state))
    names = tuple(f"{m.states[s]}#{''.join(st)}" for s, st in info)
    labels = tuple(m.labels[s] for s, _ in info)
    product = MarkovModel(m.kind, names, 0, labels, tuple(choices))
    return product, dict(enumerate(info)), index, accepts, rejects


def mc_conjunction_prob(m: MarkovModel, path1: PathFormula, path2: PathFormula) -> Fraction:
    """Exact P(path1 and path2) on a Markov chain."""
    if not m.is_mc:
        raise ModelError(["mc_conjunction_prob expects a Markov chain"])
    formulas = [path1, path2]
    product, info, _, accepts, _ = build_status_product(m, formulas)
    values = _frontier_values(m, formulas, "max")  # single scheduler: mode moot
    terminal = {pid: values[info[pid][0]] for pid in accepts}
    if not terminal:
        return ZERO
    return absorption_values_mc(product, terminal)[0]


def mc_path_prob(m: MarkovModel, path: PathFormula) -> Fraction:
    return mc_conjunction_prob(m, path, path)


def _opt_conjunction_mdp(m: MarkovModel, f1: PathFormula, f2: PathFormula, mode: str) -> Fraction:
    """P+ or P- of a conjunction of two path formulas over an MDP, via the
    status product with a terminal jump weighted by the globally-parts."""
    formulas = [f1, f2]
    product, info, _, accepts, _ = build_status_product(m, formulas)
    values = _frontier_values(m, formulas, mode)
    if not accepts:
        return ZERO
    n = product.n
    win, lose = n, n + 1
    states = product.states + ("__win__", "__lose__")
    labels = product.labels + (frozenset(), frozenset())
    choices = list(product.choices)
    for pid in accepts:
        v = values[info[pid][0]]
        if v == 0:
            row = {lose: ONE}
        elif v == 1:
            row = {win: ONE}
        else:
            row = {win: v, lose: ONE - v}
        choices[pid] = (("0", Distribution.of(row)),)
    choices.append((("0", Distribution.dirac(win)),))
    choices.append((("0", Distribution.dirac(lose)),))
    lifted = MarkovModel("mdp", states, 0, labels, tuple(choices))
    vec, _ = until_opt(lifted, frozenset(range(lifted.n)), frozenset([win]), mode)
    return vec[0]


def cp_bounds(m: MarkovModel, num: PathFormula, den: PathFormula) -> tuple[Fraction, Fraction]:
    """Cheap sound bounds: lower <= CP+ <= upper in polynomial time."""
    den_plus = opt_prob(m, den, "max")
    den_minus = opt_prob(m, den, "min")
    both_minus = _opt_conjunction_mdp(m, num, den, "min")
    both_plus = _opt_conjunction_mdp(m, num, den, "max")
    lower = both_minus / den_plus if den_plus > 0 else ZERO
    upper = min(ONE, both_plus / den_minus) if den_minus > 0 else ONE
    return lower, upper


# ---------------------------------------------------------------------------
# top level


@dataclass(frozen=True)
class CheckResult:
    verdict: bool
    value: Optional[Fraction] = None
    kind: str = "bool"
    detail: str = ""


def _compare(value: Fraction, op: str, bound: Fraction) -> bool:
    if op == "<":
        return value < bound
    if op == "<=":
        return value <= bound
    if op == ">":
        return value > bound
    return value >= bound


def conditional_value(m: MarkovModel, num: PathFormula, den: PathFormula, mode: str) -> Fraction:
    """CP+ (mode=max) or CP- (mode=min) of num given den."""
    if m.is_mc:
        p_den = mc_path_prob(m, den)
        if p_den == 0:
            return ZERO if mode == "max" else ONE
        return mc_conjunction_prob(m, num, den) / p_den
    if isinstance(num, Globally):
        flip = "min" if mode == "max" else "max"
        return ONE - conditional_value(m, Until(TRUE, Not(num.arg)), den, flip)
    system = delta_system(m, num, den, mode)
    expr = system.exprs[m.init]
    return delta_rmax(expr) if mode == "max" else delta_rmin(expr)


def check_cpctl(m: MarkovModel, f: StateFormula) -> CheckResult:
    """Decide a state formula at the initial state."""
    if isinstance(f, ProbQuery):
        if m.is_mc:
            value = mc_path_prob(m, f.path)
        else:
            mode = "max" if f.op in ("<", "<=") else "min"
            value = opt_prob(m, f.path, mode)
        return CheckResult(_compare(value, f.op, f.bound), value, "prob")
    if isinstance(f, CondQuery):
        mode = "max" if f.op in ("<", "<=") else "min"
        value = conditional_value(m, f.num, f.den, mode)
        return CheckResult(_compare(value, f.op, f.bound), value, "cond")
    if isinstance(f, Not):
        inner = check_cpctl(m, f.arg)
        return CheckResult(not inner.verdict)
    if isinstance(f, And):
        return CheckResult(check_cpctl(m, f.left).verdict and check_cpctl(m, f.right).verdict)
    if isinstance(f, Or):
        return CheckResult(check_cpctl(m, f.left).verdict or check_cpctl(m, f.right).verdict)
    if isinstance(f, (Prop, BoolLit)):
        return CheckResult(eval_prop(f, m.labels[m.init]))
    raise FormulaError(f"cannot check {f!r}")
