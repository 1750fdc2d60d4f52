"""End-user diagnostic artifacts: torrent counterexamples for violated
reachability bounds, partial-leakage certificates, conditional-probability
counterexamples, and high-leakage source reports."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Sequence

from .cpctl import (
    DeltaSystem,
    build_status_product,
    conditional_value,
    delta_rmax,
    delta_system,
    _frontier_values,
)
from .formulas import Globally, Not, PathFormula, PropFormula, TRUE, Until, sat_states
from .graphs import make_absorbing, reach_prob_mc, reduce_mc_acyclic
from .grouping import NormalRegex, TorrentSummary, rails_by_probability, to_regex, torrent_of
from .leakage import (
    CompletePath,
    JointMatrix,
    Trace,
    abstract_internal_sccs,
    complete_paths_descending,
    joint_matrix,
    interactive_joint,
    path_trace,
)
from .models import (
    ONE,
    ZERO,
    Ihs,
    MarkovModel,
    ModelError,
    Prior,
    QleakError,
    prior_of,
    validate_ihs,
)
from .reach import MemorylessScheduler, extract_opt_scheduler, induce_mc

GROWTH_CAP = 100_000


# ---------------------------------------------------------------------------
# torrent counterexamples


@dataclass(frozen=True)
class TorrentCounterexample:
    witnesses: tuple[TorrentSummary, ...]
    total_mass: Fraction
    bound: Fraction
    property: str
    scheduler: Optional[MemorylessScheduler] = None


def torrent_counterexample(
    m: MarkovModel, goal: PropFormula, bound: Fraction, strict: bool = False
) -> Optional[TorrentCounterexample]:
    """Most indicative torrent-counterexample to P<=bound[F goal] (P<bound
    when strict), or None when the property holds.

    On an MDP the maximizing scheduler is extracted first; a counterexample
    of its induced chain is one for the MDP.
    """
    path = Until(TRUE, goal)
    scheduler = None
    chain = m
    if not m.is_mc:
        scheduler = extract_opt_scheduler(m, path, "max")
        chain = induce_mc(m, scheduler)
    goal_states = sat_states(chain, goal)
    total = reach_prob_mc(chain, chain.init, goal_states)
    violated = total >= bound if strict else total > bound
    if not violated:
        return None
    absorbed, _ = make_absorbing(chain, goal_states)
    reduction = reduce_mc_acyclic(absorbed)
    witnesses: list[TorrentSummary] = []
    accumulated = ZERO
    for rail, _mass in rails_by_probability(reduction.chain, goal_states):
        witnesses.append(torrent_of(rail, reduction))
        accumulated += witnesses[-1].mass
        if (accumulated >= bound) if strict else (accumulated > bound):
            break
    relation = "<" if strict else "<="
    return TorrentCounterexample(
        witnesses=tuple(witnesses),
        total_mass=accumulated,
        bound=bound,
        property=f"P{relation}{bound}[ F ... ]",
        scheduler=scheduler,
    )


# ---------------------------------------------------------------------------
# partial-leakage certificates


@dataclass(frozen=True)
class PartialLeakage:
    """Sandwich leak_lower <= true multiplicative leakage <= leak_upper,
    with width sum_i (1 - p_i) / priorVuln over the conditional row masses."""

    partial_joint: JointMatrix
    row_mass: dict[Trace, Fraction]  # conditional mass per secret row
    leak_lower: Fraction
    leak_upper: Fraction
    groups_used: int
    strategy: str


def _group_stream(h: Ihs, strategy: str) -> Iterator[tuple[Trace, Trace, Fraction, str]]:
    if strategy == "paths":
        for path, mass in complete_paths_descending(h):
            trace = path_trace(h, path)
            secret = tuple(a for a in trace if h.is_secret(a))
            observable = tuple(a for a in trace if h.is_observable(a))
            yield secret, observable, mass, _render_path(h, path)
    elif strategy == "regexTerms":
        normal = to_regex(h)
        for term in sorted(normal.terms, key=lambda t: -t.value):
            yield term.secret_trace, term.observable_trace, term.value, term.render()
    elif strategy == "sccGroups":
        abstracted = abstract_internal_sccs(h)
        for path, mass in complete_paths_descending(abstracted):
            trace = path_trace(abstracted, path)
            secret = tuple(a for a in trace if h.is_secret(a))
            observable = tuple(a for a in trace if h.is_observable(a))
            yield secret, observable, mass, _render_path(abstracted, path)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")


def _render_path(h: Ihs, path: CompletePath) -> str:
    if not path:
        return h.states[h.init]
    out = [h.states[path[0][0]]]
    for _src, action, target in path:
        out.append(f"-{action}->")
        out.append(h.states[target])
    return " ".join(out)


def partial_leakage(
    h: Ihs,
    strategy: str,
    epsilon: Optional[Fraction] = None,
    budget: Optional[int] = None,
) -> PartialLeakage:
    """Iteratively add path-group masses to a partial joint matrix and stop
    once the leakage certificate is at most epsilon wide (or the group
    budget runs out)."""
    prior = prior_of(h)
    secrets: tuple[Trace, ...] = tuple((s,) for s in prior.support())
    prior_by_row = {(s,): prior.get(s) for s in prior.support()}
    prior_vuln = prior.max()
    if strategy == "paths" and epsilon is None and budget is None:
        raise ValueError("the paths strategy needs epsilon or a budget to stop")

    cells: dict[tuple[Trace, Trace], Fraction] = {}
    observables: dict[Trace, None] = {}
    row_joint: dict[Trace, Fraction] = {s: ZERO for s in secrets}
    used = 0

    def current() -> tuple[Fraction, Fraction, dict[Trace, Fraction]]:
        post = ZERO
        for o in observables:
            post += max((cells.get((s, o), ZERO) for s in secrets), default=ZERO)
        lower = post / prior_vuln
        row_cond = {s: row_joint[s] / prior_by_row[s] for s in secrets}
        width = sum(((ONE - p) for p in row_cond.values()), ZERO) / prior_vuln
        return lower, lower + width, row_cond

    lower, upper, row_cond = current()
    for secret, observable, mass, _desc in _group_stream(h, strategy):
        if epsilon is not None and upper - lower <= epsilon:
            break
        if budget is not None and used >= budget:
            break
        cells[(secret, observable)] = cells.get((secret, observable), ZERO) + mass
        observables.setdefault(observable)
        row_joint[secret] = row_joint.get(secret, ZERO) + mass
        used += 1
        lower, upper, row_cond = current()
    if epsilon is not None and upper - lower > epsilon:
        raise QleakError(
            f"certificate width {upper - lower} still above epsilon after the stream ended"
        )
    joint = JointMatrix(secrets=secrets, observables=tuple(observables), cells=cells)
    return PartialLeakage(
        partial_joint=joint,
        row_mass=row_cond,
        leak_lower=lower,
        leak_upper=upper,
        groups_used=used,
        strategy=strategy,
    )


# ---------------------------------------------------------------------------
# conditional-probability counterexamples


@dataclass(frozen=True)
class CpctlCounterexample:
    """(Delta1, Delta2) with Delta1 inside Sat(phi and psi), Delta2 inside
    Sat(not psi), certified by ratio = P(Delta1)/(1-P(Delta2)) > bound under
    the emitted scheduler."""

    before: MemorylessScheduler
    continuations: dict[int, MemorylessScheduler]
    delta1: tuple[tuple[tuple[int, ...], Fraction], ...]
    delta2: tuple[tuple[tuple[int, ...], Fraction], ...]
    ratio: Fraction
    cp_value: Fraction


def _walk_provenance(system: DeltaSystem, top_pair) -> tuple[dict[int, int], dict[int, tuple[str, str]]]:
    """Rebuild the scheduler realizing a surviving pair: reduced-model
    choices for the phase before the stopping condition, plus which optimal
    continuation applies at each stopping state (first visit wins)."""
    before: dict[int, int] = {}
    roles: dict[int, tuple[str, str]] = {}
    stack = [(system.reduction.mdp.init, top_pair)]
    visited: set[int] = set()
    while stack:
        s, pair = stack.pop()
        if s in visited:
            continue
        visited.add(s)
        tag = system.prov[s][pair]
        if tag[0] == "base":
            if tag[1] is not None:
                roles[s] = (tag[1], tag[2])
            continue
        _, choice_i, assign = tag
        before[s] = choice_i
        for t, tpair in assign:
            stack.append((t, tpair))
    return before, roles


def _two_phase_chain(
    m: MarkovModel,
    system: DeltaSystem,
    before_red: dict[int, int],
    roles: dict[int, tuple[str, str]],
) -> tuple[MarkovModel, list[int], MemorylessScheduler, dict[int, MemorylessScheduler]]:
    """Induce the Markov chain of the extracted two-phase scheduler.

    Phase b uses the before-map (reduced choices mapped back through the SCC
    interior schedulers); upon first hitting a stopping state t the chain
    switches to the optimal memoryless continuation recorded for t.
    """
    reduction = system.reduction
    stop = reduction.stop_states
    before = [0] * m.n
    for s, i in before_red.items():
        if s == reduction.trap:
            continue
        origin = reduction.choice_origin.get((s, i))
        if origin is None:
            before[s] = i
        else:
            for u, j in origin.items():
                before[u] = j
    before_sched = MemorylessScheduler(tuple(before))

    continuations: dict[int, MemorylessScheduler] = {}
    for t, (role, mode) in roles.items():
        formula = system.num if role == "num" else system.den
        continuations[t] = extract_opt_scheduler(m, formula, mode)
    fallback = MemorylessScheduler(tuple([0] * m.n))

    # phase-tagged chain: ('b',) or ('a', stop-state entered first)
    def phase_of(s: int, phase: tuple) -> tuple:
        if phase[0] == "b" and s in stop:
            return ("a", s)
        return phase

    def row_of(key: tuple) -> dict[tuple, Fraction]:
        s, phase = key
        sched = before_sched if phase[0] == "b" else continuations.get(phase[1], fallback)
        dist = m.choices[s][sched[s]][1]
        row: dict[tuple, Fraction] = {}
        for t, p in dist.items():
            nxt = (t, phase_of(t, phase))
            row[nxt] = row.get(nxt, ZERO) + p
        return row

    start = (m.init, phase_of(m.init, ("b",)))
    index: dict[tuple, int] = {start: 0}
    info: list[tuple[int, tuple]] = [start]
    queue = [start]
    while queue:
        key = queue.pop()
        for nxt in row_of(key):
            if nxt not in index:
                index[nxt] = len(info)
                info.append(nxt)
                queue.append(nxt)
    rows = [
        {index[nxt]: p for nxt, p in row_of(key).items()} for key in info
    ]
    chain = MarkovModel.mc(
        [f"{m.states[s]}@{phase[0]}" for s, phase in info],
        0,
        [m.labels[s] for s, _ in info],
        rows,
    )
    projection = [s for s, _ in info]
    return chain, projection, before_sched, continuations


def _cone_stream(
    chain: MarkovModel, formulas: Sequence[PathFormula], accepting: bool
) -> Iterator[tuple[tuple[int, ...], Fraction]]:
    """First-hit finite paths of ``chain`` whose cones surely satisfy (or
    surely refute) the conjunction, by non-increasing mass, lazily.

    accepting=True targets product states with every until satisfied and the
    remaining safety value 1; accepting=False targets states where some
    formula has definitely failed.
    """
    product, info, _, accepts, rejects = build_status_product(
        chain, formulas, absorb_accepts=False
    )
    if accepting:
        values = _frontier_values(chain, formulas, "max")
        targets = {pid for pid in accepts if values[info[pid][0]] == 1}
    else:
        targets = set(rejects)
    if not targets:
        return
    can_reach = _can_reach(product, targets)
    if 0 not in can_reach:
        return
    heap: list[tuple[Fraction, tuple[int, ...]]] = [(Fraction(-1), (0,))]
    while heap:
        neg_mass, path = heapq.heappop(heap)
        mass = -neg_mass
        pid = path[-1]
        if pid in targets:
            yield tuple(info[p][0] for p in path), mass
            continue
        for t, p in product.row(pid).items():
            if t in can_reach and t != pid:
                heapq.heappush(heap, (-(mass * p), path + (t,)))


def _can_reach(m: MarkovModel, targets: set[int]) -> set[int]:
    pred: list[list[int]] = [[] for _ in range(m.n)]
    for s in range(m.n):
        for t in m.successors(s):
            pred[t].append(s)
    seen = set(targets)
    stack = list(targets)
    while stack:
        t = stack.pop()
        for s in pred[t]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def cpctl_counterexample(
    m: MarkovModel, num: PathFormula, den: PathFormula, bound: Fraction
) -> Optional[CpctlCounterexample]:
    """Counterexample to CP<=bound[num|den], or None when the property holds.

    The CP+-optimal scheduler is rebuilt from the pair-expression
    provenance, its chain induced, and Delta1/Delta2 grown greedily from the
    highest-mass sure cones until P(Delta1)/(1-P(Delta2)) exceeds the bound.
    """
    cp_plus = conditional_value(m, num, den, "max")
    if cp_plus <= bound:
        return None
    if m.is_mc:
        chain, projection = m, list(range(m.n))
        before = MemorylessScheduler(tuple([0] * m.n))
        continuations: dict[int, MemorylessScheduler] = {}
    else:
        if isinstance(num, Globally):
            raise ModelError(["counterexample extraction needs an until on the left"])
        system = delta_system(m, num, den, "max")
        expr = system.exprs[m.init]
        best = max(
            (pair for pair in expr.pairs if pair[1] != 0),
            key=lambda pr: (pr[0] / pr[1], pr),
        )
        before_red, roles = _walk_provenance(system, best)
        chain, projection, before, continuations = _two_phase_chain(
            m, system, before_red, roles
        )

    stream1 = _cone_stream(chain, [num, den], accepting=True)
    stream2 = _cone_stream(chain, [den], accepting=False)
    next1 = next(stream1, None)
    next2 = next(stream2, None)
    delta1: list[tuple[tuple[int, ...], Fraction]] = []
    delta2: list[tuple[tuple[int, ...], Fraction]] = []
    p1 = p2 = ZERO

    def ratio(a: Fraction, b: Fraction) -> Fraction:
        return a / (ONE - b) if b < 1 else ONE

    for _ in range(GROWTH_CAP):
        if ratio(p1, p2) > bound:
            break
        if next1 is None and next2 is None:
            raise QleakError(
                "the extracted scheduler does not certify the violation "
                f"(reached {ratio(p1, p2)}, needed > {bound})"
            )
        gain1 = ratio(p1 + next1[1], p2) if next1 is not None else None
        gain2 = ratio(p1, p2 + next2[1]) if next2 is not None else None
        if gain2 is None or (gain1 is not None and gain1 >= gain2):
            path, mass = next1
            delta1.append((tuple(projection[s] for s in path), mass))
            p1 += mass
            next1 = next(stream1, None)
        else:
            path, mass = next2
            delta2.append((tuple(projection[s] for s in path), mass))
            p2 += mass
            next2 = next(stream2, None)
    else:
        raise QleakError("counterexample growth exceeded the candidate cap")
    return CpctlCounterexample(
        before=before,
        continuations=continuations,
        delta1=tuple(delta1),
        delta2=tuple(delta2),
        ratio=ratio(p1, p2),
        cp_value=cp_plus,
    )


# ---------------------------------------------------------------------------
# high-leakage sources


@dataclass(frozen=True)
class LeakWitness:
    description: str
    mass: Fraction
    hint: Optional[tuple[str, str, str, Fraction]]  # (src, action, dst, prob)


@dataclass(frozen=True)
class ObservableSources:
    observable: Trace
    best_secrets: tuple[Trace, ...]  # more than one means a tie
    joint_mass: Fraction
    witnesses: tuple[LeakWitness, ...]


@dataclass(frozen=True)
class SourcesReport:
    entries: tuple[ObservableSources, ...]


def leakage_sources(h: Ihs, top_k: int = 3) -> SourcesReport:
    """For every observable trace: the secret maximizing the joint column,
    the highest-mass SCC-abstracted path groups witnessing that cell, and
    the strongest visible transition of the top witness as a debugging
    hint."""
    joint = joint_matrix(h) if not validate_ihs(h) else interactive_joint(h)
    abstracted = abstract_internal_sccs(h)
    groups: dict[tuple[Trace, Trace], list[tuple[CompletePath, Fraction]]] = {}
    for path, mass in complete_paths_descending(abstracted):
        trace = path_trace(abstracted, path)
        key = (
            tuple(a for a in trace if h.is_secret(a)),
            tuple(a for a in trace if h.is_observable(a)),
        )
        groups.setdefault(key, []).append((path, mass))

    entries = []
    for o in joint.observables:
        column = {s: joint.get(s, o) for s in joint.secrets}
        top = max(column.values())
        best = tuple(s for s in joint.secrets if column[s] == top)
        witnesses = []
        for path, mass in groups.get((best[0], o), [])[:top_k]:
            hint = None
            visible = [
                (src, action, dst, p)
                for (src, action, dst) in path
                for (a2, d2), p in abstracted.trans[src].items()
                if (a2, d2) == (action, dst) and not h.is_internal(action)
            ]
            if visible:
                src, action, dst, p = max(visible, key=lambda e: e[3])
                hint = (abstracted.states[src], action, abstracted.states[dst], p)
            witnesses.append(
                LeakWitness(
                    description=_render_path(abstracted, path), mass=mass, hint=hint
                )
            )
        entries.append(
            ObservableSources(
                observable=o,
                best_secrets=best,
                joint_mass=top,
                witnesses=tuple(witnesses),
            )
        )
    return SourcesReport(tuple(entries))
