"""Exact channel and joint matrices for information-hiding systems, and the
associated vulnerability/leakage quantities.

The core is one linear system in the variables x_q^t, the probability of
terminating from state q with remaining visible trace t.  Secrets-at-start
systems, variable-prior systems and interactive systems (secrets interleaved
with observables) all reduce to it; the variables are grouped per trace
suffix, so each block shares the same internal-step matrix and is solved
with one factorization-free multi-RHS elimination per suffix length.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .linalg import solve_multi
from .models import (
    ONE,
    ZERO,
    Distribution,
    Ihs,
    ModelError,
    Prior,
    prior_of,
    require_valid_ihs,
    validate_interactive_ihs,
)
from .scc import strongly_connected_components

Trace = tuple[str, ...]

SINK_STATE_NAME = "__end__"
SINK_ACTION = "__done__"


@dataclass(frozen=True)
class JointMatrix:
    """P(secret trace, observable trace); total mass 1 for a terminating
    system.  Missing cells are zero."""

    secrets: tuple[Trace, ...]
    observables: tuple[Trace, ...]
    cells: dict[tuple[Trace, Trace], Fraction]

    def get(self, s: Trace, o: Trace) -> Fraction:
        return self.cells.get((s, o), ZERO)

    def row_mass(self, s: Trace) -> Fraction:
        return sum((v for (rs, _), v in self.cells.items() if rs == s), ZERO)

    def row_masses(self) -> dict[Trace, Fraction]:
        return {s: self.row_mass(s) for s in self.secrets}

    def total(self) -> Fraction:
        return sum(self.cells.values(), ZERO)


@dataclass(frozen=True)
class ChannelMatrix:
    """Rows conditioned on the secret: every row sums to exactly 1."""

    secrets: tuple[Trace, ...]
    observables: tuple[Trace, ...]
    cells: dict[tuple[Trace, Trace], Fraction]
    prior: tuple[tuple[Trace, Fraction], ...]

    def get(self, s: Trace, o: Trace) -> Fraction:
        return self.cells.get((s, o), ZERO)


@dataclass(frozen=True)
class LeakageReport:
    prior_vuln: Fraction
    post_vuln: Fraction
    multiplicative: Fraction
    additive: Fraction


# ---------------------------------------------------------------------------
# trace universe and the x_q^t system


def _with_sink(h: Ihs) -> Ihs:
    """Unique-final-state form: every terminal state steps internally into a
    fresh sink.  Preserves all visible trace probabilities."""
    sink = h.n
    states = h.states + (SINK_STATE_NAME,)
    trans = []
    for q in range(h.n):
        dist = h.trans[q]
        if h.variable_prior and q == h.init:
            trans.append(None)
        elif dist is None or not dist.entries:
            trans.append(Distribution.dirac((SINK_ACTION, sink)))
        else:
            trans.append(dist)
    trans.append(None)
    return Ihs(
        states=states,
        init=h.init,
        secret_actions=h.secret_actions,
        observable_actions=h.observable_actions,
        trans=tuple(trans),
        variable_prior=h.variable_prior,
        init_branches=h.init_branches,
    )


def _visible(h: Ihs, action: str) -> bool:
    return h.is_secret(action) or h.is_observable(action)


def _complete_traces(h: Ihs) -> list[Trace]:
    """All visible traces of complete runs, in a deterministic order.

    Finite because visible actions cannot occur on cycles: traces are
    constant across each internal SCC and recurse along the condensation.
    """
    succ = h.graph()
    comps = strongly_connected_components(succ)
    comp_of = {q: k for k, comp in enumerate(comps) for q in comp}
    traces: list[Optional[list[Trace]]] = [None] * len(comps)
    for k, comp in enumerate(comps):  # reverse topological: successors first
        found: dict[Trace, None] = {}
        if any(h.is_terminal(q) for q in comp):
            found[()] = None
        for q in sorted(comp):
            if h.is_terminal(q):
                continue
            entries = (
                [((a, t), ONE) for a, t in h.init_branches]
                if h.variable_prior and q == h.init
                else list(h.trans[q].items())
            )
            for (action, target), _p in entries:
                if _visible(h, action):
                    for tail in traces[comp_of[target]]:
                        found.setdefault((action,) + tail)
                elif comp_of[target] != k:
                    for tail in traces[comp_of[target]]:
                        found.setdefault(tail)
        traces[k] = list(found)
    return traces[comp_of[h.init]]


def trace_masses(h: Ihs) -> dict[Trace, Fraction]:
    """Probability of each complete visible trace, by exact linear solving."""
    if h.variable_prior:
        raise ModelError(["trace masses need a fixed prior"])
    hs = _with_sink(h)
    sink = hs.n - 1
    complete = _complete_traces(hs)
    suffixes: dict[Trace, None] = {}
    for trace in complete:
        for i in range(len(trace) + 1):
            suffixes.setdefault(trace[i:])
    by_len: dict[int, list[Trace]] = {}
    for suf in suffixes:
        by_len.setdefault(len(suf), []).append(suf)

    n = hs.n
    # shared left-hand side: x_q - sum of internal steps; sink row pinned
    a = [[ONE if i == j else ZERO for j in range(n)] for i in range(n)]
    for q in range(n):
        if q == sink or hs.trans[q] is None:
            continue
        for (action, target), p in hs.trans[q].items():
            if not _visible(hs, action):
                a[q][target] -= p

    solution: dict[Trace, list[Fraction]] = {}
    for length in sorted(by_len):
        batch = sorted(by_len[length])
        columns = []
        for suf in batch:
            b = [ZERO] * n
            b[sink] = ONE if suf == () else ZERO
            if suf:
                head, tail = suf[0], suf[1:]
                for q in range(n):
                    if q == sink or hs.trans[q] is None:
                        continue
                    for (action, target), p in hs.trans[q].items():
                        if action == head:
                            b[q] += p * solution[tail][target]
            columns.append(b)
        for suf, col in zip(batch, solve_multi(a, columns)):
            solution[suf] = col
    return {trace: solution[trace][hs.init] for trace in complete}


def _projections(h: Ihs, trace: Trace) -> tuple[Trace, Trace]:
    secret = tuple(a for a in trace if h.is_secret(a))
    observable = tuple(a for a in trace if h.is_observable(a))
    return secret, observable


def _trace_sort_key(order: Mapping[str, int]):
    return lambda t: (len(t), tuple(order[a] for a in t))


def _joint_from_masses(h: Ihs, masses: Mapping[Trace, Fraction]) -> JointMatrix:
    cells: dict[tuple[Trace, Trace], Fraction] = {}
    secrets: dict[Trace, None] = {}
    observables: dict[Trace, None] = {}
    for trace, mass in masses.items():
        s, o = _projections(h, trace)
        secrets.setdefault(s)
        observables.setdefault(o)
        cells[(s, o)] = cells.get((s, o), ZERO) + mass
    s_order = {a: i for i, a in enumerate(h.secret_actions)}
    o_order = {a: i for i, a in enumerate(h.observable_actions)}
    return JointMatrix(
        secrets=tuple(sorted(secrets, key=_trace_sort_key(s_order))),
        observables=tuple(sorted(observables, key=_trace_sort_key(o_order))),
        cells={k: v for k, v in cells.items() if v > 0},
    )


def joint_matrix(h: Ihs) -> JointMatrix:
    """Joint probabilities P([s] ∩ [o]) of a secrets-at-start system."""
    require_valid_ihs(h)
    if h.variable_prior:
        raise ModelError(["joint matrix needs a fixed prior; instantiate one first"])
    return _joint_from_masses(h, trace_masses(h))


def channel_matrix(h: Ihs) -> ChannelMatrix:
    """Conditional probabilities P(o|s), the joint divided by the prior."""
    joint = joint_matrix(h)
    prior = prior_of(h)
    cells = {}
    prior_rows = []
    for s in joint.secrets:
        p = prior.get(s[0]) if len(s) == 1 else ZERO
        if p == 0:
            raise ModelError([f"secret {'.'.join(s)} has zero prior probability"])
        prior_rows.append((s, p))
        for o in joint.observables:
            v = joint.get(s, o)
            if v > 0:
                cells[(s, o)] = v / p
    return ChannelMatrix(joint.secrets, joint.observables, cells, tuple(prior_rows))


def interactive_joint(h: Ihs) -> JointMatrix:
    """Joint matrix over (secret trace, observable trace) pairs for systems
    where secrets may interleave with observables.  The derived prior is the
    row mass; conditionals derived from it are prior-dependent, which is why
    no channel matrix is defined here."""
    report = validate_interactive_ihs(h)
    if report:
        raise ModelError(report)
    return _joint_from_masses(h, trace_masses(h))


# ---------------------------------------------------------------------------
# vulnerability and leakage


def leakage_from_joint(joint: JointMatrix, prior_rows: Mapping[Trace, Fraction]) -> LeakageReport:
    prior_vuln = max(prior_rows.values())
    post_vuln = sum(
        (max((joint.get(s, o) for s in joint.secrets), default=ZERO) for o in joint.observables),
        ZERO,
    )
    return LeakageReport(
        prior_vuln=prior_vuln,
        post_vuln=post_vuln,
        multiplicative=post_vuln / prior_vuln,
        additive=post_vuln - prior_vuln,
    )


def leakage(joint: JointMatrix, prior: Prior) -> LeakageReport:
    """One-try vulnerability before/after observation, with the quotient and
    difference leakages."""
    rows = {s: (prior.get(s[0]) if len(s) == 1 else ZERO) for s in joint.secrets}
    if any(v == 0 for v in rows.values()):
        rows = joint.row_masses()
    return leakage_from_joint(joint, rows)


def interactive_leakage(joint: JointMatrix) -> tuple[dict[Trace, Fraction], LeakageReport]:
    rows = joint.row_masses()
    return rows, leakage_from_joint(joint, rows)


# ---------------------------------------------------------------------------
# variable a priori


def instantiate_prior(h: Ihs, prior: Prior) -> Ihs:
    """Close a variable-prior system under a concrete full-support prior."""
    if not h.variable_prior:
        raise ModelError(["instantiate_prior expects a variable-prior system"])
    support = set(prior.support())
    declared = set(h.secret_actions)
    if support != declared or any(prior.get(s) == 0 for s in h.secret_actions):
        raise ModelError(["prior support does not match the declared secrets"])
    branch = dict(h.init_branches)
    dist = Distribution.of({(s, branch[s]): prior.get(s) for s in h.secret_actions})
    trans = list(h.trans)
    trans[h.init] = dist
    return Ihs(
        states=h.states,
        init=h.init,
        secret_actions=h.secret_actions,
        observable_actions=h.observable_actions,
        trans=tuple(trans),
        variable_prior=False,
        init_branches=(),
    )


def max_leakage(h: Ihs, mode: str) -> tuple[Fraction, Prior]:
    """Maximum leakage over all priors of a variable-prior system.

    Multiplicative leakage peaks at the uniform prior and equals the sum of
    the column maxima of the (prior-invariant) channel matrix; additive
    leakage peaks at a corner-point prior, found by enumerating all
    2^|secrets|-1 of them.
    """
    if not h.variable_prior:
        raise ModelError(["max_leakage expects a variable-prior system"])
    secrets = h.secret_actions
    if len(secrets) > 20:
        raise ModelError([f"{2 ** len(secrets) - 1} corner points is beyond the enumeration guard"])
    uniform = Prior.uniform(secrets)
    channel = channel_matrix(instantiate_prior(h, uniform))
    if mode == "mult":
        value = sum(
            (max(channel.get(s, o) for s in channel.secrets) for o in channel.observables),
            ZERO,
        )
        return value, uniform
    if mode != "add":
        raise ValueError(f"mode must be mult or add, not {mode!r}")
    best: Optional[Fraction] = None
    best_subset: tuple[Trace, ...] = ()
    subsets = []
    m = len(channel.secrets)
    for size in range(1, m + 1):
        subsets.extend(_subsets_of_size(channel.secrets, size))
    for subset in subsets:
        kappa = Fraction(len(subset))
        post = sum(
            (max(channel.get(s, o) for s in subset) for o in channel.observables),
            ZERO,
        )
        value = (post - 1) / kappa
        if best is None or value > best:
            best, best_subset = value, subset
    assert best is not None
    argmax = Prior.of({s[0]: Fraction(1, len(best_subset)) for s in best_subset})
    return best, argmax


def _subsets_of_size(items: Sequence[Trace], size: int) -> list[tuple[Trace, ...]]:
    from itertools import combinations

    return [tuple(c) for c in combinations(items, size)]


# ---------------------------------------------------------------------------
# SCC abstraction and path streams (grouping substrate for the approximation
# and debugging reports)


def abstract_internal_sccs(h: Ihs) -> Ihs:
    """Collapse every internal SCC: entry states jump straight to the SCC's
    exit transitions, weighted by the expected number of visits (the visible
    behaviour is unchanged because only internal actions live on cycles)."""
    if h.variable_prior:
        raise ModelError(["abstract a fixed-prior system"])
    succ = h.graph()
    comps = [c for c in strongly_connected_components(succ) if len(c) > 1 or c[0] in succ[c[0]]]
    trans = list(h.trans)
    for comp in comps:
        members = sorted(comp)
        member_set = set(members)
        index = {q: i for i, q in enumerate(members)}
        k = len(members)
        # I - T over the SCC, T the internal sub-chain
        a = [[ONE if i == j else ZERO for j in range(k)] for i in range(k)]
        exits: list[tuple[int, str, int, Fraction]] = []  # (member, action, target, prob)
        for q in members:
            for (action, target), p in h.trans[q].items():
                if target in member_set and h.is_internal(action):
                    a[index[q]][index[target]] -= p
                else:
                    exits.append((q, action, target, p))
        entries = sorted(
            q
            for q in members
            if q == h.init
            or any(
                target == q
                for s in range(h.n)
                if s not in member_set and h.trans[s] is not None
                for (_a, target), _p in h.trans[s].items()
            )
        )
        unit_cols = [[ONE if i == index[q] else ZERO for i in range(k)] for q in entries]
        greens = solve_multi([list(col) for col in zip(*a)], unit_cols)
        for entry, green in zip(entries, greens):
            merged: dict[tuple[str, int], Fraction] = {}
            for q, action, target, p in exits:
                key = (action, target)
                merged[key] = merged.get(key, ZERO) + green[index[q]] * p
            trans[entry] = Distribution.of(merged)
        for q in members:
            if q not in entries:
                trans[q] = None
    return Ihs(
        states=h.states,
        init=h.init,
        secret_actions=h.secret_actions,
        observable_actions=h.observable_actions,
        trans=tuple(trans),
    )


CompletePath = tuple[tuple[int, str, int], ...]  # (source, action, target) steps


def complete_paths_descending(h: Ihs) -> Iterator[tuple[CompletePath, Fraction]]:
    """Complete paths of a fixed-prior system, lazily, by non-increasing
    probability (exact Fraction ordering; insertion order breaks ties)."""
    if h.variable_prior:
        raise ModelError(["path enumeration needs a fixed prior"])
    counter = 0
    heap: list[tuple[Fraction, int, CompletePath, int]] = [(Fraction(-1), counter, (), h.init)]
    while heap:
        neg_mass, _, path, q = heapq.heappop(heap)
        mass = -neg_mass
        if h.is_terminal(q):
            yield path, mass
            continue
        for (action, target), p in h.trans[q].items():
            counter += 1
            heapq.heappush(
                heap, (-(mass * p), counter, path + ((q, action, target),), target)
            )


def path_trace(h: Ihs, path: CompletePath) -> Trace:
    return tuple(action for _, action, _ in path if _visible(h, action))
