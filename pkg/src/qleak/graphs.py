"""SCC decomposition, absorbing transforms, exact MC reachability, and the
acyclic reductions of Markov chains and MDPs.

Everything here is exact: reachability probabilities come from Gaussian
elimination over rationals, never from iterative numerics.  Reduced models
keep the original state universe (states dropped by a reduction become
unreachable self-loops) so rails, torrents and labels stay aligned with the
original model.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterable, Optional, Sequence

from .linalg import solve_multi
from .models import ONE, ZERO, Distribution, MarkovModel, ModelError, QleakError
from .scc import strongly_connected_components

DEFAULT_SCHEDULER_LIMIT = 2**20


class SchedulerLimitError(QleakError):
    pass


def scheduler_limit() -> int:
    value = os.environ.get("QLEAK_SCHEDULER_LIMIT")
    return int(value) if value else DEFAULT_SCHEDULER_LIMIT


@dataclass(frozen=True)
class SccDecomposition:
    """components are in reverse topological order: edges leaving
    components[i] enter components[j] with j < i.  A component is trivial
    iff it is a singleton without a self-loop or an absorbing state."""

    components: tuple[tuple[int, ...], ...]
    component_of: tuple[int, ...]
    trivial: tuple[bool, ...]

    def nontrivial(self) -> list[int]:
        return [k for k, t in enumerate(self.trivial) if not t]


def scc_decompose(m: MarkovModel) -> SccDecomposition:
    succ = m.graph()
    comps = strongly_connected_components(succ)
    component_of = [0] * m.n
    for k, comp in enumerate(comps):
        for s in comp:
            component_of[s] = k
    trivial = []
    for comp in comps:
        if len(comp) > 1:
            trivial.append(False)
        else:
            s = comp[0]
            trivial.append(s not in succ[s] or m.is_absorbing(s))
    return SccDecomposition(
        components=tuple(tuple(c) for c in comps),
        component_of=tuple(component_of),
        trivial=tuple(trivial),
    )


def _backward_reachable(m: MarkovModel, goal: Iterable[int]) -> set[int]:
    pred: list[list[int]] = [[] for _ in range(m.n)]
    for s in range(m.n):
        for t in m.successors(s):
            pred[t].append(s)
    seen = set(goal)
    stack = list(seen)
    while stack:
        t = stack.pop()
        for s in pred[t]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def make_absorbing(m: MarkovModel, goal: Iterable[int]) -> tuple[MarkovModel, frozenset[int]]:
    """Make goal states, and states that cannot reach the goal, absorbing.

    "Cannot reach" is decided on the graph, not numerically.  Returns the
    transformed model and the set of states with positive reach probability.
    """
    goal_set = set(goal)
    sat_f = frozenset(_backward_reachable(m, goal_set))
    choices = []
    for s in range(m.n):
        if s in goal_set or s not in sat_f:
            choices.append((("0", Distribution.dirac(s)),))
        else:
            choices.append(m.choices[s])
    return (
        MarkovModel(m.kind, m.states, m.init, m.labels, tuple(choices)),
        sat_f,
    )


def reach_vector_mc(m: MarkovModel, goal: Iterable[int]) -> list[Fraction]:
    """Exact reachability probabilities of ``goal`` from every state of an MC.

    The linear system is restricted to states that can reach the goal, which
    pins every other state to 0 and so selects the minimal solution.
    """
    goal_set = set(goal)
    can_reach = _backward_reachable(m, goal_set)
    unknowns = [s for s in range(m.n) if s in can_reach and s not in goal_set]
    idx = {s: i for i, s in enumerate(unknowns)}
    a = [[ONE if i == j else ZERO for j in range(len(unknowns))] for i in range(len(unknowns))]
    b = [ZERO] * len(unknowns)
    for s in unknowns:
        i = idx[s]
        for t, p in m.row(s).items():
            if t in goal_set:
                b[i] += p
            elif t in idx:
                a[i][idx[t]] -= p
    solution = solve_multi(a, [b])[0] if unknowns else []
    out = [ZERO] * m.n
    for s in goal_set:
        out[s] = ONE
    for s, x in zip(unknowns, solution):
        out[s] = x
    return out


def reach_prob_mc(m: MarkovModel, source: int, goal: Iterable[int]) -> Fraction:
    goal_set = set(goal)
    if source in goal_set:
        return ONE
    return reach_vector_mc(m, goal_set)[source]


def absorption_values_mc(m: MarkovModel, terminal: dict[int, Fraction]) -> list[Fraction]:
    """Expected terminal payoff: from every state, the probability-weighted
    value of the first terminal state hit (terminal states are absorbing by
    construction of the caller).  Generalizes reach_vector_mc, which is the
    all-ones special case."""
    positive = [s for s, v in terminal.items() if v > 0]
    can_reach = _backward_reachable(m, positive)
    unknowns = [s for s in range(m.n) if s in can_reach and s not in terminal]
    idx = {s: i for i, s in enumerate(unknowns)}
    a = [[ONE if i == j else ZERO for j in range(len(unknowns))] for i in range(len(unknowns))]
    b = [ZERO] * len(unknowns)
    for s in unknowns:
        i = idx[s]
        for t, p in m.row(s).items():
            if t in terminal:
                b[i] += p * terminal[t]
            elif t in idx:
                a[i][idx[t]] -= p
    solution = solve_multi(a, [b])[0] if unknowns else []
    out = [ZERO] * m.n
    for s, v in terminal.items():
        out[s] = v
    for s, x in zip(unknowns, solution):
        out[s] = x
    return out


# ---------------------------------------------------------------------------
# acyclic reduction of MCs (rails/torrents substrate)


@dataclass(frozen=True)
class SccInterface:
    """Input/output summary of one nontrivial SCC of an MC."""

    members: frozenset[int]
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    reach: dict[tuple[int, int], Fraction]  # (input, output) -> probability


@dataclass(frozen=True)
class McReduction:
    original: MarkovModel
    chain: MarkovModel  # acyclic; same state universe
    interfaces: dict[int, SccInterface]  # keyed by input state
    scc: SccDecomposition  # of the original chain

    def scc_equivalent(self, s: int, t: int) -> bool:
        return self.scc.component_of[s] == self.scc.component_of[t]


def _scc_sub_chain(m: MarkovModel, members: Sequence[int], outputs: Sequence[int]) -> MarkovModel:
    local = list(members) + [t for t in outputs if t not in members]
    index = {s: i for i, s in enumerate(local)}
    rows = []
    for s in local:
        if s in members and not (s in outputs):
            rows.append({index[t]: p for t, p in m.row(s).items()})
        else:
            rows.append({index[s]: ONE})
    return MarkovModel.mc(
        [m.states[s] for s in local], 0, [m.labels[s] for s in local], rows
    )


def reduce_mc_acyclic(m: MarkovModel) -> McReduction:
    """Replace every nontrivial SCC by its input states carrying exact
    input-to-output reachability rows (absorbing when there is no way out)."""
    if not m.is_mc:
        raise ModelError(["reduce_mc_acyclic expects a Markov chain"])
    dec = scc_decompose(m)
    new_rows: dict[int, Distribution] = {}
    interfaces: dict[int, SccInterface] = {}
    dropped: set[int] = set()
    for k in dec.nontrivial():
        members = set(dec.components[k])
        inputs = sorted(
            t
            for t in members
            if t == m.init
            or any(t in m.successors(s) for s in range(m.n) if s not in members)
        )
        outputs = sorted(
            {t for s in members for t in m.successors(s) if t not in members}
        )
        sub = _scc_sub_chain(m, sorted(members), outputs)
        local = {name: i for i, name in enumerate(sub.states)}
        reach: dict[tuple[int, int], Fraction] = {}
        for t in outputs:
            vec = reach_vector_mc(sub, [local[m.states[t]]])
            for s in inputs:
                reach[(s, t)] = vec[local[m.states[s]]]
        for s in inputs:
            if outputs:
                row = {t: reach[(s, t)] for t in outputs if reach[(s, t)] > 0}
                total = sum(row.values(), ZERO)
                if total != 1:
                    raise ModelError(
                        [f"SCC at {m.states[s]} leaks probability mass {1 - total}"]
                    )
                new_rows[s] = Distribution.of(row)
            else:
                new_rows[s] = Distribution.dirac(s)
            interfaces[s] = SccInterface(
                members=frozenset(members),
                inputs=tuple(inputs),
                outputs=tuple(outputs),
                reach=reach,
            )
        dropped |= members - set(inputs)
    choices = []
    for s in range(m.n):
        if s in new_rows:
            choices.append((("0", new_rows[s]),))
        elif s in dropped:
            choices.append((("0", Distribution.dirac(s)),))
        else:
            choices.append(m.choices[s])
    chain = MarkovModel("mc", m.states, m.init, m.labels, tuple(choices))
    return McReduction(original=m, chain=chain, interfaces=interfaces, scc=dec)


# ---------------------------------------------------------------------------
# acyclic reduction of MDPs (conditional-probability substrate)

TRAP_STATE_NAME = "__trap__"


@dataclass(frozen=True)
class MdpReduction:
    """Acyclic MDP over the original states (+ one optional trap state).

    ``choice_origin[(s, i)]`` maps an input state's i-th choice back to the
    memoryless scheduler of the SCC interior that produced it (state -> choice
    index, for interior states), or ``None`` for choices kept verbatim.
    """

    original: MarkovModel
    mdp: MarkovModel
    stop_states: frozenset[int]
    trap: Optional[int]
    choice_origin: dict[tuple[int, int], Optional[dict[int, int]]]


def absorb_states(m: MarkovModel, stop: Iterable[int]) -> MarkovModel:
    stop_set = set(stop)
    choices = tuple(
        (("0", Distribution.dirac(s)),) if s in stop_set else m.choices[s]
        for s in range(m.n)
    )
    return MarkovModel(m.kind, m.states, m.init, m.labels, choices)


def reduce_mdp_acyclic(
    m: MarkovModel, stop: Iterable[int], limit: Optional[int] = None
) -> MdpReduction:
    """Absorb the stopping condition, then replace each nontrivial SCC by its
    input states, one distribution per deterministic memoryless scheduler of
    the SCC interior.  Mass a scheduler traps inside its SCC goes to a
    synthetic absorbing trap state so rows still sum to 1 exactly."""
    limit = scheduler_limit() if limit is None else limit
    stop_set = frozenset(stop)
    absorbed = absorb_states(m, stop_set)
    dec = scc_decompose(absorbed)

    trap_needed = False
    new_choices: dict[int, list[tuple[str, dict[int, Fraction]]]] = {}
    choice_origin: dict[tuple[int, int], Optional[dict[int, int]]] = {}
    dropped: set[int] = set()

    for k in dec.nontrivial():
        members = sorted(dec.components[k])
        member_set = set(members)
        inputs = sorted(
            t
            for t in member_set
            if t == m.init
            or any(
                t in absorbed.successors(s) for s in range(m.n) if s not in member_set
            )
        )
        outputs = sorted(
            {t for s in members for t in absorbed.successors(s) if t not in member_set}
        )
        counts = [len(absorbed.choices[s]) for s in members]
        total_schedulers = 1
        for c in counts:
            total_schedulers *= c
        if total_schedulers > limit:
            raise SchedulerLimitError(
                f"SCC {{{', '.join(m.states[s] for s in members)}}} has "
                f"{total_schedulers} memoryless schedulers (limit {limit})"
            )
        local = members + outputs
        index = {s: i for i, s in enumerate(local)}
        for s in inputs:
            new_choices[s] = []
        for assignment in product(*(range(c) for c in counts)):
            theta = dict(zip(members, assignment))
            rows = []
            for s in local:
                if s in member_set:
                    dist = absorbed.choices[s][theta[s]][1]
                    rows.append({index[t]: p for t, p in dist.items()})
                else:
                    rows.append({index[s]: ONE})
            sub = MarkovModel.mc(
                [m.states[s] for s in local], 0, [frozenset()] * len(local), rows
            )
            vecs = {t: reach_vector_mc(sub, [index[t]]) for t in outputs}
            for s in inputs:
                row = {t: vecs[t][index[s]] for t in outputs if vecs[t][index[s]] > 0}
                trapped = 1 - sum(row.values(), ZERO)
                if trapped > 0:
                    trap_needed = True
                    row["trap"] = trapped
                if all(existing != row for _, existing in new_choices[s]):
                    choice_origin[(s, len(new_choices[s]))] = theta
                    new_choices[s].append((str(len(new_choices[s])), row))
        dropped |= member_set - set(inputs)

    n = m.n
    trap = n if trap_needed else None
    states = m.states + ((TRAP_STATE_NAME,) if trap_needed else ())
    labels = m.labels + ((frozenset(),) if trap_needed else ())

    def resolve(row: dict) -> Distribution:
        return Distribution.of(
            {(trap if t == "trap" else t): p for t, p in row.items()}
        )

    choices: list[tuple] = []
    for s in range(n):
        if s in new_choices:
            choices.append(tuple((lab, resolve(row)) for lab, row in new_choices[s]))
        elif s in dropped:
            choices.append((("0", Distribution.dirac(s)),))
        else:
            choices.append(absorbed.choices[s])
            for i in range(len(absorbed.choices[s])):
                choice_origin[(s, i)] = None
    if trap_needed:
        choices.append((("0", Distribution.dirac(trap)),))
    mdp = MarkovModel("mdp", states, m.init, labels, tuple(choices))
    return MdpReduction(
        original=m,
        mdp=mdp,
        stop_states=stop_set,
        trap=trap,
        choice_origin=choice_origin,
    )


def topological_states(m: MarkovModel) -> list[int]:
    """States of an acyclic model ordered so successors come first."""
    dec = scc_decompose(m)
    order: list[int] = []
    for comp in dec.components:
        if len(comp) > 1:
            raise ModelError(["model is not acyclic"])
        order.append(comp[0])
    return order
