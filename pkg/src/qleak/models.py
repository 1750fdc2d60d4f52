"""Exact-arithmetic model types: Markov chains, MDPs, and information-hiding
automata, with structural validation.

Every probability in this package is a :class:`fractions.Fraction`; nothing
downstream ever touches floating point, which is what makes results like
21/40 reproducible bit for bit.  All types are immutable after construction
and safe to share between concurrent analyses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Optional, Sequence, Union

from .scc import strongly_connected_components

Prob = Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


class QleakError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(QleakError):
    """A model failed validation; ``report`` lists the violations."""

    def __init__(self, report: Sequence[str]):
        super().__init__("; ".join(report))
        self.report = list(report)


def as_prob(value: Union[int, str, Fraction]) -> Fraction:
    """Coerce to an exact probability in [0, 1].

    Decimal strings are exact: ``"0.25"`` becomes 1/4, never a float.
    """
    p = Fraction(value)
    if p < 0 or p > 1:
        raise ValueError(f"probability out of range: {p}")
    return p


@dataclass(frozen=True)
class Distribution:
    """Finitely supported probability distribution with positive entries.

    Keys are state ids for MC/MDP rows and (action, state) pairs for IHS
    transitions.  Entry order is declaration order and is preserved so that
    every report is deterministic.
    """

    entries: tuple[tuple[Hashable, Fraction], ...]

    def __post_init__(self):
        seen = set()
        total = ZERO
        for key, p in self.entries:
            if key in seen:
                raise ValueError(f"duplicate distribution entry {key!r}")
            seen.add(key)
            if not 0 < p <= 1:
                raise ValueError(f"entry {key!r} has probability {p} outside (0, 1]")
            total += p
        if total != 1:
            raise ValueError(f"distribution sums to {total}, expected 1")

    @staticmethod
    def of(items: Union[Mapping, Iterable[tuple]]) -> "Distribution":
        pairs = items.items() if isinstance(items, Mapping) else items
        return Distribution(tuple((k, Fraction(p)) for k, p in pairs))

    @staticmethod
    def dirac(key: Hashable) -> "Distribution":
        return Distribution(((key, ONE),))

    def items(self) -> tuple[tuple[Hashable, Fraction], ...]:
        return self.entries

    def get(self, key: Hashable) -> Fraction:
        for k, p in self.entries:
            if k == key:
                return p
        return ZERO

    def support(self) -> tuple:
        return tuple(k for k, _ in self.entries)


Choice = tuple[str, Distribution]


@dataclass(frozen=True)
class MarkovModel:
    """State-labeled Markov chain or Markov decision process.

    ``choices[s]`` is a nonempty sequence of (label, distribution) pairs;
    an MC has exactly one choice per state.  Distribution keys are state
    indices.  ``labels[s]`` is the set of atomic propositions valid at s.
    """

    kind: str  # "mc" | "mdp"
    states: tuple[str, ...]
    init: int
    labels: tuple[frozenset[str], ...]
    choices: tuple[tuple[Choice, ...], ...]

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def is_mc(self) -> bool:
        return self.kind == "mc"

    def row(self, s: int) -> Distribution:
        """The unique distribution of state ``s``; the model must be an MC."""
        if len(self.choices[s]) != 1:
            raise ModelError([f"state {self.states[s]} has {len(self.choices[s])} choices; not an MC"])
        return self.choices[s][0][1]

    def successors(self, s: int) -> list[int]:
        out: list[int] = []
        seen = set()
        for _, dist in self.choices[s]:
            for t, _ in dist.items():
                if t not in seen:
                    seen.add(t)
                    out.append(t)
        return out

    def graph(self) -> list[list[int]]:
        return [self.successors(s) for s in range(self.n)]

    def is_absorbing(self, s: int) -> bool:
        return all(dist.entries == ((s, ONE),) for _, dist in self.choices[s])

    @staticmethod
    def mc(
        states: Sequence[str],
        init: int,
        labels: Sequence[Iterable[str]],
        rows: Sequence[Union[Mapping, Iterable[tuple]]],
    ) -> "MarkovModel":
        return MarkovModel(
            kind="mc",
            states=tuple(states),
            init=init,
            labels=tuple(frozenset(ls) for ls in labels),
            choices=tuple((("0", Distribution.of(r)),) for r in rows),
        )

    @staticmethod
    def mdp(
        states: Sequence[str],
        init: int,
        labels: Sequence[Iterable[str]],
        choices: Sequence[Sequence[tuple[str, Union[Mapping, Iterable[tuple]]]]],
    ) -> "MarkovModel":
        return MarkovModel(
            kind="mdp",
            states=tuple(states),
            init=init,
            labels=tuple(frozenset(ls) for ls in labels),
            choices=tuple(
                tuple((lab, Distribution.of(d)) for lab, d in per_state) for per_state in choices
            ),
        )


@dataclass(frozen=True)
class Prior:
    """A priori distribution over secret actions."""

    entries: tuple[tuple[str, Fraction], ...]

    def __post_init__(self):
        if sum(p for _, p in self.entries) != 1:
            raise ValueError("prior does not sum to 1")

    @staticmethod
    def of(items: Union[Mapping, Iterable[tuple]]) -> "Prior":
        pairs = items.items() if isinstance(items, Mapping) else items
        return Prior(tuple((k, Fraction(p)) for k, p in pairs))

    @staticmethod
    def uniform(secrets: Sequence[str]) -> "Prior":
        n = len(secrets)
        return Prior(tuple((s, Fraction(1, n)) for s in secrets))

    def get(self, secret: str) -> Fraction:
        for k, p in self.entries:
            if k == secret:
                return p
        return ZERO

    def support(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.entries)

    def max(self) -> Fraction:
        return max(p for _, p in self.entries)


@dataclass(frozen=True)
class Ihs:
    """Action-labeled fully probabilistic automaton with secret, observable
    and internal actions.

    ``trans[q]`` is the (single) outgoing distribution over (action, state)
    pairs, or ``None`` for a terminal state.  Actions not declared secret or
    observable are internal.  When ``variable_prior`` is set, the initial
    state instead carries one Dirac branch per secret (``init_branches``) and
    the prior is left open until :func:`qleak.leakage.instantiate_prior`.
    """

    states: tuple[str, ...]
    init: int
    secret_actions: tuple[str, ...]
    observable_actions: tuple[str, ...]
    trans: tuple[Optional[Distribution], ...]
    variable_prior: bool = False
    init_branches: tuple[tuple[str, int], ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.states)

    def is_secret(self, action: str) -> bool:
        return action in self.secret_actions

    def is_observable(self, action: str) -> bool:
        return action in self.observable_actions

    def is_internal(self, action: str) -> bool:
        return not (self.is_secret(action) or self.is_observable(action))

    def is_terminal(self, q: int) -> bool:
        if self.variable_prior and q == self.init:
            return not self.init_branches
        return self.trans[q] is None or not self.trans[q].entries

    def edges(self) -> list[tuple[int, str, Fraction, int]]:
        """All transitions as (source, action, probability, target)."""
        out = []
        for q in range(self.n):
            if self.variable_prior and q == self.init:
                for secret, target in self.init_branches:
                    out.append((q, secret, ONE, target))
                continue
            if self.trans[q] is None:
                continue
            for (action, target), p in self.trans[q].items():
                out.append((q, action, p, target))
        return out

    def graph(self) -> list[list[int]]:
        succ: list[list[int]] = [[] for _ in range(self.n)]
        for q, _, _, target in self.edges():
            if target not in succ[q]:
                succ[q].append(target)
        return succ


# ---------------------------------------------------------------------------
# validation


def validate_model(m: MarkovModel) -> list[str]:
    """Structural validation of an MC/MDP; empty report means valid."""
    report: list[str] = []
    n = m.n
    if m.kind not in ("mc", "mdp"):
        report.append(f"unknown model kind {m.kind!r}")
    if not 0 <= m.init < n:
        report.append(f"initial state index {m.init} out of range")
    if len(m.labels) != n or len(m.choices) != n:
        report.append("labels/choices length does not match the state count")
        return report
    for s in range(n):
        name = m.states[s]
        if not m.choices[s]:
            report.append(f"state {name} has no choice")
        if m.is_mc and len(m.choices[s]) != 1:
            report.append(f"state {name} has {len(m.choices[s])} choices in an MC")
        for label, dist in m.choices[s]:
            for t, _ in dist.items():
                if not isinstance(t, int) or not 0 <= t < n:
                    report.append(f"state {name}, choice {label}: target {t!r} is not a state")
    return report


def _ihs_cycle_report(h: Ihs) -> list[str]:
    # Def 3.3.1(4): any edge inside an SCC lies on a cycle, so a visible
    # action there is a violation even if the cycle mixes in internal steps.
    report = []
    comp_of: dict[int, int] = {}
    for ci, comp in enumerate(strongly_connected_components(h.graph())):
        for q in comp:
            comp_of[q] = ci
    seen = set()
    for q, action, _, target in h.edges():
        if h.is_internal(action):
            continue
        if comp_of[q] == comp_of[target]:
            key = (q, action, target)
            if key not in seen:
                seen.add(key)
                report.append(
                    f"non-internal action {action!r} on cycle through state {h.states[q]}"
                )
    return report


def _ihs_termination_report(h: Ihs) -> list[str]:
    # Termination with probability 1 iff every bottom SCC is one terminal state.
    report = []
    succ = h.graph()
    for comp in strongly_connected_components(succ):
        leaves = any(t not in comp for q in comp for t in succ[q])
        if leaves:
            continue
        if len(comp) > 1 or succ[comp[0]]:
            names = ",".join(h.states[q] for q in comp)
            report.append(f"non-terminating with probability 1: bottom component {{{names}}}")
    return report


def validate_ihs(h: Ihs) -> list[str]:
    """Check every information-hiding restriction; empty report means valid."""
    report: list[str] = []
    overlap = set(h.secret_actions) & set(h.observable_actions)
    if overlap:
        report.append(f"actions declared both secret and observable: {sorted(overlap)}")
    if not 0 <= h.init < h.n:
        return report + [f"initial state index {h.init} out of range"]

    if h.variable_prior:
        seen: dict[str, int] = {}
        for secret, target in h.init_branches:
            if secret not in h.secret_actions:
                report.append(f"initial branch action {secret!r} is not a declared secret")
            if secret in seen:
                report.append(f"secret {secret!r} has more than one initial branch")
            seen[secret] = target
        for secret in h.secret_actions:
            if secret not in seen:
                report.append(f"secret {secret!r} has no initial branch")
        if h.trans[h.init] is not None:
            report.append("variable-prior initial state must not carry a fixed distribution")
    else:
        dist = h.trans[h.init]
        if dist is None:
            report.append("initial state is terminal")
        else:
            counts: dict[str, int] = {}
            for (action, _), _p in dist.items():
                if not h.is_secret(action):
                    report.append(f"non-secret action {action!r} at the initial state")
                counts[action] = counts.get(action, 0) + 1
            for secret in h.secret_actions:
                if counts.get(secret, 0) != 1:
                    report.append(
                        f"secret {secret!r} occurs {counts.get(secret, 0)} times at the initial state, expected exactly 1"
                    )

    for q in range(h.n):
        if q == h.init:
            continue
        dist = h.trans[q]
        if dist is None:
            continue
        for (action, _), _p in dist.items():
            if h.is_secret(action):
                report.append(f"secret action {action!r} at non-initial state {h.states[q]}")

    report.extend(_ihs_cycle_report(h))
    report.extend(_ihs_termination_report(h))
    return report


def validate_interactive_ihs(h: Ihs) -> list[str]:
    """Validation for interactive systems: secrets may interleave with
    observables, but each state is purely secret or purely non-secret,
    nothing visible sits on a cycle, and termination is almost sure."""
    report: list[str] = []
    overlap = set(h.secret_actions) & set(h.observable_actions)
    if overlap:
        report.append(f"actions declared both secret and observable: {sorted(overlap)}")
    if h.variable_prior:
        report.append("interactive analysis requires a fixed prior")
        return report
    for q in range(h.n):
        dist = h.trans[q]
        if dist is None:
            continue
        kinds = {h.is_secret(action) for (action, _), _p in dist.items()}
        if len(kinds) > 1:
            report.append(f"state {h.states[q]} mixes secret and non-secret actions")
    report.extend(_ihs_cycle_report(h))
    report.extend(_ihs_termination_report(h))
    return report


def require_valid_model(m: MarkovModel) -> MarkovModel:
    report = validate_model(m)
    if report:
        raise ModelError(report)
    return m


def require_valid_ihs(h: Ihs) -> Ihs:
    report = validate_ihs(h)
    if report:
        raise ModelError(report)
    return h


def prior_of(h: Ihs) -> Prior:
    """Read the a priori distribution off the initial state."""
    if h.variable_prior:
        raise ModelError(["prior is undefined for a variable-prior system"])
    require_valid_ihs(h)
    dist = h.trans[h.init]
    assert dist is not None
    return Prior(tuple((action, p) for (action, _), p in dist.items()))
