"""Exact maximal/minimal until- and globally-probabilities over MDPs.

Policy iteration with rational arithmetic: every policy is evaluated by
solving its induced chain exactly (restricted to states that can reach the
target, which selects the minimal solution), and improvement only switches
on a strict gain, with ties broken toward the lowest choice index.  A
qualitative pre-pass pins the states a minimizing scheduler can hold at
probability zero; without it, policy iteration can stall on self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .formulas import TRUE, Globally, Not, PathFormula, Until, sat_states
from .graphs import reach_vector_mc
from .models import ONE, ZERO, Distribution, MarkovModel, ModelError


@dataclass(frozen=True)
class MemorylessScheduler:
    """One choice index per state."""

    choice_of: tuple[int, ...]

    def __getitem__(self, s: int) -> int:
        return self.choice_of[s]


def induce_mc(m: MarkovModel, sched: MemorylessScheduler) -> MarkovModel:
    """The Markov chain obtained by fixing one choice per state."""
    if len(sched.choice_of) != m.n:
        raise ModelError(["scheduler does not match the model's state count"])
    rows = []
    for s in range(m.n):
        i = sched.choice_of[s]
        if not 0 <= i < len(m.choices[s]):
            raise ModelError([f"scheduler picks choice {i} at state {m.states[s]}"])
        rows.append((("0", m.choices[s][i][1]),))
    return MarkovModel("mc", m.states, m.init, m.labels, tuple(rows))


def _min_zero_states(m: MarkovModel, safe: frozenset[int], target: frozenset[int]) -> set[int]:
    # Greatest set Z of non-target states on which some scheduler keeps the
    # until unsatisfied forever: unsafe non-target states are failures, safe
    # ones need a choice staying inside Z.
    z = set(range(m.n)) - set(target)
    changed = True
    while changed:
        changed = False
        for s in list(z):
            if s not in safe:
                continue
            if any(all(t in z for t, _ in dist.items()) for _, dist in m.choices[s]):
                continue
            z.discard(s)
            changed = True
    return z


def _max_alive_states(m: MarkovModel, safe: frozenset[int], target: frozenset[int]) -> set[int]:
    # States from which some scheduler reaches the target through safe states.
    pred: list[set[int]] = [set() for _ in range(m.n)]
    for s in range(m.n):
        for t in m.successors(s):
            pred[t].add(s)
    alive = set(target)
    stack = list(alive)
    while stack:
        t = stack.pop()
        for s in pred[t]:
            if s not in alive and s in safe:
                alive.add(s)
                stack.append(s)
    return alive


def _evaluate(m: MarkovModel, policy: list[int], safe, target, pinned_zero) -> list[Fraction]:
    rows = []
    for s in range(m.n):
        if s in target or s in pinned_zero or (s not in safe):
            rows.append((("0", Distribution.dirac(s)),))
        else:
            rows.append((("0", m.choices[s][policy[s]][1]),))
    chain = MarkovModel("mc", m.states, m.init, m.labels, tuple(rows))
    return reach_vector_mc(chain, target)


def until_opt(
    m: MarkovModel, safe: Iterable[int], target: Iterable[int], mode: str
) -> tuple[list[Fraction], MemorylessScheduler]:
    """Optimal probabilities of ``safe U target`` from every state, plus a
    deterministic memoryless scheduler attaining them."""
    if mode not in ("max", "min"):
        raise ValueError(f"mode must be max or min, not {mode!r}")
    safe = frozenset(safe)
    target = frozenset(target)
    policy = [0] * m.n
    if mode == "min":
        pinned = _min_zero_states(m, safe, target)
        # a minimizing scheduler must actually take an avoiding choice there
        for s in pinned:
            if s in safe:
                policy[s] = next(
                    i
                    for i, (_, dist) in enumerate(m.choices[s])
                    if all(t in pinned for t, _ in dist.items())
                )
    else:
        alive = _max_alive_states(m, safe, target)
        pinned = set(range(m.n)) - alive - set(target)

    better = (lambda a, b: a > b) if mode == "max" else (lambda a, b: a < b)
    improvable = [
        s
        for s in range(m.n)
        if s not in target and s not in pinned and s in safe and len(m.choices[s]) > 1
    ]
    while True:
        values = _evaluate(m, policy, safe, target, pinned)
        changed = False
        for s in improvable:
            current = sum((p * values[t] for t, p in m.choices[s][policy[s]][1].items()), ZERO)
            best_i, best_v = policy[s], current
            for i, (_, dist) in enumerate(m.choices[s]):
                v = sum((p * values[t] for t, p in dist.items()), ZERO)
                if better(v, best_v) or (v == best_v and i < best_i):
                    best_i, best_v = i, v
            if better(best_v, current):
                policy[s] = best_i
                changed = True
        if not changed:
            return values, MemorylessScheduler(tuple(policy))


def _until_sets(m: MarkovModel, path: Until) -> tuple[frozenset[int], frozenset[int]]:
    return sat_states(m, path.left), sat_states(m, path.right)


def opt_vector(m: MarkovModel, path: PathFormula, mode: str) -> list[Fraction]:
    """P⁺ (mode=max) or P⁻ (mode=min) of the path formula, per state."""
    if isinstance(path, Until):
        safe, target = _until_sets(m, path)
        return until_opt(m, safe, target, mode)[0]
    if isinstance(path, Globally):
        # P+(G g) = 1 - P-(F !g) and symmetrically
        dual = opt_vector(m, Until(TRUE, Not(path.arg)), _flip(mode))
        return [ONE - v for v in dual]
    raise ModelError([f"unsupported path formula {path!r}"])


def opt_prob(m: MarkovModel, path: PathFormula, mode: str) -> Fraction:
    return opt_vector(m, path, mode)[m.init]


def extract_opt_scheduler(m: MarkovModel, path: PathFormula, mode: str) -> MemorylessScheduler:
    """A deterministic memoryless scheduler attaining opt_prob; ties broken
    toward the lowest choice index."""
    if isinstance(path, Until):
        safe, target = _until_sets(m, path)
        return until_opt(m, safe, target, mode)[1]
    if isinstance(path, Globally):
        return extract_opt_scheduler(m, Until(TRUE, Not(path.arg)), _flip(mode))
    raise ModelError([f"unsupported path formula {path!r}"])


def _flip(mode: str) -> str:
    return "min" if mode == "max" else "max"
