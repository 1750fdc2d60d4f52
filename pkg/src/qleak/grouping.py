"""Grouping paths with identical secret/observable behaviour.

Two mechanisms: (1) state elimination turns a fully probabilistic automaton
into a regular expression over (action, probability, state) atoms whose
normal-form terms each carry a single secret/observable trace pair and an
exact value; (2) rails of the acyclic SCC reduction of a Markov chain stand
for torrents, the sets of original paths that behave like the rail outside
SCCs (freshness + inertia), with the rail's probability equal to the
torrent's mass.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence, Union

from .graphs import McReduction
from .models import ONE, ZERO, Ihs, MarkovModel, ModelError, QleakError
from .leakage import SINK_ACTION, Trace, _with_sink
from .scc import strongly_connected_components


class DivergentStarError(QleakError):
    pass


# ---------------------------------------------------------------------------
# regular expressions over (action, probability, state) triples


@dataclass(frozen=True)
class Atom:
    action: str
    prob: Fraction
    state: str  # target state name, for display

    def render(self) -> str:
        return f"<{self.action},{self.prob},{self.state}>"


@dataclass(frozen=True)
class Eps:
    def render(self) -> str:
        return "eps"


@dataclass(frozen=True)
class Concat:
    parts: tuple["Regex", ...]

    def render(self) -> str:
        return ".".join(_wrap(p) for p in self.parts)


@dataclass(frozen=True)
class Alt:
    parts: tuple["Regex", ...]

    def render(self) -> str:
        return " + ".join(p.render() for p in self.parts)


@dataclass(frozen=True)
class Star:
    body: "Regex"

    def render(self) -> str:
        return f"({self.body.render()})*"


Regex = Union[Atom, Eps, Concat, "Alt", Star]


def _wrap(r: Regex) -> str:
    return f"({r.render()})" if isinstance(r, Alt) else r.render()


def regex_val(r: Regex) -> Fraction:
    """Exact value of a regex: atoms multiply, unions add, a star of value v
    contributes 1/(1-v); a star whose body has value 1 is divergent."""
    if isinstance(r, Atom):
        return r.prob
    if isinstance(r, Eps):
        return ONE
    if isinstance(r, Concat):
        out = ONE
        for p in r.parts:
            out *= regex_val(p)
        return out
    if isinstance(r, Alt):
        return sum((regex_val(p) for p in r.parts), ZERO)
    if isinstance(r, Star):
        v = regex_val(r.body)
        if v == 1:
            raise DivergentStarError("star of a probability-1 body has no finite value")
        return 1 / (1 - v)
    raise TypeError(f"not a regex: {r!r}")


def _concat(a: Optional[Regex], b: Optional[Regex]) -> Optional[Regex]:
    if a is None or b is None:
        return None
    parts: list[Regex] = []
    for r in (a, b):
        if isinstance(r, Eps):
            continue
        parts.extend(r.parts if isinstance(r, Concat) else (r,))
    if not parts:
        return Eps()
    return parts[0] if len(parts) == 1 else Concat(tuple(parts))


def _union(a: Optional[Regex], b: Optional[Regex]) -> Optional[Regex]:
    if a is None:
        return b
    if b is None:
        return a
    pa = a.parts if isinstance(a, Alt) else (a,)
    pb = b.parts if isinstance(b, Alt) else (b,)
    return Alt(pa + pb)


@dataclass(frozen=True)
class RegexTerm:
    """One +-free term of the normal form: a concatenation of atoms and
    stars, a well-defined trace pair, and an exact value."""

    factors: tuple[Regex, ...]
    value: Fraction
    secret_trace: Trace
    observable_trace: Trace

    def render(self) -> str:
        return ".".join(_wrap(f) for f in self.factors) if self.factors else "eps"


@dataclass(frozen=True)
class NormalRegex:
    terms: tuple[RegexTerm, ...]
    warnings: tuple[str, ...]

    def total(self) -> Fraction:
        return sum((t.value for t in self.terms), ZERO)


def _distribute(r: Regex) -> list[tuple[Regex, ...]]:
    if isinstance(r, Alt):
        out = []
        for p in r.parts:
            out.extend(_distribute(p))
        return out
    if isinstance(r, Concat):
        terms: list[tuple[Regex, ...]] = [()]
        for p in r.parts:
            terms = [t + u for t in terms for u in _distribute(p)]
        return terms
    if isinstance(r, Eps):
        return [()]
    return [(r,)]


def _star_actions(r: Regex) -> Iterator[str]:
    if isinstance(r, Atom):
        yield r.action
    elif isinstance(r, (Concat, Alt)):
        for p in r.parts:
            yield from _star_actions(p)
    elif isinstance(r, Star):
        yield from _star_actions(r.body)


def to_regex(h: Ihs) -> NormalRegex:
    """State elimination to a normal-form regex whose value equals the total
    absorption mass.

    Elimination order: SCC condensation components in reverse topological
    order (sinks first), states ascending inside a component; the initial
    and final states are kept.  A unique final state is synthesized when the
    automaton has several terminal states.
    """
    if h.variable_prior:
        raise ModelError(["to_regex expects a fixed prior"])
    terminals = [q for q in range(h.n) if h.is_terminal(q)]
    if len(terminals) != 1:
        h = _with_sink(h)
        terminals = [h.n - 1]
    final = terminals[0]

    edges: dict[tuple[int, int], Regex] = {}
    for q, action, p, target in h.edges():
        atom = Atom(action, p, h.states[target])
        key = (q, target)
        edges[key] = _union(edges.get(key), atom)

    comps = strongly_connected_components(h.graph())
    order = [q for comp in comps for q in sorted(comp) if q not in (h.init, final)]

    for x in order:
        self_loop = edges.pop((x, x), None)
        loop = Star(self_loop) if self_loop is not None else None
        ins = [(u, r) for (u, v), r in edges.items() if v == x]
        outs = [(v, r) for (u, v), r in edges.items() if u == x]
        for u, _ in ins:
            edges.pop((u, x))
        for v, _ in outs:
            edges.pop((x, v))
        for u, rin in ins:
            for v, rout in outs:
                mid = _concat(rin, _concat(loop, rout)) if loop else _concat(rin, rout)
                edges[(u, v)] = _union(edges.get((u, v)), mid)

    full = edges.get((h.init, final))
    if full is None:
        return NormalRegex((), ("no path from the initial to the final state",))

    warnings: list[str] = []
    terms: list[RegexTerm] = []
    for factors in _distribute(full):
        try:
            value = ONE
            for f in factors:
                value *= regex_val(f)
        except DivergentStarError:
            warnings.append(
                "dropped a term with a probability-1 loop (zero absorption mass)"
            )
            continue
        secret: list[str] = []
        observable: list[str] = []
        for f in factors:
            if isinstance(f, Star):
                visible = [a for a in _star_actions(f) if not h.is_internal(a)]
                if visible:
                    raise ModelError(
                        [f"visible actions {visible} under a star; traces are ill-defined"]
                    )
                continue
            assert isinstance(f, Atom)
            if h.is_secret(f.action):
                secret.append(f.action)
            elif h.is_observable(f.action):
                observable.append(f.action)
        terms.append(
            RegexTerm(
                factors=tuple(factors),
                value=value,
                secret_trace=tuple(secret),
                observable_trace=tuple(observable),
            )
        )
    return NormalRegex(tuple(terms), tuple(warnings))


# ---------------------------------------------------------------------------
# rails and torrents


@dataclass(frozen=True)
class Rail:
    path: tuple[int, ...]


@dataclass(frozen=True)
class TorrentSummary:
    rail: tuple[int, ...]
    mass: Fraction  # cone probability of the rail = mass of the torrent
    representant: tuple[int, ...]  # highest-probability generator
    representant_mass: Fraction


def rails_by_probability(
    chain: MarkovModel, goal: Iterable[int]
) -> Iterator[tuple[tuple[int, ...], Fraction]]:
    """Goal-reaching rails of an acyclic chain, lazily, in non-increasing
    mass order (exact rational keys; lexicographic state ties).

    Best-first search with the admissible bound max-single-path-continuation,
    so a rail is emitted as soon as it is popped; k grows on demand.
    """
    goal_set = set(goal)
    best = _best_continuation(chain, goal_set)
    if best[chain.init] == 0:
        return
    heap: list[tuple[Fraction, tuple[int, ...], Fraction]] = []
    heapq.heappush(heap, (-best[chain.init], (chain.init,), ONE))
    while heap:
        neg_bound, path, mass = heapq.heappop(heap)
        s = path[-1]
        if s in goal_set:
            yield path, mass
            continue
        for t, p in chain.row(s).items():
            if best[t] > 0 and t != s:
                heapq.heappush(heap, (-(mass * p * best[t]), path + (t,), mass * p))


def _best_continuation(chain: MarkovModel, goal_set: set[int]) -> list[Fraction]:
    order = _topo(chain)
    best = [ZERO] * chain.n
    for s in order:  # successors first
        if s in goal_set:
            best[s] = ONE
            continue
        for t, p in chain.row(s).items():
            if t != s and p * best[t] > best[s]:
                best[s] = p * best[t]
    return best


def _topo(chain: MarkovModel) -> list[int]:
    comps = strongly_connected_components(chain.graph())
    order = []
    for comp in comps:
        s = comp[0]
        if len(comp) > 1 or (s in chain.successors(s) and not chain.is_absorbing(s)):
            raise ModelError(["rails need an acyclic chain (run the reduction first)"])
        order.append(s)
    return order


def max_prob_path(
    m: MarkovModel, src: int, dst: int, allowed: frozenset[int]
) -> tuple[tuple[int, ...], Fraction]:
    """Highest-probability path src -> dst through ``allowed`` states, by
    Dijkstra on exact reciprocal-mass keys; ties resolved lexicographically
    on the state sequence."""
    heap: list[tuple[Fraction, tuple[int, ...]]] = [(ONE, (src,))]
    seen: set[int] = set()
    while heap:
        recip, path = heapq.heappop(heap)
        s = path[-1]
        if s == dst:
            return path, 1 / recip
        if s in seen:
            continue
        seen.add(s)
        for t, p in m.row(s).items():
            if t == dst or (t in allowed and t not in seen):
                heapq.heappush(heap, (recip / p, path + (t,)))
    raise ModelError([f"no path from {m.states[src]} to {m.states[dst]} inside the component"])


def torrent_of(rail: Sequence[int], reduction: McReduction) -> TorrentSummary:
    """Expand a rail of the reduced chain into its torrent summary: exact
    cone mass, and the maximum-probability generator as representant."""
    chain, original = reduction.chain, reduction.original
    mass = ONE
    rep: list[int] = [rail[0]]
    rep_mass = ONE
    for i in range(len(rail) - 1):
        s, t = rail[i], rail[i + 1]
        mass *= chain.row(s).get(t)
        if s in reduction.interfaces:
            seg, seg_mass = max_prob_path(
                original, s, t, reduction.interfaces[s].members
            )
            rep.extend(seg[1:])
            rep_mass *= seg_mass
        else:
            rep.append(t)
            rep_mass *= original.row(s).get(t)
    if mass == 0:
        raise ModelError(["rail has a zero-probability edge"])
    return TorrentSummary(
        rail=tuple(rail), mass=mass, representant=tuple(rep), representant_mass=rep_mass
    )


def behaves_like(reduction: McReduction, rail: Sequence[int], path: Sequence[int]) -> bool:
    """The freshness+inertia subsequence test: does ``path`` (a path of the
    original chain, long enough to be decisive) belong to the rail's
    torrent?"""
    scc_of = reduction.scc.component_of
    i = 0
    seen: set[int] = set()
    for s in path:
        c = scc_of[s]
        if i < len(rail) and s == rail[i] and c not in seen:
            seen.add(c)
            i += 1
        elif i == 0:
            return False
        elif c != scc_of[rail[i - 1]]:
            return False
    return i == len(rail)


def is_generator(reduction: McReduction, rail: Sequence[int], path: Sequence[int]) -> bool:
    """Generators additionally end exactly at the rail's last state."""
    if not path or path[-1] != rail[-1]:
        return False
    scc_of = reduction.scc.component_of
    i = 0
    seen: set[int] = set()
    last_match = -1
    for j, s in enumerate(path):
        c = scc_of[s]
        if i < len(rail) and s == rail[i] and c not in seen:
            seen.add(c)
            i += 1
            last_match = j
        elif i == 0:
            return False
        elif c != scc_of[rail[i - 1]]:
            return False
    return i == len(rail) and last_match == len(path) - 1
