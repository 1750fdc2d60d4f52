import random
from fractions import Fraction as F

import pytest

from qleak.formulas import Prop, sat_states
from qleak.graphs import (
    SchedulerLimitError,
    make_absorbing,
    reach_prob_mc,
    reach_vector_mc,
    reduce_mc_acyclic,
    reduce_mdp_acyclic,
    scc_decompose,
    topological_states,
)
from qleak.models import Distribution, MarkovModel
from qleak.reach import opt_prob, until_opt
from qleak.formulas import TRUE, Until

from oracles import exhaustive_opt_until, random_mc, random_mdp


def chain(rows, labels=None, names=None):
    n = len(rows)
    return MarkovModel.mc(
        names or [f"s{i}" for i in range(n)],
        0,
        labels or [set() for _ in range(n)],
        rows,
    )


def test_acyclic_chain_has_trivial_components():
    m = chain([{1: 1}, {2: 1}, {2: 1}])
    dec = scc_decompose(m)
    assert all(dec.trivial)
    assert len(dec.components) == 3


def test_two_cycle_is_one_nontrivial_component():
    m = chain([{1: 1}, {0: 1}])
    dec = scc_decompose(m)
    assert dec.nontrivial() == [dec.component_of[0]]
    assert set(dec.components[dec.component_of[0]]) == {0, 1}


def test_scc_example_components(scc_mc):
    dec = scc_decompose(scc_mc)
    by_name = {scc_mc.states[s]: s for s in range(scc_mc.n)}
    comps = {frozenset(c) for c in dec.components if len(c) > 1}
    assert frozenset(by_name[x] for x in ("s1", "s3", "s4", "s7")) in comps
    assert frozenset(by_name[x] for x in ("s5", "s6", "s8")) in comps
    assert len(comps) == 2


def test_absorbing_state_is_trivial_even_with_self_loop():
    m = chain([{0: 1}])
    assert scc_decompose(m).trivial == (True,)


def test_reach_trivial_cases(intro_mc):
    psi = sat_states(intro_mc, Prop("psi"))
    assert reach_prob_mc(intro_mc, 3, psi) == 1
    assert reach_prob_mc(intro_mc, 0, set()) == 0


def test_reach_intro_values(intro_mc):
    assert reach_prob_mc(intro_mc, 0, {3}) == F(2, 5)
    assert reach_prob_mc(intro_mc, 0, {4}) == F(3, 5)
    assert reach_prob_mc(intro_mc, 0, {3, 4}) == 1


def test_make_absorbing_goal_at_init(intro_mc):
    absorbed, sat_f = make_absorbing(intro_mc, {0})
    assert absorbed.is_absorbing(0)
    assert 0 in sat_f
    assert reach_prob_mc(absorbed, 0, {0}) == 1


def test_make_absorbing_unsatisfiable_goal(intro_mc):
    absorbed, sat_f = make_absorbing(intro_mc, set())
    assert sat_f == frozenset()
    assert all(absorbed.is_absorbing(s) for s in range(absorbed.n))


def test_make_absorbing_keeps_other_rows(intro_mc):
    absorbed, _ = make_absorbing(intro_mc, {3, 4})
    assert absorbed.row(0) == intro_mc.row(0)
    assert absorbed.is_absorbing(3) and absorbed.is_absorbing(4)


def test_reduce_acyclic_is_identity_on_acyclic():
    m = chain([{1: F(1, 2), 2: F(1, 2)}, {2: 1}, {2: 1}])
    red = reduce_mc_acyclic(m)
    assert red.chain.choices == m.choices
    assert red.interfaces == {}


def test_reduce_scc_example_shape(scc_mc):
    red = reduce_mc_acyclic(scc_mc)
    by_name = {scc_mc.states[s]: s for s in range(scc_mc.n)}
    s1 = by_name["s1"]
    row = dict(red.chain.row(s1).items())
    assert row == {by_name["s9"]: F(1, 2), by_name["s10"]: F(1, 2)}
    # the second component has two entry states, kept separately
    assert by_name["s5"] in red.interfaces and by_name["s6"] in red.interfaces
    assert all(len(c) == 1 for c in scc_decompose(red.chain).components)


def test_reduce_trapping_scc_becomes_absorbing():
    # cycle with no way out: the entry state must absorb
    m = chain([{1: 1}, {2: 1}, {1: 1}])
    red = reduce_mc_acyclic(m)
    assert red.chain.is_absorbing(1)


def test_reduction_preserves_reachability_on_random_mcs():
    rng = random.Random(7)
    for _ in range(60):
        m = random_mc(rng, max_states=8)
        goal = sat_states(m, Prop("a"))
        direct = reach_prob_mc(m, m.init, goal)
        absorbed, _ = make_absorbing(m, goal)
        red = reduce_mc_acyclic(absorbed)
        assert reach_prob_mc(red.chain, red.chain.init, goal) == direct


def test_reduce_mdp_identity_on_acyclic():
    m = MarkovModel.mdp(
        ["s0", "s1", "s2"],
        0,
        [set(), set(), {"stop"}],
        [
            [("a", {1: F(1, 2), 2: F(1, 2)}), ("b", {2: 1})],
            [("0", {2: 1})],
            [("0", {2: 1})],
        ],
    )
    red = reduce_mdp_acyclic(m, stop={2})
    assert red.mdp.choices[0] == m.choices[0]
    assert red.trap is None


def test_reduce_mdp_on_mc_matches_mc_reduction(scc_mc):
    # an MC has one interior scheduler per SCC, so the reduced MDP has one
    # choice everywhere and agrees with the MC reduction wherever the goal
    # stays reachable (the MC pipeline additionally absorbs dead states)
    as_mdp = MarkovModel("mdp", scc_mc.states, scc_mc.init, scc_mc.labels, scc_mc.choices)
    goal = sat_states(scc_mc, Prop("goal"))
    red_mdp = reduce_mdp_acyclic(as_mdp, stop=goal)
    absorbed, sat_f = make_absorbing(scc_mc, goal)
    red_mc = reduce_mc_acyclic(absorbed)
    for s in range(scc_mc.n):
        mdp_rows = [dict(d.items()) for _, d in red_mdp.mdp.choices[s]]
        assert len(mdp_rows) == 1
        if s in sat_f and s not in goal:
            assert dict(red_mc.chain.row(s).items()) == mdp_rows[0]
    assert reach_prob_mc(red_mc.chain, 0, goal) == reach_prob_mc(
        MarkovModel("mc", red_mdp.mdp.states, 0, red_mdp.mdp.labels, red_mdp.mdp.choices),
        0,
        goal,
    )


def test_reduce_mdp_two_schedulers_in_scc():
    # states 0 <-> 1 cycle; state 1 chooses between exiting to 2 or looping
    # harder; exit probabilities differ per interior scheduler
    m = MarkovModel.mdp(
        ["s0", "s1", "s2"],
        0,
        [set(), set(), {"stop"}],
        [
            [("0", {1: 1})],
            [("exit", {2: F(1, 2), 0: F(1, 2)}), ("loop", {0: 1})],
            [("0", {2: 1})],
        ],
    )
    red = reduce_mdp_acyclic(m, stop={2})
    rows = [dict(d.items()) for _, d in red.mdp.choices[0]]
    # scheduler picking "exit" leaves with probability 1; "loop" traps all mass
    assert {2: F(1)} in rows
    assert any(red.trap in row and row[red.trap] == 1 for row in rows)
    assert red.mdp.states[red.trap] == "__trap__"


def test_reduce_mdp_preserves_max_reachability_on_random_mdps():
    rng = random.Random(11)
    for _ in range(40):
        m = random_mdp(rng, max_states=6, max_choices=2, nondet_states=2)
        goal = sat_states(m, Prop("a"))
        if not goal:
            continue
        path = Until(TRUE, Prop("a"))
        direct = opt_prob(m, path, "max")
        red = reduce_mdp_acyclic(m, stop=goal)
        reduced_value = opt_prob(red.mdp, path, "max")
        assert reduced_value == direct


def test_scheduler_limit_guard():
    m = MarkovModel.mdp(
        ["s0", "s1"],
        0,
        [set(), set()],
        [
            [("a", {1: 1}), ("b", {1: F(1, 2), 0: F(1, 2)})],
            [("a", {0: 1}), ("b", {0: F(1, 2), 1: F(1, 2)})],
        ],
    )
    with pytest.raises(SchedulerLimitError):
        reduce_mdp_acyclic(m, stop=set(), limit=3)


def test_topological_states_successors_first():
    m = chain([{1: 1}, {2: 1}, {2: 1}])
    order = topological_states(m)
    assert order.index(2) < order.index(1) < order.index(0)
