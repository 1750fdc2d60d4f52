import random
from fractions import Fraction as F

import pytest

from qleak.formulas import Globally, Not, Prop, TRUE, Until, parse_formula, sat_states
from qleak.graphs import reach_prob_mc
from qleak.models import MarkovModel
from qleak.reach import (
    MemorylessScheduler,
    extract_opt_scheduler,
    induce_mc,
    opt_prob,
    opt_vector,
    until_opt,
)

from oracles import chain_path_prob, exhaustive_opt_until, random_mdp


@pytest.fixture
def two_choice():
    # one nondeterministic state: reach the goal with probability 1/2 or 1/3
    return MarkovModel.mdp(
        ["s0", "g", "d"],
        0,
        [set(), {"goal"}, set()],
        [
            [("half", {1: F(1, 2), 2: F(1, 2)}), ("third", {1: F(1, 3), 2: F(2, 3)})],
            [("0", {1: 1})],
            [("0", {2: 1})],
        ],
    )


def test_target_at_init_max_is_one(two_choice):
    assert opt_prob(two_choice, Until(TRUE, TRUE), "max") == 1


def test_mc_input_equals_reach(intro_mc):
    path = Until(TRUE, Prop("psi"))
    goal = sat_states(intro_mc, Prop("psi"))
    assert opt_prob(intro_mc, path, "max") == reach_prob_mc(intro_mc, 0, goal)
    assert opt_prob(intro_mc, path, "min") == reach_prob_mc(intro_mc, 0, goal)


def test_two_choice_max_min(two_choice):
    path = Until(TRUE, Prop("goal"))
    assert opt_prob(two_choice, path, "max") == F(1, 2)
    assert opt_prob(two_choice, path, "min") == F(1, 3)


def test_extract_scheduler_realizes_optimum(two_choice):
    path = Until(TRUE, Prop("goal"))
    sched = extract_opt_scheduler(two_choice, path, "max")
    assert sched[0] == 0
    chain = induce_mc(two_choice, sched)
    assert reach_prob_mc(chain, 0, {1}) == F(1, 2)
    sched_min = extract_opt_scheduler(two_choice, path, "min")
    assert sched_min[0] == 1


def test_tie_break_lowest_index():
    m = MarkovModel.mdp(
        ["s0", "g"],
        0,
        [set(), {"goal"}],
        [[("a", {1: 1}), ("b", {1: 1})], [("0", {1: 1})]],
    )
    sched = extract_opt_scheduler(m, Until(TRUE, Prop("goal")), "max")
    assert sched[0] == 0


def test_unreachable_target_min_zero_needs_avoiding_choice():
    # min scheduler must pick the self-loop to avoid the goal
    m = MarkovModel.mdp(
        ["s0", "g"],
        0,
        [set(), {"goal"}],
        [[("go", {1: 1}), ("stay", {0: 1})], [("0", {1: 1})]],
    )
    path = Until(TRUE, Prop("goal"))
    assert opt_prob(m, path, "min") == 0
    sched = extract_opt_scheduler(m, path, "min")
    assert sched[0] == 1
    assert opt_prob(m, path, "max") == 1


def test_induce_mc_is_identity_on_mc(intro_mc):
    as_mdp = MarkovModel("mdp", intro_mc.states, 0, intro_mc.labels, intro_mc.choices)
    chain = induce_mc(as_mdp, MemorylessScheduler((0,) * intro_mc.n))
    assert chain.choices == intro_mc.choices


def test_globally_duality_exact():
    rng = random.Random(3)
    for _ in range(30):
        m = random_mdp(rng, max_states=5, max_choices=2, nondet_states=2)
        g = Globally(Prop("a"))
        f = Until(TRUE, Not(Prop("a")))
        assert opt_prob(m, g, "max") + opt_prob(m, f, "min") == 1
        assert opt_prob(m, g, "min") + opt_prob(m, f, "max") == 1


def test_opt_until_matches_exhaustive_enumeration():
    rng = random.Random(17)
    for _ in range(40):
        m = random_mdp(rng, max_states=5, max_choices=3, nondet_states=2)
        safe = sat_states(m, Prop("a"))
        target = sat_states(m, Prop("b"))
        for mode in ("max", "min"):
            got, sched = until_opt(m, safe, target, mode)
            want = exhaustive_opt_until(m, safe, target, mode)
            assert got[m.init] == want
            # the returned scheduler attains the value
            chain = induce_mc(m, sched)
            value = chain_path_prob(chain, Until(Prop("a"), Prop("b")))
            assert value == want


def test_monotone_in_target():
    rng = random.Random(23)
    for _ in range(20):
        m = random_mdp(rng, max_states=5, max_choices=2, nondet_states=2)
        small = sat_states(m, Prop("a"))
        big = small | sat_states(m, Prop("b"))
        lo = until_opt(m, frozenset(range(m.n)), small, "max")[0][m.init]
        hi = until_opt(m, frozenset(range(m.n)), frozenset(big), "max")[0][m.init]
        assert hi >= lo
