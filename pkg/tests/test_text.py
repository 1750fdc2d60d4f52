from fractions import Fraction as F

import pytest

from qleak.formulas import (
    And,
    CondQuery,
    FormulaError,
    Globally,
    Not,
    ProbQuery,
    Prop,
    TRUE,
    Until,
    format_formula,
    parse_formula,
)
from qleak.models import Ihs, MarkovModel, ModelError
from qleak.text import ParseError, emit_report, parse_model, serialize_model

from conftest import load_fixture


def test_minimal_mc():
    m = parse_model("model mc\nstate s\ninit s\nrow s : 1 s\n")
    assert isinstance(m, MarkovModel) and m.is_mc and m.n == 1


def test_intro_fixture_shape(intro_mc):
    assert intro_mc.n == 5
    assert intro_mc.row(0).get(2) == F(3, 5)
    assert intro_mc.row(2).get(2) == F(99, 100)
    assert intro_mc.labels[3] == frozenset({"psi"})


def test_crowds_fixture_shape(crowds):
    assert isinstance(crowds, Ihs)
    assert crowds.n == 5
    assert crowds.trans[1].get(("A", 3)) == F(3, 10)


def test_decimal_probabilities_are_exact():
    m = parse_model("model mc\nstate s\nstate t\ninit s\nrow s : 0.25 s , 0.75 t\nrow t : 1 t\n")
    assert m.row(0).get(0) == F(1, 4)


def test_parse_error_carries_line_number():
    with pytest.raises(ParseError, match="line 4"):
        parse_model("model mc\nstate s\ninit s\nrow s : 0.5 s\n")


def test_unknown_state_rejected():
    with pytest.raises(ParseError, match="unknown state"):
        parse_model("model mc\nstate s\ninit s\nrow s : 1 nope\n")


def test_non_stochastic_row_rejected():
    with pytest.raises(ParseError, match="sums to"):
        parse_model("model mc\nstate s\nstate t\ninit s\nrow s : 9/10 t\nrow t : 1 t\n")


def test_validation_error_from_parse():
    bad = """
model ihs
state i
state q
init i
secret s
observable o
act i : 1 s q
act q : 1/2 o q , 1/2 o i
"""
    with pytest.raises(ModelError, match="cycle"):
        parse_model(bad)


@pytest.mark.parametrize(
    "name", ["crowds.ihs", "crowds_var.ihs", "ebay.ihs", "intro.mc", "scc_example.mc"]
)
def test_serialize_round_trip(name):
    model = load_fixture(name)
    text = serialize_model(model)
    again = parse_model(text)
    assert again == model
    assert serialize_model(again) == text


def test_round_trip_mdp():
    text = """
model mdp
state s0
state s1 goal
init s0
choice s0 a : 1/2 s0 , 1/2 s1
choice s0 b : 1 s1
choice s1 only : 1 s1
"""
    m = parse_model(text)
    assert len(m.choices[0]) == 2
    assert parse_model(serialize_model(m)) == m


# --- formulas ---------------------------------------------------------------


def test_parse_f_rewrites_to_until():
    f = parse_formula("CP<=0.5 [ F B | G P ]")
    assert isinstance(f, CondQuery)
    assert f.op == "<=" and f.bound == F(1, 2)
    assert f.num == Until(TRUE, Prop("B"))
    assert f.den == Globally(Prop("P"))


def test_parse_until_query():
    f = parse_formula("P>=1 [ a U b ]")
    assert isinstance(f, ProbQuery)
    assert f.path == Until(Prop("a"), Prop("b"))
    assert f.bound == 1


def test_parse_conjunction_inside_path_argument():
    f = parse_formula("CP<0.75 [ F (B & !C) | G P ]")
    assert f.num == Until(TRUE, And(Prop("B"), Not(Prop("C"))))


def test_negated_path_operators_rewrite():
    f = parse_formula("P<=0.5 [ ! F a ]")
    assert f.path == Globally(Not(Prop("a")))
    g = parse_formula("P<=0.5 [ ! G a ]")
    assert g.path == Until(TRUE, Not(Prop("a")))


def test_nested_quantifier_rejected():
    with pytest.raises(FormulaError):
        parse_formula("P<=0.5 [ F P<=0.1 [ F a ] ]")


def test_negated_until_rejected():
    with pytest.raises(FormulaError):
        parse_formula("P<=0.5 [ ! a U b ]")


def test_formula_round_trip():
    for text in [
        "CP<=1/2[ true U B | G P ]",
        "P>=1[ a U b ]",
        "CP<3/4[ true U (B & !C) | G P ]",
    ]:
        assert format_formula(parse_formula(format_formula(parse_formula(text)))) == format_formula(
            parse_formula(text)
        )


# --- reports ----------------------------------------------------------------


def test_emit_json_rationals_are_strings():
    out = emit_report({"query": "q", "result": {"value": F(21, 40)}}, "json")
    assert '"21/40"' in out


def test_emit_csv_exact():
    report = {"csv": [["secret", "A"], ["a", F(21, 40)]]}
    assert emit_report(report, "csv") == "secret,A\na,21/40\n"


def test_emit_empty_witness_list_json():
    out = emit_report({"query": "q", "result": {"witnesses": []}}, "json")
    assert '"witnesses": []' in out


def test_emit_text_has_decimal_approx():
    out = emit_report({"value": F(1, 3)}, "text")
    assert "1/3" in out and "0.333333" in out
