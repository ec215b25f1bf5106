import pytest

import mela
from mela.diagnostics import ERROR, WARNING
from mela.parser import parse_model
from mela.semantics import enabled_transitions, initial_state
from mela.stochastic import enumerate_state_space

from helpers import SI_TEXT


def errors(diags):
    return [d for d in diags if d.severity == ERROR]


def warnings(diags):
    return [d for d in diags if d.severity == WARNING]


@pytest.mark.parametrize("name", mela.CORPUS)
def test_corpus_validates_cleanly(name):
    assert mela.validate(mela.load_corpus(name)) == []


def test_init_location_outside_space():
    m = parse_model(SI_TEXT.replace("I(1)[1];", "I(3)[1];"))
    (d,) = mela.validate(m)
    assert d.severity == ERROR
    assert "location outside space" in d.message
    assert d.line is not None


def test_unmatched_passive_action_warns():
    text = SI_TEXT.replace("  + ->{l}(contact, c) . I(l);", ";").replace("(moveI, mI) . I(new(l))\n;",
                                                                          "(moveI, mI) . I(new(l));")
    m = parse_model(text)
    diags = mela.validate(m)
    assert not errors(diags)
    assert any("unmatched passive action" in d.message and "contact" in d.message for d in warnings(diags))
    # and indeed no contact step is ever possible
    ctmc = enumerate_state_space(m.with_params(b=0.0), caps=4)
    assert all(lab.action != "contact" for lab in ctmc.labels)


def test_unmatched_influence_warns():
    m = parse_model(SI_TEXT.replace("  + <-(contact, p) . I(l);", ";").replace("S(new(l))\n;", "S(new(l));"))
    assert any("unmatched influence action" in d.message for d in warnings(mela.validate(m)))


def test_unknown_parameter_is_named():
    m = parse_model(SI_TEXT.replace("(deathI, dI)", "(deathI, dX)"))
    (d,) = errors(mela.validate(m))
    assert "dX" in d.message


@pytest.mark.parametrize("body, fragment", [
    ("(a, 1) . B(l)", "undefined agent 'B'"),
    ("(a, 1) . A(l) + C(l)", "undefined agent 'C'"),
    ("(a, #B(l)) . A(l)", "undefined agent 'B'"),
    ("(a, 1) . A(l, l)", "coordinate"),
    ("(a, 1) . A(q)", "unbound location variable"),
    ("(a, 1) . A(7)", "outside space"),
    ("(a, -1) . A(l)", "negative"),
    ("<-(a, 1.5) . A(l)", "exceeds"),
    ("(a, 1) . A(new_v(l))", "nested space"),
    ("A(l)", "unguarded recursion"),
])
def test_error_diagnostics(body, fragment):
    m = parse_model(f"space line(3); agent A(l) = {body}; init = A(1);")
    msgs = [d.message for d in errors(mela.validate(m))]
    assert any(fragment in s for s in msgs), msgs


def test_mutual_unguarded_recursion():
    m = parse_model("space line(1); agent A(l) = B(l); agent B(l) = (x, 1) . A(l) + A(l); init = A(1);")
    assert any("unguarded recursion" in d.message for d in errors(mela.validate(m)))


def test_guarded_mutual_recursion_is_fine():
    m = parse_model("space line(1); agent A(l) = (go, 1) . B(l); agent B(l) = (back, 2) . A(l) + A(l);"
                    " init = A(1);")
    assert mela.validate(m) == []


def test_mixed_active_passive_warns():
    m = parse_model("space line(1); agent A(l) = ->{l}(x, 1) . A(l) + <-(x, 0.5) . A(l); init = A(1)[2];")
    diags = mela.validate(m)
    assert not errors(diags)
    assert any(d.code == "mixed" for d in diags)


def test_arity_mismatch():
    m = parse_model("space grid2d(2, 2); agent A(l) = nil; init = A(1);")
    assert any(d.code == "arity" for d in errors(mela.validate(m)))


def test_init_problems():
    m = parse_model("space line(2); agent A(l) = nil; env E = ->{all}(x, 1) . E; init = A | E(1) | Z(1);")
    msgs = " ".join(d.message for d in errors(mela.validate(m)))
    assert "agent needs a location" in msgs
    assert "environment factors have no location" in msgs
    assert "undefined agent" in msgs


def test_missing_space_and_init():
    m = parse_model("agent A(l) = nil;")
    codes = {d.code for d in errors(mela.validate(m))}
    assert {"space", "init"} <= codes


def test_validate_never_raises_on_bad_graph():
    m = parse_model("space graph { 1: [5]; } agent A(v) = nil; init = A(1);")
    assert any(d.code == "space" for d in mela.validate(m))


def test_semantics_of_validated_model_needs_no_checks():
    m = mela.load_corpus("si")
    assert len(enabled_transitions(m, initial_state(m))) == 9
