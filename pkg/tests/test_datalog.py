from __future__ import annotations

import logging
import random

import pytest

from mdclean.datalog import (
    AspRule,
    Literal,
    Program,
    Rule,
    evaluate,
    format_program,
    format_rule_ast,
    make_builtins,
    parse_asp,
    parse_program,
    stratify,
)
from mdclean.errors import (
    NotStratifiable,
    ParseError,
    UnsafeRule,
    ValidationError,
)
from mdclean.model import MatchingFunction, SimilarityRelation
from mdclean.terms import Compound, Var

from naive_dl import naive_evaluate, random_program

CHAIN_MF = MatchingFunction(
    {
        "domb": [
            ("b1", "b2", "b12"),
            ("b2", "b3", "b23"),
            ("b1", "b23", "b123"),
            ("b3", "b4", "b34"),
        ]
    }
)


def chain_env():
    sim = SimilarityRelation({"domb": [("b1", "b2"), ("b2", "b3")], "doma": [("a1", "a2")]})
    smf = CHAIN_MF.saturate()
    return sim, smf


# -- parsing ---------------------------------------------------------------


def test_parse_plain_rule():
    program = parse_program(
        """
        % transitive closure
        edge(a, b).
        edge(b, c).
        reach(X, Y) :- edge(X, Y).
        reach(X, Y) :- reach(X, Z), edge(Z, Y).
        """
    )
    assert program.facts == {"edge": {("a", "b"), ("b", "c")}}
    assert len(program.rules) == 2
    head = program.rules[1].head
    assert head == Literal("reach", (Var("X"), Var("Y")))


def test_parse_asp_disjunction_and_constraint():
    rules = parse_asp("a(X) | b(X) :- c(X). :- a(X), b(X). d(k).")
    assert [len(r.heads) for r in rules] == [2, 0, 1]
    assert rules[1].is_constraint
    assert rules[2].is_fact
    assert rules[0] == AspRule(
        (Literal("a", (Var("X"),)), Literal("b", (Var("X"),))),
        (Literal("c", (Var("X"),)),),
    )


def test_parse_quoted_and_numeric_constants():
    program = parse_program('p("Hello World", 42).')
    assert program.facts == {"p": {("Hello World", "42")}}
    assert format_program(program) == 'p("Hello World", 42).\n'


def test_parse_function_terms():
    [rule] = parse_asp("prec(mt(T, A), mt(U, B)) :- q(T, A), q(U, B).")
    left, right = rule.heads[0].args
    assert left == Compound("mt", (Var("T"), Var("A")))
    assert right == Compound("mt", (Var("U"), Var("B")))
    assert format_rule_ast(rule) == "prec(mt(T, A), mt(U, B)) :- q(T, A), q(U, B)."


def test_parse_negation_and_neq():
    [rule] = parse_asp("p(X) :- q(X), not r(X), X != c.")
    assert rule.body[1].negated
    assert rule.body[2] == Literal("!=", (Var("X"), "c"))
    assert format_rule_ast(rule) == "p(X) :- q(X), not r(X), X != c."


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_asp("p(X")
    with pytest.raises(ParseError):
        parse_asp("p(X) :- .")
    with pytest.raises(ParseError):
        parse_asp("X :- a.")
    with pytest.raises(ParseError):
        parse_asp("p(X)")  # missing final dot
    err = None
    try:
        parse_asp("p(a).\nq(b) :- $.")
    except ParseError as e:
        err = e
    assert err is not None and err.line == 2


def test_datalog_layer_rejects_asp_forms():
    with pytest.raises(ValidationError):
        parse_program("a(X) | b(X) :- c(X).")
    with pytest.raises(ValidationError):
        parse_program(":- a(X).")
    with pytest.raises(ValidationError):
        parse_program("p(X).")
    with pytest.raises(ValidationError):
        parse_program("p(mt(a, b)).")


def test_format_round_trip_is_stable():
    text = """
    q(a2). q(b).
    p(X, Y) :- q(X), q(Y), X != Y.
    r(X) :- p(X, Y), not q(Y).
    """
    once = format_program(parse_program(text))
    assert format_program(parse_program(once)) == once


# -- validation ------------------------------------------------------------


def test_mixed_arity_rejected():
    with pytest.raises(ValidationError):
        parse_program("p(a). p(a, b).")
    with pytest.raises(ValidationError):
        parse_program("p(a). q(X) :- p(X, Y).")


def test_builtin_heads_and_negation_rejected():
    with pytest.raises(ValidationError):
        Program([Rule(Literal("sim", (Var("X"),) * 3), (Literal("p", (Var("X"),)),))],
                builtins=make_builtins(SimilarityRelation()))
    with pytest.raises(ValidationError):
        parse_program("p(X) :- q(X), not X != X.")


def test_unsafe_rules_rejected():
    with pytest.raises(UnsafeRule):
        parse_program("q(a). p(X) :- q(Y).")
    with pytest.raises(UnsafeRule):
        parse_program("q(a). p(X) :- q(X), not r(X, Y).")
    with pytest.raises(UnsafeRule):
        parse_program("q(a). p(X) :- q(X), X != Y.")


# -- stratification --------------------------------------------------------


def test_stratify_layers():
    program = parse_program(
        """
        node(a). edge(a, b).
        reach(X, Y) :- edge(X, Y).
        reach(X, Y) :- reach(X, Z), edge(Z, Y).
        blocked(X, Y) :- node(X), node(Y), not reach(X, Y).
        """
    )
    assert stratify(program) == [["edge", "node", "reach"], ["blocked"]]


def test_stratify_facts_only():
    assert stratify(parse_program("e(a).")) == [["e"]]


def test_not_stratifiable():
    program = parse_program("q(a). p(X) :- q(X), not p(X).")
    with pytest.raises(NotStratifiable) as exc:
        stratify(program)
    assert "p" in str(exc.value)
    win = parse_program("move(a, b). win(X) :- move(X, Y), not win(Y).")
    with pytest.raises(NotStratifiable):
        stratify(win)


# -- evaluation ------------------------------------------------------------


def test_transitive_closure():
    program = parse_program(
        """
        edge(a, b). edge(b, c). edge(c, d).
        reach(X, Y) :- edge(X, Y).
        reach(X, Y) :- reach(X, Z), edge(Z, Y).
        """
    )
    model = evaluate(program)
    assert model.get("reach") == {
        ("a", "b"), ("a", "c"), ("a", "d"),
        ("b", "c"), ("b", "d"),
        ("c", "d"),
    }


def test_negation_against_lower_stratum():
    program = parse_program(
        """
        node(a). node(b). node(c).
        edge(a, b).
        reach(X, Y) :- edge(X, Y).
        reach(X, Y) :- reach(X, Z), edge(Z, Y).
        apart(X, Y) :- node(X), node(Y), X != Y, not reach(X, Y).
        """
    )
    model = evaluate(program)
    assert model.get("apart") == {
        ("a", "c"), ("b", "a"), ("b", "c"), ("c", "a"), ("c", "b"),
    }


def test_double_recursion_needs_both_delta_sides():
    program = parse_program(
        """
        edge(n1, n2). edge(n2, n3). edge(n3, n4). edge(n4, n5).
        path(X, Y) :- edge(X, Y).
        path(X, Y) :- path(X, Z), path(Z, Y).
        """
    )
    nodes = ["n1", "n2", "n3", "n4", "n5"]
    expected = {
        (a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:]
    }
    assert evaluate(program).get("path") == expected


def test_sim_builtin():
    sim, smf = chain_env()
    program = parse_program(
        """
        item(a1). item(a2). item(a3).
        buddy(X, Y) :- item(X), item(Y), sim(doma, X, Y), X != Y.
        """,
        make_builtins(sim, smf),
    )
    assert evaluate(program).get("buddy") == {("a1", "a2"), ("a2", "a1")}


def test_mf_builtin_binds_result(caplog):
    sim, smf = chain_env()
    program = parse_program(
        """
        pair(b1, b2). pair(b2, b4). pair(b12, b3).
        merged(Z) :- pair(X, Y), mf(domb, X, Y, Z).
        """,
        make_builtins(sim, smf),
    )
    with caplog.at_level(logging.WARNING, logger="mdclean.datalog"):
        model = evaluate(program)
    assert model.get("merged") == {("b12",), ("b123",)}
    assert "undefined" in caplog.text


def test_mf_builtin_checks_bound_result():
    sim, smf = chain_env()
    program = parse_program(
        """
        pair(b1, b2). pair(b2, b3).
        hit(X, Y) :- pair(X, Y), mf(domb, X, Y, b12).
        """,
        make_builtins(sim, smf),
    )
    assert evaluate(program).get("hit") == {("b1", "b2")}


def test_pre_builtin():
    sim, smf = chain_env()
    program = parse_program(
        """
        candidate(b1). candidate(b23). candidate(b34). candidate(b4).
        below(X) :- candidate(X), pre(domb, X, b123).
        """,
        make_builtins(sim, smf),
    )
    assert evaluate(program).get("below") == {("b1",), ("b23",)}


def test_model_ignores_empty_relations():
    program = parse_program("e(a). p(X) :- e(X), X != a.")
    model = evaluate(program)
    assert model.get("p") == frozenset()
    assert "p" not in model.relations


def test_matches_reference_on_handwritten_programs():
    sim, smf = chain_env()
    texts = [
        """
        e0(c1). e0(c2). l(X, Y) :- e0(X), e0(Y).
        t(X) :- l(X, Y), X != Y.
        """,
        """
        edge(a, b). edge(b, a). edge(b, c).
        r(X, Y) :- edge(X, Y).
        r(X, Y) :- r(X, Z), r(Z, Y).
        s(X) :- r(X, X).
        q(X) :- edge(X, Y), not s(X).
        """,
    ]
    for text in texts:
        program = parse_program(text, make_builtins(sim, smf))
        expected = naive_evaluate(program.rules, program.facts, sim, smf)
        assert evaluate(program).relations == expected


def test_matches_reference_on_random_programs():
    sim, smf = chain_env()
    for seed in range(30):
        rng = random.Random(seed)
        rules, facts = random_program(rng)
        program = Program(rules, facts, make_builtins(sim, smf))
        expected = naive_evaluate(rules, facts, sim, smf)
        assert evaluate(program).relations == expected, f"seed {seed}"


def test_matches_reference_on_random_builtin_programs():
    sim, smf = chain_env()
    for seed in range(20):
        rng = random.Random(1000 + seed)
        rules, facts = random_program(rng, with_builtins=True)
        program = Program(rules, facts, make_builtins(sim, smf))
        expected = naive_evaluate(rules, facts, sim, smf)
        assert evaluate(program).relations == expected, f"seed {seed}"
