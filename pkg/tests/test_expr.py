"""Unit tests for the expression module: parse, differentiate, evaluate, print."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roabound import expr
from roabound.errors import NonFiniteError, ParseError
from roabound.expr import (
    Const,
    Mul,
    Neg,
    Pow,
    Sub,
    Var,
    differentiate,
    eval_interval,
    eval_interval_many,
    eval_many,
    eval_point,
    max_index,
    parse,
    to_smt,
    to_text,
)
from roabound.intervals import Box


class TestParse:
    def test_unary_minus(self):
        assert parse("-x2", 2) == Neg(Var(1))

    def test_vdp_drift_structure(self):
        e = parse("x1 - (1 - x1^2)*x2", 2)
        assert e == Sub(Var(0), Mul(Sub(Const(1.0), Pow(Var(0), 2)), Var(1)))

    def test_syntax_error_offset(self):
        with pytest.raises(ParseError) as err:
            parse("x1 + * x2", 2)
        assert err.value.offset == 5

    def test_variable_out_of_range(self):
        with pytest.raises(ParseError):
            parse("x3", 2)

    def test_unknown_identifier(self):
        with pytest.raises(ParseError):
            parse("sin(x1)", 1)

    def test_unbalanced_paren(self):
        with pytest.raises(ParseError):
            parse("(x1 + x2", 2)

    def test_precedence_pow_over_unary_minus(self):
        # -x1^2 parses as -(x1^2)
        e = parse("-x1^2", 1)
        assert abs(eval_point(e, [3.0]) + 9.0) < 1e-15

    def test_left_associative(self):
        assert eval_point(parse("8 - 3 - 2", 1), [0.0]) == 3.0
        assert eval_point(parse("8 / 4 / 2", 1), [0.0]) == 1.0

    def test_integer_exponent_only(self):
        with pytest.raises(ParseError):
            parse("x1^2.5", 1)
        with pytest.raises(ParseError):
            parse("x1^x1", 1)

    def test_negative_exponent(self):
        assert eval_point(parse("x1^-2", 1), [2.0]) == 0.25

    def test_scientific_literal(self):
        assert eval_point(parse("1e-3*x1", 1), [2.0]) == 0.002

    def test_functions(self):
        assert eval_point(parse("tanh(x1) + exp(x1)", 1), [0.0]) == 1.0


class TestDifferentiate:
    def test_power_rule(self):
        d = differentiate(parse("x1^2", 1), 0)
        assert to_text(d) == "2*x1"

    def test_tanh_rule(self):
        d = differentiate(parse("tanh(x1)", 1), 0)
        for x in np.linspace(-2, 2, 9):
            assert abs(eval_point(d, [x]) - (1 - math.tanh(x) ** 2)) < 1e-14

    def test_no_dependence_collapses_to_zero(self):
        d = differentiate(parse("x1*(1 - x1^2)", 2), 1)
        assert d == Const(0.0)

    def test_quotient_rule(self):
        e = parse("x1/(1 + x1^2)", 1)
        d = differentiate(e, 0)
        for x in [-1.5, -0.3, 0.0, 0.7, 2.0]:
            exact = (1 - x * x) / (1 + x * x) ** 2
            assert abs(eval_point(d, [x]) - exact) < 1e-12

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        exprs = [
            parse("x1^3 - 0.5*x2^2 + x1*x2", 2),
            parse("exp(-x1^2 - x2^2)", 2),
            parse("tanh(x1*x2) + x2^4", 2),
            parse("x1*x2/(4 + x1^2)", 2),
        ]
        h = 1e-5
        for e in exprs:
            for _ in range(25):
                x = rng.uniform(-1.5, 1.5, size=2)
                for i in range(2):
                    xp, xm = x.copy(), x.copy()
                    xp[i] += h
                    xm[i] -= h
                    fd = (eval_point(e, xp) - eval_point(e, xm)) / (2 * h)
                    ad = eval_point(differentiate(e, i), x)
                    assert abs(ad - fd) <= 1e-5 * (1 + abs(ad))


class TestEval:
    def test_point_values(self):
        assert eval_point(parse("x1^2 + x2^2", 2), [3.0, 4.0]) == 25.0
        assert eval_point(parse("tanh(x1)", 1), [0.0]) == 0.0
        assert abs(eval_point(parse("exp(x1)", 1), [-0.05]) - math.exp(-0.05)) < 1e-15

    def test_division_by_zero_raises(self):
        with pytest.raises(NonFiniteError):
            eval_point(parse("1/x1", 1), [0.0])

    def test_overflow_raises(self):
        with pytest.raises(NonFiniteError):
            eval_point(parse("exp(x1)", 1), [1e4])

    def test_eval_many_matches_point(self):
        e = parse("x1*x2 - tanh(x1) + 0.3*x2^3", 2)
        pts = np.random.default_rng(0).uniform(-2, 2, size=(64, 2))
        batch = eval_many(e, pts)
        for k in range(64):
            assert batch[k] == eval_point(e, pts[k])

    def test_max_index(self):
        assert max_index(parse("x1 + x3^2", 3)) == 2
        assert max_index(parse("1.5", 1)) == -1


class TestEvalInterval:
    def test_even_power(self):
        iv = eval_interval(parse("x1^2", 1), Box.from_bounds([[-1.0, 2.0]]))
        assert iv.lo == 0.0 and 4.0 <= iv.hi <= 4.0 + 1e-12

    def test_tanh_monotone(self):
        iv = eval_interval(parse("tanh(x1)", 1), Box.from_bounds([[0.0, 1.0]]))
        assert iv.lo <= 0.0 <= math.tanh(1.0) <= iv.hi
        assert iv.hi <= math.tanh(1.0) + 1e-12

    def test_product(self):
        iv = eval_interval(parse("x1*x2", 2), Box.from_bounds([[-1, 1], [-1, 1]]))
        assert iv.lo <= -1.0 and iv.hi >= 1.0
        assert iv.lo >= -1.0 - 1e-12 and iv.hi <= 1.0 + 1e-12

    def test_soundness_sampled_trees(self):
        rng = np.random.default_rng(3)
        pool = [
            parse("x1^2 - x2^2 + x1*x2", 2),
            parse("tanh(x1 - x2)*exp(-x1^2)", 2),
            parse("(x1 + x2)^3 - 2*x1", 2),
            parse("x1/(2 + x2^2)", 2),
            parse("exp(tanh(x1*x2))", 2),
        ]
        for _ in range(300):
            e = pool[rng.integers(len(pool))]
            lo = rng.uniform(-2, 1, size=2)
            hi = lo + rng.uniform(0, 2, size=2)
            box = Box.from_bounds(np.stack([lo, hi], axis=1))
            iv = eval_interval(e, box)
            pts = rng.uniform(lo, hi, size=(100, 2))
            vals = eval_many(e, pts)
            assert np.all(vals >= iv.lo) and np.all(vals <= iv.hi)

    def test_width_monotone_under_shrinking(self):
        rng = np.random.default_rng(4)
        e = parse("x1^3 - x1*x2^2 + tanh(x2)", 2)
        for _ in range(100):
            lo = rng.uniform(-2, 0, size=2)
            hi = lo + rng.uniform(0.5, 2, size=2)
            outer = eval_interval(e, Box.from_bounds(np.stack([lo, hi], axis=1)))
            shrink = rng.uniform(0.1, 0.45, size=2)
            lo2 = lo + shrink * (hi - lo)
            hi2 = hi - shrink * (hi - lo)
            inner = eval_interval(e, Box.from_bounds(np.stack([lo2, hi2], axis=1)))
            assert outer.lo <= inner.lo and inner.hi <= outer.hi

    def test_batched_matches_scalar(self):
        e = parse("x1*x2 - x2^2", 2)
        rng = np.random.default_rng(5)
        lo = rng.uniform(-1, 0, size=(11, 2))
        hi = lo + rng.uniform(0, 1, size=(11, 2))
        blo, bhi = eval_interval_many(e, lo, hi)
        for k in range(11):
            iv = eval_interval(e, Box.from_bounds(np.stack([lo[k], hi[k]], axis=1)))
            assert blo[k] == iv.lo and bhi[k] == iv.hi

    def test_division_straddle_raises(self):
        from roabound.errors import IntervalDivisionError

        with pytest.raises(IntervalDivisionError):
            eval_interval(parse("1/x1", 1), Box.from_bounds([[-1.0, 1.0]]))


# hypothesis strategy for random expression trees over 2 variables
leaf = st.one_of(
    st.builds(Const, st.floats(min_value=-3, max_value=3, allow_nan=False)),
    st.builds(Var, st.integers(min_value=0, max_value=1)),
)


def _tree(children):
    return st.one_of(
        st.builds(expr.add, children, children),
        st.builds(expr.sub, children, children),
        st.builds(expr.mul, children, children),
        st.builds(expr.neg, children),
        st.builds(lambda a: expr.power(a, 2), children),
        st.builds(lambda a: expr.power(a, 3), children),
        st.builds(expr.tanh, children),
    )


trees = st.recursive(leaf, _tree, max_leaves=12)


class TestRoundTrip:
    @given(trees)
    @settings(max_examples=500, deadline=None)
    def test_parse_print_identity(self, e):
        assert parse(to_text(e), 2) == e

    @given(trees, st.floats(-2, 2), st.floats(-2, 2))
    @settings(max_examples=200, deadline=None)
    def test_printed_text_evaluates_identically(self, e, a, b):
        x = np.array([a, b])
        v1 = eval_many(e, x)
        v2 = eval_many(parse(to_text(e), 2), x)
        assert (np.isnan(v1) and np.isnan(v2)) or v1 == v2


class TestSmt:
    def test_basic_forms(self):
        assert to_smt(parse("x1 + x2", 2)) == "(+ x1 x2)"
        assert to_smt(parse("x1^3", 1)) == "(* x1 x1 x1)"
        assert to_smt(parse("-x1", 1)) == "(- x1)"
        assert to_smt(parse("tanh(x1)", 1)) == "(tanh x1)"

    def test_constants_exact_rationals(self):
        s = to_smt(Const(0.5))
        assert s == "(/ 1.0 2.0)"
        s = to_smt(Const(3.0))
        assert s == "3.0"
        s = to_smt(Const(-0.25))
        assert s == "(- (/ 1.0 4.0))"
