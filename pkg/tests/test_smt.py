import math
import re

import numpy as np
import pytest

from roabound import expr as ex
from roabound.intervals import Box
from roabound.net import NeuralFunction
from roabound.smt import export_smt
from roabound.system import system_from_dict
from roabound.verify import Condition, Constraint, ExprBoxFunction, NetGenerator, NetValue


# ---------------------------------------------------------------------------
# tiny S-expression evaluator: replays the script's definitional equalities
# to cross-check the unfolding against direct evaluation
# ---------------------------------------------------------------------------

def _parse_sexp(text):
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    pos = 0

    def walk():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            out = []
            while tokens[pos] != ")":
                out.append(walk())
            pos += 1
            return out
        return tok

    return walk()


def _eval_term(t, env):
    if isinstance(t, str):
        if t in env:
            return env[t]
        return float(t)
    op, args = t[0], t[1:]
    if op == "+":
        return sum(_eval_term(a, env) for a in args)
    if op == "*":
        out = 1.0
        for a in args:
            out *= _eval_term(a, env)
        return out
    if op == "-":
        vals = [_eval_term(a, env) for a in args]
        return -vals[0] if len(vals) == 1 else vals[0] - vals[1]
    if op == "/":
        vals = [_eval_term(a, env) for a in args]
        out = vals[0]
        for v in vals[1:]:
            out /= v
        return out
    if op == "tanh":
        return math.tanh(_eval_term(args[0], env))
    if op == "exp":
        return math.exp(_eval_term(args[0], env))
    raise ValueError(f"unknown operator {op}")


def replay_target(script, x):
    env = {f"x{i + 1}": float(v) for i, v in enumerate(x)}
    for line in script.splitlines():
        if not line.startswith("(assert (= "):
            continue
        sexp = _parse_sexp(line)
        _, (_, name, term) = sexp
        env[name] = _eval_term(term, env)
    return env["target"]


def efn(text, n):
    return ExprBoxFunction(ex.parse(text, n))


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def test_polynomial_script_structure():
    cond = Condition(
        target=efn("2*x1^2", 1), bound=2.0,
        domain=Box.from_bounds([[-1.2, 1.2]]),
        constraints=(Constraint(efn("x1^2", 1), hi=1.0),),
        description="squares inclusion",
    )
    script = export_smt(cond, name="inclusion-check")
    assert script.startswith("; inclusion-check")
    assert "; condition: squares inclusion" in script
    assert "unsat confirms" in script
    assert "(set-logic QF_NRA)" in script
    assert "(declare-const x1 Real)" in script
    assert "(assert (> target 2.0))" in script
    assert script.rstrip().endswith("(check-sat)")
    # one-sided constraint asserts only its finite side
    assert script.count("(assert (<= f0_c") == 1
    assert "tanh" not in script


def test_numbers_are_exact_rationals():
    cond = Condition(target=efn("0.1*x1", 1), bound=0.3,
                     domain=Box.from_bounds([[-1.0, 1.0]]))
    script = export_smt(cond)
    assert "(/ 3602879701896397.0 36028797018963968.0)" in script
    assert re.search(r"\d[eE][+-]?\d", script) is None


def test_expression_target_replays_exactly():
    cond = Condition(target=efn("x1^2 - 0.5*x2 + exp(x1*x2)", 2), bound=9.9,
                     domain=Box.from_bounds([[-1.0, 1.0], [-1.0, 1.0]]))
    script = export_smt(cond)
    assert "(declare-fun exp (Real) Real)" in script
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.uniform(-1, 1, size=2)
        want = ex.eval_point(cond.target.e, x)
        assert replay_target(script, x) == pytest.approx(want, rel=1e-12)


def test_network_value_unfolding():
    net = NeuralFunction.init([2, 10, 10, 10, 1], seed=0)
    cond = Condition(target=NetValue(net), bound=5.0,
                     domain=Box.from_bounds([[-2.0, 2.0], [-2.0, 2.0]]))
    script = export_smt(cond)
    # one tanh application per hidden neuron
    assert script.count("(tanh") == 30
    assert "(declare-fun tanh (Real) Real)" in script
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.uniform(-2, 2, size=2)
        assert replay_target(script, x) == pytest.approx(net.value(x), rel=1e-9,
                                                         abs=1e-12)


def test_generator_unfolding_matches_evaluation():
    vdp = system_from_dict({
        "n": 2, "m": 2,
        "f": ["-x2", "x1 - x2 + (x1^2)*x2"],
        "sigma": [["0.5*x1", "0"], ["0", "0.5*x2"]],
        "domain": [[-2.5, 2.5], [-2.5, 2.5]],
    })
    net = NeuralFunction.init([2, 10, 10, 10, 1], seed=2)
    gen = NetGenerator(vdp, net)
    cond = Condition(target=gen, bound=-1e-4, domain=vdp.domain,
                     constraints=(Constraint(NetValue(net), 0.05, 0.9),))
    script = export_smt(cond)
    # the derivative recursion reuses each neuron's activation: still 30 tanh
    # for the generator plus 30 for the level constraint's own forward pass
    assert script.count("(tanh") == 60
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.uniform(-2, 2, size=2)
        want = gen.eval_points(x[None, :])[0]
        assert replay_target(script, x) == pytest.approx(want, rel=1e-8, abs=1e-11)


def test_generator_alone_has_thirty_tanh():
    vdp = system_from_dict({
        "n": 2, "m": 2,
        "f": ["-x2", "x1 - x2 + (x1^2)*x2"],
        "sigma": [["0.5*x1", "0"], ["0", "0.5*x2"]],
        "domain": [[-2.5, 2.5], [-2.5, 2.5]],
    })
    net = NeuralFunction.init([2, 10, 10, 10, 1], seed=4)
    cond = Condition(target=NetGenerator(vdp, net), bound=0.0, domain=vdp.domain)
    assert export_smt(cond).count("(tanh") == 30
