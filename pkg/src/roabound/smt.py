"""SMT-LIB2 export of certification conditions for external cross-checking.

A condition "target(x) <= bound on the constraint region" becomes a script
asserting the region plus the negated threshold, so an external solver
reporting unsat confirms what the interval engine certified. Numeric
constants are emitted as exact rationals; networks are unfolded into affine
arithmetic plus explicit tanh applications with one auxiliary constant per
intermediate quantity.
"""

from __future__ import annotations

from typing import List

import numpy as np

from .errors import VerificationError
from .expr import Const, Exp, Expression, Tanh, _smt_number, to_smt
from .system import sigma_outer_symbolic


def _expr_children(e):
    out = []
    for name in getattr(e, "__dataclass_fields__", {}):
        child = getattr(e, name)
        if hasattr(child, "__dataclass_fields__"):
            out.append(child)
    return out


def _expr_uses(e: Expression, kinds) -> bool:
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, kinds):
            return True
        stack.extend(_expr_children(node))
    return False


def _sum(terms: List[str]) -> str:
    terms = [t for t in terms if t != "0.0"]
    if not terms:
        return "0.0"
    if len(terms) == 1:
        return terms[0]
    return "(+ " + " ".join(terms) + ")"


def _prod(terms: List[str]) -> str:
    if any(t == "0.0" for t in terms):
        return "0.0"
    terms = [t for t in terms if t != "1.0"]
    if not terms:
        return "1.0"
    if len(terms) == 1:
        return terms[0]
    return "(* " + " ".join(terms) + ")"


class _Emitter:
    """Collects declarations and definitional equalities for one script."""

    def __init__(self, n: int):
        self.n = n
        self.lines: List[str] = []
        self.uses_tanh = False
        self.uses_exp = False
        self._next_prefix = 0

    def fresh_prefix(self) -> str:
        p = f"f{self._next_prefix}"
        self._next_prefix += 1
        return p

    def define(self, name: str, term: str):
        self.lines.append(f"(declare-const {name} Real)")
        self.lines.append(f"(assert (= {name} {term}))")

    def term_for(self, fn) -> str:
        """SMT term computing fn(x1..xn), emitting aux definitions as needed."""
        # imported here: verify depends on this module for export_smt
        from .verify import ExprBoxFunction, NetGenerator, NetValue

        if isinstance(fn, ExprBoxFunction):
            self.uses_tanh |= _expr_uses(fn.e, Tanh)
            self.uses_exp |= _expr_uses(fn.e, Exp)
            return to_smt(fn.e)
        if isinstance(fn, NetValue):
            val, _, _ = self._unfold_network(fn.net, derivatives=False)
            return val
        if isinstance(fn, NetGenerator):
            return self._generator_term(fn)
        raise VerificationError(
            f"cannot export {type(fn).__name__} to SMT-LIB"
        )

    def _unfold_network(self, net, derivatives: bool):
        """Emit aux constants for one forward pass; returns SMT terms for the
        value and, when requested, gradient [i] and Hessian [i][k] entries.

        One tanh application per hidden neuron; first-layer gradients collapse
        to rational constants, so derivative terms stay polynomial in the
        activations.
        """
        p = self.fresh_prefix()
        n = self.n
        acts = [f"x{i + 1}" for i in range(n)]
        # gradients/Hessians of the current activations w.r.t. inputs;
        # entries are SMT terms (input layer: identity / zero)
        J = [["1.0" if i == k else "0.0" for k in range(n)] for i in range(n)]
        H = [[["0.0"] * n for _ in range(n)] for _ in range(n)]

        hidden = list(zip(net.weights[:-1], net.biases[:-1]))
        for l, (w, b) in enumerate(hidden):
            new_acts, new_J, new_H = [], [], []
            for j in range(w.shape[0]):
                z = f"{p}_z{l + 1}_{j + 1}"
                self.define(z, _sum([_prod([_smt_number(float(w[j, k])), acts[k]])
                                     for k in range(w.shape[1])]
                                    + [_smt_number(float(b[j]))]))
                s = f"{p}_s{l + 1}_{j + 1}"
                self.define(s, f"(tanh {z})")
                self.uses_tanh = True
                new_acts.append(s)
                if not derivatives:
                    continue
                # pre-activation derivative terms (affine in previous ones)
                pre_J = [
                    _sum([_prod([_smt_number(float(w[j, k])), J[k][i]])
                          for k in range(w.shape[1])])
                    for i in range(n)
                ]
                pre_H = [
                    [
                        _sum([_prod([_smt_number(float(w[j, k])), H[k][i][m]])
                              for k in range(w.shape[1])])
                        for m in range(n)
                    ]
                    for i in range(n)
                ]
                d1 = f"(- 1.0 (* {s} {s}))"
                d2 = f"(* -2.0 {s} (- 1.0 (* {s} {s})))"
                Jrow, Hrow = [], [[None] * n for _ in range(n)]
                for i in range(n):
                    jname = f"{p}_j{l + 1}_{j + 1}_{i + 1}"
                    self.define(jname, _prod([d1, pre_J[i]]))
                    Jrow.append(jname)
                for i in range(n):
                    for m in range(i, n):
                        hname = f"{p}_h{l + 1}_{j + 1}_{i + 1}_{m + 1}"
                        self.define(
                            hname,
                            _sum([
                                _prod([d2, pre_J[i], pre_J[m]]),
                                _prod([d1, pre_H[i][m]]),
                            ]),
                        )
                        Hrow[i][m] = hname
                        Hrow[m][i] = hname
                new_J.append(Jrow)
                new_H.append(Hrow)
            acts = new_acts
            if derivatives:
                J, H = new_J, new_H

        w_out, b_out = net.weights[-1], net.biases[-1]
        val_term = _sum([_prod([_smt_number(float(w_out[0, k])), acts[k]])
                         for k in range(len(acts))] + [_smt_number(float(b_out[0]))])
        if not derivatives:
            return val_term, None, None
        grad_terms = [
            _sum([_prod([_smt_number(float(w_out[0, k])), J[k][i]])
                  for k in range(len(acts))])
            for i in range(n)
        ]
        hess_terms = [
            [
                _sum([_prod([_smt_number(float(w_out[0, k])), H[k][i][m]])
                      for k in range(len(acts))])
                for m in range(n)
            ]
            for i in range(n)
        ]
        return val_term, grad_terms, hess_terms


    def _generator_term(self, gen) -> str:
        """LW = grad . f + (1/2) sum_ij a_ij hess_ij with a = sigma sigma'."""
        sys = gen.sys
        n = sys.n
        _, grad_terms, hess_terms = self._unfold_network(gen.net, derivatives=True)
        for f_e in sys.f:
            self.uses_tanh |= _expr_uses(f_e, Tanh)
            self.uses_exp |= _expr_uses(f_e, Exp)
        a = sigma_outer_symbolic(sys)
        parts = [_prod([grad_terms[i], to_smt(sys.f[i])]) for i in range(n)]
        for i in range(n):
            for m in range(n):
                entry = a[i][m]
                if isinstance(entry, Const) and entry.value == 0.0:
                    continue
                self.uses_tanh |= _expr_uses(entry, Tanh)
                self.uses_exp |= _expr_uses(entry, Exp)
                parts.append(_prod(["(/ 1.0 2.0)", to_smt(entry), hess_terms[i][m]]))
        return _sum(parts)


def export_smt(cond, name: str = "condition") -> str:
    """Render a Condition as a standalone SMT-LIB2 script.

    The script asserts the domain, the constraint region, and target > bound;
    unsat therefore certifies the condition everywhere on the region.
    """
    n = cond.domain.n
    em = _Emitter(n)

    body: List[str] = []
    for i, iv in enumerate(cond.domain.intervals):
        body.append(f"(assert (<= {_smt_number(iv.lo)} x{i + 1}))")
        body.append(f"(assert (<= x{i + 1} {_smt_number(iv.hi)}))")
    for c in cond.constraints:
        term = em.term_for(c.fn)
        cname = f"{em.fresh_prefix()}_c"
        em.define(cname, term)
        if np.isfinite(c.lo):
            body.append(f"(assert (<= {_smt_number(c.lo)} {cname}))")
        if np.isfinite(c.hi):
            body.append(f"(assert (<= {cname} {_smt_number(c.hi)}))")
    target_term = em.term_for(cond.target)
    em.define("target", target_term)
    body.append(f"(assert (> target {_smt_number(cond.bound)}))")

    header = [
        f"; {name}",
    ]
    if cond.description:
        header.append(f"; condition: {cond.description}")
    header.append(
        f"; claims: target(x) <= {_smt_number(cond.bound)} for all x in the"
        " asserted region"
    )
    header.append("; the threshold is asserted negated: unsat confirms the claim")
    decls = []
    if em.uses_tanh or em.uses_exp:
        header.append(
            "; tanh/exp are declared uninterpreted for portability; use a solver"
        )
        header.append(
            "; with native transcendental support (e.g. dReal) and drop the"
            " declarations"
        )
        if em.uses_tanh:
            decls.append("(declare-fun tanh (Real) Real)")
        if em.uses_exp:
            decls.append("(declare-fun exp (Real) Real)")
    else:
        decls.append("(set-logic QF_NRA)")

    var_decls = [f"(declare-const x{i + 1} Real)" for i in range(n)]
    script = "\n".join(
        header + decls + var_decls + em.lines + body + ["(check-sat)", ""]
    )
    return script
