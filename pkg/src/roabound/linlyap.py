"""Dense small-matrix routines for the quadratic certificate.

Solves the noise-augmented Lyapunov equation PA + A'P + sum_i S_i' P S_i = -Q
by Kronecker vectorization, provides symmetric eigenvalues via cyclic Jacobi
rotations, and assembles the local-certificate expressions h = LV_P and
M = D^2 h + 2Q whose Frobenius-norm condition bounds the nonlinear remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import expr as ex
from .errors import LinearAlgebraError
from .expr import Expression, differentiate
from .intervals import Box
from .system import StochasticSystem, generator_apply


def symmetric_eigen(mtx: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by cyclic Jacobi iteration.

    Sweeps zero out off-diagonal entries with Givens rotations until the
    off-diagonal Frobenius norm falls below tol (relative to the matrix norm).
    """
    A = np.asarray(mtx, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise LinearAlgebraError("symmetric_eigen requires a square matrix")
    if not np.allclose(A, A.T, atol=1e-10 * (1 + np.max(np.abs(A)))):
        raise LinearAlgebraError("symmetric_eigen requires a symmetric matrix")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    if n == 1:
        return A[0, :1].copy()
    scale = max(1.0, float(np.max(np.abs(A))))
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A**2) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                A[p, q] = A[q, p] = 0.0
    return np.sort(np.diag(A))


def is_hurwitz(A: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(np.asarray(A, dtype=float)).real < 0))


def solve_stochastic_lyapunov(
    A: np.ndarray, S_list: Sequence[np.ndarray], Q: np.ndarray
) -> np.ndarray:
    """Solve PA + A'P + sum_k S_k' P S_k = -Q for symmetric positive definite P.

    Vectorizes row-major: vec(PA) = kron(I, A') vec(P), vec(A'P) = kron(A', I),
    vec(S'PS) = kron(S', S'). Fails cleanly when A is not Hurwitz, the n^2
    system is singular, or the noise is too strong for P to be positive
    definite.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise LinearAlgebraError("A and Q must be square matrices of equal size")
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise LinearAlgebraError("Q must be symmetric")
    if np.min(symmetric_eigen(Q)) <= 0:
        raise LinearAlgebraError("Q must be positive definite")
    if not is_hurwitz(A):
        raise LinearAlgebraError("A is not Hurwitz: linearization admits no quadratic certificate")
    eye = np.eye(n)
    op = np.kron(eye, A.T) + np.kron(A.T, eye)
    for S in S_list:
        S = np.asarray(S, dtype=float)
        op = op + np.kron(S.T, S.T)
    try:
        vec_p = np.linalg.solve(op, -Q.reshape(-1))
    except np.linalg.LinAlgError as err:
        raise LinearAlgebraError(f"vectorized Lyapunov system is singular: {err}") from err
    P = vec_p.reshape(n, n)
    P = 0.5 * (P + P.T)
    residual = P @ A + A.T @ P + sum(
        np.asarray(S, dtype=float).T @ P @ np.asarray(S, dtype=float) for S in S_list
    ) + Q
    res_norm = float(np.linalg.norm(residual, ord="fro"))
    if res_norm > 1e-8:
        raise LinearAlgebraError(f"Lyapunov solve residual {res_norm:.3e} exceeds 1e-8")
    if np.min(symmetric_eigen(P)) <= 0:
        raise LinearAlgebraError(
            "P is not positive definite: noise too strong for a quadratic certificate"
        )
    return P


def quad_form_expression(P: np.ndarray) -> Expression:
    """x'Px as an Expression (symmetric P assumed)."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    out: Expression = ex.ZERO
    for i in range(n):
        out = ex.add(out, ex.mul(ex.Const(float(P[i, i])), ex.power(ex.Var(i), 2)))
        for j in range(i + 1, n):
            out = ex.add(
                out, ex.mul(ex.Const(float(2.0 * P[i, j])), ex.mul(ex.Var(i), ex.Var(j)))
            )
    return out


def local_certificate_expressions(
    sys: StochasticSystem, P: np.ndarray, Q: np.ndarray
) -> Tuple[Expression, Tuple[Tuple[Expression, ...], ...]]:
    """h = L(x'Px) and M = D^2 h + 2Q, all symbolic."""
    h = generator_apply(sys, quad_form_expression(P))
    Q = np.asarray(Q, dtype=float)
    n = sys.n
    grads = [differentiate(h, i) for i in range(n)]
    M = tuple(
        tuple(
            ex.add(differentiate(grads[i], j), ex.Const(float(2.0 * Q[i, j])))
            for j in range(n)
        )
        for i in range(n)
    )
    return h, M


def frobenius_sq_expression(M: Tuple[Tuple[Expression, ...], ...]) -> Expression:
    """Sum of squared entries of a matrix of Expressions (= ||M||_F^2)."""
    out: Expression = ex.ZERO
    for row in M:
        for entry in row:
            out = ex.add(out, ex.power(entry, 2))
    return out


def ellipsoid_box_cap(P: np.ndarray, domain: Box) -> float:
    """Largest c with {x'Px <= c} contained in the domain box.

    The ellipsoid's extent along axis i is sqrt(c * (P^{-1})_ii), so the cap is
    min_i side_i^2 / (P^{-1})_ii with side_i the smaller distance from 0 to the
    two faces. Requires the origin strictly inside the domain.
    """
    P = np.asarray(P, dtype=float)
    pinv_diag = np.diag(np.linalg.inv(P))
    cap = np.inf
    for i, iv in enumerate(domain.intervals):
        if not (iv.lo < 0.0 < iv.hi):
            raise LinearAlgebraError("domain must contain the origin in its interior")
        side = min(-iv.lo, iv.hi)
        cap = min(cap, side * side / float(pinv_diag[i]))
    return float(cap)


def default_epsilon(Q: np.ndarray) -> float:
    """Margin for r = lambda_min(Q) - epsilon; small relative to lambda_min."""
    return 1e-4 * float(np.min(symmetric_eigen(np.asarray(Q, dtype=float))))


@dataclass
class QuadraticCertificate:
    """Quadratic certificate state: the solved P plus verified level constants."""

    P: np.ndarray
    Q: np.ndarray
    epsilon: float
    r: float
    c_local: float = 0.0
    c2: float = 0.0
    statuses: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        if not np.allclose(self.P, self.P.T, atol=1e-10):
            raise LinearAlgebraError("certificate P must be symmetric")
        if self.statuses.get("solved") == "CERTIFIED" and np.min(symmetric_eigen(self.P)) <= 0:
            raise LinearAlgebraError("solved certificate requires positive definite P")
        if self.c_local > 0 and self.c2 > 0 and not self.c_local <= self.c2:
            raise LinearAlgebraError("c_local must not exceed c2")

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "epsilon": self.epsilon,
            "r": self.r,
            "c_local": self.c_local,
            "c2": self.c2,
            "statuses": dict(self.statuses),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticCertificate":
        return cls(
            P=np.asarray(d["P"], dtype=float),
            Q=np.asarray(d["Q"], dtype=float),
            epsilon=float(d["epsilon"]),
            r=float(d["r"]),
            c_local=float(d.get("c_local", 0.0)),
            c2=float(d.get("c2", 0.0)),
            statuses=dict(d.get("statuses", {})),
        )


def find_local_level(
    sys: StochasticSystem,
    P: np.ndarray,
    Q: np.ndarray,
    r: float,
    *,
    rel_tol: float = 1e-2,
    cap: Optional[float] = None,
    budget: int = 5_000_000,
    min_width_frac: float = 1e-3,
):
    """Largest bisection level c with {x'Px <= c} => ||M(x)||_F^2 <= 4r^2 certified.

    Returns a LevelSearchResult from the verify module (level, final outcome,
    probe history). The Frobenius condition is checked squared to stay in
    polynomial interval arithmetic.
    """
    from .verify import ExprBoxFunction, find_largest_level

    if r <= 0:
        raise ValueError("find_local_level requires r > 0 (epsilon below lambda_min(Q))")
    _, M = local_certificate_expressions(sys, P, Q)
    target = ExprBoxFunction(frobenius_sq_expression(M))
    level_fn = ExprBoxFunction(quad_form_expression(P))
    if cap is None:
        cap = ellipsoid_box_cap(P, sys.domain)
    return find_largest_level(
        target=target,
        bound=4.0 * r * r,
        level_fn=level_fn,
        domain=sys.domain,
        cap=cap,
        rel_tol=rel_tol,
        budget=budget,
        min_width_frac=min_width_frac,
    )
