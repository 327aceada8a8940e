"""Stochastic system model dX = f(X)dt + sigma(X)dB and its generator.

The constructor enforces the standing assumptions: f and sigma vanish at the
origin (so the origin is an equilibrium of both drift and noise) and the decay
weight g is positive definite on the working domain. Positivity of g away from
the origin is certified with interval arithmetic on an annulus cover, not just
sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence, Tuple

import numpy as np

from . import expr as ex
from .errors import SystemDefinitionError
from .expr import Expression, differentiate, eval_many, eval_point, max_index, parse
from .intervals import Box, eval_box_min_positive


class C2Function(Protocol):
    """Anything that can report value, gradient, and Hessian at a batch of points."""

    def value_grad_hess(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """x: (B, n) -> value (B,), gradient (B, n), Hessian (B, n, n)."""
        ...


@dataclass(frozen=True)
class Linearization:
    A: np.ndarray          # (n, n), Jacobian of f at 0
    S: Tuple[np.ndarray, ...]  # m matrices (n, n), Jacobians of sigma columns at 0

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "S", tuple(np.asarray(s, dtype=float) for s in self.S))


@dataclass(frozen=True)
class StochasticSystem:
    n: int
    m: int
    f: Tuple[Expression, ...]
    sigma: Tuple[Tuple[Expression, ...], ...]  # n rows of m entries
    g: Expression
    domain: Box
    pd_delta: float = 0.0  # inner annulus radius for the g-positivity check; 0 = auto

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise SystemDefinitionError("state and noise dimensions must be >= 1")
        if len(self.f) != self.n:
            raise SystemDefinitionError(f"drift has {len(self.f)} components, expected {self.n}")
        if len(self.sigma) != self.n or any(len(row) != self.m for row in self.sigma):
            raise SystemDefinitionError(f"diffusion must be {self.n}x{self.m}")
        if self.domain.n != self.n:
            raise SystemDefinitionError("domain dimension mismatch")
        for e in list(self.f) + [c for row in self.sigma for c in row] + [self.g]:
            if max_index(e) >= self.n:
                raise SystemDefinitionError(
                    f"expression {ex.to_text(e)} uses a variable beyond x{self.n}"
                )
        origin = np.zeros(self.n)
        for i, fi in enumerate(self.f):
            if eval_point(fi, origin) != 0.0:
                raise SystemDefinitionError(f"f{i + 1}(0) != 0: origin is not an equilibrium")
        for i, row in enumerate(self.sigma):
            for k, s in enumerate(row):
                if eval_point(s, origin) != 0.0:
                    raise SystemDefinitionError(f"sigma[{i + 1},{k + 1}](0) != 0")
        if eval_point(self.g, origin) != 0.0:
            raise SystemDefinitionError("g(0) != 0")
        delta = self.pd_delta if self.pd_delta > 0 else 1e-3 * self.domain.radius
        _check_g_positive(self.g, self.domain, delta)

    # -- numeric batch evaluation ------------------------------------------

    def drift(self, x: np.ndarray) -> np.ndarray:
        """f(x) for x shaped (B, n); returns (B, n)."""
        return np.stack([eval_many(fi, x) for fi in self.f], axis=-1)

    def diffusion(self, x: np.ndarray) -> np.ndarray:
        """sigma(x) for x shaped (B, n); returns (B, n, m)."""
        cols = [
            np.stack([eval_many(self.sigma[i][k], x) for k in range(self.m)], axis=-1)
            for i in range(self.n)
        ]
        return np.stack(cols, axis=-2)

    def diffusion_outer(self, x: np.ndarray) -> np.ndarray:
        """sigma(x) sigma(x)^T, shaped (B, n, n)."""
        s = self.diffusion(x)
        return np.einsum("...ik,...jk->...ij", s, s)

    def weight(self, x: np.ndarray) -> np.ndarray:
        return eval_many(self.g, x)


def _check_g_positive(g: Expression, domain: Box, delta: float):
    """Certify g > 0 on {x in domain : ||x||_inf >= delta} via interval bounds.

    The annulus is covered by 2n slabs (one per face direction); each slab must
    admit a strictly positive interval lower bound, refining by bisection where
    a single box is too loose.
    """
    if delta <= 0 or delta >= domain.radius:
        raise SystemDefinitionError("annulus radius for the g check must be in (0, radius)")
    bounds = domain.to_bounds()
    for dim in range(domain.n):
        for lo_k, hi_k in ((delta, bounds[dim][1]), (bounds[dim][0], -delta)):
            if lo_k > hi_k:
                raise SystemDefinitionError(
                    f"domain too small along x{dim + 1} for the g-positivity annulus"
                )
            slab = [list(b) for b in bounds]
            slab[dim] = [lo_k, hi_k]
            if not eval_box_min_positive(
                lambda los, his: ex.eval_interval_many(g, los, his),
                Box.from_bounds(slab),
                max_boxes=4096,
            ):
                raise SystemDefinitionError(
                    "could not certify g > 0 away from the origin "
                    f"(slab x{dim + 1} in [{lo_k}, {hi_k}])"
                )
    # spot check: sampled nonzero points must give strictly positive values
    rng = np.random.default_rng(0)
    pts = domain.sample(rng, 256)
    keep = np.max(np.abs(pts), axis=1) >= delta
    vals = eval_many(g, pts[keep])
    if not np.all(vals > 0):
        raise SystemDefinitionError("g takes a nonpositive value at a sampled point")


# ---------------------------------------------------------------------------
# Generator and linearization
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def sigma_outer_symbolic(sys: StochasticSystem) -> Tuple[Tuple[Expression, ...], ...]:
    """Symbolic a(x) = sigma sigma^T, cached per system (reused for every V)."""
    a = [[ex.ZERO for _ in range(sys.n)] for _ in range(sys.n)]
    for i in range(sys.n):
        for j in range(i, sys.n):
            acc: Expression = ex.ZERO
            for k in range(sys.m):
                acc = ex.add(acc, ex.mul(sys.sigma[i][k], sys.sigma[j][k]))
            a[i][j] = acc
            a[j][i] = acc
    return tuple(tuple(row) for row in a)


@lru_cache(maxsize=256)
def generator_apply(sys: StochasticSystem, V: Expression) -> Expression:
    """LV = V_x f + (1/2) Tr[sigma^T V_xx sigma], as one Expression."""
    grads = [differentiate(V, i) for i in range(sys.n)]
    out: Expression = ex.ZERO
    for i in range(sys.n):
        out = ex.add(out, ex.mul(grads[i], sys.f[i]))
    a = sigma_outer_symbolic(sys)
    for i in range(sys.n):
        hii = differentiate(grads[i], i)
        out = ex.add(out, ex.mul(ex.mul(ex.Const(0.5), a[i][i]), hii))
        for j in range(i + 1, sys.n):
            hij = differentiate(grads[i], j)
            out = ex.add(out, ex.mul(a[i][j], hij))  # symmetric pair folds the 1/2
    return out


def linearize(sys: StochasticSystem) -> Linearization:
    """A = Df(0) and S_k = D(sigma column k)(0), by exact differentiation at 0."""
    origin = np.zeros(sys.n)
    A = np.empty((sys.n, sys.n))
    for i in range(sys.n):
        for j in range(sys.n):
            A[i, j] = eval_point(differentiate(sys.f[i], j), origin)
    S = []
    for k in range(sys.m):
        Sk = np.empty((sys.n, sys.n))
        for i in range(sys.n):
            for j in range(sys.n):
                Sk[i, j] = eval_point(differentiate(sys.sigma[i][k], j), origin)
        S.append(Sk)
    return Linearization(A, tuple(S))


@dataclass(frozen=True)
class ExprC2Function:
    """Expression wrapper satisfying the C2Function protocol."""

    e: Expression
    n: int
    grads: Tuple[Expression, ...] = field(init=False)
    hess: Tuple[Tuple[Expression, ...], ...] = field(init=False)

    def __post_init__(self):
        grads = tuple(differentiate(self.e, i) for i in range(self.n))
        hess = tuple(
            tuple(differentiate(grads[i], j) for j in range(self.n)) for i in range(self.n)
        )
        object.__setattr__(self, "grads", grads)
        object.__setattr__(self, "hess", hess)

    def value_grad_hess(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        v = eval_many(self.e, x)
        grad = np.stack([eval_many(gi, x) for gi in self.grads], axis=-1)
        hess = np.stack(
            [np.stack([eval_many(h, x) for h in row], axis=-1) for row in self.hess],
            axis=-2,
        )
        return v, grad, hess


def zubov_residual(sys: StochasticSystem, W: C2Function):
    """Pointwise residual of the stochastic Zubov equation, LW + g(1 - W).

    Returns a callable mapping x of shape (n,) or (B, n) to the residual;
    identically zero iff W satisfies the equation on the evaluated set.
    """

    def residual(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        v, grad, hess = W.value_grad_hess(pts)
        fx = sys.drift(pts)
        lw = np.einsum("bi,bi->b", grad, fx)
        lw = lw + 0.5 * np.einsum("bij,bij->b", sys.diffusion_outer(pts), hess)
        r = lw + sys.weight(pts) * (1.0 - v)
        return float(r[0]) if single else r

    return residual


# ---------------------------------------------------------------------------
# System definition files
# ---------------------------------------------------------------------------

def default_weight(n: int) -> Expression:
    """0.1*(x1^2 + ... + xn^2)."""
    s: Expression = ex.ZERO
    for i in range(n):
        s = ex.add(s, ex.power(ex.Var(i), 2))
    return ex.mul(ex.Const(0.1), s)


def system_from_dict(d: dict) -> StochasticSystem:
    """Build a system from the definition-file schema.

    Keys: n, m, f (n expression strings), sigma (n x m expression strings),
    g (expression string, optional), domain (n [lo, hi] pairs),
    pd_delta (optional positive float).
    """
    try:
        n = int(d["n"])
        m = int(d["m"])
        f_texts = list(d["f"])
        sigma_texts = [list(row) for row in d["sigma"]]
        domain_bounds = [list(map(float, b)) for b in d["domain"]]
    except (KeyError, TypeError, ValueError) as err:
        raise SystemDefinitionError(f"malformed system definition: {err}") from err
    if len(f_texts) != n:
        raise SystemDefinitionError(f"expected {n} drift expressions, got {len(f_texts)}")
    if len(sigma_texts) != n or any(len(r) != m for r in sigma_texts):
        raise SystemDefinitionError(f"sigma must be an {n}x{m} matrix of expressions")
    if len(domain_bounds) != n or any(len(b) != 2 or b[0] >= b[1] for b in domain_bounds):
        raise SystemDefinitionError("domain must give [lo, hi] with lo < hi per dimension")
    f = tuple(parse(t, n) for t in f_texts)
    sigma = tuple(tuple(parse(t, n) for t in row) for row in sigma_texts)
    g = parse(d["g"], n) if "g" in d and d["g"] else default_weight(n)
    return StochasticSystem(
        n=n,
        m=m,
        f=f,
        sigma=sigma,
        g=g,
        domain=Box.from_bounds(domain_bounds),
        pd_delta=float(d.get("pd_delta", 0.0)),
    )
