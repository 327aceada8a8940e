"""Sound certification engine: interval branch-and-bound over boxes.

Certifies conditions of the form "target(x) <= bound for every x in the
constraint region" by breadth-first box subdivision. A box is discharged when
the constraint enclosures prove it disjoint from the region, or the target
enclosure's upper bound meets the threshold. Falsification always goes through
a pointwise witness; enclosures alone never refute. UNKNOWN (budget or width
floor) is an acceptable outcome and never silently upgraded.

Every search here works on batches of boxes stored as (B, n) lo/hi arrays so
the interval kernels amortize across the whole frontier.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import VerificationError
from .expr import Expression, differentiate, eval_interval_many, eval_many
from .intervals import Box, Interval, iadd, ilinmap, imul, ineg, ipow, isub, itanh, split_boxes, split_weight
from .net import NeuralFunction
from .system import StochasticSystem, sigma_outer_symbolic


class BoxFunction(Protocol):
    """Scalar function with pointwise evaluation and sound box enclosures."""

    def eval_points(self, x: np.ndarray) -> np.ndarray:
        """x (B, n) -> values (B,)."""
        ...

    def eval_boxes(self, los: np.ndarray, his: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Boxes as (B, n) arrays -> enclosure (lo (B,), hi (B,))."""
        ...


@dataclass(eq=False)
class ExprBoxFunction:
    e: Expression

    def eval_points(self, x):
        return eval_many(self.e, x)

    def eval_boxes(self, los, his):
        return eval_interval_many(self.e, los, his)


@dataclass(eq=False)
class NetValue:
    """The network's scalar output as a BoxFunction.

    Box enclosures intersect the plain interval forward pass with a centered
    form W(mid) + grad W(box) . (box - mid), which is far tighter on small
    boxes where the layered pass suffers dependency blowup.
    """

    net: NeuralFunction

    def __post_init__(self):
        self._splits = [split_weight(w) for w in self.net.weights]

    def eval_points(self, x):
        return self.net.value(np.asarray(x, dtype=float))

    def _chain(self, los, his):
        v = (los, his)
        last = len(self.net.weights) - 1
        for l, (splits, b) in enumerate(zip(self._splits, self.net.biases)):
            v = ilinmap(*splits, v)
            v = iadd(v, (b, b))
            if l != last:
                v = itanh(v)
        return v[0][..., 0], v[1][..., 0]

    def eval_boxes(self, los, his):
        dlo, dhi = self._chain(los, his)
        mids = 0.5 * (los + his)
        rad = 0.5 * (his - los)
        clo, chi = self._chain(mids, mids)
        _, J = interval_value_grad(self.net, los, his, self._splits)
        for k in range(los.shape[1]):
            rk = rad[:, k]
            clo, chi = iadd((clo, chi), imul((J[0][:, k], J[1][:, k]), (-rk, rk)))
        lo = np.maximum(dlo, clo)
        hi = np.minimum(dhi, chi)
        crossed = lo > hi
        if np.any(crossed):
            lo[crossed], hi[crossed] = dlo[crossed], dhi[crossed]
        return lo, hi


def _interval_linmap(splits, iv, out_dim):
    """Apply an interval weight map over the last axis of arbitrarily-shaped
    interval arrays (..., j) -> (..., k)."""
    lo, hi = iv
    lead = lo.shape[:-1]
    flat = (int(np.prod(lead)) if lead else 1, lo.shape[-1])
    rlo, rhi = ilinmap(*splits, (lo.reshape(flat), hi.reshape(flat)))
    return rlo.reshape(*lead, out_dim), rhi.reshape(*lead, out_dim)


def _tanh_chain(iv, order3: bool = False):
    """Enclosures of tanh(a) and its first 2 (or 3) derivatives from an
    enclosure of a; tanh''' = -2(1-s^2)(1-3s^2)."""
    s = itanh(iv)
    one = (np.asarray(1.0), np.asarray(1.0))
    d1 = isub(one, ipow(s, 2))
    minus2 = (np.asarray(-2.0), np.asarray(-2.0))
    d2 = imul(imul(minus2, s), d1)
    if not order3:
        return s, d1, d2
    three = (np.asarray(3.0), np.asarray(3.0))
    d3 = imul(imul(minus2, d1), isub(one, imul(three, ipow(s, 2))))
    return s, d1, d2, d3


def interval_triples(
    net: NeuralFunction, los: np.ndarray, his: np.ndarray, splits=None,
    order3: bool = False,
):
    """Sound enclosures of (value, input gradient, input Hessian) on boxes.

    los/his are (B, n); returns interval pairs with value (B,), gradient
    (B, n), Hessian (B, n, n). Mirrors the float forward recursion with every
    primitive replaced by its interval counterpart. With order3 the third
    derivative tensor (B, n, n, n) is propagated too (centered forms of the
    generator need it for the remainder term).
    """
    if splits is None:
        splits = [split_weight(w) for w in net.weights]
    B, n = los.shape
    v = (los, his)
    eye = np.broadcast_to(np.eye(n)[None, :, :], (B, n, n)).copy()
    J = (eye, eye.copy())
    zeros = np.zeros((B, n, n, n))
    H = (zeros, zeros.copy())
    if order3:
        z3 = np.zeros((B, n, n, n, n))
        T = (z3, z3.copy())
    last = len(net.weights) - 1
    for l, (sp, b) in enumerate(zip(splits, net.biases)):
        k = net.weights[l].shape[0]
        a = iadd(_interval_linmap(sp, v, k), (b, b))
        Ja = _interval_linmap(sp, J, k)
        Ha = _interval_linmap(sp, H, k)
        if order3:
            Ta = _interval_linmap(sp, T, k)
        if l == last:
            out = [
                (a[0][:, 0], a[1][:, 0]),
                (Ja[0][:, :, 0], Ja[1][:, :, 0]),
                (Ha[0][:, :, :, 0], Ha[1][:, :, :, 0]),
            ]
            if order3:
                out.append((Ta[0][:, :, :, :, 0], Ta[1][:, :, :, :, 0]))
            return tuple(out)
        chain = _tanh_chain(a, order3=order3)
        s, d1, d2 = chain[:3]
        v = s
        d1J = (d1[0][:, None, :], d1[1][:, None, :])
        d1H = (d1[0][:, None, None, :], d1[1][:, None, None, :])
        d2H = (d2[0][:, None, None, :], d2[1][:, None, None, :])
        Jrow = (Ja[0][:, :, None, :], Ja[1][:, :, None, :])
        Jcol = (Ja[0][:, None, :, :], Ja[1][:, None, :, :])
        outer = imul(Jrow, Jcol)
        J = imul(d1J, Ja)
        H = iadd(imul(d1H, Ha), imul(d2H, outer))
        if order3:
            d3 = chain[3]
            d1T = (d1[0][:, None, None, None, :], d1[1][:, None, None, None, :])
            d2T = (d2[0][:, None, None, None, :], d2[1][:, None, None, None, :])
            d3T = (d3[0][:, None, None, None, :], d3[1][:, None, None, None, :])
            Ji = (Ja[0][:, :, None, None, :], Ja[1][:, :, None, None, :])
            Jj = (Ja[0][:, None, :, None, :], Ja[1][:, None, :, None, :])
            Jk = (Ja[0][:, None, None, :, :], Ja[1][:, None, None, :, :])
            Hjk = (Ha[0][:, None, :, :, :], Ha[1][:, None, :, :, :])
            Hik = (Ha[0][:, :, None, :, :], Ha[1][:, :, None, :, :])
            Hij = (Ha[0][:, :, :, None, :], Ha[1][:, :, :, None, :])
            sym = iadd(iadd(imul(Ji, Hjk), imul(Jj, Hik)), imul(Jk, Hij))
            cubic = imul(imul(Ji, Jj), Jk)
            T = iadd(iadd(imul(d1T, Ta), imul(d2T, sym)), imul(d3T, cubic))
    raise AssertionError("unreachable")


def interval_value_grad(net: NeuralFunction, los, his, splits=None):
    """Sound (value, input gradient) enclosures on boxes, skipping Hessians.

    Cheaper than interval_triples when only a first-order centered form is
    needed.
    """
    if splits is None:
        splits = [split_weight(w) for w in net.weights]
    B, n = los.shape
    v = (los, his)
    eye = np.broadcast_to(np.eye(n)[None, :, :], (B, n, n)).copy()
    J = (eye, eye.copy())
    last = len(net.weights) - 1
    for l, (sp, b) in enumerate(zip(splits, net.biases)):
        k = net.weights[l].shape[0]
        a = iadd(_interval_linmap(sp, v, k), (b, b))
        Ja = _interval_linmap(sp, J, k)
        if l == last:
            return (a[0][:, 0], a[1][:, 0]), (Ja[0][:, :, 0], Ja[1][:, :, 0])
        s, d1, _ = _tanh_chain(a)[:3]
        v = s
        d1J = (d1[0][:, None, :], d1[1][:, None, :])
        J = imul(d1J, Ja)
    raise AssertionError("unreachable")


def interval_eval_network(net: NeuralFunction, box: Box):
    """Single-box wrapper: (value Interval, gradient, Hessian of Intervals)."""
    v, J, H = interval_triples(net, box.los[None, :], box.his[None, :])
    n = box.n
    value = Interval(float(v[0][0]), float(v[1][0]))
    grad = tuple(Interval(float(J[0][0, i]), float(J[1][0, i])) for i in range(n))
    hess = tuple(
        tuple(Interval(float(H[0][0, i, j]), float(H[1][0, i, j])) for j in range(n))
        for i in range(n)
    )
    return value, grad, hess


@dataclass(eq=False)
class NetGenerator:
    """LW(x) for a neural W: gradient/Hessian enclosures contracted with f and
    sigma sigma' enclosures.

    Box enclosures intersect the direct interval evaluation with a first-order
    centered form LW(mid) + grad LW(box) . (box - mid); the direct form alone
    inflates badly through stacked tanh layers (dependency error), which would
    stall branch-and-bound at the width floor.
    """

    sys: StochasticSystem
    net: NeuralFunction

    _CHUNK = 4096

    def __post_init__(self):
        self._splits = [split_weight(w) for w in self.net.weights]
        self._a_sym = sigma_outer_symbolic(self.sys)
        n = self.sys.n
        self._df = [[differentiate(fi, k) for k in range(n)] for fi in self.sys.f]
        self._da = [
            [[differentiate(self._a_sym[i][j], k) for k in range(n)] for j in range(n)]
            for i in range(n)
        ]

    def eval_points(self, x):
        x = np.asarray(x, dtype=float)
        _, grad, hess = self.net.value_grad_hess(x)
        lw = np.einsum("bi,bi->b", grad, self.sys.drift(x))
        return lw + 0.5 * np.einsum("bij,bij->b", self.sys.diffusion_outer(x), hess)

    def _direct(self, los, his, J, H):
        n = self.sys.n
        acc = (np.zeros(los.shape[0]), np.zeros(los.shape[0]))
        for i in range(n):
            fi = eval_interval_many(self.sys.f[i], los, his)
            acc = iadd(acc, imul((J[0][:, i], J[1][:, i]), fi))
        half = (np.asarray(0.5), np.asarray(0.5))
        for i in range(n):
            aii = eval_interval_many(self._a_sym[i][i], los, his)
            hii = (H[0][:, i, i], H[1][:, i, i])
            acc = iadd(acc, imul(half, imul(aii, hii)))
            for j in range(i + 1, n):
                aij = eval_interval_many(self._a_sym[i][j], los, his)
                hij = (H[0][:, i, j], H[1][:, i, j])
                acc = iadd(acc, imul(aij, hij))  # symmetric pair absorbs the 1/2
        return acc

    def _grad_enclosure(self, los, his, J, H, T):
        """Interval enclosure of grad LW over boxes, one component at a time:
        d_k LW = sum_i (H_ik f_i + J_i d_k f_i)
               + 1/2 sum_ij (d_k a_ij H_ij + a_ij T_ijk)."""
        n = self.sys.n
        half = (np.asarray(0.5), np.asarray(0.5))
        fi = [eval_interval_many(self.sys.f[i], los, his) for i in range(n)]
        aij = [
            [eval_interval_many(self._a_sym[i][j], los, his) for j in range(n)]
            for i in range(n)
        ]
        comps = []
        for k in range(n):
            acc = (np.zeros(los.shape[0]), np.zeros(los.shape[0]))
            for i in range(n):
                hik = (H[0][:, i, k], H[1][:, i, k])
                acc = iadd(acc, imul(hik, fi[i]))
                dfik = eval_interval_many(self._df[i][k], los, his)
                acc = iadd(acc, imul((J[0][:, i], J[1][:, i]), dfik))
            for i in range(n):
                for j in range(n):
                    daijk = eval_interval_many(self._da[i][j][k], los, his)
                    hij = (H[0][:, i, j], H[1][:, i, j])
                    tijk = (T[0][:, i, j, k], T[1][:, i, j, k])
                    acc = iadd(acc, imul(half, imul(daijk, hij)))
                    acc = iadd(acc, imul(half, imul(aij[i][j], tijk)))
            comps.append(acc)
        return comps

    def _eval_chunk(self, los, his):
        _, J, H, T = interval_triples(self.net, los, his, self._splits, order3=True)
        dlo, dhi = self._direct(los, his, J, H)
        mids = 0.5 * (los + his)
        rad = 0.5 * (his - los)
        _, Jm, Hm = interval_triples(self.net, mids, mids, self._splits)
        clo, chi = self._direct(mids, mids, Jm, Hm)
        for k, gk in enumerate(self._grad_enclosure(los, his, J, H, T)):
            rk = rad[:, k]
            term = imul(gk, (-rk, rk))
            clo, chi = iadd((clo, chi), term)
        lo = np.maximum(dlo, clo)
        hi = np.minimum(dhi, chi)
        # both forms are sound, so a crossed intersection can only be rounding
        # noise; fall back to the direct form there
        crossed = lo > hi
        if np.any(crossed):
            lo[crossed], hi[crossed] = dlo[crossed], dhi[crossed]
        return lo, hi

    def eval_boxes(self, los, his):
        B = los.shape[0]
        if B <= self._CHUNK:
            return self._eval_chunk(los, his)
        lo = np.empty(B)
        hi = np.empty(B)
        for s in range(0, B, self._CHUNK):
            e = min(s + self._CHUNK, B)
            lo[s:e], hi[s:e] = self._eval_chunk(los[s:e], his[s:e])
        return lo, hi


@dataclass(eq=False)
class Constraint:
    """lo <= fn(x) <= hi; use -inf/inf for one-sided constraints."""

    fn: BoxFunction
    lo: float = -np.inf
    hi: float = np.inf


@dataclass(eq=False)
class Condition:
    """Certify: target(x) <= bound for all x in domain satisfying all constraints."""

    target: BoxFunction
    bound: float
    domain: Box
    constraints: Tuple[Constraint, ...] = ()
    description: str = ""


@dataclass
class VerifyOutcome:
    status: str  # CERTIFIED | FALSIFIED | UNKNOWN
    witness: Optional[np.ndarray] = None
    boxes_processed: int = 0
    max_depth: int = 0
    wall_time: float = 0.0
    note: str = ""

    @property
    def certified(self) -> bool:
        return self.status == "CERTIFIED"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "witness": None if self.witness is None else list(map(float, self.witness)),
            "boxes_processed": self.boxes_processed,
            "max_depth": self.max_depth,
            "wall_time": self.wall_time,
            "note": self.note,
        }


DEFAULT_BUDGET = 5_000_000
DEFAULT_MIN_WIDTH_FRAC = 1e-3


def check(
    cond: Condition,
    budget: int = DEFAULT_BUDGET,
    min_width_frac: float = DEFAULT_MIN_WIDTH_FRAC,
) -> VerifyOutcome:
    """Breadth-first interval branch-and-bound on the condition."""
    t0 = time.perf_counter()
    for c in cond.constraints:
        if c.lo > c.hi:  # analytically empty region
            return VerifyOutcome(
                status="CERTIFIED",
                boxes_processed=0,
                wall_time=time.perf_counter() - t0,
                note="constraint region empty (lo > hi)",
            )
    min_w = min_width_frac * cond.domain.widths
    los = cond.domain.los[None, :].copy()
    his = cond.domain.his[None, :].copy()
    processed = 0
    depth = 0
    while len(los):
        processed += len(los)
        if processed > budget:
            return VerifyOutcome(
                status="UNKNOWN",
                boxes_processed=processed,
                max_depth=depth,
                wall_time=time.perf_counter() - t0,
                note=f"budget {budget} boxes exhausted with {len(los)} boxes open",
            )
        feasible = np.ones(len(los), dtype=bool)
        for c in cond.constraints:
            flo, fhi = c.fn.eval_boxes(los, his)
            feasible &= (fhi >= c.lo) & (flo <= c.hi)
        idx = np.flatnonzero(feasible)
        if idx.size == 0:
            return VerifyOutcome(
                status="CERTIFIED",
                boxes_processed=processed,
                max_depth=depth,
                wall_time=time.perf_counter() - t0,
            )
        tlo, thi = cond.target.eval_boxes(los[idx], his[idx])
        keep = thi > cond.bound
        if not np.any(keep):
            return VerifyOutcome(
                status="CERTIFIED",
                boxes_processed=processed,
                max_depth=depth,
                wall_time=time.perf_counter() - t0,
            )
        sus_lo = los[idx][keep]
        sus_hi = his[idx][keep]
        mids = 0.5 * (sus_lo + sus_hi)
        ok = np.ones(len(mids), dtype=bool)
        for c in cond.constraints:
            fv = c.fn.eval_points(mids)
            ok &= (fv >= c.lo) & (fv <= c.hi)
        if np.any(ok):
            tv = cond.target.eval_points(mids[ok])
            viol = tv > cond.bound
            if np.any(viol):
                witness = mids[ok][np.flatnonzero(viol)[0]]
                return VerifyOutcome(
                    status="FALSIFIED",
                    witness=witness,
                    boxes_processed=processed,
                    max_depth=depth,
                    wall_time=time.perf_counter() - t0,
                    note=f"target {float(tv[viol][0]):.6g} > bound {cond.bound:.6g} at witness",
                )
        widths = sus_hi - sus_lo
        splittable = np.any(widths > min_w, axis=1)
        if not np.all(splittable):
            bad = np.flatnonzero(~splittable)[0]
            return VerifyOutcome(
                status="UNKNOWN",
                witness=mids[bad],
                boxes_processed=processed,
                max_depth=depth,
                wall_time=time.perf_counter() - t0,
                note="box at width floor remains inconclusive",
            )
        los, his = split_boxes(sus_lo, sus_hi)
        depth += 1
    return VerifyOutcome(
        status="CERTIFIED",
        boxes_processed=processed,
        max_depth=depth,
        wall_time=time.perf_counter() - t0,
    )


def audit_condition(
    cond: Condition, samples: int, rng: np.random.Generator, max_batches: int = 1000
):
    """Rejection-sample the constraint region; count pointwise threshold violations.

    Returns (violations, tested, worst_margin) where worst_margin is
    max(target - bound) over tested points.
    """
    tested = 0
    violations = 0
    worst = -np.inf
    batch = max(1024, samples // 8)
    for _ in range(max_batches):
        if tested >= samples:
            break
        pts = cond.domain.sample(rng, batch)
        keep = np.ones(len(pts), dtype=bool)
        for c in cond.constraints:
            fv = c.fn.eval_points(pts)
            keep &= (fv >= c.lo) & (fv <= c.hi)
        pts = pts[keep]
        if len(pts) == 0:
            continue
        pts = pts[: samples - tested]
        tv = cond.target.eval_points(pts)
        violations += int(np.sum(tv > cond.bound))
        worst = max(worst, float(np.max(tv - cond.bound)))
        tested += len(pts)
    return violations, tested, worst


# ---------------------------------------------------------------------------
# Level-constant searches
# ---------------------------------------------------------------------------

@dataclass
class LevelSearchResult:
    level: float
    outcome: VerifyOutcome          # the CERTIFIED outcome at `level`
    condition: Condition            # the condition certified at `level`
    probes: List[Tuple[float, str]] = field(default_factory=list)

    def __float__(self):
        return self.level


def find_largest_level(
    target: BoxFunction,
    bound: float,
    level_fn: BoxFunction,
    domain: Box,
    cap: float,
    lower_fixed: Optional[float] = None,
    extra_constraints: Sequence[Constraint] = (),
    rel_tol: float = 1e-2,
    budget: int = DEFAULT_BUDGET,
    min_width_frac: float = DEFAULT_MIN_WIDTH_FRAC,
    description: str = "",
) -> LevelSearchResult:
    """Largest c (bisection, relative tolerance) with
    "target <= bound on {lower_fixed <= level_fn <= c}" CERTIFIED.

    The predicate is monotone (larger c, larger region, harder); cap must keep
    the sublevel set inside the domain and is the search's upper limit.
    """
    if cap <= 0:
        raise VerificationError("level search needs a positive cap")
    lower = -np.inf if lower_fixed is None else lower_fixed
    probes: List[Tuple[float, str]] = []

    def probe(c: float):
        cond = Condition(
            target=target,
            bound=bound,
            domain=domain,
            constraints=(Constraint(level_fn, lower, c), *extra_constraints),
            description=description or f"target <= {bound:.6g} on level set <= {c:.6g}",
        )
        out = check(cond, budget=budget, min_width_frac=min_width_frac)
        probes.append((c, out.status))
        return cond, out

    cond, out = probe(cap)
    if out.certified:
        return LevelSearchResult(cap, out, cond, probes)
    # a probe below lower_fixed would test an empty region and certify
    # vacuously, so the halving phase must stop just above it
    floor = 0.0 if lower_fixed is None else lower_fixed * (1.0 + 1e-9)
    hi = cap
    lo = None
    lo_pack = None
    c = cap
    for _ in range(60):
        c = max(0.5 * c, floor)
        if c < cap * 1e-9:
            break
        cond_c, out_c = probe(c)
        if out_c.certified:
            lo, lo_pack = c, (out_c, cond_c)
            break
        hi = c
        if c <= floor:
            break
    if lo is None:
        raise VerificationError(
            f"no level down to {c:.3g} certifies (last outcome {out_c.status}: {out_c.note})",
            outcome=out_c,
        )
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        cond_m, out_m = probe(mid)
        if out_m.certified:
            lo, lo_pack = mid, (out_m, cond_m)
        else:
            hi = mid
    return LevelSearchResult(lo, lo_pack[0], lo_pack[1], probes)


def find_smallest_lower_level(
    target: BoxFunction,
    bound: float,
    level_fn: BoxFunction,
    domain: Box,
    upper_fixed: float,
    rel_tol: float = 1e-2,
    budget: int = DEFAULT_BUDGET,
    min_width_frac: float = DEFAULT_MIN_WIDTH_FRAC,
    floor_frac: float = 1e-6,
    description: str = "",
) -> LevelSearchResult:
    """Smallest b1 with "target <= bound on {b1 <= level_fn <= upper_fixed}" CERTIFIED."""
    probes: List[Tuple[float, str]] = []

    def probe(b1: float):
        cond = Condition(
            target=target,
            bound=bound,
            domain=domain,
            constraints=(Constraint(level_fn, b1, upper_fixed),),
            description=description
            or f"target <= {bound:.6g} on {b1:.6g} <= level <= {upper_fixed:.6g}",
        )
        out = check(cond, budget=budget, min_width_frac=min_width_frac)
        probes.append((b1, out.status))
        return cond, out

    floor = floor_frac * upper_fixed
    cond_f, out_f = probe(floor)
    if out_f.certified:
        return LevelSearchResult(floor, out_f, cond_f, probes)
    lo_fail = floor
    hi = None
    hi_pack = None
    b = 0.5 * upper_fixed
    for _ in range(40):
        cond_b, out_b = probe(b)
        if out_b.certified:
            hi, hi_pack = b, (out_b, cond_b)
            break
        lo_fail = b
        b = 0.5 * (b + upper_fixed)
        if upper_fixed - b < 1e-6 * upper_fixed:
            break
    if hi is None:
        raise VerificationError(
            f"no lower level below {upper_fixed:.6g} certifies "
            f"(last outcome {out_b.status}: {out_b.note})",
            outcome=out_b,
        )
    while hi - lo_fail > rel_tol * hi:
        mid = 0.5 * (lo_fail + hi)
        cond_m, out_m = probe(mid)
        if out_m.certified:
            hi, hi_pack = mid, (out_m, cond_m)
        else:
            lo_fail = mid
    return LevelSearchResult(hi, hi_pack[0], hi_pack[1], probes)


def check_inclusion(
    inner_fn: BoxFunction,
    a: float,
    outer_fn: BoxFunction,
    b: float,
    domain: Box,
    budget: int = DEFAULT_BUDGET,
    min_width_frac: float = DEFAULT_MIN_WIDTH_FRAC,
    description: str = "",
) -> VerifyOutcome:
    """Certify {inner_fn <= a} subset of {outer_fn <= b} within the domain."""
    cond = Condition(
        target=outer_fn,
        bound=b,
        domain=domain,
        constraints=(Constraint(inner_fn, -np.inf, a),),
        description=description or f"inclusion: inner <= {a:.6g} implies outer <= {b:.6g}",
    )
    return check(cond, budget=budget, min_width_frac=min_width_frac)


def find_smallest_c1(
    v_fn: BoxFunction,
    w_fn: BoxFunction,
    beta1: float,
    domain: Box,
    budget: int = 200_000,
    min_width_frac: float = DEFAULT_MIN_WIDTH_FRAC,
    rel_tol: float = 1e-2,
) -> Tuple[float, float]:
    """Sound upper bound on max{ v_fn(x) : w_fn(x) <= beta1 } by box maximization.

    Returns (upper, best_point_value). The upper bound serves as c1: by
    construction {w <= beta1} implies {v <= c1}; the caller re-certifies the
    inclusion with check_inclusion.
    """
    los = domain.los[None, :].copy()
    his = domain.his[None, :].copy()
    min_w = min_width_frac * domain.widths
    best_point = -np.inf
    processed = 0
    while True:
        processed += len(los)
        wlo, _ = w_fn.eval_boxes(los, his)
        feasible = wlo <= beta1
        los, his = los[feasible], his[feasible]
        if len(los) == 0:
            raise VerificationError(f"{{w <= {beta1:.6g}}} appears empty in the domain")
        _, vhi = v_fn.eval_boxes(los, his)
        mids = 0.5 * (los + his)
        wmid = w_fn.eval_points(mids)
        inside = wmid <= beta1
        if np.any(inside):
            best_point = max(best_point, float(np.max(v_fn.eval_points(mids[inside]))))
        upper = float(np.max(vhi))
        gap_ok = np.isfinite(best_point) and (upper - best_point) <= rel_tol * max(
            abs(upper), 1e-12
        )
        splittable = np.any((his - los) > min_w, axis=1)
        contenders = (vhi >= max(best_point, upper * (1 - rel_tol))) & splittable
        if gap_ok or processed > budget or not np.any(contenders):
            return upper, best_point
        keep_lo, keep_hi = los[~contenders], his[~contenders]
        sp_lo, sp_hi = split_boxes(los[contenders], his[contenders])
        los = np.concatenate([keep_lo, sp_lo])
        his = np.concatenate([keep_hi, sp_hi])


def boundary_min_lower_bound(
    fn: BoxFunction,
    domain: Box,
    budget: int = 100_000,
    min_width_frac: float = 1e-4,
) -> float:
    """Sound lower bound on min of fn over the domain's boundary faces.

    Any level below this keeps the sublevel set strictly away from the
    boundary, which the exit-time arguments require.
    """
    faces = domain.faces()
    los = np.stack([f.los for f in faces])
    his = np.stack([f.his for f in faces])
    min_w = min_width_frac * domain.widths
    best_point = np.inf
    processed = 0
    while True:
        processed += len(los)
        flo, _ = fn.eval_boxes(los, his)
        mids = 0.5 * (los + his)
        best_point = min(best_point, float(np.min(fn.eval_points(mids))))
        lower = float(np.min(flo))
        contenders = (flo <= best_point) & np.any((his - los) > min_w, axis=1)
        gap_ok = (best_point - lower) <= 1e-3 * max(abs(best_point), 1e-12)
        if gap_ok or processed > budget or not np.any(contenders):
            return lower
        keep_lo, keep_hi = los[~contenders], his[~contenders]
        sp_lo, sp_hi = split_boxes(los[contenders], his[contenders])
        los = np.concatenate([keep_lo, sp_lo])
        his = np.concatenate([keep_hi, sp_hi])


def abs_max_upper_bound(
    fn: BoxFunction,
    domain: Box,
    budget: int = 50_000,
    min_width_frac: float = 1e-3,
) -> float:
    """Sound upper bound on max |fn| over the domain."""
    los = domain.los[None, :].copy()
    his = domain.his[None, :].copy()
    min_w = min_width_frac * domain.widths
    best_point = 0.0
    processed = 0
    while True:
        processed += len(los)
        flo, fhi = fn.eval_boxes(los, his)
        ub = np.maximum(np.abs(flo), np.abs(fhi))
        mids = 0.5 * (los + his)
        best_point = max(best_point, float(np.max(np.abs(fn.eval_points(mids)))))
        upper = float(np.max(ub))
        contenders = (ub >= max(best_point, upper * 0.9)) & np.any(
            (his - los) > min_w, axis=1
        )
        gap_ok = (upper - best_point) <= 1e-2 * max(upper, 1e-12)
        if gap_ok or processed > budget or not np.any(contenders):
            return upper
        keep_lo, keep_hi = los[~contenders], his[~contenders]
        sp_lo, sp_hi = split_boxes(los[contenders], his[contenders])
        los = np.concatenate([keep_lo, sp_lo])
        his = np.concatenate([keep_hi, sp_hi])


def zeta_default(target: BoxFunction, domain: Box, budget: int = 50_000) -> float:
    """Decay margin: 1e-4 of the certified max |target| over the domain, floored."""
    return max(1e-6, 1e-4 * abs_max_upper_bound(target, domain, budget=budget))


from .smt import export_smt  # noqa: E402  (re-export: SMT rendering lives in smt.py)
