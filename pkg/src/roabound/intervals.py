"""Sound interval arithmetic kernel.

All operations return enclosures: for every real input contained in the operand
intervals, the exact real result is contained in the output interval. Endpoints
are widened outward with ``nextafter`` steps (one step for correctly-rounded
IEEE operations, two for libm transcendentals), except where exactness can be
guaranteed (negation, exact additions detected by TwoSum, multiplication by a
degenerate zero).

The kernel is shape-polymorphic: every function accepts ``(lo, hi)`` pairs of
floats or equal-shaped numpy arrays, so the branch-and-bound verifier can
evaluate thousands of boxes per call with the same code path used for scalars.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import IntervalDivisionError, NonFiniteError

_INF = np.inf
_EPS = np.finfo(np.float64).eps

IntervalLike = Tuple[np.ndarray, np.ndarray]


def _down(x):
    return np.nextafter(x, -_INF)


def _up(x):
    return np.nextafter(x, _INF)


def _down2(x):
    return np.nextafter(np.nextafter(x, -_INF), -_INF)


def _up2(x):
    return np.nextafter(np.nextafter(x, _INF), _INF)


def _twosum(a, b):
    """Error-free sum: returns (s, e) with s = fl(a+b) and s + e = a + b exactly."""
    s = a + b
    bp = s - a
    e = (a - (s - bp)) + (b - bp)
    return s, e


def iadd(a: IntervalLike, b: IntervalLike) -> IntervalLike:
    """Interval addition, exact when the float additions are exact."""
    slo, elo = _twosum(a[0], b[0])
    shi, ehi = _twosum(a[1], b[1])
    lo = np.where(elo < 0, _down(slo), slo)
    hi = np.where(ehi > 0, _up(shi), shi)
    return lo, hi


def isub(a: IntervalLike, b: IntervalLike) -> IntervalLike:
    slo, elo = _twosum(a[0], -np.asarray(b[1]))
    shi, ehi = _twosum(a[1], -np.asarray(b[0]))
    lo = np.where(elo < 0, _down(slo), slo)
    hi = np.where(ehi > 0, _up(shi), shi)
    return lo, hi


def ineg(a: IntervalLike) -> IntervalLike:
    return -np.asarray(a[1]), -np.asarray(a[0])


def imul(a: IntervalLike, b: IntervalLike) -> IntervalLike:
    alo, ahi = np.asarray(a[0]), np.asarray(a[1])
    blo, bhi = np.asarray(b[0]), np.asarray(b[1])
    cands = np.stack([alo * blo, alo * bhi, ahi * blo, ahi * bhi])
    lo = _down(cands.min(axis=0))
    hi = _up(cands.max(axis=0))
    # x * [0,0] = 0 exactly for finite x; preserves zero-width derivatives.
    azero = (alo == 0.0) & (ahi == 0.0)
    bzero = (blo == 0.0) & (bhi == 0.0)
    zero = azero | bzero
    if np.any(zero):
        lo = np.where(zero, 0.0, lo)
        hi = np.where(zero, 0.0, hi)
    return lo, hi


def idiv(a: IntervalLike, b: IntervalLike) -> IntervalLike:
    blo, bhi = np.asarray(b[0], dtype=float), np.asarray(b[1], dtype=float)
    if np.any((blo <= 0.0) & (bhi >= 0.0)):
        raise IntervalDivisionError("division by an interval containing 0")
    alo, ahi = np.asarray(a[0]), np.asarray(a[1])
    cands = np.stack([alo / blo, alo / bhi, ahi / blo, ahi / bhi])
    return _down(cands.min(axis=0)), _up(cands.max(axis=0))


def ipow(a: IntervalLike, k: int) -> IntervalLike:
    """Integer power; even exponents use the |x| endpoint rule, odd are monotone."""
    if k < 0:
        rlo, rhi = ipow(a, -k)
        return idiv((np.ones_like(rlo), np.ones_like(rhi)), (rlo, rhi))
    alo, ahi = np.asarray(a[0], dtype=float), np.asarray(a[1], dtype=float)
    if k == 0:
        return np.ones_like(alo), np.ones_like(ahi)
    if k == 1:
        return alo, ahi
    if k % 2 == 0:
        straddle = (alo <= 0.0) & (ahi >= 0.0)
        lo_abs = np.where(straddle, 0.0, np.minimum(np.abs(alo), np.abs(ahi)))
        hi_abs = np.maximum(np.abs(alo), np.abs(ahi))
        lo = np.maximum(_down2(np.power(lo_abs, k)), 0.0)
        lo = np.where(lo_abs == 0.0, 0.0, lo)  # 0 is attained, keep it exact
        hi = _up2(np.power(hi_abs, k))
        return lo, hi
    return _down2(np.power(alo, k)), _up2(np.power(ahi, k))


def iexp(a: IntervalLike) -> IntervalLike:
    with np.errstate(over="ignore"):
        lo = np.maximum(_down2(np.exp(a[0])), 0.0)
        hi = _up2(np.exp(a[1]))
    if np.any(~np.isfinite(hi)):
        raise NonFiniteError("exp overflow in interval evaluation")
    return lo, hi


def itanh(a: IntervalLike) -> IntervalLike:
    lo = np.maximum(_down2(np.tanh(a[0])), -1.0)
    hi = np.minimum(_up2(np.tanh(a[1])), 1.0)
    return lo, hi


def ilinmap(w_pos: np.ndarray, w_neg: np.ndarray, w_abs: np.ndarray,
            a: IntervalLike) -> IntervalLike:
    """Enclosure of x @ W.T over the last axis, W split as (max(W,0), min(W,0), |W|).

    The float matmul can accumulate in any order (BLAS blocking, FMA), so instead
    of per-element directed rounding the result is widened by the forward error
    bound (L+3)*eps*sum(|terms|), valid for every summation order.
    """
    lo, hi = np.asarray(a[0]), np.asarray(a[1])
    out_lo = lo @ w_pos.T + hi @ w_neg.T
    out_hi = hi @ w_pos.T + lo @ w_neg.T
    absmax = np.maximum(np.abs(lo), np.abs(hi))
    err = ((w_abs.shape[1] + 3) * _EPS) * (absmax @ w_abs.T)
    return out_lo - err, out_hi + err


def split_weight(w: np.ndarray):
    """Precompute the (positive part, negative part, |W|) triple for ilinmap."""
    return np.maximum(w, 0.0), np.minimum(w, 0.0), np.abs(w)


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] of finite floats."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise NonFiniteError(f"non-finite interval endpoints [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"interval with lo > hi: [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(float(x), float(x))

    @classmethod
    def _of(cls, pair: IntervalLike) -> "Interval":
        return cls(float(pair[0]), float(pair[1]))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def encloses(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def _pair(self) -> IntervalLike:
        return np.float64(self.lo), np.float64(self.hi)

    def __add__(self, other: "Interval") -> "Interval":
        return Interval._of(iadd(self._pair(), other._pair()))

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval._of(isub(self._pair(), other._pair()))

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other: "Interval") -> "Interval":
        return Interval._of(imul(self._pair(), other._pair()))

    def __truediv__(self, other: "Interval") -> "Interval":
        return Interval._of(idiv(self._pair(), other._pair()))

    def __pow__(self, k: int) -> "Interval":
        return Interval._of(ipow(self._pair(), k))

    def exp(self) -> "Interval":
        return Interval._of(iexp(self._pair()))

    def tanh(self) -> "Interval":
        return Interval._of(itanh(self._pair()))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: one Interval per state dimension."""

    intervals: Tuple[Interval, ...]

    def __post_init__(self):
        if len(self.intervals) == 0:
            raise ValueError("empty box")

    @classmethod
    def from_bounds(cls, bounds: Iterable[Sequence[float]]) -> "Box":
        return cls(tuple(Interval(float(lo), float(hi)) for lo, hi in bounds))

    @property
    def n(self) -> int:
        return len(self.intervals)

    @property
    def los(self) -> np.ndarray:
        return np.array([iv.lo for iv in self.intervals])

    @property
    def his(self) -> np.ndarray:
        return np.array([iv.hi for iv in self.intervals])

    @property
    def widths(self) -> np.ndarray:
        return self.his - self.los

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.los + self.his)

    @property
    def radius(self) -> float:
        """Largest coordinate magnitude reachable in the box (inf-norm radius)."""
        return float(np.max(np.maximum(np.abs(self.los), np.abs(self.his))))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.los - tol) and np.all(x <= self.his + tol))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.los, self.his, size=(count, self.n))

    def face(self, dim: int, upper: bool) -> "Box":
        """Degenerate box pinned to one boundary face."""
        pinned = self.intervals[dim].hi if upper else self.intervals[dim].lo
        ivs = list(self.intervals)
        ivs[dim] = Interval(pinned, pinned)
        return Box(tuple(ivs))

    def faces(self):
        return [self.face(d, up) for d in range(self.n) for up in (False, True)]

    def to_bounds(self):
        return [[iv.lo, iv.hi] for iv in self.intervals]


def split_boxes(los: np.ndarray, his: np.ndarray):
    """Bisect each box along its widest dimension; (B,n) -> (2B,n) arrays."""
    widths = his - los
    dims = np.argmax(widths, axis=1)
    mids = 0.5 * (los[np.arange(len(los)), dims] + his[np.arange(len(his)), dims])
    left_hi = his.copy()
    left_hi[np.arange(len(his)), dims] = mids
    right_lo = los.copy()
    right_lo[np.arange(len(los)), dims] = mids
    return np.concatenate([los, right_lo]), np.concatenate([left_hi, his])


def eval_box_min_positive(ifunc, box: "Box", max_boxes: int = 4096) -> bool:
    """True if ``ifunc`` certifies a strictly positive minimum over the box.

    ``ifunc(los, his)`` must return enclosure (lo, hi) arrays for a batch of
    boxes. Boxes whose lower bound is nonpositive are bisected along their
    widest dimension until every box certifies or the budget runs out.
    """
    los = box.los[None, :].copy()
    his = box.his[None, :].copy()
    examined = 0
    while len(los):
        lo, _ = ifunc(los, his)
        bad = lo <= 0.0
        examined += len(los)
        if examined > max_boxes:
            return False
        if not np.any(bad):
            return True
        los, his = split_boxes(los[bad], his[bad])
        if np.any((his - los) <= 1e-12):
            return False
    return True
