"""Composite certificate and the attraction-probability lower bound.

Combines the quadratic certificate (V = x'Px with levels c1 < c2) and the
neural Zubov certificate (W with levels beta1 < beta2) into the pointwise
lower bound p(x0) on the probability that trajectories from x0 converge to
the origin. p is defined piecewise by which W level set contains x0, clamped
to [0, 1], and set to 0 outside {W <= beta2} where the bound says nothing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import VerificationError
from .net import NeuralFunction, load_checkpoint
from .sim import SimConfig, estimate_attraction

CONDITION_KEYS = ("w_decrease", "v_decrease", "w_in_v", "v_in_w")


@dataclass
class CompositeCertificate:
    """Everything needed to evaluate the bound, plus the verifier verdicts.

    statuses holds one outcome per required condition:
      w_decrease  LW <= -zeta on {beta1 <= W <= beta2}
      v_decrease  LV <= -eps  on {c_local <= V <= c2}
      w_in_v      {W <= beta1} subset of {V <= c1}
      v_in_w      {V <= c2} subset of {W <= beta2}
    """

    P: np.ndarray
    c1: float
    c2: float
    net: NeuralFunction
    beta1: float
    beta2: float
    zeta: float
    statuses: Dict[str, str] = field(default_factory=dict)
    checkpoint_ref: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if not 0.0 < self.beta1 < self.beta2:
            raise VerificationError("levels must satisfy 0 < beta1 < beta2")
        if not 0.0 < self.c1 < self.c2:
            raise VerificationError("levels must satisfy 0 < c1 < c2")
        if self.zeta <= 0.0:
            raise VerificationError("zeta must be positive")

    @property
    def complete(self) -> bool:
        return all(self.statuses.get(k) == "CERTIFIED" for k in CONDITION_KEYS)

    def v_values(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("bi,ij,bj->b", x, self.P, x)

    def w_values(self, x: np.ndarray) -> np.ndarray:
        return self.net.value(x)

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "c1": self.c1,
            "c2": self.c2,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "zeta": self.zeta,
            "statuses": dict(self.statuses),
            "checkpoint": self.checkpoint_ref,
            "extras": dict(self.extras),
        }

    @classmethod
    def from_dict(cls, d: dict, net: Optional[NeuralFunction] = None) -> "CompositeCertificate":
        if net is None:
            ref = d.get("checkpoint", "")
            if not ref:
                raise VerificationError("certificate has no checkpoint reference and no net was supplied")
            net = load_checkpoint(ref)
        return cls(
            P=np.asarray(d["P"], dtype=float),
            c1=float(d["c1"]),
            c2=float(d["c2"]),
            net=net,
            beta1=float(d["beta1"]),
            beta2=float(d["beta2"]),
            zeta=float(d["zeta"]),
            statuses=dict(d.get("statuses", {})),
            checkpoint_ref=d.get("checkpoint", ""),
            extras=dict(d.get("extras", {})),
        )

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str, net: Optional[NeuralFunction] = None) -> "CompositeCertificate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), net=net)


def p_lower_bound_many(cert: CompositeCertificate, x: np.ndarray) -> np.ndarray:
    """Vectorized bound over rows of x; see p_lower_bound."""
    if not cert.complete:
        raise VerificationError(
            "certificate incomplete: "
            + ", ".join(f"{k}={cert.statuses.get(k, 'MISSING')}" for k in CONDITION_KEYS)
        )
    x = np.asarray(x, dtype=float)
    v = cert.v_values(x)
    w = cert.w_values(x)
    quad_branch = 1.0 - v / cert.c2
    product = (1.0 - w / cert.beta2) * (1.0 - cert.c1 / cert.c2)
    p = np.where(w < cert.beta1, quad_branch, np.maximum(product, quad_branch))
    p = np.where(w > cert.beta2, 0.0, p)
    return np.clip(p, 0.0, 1.0)


def p_lower_bound(cert: CompositeCertificate, x0: np.ndarray) -> float:
    """Certified lower bound on the attraction probability from x0.

    W(x0) < beta1: trajectories enter via the quadratic region, bound
    1 - V(x0)/c2. beta1 <= W(x0) <= beta2: the better of the product bound
    (1 - W/beta2)(1 - c1/c2) and the quadratic one. Above beta2 the
    certificate is silent and the bound is 0.
    """
    x0 = np.asarray(x0, dtype=float)
    return float(p_lower_bound_many(cert, x0[None, :])[0])


# ---------------------------------------------------------------------------
# heatmap
# ---------------------------------------------------------------------------

def heatmap_grid(cert: CompositeCertificate, domain, resolution: int):
    """p at cell centers of a resolution^n grid; returns (points, values).

    Points are ordered row-major with the first coordinate varying fastest,
    matching the CSV layout; the PGM writer reorders rows to image convention.
    """
    n = domain.n
    axes = []
    for iv in domain.intervals:
        width = (iv.hi - iv.lo) / resolution
        axes.append(iv.lo + width * (np.arange(resolution) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1, order="F") for m in mesh], axis=1)
    return pts, p_lower_bound_many(cert, pts)


def save_heatmap_csv(path: str, pts: np.ndarray, p: np.ndarray):
    n = pts.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(n)] + ["p"])
        for row, val in zip(pts, p):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(val))])


def save_heatmap_pgm(path: str, p: np.ndarray, resolution: int):
    """8-bit grayscale: white = 1, black = 0.

    With the grid layout of heatmap_grid, reshape puts x2 on rows and x1 on
    columns; flipping rows puts max x2 at the top as image convention expects.
    """
    grid = p.reshape(resolution, resolution)
    img = np.flipud(np.rint(255.0 * grid).astype(int))
    lines = ["P2", f"{resolution} {resolution}", "255"]
    for row in img:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def heatmap(
    cert: CompositeCertificate,
    domain,
    resolution: int,
    csv_path: Optional[str] = None,
    pgm_path: Optional[str] = None,
):
    """Evaluate the bound on a grid and optionally write CSV / PGM files."""
    pts, p = heatmap_grid(cert, domain, resolution)
    if csv_path:
        save_heatmap_csv(csv_path, pts, p)
    if pgm_path:
        if domain.n != 2:
            raise VerificationError("PGM output is defined for 2-D domains only")
        save_heatmap_pgm(pgm_path, p, resolution)
    return pts, p


# ---------------------------------------------------------------------------
# Monte Carlo validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationRow:
    point: np.ndarray
    p: float
    frequency: float
    ci_lo: float
    ci_hi: float

    @property
    def margin(self) -> float:
        return self.frequency - self.p

    @property
    def red_flag(self) -> bool:
        # the 99% upper confidence limit contradicting the bound is the only
        # statistically meaningful failure signal
        return self.ci_hi < self.p

    def to_dict(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "p": self.p,
            "frequency": self.frequency,
            "ci": [self.ci_lo, self.ci_hi],
            "margin": self.margin,
            "red_flag": self.red_flag,
        }


@dataclass
class ValidationReport:
    rows: List[ValidationRow]

    @property
    def red_flags(self) -> int:
        return sum(r.red_flag for r in self.rows)

    @property
    def worst_margin(self) -> float:
        return min((r.margin for r in self.rows), default=np.inf)

    def to_dict(self) -> dict:
        return {
            "points": len(self.rows),
            "red_flags": self.red_flags,
            "worst_margin": self.worst_margin,
            "rows": [r.to_dict() for r in self.rows],
        }

    def render(self) -> str:
        lines = [
            f"{'point':<28} {'p_bound':>8} {'freq':>8} {'ci_99%':>19} {'margin':>8} flag"
        ]
        for r in self.rows:
            pt = ", ".join(f"{v:+.3f}" for v in r.point)
            lines.append(
                f"[{pt:<25}] {r.p:8.4f} {r.frequency:8.4f} "
                f"[{r.ci_lo:8.4f},{r.ci_hi:8.4f}] {r.margin:+8.4f} "
                + ("RED" if r.red_flag else "ok")
            )
        lines.append(
            f"{len(self.rows)} points, {self.red_flags} red flags, "
            f"worst margin {self.worst_margin:+.4f}"
        )
        return "\n".join(lines)


def select_validation_points(
    cert: CompositeCertificate, domain, count: int, per_dim: int = 9
) -> np.ndarray:
    """Deterministic spread of points where the bound is informative (p > 0).

    Takes a coarse grid over the domain, keeps cells with positive bound, and
    picks `count` of them evenly spaced in order of decreasing p so the sample
    covers strong and weak predictions alike.
    """
    axes = [np.linspace(iv.lo, iv.hi, per_dim) for iv in domain.intervals]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    p = p_lower_bound_many(cert, pts)
    inside = np.flatnonzero(p > 0.0)
    if len(inside) == 0:
        raise VerificationError("no grid point has a positive bound")
    order = inside[np.argsort(-p[inside], kind="stable")]
    take = np.linspace(0, len(order) - 1, min(count, len(order))).round().astype(int)
    return pts[order[np.unique(take)]]


def validate_bound(
    cert: CompositeCertificate,
    sys,
    cfg: SimConfig,
    points: Sequence[np.ndarray],
) -> ValidationReport:
    """Compare Monte Carlo attraction frequencies against the bound per point."""
    rows = []
    for i, pt in enumerate(points):
        pt = np.asarray(pt, dtype=float)
        p = p_lower_bound(cert, pt)
        freq, (lo, hi) = estimate_attraction(sys, pt, cfg, point_idx=i)
        rows.append(ValidationRow(point=pt, p=p, frequency=freq, ci_lo=lo, ci_hi=hi))
    return ValidationReport(rows=rows)


def certificate_report(cert: CompositeCertificate) -> dict:
    """All constants and statuses in one JSON-ready structure."""
    return {
        "quadratic": {
            "P": cert.P.tolist(),
            "c1": cert.c1,
            "c2": cert.c2,
        },
        "neural": {
            "checkpoint": cert.checkpoint_ref,
            "sizes": cert.net.sizes,
            "beta1": cert.beta1,
            "beta2": cert.beta2,
            "zeta": cert.zeta,
        },
        "statuses": dict(cert.statuses),
        "complete": cert.complete,
        "extras": dict(cert.extras),
    }
