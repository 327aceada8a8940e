"""Euler-Maruyama integration, Zubov value data, and attraction frequencies.

Noise is drawn from counter-based Philox streams keyed by
(base seed, point index, path index), in fixed-size step chunks. A path's
draws therefore never depend on scheduling or on other paths' early stopping,
and single-path and batched simulation produce bitwise-identical trajectories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import beta as _beta_dist

from .errors import ConfigError
from .expr import Const, eval_many
from .system import StochasticSystem

CONVERGED = "CONVERGED"
DIVERGED = "DIVERGED"
TIMEOUT = "TIMEOUT"

_CHUNK = 1024  # steps of noise drawn per path per call; part of the RNG contract


@dataclass
class SimConfig:
    dt: float = 1e-3
    horizon: float = 20.0
    conv_radius: float = 1e-2
    div_radius: float = 0.0      # 0 = auto: 10x domain radius
    samples_value: int = 100
    samples_prob: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ConfigError("dt and horizon must be positive")
        if self.samples_value < 1 or self.samples_prob < 1:
            raise ConfigError("sample counts must be >= 1")

    def resolved_div_radius(self, sys: StochasticSystem) -> float:
        r = self.div_radius if self.div_radius > 0 else 10.0 * sys.domain.radius
        if not self.conv_radius < sys.domain.radius < r:
            raise ConfigError(
                "radii must satisfy conv_radius < domain radius < div_radius"
            )
        return r


@dataclass(frozen=True)
class ValueSample:
    point: np.ndarray
    w_hat: float

    def __post_init__(self):
        if not 0.0 <= self.w_hat <= 1.0:
            raise ValueError("w_hat must lie in [0, 1]")


def _path_generator(seed: int, point_idx: int, path_idx: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, point_idx, path_idx]))
    )


@lru_cache(maxsize=64)
def _nonzero_diffusion(sigma):
    """Indices and expressions of the nonzero diffusion entries."""
    return tuple(
        (i, k, e)
        for i, row in enumerate(sigma)
        for k, e in enumerate(row)
        if not (isinstance(e, Const) and e.value == 0.0)
    )


def _diffusion_increment(sys, x, xi, out):
    """out <- sigma(x) @ xi, skipping structurally zero entries."""
    out[:] = 0.0
    for i, k, e in _nonzero_diffusion(sys.sigma):
        out[:, i] += eval_many(e, x) * xi[:, k]
    return out


def _simulate_batch(
    sys: StochasticSystem,
    x0: np.ndarray,
    cfg: SimConfig,
    point_idx: int,
    n_paths: int,
    accumulate_weight: bool,
):
    """Run n_paths from x0 in lockstep chunks with active-set compaction.

    Returns (status codes (M,), exp(-integral) factors (M,) or None).
    Codes: 0 converged, 1 diverged, 2 timeout.
    """
    n, m = sys.n, sys.m
    dt = cfg.dt
    sqdt = np.sqrt(dt)
    steps_total = int(np.ceil(cfg.horizon / dt))
    r_div = cfg.resolved_div_radius(sys)

    r_div2 = r_div * r_div
    conv2 = cfg.conv_radius * cfg.conv_radius

    status = np.full(n_paths, 2, dtype=np.int8)
    integral = np.zeros(n_paths) if accumulate_weight else None

    x = np.tile(np.asarray(x0, dtype=float), (n_paths, 1))
    active = np.arange(n_paths)
    # initial classification (x0 may already be inside the convergence ball)
    conv0 = np.add.reduce(x * x, axis=1) <= conv2
    status[active[conv0]] = 0
    active = active[~conv0]
    x = x[~conv0]
    gens = {p: _path_generator(cfg.seed, point_idx, int(p)) for p in active}
    g_prev = sys.weight(x) if accumulate_weight else None
    buf = np.empty_like(x)

    step = 0
    while len(active) and step < steps_total:
        chunk = min(_CHUNK, steps_total - step)
        noise = np.empty((len(active), chunk, m))
        for row, p in enumerate(active):
            noise[row] = gens[p].standard_normal((chunk, m))
        # rows maps surviving paths to their noise rows; compacting the noise
        # buffer itself would copy it on every stop event
        rows = np.arange(len(active))
        for k in range(chunk):
            fx = sys.drift(x)
            with np.errstate(invalid="ignore", over="ignore"):
                x = x + fx * dt + sqdt * _diffusion_increment(sys, x, noise[rows, k], buf)
                sq = np.add.reduce(x * x, axis=1)
            bad = ~np.isfinite(sq)
            if accumulate_weight:
                g_new = sys.weight(x)
                g_new[bad] = 0.0
                integral[active] += 0.5 * (g_prev + g_new) * dt
                g_prev = g_new
            stopped = bad | (sq >= r_div2) | (sq <= conv2)
            if np.any(stopped):
                diverged = bad | (sq >= r_div2)
                status[active[diverged]] = 1
                status[active[stopped & ~diverged]] = 0
                keep = ~stopped
                active = active[keep]
                x = x[keep]
                rows = rows[keep]
                buf = buf[: len(active)]
                if accumulate_weight:
                    g_prev = g_prev[keep]
                if len(active) == 0:
                    break
        step += chunk

    factors = None
    if accumulate_weight:
        factors = np.exp(-integral)
        factors[status == 1] = 0.0  # diverged: tail integral grows without bound
    return status, factors


def simulate_path(
    sys: StochasticSystem,
    x0: np.ndarray,
    cfg: SimConfig,
    point_idx: int = 0,
    path_idx: int = 0,
):
    """Single trajectory with its classification; drawn from the same keyed
    stream as batched estimation, so results agree path-for-path.

    Returns (ts (K,), xs (K, n), status string).
    """
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ConfigError("initial state must be finite")
    n, m = sys.n, sys.m
    dt = cfg.dt
    sqdt = np.sqrt(dt)
    steps_total = int(np.ceil(cfg.horizon / dt))
    r_div = cfg.resolved_div_radius(sys)
    xs = [x0.copy()]
    if np.linalg.norm(x0) <= cfg.conv_radius:
        return np.zeros(1), np.asarray(xs), CONVERGED
    gen = _path_generator(cfg.seed, point_idx, path_idx)
    x = x0.copy()
    status = TIMEOUT
    step = 0
    while step < steps_total:
        chunk = min(_CHUNK, steps_total - step)
        noise = gen.standard_normal((chunk, m))
        done = False
        for k in range(chunk):
            fx = sys.drift(x[None, :])[0]
            sx = sys.diffusion(x[None, :])[0]
            x = x + fx * dt + sqdt * (sx @ noise[k])
            xs.append(x.copy())
            with np.errstate(invalid="ignore", over="ignore"):
                nrm = float(np.linalg.norm(x))
            if not np.isfinite(nrm) or nrm >= r_div:
                status = DIVERGED
                done = True
            elif nrm <= cfg.conv_radius:
                status = CONVERGED
                done = True
            if done:
                break
        if done:
            break
        step += chunk
    xs = np.asarray(xs)
    ts = dt * np.arange(len(xs))
    return ts, xs, status


def estimate_value(
    sys: StochasticSystem, y: np.ndarray, cfg: SimConfig, point_idx: int = 0
) -> ValueSample:
    """Monte Carlo Zubov value: w_hat = 1 - mean exp(-integral of g along path).

    Diverged paths contribute factor 0; converged paths truncate the integral
    at entry to the convergence ball.
    """
    y = np.asarray(y, dtype=float)
    _, factors = _simulate_batch(
        sys, y, cfg, point_idx, cfg.samples_value, accumulate_weight=True
    )
    w_hat = float(1.0 - np.mean(factors))
    return ValueSample(point=y, w_hat=min(max(w_hat, 0.0), 1.0))


def clopper_pearson(successes: int, trials: int, confidence: float = 0.99):
    """Exact two-sided binomial confidence interval."""
    alpha = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(
        _beta_dist.ppf(alpha / 2, successes, trials - successes + 1)
    )
    hi = 1.0 if successes == trials else float(
        _beta_dist.ppf(1 - alpha / 2, successes + 1, trials - successes)
    )
    return lo, hi


def estimate_attraction(
    sys: StochasticSystem, x0: np.ndarray, cfg: SimConfig, point_idx: int = 0
):
    """(convergence frequency, 99% Clopper-Pearson interval) over samples_prob
    paths; TIMEOUT counts as non-converged, which is conservative for checking
    lower bounds."""
    x0 = np.asarray(x0, dtype=float)
    status, _ = _simulate_batch(
        sys, x0, cfg, point_idx, cfg.samples_prob, accumulate_weight=False
    )
    k = int(np.sum(status == 0))
    freq = k / cfg.samples_prob
    return freq, clopper_pearson(k, cfg.samples_prob)


def grid_points(sys: StochasticSystem, per_dim: int = 21, cap: int = 2000) -> np.ndarray:
    """Uniform inclusive grid over the domain, per-dim count reduced to respect cap."""
    n = sys.n
    while per_dim > 2 and per_dim**n > cap:
        per_dim -= 1
    axes = [np.linspace(iv.lo, iv.hi, per_dim) for iv in sys.domain.intervals]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def generate_dataset(
    sys: StochasticSystem, cfg: SimConfig, per_dim: int = 21, cap: int = 2000
) -> np.ndarray:
    """Value samples on a uniform grid; rows are (x1..xn, w_hat)."""
    pts = grid_points(sys, per_dim, cap)
    rows = np.empty((len(pts), sys.n + 1))
    for i, y in enumerate(pts):
        sample = estimate_value(sys, y, cfg, point_idx=i)
        rows[i, : sys.n] = y
        rows[i, sys.n] = sample.w_hat
    return rows


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def save_dataset(path: str, data: np.ndarray, n: int):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(n)] + ["w_hat"])
        for row in np.asarray(data):
            writer.writerow([repr(float(v)) for v in row])


def load_dataset(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "w_hat":
            raise ConfigError(f"{path} is not a value dataset (missing w_hat column)")
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows)


def save_trajectory(path: str, ts: np.ndarray, xs: np.ndarray):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(xs.shape[1])])
        for t, x in zip(ts, xs):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in x])
