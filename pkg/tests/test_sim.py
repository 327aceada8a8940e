import numpy as np
import pytest

from roabound.errors import ConfigError
from roabound.sim import (
    CONVERGED,
    DIVERGED,
    TIMEOUT,
    SimConfig,
    ValueSample,
    _simulate_batch,
    clopper_pearson,
    estimate_attraction,
    estimate_value,
    generate_dataset,
    grid_points,
    load_dataset,
    save_dataset,
    save_trajectory,
    simulate_path,
)
from roabound.system import system_from_dict


def make_system(f, sigma, domain):
    n = len(f)
    return system_from_dict({"n": n, "m": len(sigma[0]), "f": f, "sigma": sigma,
                             "domain": domain})


@pytest.fixture(scope="module")
def lin1d():
    return make_system(["-x1"], [["0"]], [[-2.0, 2.0]])


@pytest.fixture(scope="module")
def noisy1d():
    return make_system(["-x1"], [["0.5*x1"]], [[-2.0, 2.0]])


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(dt=0.0)
    with pytest.raises(ConfigError):
        SimConfig(horizon=-1.0)
    with pytest.raises(ConfigError):
        SimConfig(samples_value=0)


def test_radius_ordering_enforced(lin1d):
    # conv radius must sit strictly inside the domain, div radius outside
    bad = SimConfig(conv_radius=3.0)
    with pytest.raises(ConfigError):
        bad.resolved_div_radius(lin1d)
    bad2 = SimConfig(div_radius=1.0)
    with pytest.raises(ConfigError):
        bad2.resolved_div_radius(lin1d)
    assert SimConfig().resolved_div_radius(lin1d) == pytest.approx(20.0)


def test_value_sample_range():
    with pytest.raises(ValueError):
        ValueSample(point=np.zeros(1), w_hat=1.5)
    with pytest.raises(ValueError):
        ValueSample(point=np.zeros(1), w_hat=-0.1)


def test_deterministic_decay_tracks_exponential(lin1d):
    cfg = SimConfig(seed=3)
    ts, xs, status = simulate_path(lin1d, [1.0], cfg)
    assert status == CONVERGED
    # Euler on dx = -x dt has global error O(dt) over this horizon
    assert np.max(np.abs(xs[:, 0] - np.exp(-ts))) < 5 * cfg.dt
    # stops on entering the convergence ball, around t = ln(1/0.01)
    assert ts[-1] == pytest.approx(np.log(100.0), abs=0.05)
    assert abs(xs[-1, 0]) <= cfg.conv_radius


def test_origin_start_is_immediately_converged(lin1d):
    cfg = SimConfig(seed=3)
    ts, xs, status = simulate_path(lin1d, [0.0], cfg)
    assert status == CONVERGED
    assert len(ts) == 1 and ts[0] == 0.0
    assert estimate_value(lin1d, [0.0], cfg).w_hat == 0.0


def test_value_matches_closed_form(lin1d):
    # dX = -X dt with g = 0.1 x^2 gives W(x) = 1 - exp(-0.05 x^2)
    cfg = SimConfig(seed=11)
    got = estimate_value(lin1d, [1.0], cfg).w_hat
    assert abs(got - (1.0 - np.exp(-0.05))) < 2e-3


def test_value_reproducible_and_seed_sensitive(noisy1d):
    cfg = SimConfig(seed=5, samples_value=40, horizon=6.0)
    a = estimate_value(noisy1d, [1.2], cfg).w_hat
    b = estimate_value(noisy1d, [1.2], cfg).w_hat
    assert a == b
    c = estimate_value(noisy1d, [1.2], SimConfig(seed=6, samples_value=40,
                                                 horizon=6.0)).w_hat
    assert c != a


def test_trajectory_reproducible(noisy1d):
    cfg = SimConfig(seed=5, horizon=2.0)
    ts1, xs1, st1 = simulate_path(noisy1d, [1.0], cfg, point_idx=2, path_idx=9)
    ts2, xs2, st2 = simulate_path(noisy1d, [1.0], cfg, point_idx=2, path_idx=9)
    assert st1 == st2 and np.array_equal(xs1, xs2)
    _, xs3, _ = simulate_path(noisy1d, [1.0], cfg, point_idx=2, path_idx=10)
    assert not np.array_equal(xs1, xs3)


def test_batch_matches_single_paths(noisy1d):
    cfg = SimConfig(seed=5, horizon=8.0)
    status, factors = _simulate_batch(noisy1d, np.array([1.0]), cfg, 4, 6, True)
    names = {0: CONVERGED, 1: DIVERGED, 2: TIMEOUT}
    for p in range(6):
        _, _, st = simulate_path(noisy1d, [1.0], cfg, point_idx=4, path_idx=p)
        assert st == names[status[p]]
    assert np.all(factors >= 0.0) and np.all(factors <= 1.0)


def test_dt_refinement_stable(lin1d):
    # deterministic system: halving dt moves the value by far less than the
    # Monte Carlo tolerance used elsewhere
    w_coarse = estimate_value(lin1d, [1.0], SimConfig(seed=1, samples_value=1)).w_hat
    w_fine = estimate_value(lin1d, [1.0],
                            SimConfig(seed=1, samples_value=1, dt=5e-4)).w_hat
    assert abs(w_coarse - w_fine) < 1e-3


def test_timeout_keeps_weight_integral():
    # f = 0: the path sits at x0 forever, integral is exactly g(x0) * T
    frozen = make_system(["0"], [["0"]], [[-2.0, 2.0]])
    cfg = SimConfig(seed=0, samples_value=3)
    ts, xs, status = simulate_path(frozen, [1.0], cfg)
    assert status == TIMEOUT
    assert ts[-1] == pytest.approx(cfg.horizon, abs=2 * cfg.dt)
    w = estimate_value(frozen, [1.0], cfg).w_hat
    assert w == pytest.approx(1.0 - np.exp(-0.1 * cfg.horizon), abs=1e-10)


def test_divergence_zeroes_the_factor():
    unstable = make_system(["x1"], [["0"]], [[-2.0, 2.0]])
    cfg = SimConfig(seed=0, samples_value=3)
    ts, xs, status = simulate_path(unstable, [1.0], cfg)
    assert status == DIVERGED
    assert abs(xs[-1, 0]) >= 20.0
    assert estimate_value(unstable, [1.0], cfg).w_hat == 1.0


def test_attraction_frequencies():
    cfg = SimConfig(seed=2, samples_prob=400, horizon=8.0)
    stable = make_system(["-x1"], [["0.1*x1"]], [[-2.0, 2.0]])
    freq, (lo, hi) = estimate_attraction(stable, [1.0], cfg)
    assert freq == 1.0 and hi == 1.0
    assert lo == pytest.approx(0.005 ** (1 / 400), rel=1e-9)

    unstable = make_system(["x1"], [["0"]], [[-2.0, 2.0]])
    freq2, (lo2, hi2) = estimate_attraction(unstable, [1.0], cfg)
    assert freq2 == 0.0 and lo2 == 0.0
    assert hi2 == pytest.approx(1.0 - 0.005 ** (1 / 400), rel=1e-9)


def test_timeout_counts_as_not_attracted():
    frozen = make_system(["0"], [["0"]], [[-2.0, 2.0]])
    cfg = SimConfig(seed=2, samples_prob=20, horizon=1.0)
    freq, _ = estimate_attraction(frozen, [1.0], cfg)
    assert freq == 0.0


def test_clopper_pearson_against_closed_forms():
    # zero and full success columns have the classic closed forms
    lo, hi = clopper_pearson(0, 50)
    assert lo == 0.0
    assert hi == pytest.approx(1.0 - 0.005 ** (1 / 50), rel=1e-9)
    lo, hi = clopper_pearson(50, 50)
    assert hi == 1.0
    assert lo == pytest.approx(0.005 ** (1 / 50), rel=1e-9)
    # interior case brackets the point estimate and shrinks with more trials
    lo1, hi1 = clopper_pearson(50, 100)
    assert lo1 < 0.5 < hi1
    lo2, hi2 = clopper_pearson(5000, 10000)
    assert (hi2 - lo2) < (hi1 - lo1) / 5


def test_grid_points_shape_and_cap():
    sys2 = make_system(["-x1", "-x2"], [["0", "0"], ["0", "0"]],
                       [[-1.0, 1.0], [-2.0, 2.0]])
    pts = grid_points(sys2, per_dim=21, cap=2000)
    assert pts.shape == (441, 2)
    assert pts[:, 0].min() == -1.0 and pts[:, 1].max() == 2.0
    capped = grid_points(sys2, per_dim=21, cap=100)
    assert capped.shape[0] <= 100 and capped.shape[0] == 100


def test_dataset_generation_and_csv_round_trip(tmp_path, lin1d):
    cfg = SimConfig(seed=1, samples_value=5, horizon=6.0)
    data = generate_dataset(lin1d, cfg, per_dim=5)
    assert data.shape == (5, 2)
    assert np.all(data[:, 1] >= 0.0) and np.all(data[:, 1] <= 1.0)
    mid = data[2]
    assert mid[0] == 0.0 and mid[1] == 0.0

    path = tmp_path / "values.csv"
    save_dataset(str(path), data, n=1)
    header = path.read_text().splitlines()[0]
    assert header == "x1,w_hat"
    back = load_dataset(str(path))
    assert np.array_equal(back, data)


def test_load_dataset_rejects_other_csv(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        load_dataset(str(path))


def test_trajectory_csv(tmp_path, lin1d):
    cfg = SimConfig(seed=3, horizon=0.5)
    ts, xs, _ = simulate_path(lin1d, [1.0], cfg)
    path = tmp_path / "traj.csv"
    save_trajectory(str(path), ts, xs)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1"
    assert len(lines) == len(ts) + 1
    assert float(lines[1].split(",")[1]) == 1.0
