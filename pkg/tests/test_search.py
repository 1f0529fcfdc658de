import math
import random

import numpy as np
import pytest

from msdelay.errors import NoFeasiblePoint
from msdelay.search import (
    is_contracting,
    minimize_msd,
    scan_csv,
    scan_h2,
    stability_probe,
    worker_count,
)

P_REF, SIGMA_REF = 0.24579453, 0.0014128697
AFFINE_MIN = 0.001623205


@pytest.fixture(scope="module")
def stiff_result(ball50, curve50, settings):
    return minimize_msd(ball50, curve50, (0.24, ball50.equilibrium[0]), (0.0, 0.01), 1e-8, settings, workers=1)


@pytest.fixture(scope="module")
def default_result(ball, curve, settings):
    return minimize_msd(ball, curve, (0.24, ball.equilibrium[0]), (0.0, 0.01), 1e-8, settings, workers=1)


def test_scan_empty_grid(ball, curve, settings):
    assert scan_h2(ball, curve, [], 0.0, settings) == []


def test_scan_orders_and_marks_failures(ball, curve, settings):
    rows = scan_h2(ball, curve, [0.2458, 0.24, 0.2498], 0.0, settings, workers=1)
    assert [p for p, _ in rows] == [0.24, 0.2458, 0.2498]
    assert rows[2][1] is None
    assert all(h is not None for _, h in rows[:2])


def test_scan_parallel_matches_serial(ball, curve, settings):
    grid = [0.242, 0.244, 0.246, 0.248]
    assert scan_h2(ball, curve, grid, 0.0, settings, workers=2) == scan_h2(ball, curve, grid, 0.0, settings, workers=1)


def test_scan_affine_minimum(affine, affine_curve, affine_settings):
    rows = scan_h2(affine, affine_curve, np.linspace(-0.7, -0.3, 9), 0.0, affine_settings, workers=1)
    values = [h for _, h in rows if h is not None]
    assert min(values) == pytest.approx(AFFINE_MIN, abs=1e-6)


def test_scan_stiff_dip(ball50, curve50, settings):
    rows = scan_h2(ball50, curve50, np.linspace(0.2440, 0.2476, 13), 0.0, settings, workers=1)
    values = [h for _, h in rows]
    i = int(np.argmin(values))
    assert 0 < i < len(values) - 1
    assert all(a > b for a, b in zip(values[:i], values[1 : i + 1]))
    assert all(a < b for a, b in zip(values[i:], values[i + 1 :]))
    assert values[i] == pytest.approx(SIGMA_REF, abs=1e-6)


def test_scan_csv_layout():
    text = scan_csv([(0.24, 0.0017), (0.25, None)], 0.0)
    assert text.splitlines() == ["p,h1,h2_star", "0.24,0.0,0.0017", "0.25,0.0,"]


def test_msd_stiff_matches_reference(stiff_result):
    r = stiff_result
    assert r.sigma_hat == pytest.approx(SIGMA_REF, abs=1e-6)
    assert abs(r.x_star_param - P_REF) < 1e-4
    assert r.h1_star <= 1e-6
    assert r.sigma_hat == max(r.h1_star, r.h2_star)
    assert r.residual_at_opt < 1e-6


def test_msd_default_invariants(default_result):
    r = default_result
    assert r.sigma_hat == max(r.h1_star, r.h2_star)
    assert r.residual_at_opt < 1e-6
    assert r.h1_star <= 1e-6
    assert r.method == "grid+nelder-mead"
    assert len(r.scan_table) == 33 * 9
    assert set(r.as_dict()) == {"sigma_hat", "p_star", "h1_star", "h2_star", "residual", "evaluations"}


def test_msd_objective_not_below_delay_bound(default_result):
    for p, h1, value in default_result.scan_table:
        assert value >= h1
        assert value >= default_result.sigma_hat - 1e-12


def test_msd_affine_fixed_h1(affine, affine_curve, affine_settings):
    r = minimize_msd(affine, affine_curve, (-1.0, 0.0), (0.0, 0.0), 1e-8, affine_settings, grid=(9, 1), workers=1)
    assert r.method == "grid+golden"
    assert r.h1_star == 0.0
    assert r.sigma_hat == pytest.approx(AFFINE_MIN, abs=1e-6)


def test_golden_agrees_with_two_dimensional(ball50, curve50, settings, stiff_result):
    r = minimize_msd(ball50, curve50, (0.24, ball50.equilibrium[0]), (0.0, 0.0), 1e-8, settings, workers=1)
    assert r.h1_star == 0.0 == stiff_result.h1_star
    assert r.sigma_hat == pytest.approx(stiff_result.sigma_hat, abs=1e-8)


def test_msd_deterministic(ball, curve, settings):
    args = (ball, curve, (0.24, ball.equilibrium[0]), (0.0, 0.005), 1e-8, settings)
    assert minimize_msd(*args, grid=(9, 3), workers=1) == minimize_msd(*args, grid=(9, 3), workers=1)


def test_msd_no_feasible_point(ball, curve, settings):
    with pytest.raises(NoFeasiblePoint):
        minimize_msd(ball, curve, (0.2498, 0.24984), (0.0, 0.0), 1e-8, settings, grid=(5, 1), workers=1)


@pytest.mark.parametrize("bounds", [((0.25, 0.24), (0.0, 0.0)), ((0.24, 0.25), (0.01, 0.0)), ((0.24, 0.25), (-1.0, 0.0))])
def test_msd_rejects_bad_bounds(ball, curve, settings, bounds):
    with pytest.raises(ValueError):
        minimize_msd(ball, curve, *bounds, 1e-8, settings)


def test_msd_rejects_bad_accuracy(ball, curve, settings):
    with pytest.raises(ValueError):
        minimize_msd(ball, curve, (0.24, 0.2498), (0.0, 0.0), -1.0, settings)


@pytest.mark.parametrize("H, expected", [(0.0, True), (0.0007, True), (0.002, False)])
def test_probe_verdicts(ball, curve, settings, H, expected):
    assert stability_probe(ball, curve, H, (1.0, 0.0), 3, settings).contracting is expected


def test_probe_below_threshold_from_random_starts(ball, curve, settings, default_result):
    rng = random.Random(11)
    H = 0.9 * default_result.sigma_hat
    for _ in range(5):
        x0 = (rng.uniform(0.4, 1.2), rng.uniform(-1.0, 1.0))
        probe = stability_probe(ball, curve, H, x0, 4, settings)
        assert probe.verdict == "contracting", (x0, probe.distances)


def test_probe_above_threshold_grows(ball, curve, settings):
    d = stability_probe(ball, curve, 0.002, (1.0, 0.0), 5, settings).distances
    assert all(b > a for a, b in zip(d[1:], d[2:]))


def test_probe_on_lossless_model(settings):
    from msdelay.models import BouncingBallParams, bouncing_ball
    from msdelay.poincare import default_curve

    lossless = bouncing_ball(BouncingBallParams(d_c=0.0, d_a=0.0))
    probe = stability_probe(lossless, default_curve(lossless), 0.0, (1.0, 0.0), 3, settings)
    assert not probe.contracting


def test_probe_preconditions(ball, curve, settings):
    with pytest.raises(ValueError):
        stability_probe(ball, curve, -1e-3, (1.0, 0.0), 3, settings)
    with pytest.raises(ValueError):
        stability_probe(ball, curve, 0.0, (1.0, 0.0), 2, settings)


def test_is_contracting():
    assert is_contracting([5.0, 3.0, 2.0, 1.0])
    assert not is_contracting([3.0, 2.0, 2.0])
    assert not is_contracting([1.0, 2.0])
    assert not is_contracting([1.0, 0.5, 0.6])


def test_worker_count_cap(monkeypatch):
    monkeypatch.setenv("MSD_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("MSD_THREADS", "junk")
    assert worker_count() >= 1
