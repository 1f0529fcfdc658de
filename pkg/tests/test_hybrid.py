import json
import math

import numpy as np
import pytest

from msdelay.errors import GuardNotReached, MismatchError, PreconditionViolated, RangeError, ZenoSuspected
from msdelay.hybrid import (
    DelayPolicy,
    HybridTrajectory,
    OrbitCandidate,
    build_orbit,
    join,
    simulate,
    spatial_hits,
    verify_closed_orbit,
    within_delay_bound,
)
from msdelay.ode import integrate_dense, linear_surface

X_EQ = (0.2498405875, 0.0)


@pytest.fixture(scope="module")
def exact_run(ball, settings):
    return simulate(ball, 2, (1.0, 0.0), 3.0, DelayPolicy.exact(), settings)


def test_exact_run_settles_at_equilibrium(ball, settings):
    # The last bounce ends near t = 7.7 s, so 3 s is not enough to settle.
    run = simulate(ball, 2, (1.0, 0.0), 10.0, DelayPolicy.exact(), settings)
    assert run.t_max == 10.0
    assert run.transitions[-1].t < 8.0
    assert math.dist(run.final_state, X_EQ) < 1e-3
    assert math.dist(run.state(3.0)[1], X_EQ) > 0.1


def test_exact_transitions_on_guard(ball, exact_run, settings):
    assert len(exact_run.transitions) >= 6
    for tr in exact_run.transitions:
        _, x = exact_run.state(tr.t)
        assert abs(ball.guard(x)) <= settings.event_value_tol
        assert tr.delay == 0.0 and tr.t == tr.crossing_time


def test_state_continuous_and_modes_alternate(exact_run):
    pieces = exact_run.pieces
    for (m0, s0), (m1, s1) in zip(pieces, pieces[1:]):
        assert s0.t1 == s1.t0
        assert math.dist(s0.x_end, s1.x_start) <= 1e-12
        if m0 != m1:
            assert any(tr.t == s1.t0 and tr.source == m0 and tr.target == m1 for tr in exact_run.transitions)
    modes = [tr.source for tr in exact_run.transitions]
    assert all(a != b for a, b in zip(modes, modes[1:]))


def test_zero_delay_equals_exact(ball, exact_run, settings):
    run = simulate(ball, 2, (1.0, 0.0), 3.0, DelayPolicy.fixed(0.0), settings)
    assert len(run.transitions) == len(exact_run.transitions)
    for a, b in zip(run.transitions, exact_run.transitions):
        assert abs(a.t - b.t) <= settings.event_time_tol


def test_fixed_delay_fires_exactly_after_crossing(ball, settings):
    run = simulate(ball, 2, (1.0, 0.0), 3.0, DelayPolicy.fixed(0.002, 0.0005), settings)
    for tr in run.transitions:
        assert tr.t - tr.crossing_time == pytest.approx(0.002 if tr.source == 2 else 0.0005, abs=1e-15)


def test_delayed_run_keeps_pre_transition_field(ball, settings):
    run = simulate(ball, 2, (1.0, 0.0), 0.6, DelayPolicy.fixed(0.002), settings)
    tr = run.transitions[0]
    mode, x = run.state(0.5 * (tr.crossing_time + tr.t))
    assert mode == 2 and ball.guard(x) < 0


def test_long_delay_does_not_contract(ball, curve, settings):
    run = simulate(ball, 2, (1.0, 0.0), 3.0, DelayPolicy.fixed(0.002), settings)
    hits = [h for h in spatial_hits(run, curve.section, 0.0, settings, 1) if h.mode == 1]
    depths = [X_EQ[0] - h.x[0] for h in hits[:3]]
    assert len(depths) == 3
    assert depths[0] <= depths[1] <= depths[2]


def test_schedule_missing_entries_are_zero(ball, settings):
    run = simulate(ball, 2, (1.0, 0.0), 2.0, DelayPolicy.schedule([0.001]), settings)
    assert run.transitions[0].delay == 0.001
    assert all(tr.delay == 0.0 for tr in run.transitions[1:])


def test_schedule_within_larger_bound(ball, settings):
    run = simulate(ball, 2, (1.0, 0.0), 2.0, DelayPolicy.schedule([0.001, 0.0004, 0.0008]), settings)
    assert within_delay_bound(run, 0.001)
    assert within_delay_bound(run, 0.003)
    assert not within_delay_bound(run, 0.0007)


def test_initial_state_must_be_in_mode_domain(ball, settings):
    with pytest.raises(PreconditionViolated):
        simulate(ball, 1, (1.0, 0.0), 1.0, DelayPolicy.exact(), settings)


def test_zeno_limit(ball, settings):
    with pytest.raises(ZenoSuspected):
        simulate(ball, 2, (1.0, 0.0), 3.0, DelayPolicy.exact(), settings, max_transitions=3)


def test_policy_validation():
    with pytest.raises(ValueError):
        DelayPolicy.fixed(-1.0)
    with pytest.raises(ValueError):
        DelayPolicy.schedule([0.1, math.inf])


def test_slice_full_window_is_identity(exact_run):
    assert exact_run.slice(exact_run.t_min, exact_run.t_max) is exact_run


def test_nested_slices(exact_run):
    outer = exact_run.slice(0.2, 2.0)
    inner = outer.slice(0.5, 1.5)
    direct = exact_run.slice(0.5, 1.5)
    assert inner.transitions == direct.transitions
    for t in np.linspace(0.5, 1.5, 41):
        assert inner.state(t) == direct.state(t)


def test_slice_keeps_transition_records(ball, settings):
    run = simulate(ball, 2, (1.0, 0.0), 2.0, DelayPolicy.fixed(0.001), settings)
    tr = run.transitions[0]
    piece = run.slice(tr.t - 0.01, tr.t + 0.01)
    assert piece.transitions == (tr,)
    assert piece.transitions[0].delay == 0.001


def test_slice_outside_span(exact_run):
    with pytest.raises(RangeError):
        exact_run.slice(-1.0, 1.0)


def test_join_with_empty(exact_run):
    assert join(exact_run, HybridTrajectory.empty()) is exact_run
    assert join(HybridTrajectory.empty(), exact_run) is exact_run


def test_join_reassembles_slices(exact_run):
    a, b, c = 0.3, 0.95, 1.8
    joined = join(exact_run.slice(a, b), exact_run.slice(b, c))
    ref = exact_run.slice(a, c)
    for t in np.linspace(a, c, 50):
        assert math.dist(joined.state(t)[1], ref.state(t)[1]) <= 1e-9


def test_join_mismatch(ball, settings):
    s1 = integrate_dense(ball.f2, (1.0, 0.0), 0.1, settings)
    s2 = integrate_dense(ball.f2, (0.9, 0.0), 0.1, settings)
    t1 = HybridTrajectory(tuple((2, s) for s in s1))
    t2 = HybridTrajectory(tuple((2, s) for s in s2))
    with pytest.raises(MismatchError):
        join(t1, t2)


def test_join_shifts_time(ball, settings):
    s1 = integrate_dense(ball.f2, (1.0, 0.0), 0.1, settings)
    first = HybridTrajectory(tuple((2, s) for s in s1))
    s2 = integrate_dense(ball.f2, first.final_state, 0.1, settings)
    second = HybridTrajectory(tuple((2, s) for s in s2))
    joined = join(first, second)
    assert joined.t_max == pytest.approx(0.2)
    assert joined.state(0.15)[1] == pytest.approx(second.state(0.05)[1], abs=1e-15)


def test_guard_hits_alternate(ball, exact_run, settings):
    hits = spatial_hits(exact_run, ball.guard, 0.0, settings)
    assert len(hits) >= 6
    assert [h.direction for h in hits[:6]] == [-1, 1, -1, 1, -1, 1]
    for h, tr in zip(hits, exact_run.transitions):
        assert abs(h.t - tr.t) <= 1e-9


def test_hits_after_end_empty(ball, exact_run, settings):
    assert spatial_hits(exact_run, ball.guard, exact_run.t_max, settings) == []


def test_velocity_hit_at_maximum_compression(ball, exact_run, settings):
    tr = exact_run.transitions[0]
    contact = exact_run.slice(tr.t, exact_run.transitions[1].t)
    hits = spatial_hits(contact, linear_surface(0.0, 1.0), tr.t, settings)
    assert len(hits) == 1
    grid = np.linspace(contact.t_min, contact.t_max, 20001)
    v = np.array([contact.state(t)[1][1] for t in grid])
    k = int(np.flatnonzero(v >= 0)[0])
    assert grid[k - 1] <= hits[0].t <= grid[k]
    assert hits[0].x[0] == pytest.approx(min(contact.state(t)[1][0] for t in grid), abs=1e-9)


def test_exports(ball, settings):
    run = simulate(ball, 2, (1.0, 0.0), 1.0, DelayPolicy.fixed(0.001), settings)
    lines = run.to_csv(0.01).splitlines()
    assert lines[0] == "mode,t,x1,x2"
    assert len(lines) == 102
    log = json.loads(run.transitions_json())
    assert log[0] == {"t": run.transitions[0].t, "from": 2, "to": 1, "delay": 0.001}


# Closed-orbit verification: the reference anchor closes under the stiffer floor.
P_REF, H2_REF = 0.24579453, 0.0014128697


def test_reference_orbit_closes(ball50, curve50, settings):
    cand = OrbitCandidate((P_REF, 0.0), 0.0, H2_REF)
    assert verify_closed_orbit(ball50, curve50, cand, settings) < 1e-6


def test_reference_orbit_does_not_close_with_default_stiffness(ball, curve, settings):
    cand = OrbitCandidate((P_REF, 0.0), 0.0, H2_REF)
    assert verify_closed_orbit(ball, curve, cand, settings) > 5e-5


def test_undelayed_loop_contracts(ball50, curve50, settings):
    cand = build_orbit(ball50, curve50.section, (P_REF, 0.0), 0.0, 0.0, settings)
    assert cand.residual > 0
    x5 = cand.trajectory.final_state
    assert curve50.distance(x5) < curve50.distance((P_REF, 0.0))


def test_residual_grows_off_optimum(ball50, curve50, settings):
    at = verify_closed_orbit(ball50, curve50, OrbitCandidate((P_REF, 0.0), 0.0, H2_REF), settings)
    off = verify_closed_orbit(ball50, curve50, OrbitCandidate((P_REF, 0.0), 0.0, H2_REF + 1e-4), settings)
    assert off > at


def test_orbit_trajectory_structure(ball50, curve50, settings):
    cand = build_orbit(ball50, curve50.section, (P_REF, 0.0), 0.0, H2_REF, settings)
    tr = cand.trajectory.transitions
    assert [(t.source, t.target) for t in tr] == [(1, 2), (2, 1)]
    assert tr[1].delay == H2_REF
    assert cand.trajectory.initial_mode == cand.trajectory.final_mode == 1


def test_verify_requires_guard_exit(ball, curve, settings):
    with pytest.raises(GuardNotReached):
        verify_closed_orbit(ball, curve, OrbitCandidate((0.2498, 0.0), 0.0, 0.001), settings)
