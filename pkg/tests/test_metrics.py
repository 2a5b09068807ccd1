import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armreach.metrics import (
    TRIPHASIC_ABS,
    MetricsReport,
    MusclePairSignal,
    bell_window,
    filter_outliers,
    fit_gaussian_fixed_amplitude,
    fitts_fit,
    iqr_mask,
    mean_trajectory,
    metric_bell,
    metric_line_r2,
    metric_triphasic,
    moving_average,
    scan_phases,
    score_rollouts,
    time_normalize,
)
from armreach.trajectory import Trajectory

from oracles import BIPHASIC, TRIPHASIC, burst, reference_scan

S = np.linspace(0.0, 1.0, 101)


def make_traj(n, p=None, speed=None, act=None, success=True):
    t = np.arange(n) * 0.01
    p = np.zeros((n, 2)) if p is None else np.asarray(p, float)
    zeros2 = np.zeros((n, 2))
    speed = np.zeros(n) if speed is None else np.asarray(speed, float)
    act = np.zeros((n, 6)) if act is None else np.asarray(act, float)
    z = np.zeros(n)
    return Trajectory(
        t=t, q=zeros2, qd=zeros2, p=p, v=zeros2, a=zeros2, speed=speed, u_f=act, act=act,
        r_sparse=z, r_effort=z, r_jerk=z, r_work=z, r_total=z, success=success,
    )


# -- outliers --------------------------------------------------------------------


def test_iqr_literal_fence():
    np.testing.assert_array_equal(iqr_mask([1, 2, 3, 100]), [False, True, True, False])
    q25, q75 = np.percentile([1, 2, 3, 100], [25, 75])
    assert (q25, q75) == (1.75, 27.25)


def test_iqr_tukey_fence():
    np.testing.assert_array_equal(iqr_mask([1, 2, 3, 100], fence=1.5), [True, True, True, False])


def test_iqr_equal_values_all_kept():
    assert iqr_mask([4.0] * 7).all()


def test_filter_outliers_uses_speed_integral():
    batch = [make_traj(11, speed=np.full(11, c)) for c in (1.0, 2.0, 3.0, 100.0)]
    kept = filter_outliers(batch)
    assert [float(k.speed[0]) for k in kept] == [2.0, 3.0]


def test_filter_outliers_small_batch_passthrough(caplog):
    batch = [make_traj(5), make_traj(5)]
    assert filter_outliers(batch) == batch
    assert "at least 4" in caplog.text


# -- normalization ---------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 7, 33, 101, 500])
def test_time_normalize_length_and_ramp(n):
    ramp = np.linspace(0.0, 1.0, n)
    tr = make_traj(n, p=np.stack([ramp, np.full(n, 0.3)], axis=1))
    nt = time_normalize(tr)
    assert nt["p"].shape == (101, 2)
    np.testing.assert_allclose(nt["p"][:, 0], S, atol=1e-12)
    np.testing.assert_array_equal(nt["p"][:, 1], 0.3)
    assert nt["p"][0, 0] == 0.0 and nt["p"][-1, 0] == 1.0


def test_mean_trajectory_cases():
    one = time_normalize(make_traj(20, p=np.ones((20, 2))))
    np.testing.assert_array_equal(mean_trajectory([one])["p"], one["p"])
    two = time_normalize(make_traj(20, p=np.full((20, 2), 3.0)))
    np.testing.assert_array_equal(mean_trajectory([one, two])["p"], 2.0)


def test_mirrored_detours_average_to_straight_line():
    x = np.linspace(0, 1, 50)
    bump = 0.2 * np.sin(np.pi * x)
    up = time_normalize(make_traj(50, p=np.stack([x, bump], 1)))
    down = time_normalize(make_traj(50, p=np.stack([x, -bump], 1)))
    m = mean_trajectory([up, down])
    np.testing.assert_allclose(m["p"][:, 1], 0.0, atol=1e-15)
    assert metric_line_r2(m["p"], [0, 0], [1, 0]) == pytest.approx(1.0, abs=1e-9)


# -- straight line ---------------------------------------------------------------


def test_line_r2_exact_segment():
    path = np.linspace([0.1, -0.3], [0.4, 0.5], 60)
    assert metric_line_r2(path, [0.1, -0.3], [0.4, 0.5]) == pytest.approx(1.0, abs=1e-9)


def test_line_r2_semicircle():
    # detour of radius c/2 on chord c: residual and total sums in closed form
    # per unit chord give R^2 = 1 - 0.5 / (1 - 4 / pi^2)
    expected = 1 - 0.5 / (1 - 4 / math.pi**2)
    assert expected == pytest.approx(0.15926153394105846, abs=1e-15)
    phi = np.linspace(math.pi, 0.0, 200_001)
    path = np.stack([0.5 + 0.5 * np.cos(phi), 0.5 * np.sin(phi)], axis=1)
    assert metric_line_r2(path, [0, 0], [1, 0]) == pytest.approx(expected, abs=1e-4)


def test_line_r2_degenerate():
    assert metric_line_r2(np.zeros((5, 2)), [0, 0], [0, 0]) is None


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 10_000))
def test_line_r2_rigid_motion_invariant(angle, dx, dy, seed):
    rng = np.random.default_rng(seed)
    start, goal = np.array([0.0, 0.0]), np.array([0.6, 0.2])
    path = np.linspace(start, goal, 40) + rng.normal(0, 0.05, (40, 2))
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    shift = np.array([dx, dy])

    def move(x):
        return np.asarray(x) @ R.T + shift

    a = metric_line_r2(path, start, goal)
    b = metric_line_r2(move(path), move(start), move(goal))
    assert b == pytest.approx(a, abs=1e-9)


# -- bell --------------------------------------------------------------------------


def gauss(t, mu, sigma, amp=1.0):
    return amp * np.exp(-((t - mu) ** 2) / (2 * sigma**2))


def test_gaussian_recovery_many_plants():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 101)
    for _ in range(100):
        mu, sigma, amp = rng.uniform(0.3, 0.7), rng.uniform(0.08, 0.25), rng.uniform(0.2, 3.0)
        fit = fit_gaussian_fixed_amplitude(t, gauss(t, mu, sigma, amp), amp)
        assert fit.mu == pytest.approx(mu, abs=1e-6)
        assert fit.sigma == pytest.approx(sigma, abs=1e-6)
        assert fit.r2 >= 1 - 1e-9


def test_minimum_jerk_profile():
    # values frozen from an independent scipy curve_fit run on the same window
    v = 30 * S**2 - 60 * S**3 + 30 * S**4
    bell = metric_bell(S, v)
    assert (bell.onset, bell.offset) == (9, 91)
    assert bell.r2 == pytest.approx(0.9883095460130784, abs=1e-9)
    assert bell.fit.mu == pytest.approx(0.5, abs=1e-9)
    assert bell.fit.sigma == pytest.approx(0.22289924, abs=1e-7)


def test_triangle_scores_below_minimum_jerk():
    tri = 1 - np.abs(2 * S - 1)
    bell = metric_bell(S, tri)
    assert (bell.onset, bell.offset) == (6, 94)
    assert bell.r2 == pytest.approx(0.9556038178899731, abs=1e-9)
    mj = metric_bell(S, 30 * S**2 - 60 * S**3 + 30 * S**4)
    assert bell.r2 < mj.r2


def test_clean_bell_equals_window_fit():
    v = gauss(S, 0.5, 0.12, 0.8)
    bell = metric_bell(S, v)
    a, b = bell.onset, bell.offset
    direct = fit_gaussian_fixed_amplitude(S[a : b + 1], v[a : b + 1], 0.8)
    assert bell.r2 == direct.r2


def test_bell_absent_when_speed_does_not_drop():
    v = np.minimum(S * 4, 1.0) * np.where(S > 0.6, 0.5, 1.0)
    assert v[-1] == 0.5 * v.max()
    assert metric_bell(S, v).r2 is None


def test_bell_absent_for_zero_speed():
    assert bell_window(np.zeros(101)) is None
    assert metric_bell(S, np.zeros(101)).r2 is None


# -- triphasic ---------------------------------------------------------------------


def test_reference_moving_average_agrees():
    x = np.random.default_rng(0).uniform(size=30)
    ref = [np.mean([x[min(max(j, 0), 29)] for j in range(i - 2, i + 3)]) for i in range(30)]
    np.testing.assert_allclose(moving_average(x), ref, atol=1e-15)


def test_triphasic_signal_scores_one():
    pair = MusclePairSignal("S", *TRIPHASIC)
    scan = scan_phases(pair)
    assert scan.phases == ["ag", "ant", "ag"] == reference_scan(*TRIPHASIC)
    assert scan.boundaries == [0, 22, 47]
    assert metric_triphasic(pair) == 1


def test_biphasic_signal_scores_zero():
    assert reference_scan(*BIPHASIC) == ["ag", "ant"]
    assert metric_triphasic(MusclePairSignal("S", *BIPHASIC)) == 0


def test_constant_signals_score_zero():
    assert metric_triphasic(MusclePairSignal("E", np.full(101, 0.3), np.full(101, 0.2))) == 0


@pytest.mark.parametrize("gamma", [0.1, 0.5, 2.0])
def test_triphasic_scale_invariant_above_floor(gamma):
    pair = MusclePairSignal("B", TRIPHASIC[0] * gamma, TRIPHASIC[1] * gamma)
    assert metric_triphasic(pair) == 1


def test_triphasic_absolute_floor():
    ag, ant = TRIPHASIC[0] * 0.01, TRIPHASIC[1] * 0.01
    assert np.abs(np.gradient(moving_average(ag)) - np.gradient(moving_average(ant))).max() < TRIPHASIC_ABS
    assert metric_triphasic(MusclePairSignal("B", ag, ant)) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_scan_matches_reference_on_random_signals(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.1, 0.9, 4)
    ag = 0.05 + rng.uniform(0, 0.6) * burst(centers[0]) + rng.uniform(0, 0.6) * burst(centers[1])
    ant = 0.05 + rng.uniform(0, 0.6) * burst(centers[2]) + rng.uniform(0, 0.6) * burst(centers[3])
    assert scan_phases(MusclePairSignal("S", ag, ant)).phases == reference_scan(ag, ant)


def test_activation_delta_mode_available():
    pair = MusclePairSignal("S", *TRIPHASIC)
    assert scan_phases(pair, delta="activation").phases[0] == "ag"
    with pytest.raises(ValueError):
        scan_phases(pair, delta="bogus")


# -- Fitts --------------------------------------------------------------------------


def test_fitts_exact_line():
    fit = fitts_fit([2, 3, 4, 5], [0.4, 0.6, 0.8, 1.0])
    assert fit.slope == pytest.approx(0.2, abs=1e-12)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.r == pytest.approx(1.0, abs=1e-12)


def test_fitts_constant_mt_has_no_correlation():
    assert fitts_fit([2, 3, 4, 5], [0.5] * 4).r is None


def test_fitts_needs_three_ids():
    with pytest.raises(ValueError):
        fitts_fit([2, 2, 3], [0.1, 0.2, 0.3])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 2.0), min_size=3, max_size=3))
def test_fitts_matches_grid_search(mts):
    ids = np.array([2.0, 3.5, 5.0])
    y = np.array(mts)
    fit = fitts_fit(ids, y)
    # coarse-to-fine brute force over (a, b)
    a0, b0, span = 0.0, 0.0, 4.0
    for _ in range(12):
        A, B = np.meshgrid(np.linspace(a0 - span, a0 + span, 41), np.linspace(b0 - span, b0 + span, 41))
        sse = ((A[..., None] + B[..., None] * ids - y) ** 2).sum(axis=-1)
        i = np.unravel_index(np.argmin(sse), sse.shape)
        a0, b0, span = A[i], B[i], span / 8
    assert fit.intercept == pytest.approx(a0, abs=1e-6)
    assert fit.slope == pytest.approx(b0, abs=1e-6)
    if fit.r is not None:
        assert fit.r == pytest.approx(np.corrcoef(ids, y)[0, 1], abs=1e-12)


# -- report ------------------------------------------------------------------------


def reach_traj(n=60, success=True, bend=0.0):
    s = np.linspace(0, 1, n)
    shape = 10 * s**3 - 15 * s**4 + 6 * s**5
    p = np.stack([shape, bend * np.sin(np.pi * shape)], axis=1)
    speed = np.gradient(shape, s) / ((n - 1) * 0.01)
    act = np.zeros((n, 6))
    act[:, 0] = np.interp(s, S, TRIPHASIC[0])
    act[:, 1] = np.interp(s, S, TRIPHASIC[1])
    return make_traj(n, p=p, speed=speed, act=act, success=success)


def test_score_rollouts_report():
    batch = [reach_traj(n) for n in (50, 55, 60, 65, 70)] + [reach_traj(40, success=False)]
    report, mean = score_rollouts(batch, [0, 0], [1, 0])
    assert report.n_rollouts == 6 and report.n_success == 5
    assert report.n_kept + report.n_excluded == 5
    assert report.p_line == pytest.approx(1.0, abs=1e-9)
    assert report.v_bell is not None and report.v_bell > 0.95
    assert report.u_triphasic["S"] == 1
    assert report.u_triphasic_any == max(report.u_triphasic.values())
    assert mean["p"].shape == (101, 2)


def test_score_rollouts_without_success_is_flagged():
    report, mean = score_rollouts([reach_traj(success=False)] * 3, [0, 0], [1, 0])
    assert report.flagged and mean is None
    assert report.p_line is None and report.u_triphasic_any is None


def test_report_json_round_trip():
    report, _ = score_rollouts([reach_traj(n) for n in (50, 55, 60, 65)], [0, 0], [1, 0])
    d = json.loads(json.dumps(report.to_dict()))
    assert d["u_triphasic"]["any"] == report.u_triphasic_any
    again = MetricsReport.from_dict(d)
    assert again.to_dict() == report.to_dict()
    d["schema_version"] = 99
    with pytest.raises(ValueError):
        MetricsReport.from_dict(d)
