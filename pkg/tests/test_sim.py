import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edlm_mpc.control import ConstraintSet, ControllerConfig
from edlm_mpc.edlm import HistoryWindow, Term, pjm_exact, separable_plant
from edlm_mpc.errors import OutOfRange, SimulationDiverged, WindowOutOfRange
from edlm_mpc.sim import (
    EQ64_SCALE,
    Scenario,
    disturbance_eq60,
    disturbance_eq64,
    ed_reference,
    metrics,
    plant_example1,
    plant_example2,
    plant_example4,
    reference_eq57,
    run_closed_loop,
)


def hist(n, ch, at=None, value=1.0):
    h = np.zeros((n, ch))
    if at is not None:
        h[at] = value
    return h


# plants


def test_example1_plant():
    y = np.array([[0.0], [2.0]])
    u = hist(5, 1)
    u[3, 0], u[4, 0] = 1.0, 2.0
    # y(k) = 0.8 y(k-2) + u(k-4) + 0.5 u(k-5)
    assert plant_example1(y, u) == pytest.approx(0.8 * 2.0 + 1.0 + 1.0)


@pytest.mark.parametrize(
    "fn, y_at, u_at, want",
    [
        (plant_example2, (1, 0, 0.5), None, (0.25, 0.125)),
        (plant_example2, (1, 1, 1.0), None, (0.7, 1.3)),
        (plant_example2, None, (3, 1, 1.0), (0.5, 0.4)),
        (plant_example2, None, (2, 0, 2.0), (2.0, 0.8)),
        (plant_example2, None, (3, 0, 2.0), (3.2, 0.4)),
        (plant_example4, None, (1, 0, 1.0), (1.0, 0.4)),
        (plant_example4, None, (2, 1, 1.0), (0.5, 0.4)),
    ],
)
def test_mimo_plant_terms(fn, y_at, u_at, want):
    y, u = hist(2, 2), hist(4, 2)
    if y_at:
        y[y_at[0], y_at[1]] = y_at[2]
    if u_at:
        u[u_at[0], u_at[1]] = u_at[2]
    assert np.allclose(fn(y, u), want)


def test_mimo_plant_adds_disturbance():
    assert np.allclose(plant_example2(hist(2, 2), hist(4, 2), w=(0.3, -0.1)), [0.3, -0.1])


# signals


def test_eq57_sinusoid_segment():
    k = 1
    r1 = 0.2 * np.sin(k / 20) - 0.2 * np.sin(k / 10) - 0.2 * np.cos(k / 5) + 0.2 * np.cos(k / 2)
    r2 = -0.2 * np.cos(k / 15) - 0.2 * np.sin(k / 25) + 0.2 * np.sin(k / 5) + 0.2 * np.cos(k / 3)
    assert np.allclose(reference_eq57(1), [r1, r2])


@pytest.mark.parametrize("k, s", [(351, -0.5), (374, 0.5), (400, 0.5), (424, -0.5), (700, 0.5)])
def test_eq57_square_wave(k, s):
    assert np.allclose(reference_eq57(k), [s, -s])


@pytest.mark.parametrize("k", [0, -3, 701])
def test_eq57_out_of_range(k):
    with pytest.raises(OutOfRange):
        reference_eq57(k)


def test_eq60_at_origin():
    assert np.allclose(disturbance_eq60(0), [0.1, 0.2])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_eq64_bounds_and_determinism(seed):
    first = disturbance_eq64(np.random.default_rng(seed))
    rng1, rng2 = np.random.default_rng(seed), np.random.default_rng(seed)
    s1 = np.array([disturbance_eq64(rng1) for _ in range(50)])
    s2 = np.array([disturbance_eq64(rng2) for _ in range(50)])
    assert np.array_equal(s1, s2) and np.array_equal(first, s1[0])
    assert np.all(s1 >= 0) and np.all(s1 < EQ64_SCALE)


# runner


def test_zero_reference_zero_trace():
    t = run_closed_loop(Scenario("example1", ControllerConfig(N=4, lam=1.0), reference="zero", steps=30))
    for arr in (t.y, t.u, t.e, t.du, t.cost):
        assert np.all(arr == 0.0)


def test_run_is_deterministic():
    s = Scenario("example4", ControllerConfig(N=2, lam=0.0, ridge=1e-10, pjm_mode="fixed_point"),
                 reference="eq57", disturbance="eq64", steps=40, seed=7)
    a, b = run_closed_loop(s), run_closed_loop(s)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.u, b.u) and np.array_equal(a.w, b.w)


def test_pjm_log_matches_exact():
    s = Scenario("example2", ControllerConfig(N=3, lam=0.0, ridge=1e-10, pjm_mode="fixed_point"),
                 reference="eq57", steps=15)
    t = run_closed_loop(s)
    plant = s.plant
    i = 10
    # row i holds y(i + 1) and u(i + 1)
    y_past = np.array([t.y[i - l] for l in range(plant.Ly + 1)])
    u_past = np.array([t.u[i - l] if i - l >= 0 else np.zeros(2) for l in range(plant.Lu + 1)])
    pjm = pjm_exact(plant, HistoryWindow(y_past, u_past))
    assert np.allclose(t.pjm[i], np.concatenate([b.ravel() for b in pjm.blocks]))


def test_constrained_run_respects_constraints():
    cs = ConstraintSet([-5.0, -5.0], [0.6, 0.6], energy_cap=1.0)
    s = Scenario("example2", ControllerConfig(N=3, lam=0.0, ridge=1e-10, mode="ciMPC", pjm_mode="fixed_point"),
                 constraints=cs, reference="eq57", steps=30)
    t = run_closed_loop(s)
    assert np.max(t.violation) <= 1e-8
    assert np.all(t.u <= 0.6 + 1e-8)


def test_divergence_guard_attaches_trace():
    plant = separable_plant([Term(0, "y", 0, 0, 1.5), Term(0, "u", 0, 0, 1.0)], 0, 0, 1, 1, "unstable")
    s = Scenario("custom", ControllerConfig(N=1, lam=1e6), reference="unit_ramp", steps=200, plant=plant)
    with pytest.raises(SimulationDiverged) as info:
        run_closed_loop(s)
    assert info.value.trace is not None and 0 < len(info.value.trace) < 200


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario("nope", ControllerConfig(N=1))
    with pytest.raises(ValueError):
        Scenario("example2", ControllerConfig(N=1, mode="ciMPC"))
    with pytest.raises(ValueError):
        Scenario("example2", ControllerConfig(N=1, mode="uiMPC+D"), disturbance="eq64")


# metrics


def test_metrics_window():
    t = run_closed_loop(Scenario("example1", ControllerConfig(N=4, lam=1.0), steps=300))
    m = metrics(t, (200, 300))
    assert m.steady_error[0] == pytest.approx(2 / 15, abs=1e-9)
    assert m.steady_spread[0] <= 1e-9
    assert m.rms_error[0] == pytest.approx(2 / 15, abs=1e-9)


@pytest.mark.parametrize("window", [(0, 10), (5, 4), (1, 301)])
def test_metrics_window_errors(window):
    t = run_closed_loop(Scenario("example1", ControllerConfig(N=4, lam=1.0), steps=300))
    with pytest.raises(WindowOutOfRange):
        metrics(t, window)


def test_ed_reference_definition():
    t = run_closed_loop(Scenario("example4", ControllerConfig(N=2, lam=0.0, ridge=1e-10),
                                 reference="zero", disturbance="eq64", steps=10, seed=1))
    ed = ed_reference(t)
    assert np.allclose(ed[5], -(t.w[5] - t.w[3]))
    assert np.allclose(ed[0], -(t.w[0] - t.w_prev[1]))
