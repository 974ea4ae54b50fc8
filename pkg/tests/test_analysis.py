import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pjm
from edlm_mpc.analysis import (
    char_poly_analysis1,
    char_poly_analysis2,
    disturbance_transfer,
    stability_check,
    steady_state_error,
)
from edlm_mpc.control import ControllerConfig
from edlm_mpc.edlm import PJM, HistoryWindow, pjm_exact
from edlm_mpc.errors import UnsupportedConfiguration
from edlm_mpc.numeric import ZPolynomial, ZRational
from edlm_mpc.prediction import horizon
from edlm_mpc.sim import EXAMPLE2, EXAMPLE4, Scenario, run_closed_loop

EX1 = PJM.from_pg_vector([0, 0.8, 0, 0, 0, 1.0, 0.5], 2, 5)
PROBE = 0.9 * np.exp(1j * np.linspace(0.1, 3.0, 9))


def models(pjm, N, lam, **kw):
    hm = horizon(pjm, N)
    cfg = ControllerConfig(N=N, lam=lam, **kw)
    return char_poly_analysis1(pjm, hm, cfg), char_poly_analysis2(pjm, hm, cfg)


def operating(plant, y=0.3, u=0.2):
    h = HistoryWindow(np.full((plant.Ly + 1, plant.My), y), np.full((plant.Lu + 1, plant.Mu), u))
    return pjm_exact(plant, h)


class Stub:
    form = "analysis1"

    def __init__(self, p):
        self.p = ZPolynomial(p)

    def determinant(self):
        return self.p


def test_pure_gain_plant_has_no_dynamics():
    m1, _ = models(PJM.from_pg_vector([0.0, 2.0], 1, 1), 1, 0.0)
    assert np.allclose(m1.char_poly.normalized(1e-14).coeffs, [1.0])
    assert stability_check(m1).stable


@pytest.mark.parametrize(
    "coeffs, stable, mod",
    [([1.0, -0.5], True, 0.5), ([1.0, -1.0], False, 1.0), ([1.0, 0.0, 0.25], True, 0.5), ([1.0, -2.5, 1.0], False, 2.0)],
)
def test_stability_check_examples(coeffs, stable, mod):
    rep = stability_check(Stub(coeffs))
    assert rep.stable is stable
    assert rep.max_modulus == pytest.approx(mod)


@pytest.mark.parametrize("lam, mod", [(0.1, 0.6486), (1.0, 0.8242), (2.0, 0.8545)])
def test_example1_table(lam, mod):
    m1, m2 = models(EX1, 4, lam)
    s1, s2 = stability_check(m1), stability_check(m2)
    assert s1.stable and s2.stable
    assert s1.max_modulus == pytest.approx(mod, abs=5e-5)
    assert np.allclose(np.sort_complex(s1.roots), np.sort_complex(s2.roots), atol=1e-9)
    assert steady_state_error(m1, "ramp").limit_error == pytest.approx(2 * lam / 15, abs=1e-9)
    assert steady_state_error(m2, "ramp").limit_error == pytest.approx(2 * lam / 15, abs=1e-9)
    assert steady_state_error(m1, "step").limit_error == pytest.approx(0.0, abs=1e-12)


def test_large_lambda_recovers_open_loop_roots():
    m1, _ = models(EX1, 4, 1e8)
    roots = np.sort(stability_check(m1).roots.real)
    # Delta (1 - 0.8 z^-2) has roots {1, +-sqrt(0.8)}
    assert np.allclose(roots, [-np.sqrt(0.8), np.sqrt(0.8), 1.0], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_deadbeat_has_unity_static_gain(seed):
    pjm = random_pjm(np.random.default_rng(seed), 2, 2, 1, 1)
    _, m2 = models(pjm, 1, 0.0)
    assert m2.exact
    assert m2.ref_numerator(1.0) / m2.char_poly(1.0) == pytest.approx(1.0, abs=1e-9)


def test_analysis2_inexact_beyond_dead_time():
    _, m2 = models(EX1, 6, 1.0)
    assert not m2.exact
    with pytest.raises(UnsupportedConfiguration):
        steady_state_error(m2, "ramp")


def test_unstable_loop_reports_divergence():
    pjm = PJM.from_pg_vector([1.5, 1.0], 1, 1)
    m1, _ = models(pjm, 1, 1e6)
    assert not stability_check(m1).stable
    rep = steady_state_error(m1, "step")
    assert rep.divergent and rep.limit_error is None and rep.reason


def test_error_transfer_matches_simulation():
    cfg = ControllerConfig(N=4, lam=1.0)
    m1 = char_poly_analysis1(EX1, horizon(EX1, 4), cfg)
    n = 60
    ref = np.zeros(n + 10)
    ref[20:] = 1.0
    t = run_closed_loop(Scenario("example1", cfg, reference=ref[:, None].tolist(), steps=n))
    pred = np.convolve(m1.error_transfer().impulse_response(n), ref)[:n]
    assert np.allclose(pred, t.e[:, 0], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_deadbeat_disturbance_is_delta(seed):
    pjm = random_pjm(np.random.default_rng(seed), 2, 2, 2, 2)
    m1, _ = models(pjm, 1, 0.0)
    T = disturbance_transfer(m1, False, rank_full=True, pjm=pjm, wrt="w")
    want = (1 - PROBE)[:, None, None] * np.eye(2)
    assert np.allclose(T(PROBE), want, atol=1e-9)


def test_rank_claim_is_validated():
    pjm = operating(EXAMPLE4)
    m1, m2 = models(pjm, 2, 0.0, ridge=1e-10)
    with pytest.raises(UnsupportedConfiguration):
        disturbance_transfer(m1, False, rank_full=True, pjm=pjm)
    with pytest.raises(UnsupportedConfiguration):
        disturbance_transfer(m2, False)


def test_example4_disturbance_gain():
    m1, _ = models(operating(EXAMPLE4), 2, 0.0, ridge=1e-10)
    T = disturbance_transfer(m1, False)
    want = (1 + PROBE)[:, None, None] * np.eye(2)
    assert np.allclose(T(PROBE), want, atol=1e-8)


def test_compensation_cancels_disturbance():
    m1, _ = models(operating(EXAMPLE2), 3, 0.0, ridge=1e-10, mode="uiMPC+D")
    assert stability_check(m1).stable
    assert np.max(np.abs(disturbance_transfer(m1, True)(PROBE))) <= 1e-8
    assert np.max(np.abs(disturbance_transfer(m1, False)(PROBE))) > 1e-2


def test_siso_disturbance_type():
    m1, _ = models(EX1, 4, 1.0)
    T = disturbance_transfer(m1, False)
    assert isinstance(T, ZRational)
    assert np.all(np.isfinite(T.impulse_response(20)))
