import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edlm_mpc.errors import DegenerateZeroPolynomial, DimensionMismatch, DivergentLimit, SingularMatrix, UnstablePole
from edlm_mpc.numeric import (
    TOL,
    ZPolyMatrix,
    ZPolynomial,
    ZRational,
    final_value,
    poly_mul,
    poly_roots,
    polymat_det,
    solve_linear,
)

Z = ZPolynomial


# solve_linear


def test_solve_identity():
    assert np.allclose(solve_linear(np.eye(3), [1, 2, 3]), [1, 2, 3])


def test_solve_diagonal():
    assert np.allclose(solve_linear(np.diag([2.0, 4.0]), [2, 8]), [1, 2])


def test_solve_random_residual(rng):
    A = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    b = rng.normal(size=5)
    x = solve_linear(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10


def test_solve_matrix_rhs(rng):
    A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    B = rng.normal(size=(4, 3))
    assert np.allclose(A @ solve_linear(A, B), B, atol=1e-12)


def test_solve_singular_raises():
    with pytest.raises(SingularMatrix):
        solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), [1, 2])


def test_solve_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_linear(np.eye(3), [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_solve_reproduces_rhs(n, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n)) + n * np.eye(n)
    b = r.normal(size=n)
    assert np.linalg.norm(A @ solve_linear(A, b) - b) <= 1e-10 * max(1.0, np.linalg.norm(b))


# polynomials


def test_mul_difference_of_squares():
    assert poly_mul(Z([1, -1]), Z([1, 1])).allclose(Z([1, 0, -1]))


def test_mul_identity():
    p = Z([0.3, -2.0, 5.0])
    assert (p * 1).allclose(p)


def test_mul_hand_convolution():
    assert poly_mul(Z([1, 0, -0.8]), Z.delta()).allclose(Z([1, -1, -0.8, 0.8]))


def test_shift_and_eval():
    p = Z([1.0, 2.0]).shift(2)
    assert p.allclose(Z([0, 0, 1, 2]))
    assert p(0.5) == pytest.approx(0.25 * 1 + 0.125 * 2)


@pytest.mark.parametrize(
    "coeffs, expected",
    [
        ([1, 0, -1], [-1.0, 1.0]),
        ([1, 0, -0.8], [-np.sqrt(0.8), np.sqrt(0.8)]),
        ([1, -1.5, 0.56], [0.7, 0.8]),
    ],
)
def test_roots_known(coeffs, expected):
    r = np.sort(poly_roots(Z(coeffs)).real)
    assert np.allclose(r, expected, atol=1e-12)


def test_roots_delays_are_not_roots():
    assert np.allclose(np.sort(poly_roots(Z([0, 0, 1, -0.5])).real), [0.5])


def test_roots_of_constant_and_zero():
    assert poly_roots(Z([3.0])).size == 0
    with pytest.raises(DegenerateZeroPolynomial):
        poly_roots(Z([0.0, 0.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.05, 0.95) | st.floats(-0.95, -0.05), min_size=1, max_size=8))
def test_roots_reconstruct(rs):
    p = Z([1.0])
    for r in rs:
        p = p * Z([1.0, -r])
    back = np.real(np.poly(poly_roots(p)))
    assert np.allclose(back, p.coeffs, atol=1e-6 * max(1.0, np.max(np.abs(p.coeffs))))


# polynomial matrices


def test_det_diagonal():
    d = Z.delta()
    M = ZPolyMatrix([[d, Z()], [Z(), d]])
    assert polymat_det(M).allclose(d * d)


def test_det_scalar():
    p = Z([1, 2, 3])
    assert polymat_det(ZPolyMatrix([[p]])).allclose(p)


def test_det_cofactor():
    M = ZPolyMatrix([[Z([1]), Z([0, 1])], [Z([0, 1]), Z([1])]])
    assert polymat_det(M).allclose(Z([1, 0, -1]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_det_triangular_is_diagonal_product(n, seed):
    r = np.random.default_rng(seed)
    entries = [[Z(r.normal(size=r.integers(1, 4))) if j >= i else Z() for j in range(n)] for i in range(n)]
    prod = Z([1.0])
    for i in range(n):
        prod = prod * entries[i][i]
    assert polymat_det(ZPolyMatrix(entries)).allclose(prod, atol=1e-10)


def test_det_matches_pointwise(rng):
    M = ZPolyMatrix([[Z(rng.normal(size=3)) for _ in range(3)] for _ in range(3)])
    d = polymat_det(M)
    x = 0.37 - 0.2j
    assert abs(d(x) - np.linalg.det(M.evaluate(x))) < 1e-10


def test_adjugate_identity(rng):
    M = ZPolyMatrix([[Z(rng.normal(size=2)) for _ in range(3)] for _ in range(3)])
    prod = M @ M.adjugate()
    d = polymat_det(M)
    assert prod.allclose(ZPolyMatrix.identity(3, d), atol=1e-10)


# final value


def test_final_value_geometric():
    assert final_value(ZRational(Z([1]), Z([1, -0.5])), "step") == pytest.approx(2.0)


@pytest.mark.parametrize("kind", ["step", "ramp"])
def test_final_value_zero(kind):
    assert final_value(ZRational(Z([0.0]), Z([1, -0.5])), kind) == 0.0


def test_final_value_ramp_needs_delta():
    with pytest.raises(DivergentLimit):
        final_value(ZRational(Z([1]), Z([1, -0.5])), "ramp")
    G = ZRational(Z.delta(), Z([1, -0.5]))
    assert final_value(G, "ramp") == pytest.approx(1 / 0.5)


def test_final_value_unstable():
    with pytest.raises(UnstablePole):
        final_value(ZRational(Z([1]), Z([1, -2.0])), "step")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.8, 0.8), min_size=1, max_size=3), st.lists(st.floats(-2, 2), min_size=1, max_size=3))
def test_final_value_matches_simulation(poles, num):
    den = Z([1.0])
    for p in poles:
        den = den * Z([1.0, -p])
    G = ZRational(Z(num), den)
    from scipy.signal import lfilter

    y = lfilter(G.num.coeffs, G.den.coeffs, np.ones(600))
    assert abs(final_value(G, "step") - y[-1]) <= 1e-6 * max(1.0, abs(y[-1]))


def test_tolerances_are_central():
    assert TOL.pg_step_tol == 1e-8
    assert TOL.pg_max_iter == 5000
    assert TOL.fixed_point_max_iter == 10
