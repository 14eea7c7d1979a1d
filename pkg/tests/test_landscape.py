import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from wplandscape import bath
from wplandscape.dynamics import propagate_grid
from wplandscape.errors import NotApplicableError, ValidationError
from wplandscape.landscape import (LandscapeDecomposition, cho_expression, cho_hessian, cho_mobility,
                                   decompose_degenerate, decompose_general, descent_violation,
                                   fp_mobility, landscape_cho, landscape_fp, landscape_grid,
                                   landscape_qbm, minimum)
from wplandscape.model import (BathSpec, CovarianceState, SystemSpec, build_drift, reduce_1d,
                               to_reduced, vec, vectorize_drift)
from wplandscape.zeromodes import make_gaussian_state, zero_modes_for

from instances import random_gaussian_like, random_system


def h1d(gamma, omega):
    return reduce_1d(vectorize_drift(build_drift(SystemSpec.oscillator(gamma, omega))))[0]


def zeta1d(dqxi, dpxi):
    # reduced image of vec([[0, dqxi], [dqxi, 2 dpxi]])
    return np.array([0.0, 2 * dpxi, dqxi])


def test_general_bowl():
    dec = decompose_general(-np.eye(3))
    np.testing.assert_allclose(dec.l_mat, np.eye(3) / 2, atol=1e-15)
    np.testing.assert_allclose(dec.m_mat, 2 * np.eye(3), atol=1e-14)
    assert dec.offset == 0.0


def test_general_rejects_non_hurwitz():
    with pytest.raises(NotApplicableError):
        decompose_general(h1d(1.0, 0.0))


def test_general_descent_1d():
    dec = decompose_general(h1d(1.0, 1.0))
    traj = propagate_grid(make_gaussian_state([1.4]), build_drift(SystemSpec.oscillator(1.0, 1.0)),
                          np.linspace(0, 30, 601))
    vals = dec.values(np.array([to_reduced(s) for s in traj.sigmas]))
    assert np.diff(vals).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_general_reconstruction_random(n, seed):
    rng = np.random.default_rng(seed)
    spec = random_system(rng, n, 0)
    hs = vectorize_drift(build_drift(spec))
    zeta = vec(random_gaussian_like(rng, n))
    dec = decompose_general(hs, zeta)
    rh, rz = dec.residuals(hs, zeta)
    assert rh < 1e-9 and rz < 1e-9
    assert dec.m_min_eig() > 0


def test_cho_matrix_values():
    expected = 4 / 53 * np.array([[1, 0, -2], [0, 5, 2], [2, -2, 0.5]])
    np.testing.assert_allclose(cho_mobility(1.0, 1.0), expected, rtol=1e-15)


def test_cho_symbolic_reconstruction():
    # oracle: exact symbolic product -M L against the reduced drift
    g, w = sp.symbols("gamma omega", positive=True)
    pre = 4 / (g * (5 * g**2 + 48 * w**2))
    m = pre * sp.Matrix([[1, 0, -2 * w**2 / g], [0, 5 * w**4, 2 * w**4 / g],
                         [2 * w**2 / g, -2 * w**4 / g, w**2 / 2]])
    q, p, c = sp.symbols("dq dp dqp")
    k = 5 * g**2 + 48 * w**2
    lexpr = (sp.Rational(5, 2) * g**2 * w**2 * (q + g / (2 * w**2) * c - p / (5 * w**2)) ** 2
             + g**2 * k / (8 * w**2) * c**2 + g**2 * k / (20 * w**4) * p**2)
    hess = sp.hessian(lexpr, (q, p, c))
    h = sp.Matrix([[0, 0, 2], [0, -2 * g, -2 * w**2], [-w**2, 1, -g]])
    assert sp.simplify(-m * hess - h) == sp.zeros(3, 3)


@pytest.mark.parametrize("gamma, omega", [(1.0, 1.0), (0.3, 2.0), (4.0, 0.5)])
def test_cho_numeric_reconstruction(gamma, omega):
    dec = landscape_cho(gamma, omega)
    assert np.abs(-dec.m_mat @ dec.l_mat - h1d(gamma, omega)).max() < 1e-12 * max(1, omega**2, gamma)
    assert dec.m_min_eig() > 0
    rng = np.random.default_rng(10)
    for s in rng.normal(size=(5, 3)):
        assert dec.value(s) == pytest.approx(cho_expression(gamma, omega, *s), rel=1e-12, abs=1e-14)


def test_cho_minimum_and_values():
    dec = landscape_cho(1.0, 1.0)
    np.testing.assert_allclose(minimum(dec), 0.0, atol=1e-15)
    assert dec.value(np.zeros(3)) == 0.0
    assert dec.value([1.0, 0.0, 0.0]) == pytest.approx(2.5, rel=1e-15)
    with pytest.raises(ValidationError):
        landscape_cho(1.0, 0.0)
    np.testing.assert_allclose(cho_hessian(1.0, 1.0), dec.l_mat)


def test_fp_forms():
    dec = landscape_fp(1.0)
    np.testing.assert_array_equal(dec.m_mat, [[2, 0, -2], [0, 2, 0], [0, -1, 1]])
    np.testing.assert_array_equal(dec.l_mat, np.diag([0.0, 1.0, 1.0]))
    for g in (0.5, 1.0, 3.0):
        d = landscape_fp(g)
        assert np.abs(-d.m_mat @ d.l_mat - h1d(g, 0.0)).max() < 1e-12
        np.testing.assert_allclose(fp_mobility(g), d.m_mat)
    assert dec.value([5.0, 0.0, 0.0]) == 0.0
    rng = np.random.default_rng(11)
    for s, c in zip(rng.normal(size=(5, 3)), rng.normal(size=5) * 10):
        assert dec.value(s + c * np.array([1.0, 0, 0])) == pytest.approx(dec.value(s), abs=1e-13)
    with pytest.raises(ValidationError):
        landscape_fp(0.0)


def test_non_uniqueness_both_valid():
    h = h1d(1.0, 1.0)
    a, b = decompose_general(h), landscape_cho(1.0, 1.0)
    assert not np.allclose(a.l_mat, b.l_mat)
    traj = propagate_grid(make_gaussian_state([0.6]), build_drift(SystemSpec.oscillator(1.0, 1.0)),
                          np.linspace(0, 20, 401))
    pts = np.array([to_reduced(s) for s in traj.sigmas])
    for dec in (a, b):
        assert dec.residuals(h)[0] < 1e-12
        assert descent_violation(dec, pts) <= 1e-12


def test_qbm_confined_shift():
    g, w = 1.0, 1.0
    terms = bath.fluctuation_terms(g, w, 1.0)
    dec = landscape_qbm(g, w, terms.delta_qxi, terms.delta_pxi)
    star = minimum(dec)
    assert star[0] == pytest.approx((g * terms.delta_qxi + terms.delta_pxi) / (g * w**2), rel=1e-14)
    assert star[0] == pytest.approx(g * bath.diffusion_coefficient(g, w, 1.0) / w**2, rel=1e-6)
    assert star[1] == pytest.approx(terms.delta_pxi / g, rel=1e-14)
    zeta = zeta1d(terms.delta_qxi, terms.delta_pxi)
    h = h1d(g, w)
    rh, rz = dec.residuals(h, zeta)
    assert rh < 1e-12 and rz < 1e-12
    # stationarity at the fixed point of the flow
    fixed = np.linalg.solve(h, -zeta)
    assert np.linalg.norm(dec.gradient(fixed)) <= 1e-9


def test_qbm_reduces_without_fluctuation():
    np.testing.assert_array_equal(landscape_qbm(0.7, 1.2, 0, 0).f_vec, 0)
    np.testing.assert_array_equal(landscape_qbm(0.7, 1.2, 0, 0).l_mat, landscape_cho(0.7, 1.2).l_mat)
    free = landscape_qbm(0.7, 0.0, 0, 0)
    np.testing.assert_array_equal(free.m_mat, landscape_fp(0.7).m_mat)
    np.testing.assert_array_equal(free.f_vec, 0)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_qbm_free_tilt(gamma):
    qx, px = 0.3, 0.8
    dec = landscape_qbm(gamma, 0.0, qx, px)
    d0 = (gamma * qx + px) / gamma**2
    rng = np.random.default_rng(12)
    for s in rng.normal(size=(5, 3)) * 4:
        assert dec.gradient(s)[0] == pytest.approx(-gamma**3 * d0, rel=1e-14)
    rh, rz = dec.residuals(h1d(gamma, 0.0), zeta1d(qx, px))
    assert rh < 1e-12 and rz < 1e-12
    assert minimum(dec) is None


def test_grid_conditional_minimizer():
    dec = landscape_cho(1.0, 1.0)
    grid = landscape_grid(dec, np.linspace(-1, 1, 5), np.linspace(-1, 1, 3))
    assert grid.values.shape == (3, 5)
    # oracle: brute-force scalar minimization over dqp at (dq, dp) = (1, 0)
    res = minimize_scalar(lambda c: dec.value([1.0, 0.0, c]), bracket=(-5, 5), tol=1e-12)
    assert grid.values[1, 4] == pytest.approx(res.fun, rel=1e-10)
    assert grid.values[1, 4] < dec.value([1.0, 0.0, 0.0])
    assert grid.unbounded_axes == ()


def test_grid_fp_valley_and_files(tmp_path):
    grid = landscape_grid(landscape_fp(1.0), np.linspace(-2, 2, 9), np.linspace(-2, 2, 5),
                          {"mode": "fp"})
    row = grid.values[list(grid.dp).index(0.0)]
    assert np.all(row == 0.0)
    grid.to_csv(tmp_path / "g.csv")
    grid.write_metadata(tmp_path / "g.json")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "dq,dp,L" and len(lines) == 1 + 45
    meta = json.loads((tmp_path / "g.json").read_text())
    assert meta["mode"] == "fp" and meta["unbounded_axes"] == []
    assert "fixed_coordinate_rule" in meta


def test_grid_flags_tilted_valley():
    grid = landscape_grid(landscape_qbm(1.0, 0.0, 0.5, 0.5), np.linspace(-2, 2, 5), np.linspace(-2, 2, 5))
    assert grid.unbounded_axes == ("dq",)
    with pytest.raises(ValidationError):
        landscape_grid(landscape_fp(1.0), [0.0, np.inf], [0.0, 1.0])


def test_decomposition_validation():
    with pytest.raises(ValidationError):
        LandscapeDecomposition(-np.eye(2), np.eye(2), np.zeros(2))
    with pytest.raises(ValidationError):
        LandscapeDecomposition(np.eye(2), [[1.0, 0.5], [0.0, 1.0]], np.zeros(2))
    with pytest.raises(ValidationError):
        LandscapeDecomposition(np.eye(2), np.eye(2), np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_degenerate_decomposition(n, d, seed):
    d = min(d, n)
    rng = np.random.default_rng(seed)
    spec = random_system(rng, n, d)
    hs = vectorize_drift(build_drift(spec))
    basis = zero_modes_for(spec)
    dec = decompose_degenerate(hs, basis)
    assert dec.residuals(hs)[0] < 1e-9
    assert dec.m_min_eig() > 0
    # flat directions of the landscape are the right zero modes
    assert np.linalg.norm(dec.l_mat @ basis.right_modes) <= 1e-10 * np.linalg.norm(dec.l_mat)
    s0 = CovarianceState(random_gaussian_like(rng, n))
    traj = propagate_grid(s0, build_drift(spec), np.concatenate([[0], np.geomspace(1e-3, 50, 200)]))
    assert descent_violation(dec, traj.vectors) <= 1e-9 * max(1.0, abs(dec.value(s0.sigma)))


def test_degenerate_falls_back_to_general():
    spec = SystemSpec.oscillator(1.0, 1.0)
    hs = vectorize_drift(build_drift(spec))
    dec = decompose_degenerate(hs, None)
    assert dec.label == "lyapunov"
