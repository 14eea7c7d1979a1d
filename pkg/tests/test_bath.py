import math

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from wplandscape import bath
from wplandscape.bath import (GreenFunction1D, build_xi_matrix, classical_xi, diffusion_coefficient,
                              diffusion_low_t_series, diffusion_zero_t_closed, fluctuation_terms,
                              green, low_t_coefficients, noise_kernel, regime, transient_table)
from wplandscape.errors import UnsupportedError, ValidationError
from wplandscape.model import BathSpec, SystemSpec

RATIOS = [0.1, 1.0, 1.9, 2.0, 2.1, 10.0]


def _d_oracle(gamma, omega, temperature=0.0, dps=25):
    # independent arbitrary-precision quadrature of the cutoff-free D integral
    mp.mp.dps = dps
    g, w = mp.mpf(gamma), mp.mpf(omega)
    if temperature == 0:
        f = lambda v: v / ((w**2 - v**2) ** 2 + g**2 * v**2)
    else:
        b = 1 / mp.mpf(temperature)
        f = lambda v: (v / mp.tanh(b * v / 2) if v > 0 else 2 / b) / ((w**2 - v**2) ** 2 + g**2 * v**2)
    pts = [0, w / 2, w, 2 * w, 10 * (w + g), mp.inf]
    return float(w**2 / mp.pi * mp.quad(f, pts))


# ----------------------------------------------------------------- Green function

@pytest.mark.parametrize("gamma, omega", [(0.5, 1.0), (2.0, 1.0), (3.0, 1.0), (1.0, 0.0)])
def test_green_matches_ode(gamma, omega):
    # oracle: integrate G'' + gamma G' + omega^2 G = 0 from G(0)=0, G'(0)=1
    ts = np.linspace(0, 12, 49)
    sol = solve_ivp(lambda t, y: [y[1], -gamma * y[1] - omega**2 * y[0]], (0, 12), [0.0, 1.0],
                    t_eval=ts, rtol=1e-12, atol=1e-14, method="DOP853")
    gf = GreenFunction1D(gamma, omega)
    np.testing.assert_allclose(gf.value(ts), sol.y[0], atol=1e-10)
    np.testing.assert_allclose(gf.derivative(ts[1:]), sol.y[1][1:], atol=1e-10)


def test_green_boundary_and_values():
    for g, w in [(0.5, 1.0), (2.0, 1.0), (3.0, 1.0), (1.0, 0.0)]:
        gf = GreenFunction1D(g, w)
        assert gf.value(0.0) == 0.0
        assert gf.derivative(1e-12) == pytest.approx(1.0, abs=1e-10)
        assert gf.value(-1.0) == 0.0
    assert green(1.0, 0.0, 60.0) == pytest.approx(1.0, rel=1e-15)
    assert green(2.0, 1.0, 1.0) == pytest.approx(math.exp(-1), rel=1e-14)
    assert green(2.0, 1.0, 1.0) == pytest.approx(0.367879, abs=1e-6)
    with pytest.raises(ValidationError):
        GreenFunction1D(0.0, 1.0)


def test_regimes():
    assert regime(1.0, 1.0) == "underdamped"
    assert regime(2.0, 1.0) == "critical"
    assert regime(2.0 * (1 + 1e-13), 1.0) == "critical"
    assert regime(2.1, 1.0) == "overdamped"
    assert regime(1.0, 0.0) == "free"


# ----------------------------------------------------------------- noise kernel

def test_noise_kernel_zero_lag():
    for gam, lam in [(1.0, 10.0), (0.3, 50.0)]:
        assert noise_kernel(0.0, 0.0, gam, lam) == pytest.approx(gam * lam**2 / (2 * math.pi), rel=1e-12)


def test_noise_kernel_even_and_closed_form():
    lam, g = 20.0, 0.7
    for tau in (0.05, 0.3, 2.0):
        closed = g / math.pi * (lam * math.sin(lam * tau) / tau + (math.cos(lam * tau) - 1) / tau**2)
        assert noise_kernel(tau, 0.0, g, lam) == pytest.approx(closed, rel=1e-9, abs=1e-12)
        assert noise_kernel(-tau, 0.4, g, lam) == noise_kernel(tau, 0.4, g, lam)


def test_noise_kernel_thermal_oracle():
    mp.mp.dps = 20
    lam, g, temp, tau = 10.0, 1.0, 0.5, 0.8
    ref = g / mp.pi * mp.quad(lambda v: v / mp.tanh(v / (2 * temp)) * mp.cos(v * tau) if v > 0
                              else 2 * temp, [0, 1, lam])
    assert noise_kernel(tau, temp, g, lam) == pytest.approx(float(ref), rel=1e-9)
    with pytest.raises(ValidationError):
        noise_kernel(0.1, 0.0, 1.0, 0.0)


# ----------------------------------------------------------------- stationary terms

def test_stationary_members_vs_oracle():
    mp.mp.dps = 20
    g, w, temp, lam = 0.6, 1.3, 0.4, 100.0
    ft = fluctuation_terms(g, w, temp, cutoff=lam)
    nc = lambda v: v / mp.tanh(v / (2 * temp)) if v > 0 else 2 * temp
    den = lambda v: (w**2 - v**2) ** 2 + g**2 * v**2
    pts = [0, w - g, w, w + g, 10, lam]
    q = g / mp.pi * mp.quad(lambda v: nc(v) * (w**2 - v**2) / den(v), pts)
    p = g / mp.pi * mp.quad(lambda v: nc(v) * g * v**2 / den(v), pts)
    assert ft.delta_qxi == pytest.approx(float(q), rel=1e-9)
    assert ft.delta_pxi == pytest.approx(float(p), rel=1e-9)
    assert ft.cutoff == lam and ft.time is None


@pytest.mark.parametrize("gamma, omega, temp", [(0.5, 1.0, 0.0), (3.0, 1.0, 0.2), (1.0, 0.0, 1.0)])
def test_combo_consistent_with_members(gamma, omega, temp):
    ft = fluctuation_terms(gamma, omega, temp)
    members = (gamma * ft.delta_qxi + ft.delta_pxi) / gamma**2
    assert abs(ft.combo - members) <= max(ft.error, 1e-12 * abs(ft.combo)) * 10


def test_high_temperature_limit():
    g, w = 1.0, 1.0
    temp = 100.0 * max(g, w)
    ft = fluctuation_terms(g, w, temp)
    assert ft.combo == pytest.approx(temp / g, rel=1e-2)
    # members: classical part g T plus the cutoff log (g^2/pi) ln(Lambda/T), small once T >> that
    hot = 1e3
    xi = build_xi_matrix(SystemSpec.oscillator(g, w), BathSpec(hot))
    assert abs(xi[0, 1]) < 0.01 * xi[1, 1]
    assert xi[1, 1] == pytest.approx(2 * g * hot, rel=1e-2)
    log_part = xi[1, 1] / 2 - g * hot
    assert log_part == pytest.approx(g**2 / math.pi * math.log(1e3), rel=0.2)


def test_uv_cancellation():
    combos, dps = [], []
    for lam in (1e2, 1e3, 1e4):
        ft = fluctuation_terms(1.0, 1.0, 0.0, cutoff=lam)
        combos.append(ft.combo)
        dps.append(ft.delta_pxi)
    assert (max(combos) - min(combos)) / abs(combos[-1]) < 1e-3
    assert dps[0] < dps[1] < dps[2]
    # large-nu integrand hbar gamma^2 / (pi nu): one decade adds (gamma^2/pi) ln 10
    assert dps[2] - dps[1] == pytest.approx(math.log(10) / math.pi, rel=1e-3)


def test_free_stationary_combo():
    ft = fluctuation_terms(2.0, 0.0, 0.8)
    assert ft.combo == pytest.approx(0.4, rel=1e-14)
    assert (2.0 * ft.delta_qxi + ft.delta_pxi) / 4.0 == pytest.approx(0.4, rel=1e-9)


# ----------------------------------------------------------------- transient terms

def _kernel_t0(tau, g, lam):
    if tau < 1e-6:
        return g / math.pi * (lam**2 / 2 - lam**4 * tau**2 / 8)
    return g / math.pi * (lam * math.sin(lam * tau) / tau + (math.cos(lam * tau) - 1) / tau**2)


@pytest.mark.parametrize("gamma, omega", [(0.5, 1.0), (2.0, 1.0), (3.0, 1.0), (1.0, 0.0)])
@pytest.mark.parametrize("t", [0.7, 3.0])
def test_transient_matches_time_domain(gamma, omega, t):
    # oracle: direct tau quadrature of int_0^t G(tau) K(tau) dtau with the closed-form T=0 kernel
    lam = 20.0
    gf = GreenFunction1D(gamma, omega)
    pts = np.linspace(0, t, int(t * lam) + 2)

    def integral(which):
        return sum(quad(lambda s: gf.value(s, which) * _kernel_t0(s, gamma, lam), a, b,
                        epsabs=1e-13, epsrel=1e-12, limit=200)[0] for a, b in zip(pts[:-1], pts[1:]))

    ft = fluctuation_terms(gamma, omega, 0.0, cutoff=lam, t=t, smooth=False)
    assert ft.delta_qxi == pytest.approx(integral("g"), rel=1e-8, abs=1e-11)
    assert ft.delta_pxi == pytest.approx(integral("dg"), rel=1e-8, abs=1e-11)
    assert ft.combo == pytest.approx((gamma * ft.delta_qxi + ft.delta_pxi) / gamma**2, rel=1e-10, abs=1e-12)


def test_transient_thermal_matches_time_domain():
    g, w, temp, lam, t = 0.8, 1.0, 0.5, 10.0, 1.5
    gf = GreenFunction1D(g, w)
    pts = np.linspace(0, t, 16)
    ref = sum(quad(lambda s: gf.value(s) * noise_kernel(s, temp, g, lam), a, b, epsrel=1e-10,
                   epsabs=1e-12)[0] for a, b in zip(pts[:-1], pts[1:]))
    ft = fluctuation_terms(g, w, temp, cutoff=lam, t=t, smooth=False)
    assert ft.delta_qxi == pytest.approx(ref, rel=1e-7)


def test_transient_starts_at_zero_and_relaxes():
    ft0 = fluctuation_terms(1.0, 1.0, 0.3, t=0.0)
    assert ft0.delta_qxi == ft0.delta_pxi == 0.0
    inf = fluctuation_terms(1.0, 1.0, 0.3)
    late = fluctuation_terms(1.0, 1.0, 0.3, t=80.0)
    assert late.combo == pytest.approx(inf.combo, rel=1e-6)
    with pytest.raises(ValidationError):
        fluctuation_terms(1.0, 1.0, 0.3, t=-1.0)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_free_zero_temperature_tail(gamma):
    t = 100.0 / gamma
    ft = fluctuation_terms(gamma, 0.0, 0.0, t=t)
    assert ft.combo == pytest.approx(1 / (math.pi * gamma * t), rel=0.05)
    # Abel limit of (hbar/pi gamma) int_0^inf sin(nu t) dnu is 1/(pi gamma t)
    assert ft.combo == pytest.approx(1 / (math.pi * gamma * t), rel=1e-5)


@pytest.mark.parametrize("t", [0.2, 1.0, 5.0])
def test_free_thermal_transient_oracle(t):
    temp, g, lam = 0.5, 1.0, 50.0
    # free particle: only the pole term survives; taper is the normalized sinc(nu/Lambda)
    mp.mp.dps = 15
    f = lambda v: (mp.sincpi(v / lam) * mp.sin(v * t) / mp.tanh(v / (2 * temp)) if v > 0 else 0)
    pts = list(np.linspace(0, lam, int(lam * t / math.pi) + 2))
    ref = float(mp.quad(f, pts)) / (math.pi * g)
    ft = fluctuation_terms(g, 0.0, temp, cutoff=lam, t=t)
    assert ft.combo == pytest.approx(ref, rel=1e-8)
    # default cutoff: Abel limit (k_B T/gamma) coth(pi k_B T t/hbar) up to ringing 1/(pi gamma Lambda t^2)
    ft = fluctuation_terms(g, 0.0, temp, t=t)
    abel = temp / g / math.tanh(math.pi * temp * t)
    assert abs(ft.combo - abel) <= 1 / (math.pi * g * ft.cutoff * t**2)


def test_crossover_regimes():
    # t << hbar/(pi k_B T): quantum 1/t tail; t >> t*: classical k_B T / gamma
    temp = 0.01
    t_star = 1 / (math.pi * temp)
    early = fluctuation_terms(1.0, 0.0, temp, t=t_star / 30)
    late = fluctuation_terms(1.0, 0.0, temp, t=t_star * 30)
    assert early.combo == pytest.approx(1 / (math.pi * t_star / 30), rel=0.01)
    assert late.combo == pytest.approx(temp, rel=1e-6)


# ----------------------------------------------------------------- D_omega(T)

@pytest.mark.parametrize("ratio", RATIOS)
def test_closed_form_vs_quadrature(ratio):
    d_quad = diffusion_coefficient(ratio, 1.0, 0.0)
    assert diffusion_zero_t_closed(ratio, 1.0) == pytest.approx(d_quad, rel=1e-8)
    assert d_quad == pytest.approx(_d_oracle(ratio, 1.0), rel=1e-8)


def test_specific_values():
    assert diffusion_coefficient(1.0, 1.0, 0.0) == pytest.approx(2 / (3 * math.sqrt(3)), rel=1e-8)
    assert diffusion_coefficient(2.0, 1.0, 0.0) == pytest.approx(1 / (2 * math.pi), rel=1e-8)
    # oracle value from 25-digit quadrature; frozen
    assert diffusion_coefficient(3.0, 1.0, 0.0) == pytest.approx(0.0913356140071587, rel=1e-8)


def test_branch_continuity():
    lo = diffusion_zero_t_closed(2.0 - 1e-7, 1.0)
    hi = diffusion_zero_t_closed(2.0 + 1e-7, 1.0)
    assert lo == pytest.approx(1 / (2 * math.pi), rel=1e-6)
    assert hi == pytest.approx(1 / (2 * math.pi), rel=1e-6)


@pytest.mark.parametrize("gamma, omega, temp", [(1.0, 1.0, 1.0), (0.2, 2.0, 0.3), (5.0, 1.0, 3.0)])
def test_thermal_vs_oracle(gamma, omega, temp):
    d, info = diffusion_coefficient(gamma, omega, temp, full_output=True)
    assert d == pytest.approx(_d_oracle(gamma, omega, temp), rel=1e-8)
    assert info["error"] < 1e-8 * d
    assert info["zero_t"] + info["thermal"] == d


def test_free_dispatch_and_validation():
    assert diffusion_coefficient(2.0, 0.0, 3.0) == 1.5
    with pytest.raises(ValidationError):
        diffusion_coefficient(0.0, 1.0, 1.0)
    with pytest.raises(ValidationError):
        diffusion_zero_t_closed(1.0, 0.0)


def test_monotone_in_temperature():
    ts = [0.0, 0.05, 0.1, 0.3, 1.0, 3.0]
    ds = [diffusion_coefficient(1.0, 1.0, t) for t in ts]
    assert all(b > a for a, b in zip(ds, ds[1:]))


def test_trap_divergence_near_free_limit():
    g, temp, w = 1.0, 1.0, 1e-2
    assert g * diffusion_coefficient(g, w, temp) / w**2 > 1e4 * temp
    assert diffusion_coefficient(g, 0.0, temp) == temp / g


def test_tolerance_halving_within_error():
    a, ia = diffusion_coefficient(0.7, 1.0, 0.4, rtol=1e-8, full_output=True)
    b, _ = diffusion_coefficient(0.7, 1.0, 0.4, rtol=5e-9, full_output=True)
    assert abs(a - b) <= max(ia["error"], 1e-15 * a)


# ----------------------------------------------------------------- low-T series

def test_low_t_coefficients_match_stated_terms():
    for g, w in [(1.0, 1.0), (0.5, 2.0), (3.0, 1.0)]:
        c = low_t_coefficients(g, w, 2)
        assert c[0] == pytest.approx(math.pi / (3 * w**2), rel=1e-14)
        assert c[1] == pytest.approx(2 * math.pi**3 * (2 * w**2 - g**2) / (15 * w**6), rel=1e-14)


def test_low_t_series_accuracy_and_flags():
    g, w, temp = 0.5, 1.0, 0.02
    s = diffusion_low_t_series(g, w, temp, order=2)
    d = diffusion_coefficient(g, w, temp)
    assert abs(s.value - d) <= 3 * s.next_term
    assert s.valid
    assert not diffusion_low_t_series(g, w, 0.5).valid
    # overdamped: T^4 term negative, reported as is
    assert diffusion_low_t_series(3.0, 1.0, 0.05).terms[2] < 0
    # gamma = omega: the T^6 coefficient vanishes, next estimate uses T^8
    assert diffusion_low_t_series(1.0, 1.0, 0.05).next_term > 0


def test_richardson_thermal_coefficient():
    w, g = 1.0, 1.0
    temps = [0.02, 0.01, 0.005]
    vals = [(diffusion_coefficient(g, w, t) - diffusion_coefficient(g, w, 0.0)) / t**2 * 3 * w**2
            for t in temps]
    # error ~ T^2: eliminate with ratio 4
    r1 = (4 * vals[1] - vals[0]) / 3
    r2 = (4 * vals[2] - vals[1]) / 3
    assert (16 * r2 - r1) / 15 == pytest.approx(math.pi, rel=1e-2)


# ----------------------------------------------------------------- Xi matrices

def test_xi_disabled_and_scaled():
    spec = SystemSpec.oscillator(1.0, 1.0)
    assert np.all(build_xi_matrix(spec, BathSpec(1.0, enabled=False)) == 0)
    assert np.all(build_xi_matrix(spec, BathSpec(1.0, scale=0.0)) == 0)
    full = build_xi_matrix(spec, BathSpec(1.0))
    np.testing.assert_allclose(build_xi_matrix(spec, BathSpec(1.0, scale=0.3)), 0.3 * full, rtol=1e-15)
    ft = fluctuation_terms(1.0, 1.0, 1.0)
    np.testing.assert_allclose(full, ft.xi_matrix(), rtol=1e-15)
    assert np.array_equal(full, full.T)


def test_classical_xi():
    np.testing.assert_array_equal(classical_xi(SystemSpec.oscillator(0.5, 0.0), 2.0), [[0, 0], [0, 2.0]])


def test_xi_normal_mode_assembly():
    g = 0.7
    spec = SystemSpec([[1.0, -1.0], [-1.0, 1.0]], g * np.eye(2))
    bs = BathSpec(0.5, cutoff=200.0)
    xi = build_xi_matrix(spec, bs)
    # oracle: orthogonal normal modes (1,1)/sqrt2 at omega^2=0 and (1,-1)/sqrt2 at omega^2=2
    v = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    modes = [fluctuation_terms(g, 0.0, 0.5, cutoff=200.0), fluctuation_terms(g, math.sqrt(2), 0.5, cutoff=200.0)]
    qx = v @ np.diag([m.delta_qxi for m in modes]) @ v.T
    px = v @ np.diag([m.delta_pxi for m in modes]) @ v.T
    np.testing.assert_allclose(xi[:2, 2:], qx, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(xi[2:, 2:], 2 * px, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(xi[:2, :2], 0)
    assert np.array_equal(xi, xi.T)


def test_xi_rejects_noncommuting():
    spec = SystemSpec([[1.0, -1.0], [-1.0, 1.0]], np.diag([1.0, 2.0]))
    with pytest.raises(UnsupportedError):
        build_xi_matrix(spec, BathSpec(1.0))


def test_transient_table_symmetric_and_converging():
    spec = SystemSpec.oscillator(1.0, 1.0)
    times, xis = transient_table(spec, BathSpec(0.5), 200.0, per_decade=8)
    assert np.all(np.diff(times) > 0)
    assert np.all(xis == np.swapaxes(xis, 1, 2))
    # stops early once successive samples agree
    assert times[-1] < 200.0
    np.testing.assert_allclose(xis[-1], build_xi_matrix(spec, BathSpec(0.5)), rtol=1e-8)


def test_default_cutoff_reported():
    ft = fluctuation_terms(1.0, 2.0, 5.0)
    assert ft.cutoff == 5e3
    assert bath.default_cutoff(0.0, 1.0, 0.0) == 1e3
