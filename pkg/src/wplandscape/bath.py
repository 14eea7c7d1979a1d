"""Ohmic-bath fluctuation terms for the covariance dynamics.

All frequency integrals run over ``nu`` with the symmetrized force spectrum
``(hbar gamma / pi) nu coth(beta hbar nu / 2)`` cut off sharply at ``Lambda``.

Transient quantities ``Delta_qxi(t)``, ``Delta_pxi(t)`` are split into the
stationary frequency-domain limit plus a transient remainder.  The inner time
integral ``int_0^t f(tau) e^{i nu tau} dtau`` is done in closed form for the
Green-function components ``f(tau) = (a + b tau) e^{s tau}``; the outer
``nu`` integral uses QUADPACK's Fourier-weighted rule.

With a sharp cutoff the transient terms ring as ``cos(Lambda t) / t``.  By
default (``smooth=True``) they are averaged over one cutoff period, which is
the factor ``sinc(nu / Lambda)`` on the oscillatory remainder.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import QuadratureError, UnsupportedError, ValidationError
from .model import BathSpec, SystemSpec

CRITICAL_RTOL = 1e-12
QUAD_LIMIT = 500
LOW_T_VALIDITY = 0.2  # k_B T / (hbar omega)


# ----------------------------------------------------------------- helpers

def _x_coth_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x**2 / 3.0 - x**4 / 45.0, xs / np.tanh(xs))


def nu_coth(nu, temperature, hbar=1.0, k_boltzmann=1.0):
    """``nu coth(hbar nu / 2 k_B T)``, regular at ``nu = 0``; equals ``nu`` at ``T = 0``."""
    nu = np.asarray(nu, dtype=float)
    if temperature == 0:
        return np.abs(nu)
    beta_hbar = hbar / (k_boltzmann * temperature)
    return (2.0 / beta_hbar) * _x_coth_x(0.5 * beta_hbar * nu)


def default_cutoff(omega, gamma, temperature, hbar=1.0, k_boltzmann=1.0):
    return 1e3 * max(omega, gamma, k_boltzmann * temperature / hbar)


_EPSREL_FLOOR = 51 * np.finfo(float).eps


def _quad(f, a, b, what, epsrel=1e-11, epsabs=0.0, **kw):
    epsrel = max(epsrel, _EPSREL_FLOOR)  # quadpack rejects anything tighter
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info, *msg = integrate.quad(f, a, b, epsrel=epsrel, epsabs=epsabs,
                                              limit=QUAD_LIMIT, full_output=1, **kw)
    if info.get("ier", 0) not in (0,) and not (abs(err) <= max(1e-7 * abs(val), 1e-13)):
        raise QuadratureError(f"{what} did not converge", val, err)
    return val, err


def _panels(lo, hi, marks):
    """Breakpoints inside ``(lo, hi)``, always including geometric steps to ``hi``."""
    pts = {lo, hi}
    for m in marks:
        if lo < m < hi:
            pts.add(m)
    if np.isfinite(hi) and hi > 0:
        start = max(min(p for p in pts if p > 0), hi * 1e-6) if any(p > 0 for p in pts) else hi
        for x in np.geomspace(start, hi, 8):
            pts.add(float(x))
    return sorted(pts)


def _panel_quad(f, lo, hi, marks, what, epsrel=1e-11, epsabs=0.0):
    pts = _panels(lo, hi, marks)
    tot, err = 0.0, 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        v, e = _quad(f, a, b, what, epsrel=epsrel, epsabs=epsabs)
        tot += v
        err += e
    return tot, err


def _resonance_marks(gamma, omega, temperature, hbar, k_boltzmann):
    marks = [gamma, 2 * gamma]
    if omega > 0:
        marks += [omega, omega + gamma / 2, max(omega - gamma / 2, 0.0)]
    if temperature > 0:
        kt = k_boltzmann * temperature / hbar
        marks += [kt, 10 * kt, 40 * kt]
    return [m for m in marks if m > 0]


# ----------------------------------------------------------------- Green function

def regime(gamma, omega):
    if omega == 0:
        return "free"
    if abs(gamma - 2 * omega) <= CRITICAL_RTOL * gamma:
        return "critical"
    return "underdamped" if gamma < 2 * omega else "overdamped"


@dataclass(frozen=True)
class GreenFunction1D:
    """Retarded solution of ``G'' + gamma G' + omega^2 G = delta(t)``."""

    gamma: float
    omega: float

    def __post_init__(self):
        if not self.gamma > 0 or self.omega < 0:
            raise ValidationError("Green function needs gamma > 0 and omega >= 0")

    @property
    def regime(self):
        return regime(self.gamma, self.omega)

    def roots(self):
        disc = complex(self.gamma**2 - 4 * self.omega**2)
        r = np.sqrt(disc)
        return (-self.gamma + r) / 2, (-self.gamma - r) / 2

    def components(self, which):
        """``[(a, b, s), ...]`` with ``f(tau) = sum (a + b tau) e^{s tau}``.

        ``which`` is ``"g"`` (G), ``"dg"`` (dG/dt) or ``"combo"`` ((gamma G + dG/dt) / gamma^2).
        """
        g = self.gamma
        if self.regime == "critical":
            s = -g / 2
            comps = {"g": [(0.0, 1.0, s)], "dg": [(1.0, s, s)],
                     "combo": [(1.0 / g**2, (g + s) / g**2, s)]}
            return [(complex(a), complex(b), complex(s)) for a, b, s in comps[which]]
        s1, s2 = self.roots()
        if self.regime == "free":
            s1, s2 = 0j, complex(-g)
        ds = s1 - s2
        coef = {"g": (1 / ds, -1 / ds), "dg": (s1 / ds, -s2 / ds)}
        coef["combo"] = tuple((g * cg + cd) / g**2 for cg, cd in zip(coef["g"], coef["dg"]))
        return [(complex(coef[which][0]), 0j, s1), (complex(coef[which][1]), 0j, s2)]

    def __call__(self, t):
        return self.value(t)

    def value(self, t, which="g"):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t, dtype=complex)
        tp = np.where(t > 0, t, 0.0)
        for a, b, s in self.components(which):
            out = out + (a + b * tp) * np.exp(s * tp)
        out = np.where(t > 0, out.real, 0.0)
        return out if out.ndim else float(out)

    def derivative(self, t):
        return self.value(t, "dg")


def green(gamma, omega, t):
    """``G(t)``; zero for ``t <= 0`` by retardation."""
    return GreenFunction1D(gamma, omega).value(t)


# ----------------------------------------------------------------- noise correlator

def noise_kernel(tau, temperature, gamma, cutoff, hbar=1.0, k_boltzmann=1.0, epsrel=1e-10):
    """Symmetrized force correlator ``(hbar gamma/pi) int_0^cutoff nu coth(.) cos(nu tau) dnu``."""
    if not cutoff > 0:
        raise ValidationError("cutoff must be positive")
    tau = abs(float(tau))
    f = lambda nu: nu_coth(nu, temperature, hbar, k_boltzmann)
    pre = hbar * gamma / math.pi
    if tau == 0:
        val, err = _panel_quad(f, 0.0, cutoff, [], "noise kernel", epsrel=epsrel)
    else:
        val, err = _quad(f, 0.0, cutoff, "noise kernel", epsrel=epsrel,
                         weight="cos", wvar=tau)
    return pre * val


# ----------------------------------------------------------------- stationary terms

@dataclass(frozen=True)
class FluctuationTerms:
    delta_qxi: float
    delta_pxi: float
    combo: float  # (gamma Delta_qxi + Delta_pxi) / gamma^2
    cutoff: float
    error: float
    time: float | None = None  # None -> t -> infinity

    def xi_matrix(self):
        return np.array([[0.0, self.delta_qxi], [self.delta_qxi, 2.0 * self.delta_pxi]])


def _den(nu, gamma, omega):
    return (omega**2 - nu**2) ** 2 + gamma**2 * nu**2


def _stationary(gamma, omega, temperature, cutoff, hbar, k_boltzmann):
    pre = hbar * gamma / math.pi
    marks = _resonance_marks(gamma, omega, temperature, hbar, k_boltzmann)
    nc = lambda nu: nu_coth(nu, temperature, hbar, k_boltzmann)
    q, eq = _panel_quad(lambda nu: nc(nu) * (omega**2 - nu**2) / _den(nu, gamma, omega),
                        0.0, cutoff, marks, "stationary Delta_qxi")
    p, ep = _panel_quad(lambda nu: nc(nu) * gamma * nu**2 / _den(nu, gamma, omega),
                        0.0, cutoff, marks, "stationary Delta_pxi")
    dq, dp = pre * q, pre * p
    err = pre * (eq + ep)
    if omega == 0:
        # pole of G at s = 0: its sin(nu t)/nu term tends to k_B T (Abel limit)
        d0 = k_boltzmann * temperature / gamma
        return dq + gamma * d0, dp, d0, err
    c, ec = _panel_quad(lambda nu: nc(nu) / _den(nu, gamma, omega), 0.0, cutoff, marks,
                        "stationary combination")
    combo = hbar * omega**2 / math.pi * c
    return dq, dp, combo, err + hbar * omega**2 / math.pi * ec


# ----------------------------------------------------------------- transient terms

def _fourier(f, lo, hi, t, kind, what):
    if hi <= lo:
        return 0.0, 0.0
    if t * (hi - lo) < 20:
        trig = np.cos if kind == "cos" else np.sin
        return _quad(lambda nu: f(nu) * trig(nu * t), lo, hi, what, epsrel=1e-10, epsabs=1e-15)
    return _quad(f, lo, hi, what, epsrel=1e-10, epsabs=1e-15, weight=kind, wvar=t)


def _pole_term(t, temperature, cutoff, hbar, k_boltzmann, smooth):
    """``int_0^cutoff coth(hbar nu / 2kT) [sinc(nu/cutoff)] sin(nu t) dnu``."""
    taper = (lambda nu: np.sinc(nu / cutoff)) if smooth else (lambda nu: 1.0)
    if temperature == 0:
        f = taper
        near = lambda nu: np.sin(nu * t) * taper(nu)
    else:
        bh = hbar / (k_boltzmann * temperature)
        f = lambda nu: taper(nu) / np.tanh(0.5 * bh * nu)
        # coth(x) sin(nu t) = (x coth x) (2/bh) t sinc(nu t / pi), regular at nu = 0
        near = lambda nu: (2.0 / bh) * _x_coth_x(0.5 * bh * nu) * t * np.sinc(nu * t / math.pi) * taper(nu)
    split = min(cutoff, 2 * math.pi / t)
    v1, e1 = _quad(near, 0.0, split, "pole term", epsrel=1e-10, epsabs=1e-15)
    v2, e2 = _fourier(f, split, cutoff, t, "sin", "pole term")
    return v1 + v2, e1 + e2


def _transient(green_fn, which, t, temperature, cutoff, hbar, k_boltzmann, smooth):
    """Transient remainder ``Re int w(nu) sum e^{zt}[a/z + b(t/z - 1/z^2)] e^{...}``, w = nu coth."""
    total, err = 0.0, 0.0
    for a, b, s in green_fn.components(which):
        if abs(s) == 0:
            v, e = _pole_term(t, temperature, cutoff, hbar, k_boltzmann, smooth)
            total += a.real * v
            err += abs(a) * e
            continue
        env = abs(np.exp(s * t)) * (abs(a) + abs(b) * (1 + t))
        if env < 1e-18 * max(abs(a), abs(b), 1e-300):
            continue

        def q(nu, a=a, b=b, s=s):
            z = s + 1j * nu
            val = np.exp(s * t) * (a / z + b * (t / z - 1 / z**2))
            w = nu_coth(nu, temperature, hbar, k_boltzmann)
            if smooth:
                w = w * np.sinc(nu / cutoff)
            return w * val

        # Re[q e^{i nu t}] = Re q cos - Im q sin
        vc, ec = _fourier(lambda nu: q(nu).real, 0.0, cutoff, t, "cos", "transient")
        vs, es = _fourier(lambda nu: q(nu).imag, 0.0, cutoff, t, "sin", "transient")
        total += vc - vs
        err += ec + es
    return total, err


def fluctuation_terms(gamma, omega, temperature, cutoff=None, t=None, hbar=1.0,
                      k_boltzmann=1.0, smooth=True) -> FluctuationTerms:
    """``Delta_qxi``, ``Delta_pxi`` and their finite combination.

    ``t=None`` gives the ``t -> infinity`` limit.  ``cutoff=None`` uses
    ``1e3 * max(omega, gamma, k_B T / hbar)``.
    """
    if not gamma > 0 or omega < 0 or temperature < 0:
        raise ValidationError("need gamma > 0, omega >= 0, temperature >= 0")
    if cutoff is None:
        cutoff = default_cutoff(omega, gamma, temperature, hbar, k_boltzmann)
    dq, dp, combo, err = _stationary(gamma, omega, temperature, cutoff, hbar, k_boltzmann)
    if t is None:
        return FluctuationTerms(dq, dp, combo, cutoff, err, None)
    if t < 0:
        raise ValidationError("time must be nonnegative")
    if t == 0:
        return FluctuationTerms(0.0, 0.0, 0.0, cutoff, 0.0, 0.0)
    gf = GreenFunction1D(gamma, omega)
    pre = hbar * gamma / math.pi
    args = (t, temperature, cutoff, hbar, k_boltzmann, smooth)
    if omega == 0:
        dq -= k_boltzmann * temperature  # pole term is carried by the transient
        combo = 0.0
    tq, e1 = _transient(gf, "g", *args)
    tp, e2 = _transient(gf, "dg", *args)
    tc, e3 = _transient(gf, "combo", *args)
    return FluctuationTerms(dq + pre * tq, dp + pre * tp, combo + pre * tc, cutoff,
                            err + pre * (e1 + e2 + e3), float(t))


# ----------------------------------------------------------------- diffusion coefficient

def diffusion_zero_t_closed(gamma, omega, hbar=1.0):
    """Zero-temperature ``D_omega(0)`` in closed form for each damping regime."""
    if not (gamma > 0 and omega > 0):
        raise ValidationError("closed form needs gamma > 0 and omega > 0")
    pre = hbar * omega**2 / math.pi
    reg = regime(gamma, omega)
    if reg == "critical":
        return pre / (2 * omega**2)
    if reg == "underdamped":
        r = math.sqrt(4 * omega**2 - gamma**2)
        return pre * 2 / (gamma * r) * math.atan(r / gamma)
    r = math.sqrt(gamma**2 - 4 * omega**2)
    return pre / (gamma * r) * math.log((gamma + r) / (gamma - r))


def _d_integral(gamma, omega, temperature, hbar, k_boltzmann, rtol):
    marks = _resonance_marks(gamma, omega, temperature, hbar, k_boltzmann)
    top = 100 * max(marks + [omega])
    zero, e0 = _panel_quad(lambda nu: nu / _den(nu, gamma, omega), 0.0, top, marks,
                           "D_omega(0)", epsrel=rtol * 1e-2)
    tail, et = _quad(lambda nu: nu / _den(nu, gamma, omega), top, np.inf, "D_omega tail",
                     epsrel=rtol * 1e-2)
    zero += tail
    e0 += et
    thermal, eth = 0.0, 0.0
    if temperature > 0:
        bh = hbar / (k_boltzmann * temperature)
        # nu * 2 n_B(nu), regular at 0
        occ = lambda nu: 2.0 / bh * np.where(nu * bh < 1e-12, 1.0, (nu * bh) / np.expm1(np.minimum(nu * bh, 700.0)))
        hi = max(top, 60.0 / bh)
        thermal, eth = _panel_quad(lambda nu: occ(nu) / _den(nu, gamma, omega), 0.0, hi, marks,
                                   "D_omega thermal", epsrel=rtol * 1e-2)
        if 60.0 / bh < top:
            t2, e2 = _quad(lambda nu: occ(nu) / _den(nu, gamma, omega), hi, np.inf,
                           "D_omega thermal tail", epsrel=rtol * 1e-2)
            thermal += t2
            eth += e2
    pre = hbar * omega**2 / math.pi
    return pre * zero, pre * thermal, pre * (e0 + eth)


def diffusion_coefficient(gamma, omega, temperature, hbar=1.0, k_boltzmann=1.0, rtol=1e-8,
                          full_output=False):
    """``D_omega(T) = (hbar omega^2/pi) int_0^inf nu coth(beta hbar nu/2) / den dnu``.

    ``omega = 0`` returns ``k_B T / gamma``.  With ``full_output`` a dict with
    the zero-temperature and thermal parts, the error estimate and the damping
    regime is returned as a second value.
    """
    if not gamma > 0 or omega < 0 or temperature < 0:
        raise ValidationError("need gamma > 0, omega >= 0, temperature >= 0")
    if omega == 0:
        val = k_boltzmann * temperature / gamma
        info = {"zero_t": 0.0, "thermal": val, "error": 0.0, "regime": "free"}
    else:
        zero, thermal, err = _d_integral(gamma, omega, temperature, hbar, k_boltzmann, rtol)
        val = zero + thermal
        info = {"zero_t": zero, "thermal": thermal, "error": err, "regime": regime(gamma, omega)}
    return (val, info) if full_output else val


@dataclass(frozen=True)
class LowTSeries:
    value: float
    terms: tuple
    next_term: float
    valid: bool


def low_t_coefficients(gamma, omega, order, hbar=1.0):
    """Coefficients ``c_k`` with ``D(T) - D(0) = sum_k c_k (k_B T)^(2k)``, ``k = 1..order``.

    From ``1/den = omega^-4 sum_j e_j nu^(2j)`` and Bose moments
    ``int nu^(2j+1) 2 n_B = 2 (2j+1)! zeta(2j+2) (k_B T/hbar)^(2j+2)``.
    """
    a = (gamma**2 - 2 * omega**2) / omega**4
    b = 1.0 / omega**4
    e = [1.0, -a]
    while len(e) < order:
        e.append(-a * e[-1] - b * e[-2])
    pre = hbar * omega**2 / math.pi / omega**4
    return [pre * e[k - 1] * 2 * math.factorial(2 * k - 1) * special.zeta(2 * k) / hbar ** (2 * k)
            for k in range(1, order + 1)]


def diffusion_low_t_series(gamma, omega, temperature, order=2, hbar=1.0, k_boltzmann=1.0):
    """Low-temperature expansion of ``D_omega(T)`` truncated after ``order`` thermal terms."""
    if not (gamma > 0 and omega > 0) or temperature < 0 or order < 0:
        raise ValidationError("low-T series needs gamma, omega > 0, T >= 0, order >= 0")
    kt = k_boltzmann * temperature
    coeffs = low_t_coefficients(gamma, omega, order + 4, hbar)
    terms = [diffusion_zero_t_closed(gamma, omega, hbar)]
    terms += [c * kt ** (2 * (k + 1)) for k, c in enumerate(coeffs[:order])]
    # first omitted term that does not vanish identically (e.g. gamma = omega skips T^6)
    omitted = [(k, c) for k, c in enumerate(coeffs[order:], start=order) if c != 0]
    nxt = abs(omitted[0][1] * kt ** (2 * (omitted[0][0] + 1))) if omitted else 0.0
    valid = kt <= LOW_T_VALIDITY * hbar * omega
    return LowTSeries(float(sum(terms)), tuple(terms), float(nxt), bool(valid))


# ----------------------------------------------------------------- Xi matrix

def _normal_modes(spec: SystemSpec):
    if spec.n == 1:
        return np.eye(1), np.array([spec.omega_mat[0, 0]]), np.array([spec.gamma_mat[0, 0]])
    if not spec.commuting():
        raise UnsupportedError("bath terms for N > 1 require commuting Omega and Gamma")
    mix = spec.omega_mat + math.pi * spec.gamma_mat / max(np.linalg.norm(spec.gamma_mat, 2), 1e-300) \
        * max(np.linalg.norm(spec.omega_mat, 2), 1.0)
    _, v = np.linalg.eigh(mix)
    om = v.T @ spec.omega_mat @ v
    ga = v.T @ spec.gamma_mat @ v
    off = max(np.abs(om - np.diag(np.diag(om))).max(), np.abs(ga - np.diag(np.diag(ga))).max())
    if off > 1e-9 * max(np.linalg.norm(spec.omega_mat, 2), np.linalg.norm(spec.gamma_mat, 2)):
        raise UnsupportedError("could not diagonalize Omega and Gamma simultaneously")
    return v, np.clip(np.diag(om), 0.0, None), np.diag(ga)


def system_cutoff(spec: SystemSpec, bath: BathSpec):
    if bath.cutoff is not None:
        return bath.cutoff
    om = math.sqrt(max(np.linalg.eigvalsh(spec.omega_mat)[-1], 0.0))
    ga = np.linalg.eigvalsh(spec.gamma_mat)[-1]
    return default_cutoff(om, ga, bath.temperature, spec.hbar, spec.k_boltzmann)


def mode_terms(spec: SystemSpec, bath: BathSpec, t=None, smooth=True):
    """Per-normal-mode ``FluctuationTerms`` with the rotation ``V`` (columns = modes)."""
    v, om2, ga = _normal_modes(spec)
    cutoff = system_cutoff(spec, bath)
    omk = np.sqrt(om2)
    # kernel modes are exact zeros
    omk[om2 <= 1e-10 * max(om2.max(), 1e-300)] = 0.0
    terms = [fluctuation_terms(g, w, bath.temperature, cutoff, t, spec.hbar, spec.k_boltzmann, smooth)
             for w, g in zip(omk, ga)]
    return v, terms


def build_xi_matrix(spec: SystemSpec, bath: BathSpec, t=None, smooth=True):
    """``Xi`` (2N x 2N, symmetric) at time ``t`` or in the stationary limit, scaled by ``bath.scale``."""
    n = spec.n
    if not bath.active:
        return np.zeros((2 * n, 2 * n))
    v, terms = mode_terms(spec, bath, t, smooth)
    qx = np.array([f.delta_qxi for f in terms])
    px = np.array([f.delta_pxi for f in terms])
    xi = np.zeros((2 * n, 2 * n))
    xi[:n, n:] = v @ np.diag(qx) @ v.T
    xi[n:, :n] = xi[:n, n:].T
    xi[n:, n:] = v @ np.diag(2 * px) @ v.T
    xi = bath.scale * 0.5 * (xi + xi.T)
    return xi


def classical_xi(spec: SystemSpec, temperature, scale=1.0):
    """High-temperature white-noise limit: ``Delta_qxi = 0``, ``Delta_pxi = Gamma k_B T``."""
    n = spec.n
    xi = np.zeros((2 * n, 2 * n))
    xi[n:, n:] = 2 * spec.gamma_mat * spec.k_boltzmann * temperature
    return scale * xi


def transient_table(spec: SystemSpec, bath: BathSpec, t_end, t_min=None, per_decade=24,
                    smooth=True, converge_rtol=1e-10):
    """Sample ``Xi(t)`` on a geometric grid up to ``t_end``.

    Sampling stops early once two successive samples agree to ``converge_rtol``;
    the source then holds the last value.
    """
    cutoff = system_cutoff(spec, bath)
    if t_min is None:
        t_min = 0.01 / cutoff
    n_pts = max(int(np.ceil(per_decade * np.log10(t_end / t_min))) + 1, 2)
    grid = np.geomspace(t_min, t_end, n_pts)
    times, xis = [], []
    for t in grid:
        xi = build_xi_matrix(spec, bath, t, smooth)
        if xis:
            scale = max(np.abs(xi).max(), 1e-300)
            if np.abs(xi - xis[-1]).max() <= converge_rtol * scale and np.abs(xis[-1]).max() > 0:
                times.append(t)
                xis.append(xi)
                break
        times.append(t)
        xis.append(xi)
    return np.array(times), np.stack(xis)
