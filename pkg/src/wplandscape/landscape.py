"""Quadratic landscapes ``L(sigma) = sigma^T L sigma / 2 + F^T sigma`` with ``H_sigma = -M L``.

The flow ``d sigma/dt = H_sigma sigma + zeta`` equals ``-M grad L`` whenever
``M F = -zeta``; a positive-definite symmetric part of ``M`` makes ``L``
nonincreasing along trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import NotApplicableError, ValidationError

COORDS_1D = ("dq", "dp", "dqp")


@dataclass(frozen=True)
class LandscapeDecomposition:
    m_mat: np.ndarray
    l_mat: np.ndarray
    f_vec: np.ndarray
    offset: float = 0.0
    coords: tuple = field(default=COORDS_1D, compare=False)
    label: str = field(default="", compare=False)

    def __post_init__(self):
        m = np.asarray(self.m_mat, dtype=float)
        l = np.asarray(self.l_mat, dtype=float)
        f = np.asarray(self.f_vec, dtype=float)
        if m.shape != l.shape or f.shape != (m.shape[0],):
            raise ValidationError("M, L and F dimensions disagree")
        scale = max(np.abs(l).max(initial=0.0), 1e-300)
        if np.abs(l - l.T).max(initial=0.0) > 1e-10 * scale:
            raise ValidationError("L must be symmetric")
        if np.linalg.eigvalsh(0.5 * (m + m.T))[0] <= 0:
            raise ValidationError("symmetric part of M must be positive definite")
        object.__setattr__(self, "m_mat", m)
        object.__setattr__(self, "l_mat", 0.5 * (l + l.T))
        object.__setattr__(self, "f_vec", f)

    @property
    def dim(self):
        return self.l_mat.shape[0]

    def value(self, sigma):
        s = np.asarray(sigma, dtype=float)
        return 0.5 * s @ self.l_mat @ s + self.f_vec @ s + self.offset

    def values(self, sigmas):
        s = np.asarray(sigmas, dtype=float)
        return 0.5 * np.einsum("ki,ij,kj->k", s, self.l_mat, s) + s @ self.f_vec + self.offset

    def gradient(self, sigma):
        return self.l_mat @ np.asarray(sigma, dtype=float) + self.f_vec

    def drift(self):
        """``(H_sigma, zeta)`` reconstructed as ``(-M L, -M F)``."""
        return -self.m_mat @ self.l_mat, -self.m_mat @ self.f_vec

    def residuals(self, h_sigma, zeta=None):
        """Relative reconstruction errors of ``H_sigma`` and ``zeta``."""
        h_sigma = np.asarray(h_sigma, dtype=float)
        zeta = np.zeros(self.dim) if zeta is None else np.asarray(zeta, dtype=float)
        h_rec, z_rec = self.drift()
        rh = np.linalg.norm(h_sigma - h_rec) / max(np.linalg.norm(h_sigma), 1e-300)
        rz = np.linalg.norm(zeta - z_rec) / (np.linalg.norm(zeta) + 1.0)
        return float(rh), float(rz)

    def m_min_eig(self):
        return float(np.linalg.eigvalsh(0.5 * (self.m_mat + self.m_mat.T))[0])


def _refine(m, l, h, l_inv, steps=2):
    # residual R = M L + H; M <- M - R L^+ removes it on range(L)
    for _ in range(steps):
        m = m - (m @ l + h) @ l_inv
    return m


def _linear_term(m, zeta, n):
    if zeta is None:
        return np.zeros(n)
    return np.linalg.solve(m, -np.asarray(zeta, dtype=float))


def decompose_general(h_sigma, zeta=None, q=None, coords=None) -> LandscapeDecomposition:
    """Landscape from ``H^T L + L H = -Q`` (``Q = I`` by default), ``M = -H L^-1``.

    The symmetric part of ``M`` is ``L^-1 (Q/2) L^-1``, positive definite.
    Requires a Hurwitz ``h_sigma``.
    """
    h = np.asarray(h_sigma, dtype=float)
    n = h.shape[0]
    lam = np.linalg.eigvals(h)
    if np.max(lam.real) >= -1e-12 * max(np.abs(lam).max(), 1.0):
        raise NotApplicableError(
            "H_sigma is not Hurwitz (zero modes present); use the explicit free-particle "
            "landscape, decompose_degenerate, or the zero-mode route")
    q = np.eye(n) if q is None else np.asarray(q, dtype=float)
    l = solve_continuous_lyapunov(h.T, -q)
    l = 0.5 * (l + l.T)
    l_inv = np.linalg.inv(l)
    m = _refine(-h @ l_inv, l, h, l_inv)
    f = _linear_term(m, zeta, n)
    return LandscapeDecomposition(m, l, f, coords=coords or _default_coords(n), label="lyapunov")


def decompose_degenerate(h_sigma, basis, zeta=None) -> LandscapeDecomposition:
    """Landscape for a full-vec ``H_sigma`` whose zero modes are given by ``basis``.

    ``L`` vanishes on the right zero modes (flat directions) and solves
    ``H^T L + L H = -P^T P`` with ``P`` the spectral projector onto the
    decaying subspace.  ``M = M0 + c Pi_r`` with ``M0 L = -H``, ``Pi_r`` the
    projector onto ``ker L`` and ``c`` raised until ``M`` is positive definite.
    """
    h = np.asarray(h_sigma, dtype=float)
    n = h.shape[0]
    if basis is None:
        return decompose_general(h, zeta)
    p = np.eye(n) - basis.projector()
    u, sv, _ = np.linalg.svd(p)
    b = u[:, sv > 1e-10 * sv[0]]  # orthonormal basis of range(P)
    c = b.T @ p
    a = b.T @ h @ b
    y = solve_continuous_lyapunov(a.T, -np.eye(a.shape[0]))
    r = basis.right_modes
    pi_r = r @ np.linalg.pinv(r)
    keep = np.eye(n) - pi_r
    l = keep @ (c.T @ (0.5 * (y + y.T)) @ c) @ keep  # exact zeros on the flat directions
    l = 0.5 * (l + l.T)
    l_pinv = np.linalg.pinv(l, rcond=1e-13, hermitian=True)
    # H = B A C and L = C^T Y C, so M0 = -B A Y^-1 (C C^T)^-1 C gives M0 L = -H
    base = _refine(-b @ a @ np.linalg.solve(y, np.linalg.solve(c @ c.T, c)), l, h, l_pinv)
    # smallest shift c with sym(M0) + c Pi_r positive definite (Schur complement)
    sym = 0.5 * (base + base.T)
    u1, _ = np.linalg.qr(c.T)
    u2, _ = np.linalg.qr(r)
    s11 = u1.T @ sym @ u1
    mu = np.linalg.eigvalsh(s11)[0]
    if mu <= 0:
        raise NotApplicableError("mobility not positive on the decaying subspace")
    s12 = u1.T @ sym @ u2
    need = np.linalg.eigvalsh(s12.T @ np.linalg.solve(s11, s12) - u2.T @ sym @ u2)[-1]
    m = base + (max(need, 0.0) + mu) * pi_r
    if np.linalg.eigvalsh(0.5 * (m + m.T))[0] <= 0:
        raise NotApplicableError("could not make M positive definite")
    f = _linear_term(m, zeta, n)
    return LandscapeDecomposition(m, l, f, coords=_default_coords(n), label="zero-mode projected")


def _default_coords(n):
    return COORDS_1D if n == 3 else tuple(f"s{i}" for i in range(n))


# ---------------------------------------------------------------- explicit 1D forms

def cho_mobility(gamma, omega):
    g, w = float(gamma), float(omega)
    pre = 4.0 / (g * (5 * g**2 + 48 * w**2))
    return pre * np.array([
        [1.0, 0.0, -2 * w**2 / g],
        [0.0, 5 * w**4, 2 * w**4 / g],
        [2 * w**2 / g, -2 * w**4 / g, 0.5 * w**2],
    ])


def cho_hessian(gamma, omega):
    """Hessian of the completed-square confined-oscillator landscape."""
    g, w = float(gamma), float(omega)
    u = np.array([1.0, -1.0 / (5 * w**2), g / (2 * w**2)])
    k = 5 * g**2 + 48 * w**2
    return 5 * g**2 * w**2 * np.outer(u, u) + np.diag([0.0, g**2 * k / (10 * w**4), g**2 * k / (4 * w**2)])


def cho_expression(gamma, omega, dq, dp, dqp):
    """The confined landscape written out term by term."""
    g, w = gamma, omega
    k = 5 * g**2 + 48 * w**2
    return (2.5 * g**2 * w**2 * (dq + g / (2 * w**2) * dqp - dp / (5 * w**2)) ** 2
            + g**2 * k / (8 * w**2) * dqp**2 + g**2 * k / (20 * w**4) * dp**2)


def landscape_cho(gamma, omega) -> LandscapeDecomposition:
    if omega == 0:
        raise ValidationError("landscape_cho needs omega != 0 (use landscape_fp)")
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    return LandscapeDecomposition(cho_mobility(gamma, omega), cho_hessian(gamma, omega),
                                  np.zeros(3), label=f"cho(gamma={gamma}, omega={omega})")


def fp_mobility(gamma):
    g = float(gamma)
    return np.array([[2 / g**3, 0.0, -2 / g**2], [0.0, 2 * g, 0.0], [0.0, -1.0, 1 / g]])


def landscape_fp(gamma) -> LandscapeDecomposition:
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    return LandscapeDecomposition(fp_mobility(gamma), np.diag([0.0, 1.0, gamma**2]),
                                  np.zeros(3), label=f"fp(gamma={gamma})")


def landscape_qbm(gamma, omega, delta_qxi, delta_pxi) -> LandscapeDecomposition:
    """Fluctuation-deformed landscape: shifted bowl (``omega != 0``) or tilted valley."""
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    label = f"qbm(gamma={gamma}, omega={omega}, dqxi={delta_qxi}, dpxi={delta_pxi})"
    if omega != 0:
        base = landscape_cho(gamma, omega)
        shift = np.array([(gamma * delta_qxi + delta_pxi) / (gamma * omega**2), delta_pxi / gamma, 0.0])
        return LandscapeDecomposition(base.m_mat, base.l_mat, -base.l_mat @ shift, label=label)
    d0 = (gamma * delta_qxi + delta_pxi) / gamma**2
    f = np.array([-gamma**3 * d0, -delta_pxi / gamma, -gamma**2 * d0])
    return LandscapeDecomposition(fp_mobility(gamma), np.diag([0.0, 1.0, gamma**2]), f, label=label)


def minimum(dec: LandscapeDecomposition):
    """Stationary point ``L sigma = -F``, or ``None`` if it does not exist."""
    sol, *_ = np.linalg.lstsq(dec.l_mat, -dec.f_vec, rcond=None)
    if np.linalg.norm(dec.l_mat @ sol + dec.f_vec) > 1e-9 * (np.linalg.norm(dec.f_vec) + 1):
        return None
    return sol


# ---------------------------------------------------------------- grids

@dataclass
class LandscapeGrid:
    dq: np.ndarray
    dp: np.ndarray
    values: np.ndarray  # (len(dp), len(dq))
    dqp: np.ndarray  # conditional minimizer
    unbounded_axes: tuple
    metadata: dict

    @property
    def unbounded(self):
        return bool(self.unbounded_axes)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("dq,dp,L\n")
            for i, p in enumerate(self.dp):
                for j, q in enumerate(self.dq):
                    fh.write(f"{q:.17g},{p:.17g},{self.values[i, j]:.17g}\n")

    def write_metadata(self, path):
        meta = dict(self.metadata)
        meta["unbounded_axes"] = list(self.unbounded_axes)
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def landscape_grid(dec: LandscapeDecomposition, dq_axis, dp_axis, metadata=None) -> LandscapeGrid:
    """Evaluate on a ``(dq, dp)`` mesh with ``dqp`` at its conditional minimizer."""
    if dec.dim != 3:
        raise ValidationError("grids need a (dq, dp, dqp) decomposition")
    dq_axis = np.asarray(dq_axis, dtype=float)
    dp_axis = np.asarray(dp_axis, dtype=float)
    if not (np.all(np.isfinite(dq_axis)) and np.all(np.isfinite(dp_axis))):
        raise ValidationError("grid bounds must be finite")
    l, f = dec.l_mat, dec.f_vec
    lcc = l[2, 2]
    if lcc <= 0:
        raise ValidationError("landscape has no minimizer along dqp")
    qq, pp = np.meshgrid(dq_axis, dp_axis)
    cc = -(l[2, 0] * qq + l[2, 1] * pp + f[2]) / lcc
    pts = np.stack([qq.ravel(), pp.ravel(), cc.ravel()], axis=1)
    vals = dec.values(pts).reshape(qq.shape)

    # reduced quadratic in (dq, dp) after eliminating dqp
    lr = l[:2, :2] - np.outer(l[:2, 2], l[2, :2]) / lcc
    fr = f[:2] - l[:2, 2] * f[2] / lcc
    scale = max(np.abs(lr).max(), np.abs(fr).max(), 1e-300)
    unbounded = []
    for k, name in enumerate(("dq", "dp")):
        if abs(lr[k, k]) <= 1e-12 * scale and abs(fr[k] - 0) > 1e-12 * scale:
            unbounded.append(name)
        elif lr[k, k] < -1e-12 * scale:
            unbounded.append(name)
    meta = {"decomposition": dec.label, "fixed_coordinate_rule": "dqp = argmin_dqp L(dq, dp, dqp)",
            "dq_range": [float(dq_axis[0]), float(dq_axis[-1]), int(dq_axis.size)],
            "dp_range": [float(dp_axis[0]), float(dp_axis[-1]), int(dp_axis.size)]}
    meta.update(metadata or {})
    return LandscapeGrid(dq_axis, dp_axis, vals, cc, tuple(unbounded), meta)


def descent_violation(dec: LandscapeDecomposition, sigmas):
    """Largest increase ``L(sigma_{k+1}) - L(sigma_k)`` along a sampled trajectory (<= 0 ideally)."""
    v = dec.values(sigmas)
    if v.size < 2:
        return 0.0
    return float(np.max(np.diff(v)))
