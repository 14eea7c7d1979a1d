"""System and bath specifications, drift matrices and vectorization helpers.

Conventions used throughout the package:

* phase-space ordering ``x = (q_1..q_N, p_1..p_N)``;
* ``vec`` is column stacking (Fortran order), so that
  ``vec(A X B) = (B.T kron A) vec(X)``;
* natural units, ``hbar = k_B = 1`` unless overridden.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedError, ValidationError

SYM_RTOL = 1e-12
PSD_RTOL = 1e-10


def _as_square(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square", f"got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} must be finite")
    return a


def _norm(a):
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


@dataclass(frozen=True)
class SystemSpec:
    """N coupled oscillators: trap Hessian ``omega_mat`` and dissipation ``gamma_mat``."""

    omega_mat: np.ndarray
    gamma_mat: np.ndarray
    hbar: float = 1.0
    k_boltzmann: float = 1.0

    def __post_init__(self):
        om = _as_square(self.omega_mat, "omega_mat")
        ga = _as_square(self.gamma_mat, "gamma_mat")
        if om.shape != ga.shape:
            raise ValidationError("omega_mat and gamma_mat must have equal shape",
                                  f"{om.shape} vs {ga.shape}")
        if not (self.hbar > 0 and self.k_boltzmann > 0):
            raise ValidationError("hbar and k_boltzmann must be positive")
        n_om, n_ga = _norm(om), _norm(ga)
        if np.max(np.abs(om - om.T), initial=0.0) > SYM_RTOL * max(n_om, 1e-300):
            raise ValidationError("omega_mat must be symmetric")
        if np.max(np.abs(ga - ga.T), initial=0.0) > SYM_RTOL * max(n_ga, 1e-300):
            raise ValidationError("gamma_mat must be symmetric")
        om = 0.5 * (om + om.T)
        ga = 0.5 * (ga + ga.T)
        if np.linalg.eigvalsh(om)[0] < -PSD_RTOL * n_om:
            raise ValidationError("omega_mat must be positive semidefinite",
                                  f"min eigenvalue {np.linalg.eigvalsh(om)[0]:.3g}")
        if np.linalg.eigvalsh(ga)[0] <= 0:
            raise ValidationError("gamma_mat must be positive definite",
                                  f"min eigenvalue {np.linalg.eigvalsh(ga)[0]:.3g}")
        om.setflags(write=False)
        ga.setflags(write=False)
        object.__setattr__(self, "omega_mat", om)
        object.__setattr__(self, "gamma_mat", ga)

    @property
    def n(self) -> int:
        return self.omega_mat.shape[0]

    @classmethod
    def oscillator(cls, gamma, omega, hbar=1.0, k_boltzmann=1.0):
        """Single damped oscillator with frequency ``omega`` and damping ``gamma``."""
        return cls([[omega**2]], [[gamma]], hbar=hbar, k_boltzmann=k_boltzmann)

    def commuting(self, rtol=1e-12) -> bool:
        c = self.omega_mat @ self.gamma_mat - self.gamma_mat @ self.omega_mat
        scale = max(_norm(self.omega_mat) * _norm(self.gamma_mat), 1e-300)
        return _norm(c) <= rtol * scale


@dataclass(frozen=True)
class CovarianceState:
    """Symmetrized second moments ``Sigma`` of ``x = (q, p)`` at time ``time``."""

    sigma_mat: np.ndarray
    time: float = 0.0
    check_psd: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        s = _as_square(self.sigma_mat, "sigma_mat")
        if s.shape[0] % 2:
            raise ValidationError("sigma_mat must be 2N x 2N")
        if self.time < 0:
            raise ValidationError("time must be nonnegative")
        ns = _norm(s)
        if np.max(np.abs(s - s.T), initial=0.0) > 1e-9 * max(ns, 1e-300):
            raise ValidationError("sigma_mat must be symmetric")
        s = symmetrize(s)
        if self.check_psd and ns > 0 and np.linalg.eigvalsh(s)[0] < -1e-9 * ns:
            raise ValidationError("sigma_mat must be positive semidefinite",
                                  f"min eigenvalue {np.linalg.eigvalsh(s)[0]:.3g}")
        s.setflags(write=False)
        object.__setattr__(self, "sigma_mat", s)

    @property
    def n(self) -> int:
        return self.sigma_mat.shape[0] // 2

    @property
    def sigma(self) -> np.ndarray:
        return vec(self.sigma_mat)

    @property
    def delta_q(self) -> np.ndarray:
        n = self.n
        return self.sigma_mat[:n, :n]

    @property
    def delta_p(self) -> np.ndarray:
        n = self.n
        return self.sigma_mat[n:, n:]

    @property
    def delta_qp(self) -> np.ndarray:
        n = self.n
        return self.sigma_mat[:n, n:]

    def independent_entries(self):
        """``(labels, values)`` of the upper triangle, ordered dq, dp, dqp blocks."""
        return independent_entries(self.sigma_mat)


@dataclass(frozen=True)
class BathSpec:
    """Ohmic bath. ``cutoff=None`` selects the default rule in the bath module."""

    temperature: float = 0.0
    cutoff: float | None = None
    enabled: bool = True
    scale: float = 1.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be nonnegative")
        if self.cutoff is not None and not self.cutoff > 0:
            raise ValidationError("cutoff must be positive")
        if self.scale < 0:
            raise ValidationError("scale must be nonnegative")

    @property
    def active(self) -> bool:
        return self.enabled and self.scale > 0


def vec(a):
    return np.asarray(a).reshape(-1, order="F")


def unvec(v, n=None):
    v = np.asarray(v)
    if n is None:
        n = int(round(np.sqrt(v.size)))
    return v.reshape(n, n, order="F")


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def independent_entries(s):
    s = np.asarray(s)
    n = s.shape[0] // 2
    labels, values = [], []
    if n == 1:
        return ["dq", "dp", "dqp"], [s[0, 0], s[1, 1], s[0, 1]]
    for i in range(n):
        for j in range(i, n):
            labels.append(f"dq{i+1}{j+1}")
            values.append(s[i, j])
    for i in range(n):
        for j in range(i, n):
            labels.append(f"dp{i+1}{j+1}")
            values.append(s[n + i, n + j])
    for i in range(n):
        for j in range(n):
            labels.append(f"dqp{i+1}{j+1}")
            values.append(s[i, n + j])
    return labels, values


def build_drift(spec: SystemSpec) -> np.ndarray:
    """``H = [[0, I], [-Omega, -Gamma]]``."""
    n = spec.n
    h = np.zeros((2 * n, 2 * n))
    h[:n, n:] = np.eye(n)
    h[n:, :n] = -spec.omega_mat
    h[n:, n:] = -spec.gamma_mat
    return h


def vectorize_drift(h) -> np.ndarray:
    """Kronecker sum ``I kron H + H kron I`` acting on column-stacked covariances."""
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValidationError("drift must be square", f"got shape {h.shape}")
    eye = np.eye(h.shape[0])
    return np.kron(eye, h) + np.kron(h, eye)


# (dq, dp, dqp) <-> vec([[dq, dqp], [dqp, dp]]) = (dq, dqp, dqp, dp)
EMBED_1D = np.array([[1.0, 0.0, 0.0],
                     [0.0, 0.0, 1.0],
                     [0.0, 0.0, 1.0],
                     [0.0, 1.0, 0.0]])
REDUCE_1D = np.array([[1.0, 0.0, 0.0, 0.0],
                      [0.0, 0.0, 0.0, 1.0],
                      [0.0, 0.5, 0.5, 0.0]])


def reduce_1d(h_sigma):
    """Restrict a single-oscillator ``H_sigma`` to ``(dq, dp, dqp)``.

    Returns ``(h1d, embed)`` where ``embed`` maps 3-vectors back to the
    full 4-dimensional vec space.
    """
    h_sigma = np.asarray(h_sigma, dtype=float)
    if h_sigma.shape != (4, 4):
        raise UnsupportedError(f"1D reduction requires N=1 (H_sigma 4x4), got {h_sigma.shape}")
    return REDUCE_1D @ h_sigma @ EMBED_1D, EMBED_1D.copy()


def to_reduced(sigma):
    """Full vec (length 4) or 2x2 matrix -> ``(dq, dp, dqp)``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape == (2, 2):
        sigma = vec(sigma)
    if sigma.shape != (4,):
        raise UnsupportedError("reduced coordinates require N=1")
    return REDUCE_1D @ sigma


def from_reduced(v):
    return EMBED_1D @ np.asarray(v, dtype=float)


def is_hurwitz(a, tol=0.0) -> bool:
    return bool(np.max(np.linalg.eigvals(a).real) < -tol)


def nonzero_decay_rate(h, rtol=1e-9):
    """Smallest ``-Re(lambda)`` over eigenvalues of ``h`` that are not zero."""
    lam = np.linalg.eigvals(h)
    scale = max(np.max(np.abs(lam)), 1e-300)
    rates = -lam.real[np.abs(lam) > rtol * scale]
    if rates.size == 0:
        return np.inf
    return float(np.min(rates))
