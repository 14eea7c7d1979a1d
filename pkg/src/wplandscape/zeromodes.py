"""Kernel of the trap matrix, zero modes of ``H_sigma`` and long-time covariance.

Right zero modes ``h_i kron h_j`` with ``h_i = (y_i, 0)`` span the flat
directions of the covariance landscape; left zero modes built from
``(Gamma y_i, y_i)`` give conserved linear functionals.  Their pairing fixes
the fluctuation-free limit ``P sigma(0)`` with
``P = M_r (M_l M_r)^-1 M_l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePairingError, ValidationError
from .model import CovarianceState, SystemSpec, build_drift, vec, vectorize_drift

KERNEL_RTOL = 1e-10
MODE_RTOL = 1e-10
MAX_PAIRING_COND = 1e12


@dataclass(frozen=True)
class ZeroModeBasis:
    kernel_vecs: np.ndarray  # N x d, orthonormal columns
    right_modes: np.ndarray  # 4N^2 x d^2
    left_modes: np.ndarray  # d^2 x 4N^2
    pairs: tuple  # k -> (i, j)
    pairing_cond: float

    @property
    def d(self) -> int:
        return self.kernel_vecs.shape[1]

    @property
    def pairing(self) -> np.ndarray:
        return self.left_modes @ self.right_modes

    def projector(self) -> np.ndarray:
        return self.right_modes @ np.linalg.solve(self.pairing, self.left_modes)


def kernel_basis(omega_mat, tol=KERNEL_RTOL):
    """Orthonormal basis (columns) of eigenvectors with eigenvalue ``<= tol * ||Omega||``."""
    om = np.atleast_2d(np.asarray(omega_mat, dtype=float))
    w, v = np.linalg.eigh(0.5 * (om + om.T))
    scale = np.max(np.abs(w), initial=0.0)
    y = v[:, w <= tol * scale]
    # fix signs: first significant component positive
    for k in range(y.shape[1]):
        col = y[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-8)[0]
        if col[idx] < 0:
            y[:, k] = -col
    return y


def build_zero_modes(spec: SystemSpec, kernel_vecs) -> ZeroModeBasis:
    y = np.asarray(kernel_vecs, dtype=float)
    if y.ndim != 2 or y.shape[1] == 0:
        raise ValidationError("kernel must be nonempty")
    n, d = y.shape
    om_norm = np.linalg.norm(spec.omega_mat, 2)
    resid = np.linalg.norm(spec.omega_mat @ y, axis=0)
    if np.any(resid > MODE_RTOL * max(om_norm, 1.0)):
        raise ValidationError("kernel vectors must satisfy Omega y = 0",
                              f"residuals {resid}")

    h = np.vstack([y, np.zeros((n, d))])
    ht = np.vstack([spec.gamma_mat @ y, y])
    pairs = tuple((i, j) for i in range(d) for j in range(d))
    right = np.column_stack([np.kron(h[:, i], h[:, j]) for i, j in pairs])
    left = np.vstack([np.kron(ht[:, i], ht[:, j]) for i, j in pairs])
    right /= np.linalg.norm(right, axis=0)
    left /= np.linalg.norm(left, axis=1)[:, None]

    h_sigma = vectorize_drift(build_drift(spec))
    hs_norm = np.linalg.norm(h_sigma, 2)
    if np.linalg.norm(h_sigma @ right) > MODE_RTOL * hs_norm:
        raise DegeneratePairingError("right zero modes not annihilated by H_sigma")
    if np.linalg.norm(left @ h_sigma) > MODE_RTOL * hs_norm:
        raise DegeneratePairingError("left zero modes not annihilated by H_sigma")

    cond = float(np.linalg.cond(left @ right))
    if not np.isfinite(cond) or cond > MAX_PAIRING_COND:
        # a singular pairing means the zero eigenvalue of H_sigma is defective
        raise DegeneratePairingError(f"M_l M_r singular (condition number {cond:.3g})")
    return ZeroModeBasis(y, right, left, pairs, cond)


def zero_modes_for(spec: SystemSpec, tol=KERNEL_RTOL):
    """Zero-mode basis of ``spec``, or ``None`` when ``Omega`` is positive definite."""
    y = kernel_basis(spec.omega_mat, tol)
    if y.shape[1] == 0:
        return None
    return build_zero_modes(spec, y)


def _as_vec(sigma):
    if isinstance(sigma, CovarianceState):
        return sigma.sigma
    sigma = np.asarray(sigma, dtype=float)
    return vec(sigma) if sigma.ndim == 2 else sigma


def asymptotic_covariance(basis, sigma0):
    """Long-time fluctuation-free covariance vector; zero when ``basis`` is ``None``."""
    s0 = _as_vec(sigma0)
    if basis is None or basis.d == 0:
        return np.zeros_like(s0)
    coeffs = np.linalg.solve(basis.pairing, basis.left_modes @ s0)
    return basis.right_modes @ coeffs


def conserved_values(basis, sigma):
    s = _as_vec(sigma)
    if basis is None:
        return np.zeros(0)
    return basis.left_modes @ s


def symmetrized_flat_directions(basis):
    """The ``d(d+1)/2`` unit flat directions lying in the symmetric subspace."""
    n = basis.kernel_vecs.shape[0]
    h = np.vstack([basis.kernel_vecs, np.zeros((n, basis.d))])
    cols = []
    for i in range(basis.d):
        for j in range(i, basis.d):
            m = np.outer(h[:, i], h[:, j])
            v = vec(m + m.T)
            cols.append(v / np.linalg.norm(v))
    return np.column_stack(cols)


def make_gaussian_state(widths, hbar=1.0, time=0.0) -> CovarianceState:
    """Product of minimal-uncertainty Gaussians with position widths ``a_i``."""
    a = np.atleast_1d(np.asarray(widths, dtype=float))
    if np.any(~(a > 0)):
        raise ValidationError("Gaussian widths must be positive", f"got {a}")
    diag = np.concatenate([a**2, hbar**2 / (4 * a**2)])
    return CovarianceState(np.diag(diag), time)
