"""Time evolution of the covariance matrix.

``dSigma/dt = H Sigma + Sigma H^T + Xi(t)`` is propagated either exactly
(fluctuation-free, matrix exponential) or with an adaptive Dormand-Prince
5(4) pair.  The right-hand side is evaluated in matrix form, which equals
``H_sigma vec(Sigma)`` for the Kronecker sum ``H_sigma``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45
from scipy.interpolate import PchipInterpolator
from scipy.linalg import expm

from .errors import InsufficientDataError, StiffnessError, ValidationError
from .model import CovarianceState, independent_entries, nonzero_decay_rate, symmetrize, unvec, vec

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12


@dataclass(frozen=True)
class InhomogeneitySource:
    """Fluctuation term ``Xi(t)``.

    ``mode`` is ``"off"``, ``"stationary"`` (constant ``stationary_xi``) or
    ``"transient"`` (tabulated ``table_xi`` at ``table_times``; PCHIP cubic
    pieces in between, zero at ``t = 0`` and held constant past the table).
    """

    mode: str = "off"
    stationary_xi: np.ndarray | None = None
    table_times: np.ndarray | None = None
    table_xi: np.ndarray | None = None
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("off", "stationary", "transient"):
            raise ValidationError("source mode must be off, stationary or transient", self.mode)
        if self.mode == "stationary":
            xi = np.atleast_2d(np.asarray(self.stationary_xi, dtype=float))
            if not np.allclose(xi, xi.T, rtol=0, atol=1e-12 * max(np.abs(xi).max(), 1.0)):
                raise ValidationError("stationary Xi must be symmetric")
            object.__setattr__(self, "stationary_xi", symmetrize(xi))
        elif self.mode == "transient":
            t = np.asarray(self.table_times, dtype=float)
            xi = np.asarray(self.table_xi, dtype=float)
            if t.ndim != 1 or xi.shape[0] != t.size or np.any(np.diff(t) <= 0) or t[0] <= 0:
                raise ValidationError("transient table needs strictly increasing positive times")
            if not np.allclose(xi, np.swapaxes(xi, 1, 2), rtol=1e-12, atol=0):
                raise ValidationError("tabulated Xi must be symmetric at every sample")
            xi = 0.5 * (xi + np.swapaxes(xi, 1, 2))
            tt = np.concatenate([[0.0], t])
            xx = np.concatenate([np.zeros((1,) + xi.shape[1:]), xi])
            object.__setattr__(self, "table_times", t)
            object.__setattr__(self, "table_xi", xi)
            object.__setattr__(self, "_interp", PchipInterpolator(tt, xx, axis=0, extrapolate=False))

    @classmethod
    def off(cls):
        return cls("off")

    @classmethod
    def stationary(cls, xi):
        return cls("stationary", stationary_xi=xi)

    @classmethod
    def transient(cls, times, xis):
        return cls("transient", table_times=times, table_xi=xis)

    def xi(self, t, dim):
        if self.mode == "off":
            return np.zeros((dim, dim))
        if self.mode == "stationary":
            return self.stationary_xi
        if t >= self.table_times[-1]:
            return self.table_xi[-1]
        return self._interp(max(t, 0.0))


@dataclass
class Trajectory:
    times: np.ndarray
    sigmas: np.ndarray  # (k, 2N, 2N)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValidationError("trajectory times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def states(self):
        return [CovarianceState(s, t) for t, s in zip(self.times, self.sigmas)]

    @property
    def vectors(self):
        return np.stack([vec(s) for s in self.sigmas])

    def component(self, i, j):
        return self.sigmas[:, i, j]

    @property
    def delta_q(self):
        return self.sigmas[:, 0, 0]

    def final(self) -> CovarianceState:
        return CovarianceState(self.sigmas[-1], self.times[-1])

    def to_csv(self, path_or_file):
        """Write ``t`` followed by every independent entry, 17 significant digits."""
        labels, _ = independent_entries(self.sigmas[0])
        close = False
        if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
            fh = open(path_or_file, "w", newline="")
            close = True
        else:
            fh = path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + labels)
            for t, s in zip(self.times, self.sigmas):
                _, vals = independent_entries(s)
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in vals])
        finally:
            if close:
                fh.close()


def propagate_exact(state: CovarianceState, h, t) -> CovarianceState:
    """Fluctuation-free ``e^{Ht} Sigma e^{H^T t}``."""
    if t < 0:
        raise ValidationError("duration must be nonnegative")
    e = expm(np.asarray(h, dtype=float) * t)
    return CovarianceState(symmetrize(e @ state.sigma_mat @ e.T), state.time + t, check_psd=False)


def propagate_grid(state: CovarianceState, h, times) -> Trajectory:
    """Exact fluctuation-free trajectory sampled at absolute ``times``."""
    times = np.asarray(times, dtype=float)
    sig = np.stack([propagate_exact(state, h, t - state.time).sigma_mat for t in times])
    return Trajectory(times, sig, {"integrator": "expm"})


def integrate(state: CovarianceState, h, source=None, t_end=1.0, tol=DEFAULT_RTOL,
              atol=DEFAULT_ATOL, t_eval=None, max_step=np.inf, first_step=None) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) integration from ``state.time`` to ``t_end``.

    Output is sampled at ``t_eval`` through the continuous extension, or at
    every accepted step when ``t_eval`` is ``None``.  ``Sigma`` is symmetrized
    after every accepted step.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    h = np.asarray(h, dtype=float)
    dim = h.shape[0]
    source = source or InhomogeneitySource.off()
    t0 = state.time
    if t_end <= t0:
        raise ValidationError("t_end must exceed the initial time")

    def rhs(t, y):
        a = h @ unvec(y, dim)
        return vec(a + a.T + source.xi(t, dim))

    solver = RK45(rhs, t0, state.sigma.copy(), t_end, rtol=tol, atol=atol,
                  max_step=max_step, first_step=first_step)

    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) <= 0) or t_eval[0] < t0 or t_eval[-1] > t_end:
            raise ValidationError("t_eval must be increasing and inside [t0, t_end]")
    out_t, out_s = [], []
    if t_eval is None or t_eval[0] == t0:
        out_t.append(t0)
        out_s.append(state.sigma_mat.copy())
    k = 0 if t_eval is None else int(t_eval[0] == t0)
    n_steps = 0
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise StiffnessError(solver.t, msg)
        n_steps += 1
        sig = symmetrize(unvec(solver.y, dim))
        solver.y[:] = vec(sig)
        if t_eval is None:
            out_t.append(solver.t)
            out_s.append(sig)
        else:
            j = k
            while j < t_eval.size and t_eval[j] <= solver.t:
                j += 1
            if j > k:
                dense = solver.dense_output()
                for tt in t_eval[k:j]:
                    out_t.append(tt)
                    out_s.append(sig if tt == solver.t else symmetrize(unvec(dense(tt), dim)))
                k = j
    meta = {"integrator": "RK45 (Dormand-Prince 5(4))", "rtol": tol, "atol": atol,
            "n_steps": n_steps, "nfev": solver.nfev, "source": source.mode}
    return Trajectory(np.array(out_t), np.stack(out_s), meta)


def late_time_slope(traj: Trajectory, window=0.2, i=0, j=0) -> float:
    """Least-squares slope of ``Sigma[i, j]`` over the trailing ``window`` fraction of time."""
    if not 0 < window <= 1:
        raise ValidationError("window must be in (0, 1]")
    t = traj.times
    start = t[-1] - window * (t[-1] - t[0])
    sel = t >= start
    if sel.sum() < 3:
        raise InsufficientDataError(f"only {sel.sum()} samples in the trailing window")
    return float(np.polyfit(t[sel], traj.sigmas[sel, i, j], 1)[0])


def log_slope(traj: Trajectory, t_lo, t_hi, rate=1.0, i=0, j=0):
    """Fit ``Sigma[i, j] = a ln(rate t) + c`` over ``[t_lo, t_hi]``; returns ``(a, c)``."""
    t = traj.times
    sel = (t >= t_lo) & (t <= t_hi)
    if sel.sum() < 3:
        raise InsufficientDataError(f"only {sel.sum()} samples in [{t_lo}, {t_hi}]")
    a, c = np.polyfit(np.log(rate * t[sel]), traj.sigmas[sel, i, j], 1)
    return float(a), float(c)


def relaxation_time(h, factor=60.0):
    """``factor / (slowest nonzero decay rate)``, the standard long-time horizon."""
    rate = nonzero_decay_rate(h)
    if not np.isfinite(rate) or rate <= 0:
        raise ValidationError("drift has no decaying modes")
    return factor / rate
