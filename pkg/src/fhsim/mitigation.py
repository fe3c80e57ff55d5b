"""Error mitigation: particle-number postselection, assignment averaging and linear rescaling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hubbard import DOWN, UP, DensitySeries, QubitAssignment
from .qsim import ShotTable, hamming_weights

DAMPING_CUTOFF = 0.2
MIN_RESCALE = 0.05
FIDUCIAL_TOL = 1e-6


class EmptyPostselectionError(RuntimeError):
    """Every shot was rejected by postselection."""


def postselect(shots: ShotTable, assignment: QubitAssignment, n_up: int, n_down: int) -> tuple[ShotTable, float]:
    """Keep the shots whose per-chain excitation numbers are (n_up, n_down)."""
    L = assignment.L
    if not (0 <= n_up <= L and 0 <= n_down <= L):
        raise ValueError("target particle numbers outside [0, L]")
    if shots.shots == 0:
        raise EmptyPostselectionError("no shots to postselect")
    keep = (hamming_weights(shots, assignment.chain_qubits(UP)) == n_up) & \
        (hamming_weights(shots, assignment.chain_qubits(DOWN)) == n_down)
    kept = int(keep.sum())
    if kept == 0:
        raise EmptyPostselectionError(f"all {shots.shots} shots rejected for N=({n_up},{n_down})")
    return ShotTable(shots.bitstrings[keep], shots.n_qubits, shots.seed), kept / shots.shots


def assignment_average(series: list[DensitySeries]) -> DensitySeries:
    """Pointwise mean over layout variants with the standard error of the mean."""
    if not series:
        raise ValueError("nothing to average")
    ref = series[0]
    for s in series[1:]:
        if s.rho_up.shape != ref.rho_up.shape or not np.array_equal(s.etas, ref.etas):
            raise ValueError("series have mismatched eta grids or sizes")
    up = np.array([s.rho_up for s in series])
    dn = np.array([s.rho_down for s in series])
    n = len(series)
    if n > 1:
        sem_up = up.std(axis=0, ddof=1) / np.sqrt(n)
        sem_dn = dn.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        sem_up = np.zeros_like(ref.rho_up)
        sem_dn = np.zeros_like(ref.rho_down)
    return DensitySeries(ref.etas.copy(), ref.times.copy(), up.mean(axis=0), dn.mean(axis=0), sem_up, sem_dn)


@dataclass
class RescaleFit:
    """Damping model (exp - nbar) = (b - a eta) (num - nbar).

    ``ratios`` holds the per-eta damping estimates, ``used`` marks the points
    entering the linear fit and ``residuals`` their deviations from it.
    """

    a: float
    b: float
    sigma_a: float = 0.0
    sigma_b: float = 0.0
    etas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    used: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def damping(self, eta) -> np.ndarray:
        return self.b - self.a * np.asarray(eta, dtype=float)


def fiducial(n_up: int, n_down: int, L: int) -> np.ndarray:
    """Average densities nbar_nu = N_nu / L as a (2,) array."""
    return np.array([n_up / L, n_down / L])


def damping_ratios(exp: DensitySeries, num: DensitySeries, n_up: int, n_down: int) -> np.ndarray:
    """Per-eta least-squares slope of (exp - nbar) against (num - nbar) over all sites and spins."""
    if exp.rho_up.shape != num.rho_up.shape:
        raise ValueError("series are not aligned")
    nbar = fiducial(n_up, n_down, exp.L)
    out = np.full(len(exp.etas), np.nan)
    for k in range(len(exp.etas)):
        x = np.concatenate([num.rho_up[k] - nbar[0], num.rho_down[k] - nbar[1]])
        y = np.concatenate([exp.rho_up[k] - nbar[0], exp.rho_down[k] - nbar[1]])
        ok = np.abs(x) >= FIDUCIAL_TOL
        if ok.any():
            out[k] = float(np.dot(x[ok], y[ok]) / np.dot(x[ok], x[ok]))
    return out


def fit_rescale(exp: DensitySeries, num: DensitySeries, n_up: int, n_down: int,
                cutoff: float = DAMPING_CUTOFF) -> RescaleFit:
    """Fit b - a eta to the damping ratios at steps where the damping is at least ``cutoff``."""
    ratios = damping_ratios(exp, num, n_up, n_down)
    etas = np.asarray(exp.etas, dtype=float)
    used = np.isfinite(ratios) & (ratios >= cutoff)
    if used.sum() < 2:
        raise ValueError("fewer than two usable eta points for the rescaling fit")
    x, y = etas[used], ratios[used]
    design = np.column_stack([np.ones_like(x), -x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    b, a = float(coef[0]), float(coef[1])
    resid = y - design @ coef
    dof = len(x) - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(design.T @ design)
        sig_b, sig_a = float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1]))
    else:
        sig_a = sig_b = 0.0
    return RescaleFit(a, b, sig_a, sig_b, etas, ratios, used, resid)


def apply_rescale(series: DensitySeries, fit: RescaleFit, n_up: int, n_down: int) -> DensitySeries:
    """n_rescaled = nbar + (n - nbar) / (b - a eta); sems scale by the same factor."""
    d = fit.damping(series.etas)
    if np.any(d <= MIN_RESCALE):
        bad = series.etas[d <= MIN_RESCALE]
        raise ValueError(f"damping factor <= {MIN_RESCALE} at eta={bad.tolist()}; refusing to rescale")
    nbar = fiducial(n_up, n_down, series.L)
    f = 1.0 / d[:, None]
    up = nbar[0] + (series.rho_up - nbar[0]) * f
    dn = nbar[1] + (series.rho_down - nbar[1]) * f
    su = None if series.sem_up is None else series.sem_up * f
    sd = None if series.sem_down is None else series.sem_down * f
    return DensitySeries(series.etas.copy(), series.times.copy(), up, dn, su, sd)


def damp(series: DensitySeries, fit: RescaleFit, n_up: int, n_down: int) -> DensitySeries:
    """Inverse of ``apply_rescale``: shrink deviations from the fiducial by b - a eta."""
    nbar = fiducial(n_up, n_down, series.L)
    f = fit.damping(series.etas)[:, None]
    return DensitySeries(series.etas.copy(), series.times.copy(), nbar[0] + (series.rho_up - nbar[0]) * f,
                         nbar[1] + (series.rho_down - nbar[1]) * f)
