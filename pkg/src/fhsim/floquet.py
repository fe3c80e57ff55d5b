"""Floquet calibration of excitation-number-conserving two-qubit gates.

The unknown gate U(theta, zeta, chi, gamma, phi) is followed by programmable
Z offsets, U_c = U Rz(z1, z2), and the cycle is repeated n times inside three
short circuits. Oscillation phases grow linearly with n, so long cycles give
high-resolution estimates once shorter cycles have fixed the branch.

Offsets are parametrized by z_plus = (z1 + z2) / 2 and z_minus = (z1 - z2) / 2.
Outcome arrays are indexed by the two-qubit local index 2 b(q1) + b(q2).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .gates import NcGateParams, chebyshev_lambda, nc_block_power, nc_gate_matrix, rabi_omega, rx, rz2
from .mitigation import EmptyPostselectionError

THETA_ZETA, GAMMA_CHI, GAMMA_PHI = 1, 2, 3
CIRCUITS = (THETA_ZETA, GAMMA_CHI, GAMMA_PHI)
SIGN_THRESHOLD = 0.05
AMPLITUDE_FLOOR = 1e-6
GLOBAL_GRID = 2048
GLOBAL_MAX_N = 2
BASE_Z_MINUS = (math.pi / 4, 3 * math.pi / 4)
# p_n depends on zeta only through cos^2(zeta + z_minus); two offsets pi/2 apart
# see sin(2 zeta) alone, so the first runs add z_minus = 0 to fix the sign of cos(2 zeta)
EARLY_Z_MINUS = (0.0,) + BASE_Z_MINUS
# principal-region scores are chi-square(1) under the model; 25 is a 5 sigma excursion
PRINCIPAL_THRESHOLD = 25.0

_I2 = np.eye(2, dtype=complex)


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Cycle algebra and analytic probabilities
# ---------------------------------------------------------------------------


def rabi_angle(theta: float, zeta: float, z_minus: float) -> float:
    """Omega_c = arccos(cos(theta) cos(zeta + z_minus)), always in [theta, pi - theta]."""
    return rabi_omega(theta, zeta + z_minus)


def cycle_params(p: NcGateParams, z_minus: float, z_plus: float) -> NcGateParams:
    """Parameters of U_c: zeta + z-, chi + z-, gamma - z+ with theta and phi unchanged."""
    return NcGateParams(p.theta, p.zeta + z_minus, p.chi + z_minus, p.gamma - z_plus, p.phi)


def cycle_unitary(p: NcGateParams, z_minus: float, z_plus: float) -> np.ndarray:
    return nc_gate_matrix(p) @ rz2(z_plus + z_minus, z_plus - z_minus)


def cycle_eigensystem(p: NcGateParams) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenphases and eigenvectors of the swap block.

    The block is e^{-i gamma}(cos(Omega) - i sin(Omega) n.sigma) with n at
    polar angle s = arccot(cot(theta) sin(zeta)) and azimuth -chi, so
    U|psi_pm> = exp(-i (gamma +- Omega)) |psi_pm>. Returns (phases, vectors)
    with the eigenvectors as columns.
    """
    omega = rabi_omega(p.theta, p.zeta)
    s = math.atan2(math.sin(p.theta), math.cos(p.theta) * math.sin(p.zeta))
    c2, s2 = math.cos(s / 2), math.sin(s / 2)
    e = np.exp(-1j * p.chi)
    plus = np.array([c2, e * s2])
    minus = np.array([s2, -e * c2])
    phases = np.array([p.gamma + omega, p.gamma - omega])
    return phases, np.column_stack([plus, minus])


def sign_lambda(theta: float, zeta: float, z_minus: float, n: int) -> float:
    """sgn of sin(n Omega_c) / sin(Omega_c); zero when below the confidence threshold."""
    omega = rabi_angle(theta, zeta, z_minus)
    if abs(math.sin(n * omega)) < SIGN_THRESHOLD:
        return 0.0
    return float(np.sign(chebyshev_lambda(n, omega)))


def circuit1_probability(p: NcGateParams, z_minus: float, n: int) -> float:
    """Probability of |10> after preparing |01> and applying n cycles."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lam = chebyshev_lambda(n, rabi_angle(p.theta, p.zeta, z_minus))
    return float((lam * math.sin(p.theta)) ** 2)


def _block(p: NcGateParams, z_minus: float, n: int) -> np.ndarray:
    return nc_block_power(p.theta, p.zeta + z_minus, p.chi + z_minus, n)


def circuit2_probabilities(p: NcGateParams, z_minus: float, z_plus: float, n: int) -> tuple[float, float]:
    """(p_n, q_n) for the gamma/chi circuit: p_n = P(00), q_n = P(01) = P(11)."""
    b = _block(p, z_minus, n)
    g = n * (p.gamma - z_plus)
    pn = abs(1 - np.exp(-1j * g) * b[1, 0]) ** 2 / 4
    qn = abs(b[0, 0]) ** 2 / 4
    return float(pn), float(qn)


def circuit3_probabilities(p: NcGateParams, z_minus: float, z_plus: float, n: int) -> tuple[float, float]:
    """(p_n, q_n) for the gamma+phi circuit: p_n = P(10), q_n = P(00) = P(01)."""
    b = _block(p, z_minus, n)
    g = n * (p.gamma - z_plus + p.phi)
    pn = abs(1 - np.exp(1j * g) * b[1, 0]) ** 2 / 4
    qn = abs(b[0, 0]) ** 2 / 4
    return float(pn), float(qn)


def phase_cosine(p_n: float, q_n: float) -> float:
    """cos(mu_n) = (1 - 2 (p_n + q_n)) / sqrt(1 - 4 q_n); NaN when the amplitude vanishes."""
    amp2 = 1 - 4 * q_n
    if amp2 < AMPLITUDE_FLOOR:
        return float("nan")
    return float((1 - 2 * (p_n + q_n)) / math.sqrt(amp2))


def mu_offset(circuit: int, n: int, z_minus: float, z_plus: float, sign: float) -> float:
    """Setting-dependent part of mu_n."""
    if circuit == GAMMA_CHI:
        return -n * z_plus + z_minus + 0.5 * math.pi * sign
    if circuit == GAMMA_PHI:
        return n * z_plus + z_minus + 0.5 * math.pi * sign
    raise ValueError(f"no phase model for circuit {circuit}")


def mu_model(circuit: int, x: float, y: float, n: int, z_minus: float, z_plus: float, sign: float) -> float:
    """mu_n = n x + y + offset (circuit 2, x = gamma) or -n x + y + offset (circuit 3, x = gamma + phi)."""
    slope = n if circuit == GAMMA_CHI else -n
    return slope * x + y + mu_offset(circuit, n, z_minus, z_plus, sign)


# ---------------------------------------------------------------------------
# Synthetic shot source
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleSetting:
    n: int
    z_minus: float = 0.0
    z_plus: float = 0.0
    shots: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")


@dataclass(frozen=True)
class DecoherenceBudget:
    """Per-cycle decay rates lambda = gate_time / T."""

    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("decay rates must be nonnegative")

    @classmethod
    def from_times(cls, gate_time: float, t1: float, t2: float) -> "DecoherenceBudget":
        return cls(gate_time / t1, gate_time / t2)


_PREP = {
    THETA_ZETA: (_I2, rx(math.pi)),
    GAMMA_CHI: (_I2, rx(math.pi / 2)),
    GAMMA_PHI: (rx(math.pi / 2), rx(math.pi)),
}
_POST = {
    THETA_ZETA: (_I2, _I2),
    GAMMA_CHI: (rx(math.pi / 2), _I2),
    GAMMA_PHI: (_I2, rx(math.pi / 2)),
}


def _channel_superop(budget: DecoherenceBudget) -> np.ndarray:
    """Row-major vectorized damping plus dephasing on both qubits for one cycle."""
    g = 1 - math.exp(-budget.lambda1)
    pz = (1 - math.exp(-budget.lambda2)) / 2
    k0 = np.array([[1, 0], [0, math.sqrt(1 - g)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(g)], [0, 0]], dtype=complex)
    zz = np.diag([1.0, -1.0]).astype(complex)
    single = [k0, k1]
    deph = [math.sqrt(1 - pz) * _I2, math.sqrt(pz) * zz]
    kraus = [d @ k for k in single for d in deph]
    return sum(np.kron(np.kron(ka, kb), np.kron(ka, kb).conj()) for ka in kraus for kb in kraus)


def circuit_probabilities(p: NcGateParams, circuit: int, setting: CycleSetting,
                          budget: DecoherenceBudget | None = None) -> np.ndarray:
    """Exact outcome distribution (no readout error) from 4x4 density-matrix evolution."""
    if circuit not in CIRCUITS:
        raise ValueError(f"unknown circuit {circuit}")
    pre = np.kron(*_PREP[circuit])
    post = np.kron(*_POST[circuit])
    u = cycle_unitary(p, setting.z_minus, setting.z_plus)
    psi = pre[:, 0]
    if budget is None or (budget.lambda1 == 0 and budget.lambda2 == 0):
        out = post @ np.linalg.matrix_power(u, setting.n) @ psi
        probs = np.abs(out) ** 2
    else:
        step = _channel_superop(budget) @ np.kron(u, u.conj())
        rho = np.outer(psi, psi.conj()).reshape(16)
        rho = (np.linalg.matrix_power(step, setting.n) @ rho).reshape(4, 4)
        probs = np.real(np.diag(post @ rho @ post.conj().T))
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


class PairSampler:
    """Shot source for one qubit pair.

    ``params`` is either fixed NcGateParams or a callable of wall-clock time
    (seconds) for drifting devices; ``time_s`` is read at every query.
    Readout flips are applied independently per qubit with p(1->0) = p10 and
    p(0->1) = p01.
    """

    def __init__(self, params: NcGateParams | Callable[[float], NcGateParams], p10: float = 0.0,
                 p01: float = 0.0, budget: DecoherenceBudget | None = None, seed=None):
        if not (0 <= p10 <= 0.2 and 0 <= p01 <= 0.2):
            raise ValueError("readout flip probabilities must lie in [0, 0.2]")
        self._params = params
        self.p10, self.p01 = p10, p01
        self.budget = budget
        self.rng = np.random.default_rng(seed)
        self.time_s = 0.0
        self.shots_used = 0
        c = np.array([[1 - p01, p10], [p01, 1 - p10]])
        self._confusion = np.kron(c, c)

    def params(self) -> NcGateParams:
        return self._params(self.time_s) if callable(self._params) else self._params

    def probabilities(self, circuit: int, setting: CycleSetting) -> np.ndarray:
        probs = self._confusion @ circuit_probabilities(self.params(), circuit, setting, self.budget)
        return probs / probs.sum()

    def sample(self, circuit: int, setting: CycleSetting) -> np.ndarray:
        self.shots_used += setting.shots
        return self.rng.multinomial(setting.shots, self.probabilities(circuit, setting))


# ---------------------------------------------------------------------------
# Schedules and offset choices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Cycle repetition numbers and the window policy of the cost functions.

    Runs with n < ``early_cutoff`` pool every earlier run; later runs keep
    the last ``fixed_terms`` runs and the final run keeps ``final_terms``.
    """

    r: float
    K: int
    ns: tuple[int, ...]
    early_cutoff: int = 8
    fixed_terms: int = 4
    final_terms: int = 2

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise ValueError("schedule must be strictly increasing")
        if not self.ns or self.ns[0] < 1:
            raise ValueError("schedule entries must be >= 1")

    def window(self, k: int) -> tuple[int, ...]:
        """Indices of the runs entering the cost at step k."""
        if self.ns[k] < self.early_cutoff:
            return tuple(range(k + 1))
        terms = self.final_terms if k == len(self.ns) - 1 else self.fixed_terms
        return tuple(range(max(0, k - terms + 1), k + 1))


def _setwise_coprime(ns: list[int]) -> list[int]:
    out = list(ns)
    for i in range(2, len(out)):
        while math.gcd(math.gcd(out[i - 2], out[i - 1]), out[i]) != 1:
            out[i] += 1
        for j in range(i + 1, len(out)):
            if out[j] <= out[j - 1]:
                out[j] = out[j - 1] + 1
    return out


def make_schedule(r: float, K: int, coprime: bool = False, **window) -> Schedule:
    """{ceil(r^k) : k < K}, deduplicated.

    With ``coprime`` every consecutive triple is nudged upward until it is
    setwise coprime, which keeps whole blocks of cost terms from vanishing
    together at spurious phases.
    """
    if r <= 1:
        raise ValueError("growth factor r must exceed 1")
    if K < 2:
        raise ValueError("need at least two runs")
    ns = sorted({math.ceil(r ** k - 1e-9) for k in range(K)})
    if coprime:
        ns = _setwise_coprime(ns)
    return Schedule(r, K, tuple(ns), **window)


def _z_for_omega(theta: float, zeta: float, omega: float, near: float) -> float:
    """z_minus with Omega_c = omega on the branch closest to ``near``."""
    ratio = np.clip(math.cos(omega) / math.cos(theta), -1.0, 1.0) if math.cos(theta) > 1e-12 else 0.0
    a = math.acos(ratio)
    cands = [a - zeta, -a - zeta]
    cands = [near + _wrap(c - near) for c in cands]
    return float(min(cands, key=lambda c: abs(c - near)))


def choose_z_minus(theta: float, zeta: float, n: int) -> tuple[float, float]:
    """Two z_minus values near pi/4 and 3pi/4 with n Omega_c = pi/4 (mod pi/2).

    That condition puts sin^2(n Omega_c) on its steepest slope. Near theta =
    pi/2 the Rabi angle no longer depends on z_minus and the base points are
    returned unchanged.
    """
    if math.cos(theta) < 1e-6:
        return BASE_Z_MINUS
    lo, hi = theta, math.pi - theta
    out = []
    for base in BASE_Z_MINUS:
        om0 = rabi_angle(theta, zeta, base)
        k = round((n * om0 - math.pi / 4) / (math.pi / 2))
        targets = [(math.pi / 4 + j * math.pi / 2) / n for j in (k - 1, k, k + 1)]
        targets = [t for t in targets if lo <= t <= hi] or [om0]
        target = min(targets, key=lambda t: abs(t - om0))
        out.append(_z_for_omega(theta, zeta, target, base))
    return out[0], out[1]


def fallback_z_minus(theta: float, n: int, count: int = 3) -> list[float]:
    """Non-adaptive grid: equidistant points in pi/4 +- w/n and 3pi/4 +- w/n, w = pi / (2 cos theta)."""
    w = math.pi / (2 * max(math.cos(theta), 1e-6))
    half = min(w / n, math.pi / 4)
    offs = np.linspace(-half, half, count)
    return [float(b + o) for b in BASE_Z_MINUS for o in offs]


def amplitude_z_minus(theta: float, zeta: float, n: int) -> float:
    """z_minus maximizing |<1|u_c^n|0>| = |sin(n Omega_c) sin(theta) / sin(Omega_c)|.

    Omega_c ranges over [theta, pi - theta]; the ratio is maximized on a
    fine grid of that interval, which lands next to the smallest Omega_c with
    n Omega_c = pi/2 (mod pi) whenever one exists.
    """
    omegas = np.linspace(theta, math.pi - theta, 4001)
    amp = np.abs(np.sin(n * omegas) / np.maximum(np.sin(omegas), 1e-12))
    omega = float(omegas[int(np.argmax(amp))])
    return _z_for_omega(theta, zeta, omega, math.pi / 2 - zeta)


def choose_z_plus(circuit: int, x: float, y: float, n: int, z_minus: float, sign: float) -> tuple[float, float]:
    """Two z_plus values putting mu_n at pi/2 and 3pi/2.

    Both sit on zero crossings of cos(mu_n), where |dp_n/dmu_n| is largest and
    a readout-induced contrast loss does not shift the fitted phase.
    """
    base = mu_model(circuit, x, y, n, z_minus, 0.0, sign)
    slope = -n if circuit == GAMMA_CHI else n
    z0 = float(_wrap(math.pi / 2 - base)) / slope
    return z0, z0 + math.pi / slope


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass
class TraceRecord:
    circuit: int
    n: int
    z_minus: float
    z_plus: float
    shots: int
    counts: tuple[int, int, int, int]
    p_hat: float
    q_hat: float
    sign: float = 0.0

    @property
    def c_hat(self) -> float:
        return phase_cosine(self.p_hat, self.q_hat)


def _record(circuit: int, setting: CycleSetting, counts: np.ndarray, sign: float = 0.0) -> TraceRecord:
    c = np.asarray(counts, dtype=int)
    m = int(c.sum())
    if circuit == THETA_ZETA:
        kept = int(c[1] + c[2])
        if kept == 0:
            raise EmptyPostselectionError(f"no single-excitation shots at n={setting.n}")
        p_hat, q_hat = c[2] / kept, float("nan")
    elif circuit == GAMMA_CHI:
        p_hat, q_hat = c[0] / m, (c[1] + c[3]) / (2 * m)
    else:
        p_hat, q_hat = c[2] / m, (c[0] + c[1]) / (2 * m)
    return TraceRecord(circuit, setting.n, setting.z_minus, setting.z_plus, setting.shots,
                       tuple(int(v) for v in c), float(p_hat), float(q_hat), sign)


def _c1_model(x: Sequence[float], n: np.ndarray, zm: np.ndarray) -> np.ndarray:
    theta, zeta = x
    om = np.arccos(np.clip(np.cos(theta) * np.cos(zeta + zm), -1.0, 1.0))
    s = np.sin(om)
    safe = np.abs(s) > 1e-12
    lam = np.where(safe, np.sin(n * om) / np.where(safe, s, 1.0), n * np.cos((n - 1) * om))
    return np.abs(lam * np.sin(theta))


def theta_zeta_cost(x, records: Sequence[TraceRecord]) -> float:
    """Sum of (|sin(m Omega_c) sin(x) / sin(Omega_c)| - sqrt(p_hat))^2 over the records."""
    n = np.array([r.n for r in records], dtype=float)
    zm = np.array([r.z_minus for r in records])
    ph = np.array([r.p_hat for r in records])
    return float(np.sum((_c1_model(x, n, zm) - np.sqrt(ph)) ** 2))


def _nelder_mead(fun, x0, bounds, tol=1e-13):
    res = minimize(fun, x0, method="Nelder-Mead", bounds=bounds,
                   options={"xatol": tol, "fatol": 1e-16, "maxiter": 4000, "maxfev": 8000})
    return np.asarray(res.x, dtype=float)


def _weighted_cov(resid_fn, x: np.ndarray, sigma: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """(J^T W J)^-1 for residuals with known standard deviations."""
    r0 = resid_fn(x)
    jac = np.empty((len(r0), len(x)))
    for i in range(len(x)):
        dx = np.zeros_like(x)
        dx[i] = h
        jac[:, i] = (resid_fn(x + dx) - resid_fn(x - dx)) / (2 * h)
    w = jac / sigma[:, None]
    info = w.T @ w
    try:
        return np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.full((len(x), len(x)), np.inf)


def estimate_theta_zeta(records: Sequence[TraceRecord], prior: tuple[float, float] | None = None
                        ) -> tuple[float, float, np.ndarray]:
    """(theta, zeta, covariance) minimizing the circuit-1 cost.

    Without a prior the minimum is located on a 2048-point (theta, zeta)
    grid and polished locally; with a prior the search is confined to
    +- pi / (2 n_max) around it.
    """
    recs = [r for r in records if r.circuit == THETA_ZETA]
    if not recs:
        raise ValueError("no circuit-1 records")
    informative = [r for r in recs if r.n >= 2]
    if len({round(r.z_minus, 12) for r in informative}) < 2:
        raise ValueError("need at least two distinct z_minus values at n >= 2 to separate theta and zeta")
    n = np.array([r.n for r in recs], dtype=float)
    zm = np.array([r.z_minus for r in recs])
    ph = np.array([r.p_hat for r in recs])
    sq = np.sqrt(ph)

    def cost(x):
        return float(np.sum((_c1_model(x, n, zm) - sq) ** 2))

    # divergence guard: Omega_c must respond to both parameters somewhere
    def domega(theta, zeta):
        c = np.cos(theta) * np.cos(zeta + zm)
        s = np.sqrt(np.clip(1 - c ** 2, 1e-30, None))
        return np.sin(theta) * np.cos(zeta + zm) / s, np.cos(theta) * np.sin(zeta + zm) / s

    n_max = int(n.max())
    if prior is None:
        thetas = (np.arange(32) + 0.5) * (math.pi / 2) / 32
        zetas = -math.pi / 2 + (np.arange(64) + 0.5) * math.pi / 64
        grid = np.array([[cost((t, z)) for z in zetas] for t in thetas])
        i, j = np.unravel_index(np.argmin(grid), grid.shape)
        x0 = np.array([thetas[i], zetas[j]])
        bounds = [(max(0.0, x0[0] - math.pi / 32), min(math.pi / 2, x0[0] + math.pi / 32)),
                  (x0[1] - math.pi / 32, x0[1] + math.pi / 32)]
    else:
        x0 = np.array(prior, dtype=float)
        w = math.pi / (2 * n_max)
        bounds = [(max(0.0, x0[0] - w), min(math.pi / 2, x0[0] + w)), (x0[1] - w, x0[1] + w)]
    x = _nelder_mead(cost, x0, bounds)
    dt, dz = domega(*x)
    if np.all(np.abs(dt) < 1e-9) or np.all(np.abs(dz) < 1e-9):
        raise ValueError("Rabi angle insensitive to theta or zeta at every setting")
    sigma = np.sqrt((1 - ph + 1.0 / np.array([r.shots for r in recs])) / (4 * np.array([r.shots for r in recs])))
    cov = _weighted_cov(lambda v: _c1_model(v, n, zm) - sq, x, sigma)
    return float(x[0]), float(x[1]), cov


def _phase_arrays(records: Sequence[TraceRecord]):
    n = np.array([r.n for r in records], dtype=float)
    off = np.array([mu_offset(r.circuit, r.n, r.z_minus, r.z_plus, r.sign) for r in records])
    slope = np.array([r.n if r.circuit == GAMMA_CHI else -r.n for r in records], dtype=float)
    c = np.array([r.c_hat for r in records])
    m = np.array([r.shots for r in records], dtype=float)
    amp2 = np.array([1 - 4 * r.q_hat for r in records])
    ph = np.array([r.p_hat for r in records])
    var = (4 * ph * (1 - ph) + 1.0 / m) / (m * np.clip(amp2, AMPLITUDE_FLOOR, None))
    return n, off, slope, c, np.sqrt(var)


def usable_phase_records(records: Sequence[TraceRecord], circuit: int) -> list[TraceRecord]:
    """Records whose phase is observable: amplitude above floor and sgn Lambda_n resolved."""
    return [r for r in records if r.circuit == circuit and r.sign != 0 and np.isfinite(r.c_hat)]


def estimate_phase_pair(records: Sequence[TraceRecord], circuit: int,
                        prior: tuple[float, float] | None = None) -> tuple[float, float, np.ndarray]:
    """(x, y, covariance) minimizing sum (cos(mu_n(x, y)) - c_hat)^2.

    For circuit 2 x = gamma and for circuit 3 x = gamma + phi; y = chi in both.
    """
    recs = usable_phase_records(records, circuit)
    if len(recs) < 2:
        raise ValueError("fewer than two usable phase records")
    _, off, slope, c, sigma = _phase_arrays(recs)

    w = 1.0 / sigma ** 2
    w = w / w.mean()

    def resid(v):
        return np.cos(slope * v[0] + v[1] + off) - c

    def cost(v):
        return float(np.sum(w * resid(v) ** 2))

    n_max = int(np.abs(slope).max())
    if prior is None:
        xs = -math.pi + (np.arange(64) + 0.5) * 2 * math.pi / 64
        ys = -math.pi + (np.arange(32) + 0.5) * 2 * math.pi / 32
        grid = np.array([[cost((a, b)) for b in ys] for a in xs])
        i, j = np.unravel_index(np.argmin(grid), grid.shape)
        x0 = np.array([xs[i], ys[j]])
        bounds = [(x0[0] - math.pi / 32, x0[0] + math.pi / 32), (x0[1] - math.pi / 16, x0[1] + math.pi / 16)]
    else:
        x0 = np.array(prior, dtype=float)
        w = math.pi / (2 * n_max)
        bounds = [(x0[0] - w, x0[0] + w), (x0[1] - math.pi / 4, x0[1] + math.pi / 4)]
    v = _nelder_mead(cost, x0, bounds)
    cov = _weighted_cov(resid, v, sigma)
    return float(v[0]), float(v[1]), cov


def circuit2_estimate(records: Sequence[TraceRecord], prior=None) -> tuple[float, float, np.ndarray]:
    """(gamma, chi, covariance) from circuit-2 records."""
    return estimate_phase_pair(records, GAMMA_CHI, prior)


def circuit3_estimate(records: Sequence[TraceRecord], gamma: float, gamma_var: float = 0.0,
                      prior=None) -> tuple[float, float, float, np.ndarray]:
    """(phi, phi standard error, chi, covariance of (gamma + phi, chi)) from circuit-3 records."""
    s, chi, cov = estimate_phase_pair(records, GAMMA_PHI, prior)
    phi = float(_wrap(s - gamma))
    return phi, float(math.sqrt(cov[0, 0] + gamma_var)), chi, cov


def joint_phase_fit(records: Sequence[TraceRecord], prior: tuple[float, float, float]
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Refine (gamma, phi, chi) using circuits 2 and 3 together with a shared chi."""
    r2 = usable_phase_records(records, GAMMA_CHI)
    r3 = usable_phase_records(records, GAMMA_PHI)
    n2, off2, sl2, c2, s2 = _phase_arrays(r2)
    n3, off3, sl3, c3, s3 = _phase_arrays(r3)
    sigma = np.concatenate([s2, s3])
    w = 1.0 / sigma ** 2
    w = w / w.mean()

    def resid(v):
        g, ph, ch = v
        return np.concatenate([np.cos(sl2 * g + ch + off2) - c2, np.cos(sl3 * (g + ph) + ch + off3) - c3])

    def cost(v):
        return float(np.sum(w * resid(v) ** 2))

    x0 = np.array(prior, dtype=float)
    w = math.pi / (2 * max(n2.max(), n3.max()))
    bounds = [(x0[0] - w, x0[0] + w), (x0[1] - w, x0[1] + w), (x0[2] - math.pi / 4, x0[2] + math.pi / 4)]
    v = _nelder_mead(cost, x0, bounds)
    return v, _weighted_cov(resid, v, sigma)


# ---------------------------------------------------------------------------
# End-to-end calibration
# ---------------------------------------------------------------------------


@dataclass
class CalEstimate:
    theta: float
    zeta: float
    chi: float
    gamma: float
    phi: float
    theta_se: float
    zeta_se: float
    chi_se: float
    gamma_se: float
    phi_se: float
    trace: list[TraceRecord] = field(default_factory=list)
    principal_region_ok: bool = True
    max_deviation: float = 0.0
    shots: int = 0
    wall_clock_s: float = 0.0

    def params(self) -> NcGateParams:
        return NcGateParams(self.theta, self.zeta, self.chi, self.gamma, self.phi)

    def errors(self, truth: NcGateParams) -> dict[str, float]:
        est = self.params().as_tuple()
        names = ("theta", "zeta", "chi", "gamma", "phi")
        return {k: float(abs(_wrap(a - b))) for k, a, b in zip(names, est, truth.as_tuple())}


def principal_region_check(records: Sequence[TraceRecord], est: NcGateParams) -> tuple[bool, float]:
    """Compare the final estimate's predictions with every run.

    Circuit-1 runs are scored with 8 M H^2, H the Hellinger distance between
    predicted and observed Bernoulli outcomes, and phase runs with the squared
    standardized residual of cos(mu_n). Both are asymptotically chi-square
    with one degree of freedom; returns (all below threshold, worst score).
    """
    worst = 0.0
    for r in records:
        if r.circuit == THETA_ZETA:
            p = circuit1_probability(est, r.z_minus, r.n)
            kept = r.counts[1] + r.counts[2]
            h2 = 1 - (math.sqrt(p * r.p_hat) + math.sqrt((1 - p) * (1 - r.p_hat)))
            stat = 8 * kept * max(h2, 0.0)
        else:
            if r.sign == 0 or not np.isfinite(r.c_hat):
                continue
            x = est.gamma if r.circuit == GAMMA_CHI else est.gamma + est.phi
            _, _, _, c, sigma = _phase_arrays([r])
            mu = mu_model(r.circuit, x, est.chi, r.n, r.z_minus, r.z_plus, r.sign)
            stat = float(((math.cos(mu) - c[0]) / sigma[0]) ** 2)
        worst = max(worst, stat)
    return worst <= PRINCIPAL_THRESHOLD, float(worst)


def calibrate(sampler, schedule: Schedule | None = None, shots: int = 1000) -> CalEstimate:
    """Run circuits 1, 2, 3 over the schedule with adaptive offsets.

    ``sampler.sample(circuit, CycleSetting)`` must return outcome counts of
    length 4. Circuit-1 fits follow the schedule's window policy; the phase
    fits pool every run, because chi enters each run as an offset that only
    the full spread of n separates from gamma.
    """
    t0 = time.perf_counter()
    schedule = schedule or make_schedule(1.9, 7)
    ns = schedule.ns
    trace: list[TraceRecord] = []

    # circuit 1: theta and zeta
    runs: list[list[TraceRecord]] = []
    est = None
    cov1 = np.zeros((2, 2))
    for k, n in enumerate(ns):
        zms = EARLY_Z_MINUS if (est is None or n <= GLOBAL_MAX_N) else choose_z_minus(est[0], est[1], n)
        batch = [_record(THETA_ZETA, s, sampler.sample(THETA_ZETA, s))
                 for s in (CycleSetting(n, zm, 0.0, shots) for zm in zms)]
        runs.append(batch)
        trace.extend(batch)
        pts = [r for i in schedule.window(k) for r in runs[i]]
        if len({round(r.z_minus, 12) for r in pts if r.n >= 2}) < 2:
            continue
        prior = None if n <= GLOBAL_MAX_N else (est[0], est[1])
        th, ze, cov1 = estimate_theta_zeta(pts, prior)
        est = (th, ze)
    theta, zeta = est

    # circuits 2 and 3: gamma, chi and gamma + phi
    phase_est: dict[int, tuple[float, float, np.ndarray]] = {}
    for circuit in (GAMMA_CHI, GAMMA_PHI):
        recs: list[TraceRecord] = []
        cur = None
        for n in ns:
            zm = amplitude_z_minus(theta, zeta, n)
            sign = sign_lambda(theta, zeta, zm, n)
            if cur is None:
                zps = (0.0, math.pi / (2 * n))
            else:
                zps = choose_z_plus(circuit, cur[0], cur[1], n, zm, sign if sign else 1.0)
            for zp in zps:
                s = CycleSetting(n, zm, zp, shots)
                rec = _record(circuit, s, sampler.sample(circuit, s), sign)
                recs.append(rec)
                trace.append(rec)
            if len(usable_phase_records(recs, circuit)) < 4:
                continue
            prior = None if (cur is None or n <= GLOBAL_MAX_N) else (cur[0], cur[1])
            x, y, cov = estimate_phase_pair(recs, circuit, prior)
            cur = (x, y, cov)
        phase_est[circuit] = cur
    gamma, chi2, cov2 = phase_est[GAMMA_CHI]
    s3, chi3, cov3 = phase_est[GAMMA_PHI]
    v, cov = joint_phase_fit(trace, (gamma, float(_wrap(s3 - gamma)), 0.5 * (chi2 + chi3)))
    gamma, phi, chi = float(_wrap(v[0])), float(_wrap(v[1])), float(_wrap(v[2]))

    def se(c, i):
        return float(max(math.sqrt(max(c[i, i], 0.0)), 1e-15))

    out = CalEstimate(theta, float(_wrap(zeta)), chi, gamma, phi,
                      se(cov1, 0), se(cov1, 1), se(cov, 2), se(cov, 0), se(cov, 1), trace)
    out.principal_region_ok, out.max_deviation = principal_region_check(trace, out.params())
    out.shots = sum(r.shots for r in trace)
    out.wall_clock_s = time.perf_counter() - t0
    return out


def calibration_report(est: CalEstimate, truth: NcGateParams | None = None) -> dict:
    names = ("theta", "zeta", "chi", "gamma", "phi")
    rep = {
        "estimates": {k: getattr(est, k) for k in names},
        "standard_errors": {k: getattr(est, k + "_se") for k in names},
        "principal_region_ok": est.principal_region_ok,
        "max_deviation": est.max_deviation,
        "shots": est.shots,
        "wall_clock_s": est.wall_clock_s,
        "trace": [asdict(r) for r in est.trace],
    }
    if truth is not None:
        rep["truth"] = dict(zip(names, truth.as_tuple()))
        rep["abs_errors"] = est.errors(truth)
    return rep


def write_report(est: CalEstimate, path, truth: NcGateParams | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(calibration_report(est, truth), fh, indent=2, default=float)
        fh.write("\n")


def track_drift(params_at: Callable[[float], NcGateParams], times: Sequence[float], shots: int = 1000,
                schedule: Schedule | None = None, seed: int = 0, p10: float = 0.0, p01: float = 0.0
                ) -> list[CalEstimate]:
    """Recalibrate at each wall-clock time with a fresh shot stream."""
    sampler = PairSampler(params_at, p10, p01, seed=seed)
    out = []
    for t in times:
        sampler.time_s = float(t)
        out.append(calibrate(sampler, schedule, shots))
    return out


# ---------------------------------------------------------------------------
# Decoherence-limited variance
# ---------------------------------------------------------------------------


def single_qubit_probability(phi: float, n: int, s: float, budget: DecoherenceBudget) -> float:
    """Probability of outcome + after n phase gates, an offset s and an X-basis readout."""
    q = (1 + math.exp(-n * budget.lambda2) * math.cos(n * phi + s)) / 2
    keep = math.exp(-n * budget.lambda1)
    return keep * q + (1 - keep) / 2


def single_qubit_variance(budget: DecoherenceBudget, n: int, shots: int, phi: float, s: float) -> float:
    """Chain-rule variance of the phase estimate from one offset s."""
    arg = n * phi + s
    num = math.exp(2 * n * budget.lambda1) - math.exp(-2 * n * budget.lambda2) * math.cos(arg) ** 2
    den = shots * n ** 2 * math.exp(-2 * n * budget.lambda2) * math.sin(arg) ** 2
    return math.inf if den == 0 else num / den


def variance_model(budget: DecoherenceBudget, n: int, shots: int, s: float | None = None,
                   phi: float = 0.0, two_qubit: bool = False, theta: float | None = None) -> float:
    """Upper bound on the per-n estimator variance.

    Single qubit: e^{2n(l1 + l2)} / (M n^2 sin^2(n phi + s)), with s = None
    meaning the offset-optimized value (sin^2 = 1). Two-qubit resonant case:
    e^{n(l1 + 4 l2)} / (4 M n^2 sin^2(2 n theta)), with theta = None again
    meaning the optimized value. Returns inf where the sine vanishes.
    """
    if n < 1 or shots < 1:
        raise ValueError("n and shots must be >= 1")
    l1, l2 = budget.lambda1, budget.lambda2
    if two_qubit:
        sin2 = 1.0 if theta is None else math.sin(2 * n * theta) ** 2
        expo, pref = n * (l1 + 4 * l2), 4.0
    else:
        sin2 = 1.0 if s is None else math.sin(n * phi + s) ** 2
        expo, pref = 2 * n * (l1 + l2), 1.0
    if sin2 < 1e-300:
        return math.inf
    return math.exp(expo) / (pref * shots * n ** 2 * sin2)


def optimal_repetitions(budget: DecoherenceBudget, two_qubit: bool = False) -> float:
    """n* = 1/(l1 + l2) for one qubit, 2/(l1 + 4 l2) for the resonant two-qubit case."""
    rate = budget.lambda1 + 4 * budget.lambda2 if two_qubit else budget.lambda1 + budget.lambda2
    if two_qubit:
        rate /= 2
    return math.inf if rate == 0 else 1.0 / rate


def fisher_combined(variances: Sequence[float]) -> float:
    """1/F = (sum 1/V_n)^-1."""
    inv = sum(1.0 / v for v in variances if np.isfinite(v) and v > 0)
    return math.inf if inv == 0 else 1.0 / inv


def fisher_weighted_phase(estimates: Sequence[float], variances: Sequence[float]) -> float:
    w = np.array([1.0 / v for v in variances])
    return float(np.dot(w, estimates) / w.sum())


def simulate_single_qubit_phase(phi: float, n: int, budget: DecoherenceBudget, shots: int,
                                trials: int, rng) -> np.ndarray:
    """Monte-Carlo phase estimates from the s = 0 and s = pi/2 experiments.

    Each trial draws binomial counts for both offsets, inverts the T1 mixing
    to get e^{-n l2} cos(n phi) and -e^{-n l2} sin(n phi), and unwraps
    n phi onto the branch nearest the truth.
    """
    rng = np.random.default_rng(rng)
    keep = math.exp(-n * budget.lambda1)
    p0 = single_qubit_probability(phi, n, 0.0, budget)
    p1 = single_qubit_probability(phi, n, math.pi / 2, budget)
    k0 = rng.binomial(shots, p0, trials) / shots
    k1 = rng.binomial(shots, p1, trials) / shots
    c = 2 * ((k0 - (1 - keep) / 2) / keep) - 1
    s = -(2 * ((k1 - (1 - keep) / 2) / keep) - 1)
    raw = np.arctan2(s, c)
    target = n * phi
    unwrapped = target + _wrap(raw - target)
    return unwrapped / n


def empirical_variance_curve(ns: Sequence[int], budget: DecoherenceBudget, shots: int = 1000,
                             trials: int = 2000, phi: float = 0.3, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([np.var(simulate_single_qubit_phase(phi, int(n), budget, shots, trials, rng), ddof=1)
                     for n in ns])


# ---------------------------------------------------------------------------
# Cost landscapes for repetition schedules
# ---------------------------------------------------------------------------


def ideal_phase_cost(ns: Sequence[int], phi: float, x) -> np.ndarray:
    """sum_m |e^{i m x} - e^{i m phi}|^2 over the schedule."""
    x = np.asarray(x, dtype=float)
    return sum(2 - 2 * np.cos(m * (x - phi)) for m in ns)


def local_minima(values: np.ndarray) -> np.ndarray:
    """Indices of strict local minima of a periodic sampled function."""
    v = np.asarray(values)
    return np.flatnonzero((v < np.roll(v, 1)) & (v < np.roll(v, -1)))


def spurious_minimum(ns: Sequence[int], phi: float = 0.0, points: int = 10_000) -> float:
    """Cost at the deepest local minimum other than the global one, on a uniform x grid."""
    x = -math.pi + 2 * math.pi * np.arange(points) / points
    c = ideal_phase_cost(ns, phi, x)
    idx = local_minima(c)
    glob = int(np.argmin(c))
    rest = [i for i in idx if i != glob]
    return float(min(c[i] for i in rest)) if rest else math.inf
