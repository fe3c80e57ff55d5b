"""Two-qubit gate algebra: matrices, closed-form powers and native-gate decompositions.

Basis ordering for every 4x4 matrix is |q1 q2> = |00>, |01>, |10>, |11>, where
q1 is the first qubit of the pair. The excitation-number-conserving gates act
on the single-excitation block spanned by (|01>, |10>); in this module that
block is called the "swap block" and its Pauli matrices are written Xb, Zb.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)

FEASIBILITY_SLACK = 1e-12


class InfeasibleDecompositionError(ValueError):
    """The requested gate cannot be built from the given native gate."""


@dataclass(frozen=True)
class NcGateParams:
    """Angles of the general excitation-number-conserving gate U(theta, zeta, chi, gamma, phi)."""

    theta: float
    zeta: float = 0.0
    chi: float = 0.0
    gamma: float = 0.0
    phi: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.theta, self.zeta, self.chi, self.gamma, self.phi)

    def wrapped(self) -> "NcGateParams":
        """Phase angles reduced to [-pi, pi)."""
        w = lambda a: (a + math.pi) % (2 * math.pi) - math.pi  # noqa: E731
        return NcGateParams(self.theta, w(self.zeta), w(self.chi), w(self.gamma), w(self.phi))


@dataclass(frozen=True)
class NativeGateParams:
    """Hardware entangler K(vartheta) CPHASE(varphi)."""

    vartheta: float = math.pi / 4
    varphi: float = 0.0

    def __post_init__(self):
        if abs(self.vartheta - math.pi / 4) >= 0.2:
            raise ValueError(f"vartheta={self.vartheta} is not close to pi/4")
        if not 0.0 <= self.varphi < math.pi / 4:
            raise ValueError(f"varphi={self.varphi} outside [0, pi/4)")


IDEAL_NATIVE = NativeGateParams(math.pi / 4, 0.0)


@dataclass(frozen=True)
class PlacedGate:
    """One gate inside a two-qubit plan; qubits are local (0 = first, 1 = second)."""

    name: str  # "RZ", "RX" or "NATIVE"
    qubits: tuple[int, ...]
    angle: float = 0.0


@dataclass
class DecompositionPlan:
    """Native-gate realization of a target two-qubit gate.

    For swap-block targets (K, Givens, iSWAP) ``alpha`` holds the middle Z angle
    between the two native gates and ``xi1``/``xi2`` are zero. For CPHASE they
    are the microwave and X-rotation angles of the Schmidt-matching
    construction. ``residual`` is the distance of the ideal-native replay from
    the target; it is nonzero only when the target was out of reach and the
    middle angle had to be clamped.
    """

    target: str
    angle: float
    native: NativeGateParams
    alpha: float
    xi1: float
    xi2: float
    residual_z: tuple[float, float]
    gate_sequence: list[PlacedGate] = field(default_factory=list)
    residual: float = 0.0

    @property
    def native_count(self) -> int:
        return sum(g.name == "NATIVE" for g in self.gate_sequence)

    @property
    def microwave_count(self) -> int:
        return sum(g.name == "RX" for g in self.gate_sequence)

    @property
    def rz_count(self) -> int:
        return sum(
            g.name == "RZ" and abs(math.remainder(g.angle, 2 * math.pi)) > 1e-12
            for g in self.gate_sequence
        )

    def replay(self, native_matrix: np.ndarray | None = None) -> np.ndarray:
        """Multiply out the sequence; ``native_matrix`` overrides the native gate."""
        if native_matrix is None:
            native_matrix = native_gate(self.native)
        out = np.eye(4, dtype=complex)
        for g in self.gate_sequence:
            out = _placed_matrix(g, native_matrix) @ out
        return out


# ---------------------------------------------------------------------------
# Elementary matrices
# ---------------------------------------------------------------------------


def rz(z: float) -> np.ndarray:
    """Z rotation diag(1, e^{iz})."""
    return np.array([[1, 0], [0, np.exp(1j * z)]], dtype=complex)


def rx(xi: float) -> np.ndarray:
    """X rotation exp(-i xi X / 2)."""
    c, s = math.cos(xi / 2), math.sin(xi / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def rz2(z1: float, z2: float) -> np.ndarray:
    return np.diag([1, np.exp(1j * z2), np.exp(1j * z1), np.exp(1j * (z1 + z2))])


def _from_block(block: np.ndarray, p00: complex = 1.0, p11: complex = 1.0) -> np.ndarray:
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = p00
    u[1:3, 1:3] = block
    u[3, 3] = p11
    return u


def k_gate(theta: float) -> np.ndarray:
    """Hopping gate exp(-i theta (XX + YY) / 2)."""
    c, s = math.cos(theta), math.sin(theta)
    return _from_block(np.array([[c, -1j * s], [-1j * s, c]]))


def iswap() -> np.ndarray:
    return k_gate(-math.pi / 2)


def cphase(phi: float) -> np.ndarray:
    """diag(1, 1, 1, e^{-i phi})."""
    return np.diag([1, 1, 1, np.exp(-1j * phi)]).astype(complex)


def givens(theta: float) -> np.ndarray:
    """Real rotation of the swap block; |10> -> cos|10> - sin|01>."""
    c, s = math.cos(theta), math.sin(theta)
    return _from_block(np.array([[c, -s], [s, c]], dtype=complex))


def fsim(vartheta: float, varphi: float) -> np.ndarray:
    """F(vartheta, varphi) = exp(-i vartheta (XX+YY)/2 - i varphi ZZ/4)."""
    c, s = math.cos(vartheta), math.sin(vartheta)
    outer = np.exp(-0.25j * varphi)
    inner = np.exp(0.25j * varphi)
    return _from_block(inner * np.array([[c, -1j * s], [-1j * s, c]]), outer, outer)


def native_gate(native: NativeGateParams) -> np.ndarray:
    return k_gate(native.vartheta) @ cphase(native.varphi)


def nc_gate_matrix(p: NcGateParams) -> np.ndarray:
    th, ze, ch, ga, ph = p.as_tuple()
    c, s = math.cos(th), math.sin(th)
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = 1
    u[1, 1] = np.exp(-1j * (ga + ze)) * c
    u[1, 2] = -1j * np.exp(-1j * (ga - ch)) * s
    u[2, 1] = -1j * np.exp(-1j * (ga + ch)) * s
    u[2, 2] = np.exp(-1j * (ga - ze)) * c
    u[3, 3] = np.exp(-1j * (2 * ga + ph))
    return u


def rabi_omega(theta: float, zeta: float) -> float:
    return math.acos(max(-1.0, min(1.0, math.cos(theta) * math.cos(zeta))))


def chebyshev_lambda(n: int, omega: float) -> float:
    """sin(n omega) / sin(omega), continuous through sin(omega) = 0.

    Uses the Chebyshev recurrence U_{k+1} = 2 cos(omega) U_k - U_{k-1}, which is
    the removable-singularity-free form of the ratio.
    """
    c = math.cos(omega)
    prev, cur = 0.0, 1.0  # U_{-1}, U_0 with U_{n-1}(cos w) = sin(n w)/sin(w)
    for _ in range(n - 1):
        prev, cur = cur, 2 * c * cur - prev
    return cur if n >= 1 else 0.0


def nc_block_power(theta: float, zeta: float, chi: float, n: int) -> np.ndarray:
    """Closed form of u(theta, zeta, chi)^n on the swap block."""
    omega = rabi_omega(theta, zeta)
    lam = chebyshev_lambda(n, omega)
    cn = math.cos(n * omega)
    a = lam * math.cos(theta) * math.sin(zeta)
    b = lam * math.sin(theta)
    return np.array(
        [[cn - 1j * a, -1j * b * np.exp(1j * chi)], [-1j * b * np.exp(-1j * chi), cn + 1j * a]]
    )


def nc_gate_power(p: NcGateParams, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("power must be >= 1")
    th, ze, ch, ga, ph = p.as_tuple()
    block = np.exp(-1j * n * ga) * nc_block_power(th, ze, ch, n)
    return _from_block(block, 1.0, np.exp(-1j * n * (2 * ga + ph)))


def unitary_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Max-entry distance between u and v, minimized over a global phase of v."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)

    def dist(a: float) -> float:
        return float(np.max(np.abs(u - np.exp(1j * a) * v)))

    overlap = np.vdot(v, u)
    a0 = float(np.angle(overlap)) if abs(overlap) > 0 else 0.0
    d0 = dist(a0)
    if d0 < 1e-7:
        # near-equal matrices: the overlap phase is optimal to far below d0
        return d0
    cands = list(np.linspace(-math.pi, math.pi, 361)) + [a0]
    best = min(cands, key=dist)
    # golden-section refinement around the best candidate
    lo, hi = best - 2 * math.pi / 360, best + 2 * math.pi / 360
    g = (math.sqrt(5) - 1) / 2
    for _ in range(80):
        a, b = hi - g * (hi - lo), lo + g * (hi - lo)
        if dist(a) < dist(b):
            hi = b
        else:
            lo = a
    return min(dist(best), dist(0.5 * (lo + hi)))


# ---------------------------------------------------------------------------
# Decompositions
# ---------------------------------------------------------------------------


def _placed_matrix(g: PlacedGate, native_matrix: np.ndarray) -> np.ndarray:
    if g.name == "NATIVE":
        return native_matrix
    single = rz(g.angle) if g.name == "RZ" else rx(g.angle)
    return np.kron(single, I2) if g.qubits == (0,) else np.kron(I2, single)


def _zb_layer(x: float) -> list[PlacedGate]:
    """exp(-i x Zb) on the swap block, i.e. RZ(x) on the first and RZ(-x) on the second qubit."""
    return [PlacedGate("RZ", (0,), x), PlacedGate("RZ", (1,), -x)]


def _zxz_euler(m: np.ndarray) -> tuple[float, float, float]:
    """Angles (beta, gamma, delta) with m = exp(-i beta Z) exp(-i gamma X) exp(-i delta Z)."""
    gamma = math.atan2(abs(m[0, 1]), abs(m[0, 0]))
    s = -np.angle(m[0, 0]) if abs(m[0, 0]) > 1e-13 else 0.0
    d = -np.angle(1j * m[0, 1]) if abs(m[0, 1]) > 1e-13 else 0.0
    return 0.5 * (s + d), gamma, 0.5 * (s - d)


def _swap_block_plan(name: str, angle: float, target: np.ndarray,
                     native: NativeGateParams) -> DecompositionPlan:
    block = target[1:3, 1:3]
    beta, gamma, delta = _zxz_euler(block)
    s2v = math.sin(2 * native.vartheta)
    ca2 = math.sin(gamma) ** 2 / s2v**2
    a = math.acos(math.sqrt(min(1.0, ca2)))
    cv, sv = math.cos(native.vartheta), math.sin(native.vartheta)
    ev = np.array([[cv, -1j * sv], [-1j * sv, cv]])
    ea = np.diag([np.exp(-1j * a), np.exp(1j * a)])
    b, _, c = _zxz_euler(ev @ ea @ ev)
    seq = (
        _zb_layer(delta - c)
        + [PlacedGate("NATIVE", (0, 1))]
        + _zb_layer(a)
        + [PlacedGate("NATIVE", (0, 1))]
        + _zb_layer(beta - b)
    )
    plan = DecompositionPlan(name, angle, native, a, 0.0, 0.0, (0.0, 0.0), seq)
    ideal = NativeGateParams(native.vartheta, 0.0)
    plan.residual = unitary_distance(plan.replay(native_gate(ideal)), target)
    return plan


@lru_cache(maxsize=4096)
def decompose_k(theta: float, native: NativeGateParams = IDEAL_NATIVE) -> DecompositionPlan:
    """K(theta) from two native gates and Z rotations.

    The native's parasitic CPHASE commutes with every gate in the sequence, so
    the replay equals K(theta) CPHASE(2 varphi).
    """
    return _swap_block_plan("K", theta, k_gate(theta), native)


@lru_cache(maxsize=4096)
def decompose_givens(theta: float, native: NativeGateParams = IDEAL_NATIVE) -> DecompositionPlan:
    return _swap_block_plan("G", theta, givens(theta), native)


@lru_cache(maxsize=4096)
def decompose_iswap(native: NativeGateParams = IDEAL_NATIVE) -> DecompositionPlan:
    return _swap_block_plan("ISWAP", -math.pi / 2, iswap(), native)


def _sgn(x: float) -> float:
    return 1.0 if x >= 0 else -1.0


def cphase_feasible(phi: float, native: NativeGateParams) -> bool:
    s = abs(math.sin(phi / 4))
    lo, hi = sorted((abs(math.sin(native.varphi / 2)), abs(math.sin(native.vartheta))))
    return lo - FEASIBILITY_SLACK <= s <= hi + FEASIBILITY_SLACK


@lru_cache(maxsize=4096)
def decompose_cphase(phi: float, native: NativeGateParams = IDEAL_NATIVE) -> DecompositionPlan:
    """CPHASE(phi) from two native gates, three microwave layers and Z rotations.

    The two native gates are sandwiched around an X rotation of the first
    qubit so that the composite has the operator-Schmidt coefficients of
    CPHASE(phi); outer X rotations then align the Schmidt operators, and a
    final pair of Z rotations removes the leftover local phases.
    """
    vt, vp = native.vartheta, native.varphi
    # CPHASE(-|phi|) is CPHASE(|phi|) conjugated by X on the first qubit (up to
    # local Z), and that X folds into the outer microwave layers.
    flip = math.pi if phi < 0 else 0.0
    sp4, sh, sv = math.sin(abs(phi) / 4), math.sin(vp / 2), math.sin(vt)
    if not cphase_feasible(phi, native):
        raise InfeasibleDecompositionError(
            f"CPHASE({phi:.6g}) needs |sin(phi/4)| between |sin(varphi/2)| and |sin(vartheta)| "
            f"(|phi| >= 2|varphi| for native-like gates); got |sin(phi/4)|={abs(sp4):.6g}, "
            f"|sin(varphi/2)|={abs(sh):.6g}, |sin(vartheta)|={abs(sv):.6g}"
        )
    den = sv**2 - sh**2
    ratio = 1.0 if abs(den) < 1e-300 else (sp4**2 - sh**2) / den
    alpha = math.asin(math.sqrt(min(1.0, max(0.0, ratio))))
    ch = math.cos(vp / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.tan(alpha) if abs(alpha - math.pi / 2) > 1e-15 else np.inf
        xi1 = float(np.arctan(np.divide(ta * math.cos(vt), ch))) + 0.5 * math.pi * (1 - _sgn(ch))
        xi2 = float(np.arctan(np.divide(ta * sv, sh))) + 0.5 * math.pi * (1 - _sgn(sh))
    if math.isnan(xi2):  # alpha = 0 with sh = 0: Gamma_2 vanishes, any xi2 works
        xi2 = 0.0
    if math.isnan(xi1):
        xi1 = 0.0
    half = vp / 2
    xi1 += flip
    seq = [
        PlacedGate("RX", (0,), xi1),
        PlacedGate("RX", (1,), xi2),
        PlacedGate("NATIVE", (0, 1)),
        PlacedGate("RZ", (0,), half),
        PlacedGate("RZ", (1,), half),
        PlacedGate("RX", (0,), -2 * alpha),
        PlacedGate("RZ", (0,), math.pi),
        PlacedGate("NATIVE", (0, 1)),
        PlacedGate("RZ", (0,), half + math.pi),
        PlacedGate("RZ", (1,), half),
        PlacedGate("RX", (0,), xi1),
        PlacedGate("RX", (1,), -xi2),
        PlacedGate("RZ", (0,), -phi / 2),
        PlacedGate("RZ", (1,), -phi / 2),
    ]
    plan = DecompositionPlan("CPHASE", phi, native, alpha, xi1, xi2, (-phi / 2, -phi / 2), seq)
    plan.residual = unitary_distance(plan.replay(), cphase(phi))
    return plan


def schmidt_coefficients(u: np.ndarray) -> np.ndarray:
    """Operator-Schmidt coefficients of a two-qubit unitary, normalized to unit 2-norm."""
    r = np.asarray(u).reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    sv = np.linalg.svd(r, compute_uv=False)
    return sv / np.linalg.norm(sv)


@lru_cache(maxsize=4096)
def decompose_cphase_split(phi: float, native: NativeGateParams = IDEAL_NATIVE) -> DecompositionPlan:
    """CPHASE(phi) as CPHASE(phi1) CPHASE(phi - phi1) with both factors feasible.

    Used when phi itself is out of reach (|phi| < 2 varphi); costs four
    native gates instead of two. The choice of phi1 is the first value of a
    fixed list that makes both factors feasible.
    """
    for phi1 in (1.0, 1.2, 1.5, 0.8, 1.8, 2.1):
        phi2 = phi - phi1
        if cphase_feasible(phi1, native) and cphase_feasible(phi2, native):
            a, b = decompose_cphase(phi1, native), decompose_cphase(phi2, native)
            seq = list(a.gate_sequence) + list(b.gate_sequence)
            rz = (a.residual_z[0] + b.residual_z[0], a.residual_z[1] + b.residual_z[1])
            plan = DecompositionPlan("CPHASE", phi, native, a.alpha, a.xi1, a.xi2, rz, seq)
            plan.residual = unitary_distance(plan.replay(), cphase(phi))
            return plan
    raise InfeasibleDecompositionError(f"no feasible two-factor split for CPHASE({phi:.6g})")
