"""Fermi-Hubbard circuits: qubit layout, Givens-network state preparation and Trotter steps.

Conventions:
    * Sites are 0-indexed in code (site j here is site j+1 in the usual
      1-indexed labelling). "Odd bonds" (1,2),(3,4),... therefore are the
      0-indexed pairs (0,1),(2,3),...
    * Chain 0 holds spin up, chain 1 spin down. The Jordan-Wigner string of
      each chain runs over that chain only, in site order.
    * Register qubits are numbered 0..2L-1; the assignment maps (chain, site)
      to a register qubit and to a device label used for noise lookups.
    * Units: hbar = 1; energies in units of J when J = 1.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .gates import (
    IDEAL_NATIVE,
    DecompositionPlan,
    NativeGateParams,
    InfeasibleDecompositionError,
    cphase_feasible,
    decompose_cphase,
    decompose_cphase_split,
    decompose_givens,
    decompose_iswap,
    decompose_k,
)
from .qsim import ShotTable

UP, DOWN = 0, 1

# Per logical gate: depth in reference-table layers and duration in ns.
GATE_DEPTH = {"X": 1, "RZ": 0, "K": 4, "G": 4, "ISWAP": 4, "CPHASE": 7, "ECHO": 0}
GATE_TIME_NS = {"X": 25.0, "RZ": 0.0, "K": 64.0, "G": 64.0, "ISWAP": 64.0, "CPHASE": 139.0,
                "ECHO": 0.0}
TWO_QUBIT_KINDS = ("K", "G", "ISWAP", "CPHASE")


def _plan_scale(gate) -> float:
    """1 for the standard two-native plans, 2 for a split CPHASE."""
    return gate.plan.native_count / 2 if gate.plan is not None else 1.0


def gate_depth(gate) -> int:
    return int(round(GATE_DEPTH[gate.kind] * _plan_scale(gate)))


def gate_time_ns(gate, times: Mapping[str, float] | None = None) -> float:
    return (times or GATE_TIME_NS)[gate.kind] * _plan_scale(gate)


@dataclass
class HubbardParams:
    """Model parameters.

    Attributes:
        L: number of sites.
        J: hopping energy.
        U: on-site interaction.
        eps: (L, 2) local potentials, column 0 for spin up, 1 for spin down.
        tau: Trotter step length.
        V: optional nearest-neighbor same-spin interaction, scalar, (L-1,) per
            bond, or (2, L-1) per chain and bond.
    """

    L: int
    J: float = 1.0
    U: float = 0.0
    eps: np.ndarray | None = None
    tau: float = 0.3
    V: float | np.ndarray | None = None

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("need at least two sites")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        self.eps = np.zeros((self.L, 2)) if self.eps is None else np.asarray(self.eps, float)
        if self.eps.shape != (self.L, 2):
            raise ValueError(f"eps must have shape ({self.L}, 2)")

    def bond_v(self) -> np.ndarray:
        """Nearest-neighbor interaction as a (2, L-1) array."""
        if self.V is None:
            return np.zeros((2, self.L - 1))
        v = np.asarray(self.V, dtype=float)
        return np.broadcast_to(v, (2, self.L - 1)).copy() if v.ndim < 2 else v.reshape(2, self.L - 1)

    def hopping_matrix(self, spin: int = UP) -> np.ndarray:
        """Single-particle Hamiltonian h with H_0 = sum_ij h_ij c_i^dag c_j for one spin."""
        h = np.diag(self.eps[:, spin]).astype(float)
        for j in range(self.L - 1):
            h[j, j + 1] = h[j + 1, j] = -self.J
        return h


@dataclass(frozen=True)
class GaussianTrap:
    """Potential eps_j = -lam exp(-(j - m)^2 / (2 sigma^2)) with 1-indexed sites j."""

    lam: float
    m: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def potential(self, L: int) -> np.ndarray:
        j = np.arange(1, L + 1)
        return -self.lam * np.exp(-0.5 * (j - self.m) ** 2 / self.sigma**2)


def trapped_params(L: int, up: GaussianTrap | None, down: GaussianTrap | None, **kw) -> HubbardParams:
    eps = np.zeros((L, 2))
    if up is not None:
        eps[:, UP] = up.potential(L)
    if down is not None:
        eps[:, DOWN] = down.potential(L)
    return HubbardParams(L, eps=eps, **kw)


# ---------------------------------------------------------------------------
# Qubit assignments
# ---------------------------------------------------------------------------

DEVICE_ROWS = 3


@dataclass(frozen=True)
class QubitAssignment:
    """Placement of the two chains on a synthetic three-row device.

    The device has ``DEVICE_ROWS`` rows of L qubits; label = row * L + column.
    A variant picks two adjacent rows (upper or lower pair), which row holds
    spin up, the direction of the chains and whether neighboring columns are
    exchanged pairwise (horizontal flip). The register index of a label is
    its rank among the 2L labels in use.
    """

    L: int
    variant_id: int
    labels: tuple[tuple[int, ...], tuple[int, ...]]

    @property
    def n_qubits(self) -> int:
        return 2 * self.L

    @property
    def sorted_labels(self) -> tuple[int, ...]:
        return tuple(sorted(self.labels[0] + self.labels[1]))

    @property
    def site_to_qubit(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        rank = {lab: i for i, lab in enumerate(self.sorted_labels)}
        return tuple(tuple(rank[lab] for lab in chain) for chain in self.labels)  # type: ignore

    def qubit(self, spin: int, site: int) -> int:
        return self.site_to_qubit[spin][site]

    def label(self, qubit: int) -> int:
        return self.sorted_labels[qubit]

    def chain_qubits(self, spin: int) -> tuple[int, ...]:
        return self.site_to_qubit[spin]


def make_assignment(L: int = 8, variant_id: int = 0) -> QubitAssignment:
    """Variant bits: 1 reverse sites, 2 exchange spins, 4 horizontal flip, 8 lower rows."""
    if not 0 <= variant_id < 16:
        raise ValueError("variant_id must be in 0..15")
    reverse = bool(variant_id & 1)
    exchange = bool(variant_id & 2)
    hflip = bool(variant_id & 4)
    lower = bool(variant_id & 8)
    cols = list(range(L))
    if reverse:
        cols = cols[::-1]
    if hflip:
        cols = [c ^ 1 if (c ^ 1) < L else c for c in cols]
    rows = (1, 2) if lower else (0, 1)
    if exchange:
        rows = rows[::-1]
    labels = tuple(tuple(r * L + c for c in cols) for r in rows)
    return QubitAssignment(L, variant_id, labels)  # type: ignore[arg-type]


def all_assignments(L: int = 8) -> list[QubitAssignment]:
    return [make_assignment(L, v) for v in range(16)]


# ---------------------------------------------------------------------------
# Circuits
# ---------------------------------------------------------------------------


@dataclass
class CircuitGate:
    """A logical gate. Two-qubit kinds carry their native-gate plan."""

    kind: str
    qubits: tuple[int, ...]
    angle: float = 0.0
    plan: DecompositionPlan | None = field(default=None, compare=False, repr=False)

    def to_text(self) -> str:
        q = ",".join(str(x) for x in self.qubits)
        return f"{self.kind}({self.angle!r})@{q}"


@dataclass
class TrotterCircuit:
    """Ordered moments of logical gates.

    ``step_ends[k]`` is the number of moments after which k Trotter steps are
    complete (``step_ends[0]`` marks the end of state preparation), so a
    single replay can report every intermediate eta.
    """

    moments: list[list[CircuitGate]]
    eta: int
    assignment: QubitAssignment
    n_qubits: int
    step_ends: list[int] = field(default_factory=list)
    description: str = ""

    def __post_init__(self):
        for m in self.moments:
            used = [q for g in m for q in g.qubits]
            if len(used) != len(set(used)):
                raise ValueError("a qubit appears twice in one moment")

    def gates(self):
        for m in self.moments:
            yield from m

    def extend(self, other: "TrotterCircuit") -> "TrotterCircuit":
        offset = len(self.moments)
        ends = self.step_ends + [e + offset for e in other.step_ends]
        return TrotterCircuit(self.moments + other.moments, self.eta + other.eta, self.assignment,
                              self.n_qubits, ends, self.description or other.description)

    def to_text(self) -> str:
        """One moment per line, gates as NAME(angle)@q1[,q2] separated by spaces."""
        lines = [f"# qubits={self.n_qubits} eta={self.eta} variant={self.assignment.variant_id} "
                 f"L={self.assignment.L} step_ends={','.join(map(str, self.step_ends))}"]
        lines += [" ".join(g.to_text() for g in m) if m else "-" for m in self.moments]
        return "\n".join(lines) + "\n"


def parse_circuit_text(text: str, native: "NativeLike" = IDEAL_NATIVE, infeasible: str = "raise") -> TrotterCircuit:
    """Inverse of ``TrotterCircuit.to_text``; plans are rebuilt for ``native``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
    assignment = make_assignment(int(header["L"]), int(header["variant"]))
    lookup = _native_lookup(native)
    moments = []
    for ln in lines[1:]:
        moment = []
        if ln.strip() != "-":
            for tok in ln.split():
                name, rest = tok.split("(", 1)
                angle_s, qs = rest.split(")@")
                qubits = tuple(int(x) for x in qs.split(","))
                moment.append(_make_gate(name, qubits, float(angle_s), lookup, infeasible))
        moments.append(moment)
    ends = [int(x) for x in header["step_ends"].split(",") if x]
    return TrotterCircuit(moments, int(header["eta"]), assignment, int(header["qubits"]), ends)


NativeLike = NativeGateParams | Mapping[tuple[int, int], NativeGateParams] | Callable[[int, int], NativeGateParams]


def _native_lookup(native: NativeLike) -> Callable[[int, int], NativeGateParams]:
    if isinstance(native, NativeGateParams):
        return lambda a, b: native
    if callable(native):
        return native
    table = dict(native)

    def look(a: int, b: int) -> NativeGateParams:
        key = (min(a, b), max(a, b))
        if key not in table:
            raise KeyError(f"no native-gate parameters for qubit pair {key}")
        return table[key]

    return look


# How builders treat a CPHASE angle below the native's reach: "raise"
# propagates InfeasibleDecompositionError, "split" builds it from two
# feasible CPHASE factors (four natives), and "split_all" does so for every
# CPHASE so the circuit shape does not depend on the angle.
INFEASIBLE_POLICIES = ("raise", "split", "split_all")


def _make_gate(kind: str, qubits: tuple[int, ...], angle: float,
               lookup: Callable[[int, int], NativeGateParams], infeasible: str = "raise") -> CircuitGate:
    plan = None
    if kind in TWO_QUBIT_KINDS:
        nat = lookup(*qubits)
        if kind == "K":
            plan = decompose_k(angle, nat)
        elif kind == "G":
            plan = decompose_givens(angle, nat)
        elif kind == "ISWAP":
            plan = decompose_iswap(nat)
        elif infeasible == "split_all":  # same circuit shape for every angle, including 0
            plan = decompose_cphase_split(angle, nat)
        elif cphase_feasible(angle, nat) or infeasible == "raise":
            plan = decompose_cphase(angle, nat)
        elif infeasible == "split":
            plan = decompose_cphase_split(angle, nat)
        else:
            raise InfeasibleDecompositionError(f"unknown infeasibility policy {infeasible!r}")
    return CircuitGate(kind, qubits, angle, plan)


def _greedy_layers(ops: list[tuple[int, int, float]]) -> list[list[tuple[int, int, float]]]:
    """ASAP scheduling of a gate sequence respecting qubit order."""
    layers: list[list[tuple[int, int, float]]] = []
    ready: dict[int, int] = {}
    for op in ops:
        a, b, _ = op
        t = max(ready.get(a, 0), ready.get(b, 0))
        while len(layers) <= t:
            layers.append([])
        layers[t].append(op)
        ready[a] = ready[b] = t + 1
    return layers


def lowest_orbitals(h: np.ndarray, n: int) -> np.ndarray:
    """L x n matrix of the n lowest eigenvectors of a real symmetric h."""
    if not np.allclose(h, h.conj().T):
        raise ValueError("single-particle Hamiltonian must be hermitian")
    _, vecs = np.linalg.eigh(h)
    return vecs[:, :n]


def givens_network(orbitals: np.ndarray, pivot: int | None = None) -> tuple[list[int], list[tuple[int, int, float]]]:
    """Givens rotations preparing the Slater determinant with the given real orbitals.

    Returns the modes that must start occupied and the time-ordered list of
    (site_a, site_b, angle) rotations, where each entry is a G(angle) on the
    adjacent sites (site_a, site_a + 1).

    For one particle the elimination converges on ``pivot`` (default: middle
    site) from both ends, halving the depth. For more particles the rows are
    first brought to staircase form and then reduced right to left, giving
    N (L - N) rotations.
    """
    q = np.asarray(orbitals, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    L, n = q.shape
    if n == 0:
        return [], []
    m = q.T.copy()
    elim: list[tuple[int, int, float]] = []

    def col_rot(j: int, c: float, s: float) -> None:
        a, b = m[:, j].copy(), m[:, j + 1].copy()
        m[:, j] = c * a - s * b
        m[:, j + 1] = s * a + c * b

    if n == 1:
        p = (L - 1) // 2 if pivot is None else pivot
        # Left arm first so that, run backwards, both arms leave the pivot
        # in consecutive layers.
        for j in range(0, p):  # zero m[0, j] pushing weight to j+1
            r = math.hypot(m[0, j], m[0, j + 1])
            c, s = (1.0, 0.0) if r < 1e-15 else (m[0, j + 1] / r, m[0, j] / r)
            col_rot(j, c, s)
            elim.append((j, j + 1, math.atan2(s, c)))
        for j in range(L - 1, p, -1):  # zero m[0, j] pushing weight to j-1
            r = math.hypot(m[0, j - 1], m[0, j])
            c, s = (1.0, 0.0) if r < 1e-15 else (m[0, j - 1] / r, -m[0, j] / r)
            col_rot(j - 1, c, s)
            elim.append((j - 1, j, math.atan2(s, c)))
        occupied = [p]
    else:
        # staircase: row k may be nonzero only in columns <= L - n + k
        for j in range(L - 1, L - n, -1):
            for k in range(0, j - (L - n)):
                a, b = m[k, j], m[k + 1, j]
                r = math.hypot(a, b)
                if r < 1e-15:
                    continue
                c, s = b / r, a / r
                rk, rk1 = m[k].copy(), m[k + 1].copy()
                m[k] = c * rk - s * rk1
                m[k + 1] = s * rk + c * rk1
        for k in range(n):
            for j in range(L - n + k, k, -1):
                r = math.hypot(m[k, j - 1], m[k, j])
                c, s = (1.0, 0.0) if r < 1e-15 else (m[k, j - 1] / r, -m[k, j] / r)
                col_rot(j - 1, c, s)
                elim.append((j - 1, j, math.atan2(s, c)))
        occupied = list(range(n))
    # col_rot applies g = [[c, s], [-s, c]] from the right, matching a G(angle)
    # mode rotation; preparation runs the eliminations backwards.
    return occupied, elim[::-1]


def _prep_moments(chains: list[tuple[list[int], list[tuple[int, int, float]]]],
                  assignment: QubitAssignment, lookup, phases=None) -> list[list[CircuitGate]]:
    x_moment = []
    layered: list[list[CircuitGate]] = []
    for spin, (occ, rots) in enumerate(chains):
        x_moment += [CircuitGate("X", (assignment.qubit(spin, j),)) for j in occ]
        for t, layer in enumerate(_greedy_layers(rots)):
            while len(layered) <= t:
                layered.append([])
            for a, b, ang in layer:
                qa, qb = assignment.qubit(spin, a), assignment.qubit(spin, b)
                layered[t].append(_make_gate("G", (qa, qb), ang, lookup))
    moments = ([x_moment] if x_moment else []) + layered
    if phases:
        rz = [CircuitGate("RZ", (q,), a) for q, a in phases if abs(a) > 0]
        if rz:
            moments.append(rz)
    return moments


def build_initial_state_circuit(h0: HubbardParams, n_up: int, n_down: int,
                                native: NativeLike = IDEAL_NATIVE,
                                assignment: QubitAssignment | None = None) -> TrotterCircuit:
    """X gates plus Givens networks preparing the ground state of the quadratic part of h0."""
    assignment = assignment or make_assignment(h0.L, 0)
    if assignment.L != h0.L:
        raise ValueError("assignment size does not match L")
    for n in (n_up, n_down):
        if not 0 <= n <= h0.L:
            raise ValueError(f"particle number {n} outside [0, {h0.L}]")
    lookup = _native_lookup(native)
    chains = []
    for spin, n in ((UP, n_up), (DOWN, n_down)):
        orb = lowest_orbitals(h0.hopping_matrix(spin), n)
        chains.append(givens_network(orb))
    moments = _prep_moments(chains, assignment, lookup)
    return TrotterCircuit(moments, 0, assignment, assignment.n_qubits, [len(moments)],
                          f"ground state N=({n_up},{n_down})")


def gaussian_wavepacket(L: int, center: float, width: float, momentum: float = 0.0) -> np.ndarray:
    """Normalized amplitudes exp(-(j-center)^2 / (4 width^2)) exp(i momentum j), 1-indexed j."""
    if width <= 0:
        raise ValueError("width must be positive")
    j = np.arange(1, L + 1)
    amp = np.exp(-((j - center) ** 2) / (4 * width**2)) * np.exp(1j * momentum * j)
    return amp / np.linalg.norm(amp)


@dataclass(frozen=True)
class Wavepacket:
    center: float
    width: float
    momentum: float = 0.0


def build_wavepacket_circuit(L: int, up: Wavepacket | None, down: Wavepacket | None,
                             native: NativeLike = IDEAL_NATIVE,
                             assignment: QubitAssignment | None = None) -> TrotterCircuit:
    """One particle per chain in a Gaussian packet: real Givens network, then a Z phase ramp."""
    assignment = assignment or make_assignment(L, 0)
    lookup = _native_lookup(native)
    chains, phases = [], []
    for spin, wp in ((UP, up), (DOWN, down)):
        if wp is None:
            chains.append(([], []))
            continue
        real = np.abs(gaussian_wavepacket(L, wp.center, wp.width, 0.0))
        chains.append(givens_network(real))
        phases += [(assignment.qubit(spin, j), math.remainder(wp.momentum * (j + 1), 2 * math.pi))
                   for j in range(L)]
    moments = _prep_moments(chains, assignment, lookup, phases)
    return TrotterCircuit(moments, 0, assignment, assignment.n_qubits, [len(moments)], "wavepackets")


def build_trotter_step(p: HubbardParams, native: NativeLike = IDEAL_NATIVE,
                       assignment: QubitAssignment | None = None, hopping_only: bool = False,
                       spin_echo: bool = False, chains: tuple[int, ...] = (UP, DOWN),
                       infeasible: str = "raise") -> TrotterCircuit:
    """One first-order Trotter step as logical moments.

    Full model: K(-tau J) on bonds (0,1),(2,3),..; CPHASE(tau U) on sites
    0,2,..; iSWAP on bonds (1,2),(3,4),..; CPHASE on sites 1,3,.. (now
    sitting on the swapped qubits); K(-tau J + pi/2) on the swapped bonds,
    which cancels the iSWAPs. With ``hopping_only`` only the two hopping
    stages remain and the second uses K(-tau J).
    """
    L = p.L
    assignment = assignment or make_assignment(L, 0)
    lookup = _native_lookup(native)
    theta = -p.tau * p.J
    odd_bonds = [(j, j + 1) for j in range(0, L - 1, 2)]
    even_bonds = [(j, j + 1) for j in range(1, L - 1, 2)]
    q = assignment.qubit

    def hop(bonds, angle):
        return [_make_gate("K", (q(s, a), q(s, b)), angle, lookup) for s in chains for a, b in bonds]

    if hopping_only:
        moments = [hop(odd_bonds, theta), hop(even_bonds, theta)]
        return TrotterCircuit(moments, 1, assignment, assignment.n_qubits, [len(moments)], "hopping step")
    if tuple(chains) != (UP, DOWN):
        raise ValueError("the interacting step needs both chains")
    phi = p.tau * p.U
    all_qubits = set(range(assignment.n_qubits))

    def interaction(sites, pos):
        gates = [_make_gate("CPHASE", (pos[UP][j], pos[DOWN][j]), phi, lookup, infeasible)
                 for j in sites]
        if spin_echo:
            busy = {x for g in gates for x in g.qubits}
            gates += [CircuitGate("ECHO", (x,)) for x in sorted(all_qubits - busy)]
        return gates

    pos = [list(assignment.site_to_qubit[s]) for s in (UP, DOWN)]
    m1 = hop(odd_bonds, theta)
    m2 = interaction(range(0, L, 2), pos)
    m3 = [_make_gate("ISWAP", (pos[s][a], pos[s][b]), -math.pi / 2, lookup)
          for s in (UP, DOWN) for a, b in even_bonds]
    for s in (UP, DOWN):
        for a, b in even_bonds:
            pos[s][a], pos[s][b] = pos[s][b], pos[s][a]
    m4 = interaction(range(1, L, 2), pos)
    m5 = [_make_gate("K", (pos[s][a], pos[s][b]), theta + math.pi / 2, lookup)
          for s in (UP, DOWN) for a, b in even_bonds]
    moments = [m1, m2, m3, m4, m5]
    return TrotterCircuit(moments, 1, assignment, assignment.n_qubits, [len(moments)], "trotter step")


def build_evolution_circuit(prep: TrotterCircuit, p: HubbardParams, eta: int,
                            native: NativeLike = IDEAL_NATIVE, hopping_only: bool = False,
                            spin_echo: bool = False, chains: tuple[int, ...] = (UP, DOWN),
                            infeasible: str = "raise") -> TrotterCircuit:
    """State preparation followed by eta Trotter steps."""
    circ = prep
    step = build_trotter_step(p, native, prep.assignment, hopping_only, spin_echo, chains, infeasible)
    for _ in range(eta):
        circ = circ.extend(step)
    return circ


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class CircuitStats:
    t_evol: float
    t_circuit_us: float
    depth: int
    two_qubit: int
    microwave: int
    rz: int


def circuit_stats(circuit: TrotterCircuit, tau: float = 0.3, qubits=None) -> CircuitStats:
    """Gate counts, layer depth and critical-path time.

    Depth counts one layer per microwave layer, Z layer and native gate:
    K/G/iSWAP contribute (Z, native, Z, native) = 4 and CPHASE contributes
    (X, Z, native, X, Z, native, X) = 7 layers; the Z corrections trailing a
    gate are merged into the following layer, so each moment's depth is the
    largest of its gates. Spin-echo pulses share their moment's time.
    ``qubits`` restricts counting to a subset (e.g. one chain).
    """
    keep = set(range(circuit.n_qubits)) if qubits is None else set(qubits)
    depth = time_ns = two_q = mw = rz = 0
    for moment in circuit.moments:
        gates = [g for g in moment if set(g.qubits) <= keep]
        if not gates:
            continue
        depth += max(gate_depth(g) for g in gates)
        time_ns += max(gate_time_ns(g) for g in gates)
        for g in gates:
            if g.plan is not None:
                two_q += g.plan.native_count
                mw += g.plan.microwave_count
                rz += g.plan.rz_count
            elif g.kind == "X":
                mw += 1
            elif g.kind == "ECHO":
                mw += 2
            elif g.kind == "RZ":
                rz += 1
    return CircuitStats(circuit.eta * tau, time_ns / 1000.0, depth, two_q, mw, rz)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------


def densities_from_shots(shots: ShotTable, assignment: QubitAssignment) -> tuple[np.ndarray, np.ndarray]:
    """Per-site occupation frequencies (rho_up, rho_down)."""
    if shots.shots == 0:
        raise ValueError("empty shot table")
    bits = shots.bits()
    freq = bits.mean(axis=0)
    return (np.array([freq[q] for q in assignment.chain_qubits(UP)]),
            np.array([freq[q] for q in assignment.chain_qubits(DOWN)]))


def densities_from_expectations(n_q: np.ndarray, assignment: QubitAssignment) -> tuple[np.ndarray, np.ndarray]:
    return (np.asarray(n_q)[list(assignment.chain_qubits(UP))],
            np.asarray(n_q)[list(assignment.chain_qubits(DOWN))])


def charge_spin(rho_up: np.ndarray, rho_down: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return rho_up + rho_down, rho_up - rho_down


def spread(rho: np.ndarray, L: int | None = None) -> float:
    """sum_j |j - (L+1)/2| rho_j with 1-indexed sites."""
    rho = np.asarray(rho, dtype=float)
    L = len(rho) if L is None else L
    if len(rho) != L:
        raise ValueError("density length does not match L")
    j = np.arange(1, L + 1)
    return float(np.sum(np.abs(j - (L + 1) / 2) * rho))


def spread_rate(kappa, times) -> np.ndarray:
    """Numerical derivative: central differences inside, one-sided at the ends."""
    kappa = np.asarray(kappa, dtype=float)
    times = np.asarray(times, dtype=float)
    if len(kappa) < 2 or len(kappa) != len(times):
        raise ValueError("need at least two aligned points")
    return np.gradient(kappa, times, edge_order=1)


def average_position(rho: np.ndarray) -> float:
    """sum_j j <n_j> with 1-indexed sites."""
    rho = np.asarray(rho, dtype=float)
    return float(np.sum(np.arange(1, len(rho) + 1) * rho))


@dataclass
class DensitySeries:
    """Densities indexed by Trotter step; arrays have shape (n_eta, L)."""

    etas: np.ndarray
    times: np.ndarray
    rho_up: np.ndarray
    rho_down: np.ndarray
    sem_up: np.ndarray | None = None
    sem_down: np.ndarray | None = None

    @property
    def rho_plus(self) -> np.ndarray:
        return self.rho_up + self.rho_down

    @property
    def rho_minus(self) -> np.ndarray:
        return self.rho_up - self.rho_down

    @property
    def L(self) -> int:
        return self.rho_up.shape[1]

    def kappa_plus(self) -> np.ndarray:
        return np.array([spread(r) for r in self.rho_plus])

    def kappa_minus(self) -> np.ndarray:
        return np.array([spread(r) for r in self.rho_minus])


# ---------------------------------------------------------------------------
# Noiseless replay
# ---------------------------------------------------------------------------


def gate_unitary(gate: CircuitGate, native_matrix: np.ndarray | None = None) -> np.ndarray:
    """Matrix of a logical gate as realized by its plan (4x4) or directly (2x2)."""
    if gate.plan is not None:
        return gate.plan.replay(native_matrix)
    if gate.kind == "X":
        return np.array([[0, 1], [1, 0]], dtype=complex)
    if gate.kind == "RZ":
        return np.diag([1, np.exp(1j * gate.angle)])
    if gate.kind == "ECHO":
        return np.eye(2, dtype=complex)
    raise ValueError(f"unknown gate kind {gate.kind}")


def initial_excitations(circuit: TrotterCircuit) -> int:
    """Bit mask set by the leading X moment (0 if the circuit starts otherwise)."""
    mask = 0
    if circuit.moments and circuit.moments[0] and all(g.kind == "X" for g in circuit.moments[0]):
        for g in circuit.moments[0]:
            mask |= 1 << g.qubits[0]
    return mask


def replay(circuit: TrotterCircuit, record_steps: bool = True):
    """Noiseless replay in the bounded-excitation subspace.

    Returns the list of states after each entry of ``step_ends`` (or only the
    final state when ``record_steps`` is false). Circuits must begin with
    their X layer; every later gate must conserve excitation number.
    """
    from .qsim import SubspaceState

    mask = initial_excitations(circuit)
    k = bin(mask).count("1")
    state = SubspaceState.basis_state(circuit.n_qubits, mask, max(k, 1))
    start = 1 if mask else 0
    cache: dict[int, np.ndarray] = {}
    out = []
    ends = set(circuit.step_ends)
    if 0 in ends and record_steps:
        out.append(state.copy())
    for i, moment in enumerate(circuit.moments[start:], start=start):
        for g in moment:
            if g.kind == "X":
                raise ValueError("X gates are only supported in the first moment")
            if g.kind == "ECHO":
                continue
            if g.kind == "RZ":
                state.apply_single_qubit_diag(1.0, np.exp(1j * g.angle), g.qubits[0])
                continue
            key = id(g.plan)
            if key not in cache:
                cache[key] = gate_unitary(g)
            state.apply_two_qubit(cache[key], *g.qubits)
        if record_steps and (i + 1) in ends:
            out.append(state.copy())
    return out if record_steps else state


def parasitic_bond_v(step: TrotterCircuit, tau: float) -> np.ndarray:
    """Nearest-neighbor interaction (2, L-1) induced by the natives' parasitic phase.

    Each swap-block gate built from two natives with parasitic phase varphi
    also applies CPHASE(2 varphi) to its pair, i.e. exp(-i tau V n_a n_b) with
    V = 2 varphi / tau accumulated over the step.
    """
    a = step.assignment
    where = {q: (s, j) for s in (UP, DOWN) for j, q in enumerate(a.chain_qubits(s))}
    v = np.zeros((2, a.L - 1))
    for g in step.gates():
        if g.kind in ("K", "G", "ISWAP") and g.plan is not None:
            (s1, j1), (s2, j2) = where[g.qubits[0]], where[g.qubits[1]]
            if s1 != s2 or abs(j1 - j2) != 1:
                raise ValueError("swap-block gate outside a chain bond")
            v[s1, min(j1, j2)] += g.plan.native_count * g.plan.native.varphi / tau
    return v
