"""Dense statevector engine with shot sampling and Monte-Carlo noise trajectories.

Amplitudes are little-endian: qubit q is bit q of the basis index, so the
basis state |b_{n-1} ... b_1 b_0> has index sum_q b_q 2^q.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_QUBITS = 24
UNITARY_TOL = 1e-10

AMPLITUDE_DAMPING = "amplitude_damping"
DEPHASING = "dephasing"
READOUT_FLIP = "readout_flip"
CHANNEL_KINDS = (AMPLITUDE_DAMPING, DEPHASING, READOUT_FLIP)


@dataclass
class StateVector:
    n_qubits: int
    amps: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        self.amps = np.asarray(self.amps, dtype=complex)
        if self.amps.shape != (2**self.n_qubits,):
            raise ValueError("amplitude vector has the wrong length")

    @classmethod
    def zeros(cls, n_qubits: int) -> "StateVector":
        return cls.basis(n_qubits, 0)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def from_bits(cls, bits: str) -> "StateVector":
        """Build |bits> where the leftmost character is the highest qubit."""
        return cls.basis(len(bits), int(bits, 2))

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amps.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2


@dataclass
class ShotTable:
    """Measured outcomes stored as integer basis indices (little-endian)."""

    bitstrings: np.ndarray
    n_qubits: int
    seed: int | None = None
    shots: int = field(init=False)

    def __post_init__(self):
        self.bitstrings = np.asarray(self.bitstrings, dtype=np.int64)
        self.shots = len(self.bitstrings)
        if self.shots and (self.bitstrings.min() < 0 or self.bitstrings.max() >= 2**self.n_qubits):
            raise ValueError("bitstring outside the register")

    def bits(self) -> np.ndarray:
        """(shots, n_qubits) array of 0/1 with column q holding qubit q."""
        return ((self.bitstrings[:, None] >> np.arange(self.n_qubits)) & 1).astype(np.int8)

    def as_strings(self) -> list[str]:
        return [format(int(b), f"0{self.n_qubits}b") for b in self.bitstrings]

    def concat(self, other: "ShotTable") -> "ShotTable":
        if other.n_qubits != self.n_qubits:
            raise ValueError("register sizes differ")
        return ShotTable(np.concatenate([self.bitstrings, other.bitstrings]), self.n_qubits, self.seed)


@dataclass(frozen=True)
class ChannelEvent:
    kind: str
    qubit: int
    probability: float

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")


def _check_unitary(u: np.ndarray, dim: int) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} matrix, got shape {u.shape}")
    if np.max(np.abs(u.conj().T @ u - np.eye(dim))) > UNITARY_TOL:
        raise ValueError("matrix is not unitary")
    return u


def _check_qubit(state: StateVector, q: int) -> None:
    if not 0 <= q < state.n_qubits:
        raise IndexError(f"qubit {q} out of range for {state.n_qubits} qubits")


def apply_single_qubit(state: StateVector, u: np.ndarray, q: int, check: bool = True) -> StateVector:
    _check_qubit(state, q)
    if check:
        u = _check_unitary(u, 2)
    v = state.amps.reshape(-1, 2, 2**q)
    a0, a1 = v[:, 0, :].copy(), v[:, 1, :].copy()
    v[:, 0, :] = u[0, 0] * a0 + u[0, 1] * a1
    v[:, 1, :] = u[1, 0] * a0 + u[1, 1] * a1
    return state


def apply_two_qubit(state: StateVector, u: np.ndarray, q1: int, q2: int,
                    check: bool = True) -> StateVector:
    """Apply u in the |q1 q2> basis ordering (q1 is the more significant local bit)."""
    _check_qubit(state, q1)
    _check_qubit(state, q2)
    if q1 == q2:
        raise ValueError("two-qubit gate needs distinct qubits")
    if check:
        u = _check_unitary(u, 4)
    hi, lo = max(q1, q2), min(q1, q2)
    v = state.amps.reshape(-1, 2, 2 ** (hi - lo - 1), 2, 2**lo)
    # local index is 2*b(q1) + b(q2); axis 1 is bit hi, axis 3 is bit lo
    sub = np.stack([v[:, i >> 1, :, i & 1, :] for i in range(4)]) if q1 == hi else \
        np.stack([v[:, i & 1, :, i >> 1, :] for i in range(4)])
    new = np.tensordot(u, sub, axes=(1, 0))
    for i in range(4):
        if q1 == hi:
            v[:, i >> 1, :, i & 1, :] = new[i]
        else:
            v[:, i & 1, :, i >> 1, :] = new[i]
    return state


def apply_diagonal_two_qubit(state: StateVector, diag: np.ndarray, q1: int, q2: int) -> StateVector:
    """Fast path for diagonal gates such as CPHASE."""
    hi, lo = max(q1, q2), min(q1, q2)
    v = state.amps.reshape(-1, 2, 2 ** (hi - lo - 1), 2, 2**lo)
    for i in range(4):
        b1, b2 = i >> 1, i & 1
        if diag[i] != 1:
            if q1 == hi:
                v[:, b1, :, b2, :] *= diag[i]
            else:
                v[:, b2, :, b1, :] *= diag[i]
    return state


def measure_number_operator(state: StateVector, q: int) -> float:
    _check_qubit(state, q)
    p = state.probabilities().reshape(-1, 2, 2**q)
    return float(p[:, 1, :].sum() / p.sum())


def number_expectations(state: StateVector) -> np.ndarray:
    """<n_q> for every qubit at once."""
    p = state.probabilities()
    p = p / p.sum()
    out = np.empty(state.n_qubits)
    for q in range(state.n_qubits):
        out[q] = p.reshape(-1, 2, 2**q)[:, 1, :].sum()
    return out


def sample_shots(state: StateVector, shots: int, seed=None) -> ShotTable:
    """Draw i.i.d. computational-basis samples.

    ``seed`` may be an int, None, or a ``numpy.random.Generator`` shared with
    a surrounding trajectory.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = state.probabilities()
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(shots), side="right")
    idx = np.minimum(idx, len(p) - 1)
    return ShotTable(idx, state.n_qubits, seed if isinstance(seed, (int, np.integer)) else None)


def apply_stochastic_channel(state: StateVector, event: ChannelEvent,
                             rng: np.random.Generator) -> StateVector:
    """One Monte-Carlo unravelling step of a single-qubit channel."""
    if event.kind == READOUT_FLIP:
        raise ValueError("readout flips act on sampled bits, use apply_readout_flips")
    q, p = event.qubit, event.probability
    _check_qubit(state, q)
    if p == 0.0:
        return state
    v = state.amps.reshape(-1, 2, 2**q)
    if event.kind == DEPHASING:
        if rng.random() < p:
            v[:, 1, :] *= -1
        return state
    # amplitude damping
    n1 = float(np.sum(np.abs(v[:, 1, :]) ** 2)) / float(np.sum(np.abs(state.amps) ** 2))
    if rng.random() < p * n1:
        v[:, 0, :] = v[:, 1, :]
        v[:, 1, :] = 0
    else:
        v[:, 1, :] *= np.sqrt(1.0 - p)
    state.amps /= np.linalg.norm(state.amps)
    return state


def apply_readout_flips(table: ShotTable, p10: float, p01: float,
                        rng: np.random.Generator) -> ShotTable:
    """Flip measured bits independently: 1->0 with p10 and 0->1 with p01."""
    if p10 == 0 and p01 == 0:
        return table
    bits = table.bits().astype(bool)
    u = rng.random(bits.shape)
    flip = np.where(bits, u < p10, u < p01)
    bits ^= flip
    idx = (bits.astype(np.int64) << np.arange(table.n_qubits)).sum(axis=1)
    return ShotTable(idx, table.n_qubits, table.seed)


def hamming_weights(table: ShotTable, qubits) -> np.ndarray:
    """Number of ones among the given qubits for every shot."""
    mask = 0
    for q in qubits:
        mask |= 1 << int(q)
    x = (table.bitstrings & mask).astype(">u8")
    return np.unpackbits(x.view(np.uint8).reshape(-1, 8), axis=1).sum(axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# Bounded-excitation subspace engine
# ---------------------------------------------------------------------------


class _SubspaceTables:
    """Index tables for all n-bit strings with at most k ones."""

    _cache: dict[tuple[int, int], "_SubspaceTables"] = {}

    def __init__(self, n: int, k: int):
        self.n, self.k = n, k
        full = np.arange(2**n, dtype=np.int64)
        pop = np.zeros(2**n, dtype=np.int64)
        for q in range(n):
            pop += (full >> q) & 1
        self.basis = full[pop <= k]
        self.popcount = pop[pop <= k]
        self.dim = len(self.basis)
        self.bitmat = ((self.basis[:, None] >> np.arange(n)) & 1).astype(float)
        self._pairs: dict[tuple[int, int], np.ndarray] = {}
        self._ones: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def get(cls, n: int, k: int) -> "_SubspaceTables":
        key = (n, k)
        if key not in cls._cache:
            cls._cache[key] = cls(n, k)
        return cls._cache[key]

    def index(self, states: np.ndarray) -> np.ndarray:
        """Positions of basis states; -1 where the state is outside the subspace."""
        pos = np.searchsorted(self.basis, states)
        pos = np.minimum(pos, self.dim - 1)
        return np.where(self.basis[pos] == states, pos, -1)

    def pair(self, q1: int, q2: int) -> np.ndarray:
        """(4, m) positions of |q1 q2> = 00, 01, 10, 11 over all rest configurations."""
        key = (q1, q2)
        if key not in self._pairs:
            m1, m2 = 1 << q1, 1 << q2
            rest = self.basis[(self.basis & (m1 | m2)) == 0]
            self._pairs[key] = np.stack([self.index(rest), self.index(rest | m2),
                                         self.index(rest | m1), self.index(rest | m1 | m2)])
        return self._pairs[key]

    def ones(self, q: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions with bit q set and the positions of the same strings with q cleared."""
        if q not in self._ones:
            sel = np.nonzero(self.basis & (1 << q))[0]
            self._ones[q] = (sel, self.index(self.basis[sel] & ~(1 << q)))
        return self._ones[q]


class SubspaceState:
    """Statevector restricted to bit strings with at most ``max_excitations`` ones.

    Number-conserving gates, amplitude damping and dephasing keep a state
    inside this subspace, so trajectories of excitation-conserving circuits
    are exact here at a small fraction of the dense cost (2517 amplitudes
    instead of 65536 for four excitations on sixteen qubits). A gate that
    would raise the excitation number has that component discarded and the
    discarded weight added to ``leaked``.
    """

    def __init__(self, n_qubits: int, max_excitations: int, amps: np.ndarray | None = None):
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        self.n_qubits = n_qubits
        self.tables = _SubspaceTables.get(n_qubits, max_excitations)
        self.amps = np.zeros(self.tables.dim, dtype=complex) if amps is None else np.asarray(amps, complex)
        self.leaked = 0.0

    @classmethod
    def basis_state(cls, n_qubits: int, index: int, max_excitations: int | None = None) -> "SubspaceState":
        k = bin(index).count("1") if max_excitations is None else max_excitations
        st = cls(n_qubits, k)
        pos = st.tables.index(np.array([index]))[0]
        if pos < 0:
            raise ValueError("basis state exceeds the excitation bound")
        st.amps[pos] = 1.0
        return st

    def copy(self) -> "SubspaceState":
        out = SubspaceState(self.n_qubits, self.tables.k, self.amps.copy())
        out.leaked = self.leaked
        return out

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def to_statevector(self) -> StateVector:
        full = np.zeros(2**self.n_qubits, dtype=complex)
        full[self.tables.basis] = self.amps
        return StateVector(self.n_qubits, full)

    @classmethod
    def from_statevector(cls, sv: StateVector, max_excitations: int) -> "SubspaceState":
        st = cls(sv.n_qubits, max_excitations)
        st.amps = sv.amps[st.tables.basis].copy()
        return st

    def apply_single_qubit_diag(self, d0: complex, d1: complex, q: int) -> None:
        sel, _ = self.tables.ones(q)
        if d0 != 1:
            self.amps *= d0
            self.amps[sel] *= d1 / d0
        else:
            self.amps[sel] *= d1

    def apply_two_qubit(self, u: np.ndarray, q1: int, q2: int) -> None:
        idx = self.tables.pair(q1, q2)
        padded = np.append(self.amps, 0.0)
        sub = padded[idx]  # index -1 reads the zero pad
        new = u @ sub
        valid = idx >= 0
        lost = float(np.sum(np.abs(new[~valid]) ** 2))
        self.amps[idx[valid]] = new[valid]
        if lost > 0:
            self.leaked += lost
            self.amps /= np.linalg.norm(self.amps)

    def number_expectations(self) -> np.ndarray:
        p = self.probabilities()
        return p @ self.tables.bitmat / p.sum()

    def apply_channel(self, event: ChannelEvent, rng: np.random.Generator) -> None:
        if event.kind == READOUT_FLIP:
            raise ValueError("readout flips act on sampled bits, use apply_readout_flips")
        p = event.probability
        if p == 0.0:
            return
        sel, partner = self.tables.ones(event.qubit)
        if event.kind == DEPHASING:
            if rng.random() < p:
                self.amps[sel] *= -1
            return
        w1 = float(np.sum(np.abs(self.amps[sel]) ** 2))
        if rng.random() < p * w1 / float(np.sum(np.abs(self.amps) ** 2)):
            new = np.zeros_like(self.amps)
            new[partner] = self.amps[sel]
            self.amps = new
        else:
            self.amps[sel] *= np.sqrt(1.0 - p)
        self.amps /= np.linalg.norm(self.amps)

    def sample(self, shots: int, rng: np.random.Generator) -> ShotTable:
        if shots < 1:
            raise ValueError("shots must be >= 1")
        cdf = np.cumsum(self.probabilities())
        cdf /= cdf[-1]
        pos = np.minimum(np.searchsorted(cdf, rng.random(shots), side="right"), self.tables.dim - 1)
        return ShotTable(self.tables.basis[pos], self.n_qubits)
