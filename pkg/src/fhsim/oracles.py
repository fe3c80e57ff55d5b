"""Reference solutions: exact sector evolution, free-fermion propagation and a sector-level Trotter product.

These engines never touch the qubit circuits; they work directly with
fermionic occupation bases, so agreement with circuit replay is a genuine
cross-check of the compiler.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .hubbard import DOWN, UP, HubbardParams, QubitAssignment

MAX_SECTOR_DIM = 10**6
_DENSE_LIMIT = 20000


@dataclass
class SectorBasis:
    """Occupation basis with fixed (N_up, N_down) on L sites.

    States are ordered with the spin-up mask as the slow index. Bit j of a
    mask is site j (0-indexed).
    """

    L: int
    n_up: int
    n_down: int

    def __post_init__(self):
        dim = self.dim
        if dim > MAX_SECTOR_DIM:
            raise ValueError(f"sector dimension {dim} exceeds {MAX_SECTOR_DIM}")

    @staticmethod
    def _masks(L: int, n: int) -> list[int]:
        return sorted(sum(1 << j for j in c) for c in itertools.combinations(range(L), n))

    @cached_property
    def up_masks(self) -> list[int]:
        return self._masks(self.L, self.n_up)

    @cached_property
    def down_masks(self) -> list[int]:
        return self._masks(self.L, self.n_down)

    @property
    def dim(self) -> int:
        from math import comb
        return comb(self.L, self.n_up) * comb(self.L, self.n_down)

    @cached_property
    def basis(self) -> list[tuple[int, int]]:
        return [(u, d) for u in self.up_masks for d in self.down_masks]

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {s: i for i, s in enumerate(self.basis)}

    @cached_property
    def occupations(self) -> tuple[np.ndarray, np.ndarray]:
        """(dim, L) occupation numbers for spin up and spin down."""
        sites = np.arange(self.L)
        up = np.array([(u >> sites) & 1 for u, _ in self.basis], dtype=float)
        dn = np.array([(d >> sites) & 1 for _, d in self.basis], dtype=float)
        return up, dn

    def densities(self, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.abs(np.asarray(psi)) ** 2
        p = p / p.sum()
        up, dn = self.occupations
        return p @ up, p @ dn

    def qubit_indices(self, assignment: QubitAssignment) -> np.ndarray:
        """Register basis index of every sector state under an assignment."""
        qu, qd = assignment.chain_qubits(UP), assignment.chain_qubits(DOWN)
        out = np.empty(self.dim, dtype=np.int64)
        for i, (u, d) in enumerate(self.basis):
            out[i] = sum(1 << qu[j] for j in range(self.L) if u >> j & 1) + \
                sum(1 << qd[j] for j in range(self.L) if d >> j & 1)
        return out


def _hop_terms(L: int, masks: list[int], bonds) -> list[tuple[int, int]]:
    """(from, to) mask pairs for single hops across the given bonds."""
    out = []
    lookup = set(masks)
    for m in masks:
        for a, b in bonds:
            if (m >> a & 1) != (m >> b & 1):
                m2 = m ^ (1 << a) ^ (1 << b)
                if m2 in lookup:
                    out.append((m, m2))
    return out


def sector_hamiltonian(p: HubbardParams, basis: SectorBasis, bonds=None, include_onsite: bool = True,
                       include_potential: bool = True, include_v: bool = True) -> np.ndarray:
    """Dense Hamiltonian restricted to the sector.

    Adjacent-site hopping has no Jordan-Wigner sign in 1D with open
    boundaries, so every hop contributes -J. ``bonds`` restricts hopping and
    nearest-neighbor terms to a subset of (j, j+1) pairs.
    """
    L = p.L
    if basis.L != L:
        raise ValueError("basis and parameters disagree on L")
    bonds = [(j, j + 1) for j in range(L - 1)] if bonds is None else list(bonds)
    dim = basis.dim
    up, dn = basis.occupations
    diag = np.zeros(dim)
    if include_onsite:
        diag += p.U * np.sum(up * dn, axis=1)
    if include_potential:
        diag += up @ p.eps[:, UP] + dn @ p.eps[:, DOWN]
    if include_v:
        v = p.bond_v()
        for a, b in bonds:
            diag += v[UP, a] * up[:, a] * up[:, b] + v[DOWN, a] * dn[:, a] * dn[:, b]
    h = np.diag(diag).astype(complex)
    idx = basis.index
    for u, u2 in _hop_terms(L, basis.up_masks, bonds):
        for d in basis.down_masks:
            h[idx[(u2, d)], idx[(u, d)]] += -p.J
    for d, d2 in _hop_terms(L, basis.down_masks, bonds):
        for u in basis.up_masks:
            h[idx[(u, d2)], idx[(u, d)]] += -p.J
    return h


def slater_amplitudes(orbitals: np.ndarray, masks: list[int]) -> np.ndarray:
    """det(Q[S, :]) for every occupied set S (ascending sites)."""
    q = np.asarray(orbitals)
    n = q.shape[1]
    out = np.empty(len(masks), dtype=complex)
    for i, m in enumerate(masks):
        sites = [j for j in range(q.shape[0]) if m >> j & 1]
        out[i] = np.linalg.det(q[sites, :]) if n else 1.0
    return out


def slater_sector_state(basis: SectorBasis, q_up: np.ndarray, q_down: np.ndarray) -> np.ndarray:
    """Product of spin-up and spin-down Slater determinants in the sector basis."""
    a_up = slater_amplitudes(q_up, basis.up_masks)
    a_dn = slater_amplitudes(q_down, basis.down_masks)
    psi = np.kron(a_up, a_dn)
    return psi / np.linalg.norm(psi)


@dataclass
class Evolution:
    times: np.ndarray
    states: np.ndarray  # (n_times, dim)
    rho_up: np.ndarray  # (n_times, L)
    rho_down: np.ndarray

    @property
    def rho_plus(self) -> np.ndarray:
        return self.rho_up + self.rho_down

    @property
    def rho_minus(self) -> np.ndarray:
        return self.rho_up - self.rho_down


def _densities(basis: SectorBasis, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    up, dn = basis.occupations
    p = np.abs(states) ** 2
    p = p / p.sum(axis=1, keepdims=True)
    return p @ up, p @ dn


def exact_evolve(p: HubbardParams, basis: SectorBasis, psi0: np.ndarray, times) -> Evolution:
    """exp(-i H t) psi0 by dense eigendecomposition of the sector Hamiltonian."""
    if basis.dim > _DENSE_LIMIT:
        raise ValueError(f"sector dimension {basis.dim} too large for dense diagonalization")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    h = sector_hamiltonian(p, basis)
    evals, evecs = np.linalg.eigh(h)
    c0 = evecs.conj().T @ np.asarray(psi0, dtype=complex)
    states = (evecs @ (np.exp(-1j * np.outer(evals, times)) * c0[:, None])).T
    up, dn = _densities(basis, states)
    return Evolution(times, states, up, dn)


def energy(p: HubbardParams, basis: SectorBasis, psi: np.ndarray) -> float:
    h = sector_hamiltonian(p, basis)
    return float(np.real(np.vdot(psi, h @ psi)) / np.real(np.vdot(psi, psi)))


def free_propagator(h_single: np.ndarray, orbitals: np.ndarray, times) -> np.ndarray:
    """Site densities sum_k |(exp(-i h t) phi_k)_j|^2, shape (n_times, L)."""
    h = np.asarray(h_single)
    if not np.allclose(h, h.conj().T, atol=1e-12):
        raise ValueError("single-particle Hamiltonian must be hermitian")
    q = np.asarray(orbitals, dtype=complex)
    if q.ndim == 1:
        q = q[:, None]
    evals, evecs = np.linalg.eigh(h)
    c0 = evecs.conj().T @ q
    out = []
    for t in np.atleast_1d(times):
        phi = evecs @ (np.exp(-1j * evals * t)[:, None] * c0)
        out.append(np.sum(np.abs(phi) ** 2, axis=1))
    return np.array(out)


def trotter_step_matrix(p: HubbardParams, basis: SectorBasis, hopping_only: bool = False) -> np.ndarray:
    """Sector matrix of one step with the circuit's operator splitting.

    Order: hopping (plus nearest-neighbor term) on bonds (0,1),(2,3),..;
    on-site interaction on all sites; hopping on bonds (1,2),(3,4),.. .
    Local potentials are not part of the evolution.
    """
    L = p.L
    odd = [(j, j + 1) for j in range(0, L - 1, 2)]
    even = [(j, j + 1) for j in range(1, L - 1, 2)]
    h_odd = sector_hamiltonian(p, basis, odd, include_onsite=False, include_potential=False)
    h_even = sector_hamiltonian(p, basis, even, include_onsite=False, include_potential=False)
    e_odd = scipy.linalg.expm(-1j * p.tau * h_odd)
    e_even = scipy.linalg.expm(-1j * p.tau * h_even)
    if hopping_only:
        return e_even @ e_odd
    up, dn = basis.occupations
    e_int = np.exp(-1j * p.tau * p.U * np.sum(up * dn, axis=1))
    return e_even @ (e_int[:, None] * e_odd)


def trotterized_reference(p: HubbardParams, basis: SectorBasis, psi0: np.ndarray, eta: int,
                          hopping_only: bool = False) -> Evolution:
    """States and densities after 0..eta Trotter steps, without any qubit circuit."""
    step = trotter_step_matrix(p, basis, hopping_only)
    states = [np.asarray(psi0, dtype=complex)]
    for _ in range(eta):
        states.append(step @ states[-1])
    states = np.array(states)
    up, dn = _densities(basis, states)
    return Evolution(np.arange(eta + 1) * p.tau, states, up, dn)


def sector_state_from_register(amps_by_index: dict[int, complex] | np.ndarray, basis: SectorBasis,
                               assignment: QubitAssignment) -> np.ndarray:
    """Pick the sector amplitudes out of a full register amplitude vector."""
    idx = basis.qubit_indices(assignment)
    amps = np.asarray(amps_by_index)
    return amps[idx]
