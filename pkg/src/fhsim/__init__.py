"""Fermi-Hubbard dynamics on a simulated superconducting-qubit device.

Subpackages by concern:

* ``qsim`` -- statevector and excitation-bounded simulators, shots, channels.
* ``gates`` -- number-conserving two-qubit gates and their native decompositions.
* ``hubbard`` -- model parameters, qubit layouts and Trotter circuit builders.
* ``oracles`` -- exact sector evolution and free-fermion references.
* ``noise`` -- synthetic device profiles and noisy Monte-Carlo replay.
* ``mitigation`` -- postselection, assignment averaging and rescaling.
* ``floquet`` -- Floquet calibration of two-qubit gate parameters.
* ``experiments`` / ``cli`` -- config-driven experiment runs and outputs.
"""

from .gates import (
    IDEAL_NATIVE,
    InfeasibleDecompositionError,
    NativeGateParams,
    NcGateParams,
    decompose_cphase,
    decompose_givens,
    decompose_iswap,
    decompose_k,
    nc_gate_matrix,
    nc_gate_power,
)
from .hubbard import (
    DOWN,
    UP,
    DensitySeries,
    GaussianTrap,
    HubbardParams,
    QubitAssignment,
    TrotterCircuit,
    Wavepacket,
    build_evolution_circuit,
    build_initial_state_circuit,
    build_trotter_step,
    build_wavepacket_circuit,
    circuit_stats,
    make_assignment,
    parse_circuit_text,
    spread,
)
from .mitigation import EmptyPostselectionError, apply_rescale, assignment_average, fit_rescale, postselect
from .noise import DeviceProfile, generate_profile, load_profile, noisy_replay, save_profile
from .oracles import SectorBasis, exact_evolve, free_propagator, trotterized_reference
from .qsim import ShotTable, StateVector, SubspaceState

__version__ = "0.1.0"

__all__ = [
    "DOWN",
    "UP",
    "IDEAL_NATIVE",
    "DensitySeries",
    "DeviceProfile",
    "EmptyPostselectionError",
    "GaussianTrap",
    "HubbardParams",
    "InfeasibleDecompositionError",
    "NativeGateParams",
    "NcGateParams",
    "QubitAssignment",
    "SectorBasis",
    "ShotTable",
    "StateVector",
    "SubspaceState",
    "TrotterCircuit",
    "Wavepacket",
    "apply_rescale",
    "assignment_average",
    "build_evolution_circuit",
    "build_initial_state_circuit",
    "build_trotter_step",
    "build_wavepacket_circuit",
    "circuit_stats",
    "decompose_cphase",
    "decompose_givens",
    "decompose_iswap",
    "decompose_k",
    "exact_evolve",
    "fit_rescale",
    "free_propagator",
    "generate_profile",
    "load_profile",
    "make_assignment",
    "nc_gate_matrix",
    "nc_gate_power",
    "noisy_replay",
    "parse_circuit_text",
    "postselect",
    "save_profile",
    "spread",
    "trotterized_reference",
]
