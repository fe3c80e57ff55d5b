"""Synthetic device: imperfect native gates, slow drift, decoherence and readout error.

Noise is simulated by Monte-Carlo trajectories. After every moment each
qubit in the register (busy or idle) receives an amplitude-damping and a
dephasing step whose probabilities follow from the moment's duration:
p_damp = 1 - exp(-t / T1) and p_flip = (1 - exp(-t / T2)) / 2, the latter
matching a Lindblad dephasing term that decays coherences as exp(-t / T2).
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from .gates import NativeGateParams, NcGateParams, nc_gate_matrix, rz2
from .hubbard import (
    DEVICE_ROWS,
    GATE_TIME_NS,
    QubitAssignment,
    TrotterCircuit,
    all_assignments,
    gate_time_ns,
    gate_unitary,
    initial_excitations,
)
from .qsim import (
    AMPLITUDE_DAMPING,
    DEPHASING,
    ChannelEvent,
    ShotTable,
    StateVector,
    SubspaceState,
    apply_readout_flips,
    apply_single_qubit,
    apply_stochastic_channel,
    apply_two_qubit,
)

NOMINAL_THETA, THETA_SD = 0.783, 0.012
NOMINAL_PHI, PHI_SD = 0.138, 0.015
DEFAULT_T1_US, DEFAULT_T2_US = 15.0, 10.0
DEFAULT_P10, DEFAULT_P01 = 0.03, 0.01
SWAP4 = np.eye(4)[[0, 2, 1, 3]]

Pair = tuple[int, int]


def canonical(pair) -> Pair:
    a, b = int(pair[0]), int(pair[1])
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class DriftModel:
    """Slow wandering of the single-qubit phases of every two-qubit gate.

    ``kind`` is "none", "sinusoidal" or "random-walk". The offset is added to
    each listed parameter; sinusoids get a per-pair phase and random walks a
    per-pair path, both fixed by ``seed``.
    """

    kind: str = "none"
    amplitude: float = 0.0
    period: float = 3600.0
    step: float = 60.0
    params: tuple[str, ...] = ("zeta", "gamma")
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "sinusoidal", "random-walk"):
            raise ValueError(f"unknown drift kind {self.kind!r}")

    def offset(self, pair: Pair, name: str, time_s: float) -> float:
        if self.kind == "none" or name not in self.params or self.amplitude == 0:
            return 0.0
        k = self.params.index(name)
        rng = np.random.default_rng([self.seed, pair[0], pair[1], k])
        if self.kind == "sinusoidal":
            phase = rng.uniform(0, 2 * math.pi)
            return self.amplitude * math.sin(2 * math.pi * time_s / self.period + phase)
        n = int(time_s // self.step)
        return float(self.amplitude * np.sum(rng.standard_normal(n))) if n > 0 else 0.0


@dataclass
class DeviceProfile:
    """Per-pair true gate parameters, drift, coherence times and readout error.

    Coherence times are in microseconds keyed by device label; gate times in
    nanoseconds keyed by logical gate kind.
    """

    pair_params: dict[Pair, NcGateParams]
    t1_us: dict[int, float]
    t2_us: dict[int, float]
    readout_p10: float = DEFAULT_P10
    readout_p01: float = DEFAULT_P01
    drift: DriftModel = field(default_factory=DriftModel)
    gate_times_ns: dict[str, float] = field(default_factory=lambda: dict(GATE_TIME_NS))

    def __post_init__(self):
        for d in (self.t1_us, self.t2_us):
            if any(v <= 0 for v in d.values()):
                raise ValueError("coherence times must be positive")
        for p in (self.readout_p10, self.readout_p01):
            if not 0 <= p <= 0.2:
                raise ValueError("readout flip probabilities must lie in [0, 0.2]")
        self.pair_params = {canonical(k): v for k, v in self.pair_params.items()}

    def without_noise(self) -> "DeviceProfile":
        """Same labels and pairs, ideal natives, no decoherence or readout error."""
        ideal = NcGateParams(math.pi / 4)
        inf = {k: math.inf for k in self.t1_us}
        return DeviceProfile({k: ideal for k in self.pair_params}, dict(inf), dict(inf), 0.0, 0.0,
                             DriftModel(), dict(self.gate_times_ns))


def device_pairs(L: int = 8) -> list[Pair]:
    """Every label pair touched by a two-qubit gate in any of the 16 assignments."""
    pairs = set()
    for a in all_assignments(L):
        up, dn = a.labels
        for chain in (up, dn):
            for j in range(L - 1):
                pairs.add(canonical((chain[j], chain[j + 1])))
        for j in range(L):
            pairs.add(canonical((up[j], dn[j])))
    return sorted(pairs)


def generate_profile(L: int = 8, seed: int = 0, theta=(NOMINAL_THETA, THETA_SD), phi=(NOMINAL_PHI, PHI_SD),
                     phase_sd: float = 0.02, t1_us=(DEFAULT_T1_US, 2.0), t2_us=(DEFAULT_T2_US, 1.5),
                     readout=(DEFAULT_P10, DEFAULT_P01), drift: DriftModel | None = None) -> DeviceProfile:
    """Random synthetic device with the stated means and spreads."""
    rng = np.random.default_rng(seed)
    pairs = device_pairs(L)
    params = {}
    for pr in pairs:
        th = float(np.clip(rng.normal(*theta), 0.6, 0.95))
        ph = float(np.clip(rng.normal(*phi), 0.0, math.pi / 4 - 1e-3))
        ze, ch, ga = rng.normal(0.0, phase_sd, 3)
        params[pr] = NcGateParams(th, float(ze), float(ch), float(ga), ph)
    labels = range(DEVICE_ROWS * L)
    t1 = {lab: float(max(1.0, rng.normal(*t1_us))) for lab in labels}
    t2 = {lab: float(max(1.0, rng.normal(*t2_us))) for lab in labels}
    if drift is None:
        drift = DriftModel("sinusoidal", 0.01, 3600.0, 60.0, ("zeta", "gamma"), seed)
    return DeviceProfile(params, t1, t2, readout[0], readout[1], drift)


def noiseless_profile(L: int = 8) -> DeviceProfile:
    return generate_profile(L, 0).without_noise()


def sample_pair_params(profile: DeviceProfile, pair, time_s: float = 0.0, rng=None) -> NcGateParams:
    """True parameters of a pair at wall-clock time ``time_s`` (drift included).

    ``rng`` is accepted for interface symmetry; drift paths are fixed by the
    profile's drift seed so repeated calls agree.
    """
    key = canonical(pair)
    if key not in profile.pair_params:
        raise KeyError(f"pair {key} is not part of the device profile")
    base = profile.pair_params[key]
    d = profile.drift
    if d.kind == "none":
        return base
    return replace(base, **{n: getattr(base, n) + d.offset(key, n, time_s) for n in d.params})


# ---------------------------------------------------------------------------
# Profile file
# ---------------------------------------------------------------------------

_HEADER = "# device profile v1: key = value; pair.A-B = theta zeta chi gamma phi"


def dumps_profile(profile: DeviceProfile) -> str:
    d = profile.drift
    lines = [
        _HEADER,
        f"readout.p10 = {profile.readout_p10!r}",
        f"readout.p01 = {profile.readout_p01!r}",
        f"drift.kind = {d.kind}",
        f"drift.amplitude = {d.amplitude!r}",
        f"drift.period = {d.period!r}",
        f"drift.step = {d.step!r}",
        f"drift.params = {','.join(d.params)}",
        f"drift.seed = {d.seed}",
    ]
    lines += [f"gate_time.{k} = {v!r}" for k, v in sorted(profile.gate_times_ns.items())]
    lines += [f"t1.{k} = {v!r}" for k, v in sorted(profile.t1_us.items())]
    lines += [f"t2.{k} = {v!r}" for k, v in sorted(profile.t2_us.items())]
    lines += [f"pair.{a}-{b} = " + " ".join(repr(float(x)) for x in p.as_tuple())
              for (a, b), p in sorted(profile.pair_params.items())]
    return "\n".join(lines) + "\n"


def loads_profile(text: str) -> DeviceProfile:
    kv: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    pairs, t1, t2, times = {}, {}, {}, dict(GATE_TIME_NS)
    for k, v in kv.items():
        if k.startswith("pair."):
            a, b = k[5:].split("-")
            pairs[(int(a), int(b))] = NcGateParams(*[float(x) for x in v.split()])
        elif k.startswith("t1."):
            t1[int(k[3:])] = float(v)
        elif k.startswith("t2."):
            t2[int(k[3:])] = float(v)
        elif k.startswith("gate_time."):
            times[k[10:]] = float(v)
    drift = DriftModel(kv.get("drift.kind", "none"), float(kv.get("drift.amplitude", 0.0)),
                       float(kv.get("drift.period", 3600.0)), float(kv.get("drift.step", 60.0)),
                       tuple(x for x in kv.get("drift.params", "zeta,gamma").split(",") if x),
                       int(kv.get("drift.seed", 0)))
    return DeviceProfile(pairs, t1, t2, float(kv.get("readout.p10", DEFAULT_P10)),
                         float(kv.get("readout.p01", DEFAULT_P01)), drift, times)


def save_profile(profile: DeviceProfile, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_profile(profile))


def load_profile(path) -> DeviceProfile:
    with open(path) as fh:
        return loads_profile(fh.read())


# ---------------------------------------------------------------------------
# Calibration-aware compilation
# ---------------------------------------------------------------------------

Calibration = Mapping[Pair, NcGateParams]


def perfect_calibration(profile: DeviceProfile, time_s: float = 0.0) -> dict[Pair, NcGateParams]:
    """Estimates equal to the true parameters at ``time_s``."""
    return {k: sample_pair_params(profile, k, time_s) for k in profile.pair_params}


def nominal_calibration(profile: DeviceProfile) -> dict[Pair, NcGateParams]:
    """No calibration: every gate assumed to be the ideal K(pi/4)."""
    return {k: NcGateParams(math.pi / 4) for k in profile.pair_params}


def _clip_native(p: NcGateParams) -> NativeGateParams:
    th = min(max(p.theta, math.pi / 4 - 0.19), math.pi / 4 + 0.19)
    return NativeGateParams(th, min(max(p.phi, 0.0), math.pi / 4 - 1e-9))


def native_lookup(assignment: QubitAssignment, calibration: Calibration):
    """Register-pair -> NativeGateParams function for circuit builders."""

    def look(qa: int, qb: int) -> NativeGateParams:
        key = canonical((assignment.label(qa), assignment.label(qb)))
        if key not in calibration:
            raise KeyError(f"no calibration for device pair {key}")
        return _clip_native(calibration[key])

    return look


def realized_native(true: NcGateParams, estimate: NcGateParams | None) -> np.ndarray:
    """Native slot after the Z-phase corrections derived from ``estimate``.

    U(theta, zeta, chi, gamma, phi) = Rz(-g,-g) Rz(b,-b) K(theta) CPHASE(phi) Rz(a,-a)
    with a = (zeta+chi)/2 and b = (zeta-chi)/2, so wrapping the true gate in
    the inverse corrections leaves K(theta) CPHASE(phi) when the estimate is exact.
    """
    u = nc_gate_matrix(true)
    if estimate is None:
        return u
    a = 0.5 * (estimate.zeta + estimate.chi)
    b = 0.5 * (estimate.zeta - estimate.chi)
    g = estimate.gamma
    return rz2(-b, b) @ rz2(g, g) @ u @ rz2(-a, a)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class ReplayResult:
    """Shot tables at every recorded step plus run diagnostics."""

    tables: list[ShotTable]
    trajectories: int
    leaked: float = 0.0


def _moment_duration(moment, profile: DeviceProfile) -> float:
    return max((gate_time_ns(g, profile.gate_times_ns) for g in moment), default=0.0)


class _Compiled:
    """Per-circuit cache of realized gate matrices under one calibration and time."""

    def __init__(self, circuit: TrotterCircuit, profile: DeviceProfile, calibration: Calibration | None,
                 time_s: float):
        self.mats: dict[int, np.ndarray] = {}
        a = circuit.assignment
        for g in circuit.gates():
            if g.plan is None:
                continue
            la, lb = a.label(g.qubits[0]), a.label(g.qubits[1])
            key = canonical((la, lb))
            true = sample_pair_params(profile, key, time_s)
            est = None if calibration is None else calibration.get(key)
            slot = realized_native(true, est)
            if (la, lb) != key:  # device parameters are stored for the ordered pair
                slot = SWAP4 @ slot @ SWAP4
            self.mats[id(g)] = g.plan.replay(slot)


def noisy_replay_steps(circuit: TrotterCircuit, profile: DeviceProfile, shots: int, seed: int,
                       calibration: Calibration | str | None = "perfect", time_s: float = 0.0,
                       shots_per_trajectory: int = 100, engine: str = "subspace") -> ReplayResult:
    """Monte-Carlo replay returning shot tables after every recorded step.

    Args:
        circuit: logical circuit whose plans were compiled for the estimated natives.
        profile: the synthetic device.
        shots: samples per recorded step.
        seed: master seed; trajectories use independent spawned streams.
        calibration: "perfect" (true parameters at time 0), "none" (no
            Z-phase corrections) or an explicit mapping of estimates.
        time_s: wall-clock time used for drift.
        shots_per_trajectory: samples drawn from each trajectory.
        engine: "subspace" (excitation-bounded) or "dense".
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if calibration == "perfect":
        calibration = perfect_calibration(profile, 0.0)
    elif calibration == "none":
        calibration = None
    compiled = _Compiled(circuit, profile, calibration, time_s)
    a = circuit.assignment
    labels = [a.label(q) for q in range(circuit.n_qubits)]
    t1 = np.array([profile.t1_us.get(lab, math.inf) for lab in labels]) * 1000.0
    t2 = np.array([profile.t2_us.get(lab, math.inf) for lab in labels]) * 1000.0
    mask = initial_excitations(circuit)
    k = max(bin(mask).count("1"), 1)
    start = 1 if mask else 0
    durations = [_moment_duration(m, profile) for m in circuit.moments]
    ends = set(circuit.step_ends)
    n_traj = math.ceil(shots / shots_per_trajectory)
    streams = np.random.SeedSequence(seed).spawn(n_traj)
    per_step: dict[int, list[np.ndarray]] = {e: [] for e in circuit.step_ends}
    leaked = 0.0

    def decohere(state, dt, rng):
        if dt <= 0:
            return
        pd = -np.expm1(-dt / t1)
        pz = -0.5 * np.expm1(-dt / t2)
        for q in range(circuit.n_qubits):
            if engine == "dense":
                apply_stochastic_channel(state, ChannelEvent(AMPLITUDE_DAMPING, q, pd[q]), rng)
                apply_stochastic_channel(state, ChannelEvent(DEPHASING, q, pz[q]), rng)
            else:
                state.apply_channel(ChannelEvent(AMPLITUDE_DAMPING, q, pd[q]), rng)
                state.apply_channel(ChannelEvent(DEPHASING, q, pz[q]), rng)

    for t in range(n_traj):
        rng = np.random.default_rng(streams[t])
        take = min(shots_per_trajectory, shots - t * shots_per_trajectory)
        if engine == "dense":
            state = StateVector.basis(circuit.n_qubits, mask)
        else:
            state = SubspaceState.basis_state(circuit.n_qubits, mask, k)
        if start:
            decohere(state, durations[0], rng)
        if 0 in ends or (start and start in ends):
            e = 0 if 0 in ends else start
            per_step[e].append(_sample(state, take, rng, engine))
        for i in range(start, len(circuit.moments)):
            for g in circuit.moments[i]:
                if g.kind == "ECHO":
                    continue
                if g.kind == "RZ":
                    if engine == "dense":
                        apply_single_qubit(state, gate_unitary(g), g.qubits[0], check=False)
                    else:
                        state.apply_single_qubit_diag(1.0, np.exp(1j * g.angle), g.qubits[0])
                    continue
                if g.kind == "X":
                    raise ValueError("X gates are only supported in the first moment")
                u = compiled.mats[id(g)]
                if engine == "dense":
                    apply_two_qubit(state, u, *g.qubits, check=False)
                else:
                    state.apply_two_qubit(u, *g.qubits)
            decohere(state, durations[i], rng)
            if (i + 1) in ends:
                per_step[i + 1].append(_sample(state, take, rng, engine))
        if engine != "dense":
            leaked += state.leaked
    tables = []
    flip_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(n_traj + 1)[-1])
    for e in circuit.step_ends:
        raw = ShotTable(np.concatenate(per_step[e]), circuit.n_qubits, seed)
        tables.append(apply_readout_flips(raw, profile.readout_p10, profile.readout_p01, flip_rng))
    return ReplayResult(tables, n_traj, leaked / n_traj)


def _sample(state, shots: int, rng, engine: str) -> np.ndarray:
    if engine == "dense":
        p = state.probabilities()
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        return np.minimum(np.searchsorted(cdf, rng.random(shots), side="right"), len(p) - 1)
    return state.sample(shots, rng).bitstrings


def noisy_replay(circuit: TrotterCircuit, profile: DeviceProfile, shots: int, seed: int,
                 **kw) -> ShotTable:
    """Shots of the complete circuit (last recorded step)."""
    return noisy_replay_steps(circuit, profile, shots, seed, **kw).tables[-1]
