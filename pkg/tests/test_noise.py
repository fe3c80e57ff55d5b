"""Synthetic device profiles, calibration-aware compilation and noisy replay."""

import math
from pathlib import Path

import numpy as np
import pytest

from fhsim.gates import NcGateParams, k_gate, nc_gate_matrix, unitary_distance
from fhsim.hubbard import (
    UP,
    HubbardParams,
    Wavepacket,
    build_evolution_circuit,
    build_initial_state_circuit,
    build_wavepacket_circuit,
    densities_from_shots,
    make_assignment,
    replay,
    trapped_params,
    GaussianTrap,
)
from fhsim.mitigation import postselect
from fhsim.noise import (
    DeviceProfile,
    DriftModel,
    device_pairs,
    dumps_profile,
    generate_profile,
    load_profile,
    loads_profile,
    native_lookup,
    noiseless_profile,
    noisy_replay,
    noisy_replay_steps,
    perfect_calibration,
    realized_native,
    sample_pair_params,
    save_profile,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FIXTURE = CONFIGS / "profiles" / "device_8x3.txt"


def compile_for(profile, variant, circuit_fn):
    a = make_assignment(8, variant)
    look = native_lookup(a, perfect_calibration(profile, 0.0))
    return circuit_fn(look, a)


def wavepacket_circuit(eta):
    def fn(look, a):
        prep = build_wavepacket_circuit(8, Wavepacket(5.0, 1.0, -math.pi / 2), Wavepacket(4.0, 1.0, math.pi / 2),
                                        look, a)
        return build_evolution_circuit(prep, HubbardParams(8, tau=0.3), eta, look, hopping_only=True)
    return fn


def separation_circuit(u, eta):
    def fn(look, a):
        h0 = trapped_params(8, GaussianTrap(4.0, 4.5, 1.0), None)
        prep = build_initial_state_circuit(h0, 2, 2, look, a)
        return build_evolution_circuit(prep, HubbardParams(8, U=u, tau=0.3), eta, look,
                                       spin_echo=True, infeasible="split_all")
    return fn


class TestProfile:
    def test_pairs_cover_all_layouts(self):
        pairs = device_pairs(8)
        # row bonds of straight and horizontally flipped chains, plus the rung links
        assert len(pairs) == 46
        assert {(0, 1), (0, 3), (0, 8), (8, 16)} <= set(pairs)
        assert all(a < b for a, b in pairs)

    def test_theta_and_phi_spread(self):
        p = generate_profile(8, seed=3)
        th = np.array([v.theta for v in p.pair_params.values()])
        ph = np.array([v.phi for v in p.pair_params.values()])
        assert abs(th.mean() - 0.783) < 3 * 0.012 / math.sqrt(len(th))
        assert 0.006 < th.std() < 0.02
        assert abs(ph.mean() - 0.138) < 3 * 0.015 / math.sqrt(len(ph))

    def test_round_trip_text(self, tmp_path):
        p = generate_profile(8, seed=5, drift=DriftModel("random-walk", 0.002, 3600, 30, ("zeta",), 9))
        back = loads_profile(dumps_profile(p))
        assert back == p
        save_profile(p, tmp_path / "p.txt")
        assert load_profile(tmp_path / "p.txt") == p

    def test_frozen_fixture_round_trips(self):
        text = FIXTURE.read_text()
        prof = loads_profile(text)
        assert dumps_profile(prof) == text
        assert prof == generate_profile(8, 0, t1_us=(15, 2), t2_us=(9, 1.5))

    def test_validation(self):
        with pytest.raises(ValueError):
            DeviceProfile({}, {0: -1.0}, {0: 1.0})
        with pytest.raises(ValueError):
            DeviceProfile({}, {0: 1.0}, {0: 1.0}, readout_p10=0.5)
        with pytest.raises(ValueError):
            DriftModel("brownian")

    def test_noiseless_profile_is_ideal(self):
        p = noiseless_profile(8)
        for pr in p.pair_params:
            assert unitary_distance(nc_gate_matrix(sample_pair_params(p, pr, 1e4)), k_gate(math.pi / 4)) < 1e-14
        assert all(math.isinf(t) for t in p.t1_us.values())
        assert p.readout_p10 == p.readout_p01 == 0


class TestDrift:
    def test_sinusoid_bounded_and_periodic(self):
        p = generate_profile(8, seed=1)
        pr = next(iter(p.pair_params))
        z = [sample_pair_params(p, pr, t).zeta - p.pair_params[pr].zeta for t in np.linspace(0, 3600, 50)]
        assert max(abs(x) for x in z) <= 0.01 + 1e-15
        np.testing.assert_allclose(sample_pair_params(p, pr, 100.0).as_tuple(),
                                   sample_pair_params(p, pr, 3700.0).as_tuple(), atol=1e-14)

    def test_random_walk_deterministic(self):
        d = DriftModel("random-walk", 0.001, step=60.0, seed=4)
        assert d.offset((0, 1), "zeta", 600) == d.offset((0, 1), "zeta", 600)
        assert d.offset((0, 1), "zeta", 30) == 0.0
        assert d.offset((0, 1), "theta", 600) == 0.0

    def test_unknown_pair(self):
        with pytest.raises(KeyError):
            sample_pair_params(noiseless_profile(8), (0, 23))


class TestRealizedNative:
    def test_exact_estimate_strips_phases(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = NcGateParams(*rng.uniform(-0.5, 0.5, 5))
            slot = realized_native(p, p)
            ref = k_gate(p.theta) @ np.diag([1, 1, 1, np.exp(-1j * p.phi)])
            assert unitary_distance(slot, ref) < 1e-12

    def test_no_estimate_returns_true_gate(self):
        p = NcGateParams(0.7, 0.1, 0.2, 0.3, 0.1)
        np.testing.assert_allclose(realized_native(p, None), nc_gate_matrix(p))


class TestNoisyReplay:
    def test_noiseless_profile_matches_ideal_replay(self):
        prof = noiseless_profile(8)
        circ = compile_for(prof, 4, separation_circuit(2.0, 3))
        ideal = replay(circ)[-1].number_expectations()
        table = noisy_replay(circ, prof, 4000, seed=1)
        freq = table.bits().mean(axis=0)
        sigma = np.sqrt(np.maximum(ideal * (1 - ideal), 1e-4) / 4000)
        assert np.all(np.abs(freq - ideal) < 4 * sigma + 1e-12)
        _, rate = postselect(table, circ.assignment, 2, 2)
        assert rate == 1.0

    def test_dense_and_subspace_engines_agree(self):
        prof = loads_profile(FIXTURE.read_text())
        circ = compile_for(prof, 0, wavepacket_circuit(3))
        a = circ.assignment
        sub = noisy_replay(circ, prof, 3000, seed=2)
        dense = noisy_replay(circ, prof, 3000, seed=3, engine="dense")
        r1, r2 = densities_from_shots(sub, a)[UP], densities_from_shots(dense, a)[UP]
        assert np.max(np.abs(r1 - r2)) < 5 * math.sqrt(0.25 * 2 / 3000)

    def test_seeded_runs_are_identical(self):
        prof = loads_profile(FIXTURE.read_text())
        circ = compile_for(prof, 1, wavepacket_circuit(2))
        a = noisy_replay_steps(circ, prof, 300, seed=9)
        b = noisy_replay_steps(circ, prof, 300, seed=9)
        for x, y in zip(a.tables, b.tables):
            np.testing.assert_array_equal(x.bitstrings, y.bitstrings)
        assert len(a.tables) == 3

    def test_shot_count_and_validation(self):
        prof = noiseless_profile(8)
        circ = compile_for(prof, 0, wavepacket_circuit(1))
        assert noisy_replay(circ, prof, 250, seed=0, shots_per_trajectory=100).shots == 250
        with pytest.raises(ValueError):
            noisy_replay(circ, prof, 0, seed=0)

    def test_readout_only_flip_rate(self):
        prof = noiseless_profile(8)
        prof.readout_p10, prof.readout_p01 = 0.05, 0.02
        circ = compile_for(prof, 0, wavepacket_circuit(0))
        n = 10000
        table = noisy_replay(circ, prof, n, seed=4)
        occ = replay(circ)[-1].number_expectations()
        expected = occ * 0.95 + (1 - occ) * 0.02
        sigma = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(table.bits().mean(axis=0) - expected) < 4 * sigma)

    def test_success_rate_at_eta_55_in_window(self):
        prof = loads_profile(FIXTURE.read_text())
        circ = compile_for(prof, 0, wavepacket_circuit(55))
        table = noisy_replay(circ, prof, 600, seed=2021)
        _, rate = postselect(table, circ.assignment, 1, 1)
        assert 0.1 <= rate <= 0.4

    def test_success_rate_independent_of_u(self):
        prof = loads_profile(FIXTURE.read_text())
        rates = []
        for u in (0.0, 3.0):
            circ = compile_for(prof, 0, separation_circuit(u, 4))
            table = noisy_replay(circ, prof, 1500, seed=11)
            rates.append(postselect(table, circ.assignment, 2, 2)[1])
        sem = math.sqrt(rates[0] * (1 - rates[0]) / 1500)
        assert abs(rates[0] - rates[1]) < 4 * math.sqrt(2) * sem
