"""Floquet calibration: cycle algebra, probabilities, estimators, schedules and variance."""

import math

import numpy as np
import pytest

from fhsim.gates import NcGateParams, nc_gate_matrix, unitary_distance
from fhsim.floquet import (
    GAMMA_CHI,
    GAMMA_PHI,
    THETA_ZETA,
    CycleSetting,
    DecoherenceBudget,
    PairSampler,
    amplitude_z_minus,
    calibrate,
    calibration_report,
    choose_z_minus,
    circuit1_probability,
    circuit2_probabilities,
    circuit3_probabilities,
    circuit_probabilities,
    cycle_eigensystem,
    cycle_params,
    cycle_unitary,
    empirical_variance_curve,
    fisher_combined,
    ideal_phase_cost,
    local_minima,
    make_schedule,
    mu_model,
    optimal_repetitions,
    phase_cosine,
    rabi_angle,
    sign_lambda,
    spurious_minimum,
    track_drift,
    variance_model,
    write_report,
)

rng0 = np.random.default_rng(2021)
PARAM_GRID = [NcGateParams(float(rng0.uniform(0.6, 0.95)), *map(float, rng0.uniform(-0.3, 0.3, 3)),
                           float(rng0.uniform(0.05, 0.25))) for _ in range(8)]
TRUTH = NcGateParams(0.783, 0.02, 0.05, 0.2, 0.138)


class ExactSampler:
    """Counts equal to rounded expectations, so estimates carry no shot noise."""

    def __init__(self, params):
        self.params = params

    def sample(self, circuit, setting):
        return np.rint(circuit_probabilities(self.params, circuit, setting) * setting.shots)


class TestCycleAlgebra:
    def test_eigen_identity(self):
        for p in PARAM_GRID:
            phases, vecs = cycle_eigensystem(p)
            block = nc_gate_matrix(p)[1:3, 1:3]
            for k in range(2):
                np.testing.assert_allclose(block @ vecs[:, k], np.exp(-1j * phases[k]) * vecs[:, k], atol=1e-10)

    def test_offsets_transform_parameters(self):
        for p in PARAM_GRID:
            for zm, zp in ((0.3, 0.2), (-1.1, 0.7)):
                u = cycle_unitary(p, zm, zp)
                assert unitary_distance(u, nc_gate_matrix(cycle_params(p, zm, zp))) < 1e-12

    def test_rabi_angle_range(self):
        for p in PARAM_GRID:
            for zm in np.linspace(-3, 3, 13):
                om = rabi_angle(p.theta, p.zeta, zm)
                assert p.theta - 1e-12 <= om <= math.pi - p.theta + 1e-12

    def test_sign_lambda(self):
        assert sign_lambda(0.7, 0.0, 0.0, 1) == 1.0
        # zeta = z_minus = 0 gives Omega_c = theta; sin(5 pi / 5) vanishes, so the sign is undecided
        assert sign_lambda(math.pi / 5, 0.0, 0.0, 5) == 0.0
        # sin(3 Omega) / sin(Omega) < 0 for Omega = 0.4 pi
        assert sign_lambda(0.4 * math.pi, 0.0, 0.0, 3) == -1.0


class TestProbabilities:
    @pytest.mark.parametrize("n", [1, 2, 5, 13])
    def test_circuit1_closed_form(self, n):
        for p in PARAM_GRID:
            for zm in (0.0, math.pi / 4, 2.0):
                probs = circuit_probabilities(p, THETA_ZETA, CycleSetting(n, zm, 0.0))
                assert probs[1] + probs[2] == pytest.approx(1.0, abs=1e-12)
                assert probs[2] == pytest.approx(circuit1_probability(p, zm, n), abs=1e-10)

    @pytest.mark.parametrize("n", [1, 3, 8])
    def test_phase_circuits_closed_form(self, n):
        for p in PARAM_GRID:
            s = CycleSetting(n, 0.4, -0.3)
            pr2 = circuit_probabilities(p, GAMMA_CHI, s)
            p2, q2 = circuit2_probabilities(p, 0.4, -0.3, n)
            assert pr2[0] == pytest.approx(p2, abs=1e-10)
            assert pr2[1] == pytest.approx(q2, abs=1e-10)
            assert pr2[3] == pytest.approx(q2, abs=1e-10)
            pr3 = circuit_probabilities(p, GAMMA_PHI, s)
            p3, q3 = circuit3_probabilities(p, 0.4, -0.3, n)
            assert pr3[2] == pytest.approx(p3, abs=1e-10)
            assert pr3[0] == pytest.approx(q3, abs=1e-10)
            assert pr3[1] == pytest.approx(q3, abs=1e-10)

    def test_phase_model_matches_probabilities(self):
        for p in PARAM_GRID:
            for n in (2, 5, 9):
                zm = amplitude_z_minus(p.theta, p.zeta, n)
                sign = sign_lambda(p.theta, p.zeta, zm, n)
                if sign == 0:
                    continue
                for circuit, fn, x in ((GAMMA_CHI, circuit2_probabilities, p.gamma),
                                       (GAMMA_PHI, circuit3_probabilities, p.gamma + p.phi)):
                    pn, qn = fn(p, zm, 0.37, n)
                    mu = mu_model(circuit, x, p.chi, n, zm, 0.37, sign)
                    assert phase_cosine(pn, qn) == pytest.approx(math.cos(mu), abs=1e-9)

    def test_decoherence_reduces_contrast(self):
        s = CycleSetting(20, 0.5, 0.0)
        clean = circuit_probabilities(TRUTH, GAMMA_CHI, s)
        noisy = circuit_probabilities(TRUTH, GAMMA_CHI, s, DecoherenceBudget(0.02, 0.02))
        assert noisy.sum() == pytest.approx(1.0)
        assert np.abs(noisy - 0.25).sum() < np.abs(clean - 0.25).sum()

    def test_sampler_readout(self):
        sampler = PairSampler(TRUTH, p10=0.05, p01=0.02, seed=0)
        s = CycleSetting(1, 0.0, 0.0, 100000)
        counts = sampler.sample(THETA_ZETA, s)
        assert counts.sum() == 100000
        assert counts[0] > 0 and counts[3] > 0
        with pytest.raises(ValueError):
            PairSampler(TRUTH, p10=0.5)


class TestSchedules:
    def test_reference_schedules(self):
        assert make_schedule(2.0, 7).ns == (1, 2, 4, 8, 16, 32, 64)
        assert make_schedule(1.9, 7).ns == (1, 2, 4, 7, 14, 25, 48)

    def test_coprime_triples(self):
        s = make_schedule(2.0, 7, coprime=True)
        for a, b, c in zip(s.ns, s.ns[1:], s.ns[2:]):
            assert math.gcd(math.gcd(a, b), c) == 1
        assert all(b > a for a, b in zip(s.ns, s.ns[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            make_schedule(1.0, 5)
        with pytest.raises(ValueError):
            make_schedule(2.0, 1)

    def test_window_policy(self):
        s = make_schedule(1.9, 7)
        assert s.window(2) == (0, 1, 2)
        assert s.window(5) == (2, 3, 4, 5)
        assert s.window(6) == (5, 6)

    def test_landscape_spurious_minima(self):
        powers = [1, 2, 4, 8, 16, 32, 64]
        mixed = [1, 2, 4, 7, 14, 25, 48]
        assert spurious_minimum(powers) == pytest.approx(4.0, abs=1e-6)
        assert spurious_minimum(mixed) > spurious_minimum(powers)
        x = np.linspace(-math.pi, math.pi, 1001)
        c = ideal_phase_cost(mixed, 0.4, x)
        assert abs(x[np.argmin(c)] - 0.4) < 2 * math.pi / 1000
        assert len(local_minima(np.cos(np.linspace(0, 4 * math.pi, 400, endpoint=False)))) == 2


class TestOffsets:
    def test_choose_z_minus_hits_steep_slope(self):
        for p in PARAM_GRID[:4]:
            for n in (4, 7, 14):
                for zm in choose_z_minus(p.theta, p.zeta, n):
                    om = rabi_angle(p.theta, p.zeta, zm)
                    assert abs(math.sin(2 * n * om)) > 0.99

    def test_amplitude_z_minus_maximizes(self):
        p = PARAM_GRID[0]
        for n in (3, 10):
            zm = amplitude_z_minus(p.theta, p.zeta, n)
            best = max(circuit1_probability(p, z, n) for z in np.linspace(-math.pi, math.pi, 721))
            assert circuit1_probability(p, zm, n) >= best - 1e-3


class TestCalibration:
    def test_noiseless_recovery_to_1e_9(self):
        for p in PARAM_GRID[:4] + [TRUTH]:
            est = calibrate(ExactSampler(p), make_schedule(1.9, 7), shots=10**13)
            for name, err in est.errors(p).items():
                assert err < 1e-9, name
            assert est.principal_region_ok

    def test_shot_noise_within_standard_errors(self):
        est = calibrate(PairSampler(TRUTH, seed=3), make_schedule(1.9, 7), shots=1000)
        for name, err in est.errors(TRUTH).items():
            assert err < 5 * getattr(est, name + "_se"), name
        assert est.shots == sum(r.shots for r in est.trace)

    def test_report(self, tmp_path):
        est = calibrate(ExactSampler(TRUTH), shots=10**6)
        rep = calibration_report(est, TRUTH)
        assert set(rep["abs_errors"]) == {"theta", "zeta", "chi", "gamma", "phi"}
        write_report(est, tmp_path / "r.json", TRUTH)
        assert (tmp_path / "r.json").read_text().startswith("{")

    def test_drift_tracking(self):
        def params_at(t):
            return NcGateParams(0.78, 0.02 + 0.01 * math.sin(t / 500), 0.05, 0.2 + 0.01 * math.cos(t / 500), 0.14)

        times = [0.0, 800.0, 1600.0]
        ests = track_drift(params_at, times, shots=2000, seed=5)
        zetas = np.array([e.zeta for e in ests])
        truth = np.array([params_at(t).zeta for t in times])
        ses = np.array([e.zeta_se for e in ests])
        assert np.all(np.abs(zetas - truth) < 5 * ses)
        # the drift is resolved: estimates follow the truth rather than staying put
        assert abs((zetas[1] - zetas[0]) - (truth[1] - truth[0])) < abs(truth[1] - truth[0])


class TestVariance:
    def test_optimal_repetitions(self):
        b = DecoherenceBudget(0.01, 0.01)
        assert optimal_repetitions(b) == pytest.approx(50.0)
        assert optimal_repetitions(b, two_qubit=True) == pytest.approx(40.0)
        assert optimal_repetitions(DecoherenceBudget()) == math.inf

    def test_model_minimum_at_n_star(self):
        b = DecoherenceBudget(0.004, 0.006)
        ns = np.arange(1, 400)
        v = [variance_model(b, int(n), 1000) for n in ns]
        assert ns[int(np.argmin(v))] == round(optimal_repetitions(b))

    def test_empirical_variance_follows_model(self):
        b = DecoherenceBudget(0.01, 0.01)
        ns = [5, 20, 50, 100]
        emp = empirical_variance_curve(ns, b, shots=1000, trials=3000, seed=1)
        model = np.array([variance_model(b, n, 1000) for n in ns])
        np.testing.assert_allclose(emp, model, rtol=0.2)

    def test_fisher_combination(self):
        assert fisher_combined([1.0, 1.0]) == pytest.approx(0.5)
        assert fisher_combined([math.inf]) == math.inf
        with pytest.raises(ValueError):
            variance_model(DecoherenceBudget(), 0, 10)
        with pytest.raises(ValueError):
            DecoherenceBudget(-1.0)
