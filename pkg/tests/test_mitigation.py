"""Postselection, assignment averaging and the linear rescaling model."""

import numpy as np
import pytest

from fhsim.hubbard import DensitySeries, make_assignment
from fhsim.mitigation import (
    EmptyPostselectionError,
    RescaleFit,
    apply_rescale,
    assignment_average,
    damp,
    damping_ratios,
    fiducial,
    fit_rescale,
    postselect,
)
from fhsim.qsim import ShotTable, hamming_weights


def reference_series(L=8, n_eta=11, seed=0):
    rng = np.random.default_rng(seed)
    etas = np.arange(n_eta)
    up = rng.dirichlet(np.ones(L), size=n_eta) * 2
    dn = rng.dirichlet(np.ones(L), size=n_eta) * 2
    return DensitySeries(etas, etas * 0.3, up, dn)


def random_shots(n, n_qubits, rng):
    return ShotTable(rng.integers(0, 2**n_qubits, n), n_qubits)


class TestPostselect:
    def test_keeps_exactly_the_target_sector(self):
        rng = np.random.default_rng(1)
        a = make_assignment(4, 5)
        table = random_shots(5000, 8, rng)
        kept, rate = postselect(table, a, 2, 1)
        assert set(hamming_weights(kept, a.chain_qubits(0))) == {2}
        assert set(hamming_weights(kept, a.chain_qubits(1))) == {1}
        # uniform random bits: success is C(4,2) C(4,1) / 2^8
        p = 24 / 256
        assert abs(rate - p) < 4 * np.sqrt(p * (1 - p) / 5000)

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        a = make_assignment(4, 0)
        kept, _ = postselect(random_shots(3000, 8, rng), a, 1, 1)
        again, rate = postselect(kept, a, 1, 1)
        assert rate == 1.0
        np.testing.assert_array_equal(again.bitstrings, kept.bitstrings)

    def test_empty_raises(self):
        a = make_assignment(4, 0)
        with pytest.raises(EmptyPostselectionError):
            postselect(ShotTable(np.zeros(10, dtype=np.int64), 8), a, 1, 1)
        with pytest.raises(EmptyPostselectionError):
            postselect(ShotTable(np.zeros(0, dtype=np.int64), 8), a, 0, 0)
        with pytest.raises(ValueError):
            postselect(ShotTable(np.zeros(3, dtype=np.int64), 8), a, 5, 0)


class TestAverage:
    def test_mean_and_sem(self):
        base = reference_series()
        rng = np.random.default_rng(3)
        sigma = 0.02
        runs = [DensitySeries(base.etas, base.times, base.rho_up + rng.normal(0, sigma, base.rho_up.shape),
                              base.rho_down + rng.normal(0, sigma, base.rho_up.shape)) for _ in range(16)]
        avg = assignment_average(runs)
        np.testing.assert_allclose(avg.rho_up, np.mean([r.rho_up for r in runs], axis=0))
        # the standard error of 16 variants is sigma / 4 on average
        assert abs(avg.sem_up.mean() - sigma / 4) < 0.1 * sigma / 4

    def test_single_series_has_zero_sem(self):
        avg = assignment_average([reference_series()])
        np.testing.assert_array_equal(avg.sem_up, 0)

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError):
            assignment_average([reference_series(n_eta=5), reference_series(n_eta=6)])
        with pytest.raises(ValueError):
            assignment_average([])


class TestRescale:
    @pytest.mark.parametrize("a,b", [(0.01, 0.95), (0.02, 1.0), (0.005, 0.8)])
    def test_recovers_synthetic_damping(self, a, b):
        num = reference_series(n_eta=21, seed=4)
        exp = damp(num, RescaleFit(a, b), 2, 2)
        fit = fit_rescale(exp, num, 2, 2)
        assert abs(fit.a - a) < 1e-6
        assert abs(fit.b - b) < 1e-6
        back = apply_rescale(exp, fit, 2, 2)
        np.testing.assert_allclose(back.rho_up, num.rho_up, atol=1e-9)
        np.testing.assert_allclose(back.rho_down, num.rho_down, atol=1e-9)

    def test_cutoff_excludes_weak_points(self):
        num = reference_series(n_eta=31, seed=5)
        exp = damp(num, RescaleFit(0.03, 1.0), 2, 2)
        fit = fit_rescale(exp, num, 2, 2, cutoff=0.2)
        assert not fit.used[-1]
        assert fit.used[:20].all()

    def test_refuses_tiny_damping(self):
        num = reference_series(n_eta=21, seed=6)
        with pytest.raises(ValueError, match="refusing"):
            apply_rescale(num, RescaleFit(0.05, 1.0), 2, 2)
        # exactly at the threshold is still refused
        with pytest.raises(ValueError):
            apply_rescale(num, RescaleFit(0.0, 0.05), 2, 2)

    def test_needs_two_points(self):
        num = reference_series(n_eta=3, seed=7)
        exp = damp(num, RescaleFit(0.5, 0.6), 2, 2)
        with pytest.raises(ValueError):
            fit_rescale(exp, num, 2, 2)

    def test_fiducial_points_ignored(self):
        L = 4
        flat = np.full((3, L), 0.5)
        s = DensitySeries(np.arange(3), np.arange(3) * 0.3, flat, flat)
        assert np.isnan(damping_ratios(s, s, 2, 2)).all()
        np.testing.assert_allclose(fiducial(2, 1, 4), [0.5, 0.25])

    def test_sem_scaled_with_densities(self):
        num = reference_series(n_eta=5, seed=8)
        num.sem_up = np.full_like(num.rho_up, 0.01)
        num.sem_down = np.full_like(num.rho_up, 0.01)
        out = apply_rescale(num, RescaleFit(0.1, 1.0), 2, 2)
        np.testing.assert_allclose(out.sem_up[:, 0], 0.01 / (1.0 - 0.1 * np.arange(5)))
