"""Analytic G evaluation and the coupled Monte Carlo estimator."""

import json
import warnings

import numpy as np
import pytest

from wavecorr import covariance as cov
from wavecorr import dispersion as dsp
from wavecorr import sampling as smp


def sobolev(alpha, nmax, dim=1):
    return smp.build_spectrum("sobolev", alpha, nmax, dim)


class TestGEvaluator:
    def test_rate_and_total_vanish_at_time_zero(self):
        spec = sobolev(3.0, 8)
        for n in (1, 3, 8):
            assert cov.g_rate(n, spec, 2.0, dsp.BBM, 0.0) == 0.0
            assert cov.g_total(n, spec, 2.0, dsp.BBM, 0.0) == 0.0

    def test_gibbs_spectrum_cancels_per_triad(self):
        spec = smp.build_spectrum("bbm-gibbs", None, 16, 1)
        for t in (0.5, 2.0, 10.0):
            for n in (1, 2, 7, 16):
                terms, corr, _ = cov.g_total_terms(n, spec, 2.0, dsp.BBM, t)
                assert np.max(np.abs(terms)) <= 1e-14
                assert corr == 0.0

    def test_constant_spectrum_cancels_for_kp(self):
        spec = smp.build_spectrum("constant", None, 5, 2)
        for model in (dsp.KPI, dsp.KPII):
            for n in ((1, 0), (2, -3), (5, 5)):
                assert cov.g_total(n, spec, 2.0, model, 3.0) == pytest.approx(0.0, abs=1e-14)

    def test_derivative_matches_rate(self):
        spec = sobolev(3.0, 8)
        h = 1e-5
        for n in (1, 2, 5):
            for t in (0.4, 1.9):
                fd = (cov.g_total(n, spec, 2.0, dsp.BBM, t + h)
                      - cov.g_total(n, spec, 2.0, dsp.BBM, t - h)) / (2 * h)
                rate = cov.g_rate(n, spec, 2.0, dsp.BBM, t)
                assert abs(fd - rate) / (1 + abs(rate)) < 1e-6

    def test_total_matches_simpson_of_rate(self):
        spec = sobolev(3.0, 6)
        t, panels = 1.3, 600
        taus = np.linspace(0.0, t, 2 * panels + 1)
        w = np.full(taus.size, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        w *= (t / panels) / 6.0
        for n in (1, 4):
            rate = np.array([cov.g_rate(n, spec, 2.0, dsp.BBM, tau) for tau in taus])
            assert np.sum(w * rate) == pytest.approx(
                cov.g_total(n, spec, 2.0, dsp.BBM, t), abs=1e-8)

    def test_symmetry_under_negation(self):
        spec = sobolev(2.5, 8)
        for n in (1, 3, 7):
            a = cov.g_total(n, spec, 2.0, dsp.BBM, 2.0)
            b = cov.g_total(-n, spec, 2.0, dsp.BBM, 2.0)
            assert b == pytest.approx(a, rel=1e-12, abs=1e-18)
        spec2 = sobolev(4.0, 5, dim=2)
        a = cov.g_total((2, -3), spec2, 2.0, dsp.KPII, 1.0)
        b = cov.g_total((-2, 3), spec2, 2.0, dsp.KPII, 1.0)
        assert b == pytest.approx(a, rel=1e-12, abs=1e-18)

    def test_kurtosis_term_changes_even_modes(self):
        spec = sobolev(3.0, 8)
        base = cov.g_total(2, spec, 2.0, dsp.KDV, 1.0)
        phase = cov.g_total(2, spec, 1.0, dsp.KDV, 1.0, warn=False)
        assert phase != pytest.approx(base, rel=1e-12)

    def test_truncation_warning_for_doubled_mode(self):
        spec = sobolev(3.0, 4)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            cov.g_total(3, spec, 1.0, dsp.KDV, 1.0)
        assert any(issubclass(r.category, cov.TruncationWarning) for r in rec)
        _, flagged = cov.g_table(spec, 1.0, dsp.KDV, 1.0)
        assert 3 in flagged and 1 not in flagged

    def test_mode_outside_lattice_rejected(self):
        spec = sobolev(3.0, 4)
        with pytest.raises(ValueError):
            cov.g_total(5, spec, 2.0, dsp.KDV, 1.0)
        with pytest.raises(ValueError):
            cov.g_total(0, spec, 2.0, dsp.KDV, 1.0)


class TestKineticResidual:
    def test_no_resonance_models_are_empty_sums(self):
        spec = smp.build_spectrum("sobolev", 4.0, 8, 2)
        assert np.all(cov.kinetic_residual(spec, dsp.KPII, 1.0) == 0.0)
        spec1 = sobolev(3.0, 16)
        assert np.all(cov.kinetic_residual(spec1, dsp.BBM, 0.1) == 0.0)

    def test_kpi_equilibrium_cancellation(self):
        spec = smp.build_spectrum("constant", None, 8, 2)
        res = cov.kinetic_residual(spec, dsp.KPI, 0.02)
        assert np.max(np.abs(res)) <= 1e-14

    def test_kpi_nonequilibrium_sees_near_resonances(self):
        spec = smp.build_spectrum("sobolev", 4.0, 16, 2)
        res = cov.kinetic_residual(spec, dsp.KPI, 0.02)
        assert np.any(res != 0.0)  # the Pell triad divisor 1/56 < 0.02

    def test_empty_spectrum(self):
        spec = smp.custom_spectrum(np.zeros(dsp.stored_shape(2, 4)), 4, 2)
        assert np.all(cov.kinetic_residual(spec, dsp.KPI, 10.0) == 0.0)


class TestEnvelope:
    def test_shapes(self):
        n = np.array([1.0, 2.0, 4.0])
        assert np.allclose(cov.decay_envelope(dsp.BBM, n, 2.0, 1.0), n ** -6.0)
        assert np.allclose(cov.decay_envelope(dsp.BBM, n, 0.5, 1.0), n ** -2.0)
        assert np.allclose(cov.decay_envelope(dsp.KPII, n, 2.5, 1.0), n ** -5.0)
        assert np.allclose(cov.decay_envelope(dsp.KPI, n, 3.0, 2.0), 4.0 * n ** -4.0)

    def test_decay_fit_shell_guard(self):
        slope, shells = cov.fit_decay_slope(np.array([1.0, 2.0]), np.array([1.0, 0.1]))
        assert slope is None and shells == 2


class TestMcCovariance:
    def make_ensemble(self, samples=128, nmax=8, seed=1717):
        return smp.EnsembleConfig(smp.complex_gaussian(),
                                  smp.build_spectrum("sobolev", 3.0, nmax, 1),
                                  samples, seed)

    def test_zero_epsilon_estimates_exactly_zero(self):
        rep = cov.mc_covariance(self.make_ensemble(16), dsp.BBM, 0.0, 1.0, 1e-2)
        assert np.all(rep.estimates == 0.0)
        assert np.all(rep.stderrs == 0.0)
        assert rep.offdiag_max_abs == 0.0

    def test_zero_time_estimates_exactly_zero(self):
        rep = cov.mc_covariance(self.make_ensemble(16), dsp.BBM, 0.1, 0.0, 1e-2)
        assert np.all(rep.estimates == 0.0)

    def test_worker_count_invariance(self):
        ens = self.make_ensemble(96)
        r1 = cov.mc_covariance(ens, dsp.BBM, 0.1, 0.5, 5e-3, workers=1, batch_size=32)
        r2 = cov.mc_covariance(ens, dsp.BBM, 0.1, 0.5, 5e-3, workers=2, batch_size=32)
        assert np.array_equal(r1.estimates, r2.estimates)
        assert np.array_equal(r1.stderrs, r2.stderrs)
        assert r1.to_csv() == r2.to_csv()

    def test_zscores_reasonable_on_small_run(self):
        rep = cov.mc_covariance(self.make_ensemble(512), dsp.BBM, 0.05, 1.0, 5e-3,
                                batch_size=128)
        verdict = cov.compare_prediction(rep)
        assert verdict.fraction_within_3 >= 0.95

    def test_kurtosis_correction_is_live_in_the_estimator(self):
        # random-phase noise (E|g|^4 = 1): the coupled estimates fit the
        # kurtosis-1 prediction and visibly reject the kurtosis-2 one
        import warnings as _warnings
        spec = smp.build_spectrum("sobolev", 1.5, 16, 1, model=dsp.BBM)
        ens = smp.EnsembleConfig(smp.random_phase(), spec, 2048, 314159)
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore", cov.TheoryWindowWarning)
            rep = cov.mc_covariance(ens, dsp.BBM, 0.2, 2.0, 2e-3,
                                    workers=2, batch_size=256)
        assert np.max(np.abs(rep.zscores)) <= 3.0
        g_wrong, _ = cov.g_table(spec, 2.0, dsp.BBM, 2.0)
        z_wrong = (rep.estimates - g_wrong.reshape(-1)) / rep.stderrs
        assert np.max(np.abs(z_wrong)) > 4.0

    def test_offdiagonal_bound_with_frozen_constant(self):
        # invariant: max |offdiag| <= max(3 stderr, C eps^3 t (1+t)), C frozen at 1
        eps, t = 0.1, 1.0
        rep = cov.mc_covariance(self.make_ensemble(512, seed=4242), dsp.BBM,
                                eps, t, 5e-3, batch_size=128)
        bound = max(3.0 * rep.offdiag_max_stderr, 1.0 * eps ** 3 * t * (1 + t))
        assert rep.offdiag_max_abs <= bound

    def test_all_samples_lost_raises(self):
        # a datum scale that explodes every trajectory
        spec = smp.custom_spectrum(np.full(4, 1e8), 4, 1)
        ens = smp.EnsembleConfig(smp.complex_gaussian(), spec, 8, 5)
        with pytest.raises(RuntimeError):
            cov.mc_covariance(ens, dsp.KDV, 1.0, 5.0, 0.5)

    def test_partial_exclusions_reported_and_invalidate(self, monkeypatch):
        # kill the first trajectory of the first batch; with 32 samples that
        # is >1% exclusions, so the report must be flagged invalid
        real = cov.evolve_array

        def lossy(model, eps, coeffs, dt, t, **kw):
            final, snaps, alive, blow = real(model, eps, coeffs, dt, t, **kw)
            alive = alive.copy()
            blow = blow.copy()
            if not lossy.done:
                alive[0] = False
                blow[0] = 0.5 * t
                lossy.done = True
            return final, snaps, alive, blow

        lossy.done = False
        monkeypatch.setattr(cov, "evolve_array", lossy)
        rep = cov.mc_covariance(self.make_ensemble(32), dsp.BBM, 0.1, 0.5, 1e-2)
        assert rep.used == 31
        assert rep.excluded == [(0, 0.25)]
        assert rep.invalid

    def test_theory_window_warning(self):
        with pytest.warns(cov.TheoryWindowWarning):
            cov.mc_covariance(self.make_ensemble(8), dsp.BBM, 0.5, 10.0, 0.1)

    def test_csv_and_json_are_consistent(self):
        rep = cov.mc_covariance(self.make_ensemble(32), dsp.BBM, 0.1, 0.5, 1e-2)
        lines = rep.to_csv().strip().splitlines()
        assert lines[0] == "mode,lambda_sq,g_pred,mc_estimate,stderr,zscore"
        assert len(lines) == 1 + 8
        payload = json.loads(rep.to_json())
        assert payload["samples"] == 32
        assert len(payload["records"]) == 8
        row1 = lines[1].split(",")
        assert float(row1[3]) == payload["records"][0]["estimate"]

    def test_csv_roundtrips_17_digits(self):
        rep = cov.mc_covariance(self.make_ensemble(32), dsp.BBM, 0.1, 0.5, 1e-2)
        row = rep.to_csv().strip().splitlines()[1].split(",")
        assert float(row[3]) == rep.estimates[0]


class TestExactExpectationOracle:
    """Quadrature expectations over the random datum, no Monte Carlo noise.

    On a two-mode lattice the expectation over the datum law is an ordinary
    integral: Gauss-Hermite in the four real Gaussian coordinates, or a
    uniform phase grid (exact for band-limited integrands) for the
    random-phase law.  Richardson extrapolation in eps strips the cubic
    remainder, exposing the eps^2 coefficient of the coupled statistic,
    which must equal the analytic correction for both kurtosis branches.
    """

    nmax, t, dt = 2, 1.0, 5e-3
    lam = np.array([0.9, 0.6])

    def _solve_statistic(self, a, eps):
        from wavecorr.solver import evolve_array
        final, _, alive, _ = evolve_array(dsp.BBM, eps, a, self.dt, self.t)
        assert bool(np.all(alive))
        return np.abs(final) ** 2 - np.abs(a) ** 2

    def _gauss_expectation(self, eps, pts=10):
        from numpy.polynomial.hermite_e import hermegauss
        x, w = hermegauss(pts)
        w = w / np.sqrt(2.0 * np.pi)
        X = np.stack(np.meshgrid(x, x, x, x, indexing="ij"), axis=-1).reshape(-1, 4)
        W = (w[:, None, None, None] * w[None, :, None, None]
             * w[None, None, :, None] * w[None, None, None, :]).reshape(-1)
        a = np.stack([(X[:, 0] + 1j * X[:, 1]) / np.sqrt(2.0) * self.lam[0],
                      (X[:, 2] + 1j * X[:, 3]) / np.sqrt(2.0) * self.lam[1]], axis=-1)
        return W @ self._solve_statistic(a, eps)

    def _phase_expectation(self, eps, pts=24):
        th = 2.0 * np.pi * np.arange(pts) / pts
        t1, t2 = np.meshgrid(th, th, indexing="ij")
        a = np.stack([np.exp(1j * t1.ravel()) * self.lam[0],
                      np.exp(1j * t2.ravel()) * self.lam[1]], axis=-1)
        return self._solve_statistic(a, eps).mean(axis=0)

    @pytest.mark.parametrize("kurtosis,expectation",
                             [(2.0, "_gauss_expectation"), (1.0, "_phase_expectation")])
    def test_g_formula_matches_exact_expectation(self, kurtosis, expectation):
        spec = smp.custom_spectrum(self.lam, self.nmax, 1)
        g_pred = np.array([cov.g_total(n, spec, kurtosis, dsp.BBM, self.t, warn=False)
                           for n in (1, 2)])
        fn = getattr(self, expectation)
        d1 = fn(0.1) / 0.1 ** 2
        d2 = fn(0.05) / 0.05 ** 2
        d3 = fn(0.025) / 0.025 ** 2
        extrapolated = (d1 - 6.0 * d2 + 8.0 * d3) / 3.0
        assert np.max(np.abs(extrapolated - g_pred) / np.abs(g_pred)) < 1e-4


class TestComparePrediction:
    def test_all_zero_case_passes(self):
        ens = smp.EnsembleConfig(smp.complex_gaussian(),
                                 smp.build_spectrum("bbm-gibbs", None, 8, 1), 16, 3)
        rep = cov.mc_covariance(ens, dsp.BBM, 0.0, 1.0, 1e-2)
        rep.g_pred = np.zeros_like(rep.g_pred)
        rep.zscores = np.where(rep.stderrs == 0,
                               np.where(rep.estimates == rep.g_pred, 0.0, np.inf),
                               rep.zscores)
        verdict = cov.compare_prediction(rep)
        assert verdict.fraction_within_3 == 1.0

    def test_decay_fit_against_explicit_regularity(self):
        ens = smp.EnsembleConfig(smp.complex_gaussian(),
                                 smp.build_spectrum("sobolev", 3.0, 16, 1), 16, 3)
        rep = cov.mc_covariance(ens, dsp.BBM, 0.05, 1.0, 5e-3)
        verdict = cov.compare_prediction(rep, decay_fit=True, s=2.0)
        assert not verdict.decay_skipped
        assert verdict.decay_bound == -5.5
        assert verdict.decay_ok

    def test_decay_fit_skipped_when_too_few_shells(self):
        ens = smp.EnsembleConfig(smp.complex_gaussian(),
                                 smp.build_spectrum("sobolev", 3.0, 4, 1), 16, 3)
        rep = cov.mc_covariance(ens, dsp.BBM, 0.0, 1.0, 1e-2)
        rep.g_pred = np.zeros_like(rep.g_pred)  # no positive magnitudes at all
        verdict = cov.compare_prediction(rep, decay_fit=True)
        assert verdict.decay_skipped
