"""Dealiased products, the interaction-picture right-hand side, and RK4."""

import itertools

import numpy as np
import pytest

from wavecorr import dispersion as dsp
from wavecorr import field as fld
from wavecorr import solver as slv


def steep_field(dim, nmax, seed, rate=0.8, scale=1.0):
    rng = np.random.default_rng(seed)
    shape = dsp.stored_shape(dim, nmax)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return fld.SpectralField(nmax, scale * np.exp(-rate * dsp.mode_l1(dim, nmax)) * z / np.sqrt(2))


def brute_square(f):
    """Direct convolution sum over the truncated lattice."""
    nm, dim = f.nmax, f.dimension
    dense = fld.full_array(f)
    out = {}
    for mode in dsp.mode_list(dim, nm):
        tup = (mode,) if dim == 1 else mode
        total = 0.0 + 0.0j
        for kc in itertools.product(range(-nm, nm + 1), repeat=dim):
            lc = tuple(a - b for a, b in zip(tup, kc))
            if kc[0] == 0 or lc[0] == 0 or any(abs(c) > nm for c in lc):
                continue
            total += dense[tuple(c + nm for c in kc)] * dense[tuple(c + nm for c in lc)]
        out[mode] = total
    return out


class TestSolverConfig:
    def test_validation(self):
        slv.SolverConfig(dsp.KDV, 0.0, 0.1, 1.0)
        slv.SolverConfig(dsp.KDV, 1.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            slv.SolverConfig(dsp.KDV, 1.5, 0.1, 1.0)
        with pytest.raises(ValueError):
            slv.SolverConfig(dsp.KDV, -0.1, 0.1, 1.0)
        with pytest.raises(ValueError):
            slv.SolverConfig(dsp.KDV, 0.5, 0.0, 1.0)
        with pytest.raises(ValueError):
            slv.SolverConfig(dsp.KDV, 0.5, 2.0, 1.0)


class TestDealiasedSquare:
    def test_two_cosine_example(self):
        # (2 cos x)^2 = 2 + 2 cos 2x: mode 2 coefficient 1; the constant is
        # not representable and is annihilated by J anyway
        f = fld.field_from_modes(1, 4, {1: 1.0})
        sq = slv.dealiased_square(f)
        assert fld.coefficient(sq, 2) == pytest.approx(1.0, abs=1e-14)
        assert fld.coefficient(sq, 1) == pytest.approx(0.0, abs=1e-14)
        assert fld.coefficient(sq, 3) == pytest.approx(0.0, abs=1e-14)

    def test_zero_field(self):
        assert np.all(slv.dealiased_square(fld.zero_field(2, 3)).coeffs == 0.0)

    @pytest.mark.parametrize("dim,nmax", [(1, 4), (2, 3)])
    def test_convolution_oracle(self, dim, nmax):
        f = steep_field(dim, nmax, seed=10, rate=0.3)
        sq = slv.dealiased_square(f)
        ref = brute_square(f)
        worst = max(abs(fld.coefficient(sq, mode) - ref[mode]) for mode in ref)
        assert worst < 1e-13

    def test_padding_removes_aliasing(self):
        # modes 3+4 = 7 wrap to -2 on the unpadded 9-point grid
        f = fld.field_from_modes(1, 4, {3: 1.0, 4: 1.0})
        exact = slv.dealiased_square(f)
        aliased = slv.dealiased_square(f, dealias=False)
        assert fld.coefficient(exact, 2) == pytest.approx(0.0, abs=1e-14)
        assert abs(fld.coefficient(aliased, 2)) > 0.5


class TestNonlinearRhs:
    def test_zero_epsilon(self):
        f = steep_field(1, 6, seed=1)
        out = slv.nonlinear_rhs(dsp.KDV, 0.0, 0.3, f)
        assert np.all(out.coeffs == 0.0)

    def test_time_zero_matches_minus_eps_j_square(self):
        f = steep_field(2, 3, seed=2)
        got = slv.nonlinear_rhs(dsp.KPII, 0.25, 0.0, f)
        ref = fld.apply_j(dsp.KPII, slv.dealiased_square(f))
        assert np.max(np.abs(got.coeffs + 0.25 * ref.coeffs)) < 1e-14

    @pytest.mark.parametrize("model", [dsp.KDV, dsp.BBM, dsp.KPII, dsp.KPI])
    def test_modewise_triad_sum(self, model):
        # -i eps phi(n) sum_(k+l=n) v_k v_l e^(i delta t), summed by brute force
        dim = model.dimension
        nm = 4 if dim == 1 else 3
        f = steep_field(dim, nm, seed=3, rate=0.3)
        eps, t = 0.7, 0.4
        out = slv.nonlinear_rhs(model, eps, t, f)
        dense = fld.full_array(f)
        worst = 0.0
        for mode in dsp.mode_list(dim, nm):
            tup = (mode,) if dim == 1 else mode
            total = 0.0 + 0.0j
            for kc in itertools.product(range(-nm, nm + 1), repeat=dim):
                lc = tuple(a - b for a, b in zip(tup, kc))
                if kc[0] == 0 or lc[0] == 0 or any(abs(c) > nm for c in lc):
                    continue
                d = dsp.delta(model, mode if dim == 2 else mode,
                              kc if dim == 2 else kc[0], lc if dim == 2 else lc[0])
                total += dense[tuple(c + nm for c in kc)] \
                    * dense[tuple(c + nm for c in lc)] * np.exp(1j * d * t)
            expected = -1j * eps * dsp.phi(model, mode) * total
            worst = max(worst, abs(fld.coefficient(out, mode) - expected))
        assert worst < 1e-12


class TestEvolve:
    def test_free_evolution_is_exact(self):
        f = steep_field(1, 8, seed=4)
        state = slv.evolve(f, slv.SolverConfig(dsp.KDV, 0.0, 0.01, 0.7))
        assert np.array_equal(state.v.coeffs, f.coeffs)
        ref = fld.apply_semigroup(dsp.KDV, f, 0.7)
        assert np.allclose(state.physical().coeffs, ref.coeffs, rtol=0, atol=0)

    def test_rk4_order(self):
        u0 = steep_field(1, 12, seed=5, rate=0.6, scale=4.0)
        ref = slv.evolve(u0, slv.SolverConfig(dsp.BBM, 1.0, 5e-4, 0.5)).v.coeffs
        errs = []
        for dt in (2e-2, 1e-2):
            v = slv.evolve(u0, slv.SolverConfig(dsp.BBM, 1.0, dt, 0.5)).v.coeffs
            errs.append(np.linalg.norm(v - ref))
        order = np.log2(errs[0] / errs[1])
        assert 3.5 <= order <= 4.5

    def test_snapshot_times_hit_exactly(self):
        u0 = steep_field(1, 6, seed=6)
        state = slv.evolve(u0, slv.SolverConfig(dsp.BBM, 0.5, 1e-2, 1.0),
                           snapshot_times=(0.0, 0.35, 1.0))
        times = [t for t, _ in state.snapshots]
        assert times == [0.0, 0.35, 1.0]
        assert np.array_equal(state.snapshots[0][1].coeffs, u0.coeffs)
        assert np.array_equal(state.snapshots[-1][1].coeffs, state.v.coeffs)

    def test_snapshot_segmentation_consistent(self):
        u0 = steep_field(1, 6, seed=12)
        plain = slv.evolve(u0, slv.SolverConfig(dsp.BBM, 1.0, 1e-2, 1.0))
        snapped = slv.evolve(u0, slv.SolverConfig(dsp.BBM, 1.0, 1e-2, 1.0),
                             snapshot_times=(0.4,))
        assert np.max(np.abs(plain.v.coeffs - snapped.v.coeffs)) < 1e-9

    def test_blow_up_reports_time(self):
        u0 = steep_field(1, 8, seed=7, rate=0.0, scale=1e8)
        with pytest.warns(slv.StepAccuracyWarning):
            with pytest.raises(slv.SolverBlowUp) as info:
                slv.evolve(u0, slv.SolverConfig(dsp.KDV, 1.0, 0.5, 10.0))
        assert 0.0 < info.value.time <= 10.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            slv.evolve(fld.zero_field(1, 4), slv.SolverConfig(dsp.KPI, 0.1, 0.1, 1.0))

    def test_step_warning_for_coarse_dt(self):
        u0 = steep_field(1, 16, seed=8)
        with pytest.warns(slv.StepAccuracyWarning):
            slv.evolve(u0, slv.SolverConfig(dsp.KDV, 0.5, 0.05, 0.1))


class TestConservedFunctional:
    def test_bbm_example(self):
        f = fld.field_from_modes(1, 2, {1: 1.0})
        assert slv.conserved_functional(dsp.BBM, f) == 4.0

    def test_zero_field(self):
        assert slv.conserved_functional(dsp.KPI, fld.zero_field(2, 3)) == 0.0

    @pytest.mark.parametrize("model,dim", [(dsp.BBM, 1), (dsp.KDV, 1), (dsp.KPII, 2)])
    def test_drift_small_along_trajectory(self, model, dim):
        u0 = steep_field(dim, 8 if dim == 1 else 6, seed=9)
        dt = 1e-3 if dim == 1 else 5e-4
        state = slv.evolve(u0, slv.SolverConfig(model, 0.5, dt, 0.5))
        e0 = slv.conserved_functional(model, u0)
        e1 = slv.conserved_functional(model, state.physical())
        assert abs(e1 - e0) / e0 < 1e-8

    def test_invariant_equals_interaction_picture_value(self):
        # the semigroup preserves moduli, so the functional reads off v directly
        u0 = steep_field(1, 8, seed=11)
        state = slv.evolve(u0, slv.SolverConfig(dsp.BBM, 0.5, 1e-2, 1.0))
        assert slv.conserved_functional(dsp.BBM, state.physical()) == \
            pytest.approx(slv.conserved_functional(dsp.BBM, state.v), rel=1e-14)

    def test_drift_converges_at_fourth_order(self):
        u0 = steep_field(1, 12, seed=5, rate=0.6, scale=4.0)
        e0 = slv.conserved_functional(dsp.BBM, u0)
        dts = (4e-2, 2e-2, 1e-2, 5e-3)
        drifts = []
        for dt in dts:
            state = slv.evolve(u0, slv.SolverConfig(dsp.BBM, 1.0, dt, 1.0))
            e1 = slv.conserved_functional(dsp.BBM, state.physical())
            drifts.append(abs(e1 - e0) / e0)
        slope = np.polyfit(np.log(dts), np.log(drifts), 1)[0]
        assert slope >= 3.7


class TestTruncationIndependence:
    def test_doubled_resolution_agrees_for_steep_data(self):
        # datum supported on modes <= 4 with analytic decay: the nmax=8 run
        # matches the nmax=16 run to the integrator tolerance
        rng = np.random.default_rng(5)
        z = (rng.standard_normal(4) + 1j * rng.standard_normal(4)) \
            * np.exp(-2.5 * np.arange(1, 5))
        lo = np.zeros(8, dtype=complex)
        lo[:4] = z
        hi = np.zeros(16, dtype=complex)
        hi[:4] = z
        cfg = dict(epsilon=0.3, dt=1e-3, t_final=0.2)
        import warnings as _warnings
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore", slv.StepAccuracyWarning)
            s8 = slv.evolve(fld.SpectralField(8, lo), slv.SolverConfig(dsp.KDV, **cfg))
            s16 = slv.evolve(fld.SpectralField(16, hi), slv.SolverConfig(dsp.KDV, **cfg))
            ref = slv.evolve(fld.SpectralField(8, lo),
                             slv.SolverConfig(dsp.KDV, 0.3, 5e-4, 0.2))
        trunc = np.max(np.abs(s8.v.coeffs - s16.v.coeffs[:8]))
        integ = np.max(np.abs(s8.v.coeffs - ref.v.coeffs))
        assert trunc <= max(10.0 * integ, 1e-12)


class TestBatchedCore:
    def test_batch_rows_match_single_runs(self):
        u0a = steep_field(1, 6, seed=20)
        u0b = steep_field(1, 6, seed=21)
        batch = np.stack([u0a.coeffs, u0b.coeffs])
        final, _, alive, _ = slv.evolve_array(dsp.BBM, 0.3, batch, 1e-2, 0.5)
        sa = slv.evolve(u0a, slv.SolverConfig(dsp.BBM, 0.3, 1e-2, 0.5))
        sb = slv.evolve(u0b, slv.SolverConfig(dsp.BBM, 0.3, 1e-2, 0.5))
        assert np.array_equal(final[0], sa.v.coeffs)
        assert np.array_equal(final[1], sb.v.coeffs)
        assert alive.all()

    def test_partial_blow_up_isolated(self):
        import warnings as _warnings
        good = steep_field(1, 6, seed=22)
        bad = steep_field(1, 6, seed=23, rate=0.0, scale=1e8)
        batch = np.stack([good.coeffs, bad.coeffs])
        final, _, alive, blow = slv.evolve_array(dsp.KDV, 1.0, batch, 0.05, 1.0)
        assert alive.tolist() == [True, False]
        assert np.isfinite(blow[1]) and np.isnan(blow[0])
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore", slv.StepAccuracyWarning)
            single = slv.evolve(good, slv.SolverConfig(dsp.KDV, 1.0, 0.05, 1.0))
        assert np.array_equal(final[0], single.v.coeffs)
