"""Spectral simulation and mode-covariance statistics for weakly nonlinear
random dispersive waves (KdV, BBM, KP-I, KP-II) on the torus."""

from .covariance import (
    CovarianceReport, compare_prediction, g_rate, g_total, kinetic_residual,
    mc_covariance, prediction_table,
)
from .dispersion import (
    BBM, KDV, KPI, KPII, MODELS, DispersionModel, delta, delta_exact,
    enumerate_triads, get_model, omega, omega_exact, phi,
)
from .field import (
    SpectralField, apply_j, apply_semigroup, coefficient, field_from_modes,
    full_array, l2_norm, read_snapshot, sobolev_norm, write_snapshot, zero_field,
)
from .kernels import f_kernel, sinc_kernel, tilde_f_kernel
from .picard import (
    extract_second_remainder, first_iterate_closed_form,
    first_iterate_quadrature, remainder_growth_scan,
)
from .sampling import (
    EnsembleConfig, NoiseLaw, SpectrumProfile, build_spectrum, complex_gaussian,
    custom_spectrum, moment_report, random_phase, sample_initial_field,
    tail_report,
)
from .solver import (
    SolverBlowUp, SolverConfig, TrajectoryState, conserved_functional,
    dealiased_square, evolve, nonlinear_rhs,
)

__version__ = "0.1.0"
