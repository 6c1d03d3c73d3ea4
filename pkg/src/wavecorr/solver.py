"""Time integration of the interaction-picture equation.

The physical equation (d/dt + L)u + eps*J(u^2) = 0 is integrated in the
variable v(t) = S(-t)u(t), which obeys

    dv/dt = -eps * S(-t) J((S(t) v)^2).

The stiff linear part is handled exactly through the semigroup phases, so
the classical RK4 step sees only the slow nonlinear dynamics and there is
no CFL constraint from the dispersion.  Quadratic products are formed on a
2x zero-padded grid, which makes the retained convolution exact; accuracy
of the nonlinear phases still requires dt * max|delta| of order one, which
is surfaced as a warning, not enforced.

The stepping core works on coefficient arrays with arbitrary leading batch
axes; distinct trajectories share no mutable state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache

import numpy as np

from . import dispersion
from .field import SpectralField, apply_semigroup

__all__ = [
    "SolverConfig", "TrajectoryState", "SolverBlowUp", "StepAccuracyWarning",
    "dealiased_square", "nonlinear_rhs", "evolve", "evolve_array",
    "conserved_functional",
]


class SolverBlowUp(RuntimeError):
    """Non-finite coefficients encountered; `time` holds the failing step end."""

    def __init__(self, time):
        super().__init__(f"solution lost finiteness at t={time:g} "
                         "(time step too large or datum too rough)")
        self.time = time


class StepAccuracyWarning(UserWarning):
    """dt does not resolve the fastest nonlinear phase of the truncation."""


@dataclass(frozen=True)
class SolverConfig:
    """Integration parameters; epsilon = 0 degenerates to free evolution."""

    model: dispersion.DispersionModel
    epsilon: float
    dt: float
    t_final: float
    dealias: bool = True

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.t_final < 0.0:
            raise ValueError("t_final must be nonnegative")
        if self.t_final > 0.0 and self.dt > self.t_final * (1.0 + 1e-12):
            raise ValueError("dt must not exceed t_final")


@dataclass(frozen=True)
class TrajectoryState:
    """Interaction-picture state; the physical field is S(t) v, never stored."""

    model: dispersion.DispersionModel
    time: float
    v: SpectralField
    snapshots: tuple = dataclass_field(default_factory=tuple)

    def physical(self):
        return apply_semigroup(self.model, self.v, self.time)


# ---------------------------------------------------------------------------
# Padded transforms (model independent, cached).
# ---------------------------------------------------------------------------

class _Transform:
    def __init__(self, dim, nmax, dealias):
        self.dim = dim
        self.nmax = nmax
        base = 2 * nmax + 1
        n_grid = 2 * base if dealias else base
        if dim == 1:
            self.sizes = (n_grid,)
            self.norm = float(n_grid)
        else:
            self.sizes = (n_grid, n_grid)
            self.norm = float(n_grid) ** 2
            cols = np.arange(1, nmax + 1)[:, None]
            rows = np.arange(-nmax, nmax + 1)[None, :] % n_grid
            self.rows = np.broadcast_to(rows, (nmax, base)).copy()
            self.cols = np.broadcast_to(cols, (nmax, base)).copy()
        self.half_shape = self.sizes[:-1] + (self.sizes[-1] // 2 + 1,)

    def square(self, coeffs):
        """Fourier coefficients of the pointwise square, on the stored lattice."""
        lead = coeffs.shape[:-self.dim]
        half = np.zeros(lead + self.half_shape, dtype=complex)
        if self.dim == 1:
            half[..., 1:self.nmax + 1] = coeffs
            phys = np.fft.irfft(half, n=self.sizes[0], axis=-1) * self.norm
            spec = np.fft.rfft(phys * phys, axis=-1)
            return spec[..., 1:self.nmax + 1] / self.norm
        half[..., self.rows, self.cols] = coeffs
        phys = np.fft.irfft2(half, s=self.sizes, axes=(-2, -1)) * self.norm
        spec = np.fft.rfft2(phys * phys, axes=(-2, -1))
        return spec[..., self.rows, self.cols] / self.norm


@lru_cache(maxsize=None)
def _transform(dim, nmax, dealias):
    return _Transform(dim, nmax, bool(dealias))


# ---------------------------------------------------------------------------
# Right-hand side and stepping on raw arrays.
# ---------------------------------------------------------------------------

def _model_grids(model, nmax):
    return dispersion.omega_grid(model, nmax), dispersion.phi_grid(model, nmax)


def _rhs_array(tr, om, ph, eps, t, v):
    u = v * np.exp(1j * om * t)
    sq = tr.square(u)
    return (-eps) * (1j * ph) * np.exp(-1j * om * t) * sq


def _rk4_step(tr, om, ph, eps, t, h, v):
    k1 = _rhs_array(tr, om, ph, eps, t, v)
    k2 = _rhs_array(tr, om, ph, eps, t + 0.5 * h, v + (0.5 * h) * k1)
    k3 = _rhs_array(tr, om, ph, eps, t + 0.5 * h, v + (0.5 * h) * k2)
    k4 = _rhs_array(tr, om, ph, eps, t + h, v + h * k3)
    return v + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _delta_scale(model, nmax):
    # Coarse bound on max |delta| over the truncation; only used for warnings
    # and default quadrature resolutions.
    if model.kind == "bbm":
        return 1.0
    a = nmax // 2
    scale = 3.0 * a * (nmax - a) * nmax
    if model.dimension == 2:
        scale += 2.0 * nmax * nmax
    return float(max(scale, 6.0))


def evolve_array(model, eps, coeffs, dt, t_final, *, dealias=True,
                 snapshot_times=(), t_start=0.0):
    """Batched stepping core.

    `coeffs` carries arbitrary leading batch axes over the stored lattice.
    Returns (final, snaps, alive, blow_time): `snaps` is a list of
    (time, array) pairs, `alive` a boolean batch mask, `blow_time` the time
    at which each dead trajectory lost finiteness (nan when alive).
    """
    dim = model.dimension
    nmax = coeffs.shape[-2] if dim == 2 else coeffs.shape[-1]
    tr = _transform(dim, nmax, dealias)
    om, ph = _model_grids(model, nmax)

    lead = coeffs.shape[:-dim]
    v = np.array(coeffs, dtype=complex)
    alive = np.ones(lead, dtype=bool)
    blow_time = np.full(lead, np.nan)

    spectral_axes = tuple(range(-dim, 0))
    snap_set = sorted(set(float(s) for s in snapshot_times))
    for s in snap_set:
        if s < t_start - 1e-12 or s > t_final + 1e-12:
            raise ValueError(f"snapshot time {s} outside [{t_start}, {t_final}]")
    snaps = []
    targets = [s for s in snap_set if s > t_start + 1e-12] or []
    if not targets or targets[-1] < t_final - 1e-12:
        targets = targets + [t_final]
    if snap_set and abs(snap_set[0] - t_start) <= 1e-12:
        snaps.append((t_start, v.copy()))

    t_seg = t_start
    # overflow to non-finite values is detected explicitly after each step
    with np.errstate(invalid="ignore", over="ignore"):
        for target in targets:
            span = target - t_seg
            if span <= 0:
                continue
            nsteps = max(1, int(np.ceil(span / dt - 1e-9)))
            h = span / nsteps
            for i in range(nsteps):
                t_now = t_seg + i * h
                v = _rk4_step(tr, om, ph, eps, t_now, h, v)
                finite = np.isfinite(v).all(axis=spectral_axes)
                if not finite.all():
                    newly = alive & ~finite
                    if newly.any():
                        blow_time = np.where(newly, t_now + h, blow_time)
                        alive = alive & finite
                        v = np.where(finite[(...,) + (None,) * dim], v, 0.0)
            t_seg = target
            if any(abs(target - s) <= 1e-12 for s in snap_set):
                snaps.append((target, v.copy()))
    return v, snaps, alive, blow_time


# ---------------------------------------------------------------------------
# Public field-level operations.
# ---------------------------------------------------------------------------

def dealiased_square(field, dealias=True):
    """Coefficients of the pointwise square on the stored lattice.

    With padding on (the default) the result is the exact convolution for
    every retained mode; the n1 = 0 output content (e.g. the constant part
    of the square) is not representable and is dropped, which matches its
    fate under the subsequent application of J.
    """
    tr = _transform(field.dimension, field.nmax, dealias)
    return field.with_coeffs(tr.square(field.coeffs))


def nonlinear_rhs(model, epsilon, t, field, dealias=True):
    """-eps * S(-t) J((S(t) v)^2) for the interaction-picture variable v."""
    tr = _transform(field.dimension, field.nmax, dealias)
    om, ph = _model_grids(model, field.nmax)
    return field.with_coeffs(_rhs_array(tr, om, ph, epsilon, float(t), field.coeffs))


def evolve(u0, config, snapshot_times=()):
    """Integrate to t_final; returns the trajectory state (plus snapshots).

    Raises SolverBlowUp when coefficients lose finiteness.  Snapshot times
    are hit exactly by shortening steps; states between snapshots are not
    retained.
    """
    model = config.model
    if model.dimension != u0.dimension:
        raise ValueError(f"datum dimension {u0.dimension} does not match model {model.kind}")
    if config.dt * _delta_scale(model, u0.nmax) > 3.0 and config.epsilon > 0:
        warnings.warn(
            f"dt={config.dt:g} under-resolves the fastest nonlinear phase of "
            f"the nmax={u0.nmax} truncation (scale ~{_delta_scale(model, u0.nmax):.0f}); "
            "expect degraded accuracy on the highest modes",
            StepAccuracyWarning, stacklevel=2)
    final, snaps, alive, blow = evolve_array(
        model, config.epsilon, u0.coeffs, config.dt, config.t_final,
        dealias=config.dealias, snapshot_times=snapshot_times)
    if not bool(np.all(alive)):
        raise SolverBlowUp(float(blow))
    wrapped = tuple((t, SpectralField(u0.nmax, arr)) for t, arr in snaps)
    return TrajectoryState(model, config.t_final, SpectralField(u0.nmax, final), wrapped)


def conserved_functional(model, physical_field):
    """The flow invariant: H^1 energy for BBM, L^2 mass for KdV/KP."""
    c2 = np.abs(physical_field.coeffs) ** 2
    if model.kind == "bbm":
        n = dispersion.mode_grids(1, physical_field.nmax)[0].astype(float)
        return float(2.0 * np.sum((1.0 + n * n) * c2))
    return float(2.0 * np.sum(c2))
