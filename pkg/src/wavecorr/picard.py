"""First Picard iterate oracles and second-order remainder extraction.

The interaction-picture solution expands as v = u0 + eps*b + eps^2*c.  The
first iterate has the closed triad form

    b_n(t) = -i phi(n) sum_(k+l=n) a_k a_l F(delta_n^kl, t)

and, equivalently, the integral form -int_0^t S(-tau) J((S(tau) u0)^2) dtau;
both are implemented and serve as mutual oracles.  The remainder c is
defined by subtraction from a full solve rather than by integrating its own
evolution equation, so there is exactly one solver code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import dispersion
from .field import SpectralField, full_array, sobolev_norm
from .kernels import f_kernel
from .solver import SolverConfig, evolve, evolve_array, _transform, _model_grids

__all__ = [
    "first_iterate_closed_form", "first_iterate_quadrature", "default_panels",
    "PicardDecomposition", "decompose", "extract_second_remainder",
    "GrowthScan", "remainder_growth_scan",
]


@lru_cache(maxsize=None)
def _max_delta(kind, nmax):
    return dispersion.max_abs_delta(dispersion.MODELS[kind], nmax)


def default_panels(model, nmax, t):
    """Enough Simpson panels to resolve the fastest oscillation e^(i delta tau)."""
    if t == 0.0:
        return 16
    return max(16, int(math.ceil(8.0 * abs(t) * _max_delta(model.kind, nmax) / math.pi)))


def _mode_triad_arrays(dim, nmax, n):
    """(k_flat, l_flat) full-box flat indices of every triad feeding mode n."""
    grids = dispersion.full_mode_grids(dim, nmax)
    if dim == 1:
        k1 = grids[0]
        l1 = int(n) - k1
        ok = (k1 != 0) & (l1 != 0) & (np.abs(l1) <= nmax)
        kf = np.nonzero(ok)[0]
        lf = (l1[ok] + nmax)
        return kf, lf
    k1, k2 = grids
    l1 = int(n[0]) - k1
    l2 = int(n[1]) - k2
    ok = (k1 != 0) & (l1 != 0) & (np.abs(l1) <= nmax) & (np.abs(l2) <= nmax)
    side = 2 * nmax + 1
    kf = np.nonzero(ok.ravel())[0]
    lf = ((l1[ok] + nmax) * side + (l2[ok] + nmax))
    return kf, lf


def first_iterate_closed_form(u0, model, t):
    """Exact triad sum for b(t) over the truncated lattice."""
    nmax, dim = u0.nmax, u0.dimension
    if model.dimension != dim:
        raise ValueError(f"datum dimension {dim} does not match model {model.kind}")
    a_flat = full_array(u0).ravel()
    om_flat = dispersion.omega_full(model, nmax).ravel()
    ph = dispersion.phi_grid(model, nmax)
    om = dispersion.omega_grid(model, nmax)

    out = np.zeros(dispersion.stored_shape(dim, nmax), dtype=complex)
    flat_out = out.reshape(-1)
    om_stored = om.reshape(-1)
    ph_stored = ph.reshape(-1)
    for m, n in enumerate(dispersion.mode_list(dim, nmax)):
        kf, lf = _mode_triad_arrays(dim, nmax, n)
        if kf.size == 0:
            continue
        delta = om_flat[kf] + om_flat[lf] - om_stored[m]
        flat_out[m] = -1j * ph_stored[m] * np.sum(
            a_flat[kf] * a_flat[lf] * f_kernel(delta, t))
    return u0.with_coeffs(out)


def first_iterate_quadrature(u0, model, t, panels=None, chunk=1024):
    """Composite Simpson quadrature of -S(-tau) J((S(tau) u0)^2) over [0, t].

    Converges at fourth order in the panel width; the default panel count
    resolves the fastest triad oscillation of the truncation.
    """
    nmax, dim = u0.nmax, u0.dimension
    if model.dimension != dim:
        raise ValueError(f"datum dimension {dim} does not match model {model.kind}")
    if panels is None:
        panels = default_panels(model, nmax, t)
    if panels < 4:
        raise ValueError("need at least 4 Simpson panels")
    if t == 0.0:
        return u0.with_coeffs(np.zeros_like(u0.coeffs))

    h = t / panels
    taus = 0.5 * h * np.arange(2 * panels + 1)
    weights = np.full(taus.size, 2.0 * h / 6.0)
    weights[1::2] = 4.0 * h / 6.0
    weights[0] = weights[-1] = h / 6.0

    tr = _transform(dim, nmax, True)
    om, ph = _model_grids(model, nmax)
    shape = (1,) * dim
    acc = np.zeros_like(u0.coeffs)
    for start in range(0, taus.size, chunk):
        tau = taus[start:start + chunk]
        w = weights[start:start + chunk].reshape((-1,) + shape)
        phase = np.exp(1j * om[None] * tau.reshape((-1,) + shape))
        sq = tr.square(u0.coeffs[None] * phase)
        contrib = (-1j) * ph[None] * np.conj(phase) * sq
        acc = acc + np.sum(w * contrib, axis=0)
    return u0.with_coeffs(acc)


# ---------------------------------------------------------------------------
# Remainder extraction and growth scans.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PicardDecomposition:
    """v(eps; t) = datum + eps * first_iterate + eps^2 * remainder, exactly."""

    time: float
    epsilon: float
    datum: SpectralField
    first_iterate: SpectralField
    remainder: SpectralField

    def reconstruct(self):
        return self.datum.with_coeffs(
            self.datum.coeffs + self.epsilon * self.first_iterate.coeffs
            + self.epsilon ** 2 * self.remainder.coeffs)


def decompose(u0, model, epsilon, t, dt=2e-3, dealias=True):
    """Solve, subtract the closed-form iterate, and return the decomposition."""
    if epsilon <= 0.0:
        raise ValueError("remainder extraction needs epsilon > 0")
    b = first_iterate_closed_form(u0, model, t)
    if t == 0.0:
        c = u0.with_coeffs(np.zeros_like(u0.coeffs))
        return PicardDecomposition(0.0, epsilon, u0, b, c)
    config = SolverConfig(model, epsilon, min(dt, t), t, dealias)
    state = evolve(u0, config)
    c = u0.with_coeffs(
        (state.v.coeffs - u0.coeffs - epsilon * b.coeffs) / epsilon ** 2)
    return PicardDecomposition(t, epsilon, u0, b, c)


def extract_second_remainder(u0, model, epsilon, t, dt=2e-3, dealias=True):
    return decompose(u0, model, epsilon, t, dt, dealias).remainder


def _remainder_norm_order(model):
    # BBM's natural remainder energy is H^1; the KP family (and KdV) use L^2.
    return 1.0 if model.kind == "bbm" else 0.0


@dataclass
class GrowthScan:
    """Norms of the extracted remainder along a time grid."""

    model_kind: str
    epsilon: float
    nmax: int
    norm_order: float
    rows: list            # (t, norm) pairs
    truncated: bool = False

    @property
    def fitted_exponent(self):
        pts = [(t, v) for t, v in self.rows if t > 0.0 and v > 0.0]
        if len(pts) < 2:
            return None
        logs = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
        return float(np.polyfit(logs[0], logs[1], 1)[0])

    def to_csv(self):
        lines = ["t,norm,model,epsilon,nmax"]
        for t, v in self.rows:
            lines.append(f"{t:.17g},{v:.17g},{self.model_kind},"
                         f"{self.epsilon:.17g},{self.nmax}")
        return "\n".join(lines) + "\n"


def remainder_growth_scan(u0, model, epsilon, time_grid, dt=2e-3, dealias=True):
    """Extract c along the grid from a single solve; fits a power law in t.

    A solver blow-up truncates the table at the failure time and flags it.
    """
    if epsilon <= 0.0:
        raise ValueError("remainder extraction needs epsilon > 0")
    grid = sorted(set(float(t) for t in time_grid))
    if any(t < 0 for t in grid):
        raise ValueError("time grid must be nonnegative")
    order = _remainder_norm_order(model)
    scan = GrowthScan(model.kind, epsilon, u0.nmax, order, [])
    positive = [t for t in grid if t > 0.0]
    if 0.0 in grid:
        scan.rows.append((0.0, 0.0))
    if not positive:
        return scan
    final, snaps, alive, blow = evolve_array(
        model, epsilon, u0.coeffs, min(dt, min(positive)), positive[-1],
        dealias=dealias, snapshot_times=positive)
    died = not bool(np.all(alive))
    cutoff = float(blow) if died else math.inf
    for t_i, v_i in snaps:
        if t_i >= cutoff:
            scan.truncated = True
            break
        b = first_iterate_closed_form(u0, model, t_i)
        c = u0.with_coeffs((v_i - u0.coeffs - epsilon * b.coeffs) / epsilon ** 2)
        scan.rows.append((t_i, sobolev_norm(c, order)))
    return scan
