"""Triad interaction kernels built from the oscillatory integral F.

F(delta, t) is the integral of exp(i*delta*tau) over [0, t].  Two real
companions show up in the covariance bookkeeping:

    sinc_kernel(delta, t)    = sin(delta t)/delta   = Re(-F(delta, -t))
    tilde_f_kernel(delta, t) = (1 - cos(delta t))/delta^2
                             = integral of sinc_kernel over [0, t]

All three switch to a 4-term Taylor series when |delta * t| < 1e-6, which
keeps them total and continuous across the degenerate direction and avoids
the cancellation in (exp(i delta t) - 1) and (1 - cos(delta t)).
"""

from __future__ import annotations

import numpy as np

__all__ = ["f_kernel", "sinc_kernel", "tilde_f_kernel", "DEGENERATE_PHASE"]

# |delta * t| below this uses the series branch.
DEGENERATE_PHASE = 1e-6


def _prepare(delta, t):
    delta = np.asarray(delta, dtype=float)
    t = np.asarray(t, dtype=float)
    x = delta * t
    small = np.abs(x) < DEGENERATE_PHASE
    safe = np.where(small, 1.0, delta)
    return delta, t, x, small, safe


def _scalarize(out, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return out[()]
    return out


def f_kernel(delta, t):
    """(exp(i delta t) - 1)/(i delta), exactly t on the degenerate branch.

    The nondegenerate branch is evaluated as 2 sin(x/2) e^(ix/2)/delta with
    x = delta*t, which is free of the cancellation in exp(ix) - 1.
    """
    _, t, x, small, safe = _prepare(delta, t)
    half = 0.5 * x
    exact = 2.0 * np.sin(half) * np.exp(1j * half) / safe
    z = 1j * x
    series = t * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)))
    out = np.where(small, series, exact)
    return _scalarize(out, delta, t)


def sinc_kernel(delta, t):
    """sin(delta t)/delta, exactly t on the degenerate branch."""
    _, t, x, small, safe = _prepare(delta, t)
    exact = np.sin(x) / safe
    x2 = x * x
    series = t * (1.0 - x2 * (1.0 / 6.0 - x2 * (1.0 / 120.0 - x2 / 5040.0)))
    out = np.where(small, series, exact)
    return _scalarize(out, delta, t)


def tilde_f_kernel(delta, t):
    """(1 - cos(delta t))/delta^2, exactly t^2/2 on the degenerate branch.

    Evaluated as 2 sin^2(x/2)/delta^2 away from the threshold, which avoids
    the cancellation in 1 - cos for small phases.
    """
    _, t, x, small, safe = _prepare(delta, t)
    half_sin = np.sin(0.5 * x)
    exact = 2.0 * half_sin * half_sin / (safe * safe)
    x2 = x * x
    series = t * t * (0.5 - x2 * (1.0 / 24.0 - x2 * (1.0 / 720.0 - x2 / 40320.0)))
    out = np.where(small, series, exact)
    return _scalarize(out, delta, t)
