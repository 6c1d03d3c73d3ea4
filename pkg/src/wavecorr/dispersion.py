"""Dispersion relations, the mode lattice, and triad bookkeeping.

Four models are supported, all posed on the torus with real fields whose
x1-mean vanishes:

    kdv    d=1   omega(n) = n^3                 phi(n) = n
    bbm    d=1   omega(n) = -n/(1+n^2)          phi(n) = n/(1+n^2)
    kpii   d=2   omega(n) = n1^3 - n2^2/n1      phi(n) = n1
    kpi    d=2   omega(n) = n1^3 + n2^2/n1      phi(n) = n1

Modes live on the integer lattice with nonzero first component.  Truncated
fields store only the half-lattice n1 >= 1 (see `field`); the helpers here
produce coordinate grids for both the stored half and the full box.  The
mode size |n| is always the l1 size sum_j |n_j|.

A triad is an ordered pair (k, l) with k + l = n; its pulsation mismatch is
delta = omega(k) + omega(l) - omega(n), computed directly from omega.  The
factored rational forms are provided separately as test oracles only.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "DispersionModel", "KDV", "BBM", "KPI", "KPII", "MODELS", "get_model",
    "omega", "phi", "delta", "omega_exact", "delta_exact",
    "bbm_delta_factored", "bbm_delta_lemma_magnitude",
    "kp_delta_factored", "kpii_delta_bound",
    "stored_shape", "mode_grids", "mode_l1", "mode_list",
    "full_shape", "full_mode_grids", "full_index",
    "omega_grid", "phi_grid", "omega_full", "phi_full",
    "triad_blocks", "enumerate_triads", "delta_triads", "max_abs_delta",
]


@dataclass(frozen=True)
class DispersionModel:
    """Model tag plus its spatial dimension."""

    kind: str
    dimension: int


KDV = DispersionModel("kdv", 1)
BBM = DispersionModel("bbm", 1)
KPI = DispersionModel("kpi", 2)
KPII = DispersionModel("kpii", 2)

MODELS = {m.kind: m for m in (KDV, BBM, KPI, KPII)}


def get_model(tag):
    """Resolve a model tag ('kdv', 'bbm', 'kpi', 'kpii') to its model."""
    try:
        return MODELS[tag.lower()]
    except KeyError:
        raise ValueError(f"unknown model tag {tag!r}; expected one of {sorted(MODELS)}")


# Dispatch tables are looked up at call time so tests can inject a perturbed
# relation (the self-check suite relies on this seam).

def _omega_kdv(n1):
    return n1 * n1 * n1


def _omega_bbm(n1):
    return -n1 / (1.0 + n1 * n1)


def _omega_kpii(n1, n2):
    return n1 * n1 * n1 - (n2 * n2) / n1


def _omega_kpi(n1, n2):
    return n1 * n1 * n1 + (n2 * n2) / n1


def _phi_kdv(n1):
    return n1


def _phi_bbm(n1):
    return n1 / (1.0 + n1 * n1)


def _phi_kp(n1, n2):
    return n1


_OMEGA = {"kdv": _omega_kdv, "bbm": _omega_bbm, "kpi": _omega_kpi, "kpii": _omega_kpii}
_PHI = {"kdv": _phi_kdv, "bbm": _phi_bbm, "kpi": _phi_kp, "kpii": _phi_kp}


def _components(model, n):
    """Split a mode (or array of modes) into float component arrays.

    d=1 accepts scalars or arrays of integers; d=2 accepts a pair (n1, n2)
    or an array whose last axis has length 2.  Rejects modes with zero
    first component.
    """
    arr = np.asarray(n)
    if model.dimension == 1:
        if arr.dtype == object or (arr.ndim > 0 and arr.shape[-1] == 2 and arr.ndim > 1):
            raise ValueError(f"{model.kind} is one-dimensional, got mode {n!r}")
        comps = (arr.astype(float),)
    else:
        if arr.ndim == 0 or arr.shape[-1] != 2:
            raise ValueError(f"{model.kind} modes need 2 components, got {n!r}")
        comps = (arr[..., 0].astype(float), arr[..., 1].astype(float))
    if np.any(comps[0] == 0):
        raise ValueError("mode has zero first component (outside the active lattice)")
    return comps


def omega(model, n):
    """Pulsation omega(n).  Odd in n; zero first components are rejected."""
    out = _OMEGA[model.kind](*_components(model, n))
    return float(out) if np.ndim(out) == 0 else out


def phi(model, n):
    """Nonlinearity multiplier phi(n).  Odd in n."""
    out = np.asarray(_PHI[model.kind](*_components(model, n)), dtype=float)
    return float(out) if out.ndim == 0 else out


def delta(model, n, k, l):
    """Pulsation mismatch omega(k) + omega(l) - omega(n) for the triad k+l=n."""
    na, ka, la = np.asarray(n), np.asarray(k), np.asarray(l)
    if not np.array_equal(ka + la, na):
        raise ValueError(f"triad constraint k+l=n violated: {k!r} + {l!r} != {n!r}")
    return omega(model, k) + omega(model, l) - omega(model, n)


def omega_exact(model, n):
    """omega(n) in exact rational arithmetic (single mode)."""
    if model.dimension == 1:
        n1 = int(n)
        if n1 == 0:
            raise ValueError("mode has zero first component")
        if model.kind == "kdv":
            return Fraction(n1 ** 3)
        return Fraction(-n1, 1 + n1 * n1)
    n1, n2 = int(n[0]), int(n[1])
    if n1 == 0:
        raise ValueError("mode has zero first component")
    cube = Fraction(n1 ** 3)
    transverse = Fraction(n2 * n2, n1)
    return cube + transverse if model.kind == "kpi" else cube - transverse


def delta_exact(model, n, k, l):
    """Exact rational pulsation mismatch for the triad k+l=n."""
    na, ka, la = np.asarray(n), np.asarray(k), np.asarray(l)
    if not np.array_equal(ka + la, na):
        raise ValueError(f"triad constraint k+l=n violated: {k!r} + {l!r} != {n!r}")
    return omega_exact(model, k) + omega_exact(model, l) - omega_exact(model, n)


# ---------------------------------------------------------------------------
# Factored rational forms of delta.  These are independent oracles used by
# the self-check suite and the tests; `delta` itself never uses them.
# ---------------------------------------------------------------------------

def bbm_delta_factored(n, k, l):
    """Signed factored BBM mismatch -nkl(3+k^2+kl+l^2)/((1+n^2)(1+k^2)(1+l^2))."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    l = np.asarray(l, dtype=float)
    num = -n * k * l * (3.0 + k * k + k * l + l * l)
    den = (1.0 + n * n) * (1.0 + k * k) * (1.0 + l * l)
    return num / den


def bbm_delta_lemma_magnitude(n, k, l):
    """|nkl(k^2+l^2+kl+3)| / ((1+n^2)(1+k^2)(1+l^2)), the no-resonance lemma size."""
    return np.abs(bbm_delta_factored(n, k, l))


def kp_delta_factored(model, n, k, l):
    """Factored KP mismatch via the cross term c = l1*k2 - k1*l2.

    KP-I:  (c^2 - 3(k1*l1*n1)^2) / (k1*l1*n1)
    KP-II: -(c^2 + 3(k1*l1*n1)^2) / (k1*l1*n1)
    """
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    l = np.asarray(l, dtype=float)
    prod = k[..., 0] * l[..., 0] * n[..., 0]
    cross = l[..., 0] * k[..., 1] - k[..., 0] * l[..., 1]
    if model.kind == "kpi":
        return (cross * cross - 3.0 * prod * prod) / prod
    if model.kind == "kpii":
        return -(cross * cross + 3.0 * prod * prod) / prod
    raise ValueError(f"factored KP form undefined for model {model.kind!r}")


def kpii_delta_bound(n, k, l):
    """The KP-II no-resonance lower bound 3|n1 k1 l1|."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    l = np.asarray(l, dtype=float)
    return 3.0 * np.abs(n[..., 0] * k[..., 0] * l[..., 0])


# ---------------------------------------------------------------------------
# Mode lattice bookkeeping.
# ---------------------------------------------------------------------------

def stored_shape(dim, nmax):
    """Array shape of the stored half-lattice (n1 >= 1)."""
    return (nmax,) if dim == 1 else (nmax, 2 * nmax + 1)


def mode_grids(dim, nmax):
    """Component grids over the stored half-lattice, matching stored_shape."""
    if dim == 1:
        return (np.arange(1, nmax + 1),)
    n1 = np.arange(1, nmax + 1)[:, None]
    n2 = np.arange(-nmax, nmax + 1)[None, :]
    return np.broadcast_to(n1, (nmax, 2 * nmax + 1)), np.broadcast_to(n2, (nmax, 2 * nmax + 1))


def mode_l1(dim, nmax):
    """l1 mode size |n| = sum_j |n_j| over the stored half-lattice."""
    grids = mode_grids(dim, nmax)
    return sum(np.abs(g) for g in grids)


def mode_list(dim, nmax):
    """Stored modes in lexicographic order: ints for d=1, (n1, n2) tuples for d=2."""
    if dim == 1:
        return list(range(1, nmax + 1))
    return [(n1, n2) for n1 in range(1, nmax + 1) for n2 in range(-nmax, nmax + 1)]


def full_shape(dim, nmax):
    """Array shape of the full box |n_j| <= nmax (first component may be 0)."""
    return (2 * nmax + 1,) if dim == 1 else (2 * nmax + 1, 2 * nmax + 1)


def full_mode_grids(dim, nmax):
    """Component grids over the full box, index j <-> component j - nmax."""
    r = np.arange(-nmax, nmax + 1)
    if dim == 1:
        return (r,)
    side = 2 * nmax + 1
    return (np.broadcast_to(r[:, None], (side, side)),
            np.broadcast_to(r[None, :], (side, side)))


def full_index(n, nmax):
    """Index of mode n inside a full-box array."""
    arr = np.asarray(n)
    if arr.ndim == 0:
        return int(arr) + nmax
    return tuple(int(c) + nmax for c in arr)


def omega_grid(model, nmax):
    """omega over the stored half-lattice."""
    grids = tuple(g.astype(float) for g in mode_grids(model.dimension, nmax))
    return np.asarray(_OMEGA[model.kind](*grids), dtype=float)


def phi_grid(model, nmax):
    """phi over the stored half-lattice."""
    grids = tuple(g.astype(float) for g in mode_grids(model.dimension, nmax))
    return np.asarray(_PHI[model.kind](*grids), dtype=float)


def _full_multiplier(table, model, nmax):
    grids = tuple(g.astype(float) for g in full_mode_grids(model.dimension, nmax))
    first = grids[0]
    safe = tuple((np.where(first == 0, 1.0, first),) + grids[1:])
    vals = np.asarray(table[model.kind](*safe), dtype=float)
    return np.where(first == 0, 0.0, vals)


def omega_full(model, nmax):
    """omega over the full box, with the convention omega(0, n') = 0."""
    return _full_multiplier(_OMEGA, model, nmax)


def phi_full(model, nmax):
    """phi over the full box, with phi(0, n') = 0."""
    return _full_multiplier(_PHI, model, nmax)


# ---------------------------------------------------------------------------
# Triad enumeration.
# ---------------------------------------------------------------------------

def _active_modes(dim, nmax):
    """All modes of the truncated active lattice as an (M, dim) int array."""
    if dim == 1:
        vals = np.concatenate([np.arange(-nmax, 0), np.arange(1, nmax + 1)])
        return vals[:, None]
    n1 = np.concatenate([np.arange(-nmax, 0), np.arange(1, nmax + 1)])
    n2 = np.arange(-nmax, nmax + 1)
    g1, g2 = np.meshgrid(n1, n2, indexing="ij")
    return np.stack([g1.ravel(), g2.ravel()], axis=1)


def triad_blocks(dim, nmax, block=256):
    """Yield (n, k, l) arrays of shape (T, dim) covering every triad once.

    Exhaustive over ordered pairs: every n, k, l in the truncated active
    lattice with k + l = n.  Blocked over n to bound peak memory.
    """
    modes = _active_modes(dim, nmax)
    for start in range(0, len(modes), block):
        nblk = modes[start:start + block]
        l = nblk[:, None, :] - modes[None, :, :]
        ok = (np.abs(l) <= nmax).all(axis=2) & (l[:, :, 0] != 0)
        idx_n, idx_k = np.nonzero(ok)
        if idx_n.size:
            yield nblk[idx_n], modes[idx_k], l[idx_n, idx_k]


def enumerate_triads(dim, nmax):
    """Collect every triad into single (n, k, l) arrays (desk-scale nmax only)."""
    parts = list(triad_blocks(dim, nmax))
    if not parts:
        empty = np.empty((0, dim), dtype=int)
        return empty, empty.copy(), empty.copy()
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def delta_triads(model, n, k, l):
    """Vectorized mismatch over triad arrays of shape (T, dim)."""
    if model.dimension == 1:
        f = _OMEGA[model.kind]
        args = (n[:, 0].astype(float),), (k[:, 0].astype(float),), (l[:, 0].astype(float),)
    else:
        f = _OMEGA[model.kind]
        args = ((n[:, 0].astype(float), n[:, 1].astype(float)),
                (k[:, 0].astype(float), k[:, 1].astype(float)),
                (l[:, 0].astype(float), l[:, 1].astype(float)))
    return f(*args[1]) + f(*args[2]) - f(*args[0])


def max_abs_delta(model, nmax):
    """Largest |delta| over all triads of the truncation (oscillation budget)."""
    worst = 0.0
    for n, k, l in triad_blocks(model.dimension, nmax, block=512):
        d = np.abs(delta_triads(model, n, k, l))
        if d.size:
            worst = max(worst, float(d.max()))
    return worst
