"""Truncated Hermitian-symmetric spectral fields and the linear operators.

A real field with zero x1-mean is determined by its coefficients on the
half-lattice n1 >= 1; the other half is the conjugate mirror and the n1 = 0
modes vanish identically.  Only the half-lattice is stored, which makes the
reality and zero-mean invariants unbreakable by construction.

Storage layout (lexicographic mode order):

    d=1   coeffs[j]        <->  n = j + 1,                j = 0..nmax-1
    d=2   coeffs[i, j]     <->  n = (i + 1, j - nmax),    i = 0..nmax-1

Sobolev norms use the l1 mode size |n| = sum_j |n_j| and count both
half-lattices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import dispersion

__all__ = [
    "SpectralField", "zero_field", "field_from_modes", "random_field",
    "coefficient", "full_array", "apply_semigroup", "apply_j",
    "sobolev_norm", "l2_norm", "write_snapshot", "read_snapshot",
]


@dataclass(frozen=True)
class SpectralField:
    """Half-lattice coefficient array of a real, zero-x1-mean field."""

    nmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=np.complex128)
        dim = arr.ndim
        if dim not in (1, 2) or arr.shape != dispersion.stored_shape(dim, self.nmax):
            raise ValueError(
                f"coefficient array shape {arr.shape} does not match nmax={self.nmax}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)

    @property
    def dimension(self):
        return self.coeffs.ndim

    def with_coeffs(self, coeffs):
        return SpectralField(self.nmax, coeffs)


def zero_field(dim, nmax):
    return SpectralField(nmax, np.zeros(dispersion.stored_shape(dim, nmax), dtype=complex))


def field_from_modes(dim, nmax, modes):
    """Build a field from {mode: coefficient}; n1 < 0 entries set the mirror."""
    arr = np.zeros(dispersion.stored_shape(dim, nmax), dtype=complex)
    for n, value in modes.items():
        if dim == 1:
            n1, rest = int(n), ()
        else:
            n1, rest = int(n[0]), (int(n[1]),)
        if n1 == 0:
            raise ValueError("modes with zero first component carry no data")
        if n1 < 0:
            n1 = -n1
            rest = tuple(-r for r in rest)
            value = np.conj(value)
        idx = (n1 - 1,) + tuple(r + nmax for r in rest)
        if n1 > nmax or any(abs(r) > nmax for r in rest):
            raise ValueError(f"mode {n!r} outside the truncation nmax={nmax}")
        arr[idx] = value
    return SpectralField(nmax, arr)


def random_field(dim, nmax, rng, scale=1.0):
    """Gaussian coefficients with a soft exponential envelope; test helper."""
    shape = dispersion.stored_shape(dim, nmax)
    size = np.abs(dispersion.mode_l1(dim, nmax))
    amp = scale * np.exp(-0.5 * size)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return SpectralField(nmax, amp * z / np.sqrt(2.0))


def coefficient(field, n):
    """Coefficient at any mode of the full box (conjugate mirror, zeros on n1=0)."""
    if field.dimension == 1:
        n1, rest = int(np.asarray(n)), ()
    else:
        n1, rest = int(n[0]), (int(n[1]),)
    if abs(n1) > field.nmax or any(abs(r) > field.nmax for r in rest):
        raise ValueError(f"mode {n!r} outside the truncation nmax={field.nmax}")
    if n1 == 0:
        return 0.0 + 0.0j
    if n1 > 0:
        idx = (n1 - 1,) + tuple(r + field.nmax for r in rest)
        return complex(field.coeffs[idx])
    idx = (-n1 - 1,) + tuple(-r + field.nmax for r in rest)
    return complex(np.conj(field.coeffs[idx]))


def full_array(field):
    """Dense coefficient array over the full box, index j <-> component j - nmax."""
    nmax = field.nmax
    out = np.zeros(dispersion.full_shape(field.dimension, nmax), dtype=complex)
    if field.dimension == 1:
        out[nmax + 1:] = field.coeffs
        out[:nmax] = np.conj(field.coeffs[::-1])
    else:
        out[nmax + 1:, :] = field.coeffs
        out[:nmax, :] = np.conj(field.coeffs[::-1, ::-1])
    return out


def apply_semigroup(model, field, t):
    """Multiply each coefficient by exp(i omega(n) t); preserves every H^s norm."""
    phase = np.exp(1j * dispersion.omega_grid(model, field.nmax) * float(t))
    return field.with_coeffs(field.coeffs * phase)


def apply_j(model, field):
    """Coefficientwise multiplication by i phi(n) (the nonlinearity multiplier)."""
    return field.with_coeffs(field.coeffs * (1j * dispersion.phi_grid(model, field.nmax)))


def sobolev_norm(field, s):
    """H^s norm with the l1 mode size, counted over both half-lattices."""
    weight = dispersion.mode_l1(field.dimension, field.nmax).astype(float) ** (2.0 * s)
    return float(np.sqrt(2.0 * np.sum(weight * np.abs(field.coeffs) ** 2)))


def l2_norm(field):
    return sobolev_norm(field, 0.0)


# ---------------------------------------------------------------------------
# Snapshot serialization: little-endian header (4-byte model tag, uint32
# dimension, uint32 nmax, float64 time) followed by the stored coefficients
# in lexicographic mode order as (real, imag) float64 pairs.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sII d")


def write_snapshot(path, model, t, field):
    tag = model.kind.encode("ascii").ljust(4)
    payload = np.empty(field.coeffs.size * 2, dtype="<f8")
    flat = field.coeffs.ravel()
    payload[0::2] = flat.real
    payload[1::2] = flat.imag
    data = _HEADER.pack(tag, field.dimension, field.nmax, float(t)) + payload.tobytes()
    if isinstance(path, (str, bytes)) or hasattr(path, "__fspath__"):
        with open(path, "wb") as fh:
            fh.write(data)
    else:
        path.write(data)
    return len(data)


def read_snapshot(path):
    """Read a snapshot; returns (model, t, field)."""
    if isinstance(path, (str, bytes)) or hasattr(path, "__fspath__"):
        with open(path, "rb") as fh:
            data = fh.read()
    else:
        data = path.read()
    tag, dim, nmax, t = _HEADER.unpack_from(data, 0)
    model = dispersion.get_model(tag.decode("ascii").strip())
    if model.dimension != dim:
        raise ValueError(f"snapshot dimension {dim} does not match model {model.kind}")
    shape = dispersion.stored_shape(dim, nmax)
    count = int(np.prod(shape))
    payload = np.frombuffer(data, dtype="<f8", count=2 * count, offset=_HEADER.size)
    coeffs = (payload[0::2] + 1j * payload[1::2]).reshape(shape)
    return model, t, SpectralField(nmax, coeffs)
