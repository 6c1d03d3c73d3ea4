"""Second-order covariance corrections and the coupled Monte Carlo estimator.

The analytic side evaluates the correction G_n(lambda, t) whose rate is

    dG_n/dt = 4 phi(n) sum_(k+l=n) sinc(delta, t) *
                 (phi(n)|l_k|^2|l_l|^2 - phi(k)|l_n|^2|l_l|^2 - phi(l)|l_n|^2|l_k|^2)
            + (E|g|^4 - 2) * (2 [n=2q] sinc(d_q, t) phi(n)^2 |l_q|^4
                              - 4 sinc(d_2n, t) phi(2n) phi(n) |l_n|^4)

with the time-integrated form obtained by replacing the sinc kernel with
its integral.  Sums run over triads inside the data truncation; when 2n
falls outside, the truncated dynamics genuinely lack that interaction and
the dropped term is flagged.

The Monte Carlo side estimates (E|u_n(eps;t)|^2 - |lambda_n|^2)/eps^2 with
common-random-number coupling against the exact free evolution: since the
semigroup preserves moduli, the per-sample coupled statistic is simply
|v_n(t)|^2 - |v_n(0)|^2, whose variance is O(eps^2) instead of O(1).  The
estimator is exactly zero at eps = 0 and t = 0.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import warnings
from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np

from . import dispersion
from .kernels import sinc_kernel, tilde_f_kernel
from .sampling import sample_coeff_batch
from .solver import evolve_array

__all__ = [
    "TruncationWarning", "TheoryWindowWarning",
    "g_rate", "g_total", "g_total_terms", "g_table",
    "kinetic_residual", "decay_envelope", "prediction_table",
    "CovarianceReport", "mc_covariance", "ComparisonVerdict", "compare_prediction",
]


class TruncationWarning(UserWarning):
    """A kurtosis interaction partner (2n) falls outside the truncation."""


class TheoryWindowWarning(UserWarning):
    """The requested horizon exceeds the weakly nonlinear window ~ 1/(10 eps)."""


# ---------------------------------------------------------------------------
# Analytic evaluation of G.
# ---------------------------------------------------------------------------

def _lambda_sq_full(spectrum):
    """|lambda|^2 on the full box (mirror symmetric, zero on n1 = 0)."""
    nmax = spectrum.nmax
    out = np.zeros(dispersion.full_shape(spectrum.dimension, nmax))
    table_sq = spectrum.table ** 2
    if spectrum.dimension == 1:
        out[nmax + 1:] = table_sq
        out[:nmax] = table_sq[::-1]
    else:
        out[nmax + 1:, :] = table_sq
        out[:nmax, :] = table_sq[::-1, ::-1]
    return out


def _as_mode(dim, n):
    if dim == 1:
        return (int(np.asarray(n)),)
    return (int(n[0]), int(n[1]))


def _inside(nmax, mode):
    return all(abs(c) <= nmax for c in mode)


def _flat_index(dim, nmax, mode):
    if dim == 1:
        return mode[0] + nmax
    side = 2 * nmax + 1
    return (mode[0] + nmax) * side + (mode[1] + nmax)


def _g_pieces(n, spectrum, kurtosis, model, t, kernel):
    """Per-triad main terms plus the kurtosis correction for one mode."""
    dim, nmax = spectrum.dimension, spectrum.nmax
    if model.dimension != dim:
        raise ValueError(f"spectrum dimension {dim} does not match model {model.kind}")
    mode = _as_mode(dim, n)
    if mode[0] == 0 or not _inside(nmax, mode):
        raise ValueError(f"mode {n!r} outside the active truncated lattice")

    lam2 = _lambda_sq_full(spectrum).ravel()
    om = dispersion.omega_full(model, nmax).ravel()
    ph = dispersion.phi_full(model, nmax).ravel()

    from .picard import _mode_triad_arrays
    kf, lf = _mode_triad_arrays(dim, nmax, mode if dim == 2 else mode[0])
    n_idx = _flat_index(dim, nmax, mode)
    phi_n = ph[n_idx]
    lam_n = lam2[n_idx]
    om_n = om[n_idx]

    delta = om[kf] + om[lf] - om_n
    factor = (phi_n * lam2[kf] * lam2[lf]
              - ph[kf] * lam_n * lam2[lf]
              - ph[lf] * lam_n * lam2[kf])
    terms = 4.0 * phi_n * np.asarray(kernel(delta, t)) * factor

    correction = 0.0
    warned = False
    if kurtosis != 2.0:
        if all(c % 2 == 0 for c in mode):
            q = tuple(c // 2 for c in mode)
            q_idx = _flat_index(dim, nmax, q)
            d_q = 2.0 * om[q_idx] - om_n
            correction += 2.0 * float(kernel(d_q, t)) * phi_n ** 2 * lam2[q_idx] ** 2
        twice = tuple(2 * c for c in mode)
        if _inside(nmax, twice):
            t_idx = _flat_index(dim, nmax, twice)
            d_2n = om[t_idx] - 2.0 * om_n
            correction -= 4.0 * float(kernel(d_2n, t)) * ph[t_idx] * phi_n * lam_n ** 2
        else:
            warned = True
        correction *= (kurtosis - 2.0)
    return terms, float(correction), warned


def _g_eval(n, spectrum, kurtosis, model, t, kernel, warn):
    terms, correction, warned = _g_pieces(n, spectrum, kurtosis, model, t, kernel)
    if warned and warn:
        warnings.warn(
            f"mode {n!r}: doubled mode outside the truncation, kurtosis term dropped",
            TruncationWarning, stacklevel=3)
    return float(np.sum(terms) + correction)


def g_rate(n, spectrum, kurtosis, model, t, warn=True):
    """dG_n/dt at time t (vanishes identically at t = 0)."""
    return _g_eval(n, spectrum, kurtosis, model, t, sinc_kernel, warn)


def g_total(n, spectrum, kurtosis, model, t, warn=True):
    """G_n(lambda, t); the time integral of g_rate, zero at t = 0."""
    return _g_eval(n, spectrum, kurtosis, model, t, tilde_f_kernel, warn)


def g_total_terms(n, spectrum, kurtosis, model, t):
    """Per-triad contributions to G_n plus (kurtosis correction, dropped flag)."""
    return _g_pieces(n, spectrum, kurtosis, model, t, tilde_f_kernel)


def g_table(spectrum, kurtosis, model, t, rate=False):
    """G over every stored mode; returns (values, list of flagged modes)."""
    kernel = sinc_kernel if rate else tilde_f_kernel
    shape = dispersion.stored_shape(spectrum.dimension, spectrum.nmax)
    values = np.zeros(shape)
    flagged = []
    flat = values.reshape(-1)
    for m, mode in enumerate(dispersion.mode_list(spectrum.dimension, spectrum.nmax)):
        terms, corr, warned = _g_pieces(mode, spectrum, kurtosis, model, t, kernel)
        flat[m] = np.sum(terms) + corr
        if warned:
            flagged.append(mode)
    return values, flagged


def kinetic_residual(spectrum, model, resonance_threshold):
    """Near-resonant triad sum of the equilibrium bracket, per stored mode.

    Kurtosis 2 is assumed (the bracket then closes in the |lambda|^2 alone).
    For BBM and KP-II any threshold below the truncation's smallest divisor
    makes every sum empty, hence exactly zero.
    """
    dim, nmax = spectrum.dimension, spectrum.nmax
    lam2 = _lambda_sq_full(spectrum).ravel()
    om = dispersion.omega_full(model, nmax).ravel()
    ph = dispersion.phi_full(model, nmax).ravel()
    from .picard import _mode_triad_arrays

    shape = dispersion.stored_shape(dim, nmax)
    out = np.zeros(shape)
    flat = out.reshape(-1)
    for m, mode_label in enumerate(dispersion.mode_list(dim, nmax)):
        mode = _as_mode(dim, mode_label)
        kf, lf = _mode_triad_arrays(dim, nmax, mode_label)
        if kf.size == 0:
            continue
        n_idx = _flat_index(dim, nmax, mode)
        delta = om[kf] + om[lf] - om[n_idx]
        near = np.abs(delta) <= resonance_threshold
        if not near.any():
            continue
        kf, lf = kf[near], lf[near]
        flat[m] = np.sum(ph[n_idx] * lam2[kf] * lam2[lf]
                         - ph[kf] * lam2[n_idx] * lam2[lf]
                         - ph[lf] * lam2[n_idx] * lam2[kf])
    return out


def decay_envelope(model, n_l1, s, t):
    """Shape of the decay bound on |G_n| (constant-free envelope)."""
    n_l1 = np.asarray(n_l1, dtype=float)
    if model.kind == "bbm":
        beta = 2.0 + 2.0 * s if s >= 1.0 else 4.0 * s
        return n_l1 ** (-beta)
    if model.kind == "kpi":
        return float(t) ** 2 * n_l1 ** (2.0 - 2.0 * s)
    return n_l1 ** (-2.0 * s)


def prediction_table(spectrum, kurtosis, model, t):
    """Rows (mode, |lambda_n|^2, G_n, envelope, flagged) for every stored mode."""
    values, flagged = g_table(spectrum, kurtosis, model, t)
    flagged_set = set(flagged)
    size = dispersion.mode_l1(spectrum.dimension, spectrum.nmax)
    env = decay_envelope(model, size, spectrum.effective_s, t)
    lam2 = spectrum.lambda_sq
    rows = []
    for m, mode in enumerate(dispersion.mode_list(spectrum.dimension, spectrum.nmax)):
        idx = np.unravel_index(m, values.shape)
        rows.append((mode, float(lam2[idx]), float(values[idx]), float(env[idx]),
                     mode in flagged_set))
    return rows


# ---------------------------------------------------------------------------
# Coupled Monte Carlo estimation.
# ---------------------------------------------------------------------------

def _batch_moments(x):
    """(count, mean, sum of squared deviations) along axis 0."""
    count = x.shape[0]
    mean = x.mean(axis=0)
    m2 = np.sum(np.abs(x - mean) ** 2, axis=0)
    return count, mean, m2


def _merge_moments(acc, update):
    """Chan's parallel combination of (count, mean, M2) accumulators."""
    c1, m1, s1 = acc
    c2, m2, s2 = update
    if c1 == 0:
        return update
    count = c1 + c2
    delta = m2 - m1
    mean = m1 + delta * (c2 / count)
    s = s1 + s2 + np.abs(delta) ** 2 * (c1 * c2 / count)
    return count, mean, s


def _offdiag_pairs(dim, nmax, cap):
    """Flat stored-mode index pairs probed for off-diagonal correlation.

    Conjugated products run over m < n, unconjugated over m <= n (the latter
    probe E(u_m u_n), i.e. pairs across the two half-lattices).  Modes are
    taken in increasing l1 size up to `cap` of them.
    """
    size = dispersion.mode_l1(dim, nmax).reshape(-1)
    order = np.argsort(size, kind="stable")[:cap]
    order = np.sort(order)
    herm_m, herm_n = [], []
    plain_m, plain_n = [], []
    for i, mi in enumerate(order):
        for nj in order[i:]:
            if nj != mi:
                herm_m.append(mi)
                herm_n.append(nj)
            plain_m.append(mi)
            plain_n.append(nj)
    return (np.array(herm_m, dtype=int), np.array(herm_n, dtype=int),
            np.array(plain_m, dtype=int), np.array(plain_n, dtype=int))


def _covariance_batch(task):
    """One batch of coupled solves; returns mergeable partial statistics."""
    (ensemble, model, epsilon, t, dt, dealias, start, stop, pairs) = task
    indices = list(range(start, stop))
    a = sample_coeff_batch(ensemble, indices)
    final, _, alive, blow = evolve_array(model, epsilon, a, dt, t, dealias=dealias)
    a_flat = a.reshape(a.shape[0], -1)
    v_flat = final.reshape(final.shape[0], -1)
    keep = np.asarray(alive).reshape(-1)
    excluded = [(indices[i], float(np.asarray(blow).reshape(-1)[i]))
                for i in np.nonzero(~keep)[0]]
    a_flat, v_flat = a_flat[keep], v_flat[keep]
    if a_flat.shape[0] == 0:
        return None, None, None, excluded

    diag = np.abs(v_flat) ** 2 - np.abs(a_flat) ** 2
    hm, hn, pm, pn = pairs
    herm = (np.conj(v_flat[:, hm]) * v_flat[:, hn]
            - np.conj(a_flat[:, hm]) * a_flat[:, hn])
    plain = v_flat[:, pm] * v_flat[:, pn] - a_flat[:, pm] * a_flat[:, pn]
    return (_batch_moments(diag), _batch_moments(herm),
            _batch_moments(plain), excluded)


@dataclass
class CovarianceReport:
    """Per-mode coupled estimates of the eps^2-normalized covariance correction."""

    model_kind: str
    epsilon: float
    t: float
    dt: float
    seed: int
    law_kind: str
    kurtosis: float
    spectrum_family: str
    spectrum_alpha: Optional[float]
    effective_s: float
    nmax: int
    dimension: int
    samples: int
    used: int
    excluded: list
    invalid: bool
    modes: list
    lambda_sq: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    g_pred: np.ndarray
    zscores: np.ndarray
    offdiag_pairs: int
    offdiag_max_abs: float
    offdiag_max_stderr: float
    offdiag_argmax: tuple
    truncation_flags: list = dataclass_field(default_factory=list)

    @staticmethod
    def _mode_label(mode):
        return str(mode) if np.isscalar(mode) else ";".join(str(c) for c in mode)

    def to_csv(self):
        lines = ["mode,lambda_sq,g_pred,mc_estimate,stderr,zscore"]
        for i, mode in enumerate(self.modes):
            lines.append(",".join([
                self._mode_label(mode),
                f"{self.lambda_sq[i]:.17g}", f"{self.g_pred[i]:.17g}",
                f"{self.estimates[i]:.17g}", f"{self.stderrs[i]:.17g}",
                f"{self.zscores[i]:.17g}"]))
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({
            "model": self.model_kind, "epsilon": self.epsilon, "t": self.t,
            "dt": self.dt, "seed": self.seed, "law": self.law_kind,
            "kurtosis": self.kurtosis,
            "spectrum": {"family": self.spectrum_family,
                         "alpha": self.spectrum_alpha,
                         "effective_s": self.effective_s, "nmax": self.nmax},
            "samples": self.samples, "used": self.used,
            "excluded": [{"index": i, "time": bt} for i, bt in self.excluded],
            "invalid": self.invalid,
            "truncation_flagged_modes": [self._mode_label(m) for m in self.truncation_flags],
            "offdiagonal": {"pairs": self.offdiag_pairs,
                            "max_abs": self.offdiag_max_abs,
                            "max_abs_stderr": self.offdiag_max_stderr,
                            "argmax": list(map(self._mode_label, self.offdiag_argmax[:2]))
                                      + [self.offdiag_argmax[2]]},
            "records": [{
                "mode": self._mode_label(mode),
                "lambda_sq": self.lambda_sq[i], "g_pred": self.g_pred[i],
                "estimate": self.estimates[i], "stderr": self.stderrs[i],
                "zscore": self.zscores[i]} for i, mode in enumerate(self.modes)],
        }, indent=2, default=float)


def mc_covariance(ensemble, model, epsilon, t, dt, *, workers=1, batch_size=128,
                  dealias=True, offdiag_cap=64):
    """Coupled-ensemble estimate of the covariance correction at time t.

    Deterministic given (ensemble, batch_size): batches are fixed slices of
    the sample index range and their statistics merge in index order, so the
    result is independent of the worker count.  Samples whose solve loses
    finiteness are excluded and reported; more than 1% exclusions marks the
    report invalid.
    """
    spectrum = ensemble.spectrum
    if model.dimension != spectrum.dimension:
        raise ValueError(f"spectrum dimension does not match model {model.kind}")
    if epsilon > 0 and t > 1.0 / (10.0 * epsilon):
        warnings.warn(
            f"t={t:g} exceeds the weakly nonlinear window 1/(10 eps)={1/(10*epsilon):g}; "
            "the second-order prediction degrades",
            TheoryWindowWarning, stacklevel=2)

    pairs = _offdiag_pairs(spectrum.dimension, spectrum.nmax, offdiag_cap)
    tasks = [(ensemble, model, epsilon, t, dt, dealias, start,
              min(start + batch_size, ensemble.samples), pairs)
             for start in range(0, ensemble.samples, batch_size)]
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(_covariance_batch, tasks, chunksize=1)
    else:
        results = [_covariance_batch(task) for task in tasks]

    diag_acc = (0, 0.0, 0.0)
    herm_acc = (0, 0.0, 0.0)
    plain_acc = (0, 0.0, 0.0)
    excluded = []
    for diag, herm, plain, dead in results:
        excluded.extend(dead)
        if diag is not None:
            diag_acc = _merge_moments(diag_acc, diag)
            herm_acc = _merge_moments(herm_acc, herm)
            plain_acc = _merge_moments(plain_acc, plain)

    used = diag_acc[0]
    if used < 2:
        raise RuntimeError("fewer than two usable samples; cannot form errors")
    scale = 1.0 / epsilon ** 2 if epsilon > 0 else 1.0
    mean_d = np.asarray(diag_acc[1])
    sd_d = np.sqrt(np.asarray(diag_acc[2]) / (used - 1))
    estimates = mean_d * scale
    stderrs = sd_d / math.sqrt(used) * scale

    g_values, flagged = g_table(spectrum, ensemble.law.kurtosis, model, t)
    g_flat = g_values.reshape(-1)
    zero_err = stderrs == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (estimates - g_flat) / stderrs
    z[zero_err & (estimates == g_flat)] = 0.0
    z[zero_err & (estimates != g_flat)] = np.inf

    hm, hn, pm, pn = pairs
    off_mean = np.concatenate([np.asarray(herm_acc[1]), np.asarray(plain_acc[1])])
    off_sd = np.sqrt(np.concatenate([np.asarray(herm_acc[2]), np.asarray(plain_acc[2])]) / (used - 1))
    off_abs = np.abs(off_mean)
    arg = int(np.argmax(off_abs)) if off_abs.size else 0
    labels = dispersion.mode_list(spectrum.dimension, spectrum.nmax)
    if off_abs.size:
        if arg < hm.size:
            pair_label = (labels[hm[arg]], labels[hn[arg]], "conjugated")
        else:
            j = arg - hm.size
            pair_label = (labels[pm[j]], labels[pn[j]], "plain")
        max_abs = float(off_abs[arg])
        max_stderr = float(off_sd[arg] / math.sqrt(used))
    else:
        pair_label = (None, None, "none")
        max_abs = 0.0
        max_stderr = 0.0

    invalid = len(excluded) > 0.01 * ensemble.samples
    return CovarianceReport(
        model_kind=model.kind, epsilon=epsilon, t=t, dt=dt, seed=ensemble.seed,
        law_kind=ensemble.law.kind, kurtosis=ensemble.law.kurtosis,
        spectrum_family=spectrum.family, spectrum_alpha=spectrum.alpha,
        effective_s=spectrum.effective_s, nmax=spectrum.nmax,
        dimension=spectrum.dimension, samples=ensemble.samples, used=used,
        excluded=excluded, invalid=invalid, modes=labels,
        lambda_sq=spectrum.lambda_sq.reshape(-1).copy(),
        estimates=estimates, stderrs=stderrs, g_pred=g_flat.copy(), zscores=z,
        offdiag_pairs=int(hm.size + pm.size), offdiag_max_abs=max_abs,
        offdiag_max_stderr=max_stderr, offdiag_argmax=pair_label,
        truncation_flags=flagged)


# ---------------------------------------------------------------------------
# Prediction comparison.
# ---------------------------------------------------------------------------

@dataclass
class ComparisonVerdict:
    n_modes: int
    fraction_within_3: float
    decay_slope: Optional[float] = None
    decay_bound: Optional[float] = None
    decay_ok: Optional[bool] = None
    decay_skipped: bool = True
    shells: int = 0

    @property
    def passed(self):
        ok = self.fraction_within_3 >= 0.95
        if not self.decay_skipped and self.decay_ok is not None:
            ok = ok and self.decay_ok
        return ok


def _decay_bound_exponent(model, s):
    if model.kind == "bbm":
        beta = 2.0 + 2.0 * s if s >= 1.0 else 4.0 * s
        return -beta + 0.5
    if model.kind == "kpi":
        return (2.0 - 2.0 * s) + 0.5
    return -2.0 * s + 0.5


def fit_decay_slope(mode_l1, values, min_shells=4):
    """Log-log slope of the per-shell max of |values| against the l1 size."""
    sizes = np.asarray(mode_l1, dtype=float).reshape(-1)
    mags = np.abs(np.asarray(values, dtype=float).reshape(-1))
    shells = {}
    for size, mag in zip(sizes, mags):
        shells[size] = max(shells.get(size, 0.0), mag)
    pts = [(s, m) for s, m in sorted(shells.items()) if m > 0.0 and s > 0.0]
    if len(pts) < min_shells:
        return None, len(pts)
    xs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    return float(np.polyfit(xs, ys, 1)[0]), len(pts)


def compare_prediction(report, decay_fit=False, s=None):
    """Z-score summary of a report, optionally with the decay-envelope fit.

    `s` is the declared datum regularity used for the envelope exponent;
    by default it sits half a unit inside the profile's summability
    supremum (the supremum itself is not attained).
    """
    finite = np.isfinite(report.zscores)
    within = np.abs(np.where(finite, report.zscores, np.inf)) <= 3.0
    verdict = ComparisonVerdict(
        n_modes=len(report.modes),
        fraction_within_3=float(np.mean(within)) if len(report.modes) else 1.0)
    if decay_fit:
        model = dispersion.MODELS[report.model_kind]
        size = dispersion.mode_l1(report.dimension, report.nmax)
        slope, shells = fit_decay_slope(size, report.g_pred)
        verdict.shells = shells
        if slope is None:
            verdict.decay_skipped = True
        else:
            declared = report.effective_s - 0.5 if s is None else float(s)
            verdict.decay_skipped = False
            verdict.decay_slope = slope
            verdict.decay_bound = _decay_bound_exponent(model, declared)
            verdict.decay_ok = slope <= verdict.decay_bound
    return verdict
