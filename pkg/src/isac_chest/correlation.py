"""Tolerance factors and sensing-driven channel correlation construction.

Each sensed path ``l`` is modelled as a uniform delay on
``tau_l +- C_F,l / 2`` and a uniform Doppler on ``fd_l +- C_T,l / 2``, with a
constant multi-path intensity profile (equal weights ``1/L``).  Averaging the
CFR phase terms over those intervals gives sinc-shaped lag correlations:

    r_F(k)      = 1/L sum_l sinc(k df C_F,l) exp(-j2pi k df tau_l)
    r_T(k)      = 1/L sum_l sinc(k To C_T,l) exp(+j2pi k To fd_l)
    R(dn, dm)   = 1/L sum_l [sinc(dn df C_F,l) e^{-j2pi dn df tau_l}]
                            [sinc(dm To C_T,l) e^{+j2pi dm To fd_l}]

``sinc`` is the normalised ``sin(pi x) / (pi x)`` (``numpy.sinc``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ConfigurationError, DmrsPattern, OfdmConfig
from .sensing import SensingEstimate

Interval = tuple[float, float]

# Dense full-2D matrices above this many cross-matrix entries are refused.
DEFAULT_MAX_ENTRIES = 40_000_000


def merge_intervals(intervals) -> list[Interval]:
    """Sorted, disjoint union of closed intervals."""
    out: list[list[float]] = []
    for lo, hi in sorted((float(a), float(b)) for a, b in intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def in_union(value: float, intervals: list[Interval]) -> bool:
    return any(lo <= value <= hi for lo, hi in intervals)


@dataclass(frozen=True)
class ToleranceRecord:
    """Per-path tolerance factors plus the delay / Doppler distribution sets."""

    estimate: SensingEstimate
    c_f: np.ndarray
    c_t: np.ndarray
    delay_set: list[Interval] = field(init=False)
    doppler_set: list[Interval] = field(init=False)

    def __post_init__(self):
        n = self.estimate.num_paths
        c_f = np.broadcast_to(np.asarray(self.c_f, dtype=float), (n,)).copy()
        c_t = np.broadcast_to(np.asarray(self.c_t, dtype=float), (n,)).copy()
        if np.any(c_f <= 0) or np.any(c_t <= 0):
            raise ConfigurationError("tolerance factors must be strictly positive")
        object.__setattr__(self, "c_f", c_f)
        object.__setattr__(self, "c_t", c_t)
        tau, fd = self.estimate.delays, self.estimate.dopplers
        object.__setattr__(self, "delay_set", merge_intervals(
            zip(tau - c_f / 2, tau + c_f / 2)))
        object.__setattr__(self, "doppler_set", merge_intervals(
            zip(fd - c_t / 2, fd + c_t / 2)))


def default_tolerance(est: SensingEstimate, resolutions: tuple[float, float]) -> ToleranceRecord:
    """Resolution-sized tolerances for every sensed path."""
    tau_res, f_res = resolutions
    return ToleranceRecord(est, tau_res, f_res)


def update_check(record: ToleranceRecord, new_est: SensingEstimate) -> bool:
    """True when the LMMSE coefficients must be rebuilt.

    Triggers on a changed path count, or when any new delay leaves the
    recorded delay set or any new Doppler leaves the recorded Doppler set.
    """
    if new_est.num_paths != record.estimate.num_paths:
        return True
    if any(not in_union(t, record.delay_set) for t in new_est.delays):
        return True
    return any(not in_union(f, record.doppler_set) for f in new_est.dopplers)


def _path_weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ConfigurationError("path weights must be non-negative, one per path")
    return w / w.sum()


def _freq_terms(k, est, tol, cfg):
    """Per-path frequency factors, shape ``k.shape + (L,)``."""
    k = np.asarray(k, dtype=float)[..., None]
    x = k * cfg.subcarrier_spacing
    return np.sinc(x * tol.c_f) * np.exp(-2j * np.pi * x * est.delays)


def _time_terms(k, est, tol, cfg):
    k = np.asarray(k, dtype=float)[..., None]
    x = k * cfg.symbol_duration
    return np.sinc(x * tol.c_t) * np.exp(2j * np.pi * x * est.dopplers)


def corr_freq(k, est: SensingEstimate, tol: ToleranceRecord, cfg: OfdmConfig,
              weights=None):
    """Frequency-lag correlation ``r_F(k)``; ``k`` may be an integer array."""
    w = _path_weights(est.num_paths, weights)
    return _freq_terms(k, est, tol, cfg) @ w


def corr_time(k, est: SensingEstimate, tol: ToleranceRecord, cfg: OfdmConfig,
              weights=None):
    """Symbol-lag correlation ``r_T(k)``."""
    w = _path_weights(est.num_paths, weights)
    return _time_terms(k, est, tol, cfg) @ w


def corr_2d(dn, dm, est: SensingEstimate, tol: ToleranceRecord, cfg: OfdmConfig,
            weights=None):
    """Joint lag correlation; path terms are multiplied before summing."""
    w = _path_weights(est.num_paths, weights)
    dn, dm = np.broadcast_arrays(np.asarray(dn), np.asarray(dm))
    return (_freq_terms(dn, est, tol, cfg) * _time_terms(dm, est, tol, cfg)) @ w


@dataclass(frozen=True)
class CorrSet:
    """Constructed correlation matrices.

    ``freq_*`` / ``time_*`` are always present.  ``full_*`` are only filled
    in ``mode == "full_2d"`` and use column-major vectorisation: row
    ``m * N + n`` of the cross matrix is RE ``(n, m)`` (0-based), column
    ``m' * N_p + n'`` is pilot ``(p(n'), q(m'))``.
    """

    mode: str
    freq_cross: np.ndarray = field(repr=False)
    freq_pilot: np.ndarray = field(repr=False)
    time_cross: np.ndarray = field(repr=False)
    time_pilot: np.ndarray = field(repr=False)
    full_cross: np.ndarray | None = field(default=None, repr=False)
    full_pilot: np.ndarray | None = field(default=None, repr=False)


def _lag_matrix(rfun, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``M[i, j] = rfun(rows[i] - cols[j])`` evaluating each distinct lag once."""
    lags = rows[:, None] - cols[None, :]
    lo = int(lags.min())
    table = rfun(np.arange(lo, int(lags.max()) + 1))
    return table[lags - lo]


def _axes(cfg: OfdmConfig, pat: DmrsPattern):
    n = np.arange(1, cfg.num_subcarriers + 1)
    m = np.arange(1, cfg.num_symbols + 1)
    return n, m, pat.pilot_subcarriers, pat.pilot_symbols


def separable_from_lags(cfg: OfdmConfig, pat: DmrsPattern, r_f, r_t) -> CorrSet:
    """Separable matrices from arbitrary frequency / time lag functions."""
    n, m, p, q = _axes(cfg, pat)
    return CorrSet(
        mode="separable",
        freq_cross=_lag_matrix(r_f, n, p),
        freq_pilot=_lag_matrix(r_f, p, p),
        time_cross=_lag_matrix(r_t, m, q),
        time_pilot=_lag_matrix(r_t, q, q),
    )


def build_separable(cfg: OfdmConfig, pat: DmrsPattern, est: SensingEstimate,
                    tol: ToleranceRecord, weights=None) -> CorrSet:
    return separable_from_lags(
        cfg, pat,
        lambda k: corr_freq(k, est, tol, cfg, weights),
        lambda k: corr_time(k, est, tol, cfg, weights),
    )


def build_full_2d(cfg: OfdmConfig, pat: DmrsPattern, est: SensingEstimate,
                  tol: ToleranceRecord, weights=None,
                  max_entries: int = DEFAULT_MAX_ENTRIES) -> CorrSet:
    """Full 2D correlation matrices plus the separable ones.

    ``R(dn, dm)`` is a weighted sum of per-path products, so the dense
    matrices are assembled as ``sum_l w_l kron(T_l, F_l)`` where ``F_l`` /
    ``T_l`` hold path ``l``'s frequency / time factors.  This is an exact
    evaluation of ``corr_2d`` at every index pair.
    """
    nm = cfg.num_subcarriers * cfg.num_symbols
    npm = pat.n_p * pat.m_p
    if nm * npm > max_entries:
        raise MemoryError(
            f"full 2D cross matrix would hold {nm * npm} entries (cap {max_entries})"
        )
    w = _path_weights(est.num_paths, weights)
    n, m, p, q = _axes(cfg, pat)

    def factor(terms_fn, rows, cols, k):
        lags = rows[:, None] - cols[None, :]
        lo = int(lags.min())
        table = terms_fn(np.arange(lo, int(lags.max()) + 1), est, tol, cfg)
        return table[lags - lo][..., k]

    full_cross = np.zeros((nm, npm), dtype=complex)
    full_pilot = np.zeros((npm, npm), dtype=complex)
    for k in range(est.num_paths):
        f_cross = factor(_freq_terms, n, p, k)
        f_pilot = factor(_freq_terms, p, p, k)
        t_cross = factor(_time_terms, m, q, k)
        t_pilot = factor(_time_terms, q, q, k)
        full_cross += w[k] * np.kron(t_cross, f_cross)
        full_pilot += w[k] * np.kron(t_pilot, f_pilot)

    sep = build_separable(cfg, pat, est, tol, weights)
    return CorrSet("full_2d", sep.freq_cross, sep.freq_pilot, sep.time_cross,
                   sep.time_pilot, full_cross, full_pilot)


def robust_lags(tau_max: float, f_max: float, cfg: OfdmConfig):
    """Lag functions for uniform delay on [0, tau_max] and Doppler on [-f_max, f_max]."""
    def r_f(k):
        x = np.asarray(k, dtype=float) * cfg.subcarrier_spacing * tau_max
        return np.exp(-1j * np.pi * x) * np.sinc(x)

    def r_t(k):
        return np.sinc(2.0 * np.asarray(k, dtype=float) * cfg.symbol_duration * f_max).astype(complex)

    return r_f, r_t


def robust_correlations(tau_max: float, f_max: float, cfg: OfdmConfig,
                        pat: DmrsPattern) -> CorrSet:
    """Separable correlations of the classical robust (uniform-spread) LMMSE."""
    if tau_max < 0 or f_max < 0:
        raise ConfigurationError("maximum delay / Doppler spread must be non-negative")
    r_f, r_t = robust_lags(tau_max, f_max, cfg)
    return separable_from_lags(cfg, pat, r_f, r_t)
