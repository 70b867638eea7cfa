"""Pilot-domain sensing: LS at DMRS, windowed 2D-FFT periodogram, peak picking.

Also hosts the accuracy/resolution calculators used to size tolerance
factors (FFT bin widths, windowed resolution, Cramer-Rao bounds).

RD-map conventions: the frequency (pilot subcarrier) axis uses an inverse
DFT ``exp(+j2pi k n / N_per)`` and the time (pilot symbol) axis a forward DFT
``exp(-j2pi l m / M_per)``.  A path with delay ``tau`` then peaks at delay bin
``tau * df * d_sc * N_per`` and a positive Doppler at low Doppler bins; bins
above ``M_per / 2`` are read as negative Doppler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.signal import get_window

from .grid import ConfigurationError, DmrsPattern, OfdmConfig

# 6-dB main-lobe width of the windowed DFT in units of the fundamental
# resolution.  Hamming and Hann values after Harris (1978); rectangular is
# pinned to the fundamental resolution.
RESOLUTION_FACTOR = {"rectangular": 1.0, "hamming": 1.81, "hanning": 2.0}

_SCIPY_WINDOW = {"rectangular": "boxcar", "hamming": "hamming", "hanning": "hann"}


@dataclass(frozen=True)
class SensingConfig:
    fft_size_freq: int
    fft_size_time: int
    slots_combined: int = 1
    window: str = "hamming"
    peak_rel_threshold_db: float = -25.0
    # (freq_bins, time_bins); None -> ceil(resolution / bin) on each axis
    peak_exclusion: tuple[int, int] | None = None

    def __post_init__(self):
        if self.window not in RESOLUTION_FACTOR:
            raise ConfigurationError(f"unknown window {self.window!r}")
        if self.fft_size_freq < 1 or self.fft_size_time < 1 or self.slots_combined < 1:
            raise ConfigurationError("FFT sizes and slot count must be positive")
        if not self.peak_rel_threshold_db < 0:
            raise ConfigurationError("peak threshold must be below 0 dB")
        if self.peak_exclusion is not None:
            ex = tuple(int(v) for v in self.peak_exclusion)
            if len(ex) != 2 or min(ex) < 1:
                raise ConfigurationError("peak exclusion radii must be >= 1")
            object.__setattr__(self, "peak_exclusion", ex)

    def validate_for(self, pat: DmrsPattern) -> None:
        if self.fft_size_freq < pat.n_p:
            raise ConfigurationError("fft_size_freq smaller than the pilot count N_p")
        if self.fft_size_time < self.slots_combined * pat.m_p:
            raise ConfigurationError("fft_size_time smaller than S * M_p")


@dataclass(frozen=True)
class RdMap:
    values: np.ndarray = field(repr=False)
    bin_delay: float
    bin_doppler: float


@dataclass(frozen=True)
class SensingEstimate:
    delays: np.ndarray
    dopplers: np.ndarray
    peak_powers: np.ndarray | None = None

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.delays, dtype=float))
        f = np.atleast_1d(np.asarray(self.dopplers, dtype=float))
        if d.shape != f.shape:
            raise ConfigurationError("delay and Doppler estimates differ in length")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "dopplers", f)
        if self.peak_powers is not None:
            object.__setattr__(self, "peak_powers", np.atleast_1d(
                np.asarray(self.peak_powers, dtype=float)))

    @property
    def num_paths(self) -> int:
        return len(self.delays)


def ls_pilots(y: np.ndarray, x: np.ndarray, pat: DmrsPattern) -> np.ndarray:
    """LS channel estimate at the DMRS lattice, shape ``(N_p, M_p)``."""
    sel = np.ix_(pat.sc_idx, pat.sym_idx)
    xp = np.asarray(x)[sel]
    if np.any(xp == 0):
        raise ConfigurationError("zero-valued pilot symbol")
    return np.asarray(y)[sel] / xp


def window_vector(name: str, length: int) -> np.ndarray:
    """Periodic (DFT-even) window of the given length."""
    if name not in _SCIPY_WINDOW:
        raise ConfigurationError(f"unknown window {name!r}")
    return get_window(_SCIPY_WINDOW[name], length, fftbins=True)


def apply_window(h_ls: np.ndarray, cfg_s: SensingConfig) -> np.ndarray:
    """``A * h_ls`` with ``A = a_F a_T^T / (|a_F|^2 |a_T|^2)``."""
    n, m = h_ls.shape
    a_f = window_vector(cfg_s.window, n)
    a_t = window_vector(cfg_s.window, m)
    a = np.outer(a_f, a_t) / (a_f @ a_f * (a_t @ a_t))
    return a * h_ls


def bin_widths(cfg: OfdmConfig, pat: DmrsPattern, cfg_s: SensingConfig) -> tuple[float, float]:
    tau_bin = 1.0 / (cfg.subcarrier_spacing * cfg_s.fft_size_freq * pat.sc_interval)
    f_bin = 1.0 / (cfg.symbol_duration * cfg_s.fft_size_time * pat.sym_interval)
    return tau_bin, f_bin


def resolutions(cfg: OfdmConfig, cfg_s: SensingConfig) -> tuple[float, float]:
    """Windowed delay / Doppler resolution over the full band and S slots."""
    k = RESOLUTION_FACTOR[cfg_s.window]
    tau_res = k / (cfg.num_subcarriers * cfg.subcarrier_spacing)
    f_res = k / (cfg_s.slots_combined * cfg.num_symbols * cfg.symbol_duration)
    return tau_res, f_res


def default_exclusion(cfg: OfdmConfig, pat: DmrsPattern, cfg_s: SensingConfig) -> tuple[int, int]:
    tau_bin, f_bin = bin_widths(cfg, pat, cfg_s)
    tau_res, f_res = resolutions(cfg, cfg_s)
    # guard against 9.000000001 -> 10 from float noise
    return (max(1, math.ceil(tau_res / tau_bin - 1e-9)),
            max(1, math.ceil(f_res / f_bin - 1e-9)))


def periodogram(h_win: np.ndarray, cfg_s: SensingConfig, cfg: OfdmConfig,
                pat: DmrsPattern) -> RdMap:
    """Range-Doppler map of a (windowed) pilot LS matrix.

    ``Per(n, m) = |sum_k (sum_l h[k,l] e^{-j2pi lm/M_per}) e^{+j2pi kn/N_per}|^2 / (N M)``
    with ``N, M`` the slot's subcarrier and symbol counts.
    """
    n_per, m_per = cfg_s.fft_size_freq, cfg_s.fft_size_time
    if h_win.shape[0] > n_per or h_win.shape[1] > m_per:
        raise ConfigurationError("FFT sizes smaller than the input matrix")
    spec = np.fft.ifft(h_win, n=n_per, axis=0) * n_per
    spec = np.fft.fft(spec, n=m_per, axis=1)
    values = np.abs(spec) ** 2 / (cfg.num_subcarriers * cfg.num_symbols)
    tau_bin, f_bin = bin_widths(cfg, pat, cfg_s)
    return RdMap(values, tau_bin, f_bin)


def detect_peaks(rd: RdMap, cfg_s: SensingConfig,
                 exclusion: tuple[int, int] | None = None) -> SensingEstimate:
    """Greedy strongest-first local-maximum picking on a circular RD map.

    Candidates are local maxima (3x3, wrap-around) within
    ``peak_rel_threshold_db`` of the global maximum.  A candidate is dropped
    when it lies inside the ``(freq_bins, time_bins)`` box of an already
    accepted peak.
    """
    v = np.asarray(rd.values)
    if v.size == 0:
        raise ConfigurationError("empty RD map")
    if not np.all(np.isfinite(v)):
        raise ConfigurationError("RD map contains non-finite values")
    ex = exclusion or cfg_s.peak_exclusion
    if ex is None:
        raise ConfigurationError("no peak exclusion radius given")
    n_per, m_per = v.shape
    vmax = v.max()
    if vmax <= 0:
        return SensingEstimate(np.empty(0), np.empty(0), np.empty(0))

    local = v == ndimage.maximum_filter(v, size=3, mode="wrap")
    local &= v >= vmax * 10.0 ** (cfg_s.peak_rel_threshold_db / 10.0)
    cand = np.argwhere(local)
    order = np.argsort(-v[cand[:, 0], cand[:, 1]], kind="stable")

    accepted: list[tuple[int, int]] = []
    for i in order:
        n, m = cand[i]
        blocked = False
        for an, am in accepted:
            dn = min(abs(n - an), n_per - abs(n - an))
            dm = min(abs(m - am), m_per - abs(m - am))
            if dn <= ex[0] and dm <= ex[1]:
                blocked = True
                break
        if not blocked:
            accepted.append((int(n), int(m)))

    nb = np.array([a[0] for a in accepted])
    mb = np.array([a[1] for a in accepted])
    m_signed = np.where(mb > m_per // 2, mb - m_per, mb)
    return SensingEstimate(nb * rd.bin_delay, m_signed * rd.bin_doppler, v[nb, mb])


def sense(h_ls: np.ndarray, cfg: OfdmConfig, pat: DmrsPattern,
          cfg_s: SensingConfig) -> SensingEstimate:
    """Window, transform and pick peaks on an ``N_p x (S*M_p)`` LS matrix."""
    cfg_s.validate_for(pat)
    rd = periodogram(apply_window(h_ls, cfg_s), cfg_s, cfg, pat)
    ex = cfg_s.peak_exclusion or default_exclusion(cfg, pat, cfg_s)
    return detect_peaks(rd, cfg_s, ex)


def crlb(cfg: OfdmConfig, pat: DmrsPattern, sigma_sq: float) -> tuple[float, float]:
    """Averaged CRLBs on delay (s^2) and Doppler (Hz^2) variance for OFDM radar."""
    n_p, m_p = pat.n_p, pat.m_p
    if n_p < 2 or m_p < 2:
        raise ConfigurationError("CRLB needs at least 2 pilots per axis")
    var_tau = 6.0 * sigma_sq / ((n_p ** 2 - 1) * n_p * m_p) * (
        1.0 / (2 * np.pi * pat.sc_interval * cfg.subcarrier_spacing)) ** 2
    var_f = 6.0 * sigma_sq / ((m_p ** 2 - 1) * n_p * m_p) * (
        1.0 / (2 * np.pi * pat.sym_interval * cfg.symbol_duration)) ** 2
    return var_tau, var_f
