"""OFDM resource grid: numerology, DMRS placement, channel synthesis and QAM.

Index convention
----------------
Subcarrier and symbol indices follow the 1-based convention ``n = 1..N`` and
``m = 1..M`` inside the CFR phase terms, and the pilot sets are
``p(n) = (n-1)*d_sc + 1`` and ``q(m) = (m-1)*d_sym + 1``.  Arrays are stored
0-based, so array row ``i`` holds subcarrier ``n = i + 1``.  All correlation
quantities downstream depend only on index differences, so the absolute
offset cancels.

Grids are plain ``(N, M)`` complex ndarrays (subcarriers x OFDM symbols).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for inconsistent numerology, pilot layout or scenario values."""


@dataclass(frozen=True)
class OfdmConfig:
    subcarrier_spacing: float
    symbol_duration: float
    num_subcarriers: int
    num_symbols: int
    carrier_freq: float = 28e9

    def __post_init__(self):
        for name in ("subcarrier_spacing", "symbol_duration", "carrier_freq"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if self.num_subcarriers < 2 or self.num_symbols < 2:
            raise ConfigurationError("need at least 2 subcarriers and 2 symbols")
        # CP length must be non-negative; allow rounding slack on the useful time.
        if self.symbol_duration * self.subcarrier_spacing < 1.0 - 1e-12:
            raise ConfigurationError(
                "symbol_duration shorter than 1/subcarrier_spacing (negative CP)"
            )

    @classmethod
    def table1(cls, num_subcarriers: int = 1584) -> "OfdmConfig":
        """FR2 numerology: 120 kHz spacing, 8.9 us symbols, 56 symbols per slot."""
        return cls(120e3, 8.9e-6, num_subcarriers, 56, 28e9)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_subcarriers, self.num_symbols)

    @property
    def bandwidth(self) -> float:
        return self.num_subcarriers * self.subcarrier_spacing


@dataclass(frozen=True)
class DmrsPattern:
    """Scattered pilot lattice.

    ``pilot_subcarriers`` / ``pilot_symbols`` hold the 1-based sets P and Q;
    ``sc_idx`` / ``sym_idx`` are the matching 0-based array indices.
    """

    sc_interval: int
    sym_interval: int
    pilot_subcarriers: np.ndarray = field(repr=False)
    pilot_symbols: np.ndarray = field(repr=False)

    @property
    def n_p(self) -> int:
        return len(self.pilot_subcarriers)

    @property
    def m_p(self) -> int:
        return len(self.pilot_symbols)

    @property
    def sc_idx(self) -> np.ndarray:
        return self.pilot_subcarriers - 1

    @property
    def sym_idx(self) -> np.ndarray:
        return self.pilot_symbols - 1

    @property
    def density(self) -> int:
        """Product of the pilot intervals (the inverse pilot density)."""
        return self.sc_interval * self.sym_interval

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[np.ix_(self.sc_idx, self.sym_idx)] = True
        return m


def dmrs_pattern(cfg: OfdmConfig, sc_interval: int, sym_interval: int) -> DmrsPattern:
    """Uniform DMRS lattice with the given subcarrier and symbol intervals."""
    if sc_interval < 1 or sym_interval < 1:
        raise ConfigurationError("pilot intervals must be >= 1")
    if cfg.num_subcarriers % sc_interval or cfg.num_symbols % sym_interval:
        raise ConfigurationError(
            f"pilot intervals ({sc_interval}, {sym_interval}) must divide the grid "
            f"{cfg.num_subcarriers}x{cfg.num_symbols}"
        )
    n_p = cfg.num_subcarriers // sc_interval
    m_p = cfg.num_symbols // sym_interval
    p = np.arange(n_p) * sc_interval + 1
    q = np.arange(m_p) * sym_interval + 1
    return DmrsPattern(sc_interval, sym_interval, p, q)


@dataclass(frozen=True)
class PathSet:
    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        d = np.atleast_1d(np.asarray(self.delays, dtype=float))
        f = np.atleast_1d(np.asarray(self.dopplers, dtype=float))
        if not (len(g) == len(d) == len(f)):
            raise ConfigurationError("gains, delays and dopplers differ in length")
        if len(g) == 0:
            raise ConfigurationError("a PathSet needs at least one path")
        if np.any(d < 0):
            raise ConfigurationError("path delays must be non-negative")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "dopplers", f)

    @property
    def count(self) -> int:
        return len(self.gains)

    def alias_free(self, cfg: OfdmConfig, pat: DmrsPattern) -> bool:
        """True when the pilot lattice samples every path without folding."""
        tau_ok = self.delays.max() * pat.sc_interval * cfg.subcarrier_spacing < 0.5
        fd_ok = np.abs(self.dopplers).max() * pat.sym_interval * cfg.symbol_duration < 0.5
        return bool(tau_ok and fd_ok)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def path_variances(relative_powers_db: Sequence[float]) -> np.ndarray:
    """Linear per-path powers normalised to unit total power."""
    p = 10.0 ** (np.asarray(relative_powers_db, dtype=float) / 10.0)
    return p / p.sum()


def gen_random_paths(relative_powers_db, delays, dopplers, rng=None) -> PathSet:
    """Draw circularly-symmetric Gaussian gains for a fixed delay/Doppler geometry.

    The per-path variances follow ``relative_powers_db`` and sum to one.
    """
    if len(relative_powers_db) == 0:
        raise ConfigurationError("empty path specification")
    if not (len(relative_powers_db) == len(delays) == len(dopplers)):
        raise ConfigurationError("path parameter lists differ in length")
    rng = _as_rng(rng)
    var = path_variances(relative_powers_db)
    z = rng.standard_normal(len(var)) + 1j * rng.standard_normal(len(var))
    return PathSet(np.sqrt(var / 2.0) * z, delays, dopplers)


def steering(cfg: OfdmConfig, delays, dopplers, num_symbols: int | None = None,
             symbol_offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-path frequency (N x L) and time (M x L) phase vectors."""
    n = np.arange(1, cfg.num_subcarriers + 1)
    m_len = cfg.num_symbols if num_symbols is None else num_symbols
    m = np.arange(1, m_len + 1) + symbol_offset
    freq = np.exp(-2j * np.pi * cfg.subcarrier_spacing * np.outer(n, delays))
    time = np.exp(2j * np.pi * cfg.symbol_duration * np.outer(m, dopplers))
    return freq, time


def gen_cfr(cfg: OfdmConfig, paths: PathSet, num_symbols: int | None = None,
            symbol_offset: int = 0) -> np.ndarray:
    """Doubly-selective CFR ``H[n, m] = sum_l a_l exp(-j2pi n df tau_l) exp(j2pi m To fd_l)``.

    ``num_symbols``/``symbol_offset`` allow synthesising several consecutive
    slots on one continuous symbol axis.
    """
    freq, time = steering(cfg, paths.delays, paths.dopplers, num_symbols, symbol_offset)
    return (freq * paths.gains) @ time.T


def noise_variance(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def transmit(x: np.ndarray, h: np.ndarray, snr_db: float, rng=None,
             add_noise: bool = True) -> np.ndarray:
    """``Y = X * H + W`` with i.i.d. CN(0, 10^(-snr_db/10)) noise."""
    x = np.asarray(x)
    h = np.asarray(h)
    if x.shape != h.shape:
        raise ConfigurationError(f"grid shapes differ: {x.shape} vs {h.shape}")
    y = x * h
    if not add_noise:
        return y
    rng = _as_rng(rng)
    sigma = np.sqrt(noise_variance(snr_db) / 2.0)
    w = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    return y + sigma * w


def check_grid(arr: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.shape != cfg.shape:
        raise ConfigurationError(f"grid shape {arr.shape} != {cfg.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("grid contains non-finite entries")
    return arr


# --- QAM -------------------------------------------------------------------
#
# Square Gray-mapped QAM.  Each symbol's bits split into an in-phase half
# (first k/2 bits) and a quadrature half (last k/2 bits).  A half with Gray
# word g maps to the PAM amplitude (sqrt(M) - 1) - 2 * gray_decode(g), so for
# QPSK bit 0 -> +1 and bit 1 -> -1, i.e. "00" -> (1 + 1j)/sqrt(2).  The
# constellation is scaled to unit mean energy.

SUPPORTED_QAM = (4, 16, 64, 256, 1024)


def _qam_params(order: int) -> tuple[int, int, float]:
    if order not in SUPPORTED_QAM:
        raise ConfigurationError(f"unsupported QAM order {order}")
    k = int(np.log2(order))
    side = int(round(np.sqrt(order)))
    scale = np.sqrt(2.0 * (order - 1) / 3.0)
    return k, side, scale


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    w = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ w


def _int_to_bits(vals: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1)
    return (vals[..., None] >> shifts) & 1


def _gray_decode(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


def qam_constellation(order: int) -> np.ndarray:
    """Constellation points indexed by the integer value of the bit word."""
    k, _, _ = _qam_params(order)
    words = _int_to_bits(np.arange(order), k)
    return qam_modulate(words.ravel(), order)


def qam_modulate(bits, order: int) -> np.ndarray:
    k, side, scale = _qam_params(order)
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % k:
        raise ConfigurationError(f"bit count {bits.size} not divisible by {k}")
    words = bits.reshape(-1, k)
    half = k // 2
    i_idx = _gray_decode(_bits_to_int(words[:, :half]))
    q_idx = _gray_decode(_bits_to_int(words[:, half:]))
    re = (side - 1) - 2 * i_idx
    im = (side - 1) - 2 * q_idx
    return (re + 1j * im) / scale


def qam_demodulate(symbols, order: int) -> np.ndarray:
    """Hard-decision demapping to the nearest constellation point."""
    k, side, scale = _qam_params(order)
    s = np.asarray(symbols).ravel() * scale
    half = k // 2

    def axis_bits(v):
        idx = np.clip(np.rint(((side - 1) - v) / 2.0), 0, side - 1).astype(np.int64)
        gray = idx ^ (idx >> 1)
        return _int_to_bits(gray, half)

    bits = np.concatenate([axis_bits(s.real), axis_bits(s.imag)], axis=1)
    return bits.reshape(-1)


def zf_equalize(y: np.ndarray, h_hat: np.ndarray, eps: float = 1e-12):
    """Element-wise zero forcing.

    Returns ``(x_hat, erased)``; entries where ``|h_hat| <= eps`` are set to 0
    and flagged in the boolean ``erased`` mask.
    """
    y = np.asarray(y)
    h_hat = np.asarray(h_hat)
    if y.shape != h_hat.shape:
        raise ConfigurationError(f"grid shapes differ: {y.shape} vs {h_hat.shape}")
    erased = ~(np.abs(h_hat) > eps)
    safe = np.where(erased, 1.0, h_hat)
    x_hat = np.where(erased, 0.0, y / safe)
    return x_hat, erased
