"""Channel estimators: sensing-assisted LMMSE (separable and full 2D) and baselines.

Every estimator maps pilot observations to an ``(N, M)`` CFR estimate.  The
proposed estimator can be driven slot by slot through
:class:`SensingAssistedEstimator`, which reuses LMMSE coefficients until the
sensed paths leave the recorded tolerance sets.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.interpolate import CubicSpline

from .correlation import (
    CorrSet,
    ToleranceRecord,
    build_full_2d,
    build_separable,
    default_tolerance,
    robust_correlations,
    update_check,
)
from .grid import ConfigurationError, DmrsPattern, OfdmConfig, steering
from .sensing import SensingConfig, SensingEstimate, ls_pilots, resolutions, sense

log = logging.getLogger(__name__)

# Operating-SNR regulariser beta / SNR with beta = 1 (QPSK DMRS) and SNR = 1e5.
DEFAULT_SIGMA_HAT_SQ = 1e-5
MAX_CONDITION = 1e12


class NumericalError(ArithmeticError):
    """A regularised LMMSE system is too ill-conditioned to solve reliably."""


@dataclass(frozen=True)
class LmmseCoefficients:
    """Wiener coefficients.

    ``separable``: ``w_f`` (N x N_p) and ``w_t`` (M x M_p).
    ``full_2d``: dense ``w_full`` (NM x N_pM_p, column-major vectorisation).
    ``kronecker``: exact 2D filter for a correlation that factors as
    ``kron(T, F)``; ``w_f = F_cross V_F``, ``w_t = T_cross V_T``, ``basis``
    holds ``(V_F, V_T)`` and ``gains`` the ``N_p x M_p`` eigen-domain gains.
    """

    mode: str
    w_f: np.ndarray | None = field(repr=False)
    w_t: np.ndarray | None = field(repr=False)
    w_full: np.ndarray | None = field(repr=False)
    sigma_hat_sq: float
    grid_shape: tuple[int, int]
    provenance: ToleranceRecord | None = None
    # complex multiplications spent building these coefficients
    mult_count: int = 0
    basis: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    gains: np.ndarray | None = field(default=None, repr=False)

    @property
    def apply_mults(self) -> int:
        """Complex multiplications for one application to an LS pilot matrix."""
        if self.mode == "separable":
            n, n_p = self.w_f.shape
            m, m_p = self.w_t.shape
            return n * n_p * m_p + n * m * m_p
        if self.mode == "kronecker":
            n, n_p = self.w_f.shape
            m, m_p = self.w_t.shape
            return n_p * n_p * m_p + n_p * m_p * m_p + n_p * m_p + n * n_p * m_p + n * m * m_p
        nm, npm = self.w_full.shape
        return nm * npm


@dataclass
class EstimatorOutput:
    h_hat: np.ndarray
    coefficients_updated: bool
    mult_count: int
    estimate: SensingEstimate | None = None


def wiener_matrix(r_cross: np.ndarray, r_pilot: np.ndarray, sigma_hat_sq: float) -> np.ndarray:
    """``r_cross @ inv(r_pilot + sigma_hat_sq * I)`` via a Hermitian solve."""
    if not sigma_hat_sq > 0:
        raise ConfigurationError("sigma_hat_sq must be strictly positive")
    a = r_pilot + sigma_hat_sq * np.eye(r_pilot.shape[0])
    ev = linalg.eigvalsh(a)
    cond = np.abs(ev).max() / max(np.abs(ev).min(), np.finfo(float).tiny)
    if ev.min() <= 0 or cond > MAX_CONDITION:
        raise NumericalError(
            f"regularised pilot correlation is ill-conditioned: eigenvalues in "
            f"[{ev.min():.3e}, {ev.max():.3e}], condition number {cond:.3e}"
        )
    # W^H = A^{-1} R_cross^H since A is Hermitian.
    return linalg.solve(a, r_cross.conj().T, assume_a="her").conj().T


def lmmse_coeffs(corr: CorrSet, sigma_hat_sq: float = DEFAULT_SIGMA_HAT_SQ,
                 provenance: ToleranceRecord | None = None, k: float = 1.0,
                 mode: str | None = None) -> LmmseCoefficients:
    """LMMSE coefficients for either separable or full-2D correlations.

    ``mode`` defaults to ``corr.mode``; a full-2D ``CorrSet`` also carries the
    separable matrices, so it can yield either form.  The build tally charges
    ``k * n^3`` for each regularised inverse plus the cross-matrix product,
    once per coefficient set.
    """
    mode = corr.mode if mode is None else mode
    if mode not in ("separable", "full_2d", "kronecker"):
        raise ConfigurationError(f"unknown LMMSE mode {mode!r}")
    if mode == "kronecker":
        return _kronecker_coeffs(corr, sigma_hat_sq, provenance, k)
    if mode == "separable":
        w_f = wiener_matrix(corr.freq_cross, corr.freq_pilot, sigma_hat_sq)
        w_t = wiener_matrix(corr.time_cross, corr.time_pilot, sigma_hat_sq)
        (n, n_p), (m, m_p) = w_f.shape, w_t.shape
        mults = int(k * n_p ** 3 + n * n_p ** 2 + k * m_p ** 3 + m * m_p ** 2)
        return LmmseCoefficients("separable", w_f, w_t, None, sigma_hat_sq, (n, m),
                                 provenance, mults)
    if corr.full_cross is None:
        raise ConfigurationError("full_2d CorrSet without full matrices")
    w = wiener_matrix(corr.full_cross, corr.full_pilot, sigma_hat_sq)
    nm, npm = w.shape
    shape = (corr.freq_cross.shape[0], corr.time_cross.shape[0])
    mults = int(k * npm ** 3 + nm * npm ** 2)
    return LmmseCoefficients("full_2d", None, None, w, sigma_hat_sq, shape, provenance, mults)


def _kronecker_coeffs(corr: CorrSet, sigma_hat_sq: float,
                      provenance: ToleranceRecord | None, k: float) -> LmmseCoefficients:
    """Exact 2D Wiener filter when ``R = kron(T, F)`` (a single sensed path).

    ``(T_p kron F_p + s I)^-1`` is diagonal in the Kronecker eigenbasis, so the
    dense ``N_pM_p``-square solve is never formed.
    """
    if not sigma_hat_sq > 0:
        raise ConfigurationError("sigma_hat_sq must be strictly positive")
    g_f, v_f = linalg.eigh(corr.freq_pilot)
    g_t, v_t = linalg.eigh(corr.time_pilot)
    denom = np.outer(g_f, g_t) + sigma_hat_sq
    if denom.min() <= 0 or denom.max() / denom.min() > MAX_CONDITION:
        raise NumericalError(
            f"Kronecker pilot correlation is ill-conditioned: eigenvalue products in "
            f"[{denom.min():.3e}, {denom.max():.3e}]"
        )
    w_f = corr.freq_cross @ v_f
    w_t = corr.time_cross @ v_t
    (n, n_p), (m, m_p) = w_f.shape, w_t.shape
    mults = int(k * (n_p ** 3 + m_p ** 3) + n * n_p ** 2 + m * m_p ** 2)
    return LmmseCoefficients("kronecker", w_f, w_t, None, sigma_hat_sq, (n, m),
                             provenance, mults, (v_f, v_t), 1.0 / denom)


def estimate_kronecker(h_ls_p: np.ndarray, coeffs: LmmseCoefficients) -> np.ndarray:
    """Apply a ``kronecker``-mode filter without forming ``W``."""
    if coeffs.mode != "kronecker":
        raise ConfigurationError("kronecker coefficients required")
    v_f, v_t = coeffs.basis
    if h_ls_p.shape != coeffs.gains.shape:
        raise ConfigurationError(f"LS pilot matrix has shape {h_ls_p.shape}")
    # kron(A, B) vec(X) = vec(B X A^T) for column-major vec
    z = coeffs.gains * (v_f.conj().T @ h_ls_p @ v_t.conj())
    return coeffs.w_f @ z @ coeffs.w_t.T


def estimate_separable(h_ls_p: np.ndarray, coeffs: LmmseCoefficients) -> np.ndarray:
    """Frequency filtering per pilot symbol, then time filtering per subcarrier."""
    if coeffs.mode != "separable":
        raise ConfigurationError("separable coefficients required")
    if h_ls_p.shape != (coeffs.w_f.shape[1], coeffs.w_t.shape[1]):
        raise ConfigurationError(f"LS pilot matrix has shape {h_ls_p.shape}")
    tmp = coeffs.w_f @ h_ls_p          # N x M_p, interpolated pilot symbols
    return tmp @ coeffs.w_t.T          # row n: W_T @ tmp[n, :]


def estimate_full_2d(h_ls_p: np.ndarray, coeffs: LmmseCoefficients) -> np.ndarray:
    if coeffs.mode != "full_2d":
        raise ConfigurationError("full_2d coefficients required")
    if h_ls_p.size != coeffs.w_full.shape[1]:
        raise ConfigurationError(f"LS pilot matrix has shape {h_ls_p.shape}")
    h = coeffs.w_full @ h_ls_p.reshape(-1, order="F")
    return h.reshape(coeffs.grid_shape, order="F")


def apply_coeffs(h_ls_p: np.ndarray, coeffs: LmmseCoefficients) -> np.ndarray:
    if coeffs.mode == "separable":
        return estimate_separable(h_ls_p, coeffs)
    if coeffs.mode == "kronecker":
        return estimate_kronecker(h_ls_p, coeffs)
    return estimate_full_2d(h_ls_p, coeffs)


def _spline_axis(values: np.ndarray, known: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Natural cubic spline along axis 0, real and imaginary parts separately."""
    if len(known) == 1:
        return np.repeat(values[:1], len(target), axis=0)
    out = []
    for part in (values.real, values.imag):
        cs = CubicSpline(known, part, axis=0, bc_type="natural", extrapolate=True)
        out.append(cs(target))
    return out[0] + 1j * out[1]


def estimate_ls_spline(y: np.ndarray, x: np.ndarray, pat: DmrsPattern) -> np.ndarray:
    """LS at the pilots, spline along frequency per pilot symbol, then along time."""
    n, m = np.asarray(y).shape
    h_ls = ls_pilots(y, x, pat)
    tmp = _spline_axis(h_ls, pat.sc_idx.astype(float), np.arange(n, dtype=float))
    out = _spline_axis(tmp.T, pat.sym_idx.astype(float), np.arange(m, dtype=float))
    return out.T


def estimate_robust(y: np.ndarray, x: np.ndarray, pat: DmrsPattern, cfg: OfdmConfig,
                    tau_max: float, f_max: float,
                    sigma_hat_sq: float = DEFAULT_SIGMA_HAT_SQ) -> np.ndarray:
    """Robust LMMSE: uniform delay on [0, tau_max] and Doppler on [-f_max, f_max]."""
    coeffs = lmmse_coeffs(robust_correlations(tau_max, f_max, cfg, pat), sigma_hat_sq)
    return estimate_separable(ls_pilots(y, x, pat), coeffs)


def estimate_parametric(h_ls_p: np.ndarray, est: SensingEstimate, cfg: OfdmConfig,
                        pat: DmrsPattern, sigma_hat_sq: float) -> np.ndarray:
    """Parametric reconstruction on the sensed delays / Dopplers.

    Path gains are LMMSE-estimated on the Fourier dictionary sampled at the
    pilots with prior covariance ``I / L``, then the CFR is synthesised over
    the whole grid with the same dictionary.
    """
    n_paths = est.num_paths
    if n_paths == 0:
        log.warning("parametric estimator called with no sensed paths; returning zeros")
        return np.zeros(cfg.shape, dtype=complex)
    freq, time = steering(cfg, est.delays, est.dopplers)
    # column-major pilot vectorisation: row m' * N_p + n'
    f_p = (time[pat.sym_idx][:, None, :] * freq[pat.sc_idx][None, :, :]).reshape(-1, n_paths)
    h = h_ls_p.reshape(-1, order="F")
    gram = f_p.conj().T @ f_p + sigma_hat_sq * n_paths * np.eye(n_paths)
    alpha = linalg.solve(gram, f_p.conj().T @ h, assume_a="her")
    return (freq * alpha) @ time.T


class SensingAssistedEstimator:
    """Slot-by-slot sensing-assisted LMMSE with coefficient reuse.

    Parameters
    ----------
    cfg, pat, cfg_s
        Numerology, pilot lattice and sensing configuration.
    mode : {"separable", "full_2d"}
    sigma_hat_sq : float
        Ridge term added to the pilot correlation (``beta / SNR``).
    tolerance : (float, float), optional
        Explicit ``(C_F, C_T)`` applied to every path.  Defaults to the
        windowed resolution.
    """

    def __init__(self, cfg: OfdmConfig, pat: DmrsPattern, cfg_s: SensingConfig,
                 mode: str = "separable", sigma_hat_sq: float = DEFAULT_SIGMA_HAT_SQ,
                 tolerance: tuple[float, float] | None = None, k: float = 1.0):
        if mode not in ("separable", "full_2d"):
            raise ConfigurationError(f"unknown LMMSE mode {mode!r}")
        self.cfg, self.pat, self.cfg_s = cfg, pat, cfg_s
        self.mode = mode
        self.sigma_hat_sq = sigma_hat_sq
        self.tolerance = tolerance or resolutions(cfg, cfg_s)
        self.k = k
        self.record: ToleranceRecord | None = None
        self.coeffs: LmmseCoefficients | None = None
        self.updates = 0
        self._history: deque = deque(maxlen=cfg_s.slots_combined)

    def _rebuild(self, est: SensingEstimate) -> None:
        record = default_tolerance(est, self.tolerance)
        if self.mode == "separable":
            corr = build_separable(self.cfg, self.pat, est, record)
        else:
            corr = build_full_2d(self.cfg, self.pat, est, record)
        self.coeffs = lmmse_coeffs(corr, self.sigma_hat_sq, record, self.k)
        self.record = record
        self.updates += 1

    def step(self, h_ls_p: np.ndarray, sensing_ls: np.ndarray | None = None,
             estimate: SensingEstimate | None = None) -> EstimatorOutput:
        """Estimate one slot.

        ``estimate`` overrides sensing entirely (e.g. injected errors);
        otherwise ``sensing_ls`` (an ``N_p x S*M_p`` matrix) is sensed, or the
        last ``S`` slots of ``h_ls_p`` seen by this estimator.
        """
        self._history.append(h_ls_p)
        if estimate is None:
            if sensing_ls is None:
                sensing_ls = np.concatenate(list(self._history), axis=1)
            estimate = sense(sensing_ls, self.cfg, self.pat, self.cfg_s)
        if estimate.num_paths == 0:
            raise NumericalError("sensing returned no paths")
        updated = self.record is None or update_check(self.record, estimate)
        mults = 0
        if updated:
            self._rebuild(estimate)
            mults += self.coeffs.mult_count
        h_hat = apply_coeffs(h_ls_p, self.coeffs)
        mults += self.coeffs.apply_mults
        return EstimatorOutput(h_hat, updated, mults, estimate)


def run_with_update_policy(slots, estimator: SensingAssistedEstimator) -> list[EstimatorOutput]:
    """Feed a stream of per-slot LS pilot matrices through ``estimator``.

    Items are either LS matrices or ``(h_ls_p, estimate)`` pairs.
    """
    out = []
    for item in slots:
        if isinstance(item, tuple):
            out.append(estimator.step(item[0], estimate=item[1]))
        else:
            out.append(estimator.step(item))
    return out
