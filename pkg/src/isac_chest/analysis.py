"""Closed-form NMSE predictors and the complexity model.

* :func:`nmse_theorem1` gives the pilot-RE NMSE of an LMMSE filter built from a
  constructed correlation ``R_hat`` when the channel really has correlation
  ``R``.  :func:`nmse_lower_bound` is its value at ``R_hat = R``.
* :func:`nmse_psd` is the large-grid counterpart expressed through joint
  delay-Doppler power spectral densities that are piecewise constant over
  axis-aligned rectangles.
* :func:`complexity_model` counts complex multiplications per stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .correlation import CorrSet, ToleranceRecord, merge_intervals
from .grid import ConfigurationError, DmrsPattern, OfdmConfig

Rect = tuple[float, float, float, float]  # (tau_lo, tau_hi, f_lo, f_hi)

_EIG_CLAMP = 1e-9


def _hermitian(a, name: str, rtol: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"{name} must be a square matrix")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.conj().T).max() > rtol * scale:
        raise ConfigurationError(f"{name} is not Hermitian")
    return 0.5 * (a + a.conj().T)


def _eigh_desc(a: np.ndarray):
    w, v = linalg.eigh(a)
    if w.min() < -_EIG_CLAMP * max(1.0, abs(w).max()):
        raise ConfigurationError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return w[::-1], v[:, ::-1]


@dataclass(frozen=True)
class SpectralDecomp:
    singular_values_est: np.ndarray   # gamma_i of R_hat, descending
    singular_values_true: np.ndarray  # mu_i of R, descending
    wiener_gains: np.ndarray          # lambda_i = gamma_i / (gamma_i + sigma_hat^2)
    b: np.ndarray                     # diag(V^H R V)
    overlap: np.ndarray = field(repr=False)  # |v_i^H u_j|^2


def spectral_decomp(r_hat, r_true, sigma_hat_sq: float) -> SpectralDecomp:
    r_hat = _hermitian(r_hat, "R_hat")
    r_true = _hermitian(r_true, "R_true")
    if r_hat.shape != r_true.shape:
        raise ConfigurationError("R_hat and R_true differ in size")
    if not sigma_hat_sq > 0:
        raise ConfigurationError("sigma_hat_sq must be strictly positive")
    gamma, v = _eigh_desc(r_hat)
    mu, u = _eigh_desc(r_true)
    overlap = np.abs(v.conj().T @ u) ** 2
    b = overlap @ mu
    return SpectralDecomp(gamma, mu, gamma / (gamma + sigma_hat_sq), b, overlap)


def _nmse_from(lam: np.ndarray, b: np.ndarray, sigma_sq: float) -> float:
    return float(np.mean((1.0 - lam) ** 2 * b + sigma_sq * lam ** 2))


def nmse_theorem1(r_hat_pp, r_true_pp, sigma_hat_sq: float, sigma_sq: float) -> float:
    """Pilot-RE NMSE of the LMMSE filter built from ``r_hat_pp``.

    ``(1/n) sum_i [(1 - lambda_i)^2 b_i + sigma^2 lambda_i^2]`` with
    ``lambda_i`` the Wiener gains of ``r_hat_pp``'s eigenvalues and ``b_i``
    the energy of the true correlation along its eigenvectors.
    """
    sd = spectral_decomp(r_hat_pp, r_true_pp, sigma_hat_sq)
    return _nmse_from(sd.wiener_gains, sd.b, sigma_sq)


def nmse_lower_bound(r_true_pp, sigma_hat_sq: float, sigma_sq: float) -> float:
    """:func:`nmse_theorem1` at ``R_hat = R``, its minimum over eigenbases."""
    if not sigma_hat_sq > 0:
        raise ConfigurationError("sigma_hat_sq must be strictly positive")
    mu, _ = _eigh_desc(_hermitian(r_true_pp, "R_true"))
    return _nmse_from(mu / (mu + sigma_hat_sq), mu, sigma_sq)


def projection_energy(r_hat_pp, r_true_pp) -> tuple[np.ndarray, np.ndarray]:
    """``b_i = sum_j mu_j |v_i^H u_j|^2`` and the overlap matrix ``|v_i^H u_j|^2``."""
    r_hat = _hermitian(r_hat_pp, "R_hat")
    r_true = _hermitian(r_true_pp, "R_true")
    _, v = _eigh_desc(r_hat)
    mu, u = _eigh_desc(r_true)
    overlap = np.abs(v.conj().T @ u) ** 2
    b = overlap @ mu
    total = float(np.trace(r_true).real)
    if not math.isclose(b.sum(), total, rel_tol=1e-9, abs_tol=1e-9):
        raise ArithmeticError(f"projection energy {b.sum()} != trace {total}")
    return b, overlap


# --- PSD supports ----------------------------------------------------------

@dataclass(frozen=True)
class PsdSupport:
    """Piecewise-constant joint delay-Doppler PSD over axis-aligned rectangles.

    With ``masses=None`` the density is ``1 / |D|`` on the union ``D`` of the
    rectangles (overlaps are counted once).  Otherwise rectangle ``i`` carries
    probability mass ``masses[i]`` spread uniformly over it, and overlapping
    rectangles add.
    """

    cells: tuple[Rect, ...]
    pilot_density: float = 1.0
    masses: tuple[float, ...] | None = None

    def __post_init__(self):
        cells = tuple(tuple(float(x) for x in c) for c in self.cells)
        if not cells:
            raise ConfigurationError("PSD support needs at least one rectangle")
        for c in cells:
            if len(c) != 4 or not (c[1] > c[0] and c[3] > c[2]):
                raise ConfigurationError(f"degenerate rectangle {c}")
        object.__setattr__(self, "cells", cells)
        if self.masses is not None:
            m = tuple(float(x) for x in self.masses)
            if len(m) != len(cells) or min(m) < 0 or sum(m) <= 0:
                raise ConfigurationError("masses must be non-negative, one per rectangle")
            s = sum(m)
            object.__setattr__(self, "masses", tuple(x / s for x in m))

    @classmethod
    def from_estimate(cls, tau, fd, c_f, c_t, pilot_density: float = 1.0,
                      masses=None) -> "PsdSupport":
        tau, fd = np.atleast_1d(tau), np.atleast_1d(fd)
        c_f = np.broadcast_to(c_f, tau.shape)
        c_t = np.broadcast_to(c_t, tau.shape)
        cells = [(t - a / 2, t + a / 2, f - b / 2, f + b / 2)
                 for t, f, a, b in zip(tau, fd, c_f, c_t)]
        return cls(tuple(cells), pilot_density, None if masses is None else tuple(masses))

    @classmethod
    def from_tolerance(cls, tol: ToleranceRecord, pilot_density: float = 1.0) -> "PsdSupport":
        return cls.from_estimate(tol.estimate.delays, tol.estimate.dopplers,
                                 tol.c_f, tol.c_t, pilot_density)

    @property
    def total_area(self) -> float:
        """Area of the union of the rectangles (s * Hz)."""
        _, _, area, dens = _refine([self])
        return float(area[dens[0] > 0].sum())

    def bounds(self) -> Rect:
        c = np.array(self.cells)
        return c[:, 0].min(), c[:, 1].max(), c[:, 2].min(), c[:, 3].max()


def _refine(supports) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[np.ndarray]]:
    """Common rectangle refinement of several supports.

    Returns tau edges, Doppler edges, per-cell areas and, per support, the
    density on each refined cell (flattened, tau-major).
    """
    t_edges = np.unique([x for s in supports for c in s.cells for x in c[:2]])
    f_edges = np.unique([x for s in supports for c in s.cells for x in c[2:]])
    t_mid = 0.5 * (t_edges[1:] + t_edges[:-1])
    f_mid = 0.5 * (f_edges[1:] + f_edges[:-1])
    area = np.outer(np.diff(t_edges), np.diff(f_edges)).ravel()
    dens = []
    for s in supports:
        d = np.zeros((len(t_mid), len(f_mid)))
        for i, (a, b, c, e) in enumerate(s.cells):
            inside = np.outer((t_mid > a) & (t_mid < b), (f_mid > c) & (f_mid < e))
            if s.masses is None:
                d[inside] = 1.0
            else:
                d[inside] += s.masses[i] / ((b - a) * (e - c))
        d = d.ravel()
        if s.masses is None:
            d = d / area[d > 0].sum()
        dens.append(d)
    return t_edges, f_edges, area, dens


def check_alias_free(support: PsdSupport, cfg: OfdmConfig, pat: DmrsPattern) -> None:
    t_lo, t_hi, f_lo, f_hi = support.bounds()
    tau_max = max(abs(t_lo), abs(t_hi))
    f_max = max(abs(f_lo), abs(f_hi))
    a = tau_max * pat.sc_interval * cfg.subcarrier_spacing
    b = f_max * pat.sym_interval * cfg.symbol_duration
    if not (a < 0.5 and b < 0.5):
        raise ConfigurationError(
            f"alias-free condition violated: tau_max*d_sc*df = {a:.4f}, "
            f"fd_max*d_sym*To = {b:.4f} (both must be < 0.5)"
        )


def nmse_psd_terms(s_true: PsdSupport, s_hat: PsdSupport, sigma_sq: float,
                   sigma_hat_sq: float, cfg: OfdmConfig, pat: DmrsPattern) -> tuple[float, float]:
    """The two parts of :func:`nmse_psd`: a mismatch term and a matched term.

    With ``P = S / (df To)`` the densities in normalised (cycles per RE)
    coordinates, ``rho = d_sc * d_sym`` and ``D = P_hat / rho + sigma_hat^2``:

        mismatch = integral of sigma_hat^2 (sigma_hat^2 P - sigma^2 P_hat) / D^2
        matched  = integral of sigma^2 P_hat / D

    The mismatch term vanishes identically when ``S_hat = S`` and
    ``sigma_hat^2 = sigma^2``.  Both densities are piecewise constant, so the
    integrals are finite sums over the common rectangle refinement.
    """
    if sigma_sq < 0 or not sigma_hat_sq > 0:
        raise ConfigurationError("need sigma^2 >= 0 and sigma_hat^2 > 0")
    for s in (s_true, s_hat):
        check_alias_free(s, cfg, pat)
    rho = float(pat.density)
    scale = cfg.subcarrier_spacing * cfg.symbol_duration
    _, _, area, (d_true, d_hat) = _refine([s_true, s_hat])
    p, p_hat = d_true / scale, d_hat / scale
    den = p_hat / rho + sigma_hat_sq
    w = area * scale
    mismatch = np.sum(sigma_hat_sq * (sigma_hat_sq * p - sigma_sq * p_hat) / den ** 2 * w)
    matched = np.sum(sigma_sq * p_hat / den * w)
    return float(mismatch), float(matched)


def nmse_psd(s_true: PsdSupport, s_hat: PsdSupport, sigma_sq: float,
             sigma_hat_sq: float, cfg: OfdmConfig, pat: DmrsPattern) -> float:
    """Large-grid NMSE of the LMMSE filter designed for ``s_hat`` on channel ``s_true``.

    Integral of the error density
    ``(sigma_hat^4 P + sigma^2 P_hat^2 / rho) / (P_hat / rho + sigma_hat^2)^2``;
    see :func:`nmse_psd_terms`.
    """
    return sum(nmse_psd_terms(s_true, s_hat, sigma_sq, sigma_hat_sq, cfg, pat))


def nmse_psd_high_snr(support: PsdSupport, sigma_sq: float, cfg: OfdmConfig,
                      pat: DmrsPattern) -> float:
    """High-SNR matched limit ``sigma^2 rho |D| / (N M)`` with ``|D|`` in RE-grid units."""
    d_cells = (support.total_area * cfg.num_subcarriers * cfg.subcarrier_spacing
               * cfg.num_symbols * cfg.symbol_duration)
    return sigma_sq * pat.density * d_cells / (cfg.num_subcarriers * cfg.num_symbols)


def support_1d_vs_2d(tol: ToleranceRecord, est=None) -> tuple[float, float, float]:
    """Areas of the separable and joint supports and their ratio.

    ``D_2D`` is the union of the per-path rectangles; ``D_1D`` is the product
    of the delay-interval union and the Doppler-interval union.
    """
    if est is not None and est is not tol.estimate:
        tol = ToleranceRecord(est, tol.c_f, tol.c_t)
    area_1d = (sum(b - a for a, b in tol.delay_set)
               * sum(b - a for a, b in tol.doppler_set))
    area_2d = PsdSupport.from_tolerance(tol).total_area
    return area_1d, area_2d, area_1d / area_2d


def separable_support(tol: ToleranceRecord, pilot_density: float = 1.0) -> PsdSupport:
    """``D_1D`` as a uniform PSD support: all delay-set x Doppler-set products."""
    cells = [(a, b, c, d) for a, b in merge_intervals(tol.delay_set)
             for c, d in merge_intervals(tol.doppler_set)]
    return PsdSupport(tuple(cells), pilot_density)


# --- full-grid MSE ---------------------------------------------------------

def mse_matrix_full(w, r_hh, r_hhp, r_pp, sigma_sq: float) -> float:
    """NMSE ``trace(M) / (N M)`` of ``h_hat = W h_p_ls``.

    ``M = R_hh - R_hhp W^H - W R_hhp^H + W (R_pp + sigma^2 I) W^H``.  Only the
    trace is formed, so ``R_hh`` may be given as its diagonal.
    """
    w = np.asarray(w)
    r_hhp = np.asarray(r_hhp)
    r_pp = np.asarray(r_pp)
    r_hh = np.asarray(r_hh)
    n_out, n_in = w.shape
    if r_hhp.shape != (n_out, n_in) or r_pp.shape != (n_in, n_in):
        raise ConfigurationError("dimension mismatch between W and the correlation matrices")
    diag = np.diag(r_hh) if r_hh.ndim == 2 else r_hh
    if diag.shape != (n_out,):
        raise ConfigurationError("R_hh does not match W's output size")
    tr = (diag.real.sum()
          - 2.0 * np.sum(r_hhp * w.conj()).real
          + np.sum((w @ (r_pp + sigma_sq * np.eye(n_in))) * w.conj()).real)
    return float(tr / n_out)


def nmse_separable_paths(w_f, w_t, freq_cross, freq_pilot, time_cross, time_pilot,
                         weights, sigma_sq: float) -> float:
    """Exact full-grid NMSE of a separable filter on a sum-of-Kronecker channel.

    The true correlations are ``sum_l w_l kron(T_l, F_l)``; factor ``l`` of
    each ``*_cross`` / ``*_pilot`` argument is indexed on the last axis.  Each
    path's RE variance is taken as ``w_l`` (unit-diagonal factors).
    """
    w_f, w_t = np.asarray(w_f), np.asarray(w_t)
    n, m = w_f.shape[0], w_t.shape[0]
    weights = np.asarray(weights, dtype=float)
    cross = 0.0
    quad = 0.0
    for l, wl in enumerate(weights):
        cross += wl * (np.sum(freq_cross[..., l] * w_f.conj())
                       * np.sum(time_cross[..., l] * w_t.conj())).real
        quad += wl * (np.sum((w_f @ freq_pilot[..., l]) * w_f.conj())
                      * np.sum((w_t @ time_pilot[..., l]) * w_t.conj())).real
    noise = sigma_sq * np.sum(np.abs(w_f) ** 2) * np.sum(np.abs(w_t) ** 2)
    return float((weights.sum() * n * m - 2 * cross + quad + noise) / (n * m))


def nmse_kronecker(true: CorrSet, hat: CorrSet, sigma_hat_sq: float, sigma_sq: float) -> float:
    """Exact full-grid NMSE of the 2D filter built from ``hat`` on channel ``true``.

    Both correlations must be single Kronecker products ``kron(T, F)`` with
    unit-diagonal factors (one path each), given through their separable
    matrices.  Everything is evaluated in the eigenbasis of ``hat``'s pilot
    factors, so no ``NM``-sized matrix is formed.
    """
    g_f, v_f = linalg.eigh(hat.freq_pilot)
    g_t, v_t = linalg.eigh(hat.time_pilot)
    g = 1.0 / (np.outer(g_f, g_t) + sigma_hat_sq)
    a_f, a_t = hat.freq_cross @ v_f, hat.time_cross @ v_t
    cross_f = np.einsum("ij,ij->j", a_f.conj(), true.freq_cross @ v_f)
    cross_t = np.einsum("ij,ij->j", a_t.conj(), true.time_cross @ v_t)
    tr_cross = np.sum(g * np.outer(cross_f, cross_t)).real
    q_f, q_t = a_f.conj().T @ a_f, a_t.conj().T @ a_t
    x_f = (v_f.conj().T @ true.freq_pilot @ v_f) * q_f.T
    x_t = (v_t.conj().T @ true.time_pilot @ v_t) * q_t.T
    quad = (np.sum((g @ x_t @ g.T) * x_f).real
            + sigma_sq * np.sum(g ** 2 * np.outer(np.diag(q_f).real, np.diag(q_t).real)))
    nm = a_f.shape[0] * a_t.shape[0]
    return float((nm - 2.0 * tr_cross + quad) / nm)


# --- complexity ------------------------------------------------------------

def complexity_model(n: int, m: int, n_p: int, m_p: int, n_per: int = 1, m_per: int = 1,
                     k: float = 1.0, mode: str = "separable", update: bool = True,
                     shared_filters: bool = False) -> dict:
    """Complex-multiplication counts per processing stage.

    ``build`` and ``apply`` follow the per-pilot-symbol / per-subcarrier
    accounting (separable) or the dense-matrix accounting (full 2D).  The
    per-symbol accounting charges one frequency-filter inverse for each of
    the ``M_p`` pilot symbols and one time-filter inverse for each of the
    ``N`` subcarriers; ``shared_filters=True`` charges each 1D filter once,
    which is what :func:`~isac_chest.estimators.lmmse_coeffs` does because
    the constructed correlation is the same for every symbol / subcarrier.
    ``sensing`` counts the window plus ``N_per M_per log2(N_per M_per)`` for
    the 2D FFT.  ``total`` is ``sensing + apply`` plus ``build`` when
    ``update`` is set.
    """
    if mode == "separable":
        if shared_filters:
            build = k * n_p ** 3 + n * n_p ** 2 + k * m_p ** 3 + m * m_p ** 2
        else:
            build = m_p * (k * n_p ** 3 + n * n_p ** 2) + n * (k * m_p ** 3 + m * m_p ** 2)
        apply = m_p * n * n_p + n * m * m_p
    elif mode == "full_2d":
        npm = n_p * m_p
        build = k * npm ** 3 + n * m * npm ** 2
        apply = n * m * npm
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    fft_size = n_per * m_per
    sensing = n_p * m_p + (fft_size * math.log2(fft_size) if fft_size > 1 else 0.0)
    build = build if update else 0
    return {
        "mode": mode,
        "accounting": "shared" if (shared_filters and mode == "separable") else "per_symbol",
        "update": update,
        "build": build,
        "apply": apply,
        "sensing": sensing,
        "total": build + apply + sensing,
        "estimation": build + apply,
    }
