"""Monte-Carlo trials, SNR sweeps and CSV emission.

Randomness per trial comes from two streams seeded by ``(seed, trial)``:
``[seed, trial]`` draws path gains, pilots and data bits, and
``[seed, trial, 1]`` draws a unit-variance noise grid that is scaled to each
SNR.  Every SNR point of a trial therefore sees the same channel, symbols and
noise shape, and trials can run in any order or process.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..analysis import PsdSupport, complexity_model, nmse_psd, nmse_psd_high_snr, support_1d_vs_2d
from ..correlation import ToleranceRecord, robust_correlations
from ..estimators import (
    NumericalError,
    SensingAssistedEstimator,
    estimate_ls_spline,
    estimate_parametric,
    estimate_separable,
    lmmse_coeffs,
)
from ..grid import (
    ConfigurationError,
    gen_cfr,
    gen_random_paths,
    noise_variance,
    path_variances,
    qam_demodulate,
    qam_modulate,
    zf_equalize,
)
from ..sensing import (
    SensingEstimate,
    apply_window,
    bin_widths,
    periodogram,
    resolutions,
    sense,
)
from .scenario import EstimatorSpec, Scenario, path_arrays

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# Width of the rectangles standing in for point-mass paths in PSD predictions.
POINT_PATH_WIDTH_BINS = 1e-3

ENV_OUTPUT_DIR = "ISAC_OUTPUT_DIR"
ENV_THREADS = "ISAC_THREADS"


@dataclass
class TrialStats:
    """Sufficient statistics of one estimator over one or more trials."""

    nmse_sum: float = 0.0
    slots: int = 0
    bit_errors: int = 0
    bits: int = 0
    mult_count: int = 0
    updates: int = 0
    failures: int = 0
    wall_time: float = 0.0

    def add(self, other: "TrialStats") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


@dataclass
class ResultRow:
    scenario_id: str
    estimator: str
    snr_db: float
    nmse: float
    nmse_predicted: float | None
    ber: float | None
    mult_count: float
    updates_triggered: int
    trials: int
    failures: int
    wall_time: float
    schema_version: int = field(default=SCHEMA_VERSION)


CSV_COLUMNS = ("schema_version", "scenario_id", "estimator", "snr_db", "nmse", "nmse_predicted",
               "ber", "mult_count", "updates_triggered", "trials", "failures", "wall_time")


@dataclass
class _TrialData:
    h: np.ndarray          # N x (M * total_slots) true CFR
    x: np.ndarray          # transmitted grid
    w: np.ndarray          # unit-variance noise
    bits: np.ndarray       # data bits, slot-major
    data_mask: np.ndarray  # True on data REs of one slot
    paths_true: SensingEstimate


def _draw_trial(scn: Scenario, trial_index: int) -> _TrialData:
    cfg, pat = scn.ofdm, scn.pattern
    m, n_slots = cfg.num_symbols, scn.total_slots
    rng = np.random.default_rng([scn.seed, trial_index])
    powers, delays, dopplers = path_arrays(scn.paths)
    paths = gen_random_paths(powers, delays, dopplers, rng=rng)
    h = gen_cfr(cfg, paths, num_symbols=m * n_slots)

    pilot_mask = pat.mask(cfg.shape)
    data_mask = ~pilot_mask
    k = int(math.log2(scn.modulation))
    n_data = int(data_mask.sum())
    n_pilot = int(pilot_mask.sum())
    bits = rng.integers(0, 2, size=n_slots * n_data * k)
    pilot_bits = rng.integers(0, 2, size=n_slots * n_pilot * 2)
    data_sym = qam_modulate(bits, scn.modulation).reshape(n_slots, n_data)
    pilot_sym = qam_modulate(pilot_bits, 4).reshape(n_slots, n_pilot)
    x = np.empty(h.shape, dtype=complex)
    for s in range(n_slots):
        xs = np.empty(cfg.shape, dtype=complex)
        # boolean assignment fills in C order on both sides
        xs[data_mask] = data_sym[s]
        xs[pilot_mask] = pilot_sym[s]
        x[:, s * m:(s + 1) * m] = xs

    rng_n = np.random.default_rng([scn.seed, trial_index, 1])
    w = (rng_n.standard_normal(h.shape) + 1j * rng_n.standard_normal(h.shape)) / np.sqrt(2.0)
    return _TrialData(h, x, w, bits.reshape(n_slots, -1), data_mask,
                      SensingEstimate(paths.delays, paths.dopplers))


def _shifted(est: SensingEstimate, bins: tuple[float, float], widths) -> SensingEstimate:
    return SensingEstimate(est.delays + bins[0] * widths[0], est.dopplers + bins[1] * widths[1])


def _tolerance(scn: Scenario) -> tuple[float, float] | None:
    if scn.tolerance_override is None:
        return None
    tau_bin, f_bin = bin_widths(scn.ofdm, scn.pattern, scn.sensing)
    return scn.tolerance_override[0] * tau_bin, scn.tolerance_override[1] * f_bin


def run_trial(scn: Scenario, snr_db: float, trial_index: int,
              _data: _TrialData | None = None) -> dict[str, TrialStats]:
    """Simulate one trial at one SNR; returns per-estimator statistics keyed by label.

    An estimator that raises a configuration, numerical or memory error is
    counted as a failure for that slot and the remaining estimators proceed.
    """
    cfg, pat, cs = scn.ofdm, scn.pattern, scn.sensing
    m, s_cpi = cfg.num_symbols, cs.slots_combined
    d = _data if _data is not None else _draw_trial(scn, trial_index)
    sigma_sq = noise_variance(snr_db)
    y = d.x * d.h + math.sqrt(sigma_sq) * d.w
    widths = bin_widths(cfg, pat, cs)
    tol = _tolerance(scn)

    def slot(arr, s):
        return arr[:, s * m:(s + 1) * m]

    ls = [slot(y, s)[np.ix_(pat.sc_idx, pat.sym_idx)] / slot(d.x, s)[np.ix_(pat.sc_idx, pat.sym_idx)]
          for s in range(scn.total_slots)]

    stats = {e.label: TrialStats() for e in scn.estimators}
    state: dict[str, object] = {}
    sensed_cache: dict[int, SensingEstimate] = {}

    def sensed(j):
        if j not in sensed_cache:
            sensed_cache[j] = sense(np.concatenate(ls[j:j + s_cpi], axis=1), cfg, pat, cs)
        return sensed_cache[j]

    for j in range(scn.slots):
        s_est = j + s_cpi - 1
        h_true = slot(d.h, s_est)
        y_s, x_s = slot(y, s_est), slot(d.x, s_est)
        for spec in scn.estimators:
            st = stats[spec.label]
            t0 = time.perf_counter()
            try:
                h_hat, mults, updated = _estimate(spec, scn, state, ls, j, s_est, y_s, x_s,
                                                  h_true, d, sigma_sq, widths, tol, sensed)
            except (ConfigurationError, NumericalError, MemoryError, np.linalg.LinAlgError) as e:
                log.warning("%s failed at %.1f dB, trial %d: %s", spec.label, snr_db, trial_index, e)
                st.failures += 1
                st.wall_time += time.perf_counter() - t0
                continue
            st.wall_time += time.perf_counter() - t0
            st.nmse_sum += float(np.sum(np.abs(h_true - h_hat) ** 2) / np.sum(np.abs(h_true) ** 2))
            st.slots += 1
            st.mult_count += int(mults)
            st.updates += int(updated)
            x_hat, erased = zf_equalize(y_s, h_hat)
            bits_hat = qam_demodulate(x_hat[d.data_mask], scn.modulation)
            k = int(math.log2(scn.modulation))
            ref = d.bits[s_est]
            err = bits_hat != ref
            # erased REs count as errors whatever the demapper produced
            err |= np.repeat(erased[d.data_mask], k)
            st.bit_errors += int(err.sum())
            st.bits += ref.size
    return stats


def _estimate(spec: EstimatorSpec, scn: Scenario, state: dict, ls, j, s_est, y_s, x_s,
              h_true, d: _TrialData, sigma_sq, widths, tol, sensed):
    """One estimator on one slot: returns (h_hat, mult_count, coefficients_updated)."""
    cfg, pat = scn.ofdm, scn.pattern
    sigma_hat = spec.sigma_hat_for(sigma_sq)
    name = spec.name
    if name == "perfect":
        return h_true.copy(), 0, False
    if name == "ls_spline":
        return estimate_ls_spline(y_s, x_s, pat), 0, False
    if name == "robust":
        coeffs = state.get(spec.label)
        updated = coeffs is None
        if updated:
            tau_max = float(d.paths_true.delays.max())
            f_max = float(np.abs(d.paths_true.dopplers).max())
            coeffs = lmmse_coeffs(robust_correlations(tau_max, f_max, cfg, pat), sigma_hat)
            state[spec.label] = coeffs
        mults = coeffs.apply_mults + (coeffs.mult_count if updated else 0)
        return estimate_separable(ls[s_est], coeffs), mults, updated
    if name == "parametric":
        if spec.fixed_error_bins is None:
            est = sensed(j)
        else:
            est = _shifted(d.paths_true, (spec.fixed_error_bins,) * 2, widths)
        return estimate_parametric(ls[s_est], est, cfg, pat, sigma_hat), 0, False
    # proposed estimators
    est_obj = state.get(spec.label)
    if est_obj is None:
        mode = "separable" if name == "proposed_separable" else "full_2d"
        est_obj = SensingAssistedEstimator(cfg, pat, scn.sensing, mode, sigma_hat, tol)
        state[spec.label] = est_obj
    if scn.injected_sensing_error is not None:
        out = est_obj.step(ls[s_est], estimate=_shifted(d.paths_true, scn.injected_sensing_error, widths))
    else:
        out = est_obj.step(ls[s_est], estimate=sensed(j))
    return out.h_hat, out.mult_count, out.coefficients_updated


# --- predictions -----------------------------------------------------------

def predicted_nmse(scn: Scenario, spec: EstimatorSpec, snr_db: float) -> float | None:
    """Large-grid NMSE prediction for the proposed estimators.

    The true PSD puts each path's power on a tiny rectangle; the designed PSD
    is the tolerance model built around the true parameters plus any injected
    error.  Returns ``None`` for other estimators or when the alias-free
    condition fails.
    """
    if spec.name not in ("proposed_separable", "proposed_full_2d"):
        return None
    cfg, pat, cs = scn.ofdm, scn.pattern, scn.sensing
    widths = bin_widths(cfg, pat, cs)
    powers, delays, dopplers = path_arrays(scn.paths)
    truth = SensingEstimate(delays, dopplers)
    est = _shifted(truth, scn.injected_sensing_error or (0.0, 0.0), widths)
    c_f, c_t = _tolerance(scn) or resolutions(cfg, cs)
    eps_t, eps_f = POINT_PATH_WIDTH_BINS * widths[0], POINT_PATH_WIDTH_BINS * widths[1]
    s_true = PsdSupport.from_estimate(delays, dopplers, eps_t, eps_f, pat.density,
                                      masses=path_variances(powers))
    n = est.num_paths
    if spec.name == "proposed_full_2d":
        s_hat = PsdSupport.from_estimate(est.delays, est.dopplers, c_f, c_t, pat.density,
                                         masses=np.full(n, 1.0 / n))
    else:
        # product of the two marginal mixtures
        tt, ff = np.meshgrid(est.delays, est.dopplers, indexing="ij")
        s_hat = PsdSupport.from_estimate(tt.ravel(), ff.ravel(), c_f, c_t, pat.density,
                                         masses=np.full(n * n, 1.0 / n ** 2))
    sigma_sq = noise_variance(snr_db)
    try:
        return nmse_psd(s_true, s_hat, sigma_sq, spec.sigma_hat_for(sigma_sq), cfg, pat)
    except ConfigurationError as e:
        log.warning("no prediction for %s: %s", spec.label, e)
        return None


def analyze_rows(scn: Scenario) -> list[dict]:
    """Closed-form predictions for every LMMSE-type estimator and SNR."""
    cfg, pat, cs = scn.ofdm, scn.pattern, scn.sensing
    widths = bin_widths(cfg, pat, cs)
    _, delays, dopplers = path_arrays(scn.paths)
    est = _shifted(SensingEstimate(delays, dopplers), scn.injected_sensing_error or (0.0, 0.0), widths)
    c_f, c_t = _tolerance(scn) or resolutions(cfg, cs)
    record = ToleranceRecord(est, c_f, c_t)
    area_1d, area_2d, ratio = support_1d_vs_2d(record)
    rows = []
    for spec in scn.estimators:
        if spec.name not in ("proposed_separable", "proposed_full_2d"):
            continue
        support = PsdSupport.from_tolerance(record, pat.density)
        for snr in scn.snr_grid_db:
            sigma_sq = noise_variance(snr)
            rows.append({
                "schema_version": SCHEMA_VERSION,
                "scenario_id": scn.id,
                "estimator": spec.label,
                "snr_db": snr,
                "nmse_psd": predicted_nmse(scn, spec, snr),
                "nmse_high_snr_2d": nmse_psd_high_snr(support, sigma_sq, cfg, pat),
                "area_1d": area_1d,
                "area_2d": area_2d,
                "ratio_1d_2d": ratio,
            })
    return rows


def complexity_rows(scn: Scenario, k: float = 1.0) -> list[dict]:
    cfg, pat, cs = scn.ofdm, scn.pattern, scn.sensing
    rows = []
    for mode, shared in (("separable", False), ("separable", True), ("full_2d", False)):
        for update in (True, False):
            c = complexity_model(cfg.num_subcarriers, cfg.num_symbols, pat.n_p, pat.m_p,
                                 cs.fft_size_freq, cs.fft_size_time, k, mode, update, shared)
            rows.append({"schema_version": SCHEMA_VERSION, "scenario_id": scn.id, "k": k, **c})
    return rows


# --- sweep -----------------------------------------------------------------

def _trial_all_snrs(args) -> list[dict[str, TrialStats]]:
    scn, trial_index = args
    data = _draw_trial(scn, trial_index)
    return [run_trial(scn, snr, trial_index, data) for snr in scn.snr_grid_db]


def thread_count() -> int:
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    return max(1, n)


def sweep(scn: Scenario, workers: int | None = None) -> list[ResultRow]:
    """All SNR x estimator combinations averaged over the scenario's trials.

    Per-trial statistics are summed in trial order, so the result does not
    depend on ``workers``.
    """
    workers = thread_count() if workers is None else max(1, workers)
    if not scn.estimators:
        return []
    tasks = [(scn, t) for t in range(scn.trials)]
    if workers > 1 and scn.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_trial_all_snrs, tasks))
    else:
        per_trial = [_trial_all_snrs(t) for t in tasks]

    rows = []
    for i, snr in enumerate(scn.snr_grid_db):
        for spec in scn.estimators:
            agg = TrialStats()
            for trial in per_trial:
                agg.add(trial[i][spec.label])
            nmse = agg.nmse_sum / agg.slots if agg.slots else float("nan")
            ber = agg.bit_errors / agg.bits if agg.bits else None
            rows.append(ResultRow(
                scenario_id=scn.id,
                estimator=spec.label,
                snr_db=snr,
                nmse=nmse,
                nmse_predicted=predicted_nmse(scn, spec, snr) if scn.predict else None,
                ber=ber,
                mult_count=agg.mult_count / agg.slots if agg.slots else 0.0,
                updates_triggered=agg.updates,
                trials=scn.trials,
                failures=agg.failures,
                wall_time=agg.wall_time,
            ))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.9g" % v
    return str(v)


def rows_to_csv(rows, columns) -> str:
    """CSV text with ``\\n`` line endings and 9-significant-digit floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = asdict(r) if hasattr(r, "__dataclass_fields__") else r
        w.writerow([_fmt(d.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=CSV_COLUMNS) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(rows_to_csv(rows, columns))


def rdmap_rows(scn: Scenario, snr_db: float | None = None, trial_index: int = 0) -> list[dict]:
    """Periodogram of the first sensing CPI of one trial, one row per bin."""
    cfg, pat, cs = scn.ofdm, scn.pattern, scn.sensing
    snr = scn.snr_grid_db[-1] if snr_db is None else snr_db
    d = _draw_trial(scn, trial_index)
    m = cfg.num_symbols
    y = d.x * d.h + math.sqrt(noise_variance(snr)) * d.w
    ls = []
    for s in range(cs.slots_combined):
        sel = np.ix_(pat.sc_idx, s * m + pat.sym_idx)
        ls.append(y[sel] / d.x[sel])
    rd = periodogram(apply_window(np.concatenate(ls, axis=1), cs), cs, cfg, pat)
    m_per = cs.fft_size_time
    rows = []
    for i in range(rd.values.shape[0]):
        for k in range(m_per):
            ks = k - m_per if k > m_per // 2 else k
            rows.append({"delay_bin": i, "doppler_bin": ks, "delay_s": i * rd.bin_delay,
                         "doppler_hz": ks * rd.bin_doppler, "power": rd.values[i, k]})
    return rows


def output_dir() -> str:
    path = os.environ.get(ENV_OUTPUT_DIR, ".")
    os.makedirs(path, exist_ok=True)
    return path
