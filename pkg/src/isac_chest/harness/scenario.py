"""Scenario files, built-in presets and scale overrides.

A scenario is a YAML mapping.  Every key below is optional except where
noted; unknown keys anywhere are rejected.

.. code-block:: yaml

    id: three_path_demo            # used in CSV rows and output file names
    ofdm:
      subcarrier_spacing: 120.0e3  # Hz
      symbol_duration: 8.9e-6      # s, CP included
      num_subcarriers: 256
      num_symbols: 56
      carrier_freq: 28.0e9
    dmrs: {sc_interval: 8, sym_interval: 8}
    sensing:
      fft_size_freq: 256
      fft_size_time: 256
      slots_combined: 10           # S, slots per sensing CPI
      window: hamming              # hamming | hanning | rectangular
      peak_rel_threshold_db: -25
      peak_exclusion: [8, 7]       # optional, bins (freq, time)
    paths: three_path              # preset name, or
    # paths: {powers_db: [...], delays: [...], dopplers: [...]}   (s, Hz)
    estimators:                    # names or mappings with parameters
      - proposed_separable
      - {name: robust, sigma_hat_sq: 1.0e-5}
      - {name: parametric, fixed_error_bins: 0.1}
    snr_grid_db: [0, 10, 20, 30]
    trials: 50
    seed: 1
    slots: 1                       # estimated slots per trial
    modulation: 4                  # data QAM order
    injected_sensing_error: {delay_bins: 5, doppler_bins: 5}
    tolerance_override: {delay_bins: 10, doppler_bins: 10}
    predict: false                 # add closed-form nmse_predicted

Estimator names: ``proposed_separable``, ``proposed_full_2d``, ``robust``,
``ls_spline``, ``parametric``, ``perfect``.  Estimator parameters:
``label`` (CSV name), ``sigma_hat_sq`` (float, or ``matched`` to use the
true noise variance; defaults to 1e-5, and to ``matched`` for
``parametric``), and for ``parametric`` ``fixed_error_bins`` (``null`` to
use the periodogram estimates instead of true parameters plus an offset).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..estimators import DEFAULT_SIGMA_HAT_SQ
from ..grid import SUPPORTED_QAM, ConfigurationError, DmrsPattern, OfdmConfig, dmrs_pattern
from ..sensing import SensingConfig

ESTIMATOR_KINDS = (
    "proposed_separable", "proposed_full_2d", "robust", "ls_spline", "parametric", "perfect",
)

PRESET_PATHS = {
    "three_path": {
        "powers_db": [0.0, -5.0, -8.0],
        "delays": [100e-9, 200e-9, 400e-9],
        "dopplers": [0.0, -1.87e3, 3.73e3],
    },
    "seven_path": {
        "powers_db": [0.0, -1.2, -2.2, -3.0, -3.2, -3.4, -4.0],
        "delays": [0.0, 251e-9, 90e-9, 311e-9, 176e-9, 312e-9, 181e-9],
        "dopplers": [0.0, 1.9e3, -3.7e3, 4.7e3, -5.6e3, 4.5e3, -1.9e3],
    },
}

# (num_subcarriers, fft_size_freq, fft_size_time)
SCALES = {"small": (256, 256, 256), "full": (1584, 1024, 1024)}


@dataclass(frozen=True)
class PathSpec:
    powers_db: tuple[float, ...]
    delays: tuple[float, ...]
    dopplers: tuple[float, ...]
    name: str | None = None

    def __post_init__(self):
        if not (len(self.powers_db) == len(self.delays) == len(self.dopplers)) or not self.delays:
            raise ConfigurationError("paths: powers_db, delays and dopplers must be equal-length, non-empty")
        if min(self.delays) < 0:
            raise ConfigurationError("paths: delays must be non-negative")


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    label: str
    sigma_hat_sq: float | str = DEFAULT_SIGMA_HAT_SQ
    fixed_error_bins: float | None = 0.1

    def sigma_hat_for(self, noise_var: float) -> float:
        return noise_var if self.sigma_hat_sq == "matched" else float(self.sigma_hat_sq)


@dataclass(frozen=True)
class Scenario:
    id: str
    ofdm: OfdmConfig
    sc_interval: int
    sym_interval: int
    sensing: SensingConfig
    paths: PathSpec
    estimators: tuple[EstimatorSpec, ...]
    snr_grid_db: tuple[float, ...]
    trials: int = 1
    seed: int = 0
    slots: int = 1
    modulation: int = 4
    injected_sensing_error: tuple[float, float] | None = None
    tolerance_override: tuple[float, float] | None = None
    predict: bool = False
    pattern: DmrsPattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.trials < 1 or self.slots < 1:
            raise ConfigurationError("trials and slots must be >= 1")
        if self.modulation not in SUPPORTED_QAM:
            raise ConfigurationError(f"modulation must be one of {SUPPORTED_QAM}")
        pat = dmrs_pattern(self.ofdm, self.sc_interval, self.sym_interval)
        self.sensing.validate_for(pat)
        object.__setattr__(self, "pattern", pat)

    @property
    def total_slots(self) -> int:
        """Slots synthesised per trial: one sensing CPI plus the extra estimated slots."""
        return self.sensing.slots_combined + self.slots - 1

    def with_scale(self, scale: str) -> "Scenario":
        """Swap in the subcarrier count and FFT sizes of a named scale."""
        if scale not in SCALES:
            raise ConfigurationError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
        n, n_per, m_per = SCALES[scale]
        ofdm = dataclasses.replace(self.ofdm, num_subcarriers=n)
        sensing = dataclasses.replace(self.sensing, fft_size_freq=n_per, fft_size_time=m_per,
                                      peak_exclusion=None)
        return _replace(self, ofdm=ofdm, sensing=sensing)


def _replace(scn: Scenario, **changes) -> Scenario:
    kw = {f.name: getattr(scn, f.name) for f in dataclasses.fields(scn) if f.init}
    kw.update(changes)
    return Scenario(**kw)


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{section}: expected a mapping")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigurationError(f"{section}: unknown keys {sorted(unknown)}")


def _num(v, name: str) -> float:
    # YAML 1.1 reads "120e3" as a string; accept it.
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name}: expected a number, got {v!r}") from None


def _int(v, name: str) -> int:
    f = _num(v, name)
    if f != int(f):
        raise ConfigurationError(f"{name}: expected an integer, got {v!r}")
    return int(f)


def _bins(data, name: str) -> tuple[float, float] | None:
    if data is None:
        return None
    _check_keys(name, data, ("delay_bins", "doppler_bins"))
    return (_num(data.get("delay_bins", 0.0), name), _num(data.get("doppler_bins", 0.0), name))


def _paths(data) -> PathSpec:
    if isinstance(data, str):
        if data not in PRESET_PATHS:
            raise ConfigurationError(f"paths: unknown preset {data!r}; choose from {sorted(PRESET_PATHS)}")
        p = PRESET_PATHS[data]
        return PathSpec(tuple(p["powers_db"]), tuple(p["delays"]), tuple(p["dopplers"]), data)
    _check_keys("paths", data, ("powers_db", "delays", "dopplers"))
    try:
        return PathSpec(*(tuple(_num(x, f"paths.{k}") for x in data[k])
                          for k in ("powers_db", "delays", "dopplers")))
    except KeyError as e:
        raise ConfigurationError(f"paths: missing key {e.args[0]!r}") from None


def _estimator(item) -> EstimatorSpec:
    if isinstance(item, str):
        item = {"name": item}
    _check_keys("estimators[]", item, ("name", "label", "sigma_hat_sq", "fixed_error_bins"))
    name = item.get("name")
    if name not in ESTIMATOR_KINDS:
        raise ConfigurationError(f"estimators: unknown estimator {name!r}; choose from {ESTIMATOR_KINDS}")
    # the parametric gain estimator is a noise-aware LMMSE by construction
    sh = item.get("sigma_hat_sq", "matched" if name == "parametric" else DEFAULT_SIGMA_HAT_SQ)
    if sh != "matched":
        sh = _num(sh, "sigma_hat_sq")
        if not sh > 0:
            raise ConfigurationError("sigma_hat_sq must be > 0")
    fe = item.get("fixed_error_bins", 0.1)
    fe = None if fe is None else _num(fe, "fixed_error_bins")
    return EstimatorSpec(name, str(item.get("label", name)), sh, fe)


_TOP_KEYS = ("id", "ofdm", "dmrs", "sensing", "paths", "estimators", "snr_grid_db", "trials",
             "seed", "slots", "modulation", "injected_sensing_error", "tolerance_override",
             "predict")
_OFDM_KEYS = ("subcarrier_spacing", "symbol_duration", "num_subcarriers", "num_symbols",
              "carrier_freq")
_SENSING_KEYS = ("fft_size_freq", "fft_size_time", "slots_combined", "window",
                 "peak_rel_threshold_db", "peak_exclusion")


def scenario_from_dict(data: dict, default_id: str = "scenario") -> Scenario:
    """Validate a parsed scenario mapping; defaults follow the FR2 numerology at desk scale."""
    _check_keys("scenario", data, _TOP_KEYS)
    o = data.get("ofdm", {}) or {}
    _check_keys("ofdm", o, _OFDM_KEYS)
    ofdm = OfdmConfig(
        _num(o.get("subcarrier_spacing", 120e3), "ofdm.subcarrier_spacing"),
        _num(o.get("symbol_duration", 8.9e-6), "ofdm.symbol_duration"),
        _int(o.get("num_subcarriers", 256), "ofdm.num_subcarriers"),
        _int(o.get("num_symbols", 56), "ofdm.num_symbols"),
        _num(o.get("carrier_freq", 28e9), "ofdm.carrier_freq"),
    )
    d = data.get("dmrs", {}) or {}
    _check_keys("dmrs", d, ("sc_interval", "sym_interval"))
    s = data.get("sensing", {}) or {}
    _check_keys("sensing", s, _SENSING_KEYS)
    excl = s.get("peak_exclusion")
    sensing = SensingConfig(
        _int(s.get("fft_size_freq", 256), "sensing.fft_size_freq"),
        _int(s.get("fft_size_time", 256), "sensing.fft_size_time"),
        _int(s.get("slots_combined", 10), "sensing.slots_combined"),
        str(s.get("window", "hamming")),
        _num(s.get("peak_rel_threshold_db", -25.0), "sensing.peak_rel_threshold_db"),
        None if excl is None else tuple(_int(x, "sensing.peak_exclusion") for x in excl),
    )
    if "paths" not in data:
        raise ConfigurationError("scenario: 'paths' is required")
    snrs = data.get("snr_grid_db", [30.0])
    if not isinstance(snrs, (list, tuple)) or not snrs:
        raise ConfigurationError("snr_grid_db: expected a non-empty list")
    ests = data.get("estimators", [])
    if not isinstance(ests, (list, tuple)):
        raise ConfigurationError("estimators: expected a list")
    specs = tuple(_estimator(e) for e in ests)
    labels = [e.label for e in specs]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"estimators: duplicate labels {labels}")
    return Scenario(
        id=str(data.get("id", default_id)),
        ofdm=ofdm,
        sc_interval=_int(d.get("sc_interval", 8), "dmrs.sc_interval"),
        sym_interval=_int(d.get("sym_interval", 8), "dmrs.sym_interval"),
        sensing=sensing,
        paths=_paths(data["paths"]),
        estimators=specs,
        snr_grid_db=tuple(_num(x, "snr_grid_db") for x in snrs),
        trials=_int(data.get("trials", 1), "trials"),
        seed=_int(data.get("seed", 0), "seed"),
        slots=_int(data.get("slots", 1), "slots"),
        modulation=_int(data.get("modulation", 4), "modulation"),
        injected_sensing_error=_bins(data.get("injected_sensing_error"), "injected_sensing_error"),
        tolerance_override=_bins(data.get("tolerance_override"), "tolerance_override"),
        predict=bool(data.get("predict", False)),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML: {e}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return scenario_from_dict(data, default_id=path.stem)


def preset(name: str, scale: str = "small") -> Scenario:
    """Built-in multipath scenarios with every estimator, at the given scale."""
    if name not in PRESET_PATHS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESET_PATHS)}")
    base = scenario_from_dict({
        "id": name,
        "paths": name,
        "estimators": list(ESTIMATOR_KINDS),
        "snr_grid_db": [0, 5, 10, 15, 20, 25, 30, 35, 40],
        "trials": 50,
        "seed": 1,
        "modulation": 64,
    })
    return base.with_scale(scale)


def describe_presets() -> list[dict]:
    rows = []
    for name, p in PRESET_PATHS.items():
        rows.append({
            "name": name,
            "num_paths": len(p["delays"]),
            "powers_db": " ".join(f"{x:g}" for x in p["powers_db"]),
            "delays_ns": " ".join(f"{x * 1e9:g}" for x in p["delays"]),
            "dopplers_khz": " ".join(f"{x / 1e3:g}" for x in p["dopplers"]),
        })
    return rows


def dump_scenario(scn: Scenario) -> str:
    """YAML text that :func:`load_scenario` reads back to an equal scenario."""
    data = {
        "id": scn.id,
        "ofdm": dataclasses.asdict(scn.ofdm),
        "dmrs": {"sc_interval": scn.sc_interval, "sym_interval": scn.sym_interval},
        "sensing": {k: v for k, v in dataclasses.asdict(scn.sensing).items()
                    if v is not None},
        "paths": scn.paths.name or {
            "powers_db": list(scn.paths.powers_db),
            "delays": list(scn.paths.delays),
            "dopplers": list(scn.paths.dopplers),
        },
        "estimators": [{"name": e.name, "label": e.label, "sigma_hat_sq": e.sigma_hat_sq,
                        "fixed_error_bins": e.fixed_error_bins} for e in scn.estimators],
        "snr_grid_db": list(scn.snr_grid_db),
        "trials": scn.trials,
        "seed": scn.seed,
        "slots": scn.slots,
        "modulation": scn.modulation,
        "predict": scn.predict,
    }
    if "peak_exclusion" in data["sensing"]:
        data["sensing"]["peak_exclusion"] = list(data["sensing"]["peak_exclusion"])
    for key in ("injected_sensing_error", "tolerance_override"):
        v = getattr(scn, key)
        if v is not None:
            data[key] = {"delay_bins": v[0], "doppler_bins": v[1]}
    return yaml.safe_dump(data, sort_keys=False)


def path_arrays(spec: PathSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.array(spec.powers_db), np.array(spec.delays), np.array(spec.dopplers)
