"""Experiment configuration: TOML in, frozen dataclasses out.

A config file has a few top-level keys and one flat table per section::

    experiment = "ill_condition_sweep"
    seed = 0
    mode = "quantized:9"
    output_dir = "results/ill"

    [bank]
    resonance_sigma_nm = 0.002

    [ill_condition_sweep]
    points = 8

Every key is optional except ``experiment``; unknown keys or tables raise
``ConfigError``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

from ..bss import BssConfig, NelderMeadConfig
from ..photonics import (
    CHIP_RINGS,
    DitherConfig,
    FidelityMode,
    Perturbation,
    PhotodetectorModel,
    make_bank,
)

EXPERIMENTS = (
    "accuracy_sweep",
    "ill_condition_sweep",
    "bandwidth_sweep",
    "transceiver_demo",
    "oracle_check",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BankSection:
    rings: tuple = (0, 3)                 # indices into the four-ring chip
    laser_offset_nm: float = 0.5
    quality_factor: float = 6000.0
    tuning_coeff: float = 0.25
    heater_resistance: float = 500.0
    max_current: float = 8.0
    dac_bits: int = 16
    resonance_sigma_nm: float = 0.002
    crosstalk_nominal: float = 0.05
    crosstalk_rel_sigma: float = 0.03
    weight_tolerance: float = 0.0075
    dither_gain: float = 0.6
    iterations_max: int = 50

    def build(self, mode: FidelityMode, seed: int):
        rings = [dataclasses.replace(CHIP_RINGS[i], quality_factor=self.quality_factor,
                                     tuning_coeff=self.tuning_coeff,
                                     heater_resistance=self.heater_resistance)
                 for i in self.rings]
        return make_bank(
            mode, seed=seed, rings=rings,
            laser_offsets_nm=[self.laser_offset_nm] * len(rings),
            perturbation=Perturbation(self.resonance_sigma_nm, self.crosstalk_nominal,
                                      self.crosstalk_rel_sigma),
            dither=DitherConfig(self.weight_tolerance, self.iterations_max, self.dither_gain),
            max_current=self.max_current, dac_bits=self.dac_bits)


@dataclass(frozen=True)
class DetectorSection:
    bandwidth_3db: float = 20e9
    filter_order: int = 2
    noise_snr_db: Optional[float] = 45.0

    def model(self) -> PhotodetectorModel:
        return PhotodetectorModel(self.bandwidth_3db, self.filter_order)


@dataclass(frozen=True)
class BssSection:
    n_samples: int = 20_000
    tol: float = 1e-4
    max_evals: int = 500
    restarts: int = 5
    initial_step: float = 0.5

    def config(self, seed: int, n_samples: Optional[int] = None) -> BssConfig:
        n = self.n_samples if n_samples is None else n_samples
        return BssConfig(n_samples=n if n > 0 else None, sample_seed=seed, seed=seed,
                         nm=NelderMeadConfig(self.tol, self.max_evals, self.restarts,
                                             self.initial_step))


@dataclass(frozen=True)
class AccuracySection:
    grid_step: float = 0.2
    modes: tuple = ("physical:dither-on", "physical:dither-off")
    bank_seed: int = 4


@dataclass(frozen=True)
class IllConditionSection:
    a_min: float = 0.55
    a_max: float = 0.9
    points: int = 8
    modes: tuple = ("ideal", "quantized:9", "quantized:6.7")
    n_seeds: int = 3
    carrier: float = 1e9
    baud: float = 400e6
    n_periods: int = 1250
    n_samples: int = 100_000
    captures: int = 16


@dataclass(frozen=True)
class BandwidthSection:
    f_min: float = 1e9
    f_max: float = 19.2e9
    points: int = 22                      # carriers evenly spaced over [f_min, f_max]
    a: float = 0.8
    n_seeds: int = 1
    min_record: int = 400_000
    n_samples: int = 100_000
    captures: int = 16
    oversample: float = 8.0


@dataclass(frozen=True)
class TransceiverSection:
    carrier: float = 2.1e9
    baud: float = 50e6
    n_bits: int = 200
    n_periods: int = 2
    jammer_low: float = 1.7e9
    jammer_high: float = 2.5e9
    n_tones: int = 10_000
    jammer_power_ratio: float = 10.0
    h_air: tuple = ((0.9, 0.45), (0.4, 0.85))
    n_samples: int = 50_000
    spectrum_segment: int = 4096


@dataclass(frozen=True)
class OracleSection:
    points: int = 20
    kappa_max: float = 10.0
    grid_points: int = 200_000
    n_periods: int = 312
    tolerance: float = 0.05
    min_corr: float = 0.99


SECTIONS = {
    "bank": BankSection,
    "detector": DetectorSection,
    "bss": BssSection,
    "accuracy_sweep": AccuracySection,
    "ill_condition_sweep": IllConditionSection,
    "bandwidth_sweep": BandwidthSection,
    "transceiver_demo": TransceiverSection,
    "oracle_check": OracleSection,
}

TOP_LEVEL = ("experiment", "seed", "mode", "sample_rate", "output_dir", "workers")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    mode: str = "quantized:9"
    sample_rate: float = 0.0             # 0 picks the rate per carrier
    output_dir: str = "results"
    workers: int = 1
    bank: BankSection = field(default_factory=BankSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    bss: BssSection = field(default_factory=BssSection)
    accuracy_sweep: AccuracySection = field(default_factory=AccuracySection)
    ill_condition_sweep: IllConditionSection = field(default_factory=IllConditionSection)
    bandwidth_sweep: BandwidthSection = field(default_factory=BandwidthSection)
    transceiver_demo: TransceiverSection = field(default_factory=TransceiverSection)
    oracle_check: OracleSection = field(default_factory=OracleSection)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        try:
            FidelityMode.parse(self.mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self._check_frequencies()

    def _check_frequencies(self):
        if not self.sample_rate:
            return
        nyq = self.sample_rate / 2
        if self.experiment == "ill_condition_sweep":
            highest = self.ill_condition_sweep.carrier
        elif self.experiment == "transceiver_demo":
            highest = max(self.transceiver_demo.carrier, self.transceiver_demo.jammer_high)
        elif self.experiment == "bandwidth_sweep":
            highest = self.bandwidth_sweep.f_max
        else:
            return
        if highest >= nyq:
            raise ConfigError(f"{highest:g} Hz is not below Nyquist ({nyq:g} Hz)")

    @property
    def section(self):
        return getattr(self, self.experiment)

    @property
    def fidelity(self) -> FidelityMode:
        return FidelityMode.parse(self.mode)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _coerce(cls, table: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    out = {}
    for key, value in table.items():
        default = known[key].default
        if isinstance(default, tuple):
            value = _tuplify(value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        out[key] = value
    return cls(**out)


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    kwargs = {}
    for name, cls in SECTIONS.items():
        if name in data:
            table = data.pop(name)
            if not isinstance(table, dict):
                raise ConfigError(f"[{name}] must be a table")
            kwargs[name] = _coerce(cls, table, name)
    unknown = sorted(set(data) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "experiment" not in data:
        raise ConfigError("config must name an experiment")
    if "sample_rate" in data:
        data["sample_rate"] = float(data["sample_rate"])
    try:
        return ExperimentConfig(**data, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    with open(Path(path), "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)


def with_overrides(cfg: ExperimentConfig, seed=None, out=None, mode=None,
                   points=None, workers=None) -> ExperimentConfig:
    """Apply CLI flags; ``points`` resizes the active experiment's sweep grid."""
    changes = {}
    if seed is not None:
        changes["seed"] = seed
        if cfg.experiment == "accuracy_sweep":
            changes["accuracy_sweep"] = dataclasses.replace(cfg.accuracy_sweep, bank_seed=seed)
    if out is not None:
        changes["output_dir"] = str(out)
    if workers is not None:
        changes["workers"] = workers
    if mode is not None:
        FidelityMode.parse(mode)
        changes["mode"] = mode
        if cfg.experiment == "ill_condition_sweep":
            changes["ill_condition_sweep"] = dataclasses.replace(cfg.ill_condition_sweep,
                                                                 modes=(mode,))
        elif cfg.experiment == "accuracy_sweep":
            section = changes.get("accuracy_sweep", cfg.accuracy_sweep)
            changes["accuracy_sweep"] = dataclasses.replace(section, modes=(mode,))
    if points is not None:
        if points < 1:
            raise ConfigError("--points must be >= 1")
        name = cfg.experiment
        section = changes.get(name, getattr(cfg, name))
        if any(f.name == "points" for f in fields(section)):
            changes[name] = dataclasses.replace(section, points=points)
    return dataclasses.replace(cfg, **changes)
