"""Microring weight bank, balanced photodetector and ADC models.

Units: wavelengths in nm, heater currents in mA, heater powers in mW and
frequencies in Hz.  A ring's signed weight is ``drop - thru`` of its
Lorentzian add/drop response at the channel's laser wavelength.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConvergenceWarning
from .signals import WaveformBuffer, _check_compatible

__all__ = [
    "RingParams", "Transmission", "FidelityMode", "DitherConfig", "Perturbation",
    "PhotodetectorModel", "CommandResult", "WeightBank", "AccuracyReport", "FullRate",
    "Subsampled", "PhotonicAdder", "CHIP_RINGS", "transmission", "realized_weight",
    "command_weights", "weighted_sum", "adc_indices", "adc_sample", "accuracy_sweep",
    "effective_bits", "make_bank",
]

C_BAND = (1545.0, 1560.0)
EFFECTIVE_BITS_CAP = 24.0
MIN_DROP = 1e-3  # floor on commanded drop: caps heater power for targets near -1


@dataclass(frozen=True)
class RingParams:
    """Add/drop microring at the 25 C reference temperature."""

    resonance_wavelength: float
    quality_factor: float = 6000.0
    tuning_coeff: float = 0.25        # nm of red shift per mW of heater power
    heater_resistance: float = 500.0  # ohm

    def __post_init__(self):
        if not self.quality_factor > 0:
            raise ValueError("quality_factor must be positive")
        lo, hi = C_BAND
        if not lo <= self.resonance_wavelength <= hi:
            raise ValueError(f"resonance {self.resonance_wavelength} nm outside [{lo}, {hi}] nm")
        if not self.tuning_coeff > 0 or not self.heater_resistance > 0:
            raise ValueError("tuning_coeff and heater_resistance must be positive")

    @property
    def linewidth(self) -> float:
        """Full width at half maximum in nm."""
        return self.resonance_wavelength / self.quality_factor


# Four-ring chip, 25 C resonance peaks
CHIP_RINGS = tuple(RingParams(lam) for lam in (1549.6, 1551.3, 1552.8, 1554.0))


class Transmission(NamedTuple):
    thru: np.ndarray
    drop: np.ndarray


def transmission(ring: RingParams, wavelength, resonance_shift=0.0) -> Transmission:
    """Lossless Lorentzian add/drop response."""
    detuning = np.asarray(wavelength, dtype=float) - (ring.resonance_wavelength + resonance_shift)
    x = 2.0 * ring.quality_factor * detuning / ring.resonance_wavelength
    drop = 1.0 / (1.0 + x ** 2)
    return Transmission(1.0 - drop, drop)


@dataclass(frozen=True)
class FidelityMode:
    """How commanded weights turn into realized weights.

    ``ideal`` is exact, ``quantized`` rounds to an n-bit grid with jitter, and
    ``physical`` drives heaters against hidden device parameters, either open
    loop (``dither=False``) or with closed-loop dithering control.
    """

    kind: str = "ideal"
    bits: Optional[float] = None
    dither: bool = False

    def __post_init__(self):
        if self.kind not in ("ideal", "quantized", "physical"):
            raise ValueError(f"unknown fidelity mode {self.kind!r}")
        if self.kind == "quantized" and not (self.bits and self.bits > 0):
            raise ValueError("quantized mode needs a positive bit count")

    @classmethod
    def ideal(cls):
        return cls("ideal")

    @classmethod
    def quantized(cls, bits: float):
        return cls("quantized", float(bits))

    @classmethod
    def physical(cls, dither: bool):
        return cls("physical", dither=bool(dither))

    @classmethod
    def parse(cls, text: str) -> "FidelityMode":
        """Parse ``ideal``, ``quantized:N`` or ``physical:dither-on|dither-off``."""
        name, _, arg = text.strip().lower().partition(":")
        if name == "ideal" and not arg:
            return cls.ideal()
        if name == "quantized":
            try:
                return cls.quantized(float(arg))
            except ValueError:
                raise ValueError(f"bad bit count in mode {text!r}") from None
        if name == "physical" and arg in ("dither-on", "dither-off"):
            return cls.physical(arg == "dither-on")
        raise ValueError(f"unrecognized fidelity mode {text!r}")

    def __str__(self):
        if self.kind == "quantized":
            return f"quantized:{self.bits:g}"
        if self.kind == "physical":
            return "physical:dither-on" if self.dither else "physical:dither-off"
        return "ideal"

    @property
    def step(self) -> float:
        """Quantization grid step ``2 * 2**-bits`` (also the worst-case error)."""
        return 2.0 * 2.0 ** -self.bits


@dataclass(frozen=True)
class DitherConfig:
    """Closed-loop weight control.

    The loop reads the realized weight through the dither probe, then
    re-targets the nominal inverse model by a damped correction until every
    ring is within ``weight_tolerance``.
    """

    weight_tolerance: float = 0.0075
    iterations_max: int = 50
    gain: float = 0.6
    probe_noise: float = 0.0

    def __post_init__(self):
        if not self.weight_tolerance > 0:
            raise ValueError("weight_tolerance must be positive")
        if self.iterations_max < 1:
            raise ValueError("iterations_max must be >= 1")
        if not 0 < self.gain <= 1:
            raise ValueError("gain must lie in (0, 1]")


@dataclass(frozen=True)
class Perturbation:
    """Statistics of the hidden (true) device parameters.

    Resonances deviate from nominal by a zero-mean Gaussian offset; the true
    nearest-neighbour thermal crosstalk deviates from the nominal value the
    controller assumes by a Gaussian relative error.
    """

    resonance_sigma_nm: float = 0.002
    crosstalk_nominal: float = 0.05
    crosstalk_rel_sigma: float = 0.03


@dataclass(frozen=True)
class PhotodetectorModel:
    """Balanced photodetector with a Butterworth-type magnitude rolloff."""

    bandwidth_3db: float = 20e9
    filter_order: int = 2

    def __post_init__(self):
        if not self.bandwidth_3db > 0:
            raise ValueError("bandwidth_3db must be positive")
        if self.filter_order < 1:
            raise ValueError("filter_order must be >= 1")

    def gain(self, freq) -> np.ndarray:
        ratio = np.abs(np.asarray(freq, dtype=float)) / self.bandwidth_3db
        return 1.0 / np.sqrt(1.0 + ratio ** (2 * self.filter_order))

    def apply(self, samples, sample_rate: float) -> np.ndarray:
        """Zero-phase filtering by frequency-domain multiplication (circular)."""
        samples = np.asarray(samples, dtype=float)
        spectrum = np.fft.rfft(samples, axis=-1)
        freqs = np.fft.rfftfreq(samples.shape[-1], d=1.0 / sample_rate)
        return np.fft.irfft(spectrum * self.gain(freqs), n=samples.shape[-1], axis=-1)


@dataclass
class CommandResult:
    realized: np.ndarray
    converged: bool = True
    iterations: int = 0
    max_error: float = 0.0


class WeightBank:
    """Mutable state of an N-ring weight bank.

    Parameters
    ----------
    rings : sequence of RingParams
        Nominal ring parameters, one per channel.
    laser_wavelengths : sequence of float
        Carrier wavelength of each channel (nm).
    crosstalk : ndarray, optional
        Nominal thermal crosstalk, ``crosstalk[i, j]`` mW felt by ring i per mW
        dissipated in heater j (zero diagonal).
    true_rings, true_crosstalk : optional
        Hidden device parameters; default to the nominal ones.
    mode : FidelityMode
    dither : DitherConfig
    max_current : float
        Heater driver full scale (mA).
    dac_bits : int or None
        Resolution of the current DAC.
    seed : int
        Seeds the quantization jitter and probe noise.

    A bank is not thread safe: confine each instance to one caller.
    """

    def __init__(self, rings: Sequence[RingParams], laser_wavelengths: Sequence[float],
                 crosstalk=None, true_rings=None, true_crosstalk=None,
                 mode: FidelityMode = FidelityMode(), dither: DitherConfig = DitherConfig(),
                 max_current: float = 8.0, dac_bits: Optional[int] = 16, seed: int = 0):
        self.rings = tuple(rings)
        n = len(self.rings)
        if n < 1 or len(laser_wavelengths) != n:
            raise ValueError("need one laser wavelength per ring")
        self.laser_wavelengths = np.asarray(laser_wavelengths, dtype=float)
        self.crosstalk = np.zeros((n, n)) if crosstalk is None else np.asarray(crosstalk, float)
        self.true_rings = self.rings if true_rings is None else tuple(true_rings)
        self.true_crosstalk = (self.crosstalk.copy() if true_crosstalk is None
                               else np.asarray(true_crosstalk, float))
        for m in (self.crosstalk, self.true_crosstalk):
            if m.shape != (n, n):
                raise ValueError("crosstalk must be ring x ring")
        self.mode = mode
        self.dither = dither
        self.max_current = float(max_current)
        self.dac_bits = dac_bits
        self.heater_currents = np.zeros(n)
        self.realized = np.zeros(n)
        self.n_commands = 0
        self._rng = np.random.default_rng(seed)
        if mode.kind == "physical":
            self.realized = self._true_weights(self.heater_currents)

    @property
    def n_rings(self) -> int:
        return len(self.rings)

    # -- device physics -------------------------------------------------
    def _shifts(self, currents, rings, crosstalk):
        own = np.array([r.heater_resistance for r in rings]) * np.asarray(currents) ** 2 * 1e-3
        total = own + crosstalk @ own
        return np.array([r.tuning_coeff for r in rings]) * total

    def _weights(self, currents, rings, crosstalk):
        shifts = self._shifts(currents, rings, crosstalk)
        out = np.empty(len(rings))
        for i, ring in enumerate(rings):
            t = transmission(ring, self.laser_wavelengths[i], shifts[i])
            out[i] = t.drop - t.thru
        return np.clip(out, -1.0, 1.0)

    def _true_weights(self, currents):
        return self._weights(currents, self.true_rings, self.true_crosstalk)

    def nominal_weights(self, currents) -> np.ndarray:
        return self._weights(currents, self.rings, self.crosstalk)

    def realized_weight(self, ring_index: int) -> float:
        """Weight ring ``ring_index`` applies now, from the hidden parameters."""
        if not 0 <= ring_index < self.n_rings:
            raise IndexError(ring_index)
        if self.mode.kind != "physical":
            return float(self.realized[ring_index])
        return float(self._true_weights(self.heater_currents)[ring_index])

    def nominal_currents(self, targets) -> np.ndarray:
        """Open-loop heater currents for ``targets`` from the nominal model.

        Rings sit blue of their lasers when cold; heating carries the
        resonance through the laser (weight +1) and beyond, so the red side
        of the Lorentzian spans the whole ``[-1, 1]`` range monotonically.
        """
        t = np.clip(np.asarray(targets, dtype=float), -1.0, 1.0)
        drop = np.maximum(0.5 * (t + 1.0), MIN_DROP)
        lam0 = np.array([r.resonance_wavelength for r in self.rings])
        q = np.array([r.quality_factor for r in self.rings])
        detune = (lam0 / (2 * q)) * np.sqrt(1.0 / drop - 1.0)
        shifts = (self.laser_wavelengths - lam0) + detune
        k = np.array([r.tuning_coeff for r in self.rings])
        powers = np.linalg.solve(np.eye(self.n_rings) + self.crosstalk, shifts / k)
        powers = np.maximum(powers, 0.0)
        resistance = np.array([r.heater_resistance for r in self.rings])
        return self._drive(np.sqrt(powers / (resistance * 1e-3)))

    def _drive(self, currents):
        currents = np.clip(currents, 0.0, self.max_current)
        if self.dac_bits:
            lsb = self.max_current / (2 ** self.dac_bits - 1)
            currents = np.round(currents / lsb) * lsb
        return currents

    # -- actuation ------------------------------------------------------
    def command(self, targets) -> CommandResult:
        targets = np.asarray(targets, dtype=float)
        if targets.shape != (self.n_rings,):
            raise ValueError(f"expected {self.n_rings} weights, got shape {targets.shape}")
        if np.any(np.abs(targets) > 1.0 + 1e-12):
            raise ValueError("target weights must lie in [-1, 1]")
        targets = np.clip(targets, -1.0, 1.0)
        self.n_commands += 1
        mode = self.mode
        if mode.kind == "ideal":
            result = CommandResult(targets.copy())
        elif mode.kind == "quantized":
            step = mode.step
            grid = np.round((targets + 1.0) / step) * step - 1.0
            jitter = self._rng.uniform(-0.5 * step, 0.5 * step, size=targets.shape)
            realized = np.clip(grid + jitter, -1.0, 1.0)
            result = CommandResult(realized, max_error=float(np.max(np.abs(realized - targets))))
        elif not mode.dither:
            self.heater_currents = self.nominal_currents(targets)
            realized = self._true_weights(self.heater_currents)
            result = CommandResult(realized, max_error=float(np.max(np.abs(realized - targets))))
        else:
            result = self._closed_loop(targets)
        self.realized = result.realized
        return result

    def _probe(self):
        w = self._true_weights(self.heater_currents)
        if self.dither.probe_noise:
            w = w + self._rng.normal(0.0, self.dither.probe_noise, size=w.shape)
        return w

    def _closed_loop(self, targets) -> CommandResult:
        cfg = self.dither
        virtual = targets.copy()
        self.heater_currents = self.nominal_currents(virtual)
        for it in range(1, cfg.iterations_max + 1):
            err = self._probe() - targets
            if np.max(np.abs(err)) <= cfg.weight_tolerance:
                realized = self._true_weights(self.heater_currents)
                return CommandResult(realized, True, it,
                                     float(np.max(np.abs(realized - targets))))
            # damped Newton step through the nominal inverse
            virtual = np.clip(virtual - cfg.gain * err, -1.0, 1.0)
            self.heater_currents = self.nominal_currents(virtual)
        realized = self._true_weights(self.heater_currents)
        final = float(np.max(np.abs(realized - targets)))
        warnings.warn(ConvergenceWarning(
            f"dither loop hit {cfg.iterations_max} iterations, final error {final:.3g}"),
            stacklevel=3)
        return CommandResult(realized, False, cfg.iterations_max, final)


def realized_weight(bank: WeightBank, ring_index: int) -> float:
    return bank.realized_weight(ring_index)


def command_weights(bank: WeightBank, targets) -> CommandResult:
    return bank.command(targets)


def make_bank(mode: FidelityMode = FidelityMode(), seed: int = 0,
              rings: Sequence[RingParams] = (CHIP_RINGS[0], CHIP_RINGS[3]),
              laser_offsets_nm: Sequence[float] = (0.5, 0.5),
              perturbation: Perturbation = Perturbation(),
              dither: DitherConfig = DitherConfig(), **kwargs) -> WeightBank:
    """Bank with hidden parameters drawn from ``perturbation`` using ``seed``.

    Lasers sit ``laser_offsets_nm`` red of each nominal resonance.
    """
    rings = tuple(rings)
    n = len(rings)
    rng = np.random.default_rng(seed)
    offsets = rng.normal(0.0, perturbation.resonance_sigma_nm, n)
    true_rings = tuple(replace(r, resonance_wavelength=r.resonance_wavelength + d)
                       for r, d in zip(rings, offsets))
    nominal = np.zeros((n, n))
    for i in range(n - 1):
        nominal[i, i + 1] = nominal[i + 1, i] = perturbation.crosstalk_nominal
    rel = rng.normal(0.0, perturbation.crosstalk_rel_sigma, (n, n))
    true_xt = np.clip(nominal * (1.0 + rel), 0.0, None)
    lasers = [r.resonance_wavelength + off for r, off in zip(rings, laser_offsets_nm)]
    return WeightBank(rings, lasers, crosstalk=nominal, true_rings=true_rings,
                      true_crosstalk=true_xt, mode=mode, dither=dither,
                      seed=int(rng.integers(2 ** 31)), **kwargs)


def weighted_sum(bank: WeightBank, inputs: Sequence[WaveformBuffer],
                 pd: Optional[PhotodetectorModel] = PhotodetectorModel(),
                 noise_snr_db: Optional[float] = 45.0, seed: int = 0) -> WaveformBuffer:
    """Photodetected weighted sum of the input channels at the bank's realized weights.

    White Gaussian noise is added before the photodetector at
    ``noise_snr_db`` below the mean input-channel power (``None`` disables it).
    """
    if len(inputs) != bank.n_rings:
        raise ValueError(f"{len(inputs)} inputs for a {bank.n_rings}-ring bank")
    _check_compatible(inputs)
    X = np.vstack([x.samples for x in inputs])
    y = bank.realized @ X
    if noise_snr_db is not None:
        sigma = np.sqrt(np.mean(X ** 2) * 10 ** (-noise_snr_db / 10))
        y = y + np.random.default_rng(seed).normal(0.0, sigma, y.size)
    rate = inputs[0].sample_rate
    if pd is not None:
        y = pd.apply(y, rate)
    return WaveformBuffer(y, rate)


@dataclass(frozen=True)
class FullRate:
    pass


@dataclass(frozen=True)
class Subsampled:
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must lie in (0, 1]")


def adc_indices(n_total: int, n_samples: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Sorted random sample positions, drawn without replacement."""
    if n_samples is None or n_samples >= n_total:
        return np.arange(n_total)
    if n_samples < 1:
        raise ValueError("ADC subset is empty")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_total, size=n_samples, replace=False))


def adc_sample(wave: WaveformBuffer, mode=FullRate()) -> np.ndarray:
    if isinstance(mode, FullRate):
        return wave.samples.copy()
    n = int(round(mode.ratio * len(wave)))
    if n < 1:
        raise ValueError("ADC subset is empty")
    return wave.samples[adc_indices(len(wave), n, mode.seed)]


def effective_bits(rms_error: float) -> float:
    """``log2(2 / rms)`` over the full [-1, 1] weight span."""
    if rms_error <= 0:
        return EFFECTIVE_BITS_CAP
    return float(min(np.log2(2.0 / rms_error), EFFECTIVE_BITS_CAP))


@dataclass
class AccuracyReport:
    targets: np.ndarray
    realized: np.ndarray
    converged: np.ndarray
    errors: np.ndarray = field(init=False)
    rms_error: float = field(init=False)
    effective_bits: float = field(init=False)

    def __post_init__(self):
        self.errors = self.realized - self.targets
        self.rms_error = float(np.sqrt(np.mean(self.errors ** 2)))
        self.effective_bits = effective_bits(self.rms_error)


def accuracy_sweep(bank: WeightBank, grid_step: float = 0.2,
                   mode: Optional[FidelityMode] = None) -> AccuracyReport:
    """Command every point of a uniform grid over ``[-1, 1]^N`` and record errors."""
    n_steps = 2.0 / grid_step
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError("grid_step must divide 2 evenly")
    if mode is not None:
        bank.mode = mode
    axis = np.linspace(-1.0, 1.0, int(round(n_steps)) + 1)
    targets = np.array(list(itertools.product(axis, repeat=bank.n_rings)))
    realized = np.empty_like(targets)
    converged = np.empty(len(targets), dtype=bool)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for k, t in enumerate(targets):
            res = bank.command(t)
            realized[k], converged[k] = res.realized, res.converged
    return AccuracyReport(targets, realized, converged)


class PhotonicAdder:
    """Weighted-adder handle backed by a weight bank, photodetector and ADC.

    Outputs are ``pd(sum_i w_i x_i + noise)``.  The detector is linear and
    time invariant, so the filtered channels and the filtered noise record are
    computed once and every evaluation is a dot product over the ADC subset.
    The noise realization is fixed per adder.
    """

    def __init__(self, bank: WeightBank, channels: Sequence[WaveformBuffer],
                 pd: Optional[PhotodetectorModel] = PhotodetectorModel(),
                 noise_snr_db: Optional[float] = 45.0, noise_seed: int = 0):
        if len(channels) != bank.n_rings:
            raise ValueError(f"{len(channels)} channels for a {bank.n_rings}-ring bank")
        _check_compatible(channels)
        self.bank = bank
        self.pd = pd
        self.sample_rate = channels[0].sample_rate
        X = np.vstack([c.samples for c in channels])
        noise = np.zeros(X.shape[1])
        if noise_snr_db is not None:
            sigma = np.sqrt(np.mean(X ** 2) * 10 ** (-noise_snr_db / 10))
            noise = np.random.default_rng(noise_seed).normal(0.0, sigma, X.shape[1])
        self._X = self.response(X)
        self._noise = self.response(noise)
        self._cache = {}

    @property
    def n_channels(self) -> int:
        return self._X.shape[0]

    @property
    def n_total(self) -> int:
        return self._X.shape[1]

    def response(self, samples) -> np.ndarray:
        if self.pd is None:
            return np.asarray(samples, dtype=float)
        return self.pd.apply(samples, self.sample_rate)

    def _subset(self, n_samples, seed):
        key = (n_samples, seed)
        if key not in self._cache:
            idx = adc_indices(self.n_total, n_samples, seed)
            self._cache = {key: (self._X[:, idx], self._noise[idx])}
        return self._cache[key]

    def sample(self, w, n_samples: Optional[int] = None, seed: int = 0) -> np.ndarray:
        realized = self.bank.command(w).realized
        X, noise = self._subset(n_samples, seed)
        return realized @ X + noise

    def apply(self, w):
        """Command ``w`` and return ``(realized weights, full output waveform)``."""
        realized = self.bank.command(w).realized
        return realized.copy(), WaveformBuffer(realized @ self._X + self._noise, self.sample_rate)
