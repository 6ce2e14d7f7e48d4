"""RF sources, linear mixing and the closed-form metrics used to score separation.

Everything here is a pure function of its inputs.  Waveforms are real-valued,
uniformly sampled and immutable once built.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import SingularMatrixError

__all__ = [
    "WaveformBuffer", "Modulation", "BitPattern", "MixingScenario", "SymmetricMixSpec",
    "SirReport", "ConstellationMetrics", "SIR_CAP_DB", "Q_CAP", "SNR_CAP_DB",
    "samples_per_symbol", "gen_modulated", "gen_multitone_jammer", "mix",
    "symmetric_mixing", "sir_db", "condition_number", "symmetric_inverse",
    "residual_fraction", "perturbed_demix", "constellation_metrics", "rel_kurtosis",
    "match_sources", "components_through", "FIG3_BPSK_BITS", "FIG3_OOK_BITS",
]

SIR_CAP_DB = 80.0
Q_CAP = 1e4
SNR_CAP_DB = 80.0

# 16-bit repeating patterns of the two test sources
FIG3_BPSK_BITS = (0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1)
FIG3_OOK_BITS = (0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0)


@dataclass(frozen=True)
class WaveformBuffer:
    """Uniformly sampled real signal.

    Attributes
    ----------
    samples : ndarray
        Dimensionless amplitudes.  Stored read-only.
    sample_rate : float
        Samples per second (Hz).
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a nonempty 1-D array")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples ** 2)))

    def normalized(self) -> "WaveformBuffer":
        """Copy scaled to unit RMS (an all-zero waveform is returned unchanged)."""
        rms = self.rms
        if rms == 0.0:
            return self
        return WaveformBuffer(self.samples / rms, self.sample_rate)

    def scaled(self, factor: float) -> "WaveformBuffer":
        return WaveformBuffer(self.samples * factor, self.sample_rate)


def _check_compatible(waves: Sequence[WaveformBuffer]):
    if not waves:
        raise ValueError("at least one waveform required")
    rate, n = waves[0].sample_rate, len(waves[0])
    for w in waves[1:]:
        if w.sample_rate != rate or len(w) != n:
            raise ValueError("waveforms must share sample_rate and length")


class Modulation(str, enum.Enum):
    BPSK = "BPSK"
    OOK = "OOK"


@dataclass(frozen=True)
class BitPattern:
    bits: tuple
    baud_rate: float
    format: Modulation = Modulation.BPSK

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits:
            raise ValueError("bit pattern is empty")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("bits must be 0 or 1")
        if not self.baud_rate > 0:
            raise ValueError("baud_rate must be positive")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "format", Modulation(self.format))


def samples_per_symbol(sample_rate: float, baud_rate: float) -> int:
    """Integer samples per symbol; fractional ratios are rejected."""
    ratio = sample_rate / baud_rate
    sps = int(round(ratio))
    if sps < 1 or abs(ratio - sps) > 1e-9 * ratio:
        raise ValueError(
            f"sample_rate {sample_rate:g} Hz is not an integer multiple of baud {baud_rate:g} Hz")
    return sps


def gen_modulated(pattern: BitPattern, carrier_freq: float, sample_rate: float,
                  n_periods: int = 1, phase: float = 0.0) -> WaveformBuffer:
    """Rectangular-pulse BPSK/OOK on a cosine carrier, unit peak amplitude.

    BPSK sends bit 0 with phase 0 and bit 1 with phase pi; OOK keys the carrier
    on for bit 1.  The carrier runs continuously across symbol boundaries and
    the pattern is repeated ``n_periods`` times.
    """
    if carrier_freq <= pattern.baud_rate:
        raise ValueError("carrier frequency must exceed the baud rate")
    if sample_rate < 8 * carrier_freq * (1 - 1e-12):
        raise ValueError("sample_rate must be at least 8x the carrier frequency")
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    sps = samples_per_symbol(sample_rate, pattern.baud_rate)
    bits = np.repeat(np.tile(np.asarray(pattern.bits), n_periods), sps)
    if pattern.format is Modulation.BPSK:
        envelope = 1.0 - 2.0 * bits
    else:
        envelope = bits.astype(float)
    t = np.arange(bits.size) / sample_rate
    return WaveformBuffer(envelope * np.cos(2 * np.pi * carrier_freq * t + phase), sample_rate)


def gen_multitone_jammer(f_low: float, f_high: float, n_tones: int, seed: int,
                         sample_rate: float, duration: Optional[float] = None,
                         n_samples: Optional[int] = None) -> WaveformBuffer:
    """Sum of equal-amplitude random-phase tones filling ``[f_low, f_high]``.

    Tones sit at the centres of ``n_tones`` equal cells spanning the band.
    The result is normalized to unit RMS.
    """
    if n_tones < 1:
        raise ValueError("n_tones must be >= 1")
    if not 0 <= f_low < f_high:
        raise ValueError("need 0 <= f_low < f_high")
    if f_high >= sample_rate / 2:
        raise ValueError("f_high must lie below Nyquist (aliasing)")
    if n_samples is None:
        if duration is None:
            raise ValueError("give duration or n_samples")
        n_samples = int(round(duration * sample_rate))
    if n_samples < 1:
        raise ValueError("empty waveform")

    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, n_tones)
    spacing = (f_high - f_low) / n_tones
    f0 = f_low + 0.5 * spacing
    n = np.arange(n_samples)

    period = sample_rate / spacing
    m = int(round(period))
    if abs(period - m) < 1e-9 * period and m >= n_tones:
        # tone grid is a DFT grid of length m: one inverse FFT gives every tone sum
        coeffs = np.zeros(m, dtype=complex)
        coeffs[:n_tones] = np.exp(1j * phases)
        comb = np.fft.ifft(coeffs) * m
        y = np.real(np.exp(2j * np.pi * f0 * n / sample_rate) * comb[n % m])
    else:
        y = np.zeros(n_samples)
        freqs = f0 + spacing * np.arange(n_tones)
        chunk = max(1, 2_000_000 // n_samples)
        t = n / sample_rate
        for k in range(0, n_tones, chunk):
            arg = np.outer(freqs[k:k + chunk], 2 * np.pi * t) + phases[k:k + chunk, None]
            y += np.cos(arg).sum(axis=0)
    return WaveformBuffer(y, sample_rate).normalized()


@dataclass(frozen=True)
class MixingScenario:
    """Sources, mixing matrix and the per-source contributions to each mixture.

    ``components[i, j]`` holds ``H[i, j] * sources[j]`` so that interference
    power can be read off directly.
    """

    sources: tuple
    H: np.ndarray
    mixtures: tuple
    components: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def sample_rate(self) -> float:
        return self.sources[0].sample_rate

    def source_matrix(self) -> np.ndarray:
        return np.vstack([s.samples for s in self.sources])

    def mixture_matrix(self) -> np.ndarray:
        return np.vstack([m.samples for m in self.mixtures])


def mix(sources: Sequence[WaveformBuffer], H) -> MixingScenario:
    """Instantaneous linear mixing ``r = H s``."""
    H = np.array(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 2:
        raise ValueError("H must be a square matrix of size >= 2")
    if len(sources) != H.shape[1]:
        raise ValueError(f"{len(sources)} sources for a {H.shape} mixing matrix")
    _check_compatible(sources)
    S = np.vstack([s.samples for s in sources])
    components = H[:, :, None] * S[None, :, :]
    mixtures = components.sum(axis=1)
    rate = sources[0].sample_rate
    H.setflags(write=False)
    components.setflags(write=False)
    return MixingScenario(
        sources=tuple(sources),
        H=H,
        mixtures=tuple(WaveformBuffer(m, rate) for m in mixtures),
        components=components,
    )


@dataclass(frozen=True)
class SymmetricMixSpec:
    """Mixing ratio ``a`` of ``H = [[a, 1-a], [1-a, a]]``."""

    a: float

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("a must lie in [0, 1]")
        if abs(2 * self.a - 1) == 0.0:
            raise SingularMatrixError("a = 0.5 gives a singular mixing matrix")

    def matrix(self) -> np.ndarray:
        return symmetric_mixing(self.a)


def _as_ratio(spec: Union[SymmetricMixSpec, float]) -> float:
    if isinstance(spec, SymmetricMixSpec):
        return spec.a
    return SymmetricMixSpec(float(spec)).a


def symmetric_mixing(a: float) -> np.ndarray:
    return np.array([[a, 1.0 - a], [1.0 - a, a]])


def condition_number(H) -> float:
    """Ill-condition number ``||H||_F * ||H^-1||_F``."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    try:
        inv = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("mixing matrix is singular") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.matrix_rank(H) < H.shape[0]:
        raise SingularMatrixError("mixing matrix is singular")
    return float(np.linalg.norm(H, "fro") * np.linalg.norm(inv, "fro"))


def symmetric_inverse(spec: Union[SymmetricMixSpec, float]) -> np.ndarray:
    a = _as_ratio(spec)
    if a == 0:
        # a = 0 is the swap matrix, its own inverse
        return symmetric_mixing(0.0)
    off = (a - 1.0) / a
    return (a / (2 * a - 1)) * np.array([[1.0, off], [off, 1.0]])


def perturbed_demix(spec: Union[SymmetricMixSpec, float], delta: float) -> np.ndarray:
    """Inverse scaled to unit diagonal with every entry offset by the weight error."""
    a = _as_ratio(spec)
    if not 0.5 < a <= 1.0:
        raise ValueError("perturbed_demix needs a in (0.5, 1]")
    off = (a - 1.0) / a + delta
    return np.array([[1.0 + delta, off], [off, 1.0 + delta]])


def residual_fraction(a: float, delta: float) -> float:
    """Share of interference left in a recovered source, ``a d / (2a + 2a d - 1)``."""
    if not 0.5 < a <= 1.0:
        raise ValueError("a must lie in (0.5, 1]")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    denom = 2 * a + 2 * a * delta - 1
    if denom <= 0:
        raise ValueError("nonpositive denominator")
    return a * delta / denom


@dataclass(frozen=True)
class SirReport:
    per_channel: np.ndarray
    overall: float
    capped: np.ndarray
    assignment: tuple

    @property
    def any_capped(self) -> bool:
        return bool(np.any(self.capped))


def sir_db(components, cap_db: float = SIR_CAP_DB) -> SirReport:
    """Signal-to-interference ratio of every output channel.

    Parameters
    ----------
    components : array_like, shape (n_out, n_src, n_samples) or (n_out, n_src)
        Per-source contribution to each output.  A 2-D input is read as
        powers directly.
    cap_db : float
        Finite stand-in for a perfect (interference-free) channel.

    Each output is assigned the source holding the largest share of its
    power, greedily and without reuse so no two outputs claim the same source.
    """
    comp = np.asarray(components, dtype=float)
    if comp.ndim == 3:
        power = np.sum(comp ** 2, axis=2)
    elif comp.ndim == 2:
        power = comp
    else:
        raise ValueError("components must be 2-D powers or 3-D waveforms")
    n_out, n_src = power.shape
    if n_out > n_src:
        raise ValueError("more outputs than sources")
    totals = power.sum(axis=1, keepdims=True)
    share = np.divide(power, totals, out=np.zeros_like(power), where=totals > 0)

    assignment = [-1] * n_out
    free_rows, free_cols = set(range(n_out)), set(range(n_src))
    while free_rows:
        # rounding makes exact ties resolve by index, not by last-bit noise
        i, j = max(((i, j) for i in sorted(free_rows) for j in sorted(free_cols)),
                   key=lambda p: round(share[p], 12))
        assignment[i] = j
        free_rows.discard(i)
        free_cols.discard(j)

    per = np.empty(n_out)
    capped = np.zeros(n_out, dtype=bool)
    for i, j in enumerate(assignment):
        signal = power[i, j]
        interference = totals[i, 0] - signal
        if interference <= 0 or signal / max(interference, 1e-300) >= 10 ** (cap_db / 10):
            per[i], capped[i] = cap_db, True
        elif signal <= 0:
            per[i] = -cap_db
        else:
            per[i] = 10 * np.log10(signal / interference)
    return SirReport(per, float(per.mean()), capped, tuple(assignment))


def rel_kurtosis(y) -> float:
    """Absolute relative (excess) kurtosis ``|E[y^4]/var^2 - 3|`` after mean removal."""
    y = np.asarray(y, dtype=float)
    y = y - y.mean()
    var = np.mean(y ** 2)
    if var <= 0:
        raise ValueError("zero-variance signal has no kurtosis")
    return float(abs(np.mean(y ** 4) / var ** 2 - 3.0))


def match_sources(recovered, sources):
    """Greedy max-|correlation| pairing of recovered channels to sources.

    Returns ``(perm, signs, corr)`` with ``perm[i]`` the source matched to
    output ``i`` and ``corr[i]`` the absolute correlation of that pair.
    """
    R = np.atleast_2d(np.asarray(recovered, dtype=float))
    S = np.atleast_2d(np.asarray(sources, dtype=float))
    C = np.corrcoef(np.vstack([R, S]))[: len(R), len(R):]
    C = np.nan_to_num(C)
    perm = [-1] * len(R)
    rows, cols = set(range(len(R))), set(range(len(S)))
    while rows and cols:
        i, j = max(((i, j) for i in rows for j in cols), key=lambda p: abs(C[p]))
        perm[i] = j
        rows.discard(i)
        cols.discard(j)
    signs = np.array([np.sign(C[i, j]) if j >= 0 else 0.0 for i, j in enumerate(perm)])
    corr = np.array([abs(C[i, j]) if j >= 0 else 0.0 for i, j in enumerate(perm)])
    return tuple(perm), signs, corr


@dataclass(frozen=True)
class ConstellationMetrics:
    Q: float
    snr_db: float
    symbols: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    capped: bool = False


def constellation_metrics(recovered: WaveformBuffer, carrier_freq: float, baud: float,
                          bits: Optional[Sequence[int]] = None) -> ConstellationMetrics:
    """Coherent BPSK demodulation and cluster statistics.

    The waveform is mixed down with a complex carrier, integrated over each
    symbol, and rotated so the BPSK axis is real.  Symbols are split into two
    clusters by the reference ``bits`` when given (data-aided), otherwise by
    the sign of the in-phase value.

    Returns Q = |mu1 - mu0| / (s1 + s0) and
    SNR = 20 log10((|mu1 - mu0| / 2) / s_pooled) computed on the in-phase axis.
    """
    sps = samples_per_symbol(recovered.sample_rate, baud)
    n_sym = len(recovered) // sps
    if n_sym < 4:
        raise ValueError("too few symbols")
    y = recovered.samples[: n_sym * sps]
    t = np.arange(y.size) / recovered.sample_rate
    baseband = 2.0 * y * np.exp(-2j * np.pi * carrier_freq * t)
    symbols = baseband.reshape(n_sym, sps).mean(axis=1)
    # BPSK axis from the doubled-angle mean
    rotation = np.exp(-0.5j * np.angle(np.sum(symbols ** 2)))
    symbols = symbols * rotation
    inphase = symbols.real
    if bits is not None:
        ref = np.asarray(bits, dtype=int)
        labels = np.resize(ref, n_sym)
    else:
        labels = (inphase > 0).astype(int)
    a, b = inphase[labels == 0], inphase[labels == 1]
    if a.size < 2 or b.size < 2:
        raise ValueError("fewer than 2 symbols in a constellation cluster")
    sep = abs(b.mean() - a.mean())
    s0, s1 = a.std(ddof=1), b.std(ddof=1)
    pooled = np.sqrt(0.5 * (s0 ** 2 + s1 ** 2))
    capped = False
    if s0 + s1 <= 1e-12 * max(sep, 1e-300):
        Q, snr, capped = Q_CAP, SNR_CAP_DB, True
    else:
        Q = min(sep / (s0 + s1), Q_CAP)
        snr = min(20 * np.log10(0.5 * sep / pooled), SNR_CAP_DB) if sep > 0 else -SNR_CAP_DB
        capped = Q >= Q_CAP
    return ConstellationMetrics(float(Q), float(snr), symbols, labels, capped)


def components_through(weights, scenario: MixingScenario,
                       response: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """Per-source contributions to outputs ``weights @ mixtures``.

    ``response`` optionally filters each source first (a linear
    time-invariant receiver acts on every component the same way).
    """
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    G = W @ scenario.H
    S = scenario.source_matrix()
    if response is not None:
        S = np.vstack([response(s) for s in S])
    return G[:, :, None] * S[None, :, :]
