import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from photonic_bss.errors import SingularMatrixError
from photonic_bss.signals import (
    FIG3_BPSK_BITS,
    BitPattern,
    SymmetricMixSpec,
    WaveformBuffer,
    condition_number,
    constellation_metrics,
    gen_modulated,
    gen_multitone_jammer,
    match_sources,
    mix,
    perturbed_demix,
    rel_kurtosis,
    residual_fraction,
    samples_per_symbol,
    sir_db,
    symmetric_inverse,
    symmetric_mixing,
)


# -- waveforms --------------------------------------------------------------

def test_waveform_is_read_only():
    w = WaveformBuffer([1.0, 2.0], 10.0)
    with pytest.raises(ValueError):
        w.samples[0] = 5.0
    assert w.duration == pytest.approx(0.2)


@pytest.mark.parametrize("samples,rate", [([], 1.0), ([1.0], 0.0), ([[1.0]], 1.0)])
def test_waveform_rejects_bad_input(samples, rate):
    with pytest.raises(ValueError):
        WaveformBuffer(samples, rate)


def test_samples_per_symbol_rejects_fraction():
    assert samples_per_symbol(8e9, 400e6) == 20
    with pytest.raises(ValueError):
        samples_per_symbol(8e9, 300e6)


def test_bpsk_alternating_burst():
    w = gen_modulated(BitPattern(FIG3_BPSK_BITS, 400e6, "BPSK"), 1e9, 8e9)
    sym = w.samples.reshape(16, 20)
    carrier = np.cos(2 * np.pi * 1e9 * np.arange(320) / 8e9).reshape(16, 20)
    # bit 0 keeps the carrier phase, bit 1 flips it
    assert_allclose(sym[0::2], carrier[0::2], atol=1e-12)
    assert_allclose(sym[1::2], -carrier[1::2], atol=1e-12)
    assert np.max(np.abs(w.samples)) == pytest.approx(1.0)


def test_bpsk_zero_mean_with_whole_cycles_per_symbol():
    # 2.5 cycles per symbol leave a half-cycle residue; 5 cycles do not
    w = gen_modulated(BitPattern(FIG3_BPSK_BITS, 400e6, "BPSK"), 2e9, 16e9)
    assert abs(w.samples.mean()) < 1e-12


def test_ook_all_zero_is_silent():
    w = gen_modulated(BitPattern((0,) * 8, 400e6, "OOK"), 1e9, 8e9, n_periods=3)
    assert_array_equal(w.samples, 0.0)
    assert len(w) == 3 * 8 * 20


def test_single_bit_cosine_kurtosis():
    w = gen_modulated(BitPattern((0,), 100e6, "BPSK"), 1e9, 16e9, n_periods=100)
    assert rel_kurtosis(w.samples) == pytest.approx(1.5, abs=1e-9)


@pytest.mark.parametrize("carrier,baud,rate", [(400e6, 400e6, 8e9), (1e9, 400e6, 7.6e9),
                                                (1e9, 300e6, 8e9)])
def test_gen_modulated_rejects(carrier, baud, rate):
    with pytest.raises(ValueError):
        gen_modulated(BitPattern((0, 1), baud), carrier, rate)


def test_jammer_fills_band():
    fs = 20e9
    j = gen_multitone_jammer(1.7e9, 2.5e9, 10_000, seed=3, sample_rate=fs, n_samples=250_000)
    assert j.rms == pytest.approx(1.0)
    spec = np.abs(np.fft.rfft(j.samples)) ** 2
    f = np.fft.rfftfreq(len(j), 1 / fs)
    inside = (f >= 1.7e9) & (f <= 2.5e9)
    assert spec[inside].sum() / spec.sum() > 0.999
    # every 100 MHz slice of the band carries power
    for lo in np.arange(1.7e9, 2.5e9, 1e8):
        band = (f >= lo) & (f < lo + 1e8)
        assert spec[band].sum() / spec.sum() > 0.08
    # a dense random-phase comb is close to Gaussian
    assert rel_kurtosis(j.samples) < 0.1


def test_jammer_fast_path_matches_direct_sum():
    # 20 GS/s with 80 kHz spacing takes the FFT route; 19.99 GS/s does not
    fast = gen_multitone_jammer(1.7e9, 2.5e9, 10_000, 5, 20e9, n_samples=3000)
    rng = np.random.default_rng(5)
    phases = rng.uniform(0, 2 * np.pi, 10_000)
    freqs = 1.7e9 + 40e3 + 80e3 * np.arange(10_000)
    t = np.arange(3000) / 20e9
    direct = np.cos(np.outer(freqs, 2 * np.pi * t) + phases[:, None]).sum(axis=0)
    direct /= np.sqrt(np.mean(direct ** 2))
    assert_allclose(fast.samples, direct, atol=1e-8)


def test_jammer_single_tone_and_determinism():
    one = gen_multitone_jammer(1e9, 1.1e9, 1, seed=0, sample_rate=16e9, n_samples=16_000)
    assert rel_kurtosis(one.samples) == pytest.approx(1.5, abs=1e-3)
    a = gen_multitone_jammer(1e9, 2e9, 50, seed=9, sample_rate=10e9, duration=1e-6)
    b = gen_multitone_jammer(1e9, 2e9, 50, seed=9, sample_rate=10e9, duration=1e-6)
    assert_array_equal(a.samples, b.samples)


def test_jammer_rejects_aliasing():
    with pytest.raises(ValueError):
        gen_multitone_jammer(1e9, 5e9, 10, 0, 10e9, n_samples=100)


# -- mixing -----------------------------------------------------------------

def test_mix_identity_and_rows(sources):
    sc = mix(sources, np.eye(2))
    assert_array_equal(sc.mixture_matrix(), sc.source_matrix())
    sc = mix(sources, [[0.8, 0.2], [0.2, 0.8]])
    assert_allclose(sc.mixtures[0].samples, 0.8 * sources[0].samples + 0.2 * sources[1].samples,
                    rtol=1e-12, atol=1e-15)
    assert_allclose(sc.components.sum(axis=1), sc.mixture_matrix(), rtol=1e-12)


def test_mix_singular_is_constructible(sources):
    sc = mix(sources, np.full((2, 2), 0.5))
    assert_array_equal(sc.mixtures[0].samples, sc.mixtures[1].samples)


def test_mix_rejects_shape(sources):
    with pytest.raises(ValueError):
        mix(sources, np.eye(3))
    with pytest.raises(ValueError):
        mix([sources[0], WaveformBuffer(np.ones(5), 8e9)], np.eye(2))


@pytest.mark.property
def test_mix_composes(sources, rng):
    H1, H2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    direct = mix(sources, H1 @ H2).mixture_matrix()
    nested = mix(list(mix(sources, H2).mixtures), H1).mixture_matrix()
    assert_allclose(direct, nested, rtol=1e-10, atol=1e-12)


# -- condition number and closed forms --------------------------------------

@pytest.mark.parametrize("a,kappa", [(0.9, 2.05), (0.55, 10.1), (0.8, 2.2667)])
def test_condition_number_symmetric(a, kappa):
    assert condition_number(symmetric_mixing(a)) == pytest.approx(kappa, abs=0.005)


def test_condition_number_closed_form():
    # Frobenius kappa of [[a, b], [b, a]] is 2 (a^2 + b^2) / |a^2 - b^2|
    for a in (0.6, 0.7, 0.95):
        b = 1 - a
        assert condition_number(symmetric_mixing(a)) == pytest.approx(
            2 * (a * a + b * b) / abs(a * a - b * b), rel=1e-12)


def test_condition_number_singular():
    with pytest.raises(SingularMatrixError):
        condition_number(np.full((2, 2), 0.5))


@pytest.mark.property
@given(st.floats(0.51, 1.0), st.floats(-10, 10).filter(lambda c: abs(c) > 1e-3))
def test_condition_number_scale_invariant(a, c):
    H = symmetric_mixing(a)
    assert condition_number(c * H) == pytest.approx(condition_number(H), rel=1e-9)


def test_symmetric_inverse_examples():
    assert_allclose(symmetric_inverse(1.0), np.eye(2))
    assert_allclose(symmetric_inverse(0.9), (0.9 / 0.8) * np.array([[1, -1 / 9], [-1 / 9, 1]]))
    assert_allclose(symmetric_inverse(0.6) @ symmetric_mixing(0.6), np.eye(2), atol=1e-12)
    with pytest.raises(SingularMatrixError):
        symmetric_inverse(0.5)
    with pytest.raises(SingularMatrixError):
        SymmetricMixSpec(0.5)


@pytest.mark.property
def test_symmetric_inverse_many(rng):
    for a in rng.uniform(0.51, 1.0, 1000):
        assert_allclose(symmetric_inverse(a) @ symmetric_mixing(a), np.eye(2), atol=1e-12)


def test_perturbed_demix_coefficients():
    a, d = 0.9, 0.019
    G = perturbed_demix(a, d) @ symmetric_mixing(a)
    diag = (2 * a - 1) / a + d
    assert_allclose(G, [[diag, d], [d, diag]], atol=1e-12)
    assert diag == pytest.approx(0.908, abs=5e-4)
    assert_allclose(perturbed_demix(a, 0.0), symmetric_inverse(a) / symmetric_inverse(a)[0, 0])


@pytest.mark.parametrize("a,d,expected", [(0.9, 0.019, 0.020498), (0.9, 0.004, 0.004459),
                                          (0.55, 0.019, 0.086435), (0.9, 0.0, 0.0)])
def test_residual_fraction(a, d, expected):
    assert residual_fraction(a, d) == pytest.approx(expected, abs=2e-5)
    G = perturbed_demix(a, d) @ symmetric_mixing(a)
    assert residual_fraction(a, d) == pytest.approx(G[0, 1] / (G[0, 0] + G[0, 1]), abs=1e-12)


def test_residual_fraction_domain():
    with pytest.raises(ValueError):
        residual_fraction(0.4, 0.01)
    with pytest.raises(ValueError):
        residual_fraction(0.9, -0.01)


@pytest.mark.property
@given(st.floats(0.51, 1.0), st.floats(0.0, 0.5), st.floats(1e-6, 0.5))
def test_residual_fraction_monotone(a, d, step):
    assert residual_fraction(a, d + step) > residual_fraction(a, d)


# -- SIR ------------------------------------------------------------------

def test_sir_of_mixtures_closed_form(scenario_08):
    rep = sir_db(scenario_08.components)
    assert_allclose(rep.per_channel, 10 * np.log10(0.64 / 0.04), atol=0.2)
    assert rep.assignment == (0, 1)
    assert not rep.any_capped


@pytest.mark.property
@pytest.mark.parametrize("a", [0.55, 0.6, 0.7, 0.9, 0.95])
def test_sir_symmetric_formula(sources, a):
    rep = sir_db(mix(sources, symmetric_mixing(a)).components)
    assert rep.overall == pytest.approx(10 * np.log10(a ** 2 / (1 - a) ** 2), abs=0.2)


def test_sir_perfect_and_equal(sources):
    perfect = sir_db(mix(sources, np.eye(2)).components)
    assert perfect.any_capped and np.all(perfect.per_channel == 80.0)
    half = sir_db(mix(sources, np.full((2, 2), 0.5)).components)
    assert_allclose(half.per_channel, 0.0, atol=0.2)


def test_sir_assignment_is_a_permutation():
    # both outputs favour source 0; the weaker claim falls back to source 1
    rep = sir_db(np.array([[10.0, 1.0], [5.0, 4.0]]))
    assert rep.assignment == (0, 1)
    assert rep.per_channel[1] == pytest.approx(10 * np.log10(4 / 5))


@pytest.mark.property
@given(st.lists(st.floats(0.01, 100.0), min_size=4, max_size=4), st.floats(1e-3, 1e3))
def test_sir_channel_scale_invariant(p, c):
    P = np.array(p).reshape(2, 2)
    scaled = P.copy()
    scaled[0] *= c
    assert_allclose(sir_db(P).per_channel, sir_db(scaled).per_channel, atol=1e-9)


# -- kurtosis, matching, constellation ------------------------------------

def test_rel_kurtosis_references(rng):
    assert rel_kurtosis(rng.normal(size=200_000)) < 0.05
    assert rel_kurtosis(np.sign(rng.normal(size=10_000))) == pytest.approx(2.0, abs=1e-3)
    with pytest.raises(ValueError):
        rel_kurtosis(np.ones(10))


@pytest.mark.property
@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3))
@settings(max_examples=30)
def test_rel_kurtosis_scale_invariant(c):
    y = np.sin(np.linspace(0, 40, 999)) + 0.3 * np.cos(np.linspace(0, 7, 999))
    assert rel_kurtosis(c * y) == pytest.approx(rel_kurtosis(y), rel=1e-9)


def test_match_sources_recovers_permutation(sources):
    S = np.vstack([s.samples for s in sources])
    perm, signs, corr = match_sources(np.vstack([-S[1], 2 * S[0]]), S)
    assert perm == (1, 0)
    assert_array_equal(signs, [-1, 1])
    assert_allclose(corr, 1.0)


def _bpsk(bits, noise=0.0, seed=0):
    w = gen_modulated(BitPattern(bits, 50e6, "BPSK"), 2.1e9, 20e9)
    y = w.samples + np.random.default_rng(seed).normal(0.0, noise, len(w))
    return WaveformBuffer(y, 20e9)


def test_constellation_noiseless_is_capped():
    bits = np.random.default_rng(0).integers(0, 2, 64)
    m = constellation_metrics(_bpsk(bits), 2.1e9, 50e6, bits)
    assert m.capped and m.Q == 1e4
    assert m.symbols.shape == (64,)


def test_constellation_q_matches_noise_theory():
    # per-symbol integration of white noise sigma over 400 samples:
    # symbol sd = sigma * sqrt(2 / 400) after the x2 downconversion, mean +-1
    bits = np.random.default_rng(1).integers(0, 2, 400)
    sigma = 3.0
    m = constellation_metrics(_bpsk(bits, sigma, seed=2), 2.1e9, 50e6, bits)
    sd = sigma * np.sqrt(2 / 400)
    assert m.Q == pytest.approx(2 / (2 * sd), rel=0.1)
    assert m.snr_db == pytest.approx(20 * np.log10(1 / sd), abs=1.0)


def test_constellation_blind_labels_and_errors():
    bits = np.random.default_rng(4).integers(0, 2, 100)
    m = constellation_metrics(_bpsk(bits, 0.5, 1), 2.1e9, 50e6)
    assert m.Q > 3
    with pytest.raises(ValueError):
        constellation_metrics(_bpsk((0, 0, 0, 0, 0, 1)), 2.1e9, 50e6, (0, 0, 0, 0, 0, 1))
