"""Experiment runners.

Every runner takes an ``ExperimentConfig`` and returns a ``RunRecord``.  Sweep
points are independent: each builds its own sources, bank and adder from the
config and the point's seed, so the results do not depend on worker count or
completion order.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional

import numpy as np
from scipy import signal as sps

from ..bss import IdealAdder, box_scale, run_bss
from ..errors import ConvergenceWarning
from ..photonics import FidelityMode, PhotonicAdder, accuracy_sweep
from ..signals import (
    FIG3_BPSK_BITS,
    FIG3_OOK_BITS,
    BitPattern,
    MixingScenario,
    condition_number,
    constellation_metrics,
    gen_modulated,
    gen_multitone_jammer,
    match_sources,
    mix,
    sir_db,
    symmetric_mixing,
)
from .config import ExperimentConfig
from .oracle import oracle_demix, row_deviation
from .records import RunRecord, Table, summarize

ILL_COLUMNS = ("a", "kappa", "mode", "sir_before_db", "sir_after_db", "converged")
BANDWIDTH_COLUMNS = ("carrier_hz", "baud_hz", "sample_rate_hz", "kappa", "mode", "pd_gain",
                     "sir_before_db", "sir_after_db", "converged")
ORACLE_COLUMNS = ("index", "h00", "h01", "h10", "h11", "kappa", "deviation", "min_corr",
                  "passed")
TRANSCEIVER_COLUMNS = ("channel", "role", "q", "snr_db", "sir_db", "jammer_band_fraction")


class SirScorer:
    """SIR of demixing rows against the known sources.

    The power of component ``(i, j)`` is ``(W H)_ij^2 * |r(s_j)|^2`` where
    ``r`` is the receiver response, so filtered source energies are computed
    once.
    """

    def __init__(self, scenario: MixingScenario, response: Optional[Callable] = None):
        S = scenario.source_matrix()
        if response is not None:
            S = np.vstack([response(s) for s in S])
        self.H = scenario.H
        self.energy = np.sum(S ** 2, axis=1)

    def powers(self, weights) -> np.ndarray:
        G = np.atleast_2d(np.asarray(weights, dtype=float)) @ self.H
        return G ** 2 * self.energy[None, :]

    def __call__(self, weights):
        return sir_db(self.powers(weights))


def baud_for_carrier(carrier: float) -> float:
    """Symbol rate paired with each carrier band in the wideband test."""
    if carrier < 1e9:
        return 160e6
    if carrier < 3e9:
        return 400e6
    if carrier < 4.8e9:
        return 800e6
    return 1600e6


def rate_for(carrier: float, baud: float, oversample: float = 8.0) -> float:
    """Smallest multiple of ``baud`` at or above ``oversample * carrier``."""
    return math.ceil(oversample * carrier / baud - 1e-9) * baud


def two_tone_scenario(H, carrier: float, baud: float, sample_rate: float,
                      n_periods: int) -> MixingScenario:
    """BPSK and OOK sources on a shared carrier, unit RMS, mixed by ``H``."""
    s1 = gen_modulated(BitPattern(FIG3_BPSK_BITS, baud, "BPSK"), carrier, sample_rate, n_periods)
    s2 = gen_modulated(BitPattern(FIG3_OOK_BITS, baud, "OOK"), carrier, sample_rate, n_periods)
    return mix([s1.normalized(), s2.normalized()], H)


def _realize(handle, row):
    bank = getattr(handle, "bank", None)
    if bank is None:
        return np.asarray(row, dtype=float)
    return bank.command(row).realized.copy()


def separate(cfg: ExperimentConfig, scenario: MixingScenario, mode: str, seed: int,
             n_samples: Optional[int], captures: int = 1):
    """Run BSS on a fresh bank and score it over ``captures`` applications.

    Each capture re-commands the final demixing rows, so quantization jitter
    and loop residue are drawn afresh while the search result stays fixed.
    Component powers are averaged over the captures before taking the ratio,
    which is the SIR of the captures played back to back.
    Returns ``(result, SIR in dB, converged, adder)``.
    """
    bank = cfg.bank.build(FidelityMode.parse(mode), seed)
    adder = PhotonicAdder(bank, scenario.mixtures, cfg.detector.model(),
                          cfg.detector.noise_snr_db, noise_seed=seed)
    scorer = SirScorer(scenario, adder.response)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        result = run_bss(adder, scorer, cfg.bss.config(seed, n_samples))
        power = scorer.powers(result.realized_weights)
        for _ in range(captures - 1):
            realized = np.array([_realize(adder, row) for row in result.demix_vectors])
            power = power + scorer.powers(realized)
    converged = all(result.converged["pca"]) and all(result.converged["ica"])
    return result, sir_db(power / captures).overall, converged, adder


def _seeded_points(cfg, scenario, mode, n_seeds, n_samples, captures):
    afters, errors, converged = [], [], True
    for k in range(n_seeds):
        seed = cfg.seed + k
        try:
            _, sir, ok, _ = separate(cfg, scenario, mode, seed, n_samples, captures)
        except (ValueError, RuntimeError) as exc:
            errors.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
            converged = False
            continue
        afters.append((seed, sir))
        converged = converged and ok
    mean = float(np.mean([v for _, v in afters])) if afters else float("nan")
    return mean, afters, converged, errors


# ---------------------------------------------------------------- ill-conditioned mixing

def ill_condition_grid(cfg: ExperimentConfig) -> np.ndarray:
    sec = cfg.ill_condition_sweep
    return np.round(np.linspace(sec.a_min, sec.a_max, sec.points), 10)


def _ill_point(cfg: ExperimentConfig, a: float, mode: str):
    sec = cfg.ill_condition_sweep
    rate = cfg.sample_rate or rate_for(sec.carrier, sec.baud)
    H = symmetric_mixing(a)
    scenario = two_tone_scenario(H, sec.carrier, sec.baud, rate, sec.n_periods)
    before = SirScorer(scenario)(np.eye(2)).overall
    mean, afters, converged, errors = _seeded_points(cfg, scenario, mode, sec.n_seeds,
                                                     sec.n_samples, sec.captures)
    row = {"a": float(a), "kappa": condition_number(H), "mode": mode,
           "sir_before_db": before, "sir_after_db": mean, "converged": converged}
    for e in errors:
        e.update(a=float(a), mode=mode)
    return row, afters, errors


def run_ill_condition_sweep(cfg: ExperimentConfig) -> RunRecord:
    sec = cfg.ill_condition_sweep
    jobs = [(a, mode) for a in ill_condition_grid(cfg) for mode in sec.modes]
    results = _map(_ill_point, cfg, jobs, cfg.workers)
    table = Table(ILL_COLUMNS, [r[0] for r in results])
    per_seed = Table(("a", "mode", "seed", "sir_after_db"), [
        {"a": row["a"], "mode": row["mode"], "seed": seed, "sir_after_db": v}
        for row, afters, _ in results for seed, v in afters])
    aggregates = {}
    for mode in sec.modes:
        sub = table.where(mode=mode)
        aggregates[mode] = {"sir_after_db": summarize(sub.column("sir_after_db")),
                            "all_converged": bool(np.all(sub.column("converged")))}
    worst = table.rows[int(np.argmax(table.column("kappa")))]["a"] if table.rows else None
    if worst is not None:
        at = {r["mode"]: r["sir_after_db"] for r in table.rows if r["a"] == worst}
        aggregates["at_max_kappa"] = {"a": worst, "sir_after_db": at}
    return _record(cfg, table, aggregates, {"per_seed": per_seed},
                   [e for r in results for e in r[2]])


# ---------------------------------------------------------------- wideband carriers

def carrier_grid(cfg: ExperimentConfig) -> np.ndarray:
    sec = cfg.bandwidth_sweep
    return np.linspace(sec.f_min, sec.f_max, sec.points)


def _bandwidth_point(cfg: ExperimentConfig, carrier: float, mode: str):
    sec = cfg.bandwidth_sweep
    baud = baud_for_carrier(carrier)
    rate = cfg.sample_rate or rate_for(carrier, baud, sec.oversample)
    if carrier >= rate / 2:
        raise ValueError(f"carrier {carrier:g} Hz is above Nyquist for {rate:g} Hz")
    period = len(FIG3_BPSK_BITS) * int(round(rate / baud))
    H = symmetric_mixing(sec.a)
    scenario = two_tone_scenario(H, carrier, baud, rate, math.ceil(sec.min_record / period))
    before = SirScorer(scenario)(np.eye(2)).overall
    mean, afters, converged, errors = _seeded_points(cfg, scenario, mode, sec.n_seeds,
                                                     sec.n_samples, sec.captures)
    row = {"carrier_hz": float(carrier), "baud_hz": baud, "sample_rate_hz": rate,
           "kappa": condition_number(H), "mode": mode,
           "pd_gain": float(cfg.detector.model().gain(carrier)),
           "sir_before_db": before, "sir_after_db": mean, "converged": converged}
    for e in errors:
        e.update(carrier_hz=float(carrier))
    return row, afters, errors


def run_bandwidth_sweep(cfg: ExperimentConfig) -> RunRecord:
    jobs = [(f, cfg.mode) for f in carrier_grid(cfg)]
    results = _map(_bandwidth_point, cfg, jobs, cfg.workers)
    table = Table(BANDWIDTH_COLUMNS, [r[0] for r in results])
    sir = table.column("sir_after_db")
    aggregates = {"sir_after_db": summarize(sir),
                  "n_below_30db": int(np.sum(~(sir >= 30.0))),
                  "kappa": float(table.rows[0]["kappa"]) if table.rows else None}
    return _record(cfg, table, aggregates, {}, [e for r in results for e in r[2]])


# ---------------------------------------------------------------- weighting accuracy

def run_accuracy_sweep(cfg: ExperimentConfig) -> RunRecord:
    sec = cfg.accuracy_sweep
    n = len(cfg.bank.rings)
    columns = (("mode",) + tuple(f"target_{i}" for i in range(n))
               + tuple(f"realized_{i}" for i in range(n))
               + tuple(f"error_{i}" for i in range(n)) + ("converged",))
    rows, aggregates = [], {}
    for mode in sec.modes:
        bank = cfg.bank.build(FidelityMode.parse(mode), sec.bank_seed)
        report = accuracy_sweep(bank, sec.grid_step)
        for t, r, e, c in zip(report.targets, report.realized, report.errors, report.converged):
            row = {"mode": mode, "converged": bool(c)}
            for i in range(n):
                row[f"target_{i}"], row[f"realized_{i}"], row[f"error_{i}"] = t[i], r[i], e[i]
            rows.append(row)
        aggregates[mode] = {"effective_bits": report.effective_bits,
                            "rms_error": report.rms_error,
                            "max_abs_error": float(np.max(np.abs(report.errors))),
                            "converged_fraction": float(np.mean(report.converged))}
    return _record(cfg, Table(columns, rows), aggregates)


# ---------------------------------------------------------------- jammed transceiver

def _band_fraction(freqs, psd, lo, hi) -> float:
    inside = (freqs >= lo) & (freqs <= hi)
    return float(psd[inside].sum() / psd.sum())


def run_transceiver_demo(cfg: ExperimentConfig) -> RunRecord:
    sec = cfg.transceiver_demo
    rate = cfg.sample_rate or 20e9
    seed = cfg.seed
    rng = np.random.default_rng(seed)
    bits = tuple(int(b) for b in rng.integers(0, 2, sec.n_bits))
    tx = gen_modulated(BitPattern(bits, sec.baud, "BPSK"), sec.carrier, rate,
                       sec.n_periods).normalized()
    jammer = gen_multitone_jammer(sec.jammer_low, sec.jammer_high, sec.n_tones, seed + 1,
                                  rate, n_samples=len(tx))
    jammer = jammer.scaled(math.sqrt(sec.jammer_power_ratio))
    scenario = mix([tx, jammer], np.array(sec.h_air, dtype=float))

    result, _, converged, adder = separate(cfg, scenario, cfg.mode, seed, sec.n_samples)
    scorer = SirScorer(scenario, adder.response)

    # mixtures as the receiver sees them: unit weight on one channel
    detected = []
    for i in range(scenario.n):
        w, wave = adder.apply(np.eye(scenario.n)[i])
        detected.append((f"mixture_{i}", w, wave))
    for i, wave in enumerate(result.recovered):
        detected.append((f"output_{i}", result.realized_weights[i], wave))

    perm, _, _ = match_sources([w.samples for _, _, w in detected[scenario.n:]],
                               scenario.source_matrix())
    rows, spectra, constellation = [], {}, []
    freqs = None
    for k, (name, w, wave) in enumerate(detected):
        is_output = name.startswith("output")
        role = ("signal" if perm[k - scenario.n] == 0 else "jammer") if is_output else "mixture"
        m = constellation_metrics(wave, sec.carrier, sec.baud, bits)
        freqs, psd = sps.welch(wave.samples, fs=rate, nperseg=sec.spectrum_segment)
        spectra[name] = psd
        rows.append({"channel": name, "role": role, "q": m.Q, "snr_db": m.snr_db,
                     "sir_db": float(scorer(w).per_channel[0]),
                     "jammer_band_fraction": _band_fraction(freqs, psd, sec.jammer_low,
                                                            sec.jammer_high)})
        if role in ("mixture", "signal"):
            constellation += [{"channel": name, "symbol": j, "i": z.real, "q": z.imag,
                               "bit": int(b)} for j, (z, b) in enumerate(zip(m.symbols, m.labels))]
    table = Table(TRANSCEIVER_COLUMNS, rows)

    mixtures = [r for r in rows if r["role"] == "mixture"]
    best = max(mixtures, key=lambda r: r["q"])
    signal = next(r for r in rows if r["role"] == "signal")
    jam = next(r for r in rows if r["role"] == "jammer")
    aggregates = {
        "best_mixture": best["channel"],
        "q_before": best["q"], "q_after": signal["q"],
        "q_improvement": signal["q"] / best["q"],
        "snr_before_db": best["snr_db"], "snr_after_db": signal["snr_db"],
        "snr_improvement_db": signal["snr_db"] - best["snr_db"],
        "sir_after_db": result.sir.overall,
        "jammer_output_band_fraction": jam["jammer_band_fraction"],
        "converged": converged,
    }
    spec_cols = ("freq_hz",) + tuple(f"psd_{name}" for name in spectra)
    spec_rows = [dict(freq_hz=f, **{f"psd_{name}": p[j] for name, p in spectra.items()})
                 for j, f in enumerate(freqs)]
    series = {"spectra": Table(spec_cols, spec_rows),
              "constellation": Table(("channel", "symbol", "i", "q", "bit"), constellation)}
    return _record(cfg, table, aggregates, series)


# ---------------------------------------------------------------- oracle cross-check

def random_mixing(rng, kappa_max: float, n: int = 2) -> np.ndarray:
    while True:
        H = rng.uniform(-1.0, 1.0, (n, n))
        if abs(np.linalg.det(H)) > 1e-6 and condition_number(H) <= kappa_max:
            return H


def oracle_instance(cfg: ExperimentConfig, H):
    """Engine and oracle demixing rows for one mixing matrix on an ideal adder."""
    sec = cfg.oracle_check
    carrier, baud = 1e9, 400e6
    scenario = two_tone_scenario(np.asarray(H, dtype=float), carrier, baud,
                                 rate_for(carrier, baud), sec.n_periods)
    adder = IdealAdder(scenario.mixtures)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        result = run_bss(adder, config=cfg.bss.config(cfg.seed, n_samples=0))
    engine = np.array([box_scale(r) for r in result.demix_vectors])
    oracle = oracle_demix(scenario.mixture_matrix(), sec.grid_points)
    recovered = np.array([w.samples for w in result.recovered])
    _, _, corr = match_sources(recovered, scenario.source_matrix())
    return engine, oracle, float(corr.min())


def _oracle_point(cfg: ExperimentConfig, index: int):
    sec = cfg.oracle_check
    H = random_mixing(np.random.default_rng([cfg.seed, index]), sec.kappa_max)
    engine, oracle, corr = oracle_instance(cfg, H)
    dev = row_deviation(engine, oracle)
    return ({"index": index, "h00": H[0, 0], "h01": H[0, 1], "h10": H[1, 0], "h11": H[1, 1],
             "kappa": condition_number(H), "deviation": dev, "min_corr": corr,
             "passed": bool(dev <= sec.tolerance and corr >= sec.min_corr)}, None, [])


def oracle_check(cfg: ExperimentConfig) -> RunRecord:
    sec = cfg.oracle_check
    results = _map(_oracle_point, cfg, [(k,) for k in range(sec.points)], cfg.workers)
    table = Table(ORACLE_COLUMNS, [r[0] for r in results])
    aggregates = {"max_deviation": float(np.max(table.column("deviation"))),
                  "min_corr": float(np.min(table.column("min_corr"))),
                  "all_passed": bool(np.all(table.column("passed")))}
    return _record(cfg, table, aggregates)


# ---------------------------------------------------------------- plumbing

def _call(args):
    fn, cfg, job = args
    return fn(cfg, *job)


def _map(fn, cfg, jobs, workers: int):
    """Run ``fn(cfg, *job)`` for every job; results keep job order."""
    tasks = [(fn, cfg, job) for job in jobs]
    if workers <= 1 or len(tasks) <= 1:
        return [_call(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, tasks))


def _record(cfg, table, aggregates, series=None, failures=None) -> RunRecord:
    return RunRecord(cfg.experiment, cfg.to_dict(), cfg.config_hash(), table, aggregates,
                     series or {}, failures or [])


RUNNERS = {
    "accuracy_sweep": run_accuracy_sweep,
    "ill_condition_sweep": run_ill_condition_sweep,
    "bandwidth_sweep": run_bandwidth_sweep,
    "transceiver_demo": run_transceiver_demo,
    "oracle_check": oracle_check,
}


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    start = time.perf_counter()
    record = RUNNERS[cfg.experiment](cfg)
    record.wall_time_s = time.perf_counter() - start
    return record
