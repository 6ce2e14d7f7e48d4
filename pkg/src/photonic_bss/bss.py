"""Blind source separation from output statistics alone.

The engine never sees the individual input channels.  It picks a weight
vector, asks a weighted adder for samples of the summed output, and keeps
only their variance and relative kurtosis.  Demixing vectors are found by a
projection pursuit driven by a constrained Nelder-Mead search:

1. PCA: maximize output variance, deflating for later components;
2. whitening from the principal directions and variances;
3. ICA: maximize |kurtosis| over directions of the whitened space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence

import numpy as np

from .errors import (
    ConvergenceWarning,
    DegenerateSignalError,
    IllPosedSeparationError,
    RankDeficiencyWarning,
    RankDeficientError,
)
from .photonics import adc_indices
from .signals import SirReport, WaveformBuffer, _check_compatible

__all__ = [
    "WeightedAdderHandle", "IdealAdder", "MomentEstimate", "NelderMeadConfig", "SearchResult",
    "WhiteningTransform", "IcaResult", "BssConfig", "BssResult", "estimate_moments",
    "nelder_mead_maximize", "pca_stage", "ica_stage", "run_bss", "box_scale",
]


class WeightedAdderHandle(Protocol):
    """What the engine may touch: weights in, summed-output samples out."""

    n_channels: int

    def sample(self, w, n_samples: Optional[int] = None, seed: int = 0) -> np.ndarray: ...

    def apply(self, w): ...


class IdealAdder:
    """Exact weighted addition of fixed channels, no noise, no filtering."""

    response = None

    def __init__(self, channels: Sequence[WaveformBuffer]):
        _check_compatible(channels)
        self._X = np.vstack([c.samples for c in channels])
        self.sample_rate = channels[0].sample_rate
        self._cache = {}

    @property
    def n_channels(self) -> int:
        return self._X.shape[0]

    def _subset(self, n_samples, seed):
        key = (n_samples, seed)
        if key not in self._cache:
            self._cache = {key: self._X[:, adc_indices(self._X.shape[1], n_samples, seed)]}
        return self._cache[key]

    def sample(self, w, n_samples=None, seed=0):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_channels,) or np.any(np.abs(w) > 1 + 1e-12):
            raise ValueError("weights must be a vector in [-1, 1]^N")
        return w @ self._subset(n_samples, seed)

    def apply(self, w):
        w = np.asarray(w, dtype=float).copy()
        return w, WaveformBuffer(w @ self._X, self.sample_rate)


@dataclass(frozen=True)
class MomentEstimate:
    variance: float
    rel_kurtosis: float
    n_samples: int
    seed: int


def estimate_moments(handle: WeightedAdderHandle, w, n_samples: Optional[int] = 20_000,
                     seed: int = 0) -> MomentEstimate:
    """Variance and ``|E[y^4]/var^2 - 3|`` of the weighted-sum output."""
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise ValueError("weight vector is all zero")
    y = handle.sample(w, n_samples, seed)
    y = y - y.mean()
    y2 = y * y
    var = float(y2.mean())
    if var < 1e-15:
        raise DegenerateSignalError(f"output variance {var:.3g} is numerically zero")
    kurt = abs(float((y2 * y2).mean()) / var ** 2 - 3.0)
    return MomentEstimate(var, kurt, y.size, seed)


def box_scale(v) -> np.ndarray:
    """Scale so the largest-magnitude entry is exactly +-1."""
    v = np.asarray(v, dtype=float)
    peak = np.max(np.abs(v))
    if peak == 0:
        raise ValueError("cannot scale a zero vector")
    return v / peak


@dataclass(frozen=True)
class NelderMeadConfig:
    tol: float = 1e-4          # simplex diameter (radians of direction angle)
    max_evals: int = 500       # per restart
    restarts: int = 5
    initial_step: float = 0.5
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5


@dataclass
class SearchResult:
    direction: np.ndarray      # unit norm
    w: np.ndarray              # box-scaled, what the objective saw
    value: float
    evals: int
    converged: bool
    restarts_converged: int = 0
    values_seen: List[float] = field(default_factory=list, repr=False)


def _sphere(angles: np.ndarray, m: int) -> np.ndarray:
    """Unit vector in R^m from m-1 hyperspherical angles."""
    u = np.ones(m)
    for k, a in enumerate(angles):
        u[k] *= np.cos(a)
        u[k + 1:] *= np.sin(a)
    return u


def _complement_basis(dim: int, orthogonal_to) -> np.ndarray:
    if orthogonal_to is None or len(orthogonal_to) == 0:
        return np.eye(dim)
    A = np.atleast_2d(np.asarray(orthogonal_to, dtype=float))
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * s.max()))
    return vt[rank:].T


def _nelder_mead(f, x0, cfg: NelderMeadConfig):
    """Minimize ``f`` from ``x0``; returns (x, fx, evals, converged)."""
    n = x0.size
    simplex = [x0.copy()] + [x0 + cfg.initial_step * e for e in np.eye(n)]
    fvals = [f(x) for x in simplex]
    evals = n + 1
    while True:
        order = np.argsort(fvals)
        simplex = [simplex[i] for i in order]
        fvals = [fvals[i] for i in order]
        diameter = max(np.linalg.norm(x - simplex[0]) for x in simplex[1:])
        if diameter < cfg.tol:
            return simplex[0], fvals[0], evals, True
        if evals >= cfg.max_evals:
            return simplex[0], fvals[0], evals, False

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        xr = centroid + cfg.reflection * (centroid - worst)
        fr = f(xr)
        evals += 1
        if fr < fvals[0]:
            xe = centroid + cfg.expansion * (xr - centroid)
            fe = f(xe)
            evals += 1
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + cfg.contraction * (xr - centroid)
            fc = f(xc)
            evals += 1
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + cfg.contraction * (worst - centroid)
            fc = f(xc)
            evals += 1
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        best = simplex[0]
        for i in range(1, n + 1):
            simplex[i] = best + cfg.shrink * (simplex[i] - best)
            fvals[i] = f(simplex[i])
        evals += n


def nelder_mead_maximize(objective: Callable[[np.ndarray], float], dim: int,
                         orthogonal_to=None, config: NelderMeadConfig = NelderMeadConfig(),
                         seed: int = 0) -> SearchResult:
    """Maximize ``objective`` over weight directions in ``[-1, 1]^dim``.

    The simplex lives on the angles of a unit vector restricted to the
    orthogonal complement of ``orthogonal_to``.  Every candidate is projected
    onto that complement, normalized to unit length and box-scaled so its
    largest entry is +-1 before ``objective`` sees it.  The best of
    ``config.restarts`` seeded starts is returned.
    """
    basis = _complement_basis(dim, orthogonal_to)
    m = basis.shape[1]
    if m == 0:
        raise ValueError("orthogonality constraints leave no feasible direction")
    projector = basis @ basis.T
    seen: List[float] = []

    def candidate(angles):
        u = projector @ (basis @ _sphere(angles, m))
        return u / np.linalg.norm(u)

    def evaluate(u):
        value = float(objective(box_scale(u)))
        seen.append(value)
        return value

    if m == 1:
        u = candidate(np.zeros(0))
        value = evaluate(u)
        return SearchResult(u, box_scale(u), value, 1, True, 1, seen)

    rng = np.random.default_rng(seed)
    best = None
    total, n_conv = 0, 0
    for _ in range(config.restarts):
        x0 = rng.uniform(-np.pi, np.pi, m - 1)
        x, fx, evals, ok = _nelder_mead(lambda a: -evaluate(candidate(a)), x0, config)
        total += evals
        n_conv += ok
        if best is None or -fx > best[1]:
            best = (candidate(x), -fx)
    if n_conv == 0:
        warnings.warn(ConvergenceWarning(
            f"no Nelder-Mead restart met tol={config.tol:g}; keeping best value {best[1]:.4g}"),
            stacklevel=2)
    u = best[0]
    # fix the sign so results are reproducible: largest entry positive
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    return SearchResult(u, box_scale(u), best[1], total, n_conv > 0, n_conv, seen)


@dataclass(frozen=True)
class BssConfig:
    n_samples: Optional[int] = 20_000
    sample_seed: int = 0
    seed: int = 0
    nm: NelderMeadConfig = NelderMeadConfig()
    rank_tol: float = 1e-12
    flat_range: float = 0.01
    gaussian_sigmas: float = 6.0


@dataclass
class WhiteningTransform:
    pc_vectors: np.ndarray      # rows, orthonormal
    pc_variances: np.ndarray
    evals: List[int] = field(default_factory=list)
    converged: List[bool] = field(default_factory=list)

    @property
    def rank_deficient(self) -> bool:
        return bool(np.any(self.pc_variances < self._floor()))

    def _floor(self):
        return 1e-12 * np.max(self.pc_variances)

    @property
    def V(self) -> np.ndarray:
        if self.rank_deficient:
            raise RankDeficientError("a principal variance vanished; cannot whiten")
        return np.diag(self.pc_variances ** -0.5) @ self.pc_vectors


def _variance_objective(handle, config: BssConfig):
    # the adder sees box-scaled weights; dividing by |w|^2 gives the variance
    # along the unit direction so the box scale does not bias the search
    def objective(w):
        try:
            var = estimate_moments(handle, w, config.n_samples, config.sample_seed).variance
        except DegenerateSignalError:
            return 0.0
        return var / float(w @ w)
    return objective


def pca_stage(handle: WeightedAdderHandle, n_components: Optional[int] = None,
              config: BssConfig = BssConfig()) -> WhiteningTransform:
    """Principal directions by variance maximization with deflation."""
    n = handle.n_channels
    n_components = n if n_components is None else n_components
    if not 1 <= n_components <= n:
        raise ValueError("n_components must lie in [1, N]")
    objective = _variance_objective(handle, config)
    vectors, variances, evals, conv = [], [], [], []
    for k in range(n_components):
        res = nelder_mead_maximize(objective, n, orthogonal_to=vectors or None,
                                   config=config.nm, seed=config.seed + 101 * k)
        variances.append(res.value)
        vectors.append(res.direction)
        evals.append(res.evals)
        conv.append(res.converged)
    wt = WhiteningTransform(np.array(vectors), np.array(variances), evals, conv)
    if wt.rank_deficient:
        warnings.warn(RankDeficiencyWarning(
            f"principal variances {wt.pc_variances} are rank deficient"), stacklevel=2)
    return wt


@dataclass
class IcaResult:
    demix: np.ndarray           # rows box-scaled physical weights
    directions: np.ndarray      # unit rows in whitened space
    kurtosis: np.ndarray
    evals: List[int]
    converged: List[bool]


def ica_stage(handle: WeightedAdderHandle, whitening: WhiteningTransform,
              config: BssConfig = BssConfig()) -> IcaResult:
    """Independent directions by |kurtosis| maximization in the whitened space."""
    V = whitening.V
    n_comp = V.shape[0]

    def objective(u):
        w = box_scale(u @ V)
        return estimate_moments(handle, w, config.n_samples, config.sample_seed).rel_kurtosis

    dirs, rows, values, evals, conv = [], [], [], [], []
    for k in range(n_comp):
        res = nelder_mead_maximize(objective, n_comp, orthogonal_to=dirs or None,
                                   config=config.nm, seed=config.seed + 7919 + 101 * k)
        if k == 0:
            _check_non_gaussian(res, config)
        dirs.append(res.direction)
        rows.append(box_scale(res.direction @ V))
        values.append(res.value)
        evals.append(res.evals)
        conv.append(res.converged)
    return IcaResult(np.array(rows), np.array(dirs), np.array(values), evals, conv)


def _check_non_gaussian(res: SearchResult, config: BssConfig):
    spread = max(res.values_seen) - min(res.values_seen)
    n = config.n_samples or 0
    # sampling s.d. of excess kurtosis for Gaussian data is sqrt(24 / n)
    noise_floor = config.gaussian_sigmas * np.sqrt(24.0 / n) if n else 0.0
    if spread < config.flat_range or res.value < noise_floor:
        raise IllPosedSeparationError(
            f"kurtosis landscape is flat (best {res.value:.3g}, spread {spread:.3g}); "
            "sources look Gaussian")


@dataclass
class BssResult:
    demix_vectors: np.ndarray
    recovered: List[WaveformBuffer]
    realized_weights: np.ndarray
    whitening: WhiteningTransform
    ica: IcaResult
    sir: Optional[SirReport] = None

    @property
    def sir_per_channel(self):
        return None if self.sir is None else self.sir.per_channel

    @property
    def iterations(self) -> dict:
        return {"pca": list(self.whitening.evals), "ica": list(self.ica.evals)}

    @property
    def converged(self) -> dict:
        return {"pca": list(self.whitening.converged), "ica": list(self.ica.converged)}


def run_bss(handle: WeightedAdderHandle,
            eval_hook: Optional[Callable[[np.ndarray], SirReport]] = None,
            config: BssConfig = BssConfig()) -> BssResult:
    """PCA, whitening and ICA, then apply the demixing rows through the adder.

    ``eval_hook`` receives the realized demixing weights (one row per output)
    and scores them against ground truth; the search never calls it.
    Stage errors propagate with whatever finished attached as ``.partial``.
    """
    if handle.n_channels < 2:
        raise ValueError("need at least two mixtures")
    partial = {}
    try:
        whitening = pca_stage(handle, config=config)
        partial["whitening"] = whitening
        if whitening.rank_deficient:
            raise RankDeficientError(
                f"mixture covariance is rank deficient: variances {whitening.pc_variances}")
        ica = ica_stage(handle, whitening, config)
        partial["ica"] = ica
    except Exception as exc:
        exc.partial = partial
        raise
    realized, recovered = [], []
    for row in ica.demix:
        r, wave = handle.apply(row)
        realized.append(r)
        recovered.append(wave)
    realized = np.array(realized)
    sir = eval_hook(realized) if eval_hook is not None else None
    return BssResult(ica.demix, recovered, realized, whitening, ica, sir)
