"""Multi-fit studies of the loss landscape around the constructed global minimum."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constructor import PiecewiseLinear, sample_training_set
from .neb import NebConfig, NebPath, neb_relax
from .net_core import Architecture, ContractError, Dataset, forward_many, loss_mse
from .optim import DivergenceError, FitRecord, OptimizerConfig, train_from_global, train_seed

log = logging.getLogger(__name__)

TUBE_POINTS = 512


def _map(fn, items, jobs: int):
    """Ordered map; a process pool when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def of(cls, values, bins: int = 50, range_=None) -> "Histogram":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return cls(np.array([0.0, 1.0]), np.array([0]))
        counts, edges = np.histogram(values, bins=bins, range=range_)
        return cls(edges, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self):
        return [(float(a), float(b), int(c)) for a, b, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


@dataclass
class CurveTube:
    grid: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def of(cls, grid, curves) -> "CurveTube":
        curves = np.atleast_2d(np.asarray(curves, dtype=np.float64))
        return cls(np.asarray(grid, dtype=np.float64), curves.mean(axis=0), curves.std(axis=0))

    def total_variation(self) -> float:
        return float(np.sum(np.abs(np.diff(self.mean))))


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    manifest: dict
    fits: list[FitRecord]
    excluded: list[tuple[int, str]] = field(default_factory=list)
    loss_histogram: Histogram | None = None
    tube: CurveTube | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([f.final_loss for f in self.fits])

    @property
    def best(self) -> FitRecord | None:
        return min(self.fits, key=lambda f: f.final_loss) if self.fits else None


@dataclass(frozen=True)
class _FitJob:
    arch: Architecture
    data: Dataset
    cfg: OptimizerConfig
    seed: int

    def __call__(self):
        try:
            return train_seed(self.arch, self.data, self.cfg, self.seed)
        except DivergenceError as e:
            return e


def _run_fit_job(job: _FitJob):
    return job()


def summarize_fits(fits: list[FitRecord], target: PiecewiseLinear, bins: int = 50):
    lo, hi = target.domain
    grid = np.linspace(lo, hi, TUBE_POINTS)
    hist = Histogram.of([f.final_loss for f in fits], bins=bins)
    if not fits:
        return hist, None
    curves = [forward_many(f.arch, f.final_weights_raw, grid) for f in fits]
    return hist, CurveTube.of(grid, curves)


def run_sweep(target: PiecewiseLinear, arch: Architecture, cfg: OptimizerConfig, fit_count: int,
              base_seed: int = 0, data: Dataset | None = None, jobs: int = 1, bins: int = 50) -> SweepResult:
    """Independent fits for seeds base_seed .. base_seed + fit_count - 1.

    Diverged fits are logged and listed in ``excluded``; the sweep goes on.
    """
    if fit_count < 1:
        raise ContractError("fit_count must be >= 1")
    data = data if data is not None else sample_training_set(target)
    seeds = range(base_seed, base_seed + fit_count)
    results = _map(_run_fit_job, [_FitJob(arch, data, cfg, s) for s in seeds], jobs)
    fits, excluded = [], []
    for s, r in zip(seeds, results):
        if isinstance(r, DivergenceError):
            log.warning("seed %d diverged at step %d; excluded", s, r.step)
            excluded.append((s, str(r)))
        else:
            fits.append(r)
    hist, tube = summarize_fits(fits, target, bins)
    manifest = {"arch": arch.to_dict(), "optimizer": cfg.to_dict(),
                "seed_range": [base_seed, base_seed + fit_count - 1], "fit_count": fit_count}
    return SweepResult(manifest, fits, excluded, hist, tube)


# ---------------------------------------------------------------------------
# distance geometry


@dataclass
class SampleStats:
    values: np.ndarray
    histogram: Histogram
    excluded: list[int] = field(default_factory=list)

    @property
    def min(self) -> float:
        return float(self.values.min()) if self.values.size else math.nan

    @property
    def max(self) -> float:
        return float(self.values.max()) if self.values.size else math.nan


def sample_pairs(m: int, pair_count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unordered index pairs without replacement (all of them if fewer exist)."""
    i, j = np.triu_indices(m, k=1)
    if pair_count >= i.size:
        return i, j
    rng = np.random.Generator(np.random.Philox(int(seed)))
    pick = np.sort(rng.choice(i.size, size=pair_count, replace=False))
    return i[pick], j[pick]


def pairwise_distances(weights, pair_count: int = 1_000_000, seed: int = 0, bins: int = 50) -> SampleStats:
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 2:
        raise ContractError("need at least two weight vectors")
    i, j = sample_pairs(W.shape[0], pair_count, seed)
    d = np.linalg.norm(W[i] - W[j], axis=1)
    return SampleStats(d, Histogram.of(d, bins))


def distances_to_reference(weights, w_ref, bins: int = 50) -> SampleStats:
    W = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    d = np.linalg.norm(W - np.asarray(w_ref)[None, :], axis=1)
    return SampleStats(d, Histogram.of(d, bins))


def direction_dot_products(weights, w_ref, pair_count: int = 1_000_000, seed: int = 0,
                           bins: int = 50) -> SampleStats:
    """Dot products of unit directions from w_ref to pairs of weight vectors."""
    W = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    D = W - np.asarray(w_ref)[None, :]
    n = np.linalg.norm(D, axis=1)
    zero = [int(k) for k in np.nonzero(n == 0)[0]]
    if zero:
        log.warning("excluding %d weight vectors equal to the reference", len(zero))
    keep = n > 0
    U = D[keep] / n[keep, None]
    if U.shape[0] < 2:
        return SampleStats(np.array([]), Histogram.of([], bins), zero)
    i, j = sample_pairs(U.shape[0], pair_count, seed)
    dots = np.sum(U[i] * U[j], axis=1)
    return SampleStats(dots, Histogram.of(dots, bins, (-1.0, 1.0)), zero)


# ---------------------------------------------------------------------------
# logistic fit


@dataclass
class LogisticFit:
    intercept: float
    slope: float
    degenerate: bool
    iterations: int = 0

    def probability(self, x):
        return 1.0 / (1.0 + np.exp(-(self.intercept + self.slope * np.asarray(x))))


def is_separable(x, y) -> bool:
    """True when a single threshold on x splits the two classes perfectly."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    if y.all() or not y.any():
        return True
    pos, neg = x[y], x[~y]
    return pos.max() < neg.min() or neg.max() < pos.min()


def fit_logistic(x, y, tol: float = 1e-10, max_iter: int = 100) -> LogisticFit:
    """Maximum-likelihood P(y=1|x) = sigmoid(a + b x) by Newton iterations."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size == 0:
        raise ContractError("x and y must be nonempty and of equal length")
    if is_separable(x, y):
        return LogisticFit(math.nan, math.nan, True)
    X = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        wts = p * (1.0 - p)
        grad = X.T @ (y - p)
        hess = (X * wts[:, None]).T @ X
        step = np.linalg.solve(hess, grad)
        beta += step
        if np.max(np.abs(step)) < tol:
            return LogisticFit(float(beta[0]), float(beta[1]), False, it)
    log.warning("logistic Newton iterations did not reach tolerance")
    return LogisticFit(float(beta[0]), float(beta[1]), False, max_iter)


# ---------------------------------------------------------------------------
# jitter / basin study


@dataclass
class JitterTrial:
    index: int
    noise_norm: float
    final_loss: float
    returned: bool
    diverged: bool = False


@dataclass
class JitterResult:
    trials: list[JitterTrial]
    logistic: LogisticFit
    bin_edges: np.ndarray
    bin_medians: np.ndarray
    bin_counts: np.ndarray

    def return_rates(self, groups: int = 5, noise_range=(0.0, 2.0)) -> np.ndarray:
        edges = np.linspace(noise_range[0], noise_range[1], groups + 1)
        x = np.array([t.noise_norm for t in self.trials])
        r = np.array([t.returned for t in self.trials], dtype=float)
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, groups - 1)
        return np.array([r[idx == g].mean() if np.any(idx == g) else math.nan for g in range(groups)])


def jitter_noise(dim: int, seed: int, index: int, noise_range=(0.0, 2.0)) -> np.ndarray:
    """Isotropic direction with norm uniform in noise_range, keyed by (seed, index)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))
    norm = rng.uniform(noise_range[0], noise_range[1])
    v = rng.standard_normal(dim)
    return v * (norm / np.linalg.norm(v))


@dataclass(frozen=True)
class _JitterJob:
    arch: Architecture
    w_global: np.ndarray
    data: Dataset
    cfg: OptimizerConfig
    threshold: float
    index: int
    noise: np.ndarray


def _run_jitter_job(job: _JitterJob) -> JitterTrial:
    norm = float(np.linalg.norm(job.noise))
    try:
        rec = train_from_global(job.arch, job.w_global, job.noise, job.data, job.cfg, job.index)
    except DivergenceError:
        return JitterTrial(job.index, norm, math.inf, False, True)
    return JitterTrial(job.index, norm, rec.final_loss, rec.final_loss < job.threshold)


def jitter_trial(arch, w_global, data, cfg, noise, threshold=1e-6, index=0) -> JitterTrial:
    return _run_jitter_job(_JitterJob(arch, np.asarray(w_global), data, cfg, threshold, index,
                                      np.asarray(noise, dtype=np.float64)))


def binned_medians(x, y, bins: int = 20, range_=(0.0, 2.0)):
    x, y = np.asarray(x), np.asarray(y)
    edges = np.linspace(range_[0], range_[1], bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
    med = np.array([np.median(y[idx == b]) if np.any(idx == b) else math.nan for b in range(bins)])
    counts = np.bincount(idx, minlength=bins)
    return edges, med, counts


def jitter_study(arch: Architecture, w_global, data: Dataset, trial_count: int = 256,
                 noise_range=(0.0, 2.0), cfg: OptimizerConfig = OptimizerConfig(steps=20_000),
                 return_threshold: float = 1e-6, seed: int = 0, jobs: int = 1) -> JitterResult:
    w_global = np.asarray(w_global, dtype=np.float64)
    if loss_mse(arch, w_global, data) >= 1e-10:
        raise ContractError("jitter study must start from a global minimum (loss < 1e-10)")
    jobs_ = [_JitterJob(arch, w_global, data, cfg, return_threshold, i,
                        jitter_noise(arch.param_count, seed, i, noise_range))
             for i in range(trial_count)]
    trials = _map(_run_jitter_job, jobs_, jobs)
    for t in trials:
        if t.diverged:
            log.warning("jitter trial %d diverged; counted as not returned", t.index)
    x = np.array([t.noise_norm for t in trials])
    y = np.array([t.returned for t in trials])
    fit = fit_logistic(x, y)
    losses = np.array([t.final_loss for t in trials])
    edges, med, counts = binned_medians(x, losses, 20, noise_range)
    return JitterResult(trials, fit, edges, med, counts)


# ---------------------------------------------------------------------------
# NEB batches


@dataclass
class NebSummary:
    label: str
    ref_energy: float
    fit_energy: float
    plateau: float
    max_energy: float
    drop_location: float
    converged: bool
    iterations: int
    path: NebPath | None = None
    error: str | None = None


def summarize_path(label: str, path: NebPath) -> NebSummary:
    """Plateau = median energy over the middle half of the arc length.

    ``drop_location`` is the arc-length fraction, measured from the reference
    end, of the last image before the profile first climbs above half the
    plateau level.
    """
    s = path.arc_lengths
    e = path.energies
    total = s[-1]
    if total == 0:
        frac = np.zeros_like(s)
    else:
        frac = s / total
    mid = (frac >= 0.25) & (frac <= 0.75)
    plateau = float(np.median(e[mid])) if mid.any() else float(np.median(e))
    above = np.nonzero(e >= 0.5 * plateau)[0]
    drop = float(frac[above[0]]) if above.size and plateau > 0 else 0.0
    return NebSummary(label, float(e[0]), float(e[-1]), plateau, float(e.max()), drop,
                      path.converged, path.iterations, path)


@dataclass(frozen=True)
class _NebJob:
    arch: Architecture
    data: Dataset
    w_ref: np.ndarray
    w_fit: np.ndarray
    cfg: NebConfig
    label: str


def _run_neb_job(job: _NebJob) -> NebSummary:
    try:
        path = neb_relax(job.arch, job.data, job.w_ref, job.w_fit, job.cfg)
    except Exception as exc:  # one failed band must not sink the batch
        log.warning("NEB path %s failed: %s", job.label, exc)
        nan = math.nan
        return NebSummary(job.label, nan, nan, nan, nan, nan, False, 0, None, str(exc))
    return summarize_path(job.label, path)


def neb_batch(arch: Architecture, data: Dataset, w_ref, fits, cfg: NebConfig = NebConfig(),
              labels=None, jobs: int = 1) -> list[NebSummary]:
    """One band from ``w_ref`` to each fitted weight vector."""
    w_ref = np.asarray(w_ref, dtype=np.float64)
    fits = [np.asarray(f, dtype=np.float64) for f in fits]
    labels = list(labels) if labels is not None else [str(i) for i in range(len(fits))]
    work = [_NebJob(arch, data, w_ref, f, cfg, lab) for f, lab in zip(fits, labels)]
    return _map(_run_neb_job, work, jobs)
