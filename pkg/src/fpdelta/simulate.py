"""Exact and Monte Carlo study of randomization distributions.

The exact path enumerates every assignment and is the oracle the variance
formulas are checked against; the Monte Carlo path replicates seeded
assignments, standardizes by the true delta-method variance, and measures
distance to the standard normal plus interval coverage.

Determinism contract: replicate r always draws from Philox stream
(seed, r), and every aggregation is order-independent, so worker count
changes wall time only, never a single output bit.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import chain, islice
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .design import DEFAULT_ENUM_CAP, design_count, iter_treated_indices, stream_generator
from .errors import (
    DegenerateVarianceError,
    DesignError,
    DomainError,
    ReplicationFailureError,
)
from .functionals import SmoothFunctional
from .population import PotentialPopulation, moments
from .variance import delta_variance, normal_quantile

MAX_FAILURE_RATE = 1e-3
_CHUNK_ROWS = 65536


@dataclass(frozen=True)
class ExactDistribution:
    """The full randomization distribution of an estimator, exactly.

    ``values``/``probabilities`` list the distinct estimator values with
    their exact probabilities; ``mean`` and ``variance`` are probability
    weighted over all ``count`` = C(N, margin) equally likely assignments.
    """

    values: np.ndarray
    probabilities: np.ndarray
    mean: float
    variance: float
    count: int

    def __post_init__(self):
        total = float(np.sum(self.probabilities))
        if abs(total - 1.0) > 1e-12:
            raise DegenerateVarianceError(f"probabilities sum to {total}, expected 1")
        if self.variance < 0.0:
            raise DegenerateVarianceError(f"variance must be >= 0, got {self.variance}")

    @property
    def support(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.probabilities.tolist()))

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "variance": self.variance,
            "support": [
                {"value": v, "probability": p} for v, p in self.support
            ],
        }


@dataclass(frozen=True)
class ReplicationDraws:
    """Per-replicate estimates, plug-in variances, and standardized values.

    Failed replicates (domain violations at the realized arm means) hold
    NaN in every column so that row r always corresponds to stream r.
    """

    estimates: np.ndarray
    plugin_variances: np.ndarray
    standardized: np.ndarray
    n_failures: int
    truth: float
    true_variance: float

    @property
    def ok(self) -> np.ndarray:
        return ~np.isnan(self.estimates)


@dataclass(frozen=True)
class MonteCarloSummary:
    """Aggregate view of a replication run.

    ``ks_distance`` is None only when the true variance is zero and
    standardization is undefined (a degenerate population on the coverage
    path).  ``wall_time`` is informational and excluded from serialized
    reports so identical runs produce identical bytes.
    """

    replications: int
    estimates_mean: float
    estimates_var: float
    ks_distance: Optional[float]
    coverage: Optional[float]
    n_failures: int
    seed: int
    wall_time: float

    def __post_init__(self):
        if self.ks_distance is not None and not 0.0 <= self.ks_distance <= 1.0:
            raise DegenerateVarianceError(f"ks_distance outside [0,1]: {self.ks_distance}")
        if self.coverage is not None and not 0.0 <= self.coverage <= 1.0:
            raise DegenerateVarianceError(f"coverage outside [0,1]: {self.coverage}")

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "replications": self.replications,
            "estimates_mean": self.estimates_mean,
            "estimates_var": self.estimates_var,
            "ks_distance": self.ks_distance,
            "coverage": self.coverage,
            "n_failures": self.n_failures,
            "seed": self.seed,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out


_VECTOR_EVAL = {
    "identity": lambda pts: pts[:, 0].copy(),
    "square": lambda pts: pts[:, 0] ** 2,
    "difference": lambda pts: pts[:, 1] - pts[:, 0],
    "ratio": lambda pts: pts[:, 1] / pts[:, 0],
}


def _domain_mask(f: SmoothFunctional, pts: np.ndarray) -> np.ndarray:
    if f.domain.__name__ == "_always":
        return np.ones(pts.shape[0], dtype=bool)
    if f.domain.__name__ == "_positive":
        return np.all(pts > 0.0, axis=1)
    return np.fromiter((f.domain(p) for p in pts), dtype=bool, count=pts.shape[0])


def _eval_rows(f: SmoothFunctional, pts: np.ndarray) -> np.ndarray:
    fast = _VECTOR_EVAL.get(f.name)
    if fast is not None:
        return fast(pts)
    return np.fromiter((f.fn(p) for p in pts), dtype=np.float64, count=pts.shape[0])


def _assignment_string(N: int, margin: int, index: int) -> str:
    treated = next(islice(iter_treated_indices(N, margin, cap=2**63), index, None))
    z = ["0"] * N
    for i in treated:
        z[i] = "1"
    return "".join(z)


def exact_distribution(
    pop: PotentialPopulation,
    f: SmoothFunctional,
    margin: int,
    cap: int = DEFAULT_ENUM_CAP,
) -> ExactDistribution:
    """Enumerate every assignment and return the estimator's exact distribution.

    Survey populations feed the sample mean to a one-argument functional;
    experiments feed (control mean, treated mean) to a two-argument one.
    A domain violation at any assignment aborts with the offending
    assignment identified.  Memory is one float per assignment.
    """
    N = pop.n_units
    count = design_count(N, margin)  # validates the margin
    combos = iter_treated_indices(N, margin, cap)

    expected_arity = 2 if pop.kind == "experiment" else 1
    if f.arity != expected_arity:
        raise DomainError(
            f"{pop.kind} population needs a {expected_arity}-argument functional, got {f.name}"
        )

    y0 = pop.y0
    n0 = N - margin
    if pop.kind == "experiment":
        y1 = pop.y1
        y0_total = float(y0.sum())

    values = np.empty(count, dtype=np.float64)
    done = 0
    while done < count:
        rows = min(_CHUNK_ROWS, count - done)
        idx = np.fromiter(
            chain.from_iterable(islice(combos, rows)), dtype=np.intp, count=rows * margin
        ).reshape(rows, margin)
        if pop.kind == "survey":
            pts = (y0[idx].sum(axis=1) / margin)[:, None]
        else:
            ybar1 = y1[idx].sum(axis=1) / margin
            ybar0 = (y0_total - y0[idx].sum(axis=1)) / n0
            pts = np.column_stack([ybar0, ybar1])
        ok = _domain_mask(f, pts)
        if not ok.all():
            bad = done + int(np.flatnonzero(~ok)[0])
            raise DomainError(
                f"assignment {_assignment_string(N, margin, bad)} (index {bad}) "
                f"yields arm means {tuple(pts[bad - done])} outside domain of {f.name}"
            )
        values[done : done + rows] = _eval_rows(f, pts)
        done += rows

    mean = float(np.mean(values))
    dev = values - mean
    variance = float(np.dot(dev, dev) / count)
    uvals, counts = np.unique(values, return_counts=True)
    return ExactDistribution(uvals, counts / count, mean, variance, count)


def _truth_and_variance(
    pop: PotentialPopulation, f: SmoothFunctional, margin: int
) -> tuple[float, float]:
    mom = moments(pop)
    point = (mom.mean0, mom.mean1) if pop.kind == "experiment" else (mom.mean0,)
    truth = float(f.fn(np.asarray(point)))
    report = delta_variance(f, pop, margin)  # validates kind/arity/domain
    return truth, report.quadratic_form


def _replicate_chunk(
    pop: PotentialPopulation,
    f: SmoothFunctional,
    margin: int,
    seed: int,
    start: int,
    stop: int,
    truth: float,
    true_sd: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run replicates [start, stop); NaN rows mark domain failures."""
    N = pop.n_units
    n0 = N - margin
    experiment = pop.kind == "experiment"
    y0 = pop.y0
    y1 = pop.y1 if experiment else None
    count = stop - start
    estimates = np.full(count, np.nan)
    plugins = np.full(count, np.nan)
    standardized = np.full(count, np.nan)

    for i in range(count):
        rng = stream_generator(seed, start + i)
        perm = rng.permutation(N)
        if experiment:
            y1s = y1[perm[:margin]]
            y0s = y0[perm[margin:]]
            point = np.array([y0s.mean(), y1s.mean()])
            if not f.domain(point):
                continue
            grad = f.grad_fn(point)
            plug = (
                float(grad[0]) ** 2 * y0s.var(ddof=1) / n0
                + float(grad[1]) ** 2 * y1s.var(ddof=1) / margin
            )
        else:
            ys = y0[perm[:margin]]
            point = np.array([ys.mean()])
            if not f.domain(point):
                continue
            grad = f.grad_fn(point)
            plug = float(grad[0]) ** 2 * ys.var(ddof=1) / margin
        estimates[i] = f.fn(point)
        plugins[i] = plug
        if true_sd > 0.0:
            standardized[i] = (estimates[i] - truth) / true_sd
    return estimates, plugins, standardized


def replicate(
    pop: PotentialPopulation,
    f: SmoothFunctional,
    margin: int,
    R: int,
    seed: int,
    workers: int = 1,
    allow_degenerate: bool = False,
) -> ReplicationDraws:
    """Draw R independent seeded assignments and evaluate the estimator on each.

    Per replicate: the point estimate, the conservative plug-in variance,
    and the estimate standardized by the square root of the true
    delta-method variance.  Replicate r uses stream (seed, r), so results
    are identical for any worker count and reproducible one replicate at a
    time.  Domain-violating replicates become NaN rows; more than
    ``MAX_FAILURE_RATE`` of them aborts the run.
    """
    if R < 1:
        raise DesignError(f"need at least one replication, got {R}")
    if workers < 1:
        raise DesignError(f"worker count must be >= 1, got {workers}")
    N = pop.n_units
    n0 = N - margin
    if margin < 2 or n0 < 2:
        raise DesignError(
            f"plug-in variances need both groups >= 2 units, got margin={margin}, N={N}"
        )
    truth, true_variance = _truth_and_variance(pop, f, margin)
    if true_variance <= 0.0 and not allow_degenerate:
        raise DegenerateVarianceError(
            "true variance is zero; standardized draws are undefined"
        )
    true_sd = float(np.sqrt(true_variance)) if true_variance > 0.0 else 0.0

    if workers == 1 or R < 2 * workers:
        chunks = [_replicate_chunk(pop, f, margin, seed, 0, R, truth, true_sd)]
    else:
        size = max(1, -(-R // (4 * workers)))
        spans = [(start, min(start + size, R)) for start in range(0, R, size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(
                pool.map(
                    _replicate_chunk,
                    *zip(*[(pop, f, margin, seed, a, b, truth, true_sd) for a, b in spans]),
                )
            )

    estimates = np.concatenate([c[0] for c in chunks])
    plugins = np.concatenate([c[1] for c in chunks])
    standardized = np.concatenate([c[2] for c in chunks])
    n_failures = int(np.isnan(estimates).sum())
    if n_failures > MAX_FAILURE_RATE * R:
        raise ReplicationFailureError(n_failures, R, MAX_FAILURE_RATE)
    return ReplicationDraws(estimates, plugins, standardized, n_failures, truth, true_variance)


def ks_distance(draws) -> float:
    """Sup distance between the empirical CDF of the draws and N(0, 1).

    Checks both one-sided gaps at every sorted draw, so a single draw at
    the median scores 0.5 and a point mass far in the tail scores ~1.
    """
    x = np.sort(np.asarray(draws, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("ks_distance needs at least one draw")
    cdf = ndtr(x)
    steps = np.arange(1, n + 1) / n
    return float(np.max(np.maximum(steps - cdf, cdf - (steps - 1.0 / n))))


def monte_carlo(
    pop: PotentialPopulation,
    f: SmoothFunctional,
    margin: int,
    R: int,
    seed: int,
    level: Optional[float] = None,
    workers: int = 1,
) -> MonteCarloSummary:
    """Replicate and aggregate: moments of the estimates, KS distance, coverage.

    With ``level`` given, also the fraction of replicates whose plug-in
    normal interval contains the true value (inclusive, so zero-width
    intervals at the truth count).  Failed replicates are excluded from
    every aggregate and counted.
    """
    t0 = time.perf_counter()
    draws = replicate(
        pop, f, margin, R, seed, workers=workers, allow_degenerate=level is not None
    )
    ok = draws.ok
    est = draws.estimates[ok]
    if est.size == 0:
        raise ReplicationFailureError(R, R, MAX_FAILURE_RATE)

    ks: Optional[float] = None
    if draws.true_variance > 0.0:
        ks = ks_distance(draws.standardized[ok])

    cover: Optional[float] = None
    if level is not None:
        q = normal_quantile(level)
        half = q * np.sqrt(draws.plugin_variances[ok])
        cover = float(
            np.mean((est - half <= draws.truth) & (draws.truth <= est + half))
        )

    return MonteCarloSummary(
        replications=R,
        estimates_mean=float(np.mean(est)),
        estimates_var=float(np.var(est, ddof=1)) if est.size > 1 else 0.0,
        ks_distance=ks,
        coverage=cover,
        n_failures=draws.n_failures,
        seed=seed,
        wall_time=time.perf_counter() - t0,
    )


def coverage(
    pop: PotentialPopulation,
    f: SmoothFunctional,
    margin: int,
    R: int,
    level: float,
    seed: int,
    workers: int = 1,
) -> MonteCarloSummary:
    """Empirical coverage of plug-in normal intervals at the given level."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"confidence level must lie in (0,1), got {level}")
    return monte_carlo(pop, f, margin, R, seed, level=level, workers=workers)
