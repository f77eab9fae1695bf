"""Runnable diagnostics for the regularity conditions behind the limit claims.

The normal limits hold along sequences of growing populations provided a
max-over-mean-square condition ratio vanishes and the scaled variances
stabilize.  Nothing here proves convergence; the trace reports finite-k
values and simple trend verdicts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .design import sample_size, stream_generator, _check_margin
from .errors import DegenerateVarianceError, DesignError, PopulationFormatError
from .population import PotentialPopulation, moments

STABILITY_TOL = 0.05


@dataclass(frozen=True)
class PopulationSequence:
    """A growing family of populations plus the design rule applied to each.

    ``generator`` maps an index k >= 1 to a population; sizes must be
    strictly increasing in k.  ``design_rule`` maps a population size N to
    the margin (sample size or treated count) used at that size.
    """

    generator: Callable[[int], PotentialPopulation]
    design_rule: Callable[[int], int]
    description: str = ""


@dataclass(frozen=True)
class ConditionRow:
    k: int
    n_units: int
    margin: int
    ratio: float
    aux: dict

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_units": self.n_units,
            "margin": self.margin,
            "ratio": self.ratio,
            "aux": dict(self.aux),
        }


@dataclass(frozen=True)
class ConditionTrace:
    """Per-k condition ratios with trend verdicts.

    ``decreasing`` is the strict monotone-decrease verdict for the ratio
    over the requested ks.  ``stabilized`` applies the limiting-value
    heuristic (relative change across the final doubling below 5%) to each
    auxiliary series; it is a trend report, not a convergence proof.
    """

    rows: tuple[ConditionRow, ...]
    decreasing: bool
    stabilized: dict

    def to_dict(self) -> dict:
        return {
            "rows": [row.to_dict() for row in self.rows],
            "decreasing": self.decreasing,
            "stabilized": dict(self.stabilized),
        }

    def to_csv(self) -> str:
        """Flatten the trace to CSV (one row per k) for external plotting."""
        aux_keys = sorted({key for row in self.rows for key in row.aux})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "n_units", "margin", "ratio", *aux_keys])
        for row in self.rows:
            writer.writerow(
                [row.k, row.n_units, row.margin, repr(row.ratio)]
                + [repr(row.aux[key]) if key in row.aux else "" for key in aux_keys]
            )
        return buf.getvalue()


def tile_population(base: PotentialPopulation, k: int) -> PotentialPopulation:
    """Concatenate k copies of a population.

    Tiling keeps the mean and the max squared deviation fixed while the
    N-1 variance drifts toward the base population variance, which makes
    the condition ratio shrink like 1/k; that is what makes it the
    canonical growth scheme for checking the limit claims by exact
    arithmetic.
    """
    if k < 1:
        raise DesignError(f"tile count must be >= 1, got {k}")
    y0 = np.tile(base.y0, k)
    y1 = np.tile(base.y1, k) if base.kind == "experiment" else None
    return PotentialPopulation(base.kind, y0, y1)


def univariate_condition(pop: PotentialPopulation, n: int) -> float:
    """Condition ratio m / (min(n, N-n) v) for the sample-mean limit."""
    if pop.kind != "survey":
        raise PopulationFormatError("univariate_condition applies to survey populations")
    _check_margin(pop.n_units, n)
    mom = moments(pop)
    if mom.v0 <= 0.0:
        raise DegenerateVarianceError("condition ratio undefined for a constant population")
    return mom.m0 / (min(n, pop.n_units - n) * mom.v0)


def bivariate_condition(pop: PotentialPopulation, n1: int) -> float:
    """Two-arm condition ratio max_z m_z / n_z^2 over the combined variance scale.

    The denominator is (1/n1 - 1/N) v1 + (1/n0 - 1/N) v0; a constant arm
    contributes m_z = 0 and simply drops out of the max.
    """
    if pop.kind != "experiment":
        raise PopulationFormatError("bivariate_condition requires an experiment population")
    N = pop.n_units
    _check_margin(N, n1)
    n0 = N - n1
    mom = moments(pop)
    denom = (1.0 / n1 - 1.0 / N) * mom.v1 + (1.0 / n0 - 1.0 / N) * mom.v0
    if denom <= 0.0:
        raise DegenerateVarianceError("condition ratio undefined when both arms are constant")
    return max(mom.m1 / (n1 * n1), mom.m0 / (n0 * n0)) / denom


def _aux_record(pop: PotentialPopulation, margin: int) -> dict:
    N = pop.n_units
    mom = moments(pop)
    if pop.kind == "survey":
        return {"n_var": N * (1.0 / margin - 1.0 / N) * mom.v0}
    n0 = N - margin
    var0 = (1.0 / n0 - 1.0 / N) * mom.v0
    var1 = (1.0 / margin - 1.0 / N) * mom.v1
    cov = -mom.s10 / N
    corr = cov / np.sqrt(var0 * var1) if var0 > 0.0 and var1 > 0.0 else float("nan")
    return {
        "n_var0": N * var0,
        "n_var1": N * var1,
        "correlation": float(corr),
    }


def _final_doubling_change(ks: Sequence[int], values: Sequence[float]) -> float:
    """Relative change between the last value and the one at roughly half its k."""
    last_k = ks[-1]
    ref = 0
    for i, k in enumerate(ks[:-1]):
        if k <= last_k / 2:
            ref = i
    prev = values[ref]
    if not np.isfinite(prev) or not np.isfinite(values[-1]):
        return float("inf")
    scale = max(abs(prev), np.finfo(float).tiny)
    return abs(values[-1] - prev) / scale


def condition_trace(seq: PopulationSequence, ks: Sequence[int]) -> ConditionTrace:
    """Evaluate the applicable condition ratio along a population sequence.

    One row per requested k, with auxiliary series N*Var(arm mean) and,
    for experiments, the finite-N correlation of the arm means.
    """
    ks = [int(k) for k in ks]
    if not ks:
        raise DesignError("need at least one sequence index")
    if sorted(set(ks)) != ks:
        raise DesignError("sequence indices must be strictly increasing")

    rows = []
    last_size: Optional[int] = None
    for k in ks:
        pop = seq.generator(k)
        if last_size is not None and pop.n_units <= last_size:
            raise DesignError(
                f"population size must strictly increase in k (k={k} gave N={pop.n_units})"
            )
        last_size = pop.n_units
        margin = int(seq.design_rule(pop.n_units))
        if pop.kind == "survey":
            ratio = univariate_condition(pop, margin)
        else:
            ratio = bivariate_condition(pop, margin)
        rows.append(ConditionRow(k, pop.n_units, margin, ratio, _aux_record(pop, margin)))

    ratios = [row.ratio for row in rows]
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))

    stabilized: dict = {}
    if len(rows) >= 2:
        for key in sorted(rows[0].aux):
            series = [row.aux[key] for row in rows]
            stabilized[key] = bool(_final_doubling_change(ks, series) < STABILITY_TOL)
    return ConditionTrace(tuple(rows), decreasing, stabilized)


def tiled_sequence(base: PotentialPopulation, p: float, description: str = "") -> PopulationSequence:
    """Sequence of k-fold tilings of a base population with margin ceil(p N)."""
    return PopulationSequence(
        generator=lambda k: tile_population(base, k),
        design_rule=lambda N: sample_size(N, p),
        description=description or f"tiled {base.kind} population, base N={base.n_units}, p={p}",
    )


def lognormal_sequence(
    base_size: int,
    p: float,
    *,
    kind: str = "experiment",
    sigma: float = 0.5,
    effect: float = 1.5,
    noise: float = 0.1,
    seed: int = 0,
    description: str = "",
) -> PopulationSequence:
    """Parametric growth scheme with strictly positive lognormal outcomes.

    Population k has base_size * k units with y0 = exp(sigma Z) and, for
    experiments, y1 = effect * y0 * exp(noise W).  Pure given (k, seed):
    regenerating any k reproduces the same population bit for bit.
    """
    if base_size < 2:
        raise DesignError(f"base_size must be >= 2, got {base_size}")
    if kind not in ("survey", "experiment"):
        raise PopulationFormatError(f"unknown population kind {kind!r}")

    def generate(k: int) -> PotentialPopulation:
        rng = stream_generator(seed, k)
        n = base_size * k
        y0 = np.exp(sigma * rng.standard_normal(n))
        if kind == "survey":
            return PotentialPopulation("survey", y0)
        y1 = effect * y0 * np.exp(noise * rng.standard_normal(n))
        return PotentialPopulation("experiment", y0, y1)

    return PopulationSequence(
        generator=generate,
        design_rule=lambda N: sample_size(N, p),
        description=description or f"lognormal {kind} population, base N={base_size}, p={p}",
    )
