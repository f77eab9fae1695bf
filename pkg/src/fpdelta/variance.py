"""Design-based variance mathematics.

Exact finite-population variances of arm means, the delta-method variance
of a smooth functional of those means (in three algebraically equivalent
representations), the closed form for the treatment/control ratio, the
conservative plug-in estimator that drops the unidentifiable negative
term, and normal-theory intervals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .design import Assignment, _check_margin
from .errors import DegenerateVarianceError, DesignError, DomainError, PopulationFormatError
from .functionals import (
    DEFAULT_GRADIENT_TOL,
    SmoothFunctional,
    gradient,
    is_degenerate_gradient,
)
from .population import PotentialPopulation, moments, transform_outcomes


@dataclass(frozen=True)
class VarianceComponents:
    """The three-term expansion: two positive arm terms and the negative term."""

    term_v0: float
    term_v1: float
    negative_term: float

    def to_dict(self) -> dict:
        return {
            "term_v0": self.term_v0,
            "term_v1": self.term_v1,
            "negative_term": self.negative_term,
        }


@dataclass(frozen=True)
class DeltaVarianceReport:
    """Delta-method variance with its three equivalent representations.

    ``quadratic_form`` contracts the gradient against the exact
    finite-population covariance matrix of the arm means; ``expanded`` is
    the arm-term expansion minus the negative cross term; ``transformed``
    recomputes the same number as the plain difference-in-means variance
    on gradient-rescaled outcomes.  The three agree to floating-point
    roundoff, by algebra; the covariance plug-in is the finite-N matrix,
    not a limit.
    """

    quadratic_form: float
    expanded: float
    transformed: float
    components: VarianceComponents
    gradient_at: tuple[float, ...]
    degenerate_gradient: bool

    def to_dict(self) -> dict:
        return {
            "quadratic_form": self.quadratic_form,
            "expanded": self.expanded,
            "transformed": self.transformed,
            "components": self.components.to_dict(),
            "gradient_at": list(self.gradient_at),
            "degenerate_gradient": self.degenerate_gradient,
        }


@dataclass(frozen=True)
class ObservedArms:
    """Observed arm means and within-arm sample variances (denominator n_z - 1)."""

    ybar0: float
    ybar1: float
    n0: int
    n1: int
    vhat0: float
    vhat1: float

    def __post_init__(self):
        if self.n0 < 2 or self.n1 < 2:
            raise DesignError(
                f"both arms need at least 2 units for a sample variance, got n0={self.n0}, n1={self.n1}"
            )

    def to_dict(self) -> dict:
        return {
            "ybar0": self.ybar0,
            "ybar1": self.ybar1,
            "n0": self.n0,
            "n1": self.n1,
            "vhat0": self.vhat0,
            "vhat1": self.vhat1,
        }


class PluginVariance(NamedTuple):
    """A conservative plug-in variance plus the gradient-degeneracy flag."""

    value: float
    degenerate_gradient: bool


def true_mean_variance(pop: PotentialPopulation, n: int) -> float:
    """Exact design variance of the sample mean under SRSWOR: (1/n - 1/N) v.

    ``v`` is the N-1 population variance; the result matches full
    enumeration of all C(N, n) samples exactly.
    """
    if pop.kind != "survey":
        raise PopulationFormatError("true_mean_variance applies to survey populations")
    _check_margin(pop.n_units, n)
    mom = moments(pop)
    return (1.0 / n - 1.0 / pop.n_units) * mom.v0


def arm_covariance_matrix(pop: PotentialPopulation, n1: int) -> np.ndarray:
    """Exact covariance matrix of (control mean, treated mean), in that order.

    Var(ybar_z) = (1/n_z - 1/N) v_z and Cov(ybar1, ybar0) = -s10 / N;
    the covariance is negative whenever the potential outcomes are
    positively associated because the arms compete for the same units.
    """
    if pop.kind != "experiment":
        raise PopulationFormatError("arm_covariance_matrix requires an experiment population")
    N = pop.n_units
    _check_margin(N, n1)
    n0 = N - n1
    mom = moments(pop)
    var0 = (1.0 / n0 - 1.0 / N) * mom.v0
    var1 = (1.0 / n1 - 1.0 / N) * mom.v1
    cov = -mom.s10 / N
    return np.array([[var0, cov], [cov, var1]])


def _experiment_delta(
    f: SmoothFunctional,
    pop: PotentialPopulation,
    n1: int,
    degeneracy_tol: float,
) -> DeltaVarianceReport:
    N = pop.n_units
    n0 = N - n1
    mom = moments(pop)
    grad = gradient(f, (mom.mean0, mom.mean1))
    g0, g1 = float(grad[0]), float(grad[1])

    cov = arm_covariance_matrix(pop, n1)
    quadratic_form = float(grad @ cov @ grad)

    term_v0 = g0 * g0 * mom.v0 / n0
    term_v1 = g1 * g1 * mom.v1 / n1
    combined = g1 * pop.y1 + g0 * pop.y0
    dev = combined - np.mean(combined)
    negative_term = float(np.dot(dev, dev) / (N * (N - 1)))
    expanded = term_v0 + term_v1 - negative_term

    # The transformed representation scales the control column by -g0:
    # the difference estimator re-negates the control side, so the flip
    # is what makes its variance reproduce the quadratic form.
    tilde = transform_outcomes(pop, -g0, g1)
    tmom = moments(tilde)
    transformed = (
        (1.0 / n0 - 1.0 / N) * tmom.v0
        + (1.0 / n1 - 1.0 / N) * tmom.v1
        + 2.0 * tmom.s10 / N
    )

    return DeltaVarianceReport(
        quadratic_form=quadratic_form,
        expanded=expanded,
        transformed=float(transformed),
        components=VarianceComponents(term_v0, term_v1, negative_term),
        gradient_at=(g0, g1),
        degenerate_gradient=is_degenerate_gradient(grad, degeneracy_tol),
    )


def _survey_delta(
    f: SmoothFunctional,
    pop: PotentialPopulation,
    n: int,
    degeneracy_tol: float,
) -> DeltaVarianceReport:
    N = pop.n_units
    mom = moments(pop)
    grad = gradient(f, (mom.mean0,))
    g = float(grad[0])
    base = true_mean_variance(pop, n)
    quadratic_form = g * g * base

    term_v0 = g * g * mom.v0 / n
    negative_term = g * g * mom.v0 / N
    expanded = term_v0 - negative_term

    scaled = PotentialPopulation("survey", g * pop.y0)
    transformed = true_mean_variance(scaled, n)

    return DeltaVarianceReport(
        quadratic_form=quadratic_form,
        expanded=expanded,
        transformed=transformed,
        components=VarianceComponents(term_v0, 0.0, negative_term),
        gradient_at=(g,),
        degenerate_gradient=is_degenerate_gradient(grad, degeneracy_tol),
    )


def delta_variance(
    f: SmoothFunctional,
    pop: PotentialPopulation,
    n1: int,
    degeneracy_tol: float = DEFAULT_GRADIENT_TOL,
) -> DeltaVarianceReport:
    """Delta-method variance of g(arm means), with all three representations.

    For an experiment population and a two-argument functional this is the
    gradient quadratic form against :func:`arm_covariance_matrix`,
    evaluated at the true means.  A survey population with a one-argument
    functional takes the univariate path g'(mean)^2 (1/n - 1/N) v, with
    the finite-population correction playing the role of the negative
    term.  A gradient with every component below ``degeneracy_tol`` sets
    the ``degenerate_gradient`` flag; the number is still returned because
    only the normality claim fails, not the algebra.
    """
    _check_margin(pop.n_units, n1)
    if pop.kind == "experiment":
        if f.arity != 2:
            raise DomainError(f"experiment population needs a 2-argument functional, got {f.name}")
        return _experiment_delta(f, pop, n1, degeneracy_tol)
    if f.arity != 1:
        raise DomainError(f"survey population needs a 1-argument functional, got {f.name}")
    return _survey_delta(f, pop, n1, degeneracy_tol)


def ratio_variance(pop: PotentialPopulation, n1: int) -> float:
    """Closed-form delta variance of the ratio of arm means.

    (1/c^2) (v1/n1 + (t/c)^2 v0/n0) minus the per-unit heterogeneity sum
    (1/(N(N-1))) sum_i (y0_i/c)^2 (y1_i/y0_i - t/c)^2, where c and t are
    the control and treatment means.  The second term vanishes exactly
    when the unit-level ratios y1_i/y0_i are constant.  Agrees with
    ``delta_variance(builtin('ratio'), ...)`` to roundoff by construction,
    but is computed through an independent code path.
    """
    if pop.kind != "experiment":
        raise PopulationFormatError("ratio_variance requires an experiment population")
    N = pop.n_units
    _check_margin(N, n1)
    n0 = N - n1
    for name, col in (("y0", pop.y0), ("y1", pop.y1)):
        bad = np.flatnonzero(~(col > 0.0))
        if bad.size:
            idx = int(bad[0])
            raise DomainError(
                f"ratio requires strictly positive outcomes; {name}[{idx}] = {col[idx]}",
                index=idx,
            )
    mom = moments(pop)
    c, t = mom.mean0, mom.mean1
    lead = (mom.v1 / n1 + (t * t) / (c * c) * mom.v0 / n0) / (c * c)
    per_unit = (pop.y0 / c) ** 2 * (pop.y1 / pop.y0 - t / c) ** 2
    return float(lead - per_unit.sum() / (N * (N - 1)))


def observed_arms(pop: PotentialPopulation, z: Assignment) -> ObservedArms:
    """Observed arm means and within-arm sample variances for one assignment.

    Treated units reveal y1, control units reveal y0; each arm needs at
    least 2 units for its sample variance to exist.
    """
    if pop.kind != "experiment":
        raise PopulationFormatError("observed_arms requires an experiment population")
    if z.n_units != pop.n_units:
        raise DesignError(f"assignment has {z.n_units} units, population {pop.n_units}")
    treated = z.z == 1
    n1 = int(z.margin)
    n0 = pop.n_units - n1
    if n1 < 2 or n0 < 2:
        raise DesignError(f"each arm needs at least 2 units, got n1={n1}, n0={n0}")
    y1 = pop.y1[treated]
    y0 = pop.y0[~treated]
    return ObservedArms(
        ybar0=float(np.mean(y0)),
        ybar1=float(np.mean(y1)),
        n0=n0,
        n1=n1,
        vhat0=float(np.var(y0, ddof=1)),
        vhat1=float(np.var(y1, ddof=1)),
    )


def neyman_plugin_variance(
    obs: ObservedArms,
    f: SmoothFunctional,
    degeneracy_tol: float = DEFAULT_GRADIENT_TOL,
) -> PluginVariance:
    """Conservative plug-in variance estimate for g(arm means).

    grad_0^2 vhat0/n0 + grad_1^2 vhat1/n1 with the gradient evaluated at
    the observed means.  The negative cross term is dropped because it
    needs both potential outcomes of the same unit, which no assignment
    reveals; dropping it over-states the variance in expectation.
    """
    if f.arity != 2:
        raise DomainError(f"plug-in variance needs a 2-argument functional, got {f.name}")
    grad = gradient(f, (obs.ybar0, obs.ybar1))
    g0, g1 = float(grad[0]), float(grad[1])
    value = g0 * g0 * obs.vhat0 / obs.n0 + g1 * g1 * obs.vhat1 / obs.n1
    return PluginVariance(value, is_degenerate_gradient(grad, degeneracy_tol))


def survey_plugin_variance(
    ybar: float,
    vhat: float,
    n: int,
    f: SmoothFunctional,
    degeneracy_tol: float = DEFAULT_GRADIENT_TOL,
) -> PluginVariance:
    """Univariate analogue of the conservative plug-in: g'(ybar)^2 vhat / n.

    Drops the finite-population correction, the univariate counterpart of
    the negative term, so it over-covers the same way.
    """
    if f.arity != 1:
        raise DomainError(f"survey plug-in needs a 1-argument functional, got {f.name}")
    grad = gradient(f, (ybar,))
    g = float(grad[0])
    return PluginVariance(g * g * vhat / n, is_degenerate_gradient(grad, degeneracy_tol))


def standardized_statistic(estimate: float, truth: float, variance: float) -> float:
    """(estimate - truth) / sqrt(variance); the quantity the limit claims standardize."""
    if not variance > 0.0:
        raise DegenerateVarianceError(
            f"standardization needs a positive variance, got {variance}"
        )
    return (estimate - truth) / np.sqrt(variance)


def normal_quantile(level: float) -> float:
    """Two-sided standard-normal quantile at the given coverage level."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"confidence level must lie in (0,1), got {level}")
    return float(ndtri(0.5 * (1.0 + level)))


def confidence_interval(
    estimate: float, variance_hat: float, level: float
) -> tuple[float, float]:
    """Normal-theory interval: estimate +/- q * sqrt(variance_hat)."""
    if variance_hat < 0.0:
        raise DegenerateVarianceError(f"variance estimate must be >= 0, got {variance_hat}")
    q = normal_quantile(level)
    half = q * float(np.sqrt(variance_hat))
    return (estimate - half, estimate + half)
