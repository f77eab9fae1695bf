"""Smooth functions of arm means, with exact gradients.

Every functional carries its analytic gradient; central finite differences
are provided purely as a verification oracle.  The argument convention is
fixed globally: for two-argument functionals the point is always
(control mean, treatment mean).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError

DEFAULT_GRADIENT_TOL = 1e-8


@dataclass(frozen=True)
class SmoothFunctional:
    """A function g of K arm means together with its gradient and domain.

    ``fn`` and ``grad_fn`` take a length-K float array; ``domain`` is a
    predicate over the same.  ``locate_violation`` optionally maps an
    out-of-domain point to the offending coordinate for error reporting.
    User-defined functionals are plain instances of this class; exact
    gradients are required because the variance formulas evaluate them at
    both true and estimated means.
    """

    name: str
    arity: int
    fn: Callable[[np.ndarray], float]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    domain: Callable[[np.ndarray], bool]
    locate_violation: Optional[Callable[[np.ndarray], Optional[int]]] = None

    def eval(self, *point: float) -> float:
        return evaluate(self, point)

    def grad(self, *point: float) -> np.ndarray:
        return gradient(self, point)


def _always(_: np.ndarray) -> bool:
    return True


def _positive(x: np.ndarray) -> bool:
    return bool(np.all(x > 0.0))


def _first_nonpositive(x: np.ndarray) -> Optional[int]:
    bad = np.flatnonzero(~(x > 0.0))
    return int(bad[0]) if bad.size else None


def _square_fn(x: np.ndarray) -> float:
    return float(x[0] * x[0])


def _square_grad(x: np.ndarray) -> np.ndarray:
    return np.array([2.0 * x[0]])


def _identity_fn(x: np.ndarray) -> float:
    return float(x[0])


def _identity_grad(x: np.ndarray) -> np.ndarray:
    return np.array([1.0])


def _difference_fn(x: np.ndarray) -> float:
    # x = (control, treatment)
    return float(x[1] - x[0])


def _difference_grad(x: np.ndarray) -> np.ndarray:
    return np.array([-1.0, 1.0])


def _ratio_fn(x: np.ndarray) -> float:
    return float(x[1] / x[0])


def _ratio_grad(x: np.ndarray) -> np.ndarray:
    c, t = float(x[0]), float(x[1])
    return np.array([-t / (c * c), 1.0 / c])


_BUILTINS = {
    "square": SmoothFunctional("square", 1, _square_fn, _square_grad, _always),
    "identity": SmoothFunctional("identity", 1, _identity_fn, _identity_grad, _always),
    "difference": SmoothFunctional("difference", 2, _difference_fn, _difference_grad, _always),
    "ratio": SmoothFunctional("ratio", 2, _ratio_fn, _ratio_grad, _positive, _first_nonpositive),
}

BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin(name: str) -> SmoothFunctional:
    """Look up a built-in functional: square, identity, difference, or ratio.

    square and identity act on a single mean; difference and ratio act on
    (control mean, treatment mean), with difference = treatment - control
    and ratio = treatment / control on strictly positive coordinates.
    """
    try:
        return _BUILTINS[name]
    except KeyError:
        raise DomainError(f"unknown functional {name!r}; known: {', '.join(BUILTIN_NAMES)}") from None


def _as_point(f: SmoothFunctional, point: Sequence[float]) -> np.ndarray:
    x = np.atleast_1d(np.asarray(point, dtype=np.float64))
    if x.size != f.arity:
        raise DomainError(
            f"{f.name} takes {f.arity} coordinate(s), got {x.size}"
        )
    return x


def _check_domain(f: SmoothFunctional, x: np.ndarray) -> None:
    if not f.domain(x):
        coord = f.locate_violation(x) if f.locate_violation is not None else None
        where = f" (coordinate {coord})" if coord is not None else ""
        raise DomainError(
            f"point {tuple(float(v) for v in x)} outside domain of {f.name}{where}",
            coordinate=coord,
        )


def evaluate(f: SmoothFunctional, point: Sequence[float]) -> float:
    """Evaluate g at a point, enforcing the domain predicate."""
    x = _as_point(f, point)
    _check_domain(f, x)
    return float(f.fn(x))


def gradient(f: SmoothFunctional, point: Sequence[float]) -> np.ndarray:
    """Exact analytic gradient of g at a point in its domain."""
    x = _as_point(f, point)
    _check_domain(f, x)
    g = np.asarray(f.grad_fn(x), dtype=np.float64)
    if g.shape != (f.arity,):
        raise DomainError(f"{f.name}.grad returned shape {g.shape}, expected ({f.arity},)")
    return g


def fd_gradient(f: SmoothFunctional, point: Sequence[float], step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, the verification oracle for ``gradient``.

    Uses per-coordinate step ``step * (1 + |x_k|)`` so the relative
    truncation error stays uniform across magnitudes.  Both perturbed
    points must lie in the domain.
    """
    x = _as_point(f, point)
    _check_domain(f, x)
    out = np.empty(f.arity, dtype=np.float64)
    for k in range(f.arity):
        h = step * (1.0 + abs(float(x[k])))
        lo = x.copy()
        hi = x.copy()
        lo[k] -= h
        hi[k] += h
        _check_domain(f, lo)
        _check_domain(f, hi)
        out[k] = (f.fn(hi) - f.fn(lo)) / (2.0 * h)
    return out


def is_degenerate_gradient(grad: np.ndarray, tol: float = DEFAULT_GRADIENT_TOL) -> bool:
    """True when every gradient component is within ``tol`` of zero.

    A degenerate gradient voids the asymptotic normality guarantee, which
    needs at least one component bounded away from zero; variance
    operations surface this as a flag rather than refusing to compute.
    """
    return bool(np.all(np.abs(np.asarray(grad, dtype=np.float64)) < tol))
