"""Sampling and assignment designs.

Two designs are supported and they share one representation: simple random
sampling without replacement (the margin is the sample size n) and complete
randomization (the margin is the treated count n1).  Seeded draws use
counter-based Philox streams keyed by (seed, stream index) so that any
number of parallel workers can draw independent, reproducible assignments
without coordination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterator

import numpy as np

from .errors import DesignError, EnumerationCapError

DEFAULT_ENUM_CAP = 10_000_000

_U64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class Assignment:
    """A binary inclusion/treatment vector with a fixed margin."""

    z: np.ndarray
    margin: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int8)
        if z.ndim != 1:
            raise DesignError("assignment vector must be one-dimensional")
        if not np.all((z == 0) | (z == 1)):
            raise DesignError("assignment vector must be binary")
        if int(z.sum()) != self.margin:
            raise DesignError(
                f"assignment has {int(z.sum())} ones but margin {self.margin}"
            )
        if not 1 <= self.margin <= z.size - 1:
            raise DesignError(
                f"margin {self.margin} leaves an empty group for N={z.size}"
            )
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def n_units(self) -> int:
        return int(self.z.size)

    def to01(self) -> str:
        """Serialize as a 0/1 string, e.g. '1100'."""
        return "".join("1" if v else "0" for v in self.z)


def stream_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the Philox generator for stream ``stream`` of ``seed``.

    Distinct (seed, stream) pairs map to distinct Philox keys, which the
    generator design guarantees to be statistically independent.  This is
    what lets replication workers draw replicate r from stream r and agree
    bit-for-bit with a serial run.
    """
    key = np.array([seed & _U64, stream & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_size(N: int, p: float) -> int:
    """Sample size ceil(p * N), clamped so both groups stay nonempty.

    The ceiling is taken on the decimal value of ``p`` (via its string
    form) so that e.g. p=0.1, N=20 gives 2 and not 3 from binary float
    fuzz.
    """
    if N < 2:
        raise DesignError(f"population size {N} is too small")
    if not 0.0 < p < 1.0:
        raise DesignError(f"sampling proportion must lie in (0,1), got {p}")
    n = math.ceil(Fraction(str(p)) * N)
    return min(max(n, 1), N - 1)


def draw_assignment(N: int, margin: int, seed: int, stream: int = 0) -> Assignment:
    """Draw one assignment uniformly over the C(N, margin) possibilities.

    Deterministic given (seed, stream).  The treated set is the prefix of
    a Fisher-Yates permutation, which is exact (no rejection) and O(N).
    """
    _check_margin(N, margin)
    rng = stream_generator(seed, stream)
    z = np.zeros(N, dtype=np.int8)
    z[rng.permutation(N)[:margin]] = 1
    return Assignment(z, margin)


def design_count(N: int, margin: int) -> int:
    """Number of assignments with the given margin, C(N, margin)."""
    _check_margin(N, margin)
    return math.comb(N, margin)


def iter_treated_indices(N: int, margin: int, cap: int = DEFAULT_ENUM_CAP) -> Iterator[tuple[int, ...]]:
    """Yield every treated-index tuple once, in lexicographic order.

    This is the raw enumeration the exact-distribution oracle consumes;
    ``enumerate_designs`` wraps each tuple in an :class:`Assignment`.
    Raises :class:`EnumerationCapError` up front when C(N, margin)
    exceeds ``cap``.
    """
    count = design_count(N, margin)
    if count > cap:
        raise EnumerationCapError(count, cap)
    return combinations(range(N), margin)


def enumerate_designs(N: int, margin: int, cap: int = DEFAULT_ENUM_CAP) -> Iterator[Assignment]:
    """Yield every assignment exactly once, lexicographic in the one-positions."""
    for treated in iter_treated_indices(N, margin, cap):
        z = np.zeros(N, dtype=np.int8)
        z[list(treated)] = 1
        yield Assignment(z, margin)


def _check_margin(N: int, margin: int) -> None:
    if not 1 <= margin <= N - 1:
        raise DesignError(f"margin must satisfy 1 <= margin <= N-1, got {margin} for N={N}")
