"""Fixed finite populations and their exact moments.

A population is a frozen data object: one outcome column for a sampling
("survey") population, or two potential-outcome columns for a two-arm
experiment.  All randomness downstream comes from the sampling or
assignment indicator, never from the outcomes themselves.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import PopulationFormatError

KINDS = ("survey", "experiment")


def _frozen_array(values: Iterable[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise PopulationFormatError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise PopulationFormatError(f"{name}[{bad}] is not finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PotentialPopulation:
    """A fixed finite population of N units.

    ``y0`` holds the survey outcome (survey kind) or the control potential
    outcome (experiment kind); ``y1`` holds the treatment potential outcome
    and is present exactly when ``kind == "experiment"``.  Labels are
    carried for reporting only and never enter any computation.
    """

    kind: str
    y0: np.ndarray
    y1: Optional[np.ndarray] = None
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PopulationFormatError(f"unknown population kind {self.kind!r}")
        object.__setattr__(self, "y0", _frozen_array(self.y0, "y0"))
        if self.y0.size < 2:
            raise PopulationFormatError("population must have at least 2 units")
        if self.kind == "experiment":
            if self.y1 is None:
                raise PopulationFormatError("experiment population requires a y1 column")
            object.__setattr__(self, "y1", _frozen_array(self.y1, "y1"))
            if self.y1.size != self.y0.size:
                raise PopulationFormatError(
                    f"y0 has {self.y0.size} units but y1 has {self.y1.size}"
                )
        elif self.y1 is not None:
            raise PopulationFormatError("survey population cannot carry a y1 column")
        if self.labels is not None:
            labels = tuple(str(v) for v in self.labels)
            if len(labels) != self.y0.size:
                raise PopulationFormatError("labels length does not match population size")
            object.__setattr__(self, "labels", labels)

    @property
    def n_units(self) -> int:
        return int(self.y0.size)

    @classmethod
    def survey(cls, y0: Sequence[float], labels: Optional[Sequence[str]] = None) -> "PotentialPopulation":
        return cls("survey", np.asarray(y0, dtype=np.float64), None,
                   tuple(labels) if labels is not None else None)

    @classmethod
    def experiment(cls, y0: Sequence[float], y1: Sequence[float],
                   labels: Optional[Sequence[str]] = None) -> "PotentialPopulation":
        return cls("experiment", np.asarray(y0, dtype=np.float64),
                   np.asarray(y1, dtype=np.float64),
                   tuple(labels) if labels is not None else None)


@dataclass(frozen=True)
class Moments:
    """Population-level moments: means, N-1 variances, max squared deviations.

    ``v0``/``v1`` are finite-population variances with denominator N-1,
    ``m0``/``m1`` are the maximum squared deviations from the mean, and
    ``s10`` is the N-1 cross moment between the two potential-outcome
    columns (experiment kind only).  The convention matters: every
    downstream variance formula assumes the N-1 denominators.
    """

    n_units: int
    mean0: float
    v0: float
    m0: float
    mean1: Optional[float] = None
    v1: Optional[float] = None
    m1: Optional[float] = None
    s10: Optional[float] = None

    def to_dict(self) -> dict:
        out = {"n_units": self.n_units, "mean0": self.mean0, "v0": self.v0, "m0": self.m0}
        if self.mean1 is not None:
            out.update(mean1=self.mean1, v1=self.v1, m1=self.m1, s10=self.s10)
        return out


def _column_moments(y: np.ndarray) -> tuple[float, float, float, np.ndarray]:
    # Two-pass on purpose: mean first, then deviations.
    mean = float(np.mean(y))
    dev = y - mean
    n = y.size
    v = float(np.dot(dev, dev) / (n - 1))
    m = float(np.max(dev * dev))
    return mean, v, m, dev


def moments(pop: PotentialPopulation) -> Moments:
    """Compute all exact population moments in one pass over the data.

    Returns means, the N-1 variances ``v``, the maximum squared deviations
    ``m``, and (for experiments) the N-1 cross moment ``s10``.  A constant
    column yields v = m = 0 exactly.
    """
    mean0, v0, m0, dev0 = _column_moments(pop.y0)
    if pop.kind == "survey":
        return Moments(pop.n_units, mean0, v0, m0)
    mean1, v1, m1, dev1 = _column_moments(pop.y1)
    s10 = float(np.dot(dev1, dev0) / (pop.n_units - 1))
    return Moments(pop.n_units, mean0, v0, m0, mean1, v1, m1, s10)


def transform_outcomes(pop: PotentialPopulation, grad0: float, grad1: float) -> PotentialPopulation:
    """Rescale both potential-outcome columns elementwise.

    Produces the experiment population with outcomes ``grad0 * y0`` and
    ``grad1 * y1``; on it, the plain difference-in-means variance
    reproduces the delta-method variance of a smooth functional whose
    gradient components are (grad0, grad1) up to the sign convention the
    variance module applies.
    """
    if pop.kind != "experiment":
        raise PopulationFormatError("transform_outcomes requires an experiment population")
    return PotentialPopulation(
        "experiment", grad0 * pop.y0, grad1 * pop.y1, pop.labels
    )


def load_population(
    source: Union[str, Path, IO[str]],
    kind: Optional[str] = None,
) -> PotentialPopulation:
    """Read a population from CSV with header ``id,y0`` or ``id,y0,y1``.

    ``kind`` is inferred from the columns unless given explicitly, in which
    case it must agree with them.  Errors report the offending file line.
    """
    if kind is not None and kind not in KINDS:
        raise PopulationFormatError(f"unknown population kind {kind!r}")
    if hasattr(source, "read"):
        return _parse_csv(source, kind)
    with open(source, "r", encoding="utf-8", newline="") as handle:
        return _parse_csv(handle, kind)


def _parse_csv(stream: IO[str], kind: Optional[str]) -> PotentialPopulation:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise PopulationFormatError("empty population file", line=1) from None
    header = [h.strip().lower() for h in header]
    if header == ["id", "y0"]:
        has_y1 = False
    elif header == ["id", "y0", "y1"]:
        has_y1 = True
    else:
        raise PopulationFormatError(
            f"expected header 'id,y0' or 'id,y0,y1', got {','.join(header)!r}", line=1
        )

    inferred = "experiment" if has_y1 else "survey"
    if kind is not None and kind != inferred:
        raise PopulationFormatError(
            f"file columns imply kind {inferred!r} but kind {kind!r} was requested", line=1
        )

    labels: list[str] = []
    y0: list[float] = []
    y1: list[float] = []
    expected = 3 if has_y1 else 2
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != expected:
            raise PopulationFormatError(
                f"row at line {lineno} has {len(row)} cells, expected {expected}", line=lineno
            )
        labels.append(row[0].strip())
        try:
            y0.append(float(row[1]))
            if has_y1:
                y1.append(float(row[2]))
        except ValueError:
            raise PopulationFormatError(
                f"row at line {lineno} has a non-numeric outcome", line=lineno
            ) from None

    if len(y0) < 2:
        raise PopulationFormatError(f"population has {len(y0)} units, need at least 2")
    if has_y1:
        return PotentialPopulation.experiment(y0, y1, labels)
    return PotentialPopulation.survey(y0, labels)


def population_to_csv(pop: PotentialPopulation) -> str:
    """Serialize a population back to the CSV interchange format."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if pop.kind == "experiment":
        writer.writerow(["id", "y0", "y1"])
        for i in range(pop.n_units):
            label = pop.labels[i] if pop.labels else str(i + 1)
            writer.writerow([label, repr(float(pop.y0[i])), repr(float(pop.y1[i]))])
    else:
        writer.writerow(["id", "y0"])
        for i in range(pop.n_units):
            label = pop.labels[i] if pop.labels else str(i + 1)
            writer.writerow([label, repr(float(pop.y0[i]))])
    return buf.getvalue()
