"""Brute-force Monte Carlo conditional means computed straight from the paths.

Nothing here looks at transition rates or forward-equation solutions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .errors import EmptyCellError, ValidationError
from .estimate import ConditioningScheme
from .simulate import Path, PathEnsemble

logger = logging.getLogger(__name__)

ROUNDING_TOL = 1e-12


@dataclass(frozen=True)
class OracleEstimate:
    """Sample mean of a path functional over one conditioning cell and its standard error."""
    mean: float
    standard_error: float
    n_paths: int
    label: str = ""

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValidationError(f"an estimate needs at least two paths, got {self.n_paths}", field="ensemble.n_paths")

    @classmethod
    def from_samples(cls, samples, label: str = "") -> "OracleEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        if n < 2:
            raise ValidationError(f"an estimate needs at least two paths, got {n}", field="ensemble.n_paths")
        return cls(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n)), n, label)


@dataclass(frozen=True)
class ComparisonResult:
    passed: bool
    z: float
    difference: float
    allowance: float

    def to_dict(self) -> Dict[str, float]:
        return {"passed": self.passed, "z": self.z, "difference": self.difference, "allowance": self.allowance}


def mc_conditional_mean(paths: PathEnsemble, scheme: ConditioningScheme, label: str,
                        functional: Callable, vectorized: bool = False) -> OracleEstimate:
    """Mean and standard error of ``functional`` over the paths carrying ``label``.

    ``functional`` maps a :class:`~pyfwdrates.simulate.Path` to a number, or, with
    ``vectorized=True``, a :class:`~pyfwdrates.simulate.PathEnsemble` to an array of numbers.

    Raises
    ------
    EmptyCellError
        No path carries ``label``.
    """
    cell = paths.select(scheme.mask(paths, label))
    if len(cell) == 0:
        raise EmptyCellError(label)
    if vectorized:
        samples = np.asarray(functional(cell), dtype=float)
    else:
        samples = np.fromiter((functional(path) for path in cell), dtype=float, count=len(cell))
    estimate = OracleEstimate.from_samples(samples, label)
    logger.debug(f"oracle for {label!r}: {estimate.mean:.6g} +- {estimate.standard_error:.2g} ({estimate.n_paths} paths)")
    return estimate


def compare(pipeline_value: float, oracle: OracleEstimate, k_sigma: float = 3.0, c_h: float = 0.0,
            h: float = 0.0) -> ComparisonResult:
    """Pass iff ``|pipeline - mean| <= k_sigma * se + c_h * h``, up to rounding relative to the mean."""
    difference = float(pipeline_value - oracle.mean)
    allowance = k_sigma * oracle.standard_error + c_h * h + rounding_allowance(oracle.mean)
    if oracle.standard_error > 0:
        z = difference / oracle.standard_error
    else:
        z = 0.0 if difference == 0 else math.copysign(math.inf, difference)
    return ComparisonResult(abs(difference) <= allowance, float(z), difference, float(allowance))


def compare_independent(value: OracleEstimate, oracle: OracleEstimate, k_sigma: float = 3.0,
                        c_h: float = 0.0, h: float = 0.0) -> ComparisonResult:
    """Like :func:`compare` for a pipeline value estimated on a fresh ensemble, using the combined standard error."""
    combined = math.hypot(value.standard_error, oracle.standard_error)
    return compare(value.mean, OracleEstimate(oracle.mean, combined, oracle.n_paths, oracle.label), k_sigma, c_h, h)


def label_frequencies(paths: PathEnsemble, scheme: ConditioningScheme) -> Dict[str, float]:
    """Share of the ensemble in each label of ``scheme``; labels nobody reaches are omitted."""
    codes = scheme.codes(paths.states)
    counts = np.bincount(codes, minlength=len(scheme.labels))
    return {label: counts[k] / len(paths) for k, label in enumerate(scheme.labels) if counts[k]}


def path_square(functional: Callable[[Path], float]) -> Callable[[Path], float]:
    """Wrap a path functional into its square, e.g. for the oracle of ``S+``."""
    def squared(path: Path) -> float:
        return functional(path) ** 2
    return squared


def rounding_allowance(mean: float) -> float:
    """Summation-order slack for cells where every path pays the same amount."""
    return ROUNDING_TOL * max(1.0, abs(mean))
