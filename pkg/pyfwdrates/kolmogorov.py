"""Discrete one- and two-dimensional forward equations around the pivot, and the residual
checks comparing their solutions with estimated surfaces."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import PivotConventions, TimeGrid
from .errors import MissingRatesError, ValidationError
from .estimate import MomentSurfaces, RateSystem

logger = logging.getLogger(__name__)

EPS_NUM = 1e-9


@dataclass(frozen=True)
class SolvedProbabilities:
    """Occupation probabilities ``p1[i, m]`` and ``p2[i, k, m1, m2]`` produced by the solvers."""
    label: str
    pivot: PivotConventions
    initial: np.ndarray = field(repr=False)
    p1: np.ndarray = field(repr=False)
    p2: Optional[np.ndarray] = field(default=None, repr=False)
    provenance: str = "solved"

    @property
    def n_states(self) -> int:
        return self.p1.shape[0]

    @property
    def n_points(self) -> int:
        return self.p1.shape[1]

    def out_of_range(self) -> float:
        """Largest excursion of any probability below 0 or above 1."""
        worst = max(0.0, float(-self.p1.min()), float(self.p1.max() - 1.0))
        if self.p2 is not None:
            worst = max(worst, float(-self.p2.min()), float(self.p2.max() - 1.0))
        return worst

    def save(self, filename) -> None:
        extra = {} if self.p2 is None else {"p2": self.p2}
        np.savez_compressed(filename, label=np.array(self.label), pivot_index=np.array(self.pivot.pivot_index),
                            initial=self.initial, p1=self.p1, **extra)

    @classmethod
    def load(cls, filename) -> "SolvedProbabilities":
        with np.load(filename) as data:
            p1 = data["p1"]
            p2 = data["p2"] if "p2" in data.files else None
            return cls(str(data["label"]), PivotConventions(int(data["pivot_index"]), p1.shape[1]),
                       data["initial"], p1, p2)


def _resolve_pivot(rates: RateSystem, pivot: Optional[PivotConventions], grid: Optional[TimeGrid]) -> PivotConventions:
    if pivot is None:
        pivot = rates.pivot
    if pivot != rates.pivot:
        raise ValidationError("rates were built for another pivot", field="grid.pivot")
    if grid is not None and grid.n_points != rates.n_points:
        raise ValidationError(f"grid has {grid.n_points} points, rates {rates.n_points}", field="grid")
    return pivot


def _times_rate(occupation: np.ndarray, num: np.ndarray, den: Optional[np.ndarray]) -> np.ndarray:
    """``occupation * num / den``, zero where ``den`` vanishes; with ``den=None`` ``num`` is the rate itself."""
    product = occupation * num
    if den is None:
        return product
    return np.divide(product, den, out=np.zeros_like(product), where=den > 0)


def _outward_sums(values: np.ndarray, pivot_index: int) -> np.ndarray:
    """Sums of ``values`` over ((s, t_m]] along the last axis, accumulated away from the pivot."""
    p = pivot_index
    out = np.zeros_like(values)
    out[..., p + 1:] = np.cumsum(values[..., p + 1:], axis=-1)
    out[..., :p] = np.cumsum(values[..., p:0:-1], axis=-1)[..., ::-1]
    return out


def _sweep_1d(rates: RateSystem, pivot: PivotConventions, initial: np.ndarray) -> np.ndarray:
    counts = rates.counts
    num, den = (rates.d1, None) if counts is None else (counts.num1, counts.den1)

    def rate_at(m: int):
        return num[:, :, m], None if den is None else den[:, :, m]

    p, n_points = pivot.pivot_index, pivot.n_points
    out = np.zeros((rates.n_states, n_points))
    out[:, p] = initial
    for m in range(p + 1, n_points):
        out[:, m] = out[:, m - 1] + _times_rate(out[:, m - 1][:, None], *rate_at(m)).sum(axis=0)
    for m in range(p - 1, -1, -1):
        out[:, m] = out[:, m + 1] + _times_rate(out[:, m + 1][None, :], *rate_at(m + 1)).sum(axis=1)
    return out


def _scale(rates: RateSystem) -> float:
    return 1.0 if rates.counts is None else float(rates.counts.n_paths)


def solve_forward_1d(rates: RateSystem, initial, pivot: Optional[PivotConventions] = None,
                     grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Occupation probabilities from the 1D rates and ``I(s)``.

    After the pivot ``P_i(t_m) = P_i(t_{m-1}) + sum_j P_j(t_{m-1}) dLambda_ji(t_m)``; before it the
    sweep descends with ``P_i(t_m) = P_i(t_{m+1}) + sum_j P_j(t_{m+1}) dLambda_ij(t_{m+1})``.
    Values are not clamped. Rates carrying :class:`~pyfwdrates.estimate.RateCounts` are swept in
    path counts and divided by the number of paths at the end.
    """
    pivot = _resolve_pivot(rates, pivot, grid)
    scale = _scale(rates)
    return _sweep_1d(rates, pivot, np.asarray(initial, dtype=float) * scale) / scale


def solve_forward_2d(rates: RateSystem, p1: np.ndarray, initial, pivot: Optional[PivotConventions] = None,
                     grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Pair occupation probabilities ``P_ik(t_m1, t_m2)`` from the 1D solution and the 2D rates.

    Rows are swept outward from the pivot row. Each new row ``m1`` adds the cell contributions
    ``P~ * dLambda_ab(r1, .)`` of the grid index ``r1`` entering ((s, t_m1]]; the contributions
    only reference rows closer to the pivot. The columns are then summed over ((s, t_m2]].
    With :class:`~pyfwdrates.estimate.RateCounts` attached, ``p1`` must be a multiple of one over
    the number of paths (an estimate or a count-backed solution).

    Raises
    ------
    MissingRatesError
        ``rates`` has no two-dimensional part.
    """
    pivot = _resolve_pivot(rates, pivot, grid)
    if not rates.has_2d:
        raise MissingRatesError("two-dimensional rates are required", field="rates")
    scale = _scale(rates)
    p1 = np.asarray(p1, dtype=float) * scale
    if rates.counts is not None:
        p1 = np.rint(p1)
    return _sweep_2d(rates, pivot, p1, np.asarray(initial, dtype=float), scale) / scale


def _sweep_2d(rates: RateSystem, pivot: PivotConventions, p1: np.ndarray, initial: np.ndarray,
              scale: float = 1.0) -> np.ndarray:
    """2D sweep with ``p1`` and the result in units of ``scale``; ``initial`` stays a probability vector."""
    start = time.time()
    counts = rates.counts
    num, den = (rates.d2, None) if counts is None or counts.num2 is None else (counts.num2, counts.den2)
    n, n_points = rates.n_states, pivot.n_points
    p = pivot.pivot_index
    e = pivot.eval_indices
    src = rates.source_states()
    tgt = rates.target_states()
    cells = tgt[None, :, :] * n_points + np.arange(n_points)[None, None, :]
    out = np.zeros((n, n, n_points, n_points))

    def contributions(r1: int) -> np.ndarray:
        if not rates.pairs:
            return np.zeros((n, n, n_points))
        occupation = out[src[:, r1][:, None, None], src[None, :, :], e[r1], e[None, None, :]]
        values = _times_rate(occupation, num[:, :, r1, :], None if den is None else den[:, :, r1, :])
        flat = np.broadcast_to(tgt[:, r1][:, None, None] * n * n_points + cells, values.shape)
        return np.bincount(flat.ravel(), weights=values.ravel(), minlength=n * n * n_points).reshape(n, n, n_points)

    def fill_row(m1: int, accumulated: np.ndarray):
        double = _outward_sums(accumulated, p)
        single_i = (p1[:, m1] - scale * initial)[:, None, None] * initial[None, :, None]
        single_k = initial[:, None, None] * (p1 - scale * initial[:, None])[None, :, :]
        out[:, :, m1, :] = scale * initial[:, None, None] * initial[None, :, None] + single_i + single_k + double
        out[:, :, m1, p] = p1[:, m1][:, None] * initial[None, :]

    out[:, :, p, :] = initial[:, None, None] * p1[None, :, :]
    accumulated = np.zeros((n, n, n_points))
    for m1 in range(p + 1, n_points):
        accumulated += contributions(m1)
        fill_row(m1, accumulated)
    accumulated = np.zeros((n, n, n_points))
    for m1 in range(p - 1, -1, -1):
        accumulated += contributions(m1 + 1)
        fill_row(m1, accumulated)
    logger.debug(f"2D sweep over {n_points}x{n_points} cells with {len(rates.pairs)} pairs in {time.time() - start:.1f}s")
    return out


def solve(rates: RateSystem, initial, label: str = "", two_dimensional: bool = True) -> SolvedProbabilities:
    """Run the 1D solver and, when 2D rates exist and are requested, the 2D solver on its output.

    Count-backed rates stay in path counts between the two sweeps, so estimated rates give back
    the estimated ``P_i`` and ``P_ik`` exactly.
    """
    initial = np.asarray(initial, dtype=float)
    scale = _scale(rates)
    p1 = _sweep_1d(rates, rates.pivot, initial * scale)
    p2 = None
    if two_dimensional and rates.has_2d:
        p2 = _sweep_2d(rates, rates.pivot, p1, initial, scale) / scale
    return SolvedProbabilities(label, rates.pivot, initial, p1 / scale, p2)


@dataclass(frozen=True)
class ResidualReport:
    label: str
    p1_residual: float
    p2_residual: Optional[float]
    out_of_range: float

    def within(self, tolerance: float) -> bool:
        worst = self.p1_residual if self.p2_residual is None else max(self.p1_residual, self.p2_residual)
        return worst <= tolerance and self.out_of_range <= EPS_NUM

    def to_dict(self) -> dict:
        return {"label": self.label, "p1_residual": self.p1_residual,
                "p2_residual": self.p2_residual, "out_of_range": self.out_of_range}


def residual_and_consistency(solved: SolvedProbabilities, estimated: MomentSurfaces) -> ResidualReport:
    """Sup-norm distance between solved and estimated occupation surfaces.

    Raises
    ------
    ValidationError
        The two were computed on different grids or pivots.
    """
    if solved.p1.shape != estimated.p1.shape or solved.pivot != estimated.pivot:
        raise ValidationError("solved and estimated surfaces live on different grids", field="grid")
    r1 = float(np.max(np.abs(solved.p1 - estimated.p1)))
    r2 = None
    if solved.p2 is not None and estimated.p2 is not None:
        r2 = float(np.max(np.abs(solved.p2 - estimated.p2)))
    report = ResidualReport(estimated.label, r1, r2, solved.out_of_range())
    logger.info(f"residuals for {estimated.label!r}: P_i {r1:.3e}, P_ik {r2 if r2 is None else f'{r2:.3e}'}")
    return report


def boundary_identities(solved: SolvedProbabilities) -> bool:
    """``P_ik(t, s) = I_k(s) P_i(t)``, ``P_ik(s, t) = I_i(s) P_k(t)`` and ``P_ik(s, s) = I_i(s) I_k(s)`` exactly."""
    if solved.p2 is None:
        return True
    p = solved.pivot.pivot_index
    i0 = solved.initial
    column = np.array_equal(solved.p2[:, :, :, p], solved.p1[:, None, :] * i0[None, :, None])
    row = np.array_equal(solved.p2[:, :, p, :], i0[:, None, None] * solved.p1[None, :, :])
    corner = np.array_equal(solved.p2[:, :, p, p], np.outer(i0, i0))
    return bool(column and row and corner)
