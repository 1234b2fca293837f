"""Conditional moment surfaces from a path ensemble and the forward/backward transition rates
derived from them."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .core import PivotConventions, StateSpace, TimeGrid, anchored_cumsum
from .errors import EmptyCellError, InconsistentEnsembleError, MissingRatesError, ValidationError
from .simulate import HistorySummary, IntensityModel, PathEnsemble

logger = logging.getLogger(__name__)

EPS_DEN = 1e-12
TRAJECTORY_CHUNK = 2000
EVENT_PATH_CHUNK = 5000

Pair = Tuple[int, int]


class ConditioningScheme:
    """Maps the path up to the pivot to a discrete label; every label determines ``Z(s)``."""

    def __init__(self, state_space: StateSpace, grid: TimeGrid):
        self.state_space = state_space
        self.grid = grid

    @property
    def pivot(self) -> PivotConventions:
        return self.grid.conventions

    @property
    def labels(self) -> Tuple[str, ...]:
        raise NotImplementedError

    def state_index(self, label: str) -> int:
        raise NotImplementedError

    def codes(self, states: np.ndarray) -> np.ndarray:
        """Position in :attr:`labels` for every row of a state matrix."""
        raise NotImplementedError

    def classify(self, paths: PathEnsemble) -> np.ndarray:
        return np.asarray(self.labels, dtype=object)[self.codes(paths.states)]

    def mask(self, paths: PathEnsemble, label: str) -> np.ndarray:
        try:
            code = self.labels.index(label)
        except ValueError:
            raise EmptyCellError(label) from None
        return self.codes(paths.states) == code


class AsIfMarkov(ConditioningScheme):
    """Label = state occupied at the pivot."""

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.state_space.labels

    def state_index(self, label: str) -> int:
        return self.state_space.index(label)

    def codes(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states)[:, self.grid.pivot_index]


class StateDuration(ConditioningScheme):
    """Label = state at the pivot and the bucket of time spent there, with bucket edges in years."""

    def __init__(self, state_space: StateSpace, grid: TimeGrid, edges: Sequence[float]):
        super().__init__(state_space, grid)
        edges = [float(x) for x in edges]
        if any(b <= a for a, b in zip(edges, edges[1:])) or any(x <= 0 for x in edges):
            raise ValidationError("duration bucket edges must be positive and increasing", field="conditioning.buckets")
        self.edges = tuple(edges)
        self._edge_steps = np.array([round(x / grid.step) for x in edges], dtype=np.int64)
        bounds = (0.0,) + self.edges + (float("inf"),)
        self._buckets = tuple(f"d[{lo:g},{hi:g})" for lo, hi in zip(bounds, bounds[1:]))

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(f"{state}|{bucket}" for state in self.state_space.labels for bucket in self._buckets)

    def state_index(self, label: str) -> int:
        return self.state_space.index(label.split("|")[0])

    def duration_steps(self, states: np.ndarray) -> np.ndarray:
        """Grid steps since the last jump at or before the pivot (since time 0 without jumps)."""
        p = self.grid.pivot_index
        states = np.asarray(states)
        if p == 0:
            return np.zeros(states.shape[0], dtype=np.int64)
        changed = states[:, 1:p + 1] != states[:, :p]
        last = np.where(changed, np.arange(1, p + 1), 0).max(axis=1)
        return p - last

    def codes(self, states: np.ndarray) -> np.ndarray:
        bucket = np.searchsorted(self._edge_steps, self.duration_steps(states), side="right")
        return np.asarray(states)[:, self.grid.pivot_index] * len(self._buckets) + bucket


CONDITIONING_SCHEMES = {
    "as_if_markov": AsIfMarkov,
    "state_duration": StateDuration,
}


@dataclass(frozen=True)
class MomentSurfaces:
    """Conditional surfaces of one label cell.

    ``p1[i, m]`` is ``P_i(t_m)``, ``dq1[i, j, m]`` the increment of ``Q_ij`` at ``t_m``,
    ``p2[i, k, m1, m2]`` is ``P_ik(t_m1, t_m2)`` and ``dq2[a, b, m1, m2]`` the increment of
    ``Q_ab`` for the pairs listed in ``pairs`` (pairs without any transition mass are omitted).
    """
    label: str
    n_paths: int
    pivot: PivotConventions
    initial: np.ndarray = field(repr=False)
    p1: np.ndarray = field(repr=False)
    dq1: np.ndarray = field(repr=False)
    pairs: Tuple[Pair, ...] = ()
    p2: Optional[np.ndarray] = field(default=None, repr=False)
    dq2: Optional[np.ndarray] = field(default=None, repr=False)
    provenance: str = "estimated"

    @property
    def n_states(self) -> int:
        return self.p1.shape[0]

    @property
    def n_points(self) -> int:
        return self.p1.shape[1]

    @property
    def pair_index(self) -> Dict[Pair, int]:
        return {pair: k for k, pair in enumerate(self.pairs)}

    def q1_cumulative(self) -> np.ndarray:
        """``Q_ij(t_m)``; diagonals vanish at the pivot, off-diagonals at time zero."""
        return cumulative_1d(self.dq1, self.pivot.pivot_index)

    def q2_cumulative(self) -> np.ndarray:
        """``Q_ijkl(t_m1, t_m2)`` for the listed pairs with the same anchoring per coordinate."""
        if self.dq2 is None:
            raise ValidationError("surfaces were estimated without the two-dimensional part")
        return cumulative_2d(self.dq2, self.pairs, self.pivot.pivot_index)

    def save(self, filename) -> None:
        arrays = {"p1": self.p1, "dq1": self.dq1, "initial": self.initial,
                  "pairs": np.array(self.pairs, dtype=np.int64).reshape(-1, 2)}
        if self.p2 is not None:
            arrays.update(p2=self.p2, dq2=self.dq2)
        np.savez_compressed(filename, label=np.array(self.label), n_paths=np.array(self.n_paths),
                            pivot_index=np.array(self.pivot.pivot_index), **arrays)

    @classmethod
    def load(cls, filename) -> "MomentSurfaces":
        with np.load(filename) as data:
            p1 = data["p1"]
            pivot = PivotConventions(int(data["pivot_index"]), p1.shape[1])
            pairs = tuple((int(a), int(b)) for a, b in data["pairs"])
            p2 = data["p2"] if "p2" in data.files else None
            dq2 = data["dq2"] if "dq2" in data.files else None
            return cls(str(data["label"]), int(data["n_paths"]), pivot, data["initial"], p1, data["dq1"],
                       pairs, p2, dq2)


def cumulative_1d(increments: np.ndarray, pivot_index: int) -> np.ndarray:
    """Cumulative ``(states, states, points)`` processes: diagonals anchored at the pivot, the rest at zero."""
    out = anchored_cumsum(increments, None, axis=-1)
    idx = np.arange(increments.shape[0])
    out[idx, idx] = anchored_cumsum(increments[idx, idx], pivot_index, axis=-1)
    return out


def cumulative_2d(increments: np.ndarray, pairs: Sequence[Pair], pivot_index: int) -> np.ndarray:
    """Cumulative pair surfaces; each coordinate belonging to a diagonal pair is anchored at the pivot."""
    p = pivot_index
    diag = [k for k, (i, j) in enumerate(pairs) if i == j]
    out = np.cumsum(increments, axis=2)
    out[diag] -= out[diag][:, :, p:p + 1, :]
    out = np.cumsum(out, axis=3)
    out[:, diag] -= out[:, diag][:, :, :, p:p + 1]
    return out


def _occupation_counts(states: np.ndarray, n_states: int) -> np.ndarray:
    return np.stack([(states == i).sum(axis=0) for i in range(n_states)]).astype(float)


def _pair_occupation_block(rows: np.ndarray, counts: np.ndarray, n_states: int) -> np.ndarray:
    n_points = rows.shape[1]
    total = np.zeros((n_states * n_points, n_states * n_points))
    for k in range(0, rows.shape[0], TRAJECTORY_CHUNK):
        block, weight = rows[k:k + TRAJECTORY_CHUNK], counts[k:k + TRAJECTORY_CHUNK]
        onehot = np.zeros((block.shape[0], n_states, n_points))
        onehot[np.arange(block.shape[0])[:, None], block, np.arange(n_points)[None, :]] = 1.0
        onehot = onehot.reshape(block.shape[0], n_states * n_points)
        total += onehot.T @ (onehot * weight[:, None])
    return total


def _pair_occupation_counts(states: np.ndarray, n_states: int, n_jobs: int) -> np.ndarray:
    """Counts of ``Z(t_m1) = i, Z(t_m2) = k`` summed over paths, via distinct trajectories."""
    unique, counts = np.unique(states, axis=0, return_counts=True)
    counts = counts.astype(float)
    n_points = states.shape[1]
    if n_jobs == 1 or unique.shape[0] <= TRAJECTORY_CHUNK:
        total = _pair_occupation_block(unique, counts, n_states)
    else:
        groups = np.array_split(np.arange(unique.shape[0]), n_jobs)
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_pair_occupation_block)(unique[g], counts[g], n_states) for g in groups if g.size)
        total = parts[0]
        for part in parts[1:]:
            total += part
    total = total.reshape(n_states, n_points, n_states, n_points).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(total)


def jump_events(states: np.ndarray, pivot_index: int) -> pd.DataFrame:
    """One row per nonzero counting increment: ``path, first, second, index, value``.

    Every jump ``i -> j`` at ``t_m`` gives ``+1`` on ``(i, j)`` and ``-1`` on the diagonal of ``i``
    after the pivot or of ``j`` up to it.
    """
    states = np.asarray(states)
    prev, nxt = states[:, :-1], states[:, 1:]
    path, step = np.nonzero(prev != nxt)
    index = step + 1
    i, j = prev[path, step], nxt[path, step]
    d = np.where(index > pivot_index, i, j)
    ones = np.ones(index.size)
    return pd.DataFrame({
        "path": np.concatenate([path, path]),
        "first": np.concatenate([i, d]),
        "second": np.concatenate([j, d]),
        "index": np.concatenate([index, index]),
        "value": np.concatenate([ones, -ones]),
    })


def _pair_moment_block(events: pd.DataFrame, n_pairs: int, n_points: int) -> np.ndarray:
    merged = events.merge(events, on="path", suffixes=("_a", "_b"))
    flat = ((merged["pos_a"].to_numpy() * n_pairs + merged["pos_b"].to_numpy()) * n_points
            + merged["index_a"].to_numpy()) * n_points + merged["index_b"].to_numpy()
    weights = merged["value_a"].to_numpy() * merged["value_b"].to_numpy()
    size = n_pairs * n_pairs * n_points * n_points
    return np.bincount(flat, weights=weights, minlength=size).reshape(n_pairs, n_pairs, n_points, n_points)


def estimate_moment_surfaces(paths: PathEnsemble, scheme: ConditioningScheme, label: str,
                             two_dimensional: bool = True, n_jobs: int = 1) -> MomentSurfaces:
    """Empirical conditional surfaces of the paths whose label equals ``label``.

    Parameters
    ----------
    paths : PathEnsemble
        Simulated ensemble on the scheme's grid.
    scheme : ConditioningScheme
        Classifier of the information at the pivot.
    label : str
        Cell to condition on, one of ``scheme.labels``.
    two_dimensional : bool, optional
        Also estimate ``P_ik`` and ``Q_ijkl``, by default True.
    n_jobs : int, optional
        joblib workers for the pair-occupation counts, by default 1.

    Returns
    -------
    MomentSurfaces
        Arithmetic means over the cell. All sums are accumulated as integer-valued floats and
        divided once, so the result does not depend on the reduction order.

    Raises
    ------
    EmptyCellError
        No path carries ``label``.
    """
    start = time.time()
    mask = scheme.mask(paths, label)
    n = int(mask.sum())
    if n == 0:
        raise EmptyCellError(label)
    pivot = scheme.pivot
    if paths.n_points != pivot.n_points:
        raise ValidationError(f"ensemble has {paths.n_points} grid points, scheme expects {pivot.n_points}", field="grid")
    states = paths.states[mask]
    size, n_points = paths.n_states, paths.n_points

    initial = np.zeros(size)
    initial[scheme.state_index(label)] = 1.0
    p1 = _occupation_counts(states, size) / n

    events = jump_events(states, pivot.pivot_index)
    dq1 = np.bincount(
        (events["first"].to_numpy() * size + events["second"].to_numpy()) * n_points + events["index"].to_numpy(),
        weights=events["value"].to_numpy(), minlength=size * size * n_points,
    ).reshape(size, size, n_points) / n

    pairs: Tuple[Pair, ...] = ()
    p2 = dq2 = None
    if two_dimensional:
        codes = events["first"].to_numpy() * size + events["second"].to_numpy()
        active = np.unique(codes)
        pairs = tuple((int(c // size), int(c % size)) for c in active)
        events = events.assign(pos=np.searchsorted(active, codes))
        p2 = _pair_occupation_counts(states, size, n_jobs) / n
        dq2 = np.zeros((len(pairs), len(pairs), n_points, n_points))
        boundaries = np.arange(0, n + EVENT_PATH_CHUNK, EVENT_PATH_CHUNK)
        for lo, hi in zip(boundaries, boundaries[1:]):
            block = events[(events["path"] >= lo) & (events["path"] < hi)]
            if len(block):
                dq2 += _pair_moment_block(block, len(pairs), n_points)
        dq2 /= n
    logger.info(f"estimated surfaces for {label!r} from {n} paths ({len(pairs)} active pairs) in {time.time() - start:.1f}s")
    return MomentSurfaces(label, n, pivot, initial, p1, dq1, pairs, p2, dq2)


@dataclass(frozen=True)
class RateCounts:
    """Estimated rates as path counts: ``d1 = num1 / den1`` and ``d2 = num2 / den2`` cell by cell.

    All arrays hold integer-valued floats over ``n_paths`` paths, so the solvers can run the
    sweeps in counts and reproduce the estimated surfaces bit for bit.
    """
    n_paths: int
    num1: np.ndarray = field(repr=False)
    den1: np.ndarray = field(repr=False)
    num2: Optional[np.ndarray] = field(default=None, repr=False)
    den2: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_surfaces(cls, surfaces: MomentSurfaces, pivot: PivotConventions,
                      two_dimensional: bool = False) -> "RateCounts":
        n = surfaces.n_paths
        num1 = np.rint(surfaces.dq1 * n)
        den1 = np.rint(denominator_1d(surfaces.p1, pivot) * n)
        if not two_dimensional:
            return cls(n, num1, den1)
        num2 = np.rint(surfaces.dq2 * n)
        den2 = np.rint(denominator_2d(surfaces.p2, surfaces.pairs, pivot) * n)
        return cls(n, num1, den1, num2, den2)


@dataclass(frozen=True)
class RateSystem:
    """Increments of the cumulative transition rates.

    ``d1[i, j, m]`` is the increment of ``Lambda_ij`` at ``t_m`` (diagonals included) and
    ``d2[a, b, m1, m2]`` that of ``Lambda_ab`` for ``a, b`` in ``pairs``. Forward-side cells use
    the left-limit evaluation and the first state of a pair as the occupied state, backward-side
    cells the point itself and the second state. Rates estimated from an ensemble also carry
    their :class:`RateCounts`.
    """
    pivot: PivotConventions
    d1: np.ndarray = field(repr=False)
    pairs: Tuple[Pair, ...] = ()
    d2: Optional[np.ndarray] = field(default=None, repr=False)
    source: str = "estimated"
    counts: Optional[RateCounts] = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return self.d1.shape[0]

    @property
    def n_points(self) -> int:
        return self.d1.shape[2]

    @property
    def has_2d(self) -> bool:
        return self.d2 is not None

    @property
    def pair_index(self) -> Dict[Pair, int]:
        return {pair: k for k, pair in enumerate(self.pairs)}

    def source_states(self) -> np.ndarray:
        """``(pairs, points)`` matrix of the state whose occupation divides each pair's rate."""
        first = np.array([a for a, _ in self.pairs], dtype=np.int64)
        second = np.array([b for _, b in self.pairs], dtype=np.int64)
        return np.where(self.pivot.forward_mask[None, :], first[:, None], second[:, None])

    def target_states(self) -> np.ndarray:
        """``(pairs, points)`` matrix of the state each pair's rate feeds in the forward equations."""
        first = np.array([a for a, _ in self.pairs], dtype=np.int64)
        second = np.array([b for _, b in self.pairs], dtype=np.int64)
        return np.where(self.pivot.forward_mask[None, :], second[:, None], first[:, None])

    def cumulative_1d(self) -> np.ndarray:
        """``Lambda_ij(t_m)`` with the same anchoring as the counting processes."""
        return cumulative_1d(self.d1, self.pivot.pivot_index)

    def cumulative_2d(self) -> np.ndarray:
        if self.d2 is None:
            raise MissingRatesError("two-dimensional rates are not available", field="rates")
        return cumulative_2d(self.d2, self.pairs, self.pivot.pivot_index)

    def moment_increments_1d(self, p1: np.ndarray) -> np.ndarray:
        """``P~_ij(u+-) * dLambda_ij(u)``, the conditional transition-moment increments."""
        return denominator_1d(p1, self.pivot) * self.d1

    def moment_increments_2d(self, p2: np.ndarray) -> np.ndarray:
        """``P~_ab(u1+-, u2+-) * dLambda_ab(u1, u2)`` for the listed pairs."""
        if self.d2 is None:
            raise MissingRatesError("two-dimensional rates are not available", field="rates")
        return denominator_2d(p2, self.pairs, self.pivot) * self.d2

    def perturbed(self, pair: Pair, index: int, delta: float) -> "RateSystem":
        d1 = np.array(self.d1)
        d1[pair[0], pair[1], index] += delta
        return replace(self, d1=d1, source=f"{self.source}+perturbed", counts=None)

    @classmethod
    def from_intensities(cls, model: IntensityModel, grid: TimeGrid) -> "RateSystem":
        """Forward-side 1D increments ``lambda_ij(t_{m-1}) * h`` of a model without duration effects."""
        if not model.is_markov:
            raise ValidationError("reference rates need duration-free intensities", field="intensities")
        pivot = grid.conventions
        size = model.state_space.size
        d1 = np.zeros((size, size, grid.n_points))
        forward = np.array(pivot.future)
        history = HistorySummary(np.zeros(1, dtype=np.int64), np.zeros(1), np.zeros(1, dtype=bool))
        for (i, j), intensity in model.transitions.items():
            d1[i, j, forward] = [float(intensity(grid.points[m - 1], history)[0]) * grid.step for m in forward]
        idx = np.arange(size)
        d1[idx, idx] = -d1.sum(axis=1)
        return cls(pivot, d1, source="intensities")


def denominator_1d(p1: np.ndarray, pivot: PivotConventions) -> np.ndarray:
    """``P~_ij(t_m)``: ``P_i(t_{m-1})`` after the pivot, ``P_j(t_m)`` up to it."""
    e = pivot.eval_indices
    forward = pivot.forward_mask[None, None, :]
    return np.where(forward, p1[:, None, e], p1[None, :, e])


def denominator_2d(p2: np.ndarray, pairs: Sequence[Pair], pivot: PivotConventions) -> np.ndarray:
    """``P~_ijkl(t_m1, t_m2)`` for all listed pairs, picking ``P_ik``, ``P_jk``, ``P_il`` or ``P_jl``
    by the side of the pivot each coordinate lies on."""
    pairs = tuple(pairs)
    first = np.array([a for a, _ in pairs], dtype=np.int64)
    second = np.array([b for _, b in pairs], dtype=np.int64)
    src = np.where(pivot.forward_mask[None, :], first[:, None], second[:, None])
    e = pivot.eval_indices
    return p2[src[:, None, :, None], src[None, :, None, :], e[None, None, :, None], e[None, None, None, :]]


def _divide(numerator: np.ndarray, denominator: np.ndarray, what: str) -> np.ndarray:
    positive = denominator > EPS_DEN
    stray = (~positive) & (numerator != 0)
    if np.any(stray):
        where = tuple(int(x[0]) for x in np.nonzero(stray))
        raise InconsistentEnsembleError(f"{what} mass {numerator[where]:.3e} at cell {where} with vanishing occupation")
    return np.where(positive, numerator / np.where(positive, denominator, 1.0), 0.0)


def transition_rates_1d(surfaces: MomentSurfaces, pivot: Optional[PivotConventions] = None) -> RateSystem:
    """``dLambda_ij = 1{P~ > 0} / P~_ij * dQ_ij`` with the pivot conventions.

    Raises
    ------
    InconsistentEnsembleError
        Transition mass where the occupation denominator is (numerically) zero.
    """
    pivot = _same_pivot(surfaces, pivot)
    d1 = _divide(surfaces.dq1, denominator_1d(surfaces.p1, pivot), "Q_ij")
    return RateSystem(pivot, d1, counts=RateCounts.from_surfaces(surfaces, pivot))


def transition_rates_2d(surfaces: MomentSurfaces, pivot: Optional[PivotConventions] = None) -> RateSystem:
    """Both the 1D increments and ``dLambda_ijkl = 1{P~ > 0} / P~_ijkl * dQ_ijkl``, diagonal cells included."""
    pivot = _same_pivot(surfaces, pivot)
    if surfaces.dq2 is None or surfaces.p2 is None:
        raise ValidationError("surfaces were estimated without the two-dimensional part", field="surfaces")
    base = transition_rates_1d(surfaces, pivot)
    d2 = _divide(surfaces.dq2, denominator_2d(surfaces.p2, surfaces.pairs, pivot), "Q_ijkl")
    return RateSystem(pivot, base.d1, surfaces.pairs, d2, counts=RateCounts.from_surfaces(surfaces, pivot, True))


def _same_pivot(surfaces: MomentSurfaces, pivot: Optional[PivotConventions]) -> PivotConventions:
    if pivot is None:
        return surfaces.pivot
    if pivot != surfaces.pivot:
        raise ValidationError(f"surfaces were estimated for pivot index {surfaces.pivot.pivot_index}, got {pivot.pivot_index}",
                              field="grid.pivot")
    return pivot
