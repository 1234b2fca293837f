"""Time grids, atomic signed measures and the pivot-time conventions shared by all modules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import GridRangeError, ValidationError

GRID_TOLERANCE = 1e-9

IndexWindow = Optional[range]
IndexRectangle = Optional[Tuple[range, range]]


@dataclass(frozen=True)
class StateSpace:
    """Ordered finite state space, optionally split into a premium-paying block ``s0``
    and a free-policy block ``s1``.

    Example
    -------

    .. code-block:: python

        space = StateSpace(("active", "dead", "active_free", "dead_free"),
                           s0=("active", "dead"), s1=("active_free", "dead_free"))
        space.index("dead_free")  # 3

    """
    labels: Tuple[str, ...]
    s0: Tuple[str, ...] = ()
    s1: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "s0", tuple(self.s0))
        object.__setattr__(self, "s1", tuple(self.s1))
        if len(self.labels) < 2:
            raise ValidationError("at least two states are required", field="states.labels")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("state labels must be unique", field="states.labels")
        if self.s0 or self.s1:
            if set(self.s0) & set(self.s1):
                raise ValidationError("s0 and s1 must be disjoint", field="states.s1")
            if set(self.s0) | set(self.s1) != set(self.labels) or len(self.s0) + len(self.s1) != len(self.labels):
                raise ValidationError("s0 and s1 must partition the state labels", field="states.s0")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def is_partitioned(self) -> bool:
        return len(self.s0) > 0

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown state {label!r}", field="states") from None

    @property
    def s0_indices(self) -> Tuple[int, ...]:
        return tuple(self.index(x) for x in self.s0)

    @property
    def s1_indices(self) -> Tuple[int, ...]:
        return tuple(self.index(x) for x in self.s1)

    def s0_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[list(self.s0_indices)] = True
        return mask


@dataclass(frozen=True)
class PivotConventions:
    """Index bookkeeping around the pivot time s.

    On the forward side (``m > pivot_index``) integrands are evaluated at the left limit,
    grid index ``m - 1``; on the backward side (``m <= pivot_index``) at ``m`` itself.
    The interval ((s, t_m]] is ``pivot+1 .. m`` forward and ``m+1 .. pivot`` backward.
    """
    pivot_index: int
    n_points: int

    def __post_init__(self):
        if not 0 <= self.pivot_index < self.n_points:
            raise GridRangeError(f"pivot index {self.pivot_index} outside grid of {self.n_points} points")

    def eval_index(self, m: int) -> int:
        self._check(m)
        return m - 1 if m > self.pivot_index else m

    @property
    def eval_indices(self) -> np.ndarray:
        m = np.arange(self.n_points)
        return np.where(m > self.pivot_index, m - 1, m)

    @property
    def left_indices(self) -> np.ndarray:
        """Index of u^- for every grid point, with ``0^- = 0``."""
        return np.maximum(np.arange(self.n_points) - 1, 0)

    def window(self, m: int) -> range:
        self._check(m)
        if m > self.pivot_index:
            return range(self.pivot_index + 1, m + 1)
        return range(m + 1, self.pivot_index + 1)

    @property
    def future(self) -> range:
        return range(self.pivot_index + 1, self.n_points)

    @property
    def past(self) -> range:
        return range(0, self.pivot_index + 1)

    @property
    def forward_mask(self) -> np.ndarray:
        return np.arange(self.n_points) > self.pivot_index

    def _check(self, m: int):
        if not 0 <= m < self.n_points:
            raise GridRangeError(f"grid index {m} outside 0..{self.n_points - 1}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_M = t_max`` with step ``step`` and the pivot ``pivot`` on a grid point."""
    t_max: float
    step: float
    pivot: float = 0.0

    def __post_init__(self):
        if self.step <= 0:
            raise ValidationError("step must be positive", field="grid.step")
        if self.t_max <= 0:
            raise ValidationError("t_max must be positive", field="grid.t_max")
        n = round(self.t_max / self.step)
        if n < 1 or abs(n * self.step - self.t_max) > GRID_TOLERANCE * max(1.0, self.t_max):
            raise ValidationError(f"t_max {self.t_max} is not a multiple of step {self.step}", field="grid.step")
        if not 0.0 <= self.pivot <= self.t_max:
            raise ValidationError(f"pivot {self.pivot} outside [0, {self.t_max}]", field="grid.pivot")
        p = round(self.pivot / self.step)
        if abs(p * self.step - self.pivot) > GRID_TOLERANCE * max(1.0, self.t_max):
            raise ValidationError(f"pivot {self.pivot} is not on the grid", field="grid.pivot")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.step))

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_points) * self.step

    @property
    def pivot_index(self) -> int:
        return int(round(self.pivot / self.step))

    @property
    def conventions(self) -> PivotConventions:
        return PivotConventions(self.pivot_index, self.n_points)

    def index_of(self, t: float) -> int:
        m = round(t / self.step)
        if abs(m * self.step - t) > GRID_TOLERANCE * max(1.0, self.t_max) or not 0 <= m <= self.n_steps:
            raise GridRangeError(f"time {t} is not a grid point")
        return int(m)

    def with_pivot(self, pivot: float) -> "TimeGrid":
        return TimeGrid(self.t_max, self.step, pivot)


@dataclass(frozen=True)
class Measure1D:
    """Signed measure with atoms on the grid points; ``atoms[m]`` is the mass at ``t_m``."""
    atoms: np.ndarray = field(repr=False)

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim != 1:
            raise ValidationError("atoms must be a vector")
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("atoms must be finite")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def zeros(cls, n_points: int) -> "Measure1D":
        return cls(np.zeros(n_points))

    @classmethod
    def atom(cls, n_points: int, index: int, mass: float) -> "Measure1D":
        atoms = np.zeros(n_points)
        atoms[index] = mass
        return cls(atoms)

    @classmethod
    def from_cumulative(cls, cumulative: Sequence[float]) -> "Measure1D":
        return cls(np.diff(np.asarray(cumulative, dtype=float), prepend=0.0))

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.atoms)

    def __add__(self, other: "Measure1D") -> "Measure1D":
        return Measure1D(self.atoms + other.atoms)

    @property
    def n_points(self) -> int:
        return self.atoms.shape[0]


@dataclass(frozen=True)
class Measure2D:
    """Signed measure on the grid square; diagonal cells are ordinary atoms."""
    atoms: np.ndarray = field(repr=False)

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim != 2 or atoms.shape[0] != atoms.shape[1]:
            raise ValidationError("atoms must be a square matrix")
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("atoms must be finite")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def zeros(cls, n_points: int) -> "Measure2D":
        return cls(np.zeros((n_points, n_points)))

    @classmethod
    def product(cls, first: Measure1D, second: Measure1D) -> "Measure2D":
        return cls(np.outer(first.atoms, second.atoms))

    @classmethod
    def from_cumulative(cls, cumulative) -> "Measure2D":
        f = np.asarray(cumulative, dtype=float)
        return cls(np.diff(np.diff(f, axis=0, prepend=0.0), axis=1, prepend=0.0))

    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.cumsum(self.atoms, axis=0), axis=1)

    @property
    def n_points(self) -> int:
        return self.atoms.shape[0]


def _check_window(window: range, n: int, what: str = "window"):
    if window.step != 1:
        raise GridRangeError(f"{what} must have unit step")
    if len(window) and (window.start < 0 or window.stop > n):
        raise GridRangeError(f"{what} {window.start}..{window.stop - 1} outside grid 0..{n - 1}")


def integrate_1d(values, mu: Measure1D, index_window: IndexWindow = None) -> float:
    """Discrete Lebesgue-Stieltjes integral of grid-sampled ``values`` against ``mu``.

    Parameters
    ----------
    values : array_like
        Function sampled on the grid, length ``M+1``.
    mu : Measure1D
        Integrating measure.
    index_window : range, optional
        Grid indices to sum over, by default the whole grid.

    Returns
    -------
    float
        ``sum(values[m] * mu.atoms[m] for m in index_window)``
    """
    values = np.broadcast_to(np.asarray(values, dtype=float), mu.atoms.shape)
    if index_window is None:
        index_window = range(mu.n_points)
    _check_window(index_window, mu.n_points)
    if len(index_window) == 0:
        return 0.0
    sl = slice(index_window.start, index_window.stop)
    return float(np.dot(values[sl], mu.atoms[sl]))


def integrate_2d(values, mu: Measure2D, window: IndexRectangle = None) -> float:
    """Discrete integral of a grid surface against ``mu`` over an index rectangle ``(rows, cols)``,
    diagonal cells included."""
    values = np.broadcast_to(np.asarray(values, dtype=float), mu.atoms.shape)
    if window is None:
        window = (range(mu.n_points), range(mu.n_points))
    rows, cols = window
    _check_window(rows, mu.n_points, "row window")
    _check_window(cols, mu.n_points, "column window")
    if len(rows) == 0 or len(cols) == 0:
        return 0.0
    rs, cs = slice(rows.start, rows.stop), slice(cols.start, cols.stop)
    return float(np.sum(values[rs, cs] * mu.atoms[rs, cs]))


def window_mask(window: IndexWindow, n_points: int) -> np.ndarray:
    """Boolean vector selecting ``window`` on a grid of ``n_points``."""
    mask = np.zeros(n_points, dtype=bool)
    if window is None:
        mask[:] = True
        return mask
    _check_window(window, n_points)
    mask[window.start:window.stop] = True
    return mask


def anchored_cumsum(increments: np.ndarray, anchor: Optional[int], axis: int = -1) -> np.ndarray:
    """Cumulative process from increments, zero at grid index ``anchor``.

    With ``anchor=None`` the process starts from zero before index 0 (plain cumulative sum).
    Otherwise ``X(m) = sum(dX[anchor+1..m])`` for ``m > anchor`` and
    ``X(m) = -sum(dX[m+1..anchor])`` for ``m <= anchor``.
    """
    x = np.cumsum(increments, axis=axis)
    if anchor is None:
        return x
    return x - np.take(x, [anchor], axis=axis)
