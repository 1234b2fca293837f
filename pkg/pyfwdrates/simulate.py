"""Simulation of non-Markov jump processes on the grid, counting processes with signed
diagonals, discount curves and path-wise discounted payouts."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Mapping, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .cashflow import (CashflowSpec1D, CashflowSpec2D, FreePolicySpec, eval_cashflow_2d,
                       evaluate_free_policy, evaluate_states_1d)
from .core import PivotConventions, StateSpace, TimeGrid, anchored_cumsum
from .errors import GridTooCoarseError, ValidationError

logger = logging.getLogger(__name__)

CHUNK_SIZE = 5000
RECOMMENDED_STEP_MASS = 0.5


@dataclass(frozen=True)
class DiscountCurve:
    """Savings-account values ``kappa(t_m) > 0`` on the grid."""
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValidationError("discount curve must be finite and strictly positive", field="discount")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def flat(cls, rate: float, grid: TimeGrid) -> "DiscountCurve":
        return cls(np.exp(rate * grid.points))

    @classmethod
    def constant(cls, grid: TimeGrid) -> "DiscountCurve":
        return cls(np.ones(grid.n_points))

    @classmethod
    def from_table(cls, times, values, grid: TimeGrid) -> "DiscountCurve":
        """Log-linear interpolation of ``kappa`` given at ``times``."""
        times, values = np.asarray(times, dtype=float), np.asarray(values, dtype=float)
        if np.any(values <= 0):
            raise ValidationError("discount table values must be positive", field="discount.table")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("discount table times must increase", field="discount.table")
        return cls(np.exp(np.interp(grid.points, times, np.log(values))))

    def weights(self, pivot_index: int) -> np.ndarray:
        """``w(u) = kappa(s) / kappa(u)`` on the grid."""
        return self.values[pivot_index] / self.values


@dataclass(frozen=True)
class HistorySummary:
    """What an intensity may look at: current state, time since the last jump and free-policy status."""
    state: np.ndarray
    duration: np.ndarray
    free: np.ndarray

    def take(self, rows: np.ndarray) -> "HistorySummary":
        return HistorySummary(self.state[rows], self.duration[rows], self.free[rows])

    def __len__(self):
        return len(self.state)


@dataclass(frozen=True)
class ConstantIntensity:
    rate: float
    duration_dependent = False

    def __call__(self, t: float, history: HistorySummary) -> np.ndarray:
        return np.full(len(history), float(self.rate))

    def upper_bound(self, t_max: float) -> float:
        return float(self.rate)


@dataclass(frozen=True)
class GompertzMakeham:
    """``a + b * exp(c * (age + t))``."""
    a: float
    b: float
    c: float
    age: float = 0.0
    duration_dependent = False

    def __call__(self, t: float, history: HistorySummary) -> np.ndarray:
        return np.full(len(history), self.a + self.b * np.exp(self.c * (self.age + t)))

    def upper_bound(self, t_max: float) -> float:
        return float(self.a + self.b * max(np.exp(self.c * self.age), np.exp(self.c * (self.age + t_max))))


@dataclass(frozen=True)
class DurationDecay:
    """``floor + level * exp(-decay * duration)``; e.g. recovery that fades with time spent disabled."""
    level: float
    decay: float
    floor: float = 0.0
    duration_dependent = True

    def __call__(self, t: float, history: HistorySummary) -> np.ndarray:
        return self.floor + self.level * np.exp(-self.decay * history.duration)

    def upper_bound(self, t_max: float) -> float:
        return float(self.floor + max(self.level, self.level * np.exp(-self.decay * t_max)))


INTENSITY_FAMILIES: Dict[str, Callable] = {
    "constant": ConstantIntensity,
    "gompertz_makeham": GompertzMakeham,
    "duration_decay": DurationDecay,
}


def make_intensity(family: str, params: Mapping[str, float]):
    try:
        factory = INTENSITY_FAMILIES[family]
    except KeyError:
        raise ValidationError(f"unknown intensity family {family!r}", field="intensities.family") from None
    try:
        intensity = factory(**params)
    except TypeError as e:
        raise ValidationError(str(e), field=f"intensities.{family}.params") from None
    if intensity.upper_bound(0.0) < 0:
        raise ValidationError("intensities must be nonnegative", field=f"intensities.{family}.params")
    return intensity


@dataclass(frozen=True)
class IntensityModel:
    """Transition intensities per ordered pair of state indices, the initial distribution and
    optional blackout grid indices per pair (no jump of that pair may land there)."""
    state_space: StateSpace
    transitions: Dict[Tuple[int, int], object]
    initial: np.ndarray
    blocked: Dict[Tuple[int, int], FrozenSet[int]] = field(default_factory=dict)

    def __post_init__(self):
        n = self.state_space.size
        initial = np.array(self.initial, dtype=float)
        if initial.shape != (n,) or np.any(initial < 0) or abs(initial.sum() - 1.0) > 1e-12:
            raise ValidationError("initial distribution must be a probability vector over the states", field="initial")
        initial.setflags(write=False)
        object.__setattr__(self, "initial", initial)
        for (i, j) in self.transitions:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"invalid transition ({i}, {j})", field="intensities")

    @property
    def is_markov(self) -> bool:
        return not any(getattr(x, "duration_dependent", True) for x in self.transitions.values())

    def with_blackout(self, pairs, indices) -> "IntensityModel":
        blocked = dict(self.blocked)
        for pair in pairs:
            blocked[pair] = frozenset(blocked.get(pair, frozenset())) | frozenset(int(m) for m in indices)
        return IntensityModel(self.state_space, dict(self.transitions), self.initial, blocked)

    def validate_grid(self, grid: TimeGrid) -> float:
        """Largest per-step exit probability bound; raises when a step could exceed probability one."""
        worst = 0.0
        for i in range(self.state_space.size):
            mass = sum(x.upper_bound(grid.t_max) for (a, _), x in self.transitions.items() if a == i) * grid.step
            worst = max(worst, mass)
        if worst > 1.0:
            raise GridTooCoarseError(f"exit probability per step up to {worst:.3f} exceeds one", field="grid.step")
        if worst > RECOMMENDED_STEP_MASS:
            logger.warning(f"exit probability per step up to {worst:.3f}; a finer grid is recommended")
        return worst


@dataclass(frozen=True)
class Path:
    """One realized trajectory ``Z(t_m)`` (state indices) with ``Z(0-) = Z(0)``."""
    states: np.ndarray = field(repr=False)
    n_states: int
    tau_index: Optional[int] = None

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int64)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def n_points(self) -> int:
        return self.states.shape[0]

    @property
    def indicators(self) -> np.ndarray:
        out = np.zeros((self.n_states, self.n_points), dtype=np.int64)
        out[self.states, np.arange(self.n_points)] = 1
        return out

    def jumps(self) -> np.ndarray:
        """Off-diagonal increments ``dN_ij(t_m)``; the diagonal is zero."""
        out = np.zeros((self.n_states, self.n_states, self.n_points), dtype=np.int64)
        m = np.flatnonzero(self.states[1:] != self.states[:-1]) + 1
        out[self.states[m - 1], self.states[m], m] = 1
        return out

    def increments(self, pivot: PivotConventions) -> np.ndarray:
        """All increments ``dN_ij(t_m)`` including the signed diagonals anchored at the pivot."""
        out = self.jumps()
        forward = pivot.forward_mask
        exits = out.sum(axis=1)
        entries = out.sum(axis=0)
        diag = -np.where(forward, exits, entries)
        idx = np.arange(self.n_states)
        out[idx, idx] = diag
        return out


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths as a ``(paths, points)`` state matrix with their seeds and exercise indices
    (``-1`` when never exercised)."""
    states: np.ndarray = field(repr=False)
    n_states: int
    seeds: np.ndarray = field(repr=False)
    tau: np.ndarray = field(repr=False)

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, index: int) -> Path:
        t = int(self.tau[index])
        return Path(self.states[index], self.n_states, t if t >= 0 else None)

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    @property
    def n_points(self) -> int:
        return self.states.shape[1]

    def select(self, mask) -> "PathEnsemble":
        return PathEnsemble(self.states[mask], self.n_states, self.seeds[mask], self.tau[mask])

    def save(self, filename, grid: Optional[TimeGrid] = None) -> None:
        extra = {} if grid is None else {"grid": np.array([grid.t_max, grid.step, grid.pivot])}
        np.savez_compressed(filename, states=self.states, seeds=self.seeds, tau=self.tau,
                            n_states=np.array(self.n_states), **extra)

    @classmethod
    def load(cls, filename) -> "PathEnsemble":
        with np.load(filename) as data:
            return cls(data["states"], int(data["n_states"]), data["seeds"], data["tau"])


def _exercise_indices(states: np.ndarray, space: StateSpace) -> np.ndarray:
    if not space.is_partitioned:
        return np.full(states.shape[0], -1, dtype=np.int64)
    in_s1 = ~space.s0_mask()[states]
    return np.where(in_s1.any(axis=1), np.argmax(in_s1, axis=1), -1).astype(np.int64)


def _simulate_block(model: IntensityModel, grid: TimeGrid, seeds: np.ndarray) -> np.ndarray:
    n_points, h = grid.n_points, grid.step
    size = model.state_space.size
    uniforms = np.stack([np.random.default_rng(int(seed)).random(n_points) for seed in seeds])
    n = len(seeds)

    state = np.minimum(np.searchsorted(np.cumsum(model.initial), uniforms[:, 0], side="right"), size - 1)
    states = np.empty((n, n_points), dtype=np.int64)
    states[:, 0] = state
    duration = np.zeros(n)
    s1 = ~model.state_space.s0_mask() if model.state_space.is_partitioned else np.zeros(size, dtype=bool)
    free = s1[state]
    points = grid.points

    for m in range(1, n_points):
        history = HistorySummary(state, duration, free)
        probs = np.zeros((n, size))
        for (i, j), intensity in model.transitions.items():
            if m in model.blocked.get((i, j), ()):
                continue
            rows = np.flatnonzero(state == i)
            if rows.size == 0:
                continue
            probs[rows, j] = intensity(points[m - 1], history.take(rows)) * h
        total = probs.sum(axis=1)
        if np.any(total > 1.0):
            raise GridTooCoarseError(f"transition probability {total.max():.3f} > 1 at t={points[m]:.4f}", field="grid.step")
        u = uniforms[:, m]
        jump = u < total
        target = np.argmax(u[:, None] < np.cumsum(probs, axis=1), axis=1)
        state = np.where(jump, target, state)
        duration = np.where(jump, 0.0, duration + h)
        free = free | s1[state]
        states[:, m] = state
    return states


def simulate_path(model: IntensityModel, grid: TimeGrid, seed: int) -> Path:
    """Simulate one path reproducibly from ``seed``.

    At most one transition happens per step; the winner is chosen with one uniform draw
    split proportionally to ``lambda_ij(t_{m-1}) * h``.
    """
    states = _simulate_block(model, grid, np.array([seed]))
    tau = int(_exercise_indices(states, model.state_space)[0])
    return Path(states[0], model.state_space.size, tau if tau >= 0 else None)


def simulate_ensemble(model: IntensityModel, grid: TimeGrid, n_paths: int, base_seed: int = 0,
                      n_jobs: int = 1, chunk_size: int = CHUNK_SIZE) -> PathEnsemble:
    """Simulate ``n_paths`` paths with seeds ``base_seed + index``; chunking never changes a path."""
    model.validate_grid(grid)
    start = time.time()
    seeds = base_seed + np.arange(n_paths, dtype=np.int64)
    chunks = [seeds[k:k + chunk_size] for k in range(0, n_paths, chunk_size)]
    if n_jobs == 1 or len(chunks) == 1:
        blocks = [_simulate_block(model, grid, c) for c in chunks]
    else:
        blocks = Parallel(n_jobs=n_jobs)(delayed(_simulate_block)(model, grid, c) for c in chunks)
    states = np.concatenate(blocks, axis=0)
    logger.info(f"simulated {n_paths} paths on {grid.n_points} grid points in {time.time() - start:.1f}s")
    return PathEnsemble(states, model.state_space.size, seeds, _exercise_indices(states, model.state_space))


def counting_processes(path: Path, pivot: PivotConventions) -> np.ndarray:
    """Cumulative ``N_ij(t_m)`` for all ordered pairs.

    Off-diagonal processes start at zero at time 0; diagonal processes vanish at the pivot.
    """
    dn = path.increments(pivot)
    out = anchored_cumsum(dn, None, axis=-1)
    idx = np.arange(path.n_states)
    out[idx, idx] = anchored_cumsum(dn[idx, idx], pivot.pivot_index, axis=-1)
    return out


def indicator_reconstruction(path: Path, pivot: PivotConventions) -> np.ndarray:
    """Rebuild ``I_i(t_m)`` from ``I(s)`` and the counting processes on both sides of the pivot."""
    n = counting_processes(path, pivot)
    p = pivot.pivot_index
    at_pivot = path.indicators[:, p]
    change = n - n[:, :, [p]]
    forward = change.sum(axis=0)
    backward = -change.sum(axis=1)
    return at_pivot[:, None] + np.where(pivot.forward_mask, forward, backward)


def diagonal_identities(path: Path, pivot: PivotConventions) -> bool:
    """Row-sum identity after the pivot and column-sum identity up to it, at every grid point."""
    dn = path.increments(pivot)
    idx = np.arange(path.n_states)
    diag = dn[idx, idx]
    off = dn.copy()
    off[idx, idx] = 0
    expected = np.where(pivot.forward_mask, -off.sum(axis=1), -off.sum(axis=0))
    return bool(np.array_equal(diag, expected))


Payable = Union[CashflowSpec1D, FreePolicySpec, Tuple[CashflowSpec1D, CashflowSpec2D]]


def _payout(path: Path, spec: Payable, kappa: DiscountCurve, pivot: PivotConventions, window: range) -> float:
    w = kappa.weights(pivot.pivot_index)
    if isinstance(spec, CashflowSpec1D):
        return float(evaluate_states_1d(spec, path.states, w, window)[0])
    if isinstance(spec, FreePolicySpec):
        return float(evaluate_free_policy(spec, path.states, w, window)[0])
    premium_part, free_part = spec
    value = float(evaluate_states_1d(premium_part, path.states, w, window)[0])
    all_points = range(path.n_points)
    return value + eval_cashflow_2d(free_part.weighted(w, 1.0), path, (window, all_points))


def path_payout_future(path: Path, spec: Payable, kappa: DiscountCurve, pivot: PivotConventions) -> float:
    """Discounted future payments ``Y+ = int_(s,T] kappa(s)/kappa(u) B(du)`` of one path.

    ``spec`` is a 1D scheme, a free-policy scheme (evaluated directly) or the pair returned by
    :func:`pyfwdrates.cashflow.build_free_policy_cashflow`.
    """
    return _payout(path, spec, kappa, pivot, pivot.future)


def path_payout_past(path: Path, spec: Payable, kappa: DiscountCurve, pivot: PivotConventions) -> float:
    """Compounded past payments ``Y- = int_[0,s] kappa(s)/kappa(u) B(du)`` of one path."""
    return _payout(path, spec, kappa, pivot, pivot.past)


def ensemble_payouts(paths: PathEnsemble, spec: Payable, kappa: DiscountCurve, pivot: PivotConventions,
                     side: str = "future") -> np.ndarray:
    """Vectorized :func:`path_payout_future` / :func:`path_payout_past` over an ensemble."""
    if side not in ("future", "past"):
        raise ValidationError(f"side must be 'future' or 'past', got {side!r}")
    window = pivot.future if side == "future" else pivot.past
    w = kappa.weights(pivot.pivot_index)
    if isinstance(spec, CashflowSpec1D):
        return evaluate_states_1d(spec, paths.states, w, window)
    if isinstance(spec, FreePolicySpec):
        return evaluate_free_policy(spec, paths.states, w, window)
    return np.array([_payout(path, spec, kappa, pivot, window) for path in paths])
