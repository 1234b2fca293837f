"""Canonical cash-flow representations, their path-wise evaluation, squaring and the
free-policy decomposition."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Mapping, Optional, Tuple

import numpy as np

from .core import IndexRectangle, IndexWindow, Measure1D, Measure2D, StateSpace, window_mask
from .errors import LumpSumAtExerciseError, ValidationError

if TYPE_CHECKING:
    from .simulate import DiscountCurve, Path

logger = logging.getLogger(__name__)

PATH_CHUNK = 8192


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CashflowSpec1D:
    """One-dimensional canonical representation.

    ``sojourn[i]`` holds the atoms of the sojourn measure ``B_i`` and ``transition[i, j]`` the
    grid samples of the transition payoff ``b_ij``; the diagonal ``transition[i, i]`` is zero.
    """
    sojourn: np.ndarray = field(repr=False)
    transition: np.ndarray = field(repr=False)
    name: str = ""

    def __post_init__(self):
        sojourn, transition = _frozen(self.sojourn), _frozen(self.transition)
        if sojourn.ndim != 2 or transition.ndim != 3:
            raise ValidationError("sojourn must be (states, points) and transition (states, states, points)", field="cashflows")
        n, m = sojourn.shape
        if transition.shape != (n, n, m):
            raise ValidationError(f"transition shape {transition.shape} does not match sojourn {sojourn.shape}", field="cashflows")
        if not (np.all(np.isfinite(sojourn)) and np.all(np.isfinite(transition))):
            raise ValidationError("payments must be finite", field="cashflows")
        if np.any(transition[np.arange(n), np.arange(n)] != 0):
            raise ValidationError("transition payoffs on the diagonal must be zero", field="cashflows")
        object.__setattr__(self, "sojourn", sojourn)
        object.__setattr__(self, "transition", transition)

    @classmethod
    def zeros(cls, n_states: int, n_points: int, name: str = "") -> "CashflowSpec1D":
        return cls(np.zeros((n_states, n_points)), np.zeros((n_states, n_states, n_points)), name)

    @classmethod
    def build(cls, n_states: int, n_points: int,
              sojourn: Optional[Mapping[int, Measure1D]] = None,
              transition: Optional[Mapping[Tuple[int, int], object]] = None,
              name: str = "") -> "CashflowSpec1D":
        """Assemble a spec from per-state measures and per-pair payoff samples (scalars broadcast)."""
        b = np.zeros((n_states, n_points))
        c = np.zeros((n_states, n_states, n_points))
        for i, mu in (sojourn or {}).items():
            b[i] += mu.atoms
        for (i, j), values in (transition or {}).items():
            if i == j:
                raise ValidationError(f"transition payoff for diagonal pair ({i}, {j})", field="cashflows")
            c[i, j] += np.broadcast_to(np.asarray(values, dtype=float), (n_points,))
        return cls(b, c, name)

    @property
    def n_states(self) -> int:
        return self.sojourn.shape[0]

    @property
    def n_points(self) -> int:
        return self.sojourn.shape[1]

    def sojourn_measure(self, i: int) -> Measure1D:
        return Measure1D(self.sojourn[i])

    def nonzero_states(self) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(np.any(self.sojourn != 0, axis=1)))

    def nonzero_pairs(self) -> Tuple[Tuple[int, int], ...]:
        i, j = np.nonzero(np.any(self.transition != 0, axis=2))
        return tuple(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class MixedTerm:
    """Mixed sojourn/transition component: measure ``A_i(du1)`` and payoff surface ``a_ikl(u1, u2)``."""
    measure: Measure1D
    payoff: np.ndarray = field(repr=False)

    def __post_init__(self):
        payoff = _frozen(self.payoff)
        n = self.measure.n_points
        if payoff.shape != (n, n) or not np.all(np.isfinite(payoff)):
            raise ValidationError("mixed payoff must be a finite (points, points) surface", field="cashflows")
        object.__setattr__(self, "payoff", payoff)


@dataclass(frozen=True)
class CashflowSpec2D:
    """Two-dimensional canonical representation.

    Keys are state indices: ``sojourn2[(i, j)]``, ``mixed[(i, k, l)]`` with ``k != l`` and
    ``double[(i, j, k, l)]`` with ``i != j`` and ``k != l``.
    """
    n_states: int
    n_points: int
    sojourn2: Dict[Tuple[int, int], Measure2D] = field(default_factory=dict)
    mixed: Dict[Tuple[int, int, int], MixedTerm] = field(default_factory=dict)
    double: Dict[Tuple[int, int, int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n, m = self.n_states, self.n_points
        for (i, j), mu in self.sojourn2.items():
            if not (0 <= i < n and 0 <= j < n) or mu.n_points != m:
                raise ValidationError(f"sojourn pair ({i}, {j}) does not fit the state space/grid", field="cashflows")
        for (i, k, l), term in self.mixed.items():
            if k == l or term.measure.n_points != m:
                raise ValidationError(f"mixed term ({i}, {k}, {l}) needs k != l on the grid", field="cashflows")
        double = {}
        for key, surface in self.double.items():
            i, j, k, l = key
            if i == j or k == l:
                raise ValidationError(f"double term {key} needs i != j and k != l", field="cashflows")
            surface = _frozen(surface)
            if surface.shape != (m, m) or not np.all(np.isfinite(surface)):
                raise ValidationError(f"double term {key} must be a finite (points, points) surface", field="cashflows")
            double[key] = surface
        object.__setattr__(self, "double", double)

    def is_zero(self) -> bool:
        return (all(not np.any(mu.atoms) for mu in self.sojourn2.values())
                and all(not np.any(t.payoff) or not np.any(t.measure.atoms) for t in self.mixed.values())
                and all(not np.any(a) for a in self.double.values()))

    def weighted(self, w1, w2) -> "CashflowSpec2D":
        """Multiply every component by ``w1(u1) * w2(u2)``."""
        weight = np.outer(np.broadcast_to(w1, (self.n_points,)), np.broadcast_to(w2, (self.n_points,)))
        return self._mapped(lambda surface: surface * weight)

    def restricted(self, rows: range, cols: range) -> "CashflowSpec2D":
        """Zero every component outside the index rectangle ``rows x cols``."""
        mask = np.outer(window_mask(rows, self.n_points), window_mask(cols, self.n_points)).astype(float)
        return self._mapped(lambda surface: surface * mask)

    def _mapped(self, fn) -> "CashflowSpec2D":
        return CashflowSpec2D(
            self.n_states, self.n_points,
            sojourn2={k: Measure2D(fn(mu.atoms)) for k, mu in self.sojourn2.items()},
            mixed={k: MixedTerm(t.measure, fn(t.payoff)) for k, t in self.mixed.items()},
            double={k: fn(a) for k, a in self.double.items()},
        )


@dataclass(frozen=True)
class FreePolicySpec:
    """Payment scheme ``C`` with the rescaling ``rho[k, l, m]`` applied from the first S0 to S1 jump onwards.

    ``rho`` is only read for ``k`` in S0 and ``l`` in S1.
    """
    state_space: StateSpace
    base_scheme: CashflowSpec1D
    rho: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.state_space.is_partitioned:
            raise ValidationError("free-policy valuation needs an s0/s1 partition", field="states.s0")
        n, m = self.base_scheme.n_states, self.base_scheme.n_points
        rho = _frozen(self.rho)
        if rho.shape != (n, n, m) or not np.all(np.isfinite(rho)):
            raise ValidationError(f"rho must be a finite {(n, n, m)} array", field="free_policy.rho")
        s0, s1 = list(self.state_space.s0_indices), list(self.state_space.s1_indices)
        if np.any(self.base_scheme.transition[np.ix_(s0, s1)] != 0):
            raise ValidationError("the scheme must not pay on the exercise transition", field="free_policy.scheme")
        object.__setattr__(self, "rho", rho)

    def exercise_pairs(self) -> Tuple[Tuple[int, int], ...]:
        return tuple((k, l) for k in self.state_space.s0_indices for l in self.state_space.s1_indices)

    def blocked_indices(self) -> np.ndarray:
        """Grid indices where some premium-state sojourn measure has an atom; exercise is excluded there."""
        s0 = list(self.state_space.s0_indices)
        return np.flatnonzero(np.any(self.base_scheme.sojourn[s0] != 0, axis=0))


def _previous_states(states: np.ndarray) -> np.ndarray:
    """``Z(t_{m-1})`` for every grid index with ``Z(0-) = Z(0)``."""
    return np.concatenate([states[..., :1], states[..., :-1]], axis=-1)


def payment_stream(spec: CashflowSpec1D, states: np.ndarray) -> np.ndarray:
    """Payments ``B(dt_m)`` per path and grid index for a ``(paths, points)`` state matrix."""
    cols = np.arange(states.shape[-1])
    prev = _previous_states(states)
    return spec.sojourn[prev, cols] + spec.transition[prev, states, cols]


def evaluate_states_1d(spec: CashflowSpec1D, states: np.ndarray, weights=1.0, window: IndexWindow = None) -> np.ndarray:
    """Weighted 1D cash flow over ``window`` for every row of a state matrix."""
    states = np.atleast_2d(states)
    mask = window_mask(window, spec.n_points) * np.broadcast_to(np.asarray(weights, dtype=float), (spec.n_points,))
    out = np.empty(states.shape[0])
    for start in range(0, states.shape[0], PATH_CHUNK):
        block = states[start:start + PATH_CHUNK]
        out[start:start + PATH_CHUNK] = payment_stream(spec, block) @ mask
    return out


def eval_cashflow_1d(spec: CashflowSpec1D, path: "Path", window: IndexWindow = None) -> float:
    """Path-wise value of a 1D cash flow over ``window``.

    Parameters
    ----------
    spec : CashflowSpec1D
        Canonical representation ``B_i``, ``b_ij``.
    path : Path
        Realized trajectory on the same grid.
    window : range, optional
        Grid indices included, by default the whole grid.

    Returns
    -------
    float
        ``sum_i int I_i(u-) B_i(du) + sum_{i!=j} int b_ij(u) N_ij(du)`` over the window.
    """
    return float(evaluate_states_1d(spec, path.states, 1.0, window)[0])


def eval_cashflow_2d(spec: CashflowSpec2D, path: "Path", window: IndexRectangle = None) -> float:
    """Path-wise value of a 2D cash flow over the index rectangle ``window``, diagonal cells included."""
    if window is not None:
        spec = spec.restricted(*window)
    states = np.asarray(path.states)
    left = _previous_states(states)
    occupied = np.zeros((spec.n_states, spec.n_points))
    occupied[left, np.arange(spec.n_points)] = 1.0
    jumps = path.jumps()
    total = 0.0
    for (i, j), mu in spec.sojourn2.items():
        total += occupied[i] @ mu.atoms @ occupied[j]
    for (i, k, l), term in spec.mixed.items():
        if jumps[k, l].any():
            total += (occupied[i] * term.measure.atoms) @ term.payoff @ jumps[k, l]
    for (i, j, k, l), surface in spec.double.items():
        if jumps[i, j].any() and jumps[k, l].any():
            total += jumps[i, j] @ surface @ jumps[k, l]
    return float(total)


def square_cashflow(spec: CashflowSpec1D, kappa: "DiscountCurve", s_index: int) -> CashflowSpec2D:
    """2D representation of the squared discounted cash flow ``(int w(u) B(du))**2`` with
    ``w(u) = kappa(s) / kappa(u)``.

    Sojourn pairs and transition pairs cover the full grid square; the sojourn/transition cross
    term carries the factor 2.
    """
    values = np.asarray(kappa.values, dtype=float)
    if values.shape != (spec.n_points,) or np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValidationError("discount curve must be strictly positive on the grid", field="discount")
    w = values[s_index] / values
    sojourn_states = spec.nonzero_states()
    pairs = spec.nonzero_pairs()
    sojourn2 = {
        (i, j): Measure2D(np.outer(w * spec.sojourn[i], w * spec.sojourn[j]))
        for i in sojourn_states for j in sojourn_states
    }
    mixed = {
        (i, k, l): MixedTerm(spec.sojourn_measure(i), 2.0 * np.outer(w, w * spec.transition[k, l]))
        for i in sojourn_states for (k, l) in pairs
    }
    double = {
        (i, j, k, l): np.outer(w * spec.transition[i, j], w * spec.transition[k, l])
        for (i, j) in pairs for (k, l) in pairs
    }
    return CashflowSpec2D(spec.n_states, spec.n_points, sojourn2, mixed, double)


def build_free_policy_cashflow(fp: FreePolicySpec) -> Tuple[CashflowSpec1D, CashflowSpec2D]:
    """Split a free-policy cash flow into its premium-state part and its post-exercise part.

    Returns
    -------
    tuple(CashflowSpec1D, CashflowSpec2D)
        The first component pays ``C_i`` in S0 states and ``c_kl`` on S0 transitions; the second
        carries ``I_i(u1-) rho(u2, k, l) C_i(du1) N_kl(du2)`` and
        ``rho(u2, k, l) c_ij(u1) N_ij(du1) N_kl(du2)`` for ``i, j, l`` in S1 and ``k`` in S0.
    """
    space = fp.state_space
    scheme = fp.base_scheme
    n, m = scheme.n_states, scheme.n_points
    s0, s1 = list(space.s0_indices), list(space.s1_indices)

    sojourn = np.zeros((n, m))
    sojourn[s0] = scheme.sojourn[s0]
    transition = np.zeros((n, n, m))
    transition[np.ix_(s0, s0)] = scheme.transition[np.ix_(s0, s0)]
    premium_part = CashflowSpec1D(sojourn, transition, name=f"{scheme.name}:premium")

    exercise = [(k, l) for (k, l) in fp.exercise_pairs() if np.any(fp.rho[k, l] != 0)]
    ones = np.ones(m)
    mixed = {
        (i, k, l): MixedTerm(scheme.sojourn_measure(i), np.outer(ones, fp.rho[k, l]))
        for i in s1 if np.any(scheme.sojourn[i] != 0)
        for (k, l) in exercise
    }
    double = {
        (i, j, k, l): np.outer(scheme.transition[i, j], fp.rho[k, l])
        for i in s1 for j in s1 if i != j and np.any(scheme.transition[i, j] != 0)
        for (k, l) in exercise
    }
    logger.debug(f"free-policy split: {len(mixed)} mixed and {len(double)} double components")
    return premium_part, CashflowSpec2D(n, m, mixed=mixed, double=double)


def free_policy_factors(fp: FreePolicySpec, states: np.ndarray) -> np.ndarray:
    """``rho(tau, Z(tau-), Z(tau)) ** 1{tau <= u}`` per path and grid index."""
    states = np.atleast_2d(states)
    s0 = fp.state_space.s0_mask()
    n_paths, n_points = states.shape
    in_s1 = ~s0[states]
    exercised = in_s1.any(axis=1)
    tau = np.where(exercised, np.argmax(in_s1, axis=1), n_points)
    factors = np.ones((n_paths, n_points))
    rows = np.flatnonzero(exercised)
    if rows.size:
        t = tau[rows]
        before = states[rows, np.maximum(t - 1, 0)]
        after = states[rows, t]
        value = np.where(t > 0, fp.rho[before, after, t], 1.0)
        later = np.arange(n_points)[None, :] >= t[:, None]
        factors[rows] = np.where(later, value[:, None], 1.0)
    return factors


def evaluate_free_policy(fp: FreePolicySpec, states: np.ndarray, weights=1.0, window: IndexWindow = None) -> np.ndarray:
    """Direct evaluation of ``int rho**1{tau <= u} w(u) C(du)`` over ``window`` for every row of a state matrix."""
    states = np.atleast_2d(states)
    n_points = fp.base_scheme.n_points
    mask = window_mask(window, n_points) * np.broadcast_to(np.asarray(weights, dtype=float), (n_points,))
    out = np.empty(states.shape[0])
    for start in range(0, states.shape[0], PATH_CHUNK):
        block = states[start:start + PATH_CHUNK]
        out[start:start + PATH_CHUNK] = (payment_stream(fp.base_scheme, block) * free_policy_factors(fp, block)) @ mask
    return out


def check_no_lump_sum(fp: FreePolicySpec, states: np.ndarray, offset: int = 0):
    """Raise :class:`LumpSumAtExerciseError` for the first path exercising at a premium-state atom."""
    states = np.atleast_2d(states)
    blocked = fp.blocked_indices()
    if blocked.size == 0:
        return
    s0 = fp.state_space.s0_mask()
    prev = _previous_states(states)
    exercise = s0[prev] & ~s0[states]
    hits = np.argwhere(exercise[:, blocked])
    if hits.size:
        path, col = hits[0]
        raise LumpSumAtExerciseError(int(path) + offset, int(blocked[col]))
