"""Prospective and retrospective reserves, two-dimensional expectations, second moments and
free-policy values from occupation probabilities and transition rates."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .cashflow import CashflowSpec1D, CashflowSpec2D, FreePolicySpec, build_free_policy_cashflow
from .core import PivotConventions, window_mask
from .errors import MissingRatesError, ValidationError
from .estimate import RateSystem
from .simulate import DiscountCurve

logger = logging.getLogger(__name__)

EPS_VAR_REL = 1e-6


def _pivot(rates: RateSystem, pivot: Optional[PivotConventions]) -> PivotConventions:
    if pivot is None:
        return rates.pivot
    if pivot != rates.pivot:
        raise ValidationError("rates were built for another pivot", field="grid.pivot")
    return pivot


def _expected_1d(spec: CashflowSpec1D, probs, rates: RateSystem, weights: np.ndarray, window: range) -> float:
    pivot = rates.pivot
    mask = window_mask(window, pivot.n_points) * weights
    occupation = probs.p1[:, pivot.left_indices]
    sojourn = float(np.sum(occupation * spec.sojourn * mask))
    transition = float(np.sum(spec.transition * rates.moment_increments_1d(probs.p1) * mask))
    return sojourn + transition


def expected_future_1d(spec: CashflowSpec1D, probs, rates: RateSystem, kappa: DiscountCurve,
                       pivot: Optional[PivotConventions] = None) -> float:
    """Prospective reserve ``V+``.

    Parameters
    ----------
    spec : CashflowSpec1D
        Payments ``B_i`` and ``b_ij``.
    probs : MomentSurfaces or SolvedProbabilities
        Anything with ``p1`` on the rates' grid.
    rates : RateSystem
        One-dimensional rates.
    kappa : DiscountCurve
        Savings account.
    pivot : PivotConventions, optional
        Defaults to the pivot of ``rates``.

    Returns
    -------
    float
        ``sum_i int_(s,T] w P_i(t-) B_i(dt) + sum_{i!=j} int_(s,T] w b_ij P_i(t-) Lambda_ij(dt)``
    """
    pivot = _pivot(rates, pivot)
    return _expected_1d(spec, probs, rates, kappa.weights(pivot.pivot_index), pivot.future)


def expected_past_1d(spec: CashflowSpec1D, probs, rates: RateSystem, kappa: DiscountCurve,
                     pivot: Optional[PivotConventions] = None) -> float:
    """Retrospective reserve ``V-`` over ``[0, s]``; transition payments use ``P_j(t) Lambda_ij(dt)``."""
    pivot = _pivot(rates, pivot)
    return _expected_1d(spec, probs, rates, kappa.weights(pivot.pivot_index), pivot.past)


def _sojourn_pairs(spec: CashflowSpec2D, p2: np.ndarray, pivot: PivotConventions) -> float:
    left = pivot.left_indices
    return float(sum(np.sum(p2[i, j][np.ix_(left, left)] * mu.atoms) for (i, j), mu in spec.sojourn2.items()))


def _anchor_mixed(spec: CashflowSpec2D, initial: np.ndarray, dq1: np.ndarray) -> float:
    total = 0.0
    for (i, k, l), term in spec.mixed.items():
        if initial[i] != 0:
            total += initial[i] * (term.measure.atoms @ term.payoff @ dq1[k, l])
    return float(total)


def _summed_moments(dq2: np.ndarray, index: Dict, pair, partners) -> Optional[np.ndarray]:
    a = index.get(pair)
    rows = [index[b] for b in partners if b in index]
    if a is None or not rows:
        return None
    return dq2[a, rows].sum(axis=0)


def _past_mixed(spec: CashflowSpec2D, dq2: np.ndarray, rates: RateSystem) -> float:
    """Mixed-term correction for ``u1 <= s`` with the inner variable on ``[u1, s]``."""
    pivot = rates.pivot
    p = pivot.pivot_index
    index = rates.pair_index
    total = 0.0
    for (i, k, l), term in spec.mixed.items():
        g = _summed_moments(dq2, index, (k, l), [b for b in rates.pairs if b[0] == i])
        if g is None:
            continue
        cs = np.concatenate([np.zeros((g.shape[0], 1)), np.cumsum(g, axis=1)], axis=1)
        inner = cs[:, [p + 1]] - cs[:, :p + 1]
        total += term.measure.atoms[:p + 1] @ np.sum(term.payoff[:p + 1] * inner.T, axis=1)
    return float(total)


def _future_mixed(spec: CashflowSpec2D, dq2: np.ndarray, rates: RateSystem) -> float:
    """Mixed-term correction for ``u1 > s`` with the inner variable on ``(s, u1)``."""
    pivot = rates.pivot
    p = pivot.pivot_index
    index = rates.pair_index
    total = 0.0
    for (i, k, l), term in spec.mixed.items():
        g = _summed_moments(dq2, index, (k, l), [b for b in rates.pairs if b[1] == i])
        if g is None:
            continue
        cs = np.concatenate([np.zeros((g.shape[0], 1)), np.cumsum(g, axis=1)], axis=1)
        inner = cs[:, p + 1:-1] - cs[:, [p + 1]]
        total += term.measure.atoms[p + 1:] @ np.sum(term.payoff[p + 1:] * inner.T, axis=1)
    return float(total)


def _double(spec: CashflowSpec2D, dq2: np.ndarray, rates: RateSystem) -> float:
    index = rates.pair_index
    total = 0.0
    for (i, j, k, l), surface in spec.double.items():
        a, b = index.get((i, j)), index.get((k, l))
        if a is not None and b is not None:
            total += np.sum(surface * dq2[a, b])
    return float(total)


def _moments(probs1, probs2, rates: RateSystem):
    if not rates.has_2d:
        raise MissingRatesError("two-dimensional rates are required", field="rates")
    if getattr(probs2, "p2", None) is None:
        raise MissingRatesError("two-dimensional occupation probabilities are required", field="probs")
    return rates.moment_increments_1d(probs1.p1), rates.moment_increments_2d(probs2.p2)


def expected_2d(spec: CashflowSpec2D, probs1, probs2, rates: RateSystem,
                pivot: Optional[PivotConventions] = None) -> float:
    """Conditional expectation of a two-dimensional cash flow.

    Sum of five terms: sojourn pairs against ``P_ij(u1-, u2-)``; the mixed terms anchored at
    ``I_i(s)``; their corrections for ``u1 <= s`` (inner variable on ``[u1, s]``) and for ``u1 > s``
    (inner variable on ``(s, u1)``, strict at ``u1``); and the double-transition terms against the
    2D moment increments.

    Raises
    ------
    MissingRatesError
        ``rates`` or ``probs2`` lack the two-dimensional part.
    """
    pivot = _pivot(rates, pivot)
    dq1, dq2 = _moments(probs1, probs2, rates)
    terms = (
        _sojourn_pairs(spec, probs2.p2, pivot),
        _anchor_mixed(spec, probs1.initial, dq1),
        _past_mixed(spec, dq2, rates),
        _future_mixed(spec, dq2, rates),
        _double(spec, dq2, rates),
    )
    logger.debug(f"2D expectation terms {', '.join(f'{t:.6g}' for t in terms)}")
    return float(sum(terms))


def second_moment_future(spec: CashflowSpec1D, probs, rates: RateSystem, kappa: DiscountCurve,
                         pivot: Optional[PivotConventions] = None) -> float:
    """``S+ = E[(Y+)^2 | G_s]`` evaluated directly on ``(s, T]^2``."""
    pivot = _pivot(rates, pivot)
    if not rates.has_2d or getattr(probs, "p2", None) is None:
        raise MissingRatesError("two-dimensional rates and probabilities are required", field="rates")
    future = np.array(pivot.future)
    if future.size == 0:
        return 0.0
    w = kappa.weights(pivot.pivot_index)[future]
    left = future - 1
    p1, p2, d1, d2 = probs.p1, probs.p2, rates.d1, rates.d2
    paid = spec.sojourn[:, future] * w
    benefit = spec.transition[:, :, future] * w
    index = rates.pair_index
    states = spec.nonzero_states()
    pairs = spec.nonzero_pairs()
    window = np.ix_(left, left)
    block = np.ix_(future, future)

    sojourn = sum(paid[i] @ p2[i, j][window] @ paid[j] for i in states for j in states)

    anchored = sum(probs.initial[i] * paid[i].sum() for i in states) * sum(
        benefit[k, l] @ (p1[k, left] * d1[k, l, future]) for (k, l) in pairs)

    crossed = 0.0
    for (k, l) in pairs:
        a = index.get((k, l))
        if a is None:
            continue
        for i in states:
            kernel = np.zeros((future.size, future.size))
            for (j, target) in rates.pairs:
                b = index[(j, target)]
                if target == i:
                    kernel += p2[k, j][window] * d2[a, b][block]
            strictly_before = np.cumsum(kernel, axis=1) - kernel
            crossed += benefit[k, l] @ strictly_before @ paid[i]

    transitions = 0.0
    for (i, j) in pairs:
        for (k, l) in pairs:
            a, b = index.get((i, j)), index.get((k, l))
            if a is None or b is None:
                continue
            transitions += benefit[i, j] @ (p2[i, k][window] * d2[a, b][block]) @ benefit[k, l]

    return float(sojourn + 2.0 * anchored + 2.0 * crossed + transitions)


def conditional_variance(v_plus: float, s_plus: float) -> float:
    """``S+ - (V+)^2``."""
    return float(s_plus - v_plus * v_plus)


def variance_tolerance(s_plus: float) -> float:
    return EPS_VAR_REL * max(1.0, abs(s_plus))


def free_policy_retrospective(fp: FreePolicySpec, probs, rates: RateSystem, kappa: DiscountCurve,
                              pivot: Optional[PivotConventions] = None) -> float:
    """Retrospective reserve of a free-policy scheme over ``[0, s]``.

    Premium-state payments use the 1D reserve; payments after exercise add the ``I_i(s)``
    anchored term, the correction over ``[u1, s]`` and the double-transition term, each with
    ``rho(u2, k, l)``.
    """
    pivot = _pivot(rates, pivot)
    premium_part, free_part = build_free_policy_cashflow(fp)
    w = kappa.weights(pivot.pivot_index)
    spec = free_part.weighted(w, 1.0).restricted(pivot.past, pivot.past)
    dq1, dq2 = _moments(probs, probs, rates)
    return float(expected_past_1d(premium_part, probs, rates, kappa, pivot)
                 + _anchor_mixed(spec, probs.initial, dq1)
                 + _past_mixed(spec, dq2, rates)
                 + _double(spec, dq2, rates))


def free_policy_prospective(fp: FreePolicySpec, probs, rates: RateSystem, kappa: DiscountCurve,
                            pivot: Optional[PivotConventions] = None) -> float:
    """Prospective reserve of a free-policy scheme over ``(s, T]``; the exercise time may lie on
    either side of the pivot, so backward and forward 2D rates both enter."""
    pivot = _pivot(rates, pivot)
    premium_part, free_part = build_free_policy_cashflow(fp)
    w = kappa.weights(pivot.pivot_index)
    spec = free_part.weighted(w, 1.0).restricted(pivot.future, range(pivot.n_points))
    dq1, dq2 = _moments(probs, probs, rates)
    return float(expected_future_1d(premium_part, probs, rates, kappa, pivot)
                 + _anchor_mixed(spec, probs.initial, dq1)
                 + _future_mixed(spec, dq2, rates)
                 + _double(spec, dq2, rates))


@dataclass
class ValuationReport:
    """Reserve figures of one cash flow in one conditioning cell."""
    label: str
    cashflow: str
    pivot: float
    horizon: float
    step: float
    n_paths: int
    v_plus: float
    v_minus: float
    s_plus: Optional[float] = None
    variance: Optional[float] = None
    provenance: str = "estimated"
    oracle: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.s_plus is not None and self.variance is None:
            self.variance = conditional_variance(self.v_plus, self.s_plus)

    @property
    def variance_ok(self) -> bool:
        if self.variance is None:
            return True
        return self.variance >= -variance_tolerance(self.s_plus)

    def to_row(self) -> dict:
        row = asdict(self)
        row.pop("oracle")
        row.update(self.oracle)
        return row

    def to_text(self) -> str:
        return "\n".join(f"{key} = {value}" for key, value in self.to_row().items())


def value_contract(spec, probs, rates: RateSystem, kappa: DiscountCurve, horizon: float, step: float,
                   n_paths: int, label: str = "", second_moment: bool = True) -> ValuationReport:
    """V+, V- and, for plain schemes with 2D inputs, S+ and the variance of one cash flow."""
    pivot = rates.pivot
    if isinstance(spec, FreePolicySpec):
        v_plus = free_policy_prospective(spec, probs, rates, kappa)
        v_minus = free_policy_retrospective(spec, probs, rates, kappa)
        name, s_plus = f"{spec.base_scheme.name}:free_policy", None
    else:
        v_plus = expected_future_1d(spec, probs, rates, kappa)
        v_minus = expected_past_1d(spec, probs, rates, kappa)
        name = spec.name
        s_plus = second_moment_future(spec, probs, rates, kappa) if second_moment and rates.has_2d else None
    return ValuationReport(label, name, pivot.pivot_index * step, horizon, step, n_paths, v_plus, v_minus,
                           s_plus, provenance=getattr(probs, "provenance", ""))


def mixture_value(values: Sequence[float], frequencies: Sequence[float]) -> float:
    """Frequency-weighted average of per-cell values (law of total expectation over finer labels)."""
    values, frequencies = np.asarray(values, dtype=float), np.asarray(frequencies, dtype=float)
    if frequencies.sum() <= 0:
        raise ValidationError("frequencies must have positive total")
    return float(values @ frequencies / frequencies.sum())
