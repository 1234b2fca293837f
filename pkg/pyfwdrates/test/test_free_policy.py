import numpy as np
import pytest

from pyfwdrates.cashflow import FreePolicySpec
from pyfwdrates.estimate import AsIfMarkov, StateDuration, estimate_moment_surfaces, transition_rates_2d
from pyfwdrates.kolmogorov import solve
from pyfwdrates.reserve import (expected_future_1d, expected_past_1d, free_policy_prospective,
                                free_policy_retrospective, value_contract)
from pyfwdrates.simulate import DiscountCurve, ensemble_payouts, simulate_ensemble

from . import R, free_policy


def fitted_cell(model, grid, scheme, label, n_paths=3000, seed=101):
    paths = simulate_ensemble(model, grid, n_paths, base_seed=seed)
    surfaces = estimate_moment_surfaces(paths, scheme, label)
    return paths.select(scheme.mask(paths, label)), surfaces, transition_rates_2d(surfaces)


@pytest.fixture(scope="module")
def setting():
    return free_policy(step=0.1)


class Test_free_policy:
    @pytest.mark.parametrize("label", ["active", "active_free"])
    def test_as_if_markov(self, setting, label):
        space, grid, model, fp = setting
        members, surfaces, rates = fitted_cell(model, grid, AsIfMarkov(space, grid), label)
        kappa = DiscountCurve.flat(R, grid)
        pivot = grid.conventions
        prospective = ensemble_payouts(members, fp, kappa, pivot, "future").mean()
        retrospective = ensemble_payouts(members, fp, kappa, pivot, "past").mean()
        assert (np.isclose(free_policy_prospective(fp, surfaces, rates, kappa), prospective, rtol=1e-9, atol=1e-12))
        assert (np.isclose(free_policy_retrospective(fp, surfaces, rates, kappa), retrospective, rtol=1e-9, atol=1e-12))

    def test_state_duration(self, setting):
        space, grid, model, fp = setting
        scheme = StateDuration(space, grid, [1.0])
        members, surfaces, rates = fitted_cell(model, grid, scheme, "active_free|d[0,1)")
        solved = solve(rates, surfaces.initial)
        kappa = DiscountCurve.flat(R, grid)
        mean = ensemble_payouts(members, fp, kappa, grid.conventions, "future").mean()
        assert (np.isclose(free_policy_prospective(fp, solved, rates, kappa), mean, rtol=1e-7))

    def test_rho_one_is_plain_reserve(self, setting):
        space, grid, model, fp = setting
        members, surfaces, rates = fitted_cell(model, grid, AsIfMarkov(space, grid), "active", 1500)
        plain = FreePolicySpec(space, fp.base_scheme, np.ones_like(fp.rho))
        kappa = DiscountCurve.flat(R, grid)
        assert (np.isclose(free_policy_prospective(plain, surfaces, rates, kappa),
                           expected_future_1d(fp.base_scheme, surfaces, rates, kappa), rtol=1e-9))
        assert (np.isclose(free_policy_retrospective(plain, surfaces, rates, kappa),
                           expected_past_1d(fp.base_scheme, surfaces, rates, kappa), rtol=1e-9))

    def test_without_exercise(self):
        space, grid, model, fp = free_policy(step=0.1, exercise=0.0)
        members, surfaces, rates = fitted_cell(model, grid, AsIfMarkov(space, grid), "active", 500)
        kappa = DiscountCurve.flat(R, grid)
        assert (np.isclose(free_policy_prospective(fp, surfaces, rates, kappa),
                           expected_future_1d(fp.base_scheme, surfaces, rates, kappa), rtol=1e-12))

    def test_value_contract(self, setting):
        space, grid, model, fp = setting
        members, surfaces, rates = fitted_cell(model, grid, AsIfMarkov(space, grid), "active", 1000)
        report = value_contract(fp, surfaces, rates, DiscountCurve.flat(R, grid), grid.t_max, grid.step,
                                surfaces.n_paths, "active")
        assert (report.cashflow == "contract:free_policy")
        assert (report.s_plus is None and report.variance_ok)
        assert (report.pivot == pytest.approx(2.0))
