import numpy as np
import pytest

from pyfwdrates.errors import ValidationError
from pyfwdrates.estimate import AsIfMarkov, RateSystem, StateDuration, estimate_moment_surfaces, transition_rates_1d
from pyfwdrates.kolmogorov import solve
from pyfwdrates.reserve import expected_future_1d
from pyfwdrates.simulate import DiscountCurve, ensemble_payouts, simulate_ensemble

from . import MU, R, annuity, disability, endowment, random_spec, term_insurance, two_state


@pytest.fixture(scope="module")
def fitted():
    space, grid, model = disability()
    paths = simulate_ensemble(model, grid, 4000, base_seed=61)
    return space, grid, paths


def cell(paths, scheme, label):
    surfaces = estimate_moment_surfaces(paths, scheme, label, two_dimensional=False)
    return paths.select(scheme.mask(paths, label)), surfaces, transition_rates_1d(surfaces)


class Test_expected_future_1d:
    @pytest.mark.parametrize("label", ["active", "disabled"])
    def test_equals_ensemble_mean(self, fitted, label):
        space, grid, paths = fitted
        members, surfaces, rates = cell(paths, AsIfMarkov(space, grid), label)
        kappa = DiscountCurve.flat(R, grid)
        rng = np.random.default_rng(0)
        for spec in (term_insurance(space, grid, 0, 2), annuity(space, grid, 1), endowment(space, grid),
                     random_spec(rng, 3, grid.n_points)):
            mean = ensemble_payouts(members, spec, kappa, grid.conventions).mean()
            assert (np.isclose(expected_future_1d(spec, surfaces, rates, kappa), mean, rtol=1e-10, atol=1e-12))

    def test_solved_probabilities(self, fitted):
        space, grid, paths = fitted
        members, surfaces, rates = cell(paths, StateDuration(space, grid, [0.5, 1.0]), "disabled|d[0,0.5)")
        solved = solve(rates, surfaces.initial)
        kappa = DiscountCurve.flat(R, grid)
        spec = annuity(space, grid, 1)
        mean = ensemble_payouts(members, spec, kappa, grid.conventions).mean()
        assert (np.isclose(expected_future_1d(spec, solved, rates, kappa), mean, rtol=1e-10))

    def test_two_state_term_insurance(self):
        space, grid, model = two_state(step=0.01, t_max=10.0)
        rates = RateSystem.from_intensities(model, grid)
        solved = solve(rates, [1.0, 0.0])
        value = expected_future_1d(term_insurance(space, grid), solved, rates, DiscountCurve.flat(R, grid))
        exact = MU / (MU + R) * (1 - np.exp(-(MU + R) * 10.0))
        assert (abs(value - exact) < 2e-3)

    def test_pivot_at_horizon(self):
        space, grid, model = two_state(step=0.1, t_max=1.0, pivot=1.0)
        paths = simulate_ensemble(model, grid, 200)
        members, surfaces, rates = cell(paths, AsIfMarkov(space, grid), "alive")
        assert (expected_future_1d(endowment(space, grid), surfaces, rates, DiscountCurve.constant(grid)) == 0.0)

    def test_pivot_mismatch(self, fitted):
        space, grid, paths = fitted
        members, surfaces, rates = cell(paths, AsIfMarkov(space, grid), "active")
        with pytest.raises(ValidationError):
            expected_future_1d(endowment(space, grid), surfaces, rates, DiscountCurve.constant(grid),
                               pivot=grid.with_pivot(1.0).conventions)
