import numpy as np
import pytest

from pyfwdrates.core import StateSpace, TimeGrid
from pyfwdrates.errors import InconsistentEnsembleError, MissingRatesError, ValidationError
from pyfwdrates.estimate import (AsIfMarkov, MomentSurfaces, RateSystem, estimate_moment_surfaces, transition_rates_1d,
                                 transition_rates_2d)
from pyfwdrates.simulate import PathEnsemble, simulate_ensemble

from . import MU, disability, two_state


class Test_transition_rates:
    def test_hand_computed(self):
        grid = TimeGrid(5.0, 1.0, 2.0)
        states = np.array([[0, 0, 0, 1, 1, 2], [0, 0, 0, 0, 2, 2]])
        paths = PathEnsemble(states, 3, np.arange(2), np.full(2, -1))
        s = estimate_moment_surfaces(paths, AsIfMarkov(StateSpace(("a", "b", "c")), grid), "a")
        rates = transition_rates_2d(s)
        assert (rates.d1[0, 1, 3] == 0.5)
        assert (rates.d1[0, 2, 4] == 1.0)
        assert (rates.d1[1, 2, 5] == 1.0)
        k = rates.pair_index
        assert (rates.d2[k[(0, 1)], k[(1, 2)], 3, 5] == 1.0)
        assert (np.all(rates.d1[:, :, :3] == 0))

    def test_nelson_aalen(self):
        space, grid, model = two_state(step=0.01, t_max=5.0)
        paths = simulate_ensemble(model, grid, 20000, base_seed=3)
        rates = transition_rates_1d(estimate_moment_surfaces(paths, AsIfMarkov(space, grid), "alive", False))
        cumulative = rates.cumulative_1d()
        assert (abs(cumulative[0, 1, -1] - MU * 5.0) < 0.03)
        assert (np.allclose(cumulative[0, 0], -cumulative[0, 1]))

    def test_inconsistent_ensemble(self):
        pivot = TimeGrid(2.0, 1.0).conventions
        p1 = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        dq1 = np.zeros((2, 2, 3))
        dq1[1, 0, 2] = 0.1
        surfaces = MomentSurfaces("x", 10, pivot, np.array([1.0, 0.0]), p1, dq1)
        with pytest.raises(InconsistentEnsembleError):
            transition_rates_1d(surfaces)

    def test_pivot_mismatch(self):
        space, grid, model = disability()
        s = estimate_moment_surfaces(simulate_ensemble(model, grid, 200), AsIfMarkov(space, grid), "active", False)
        with pytest.raises(ValidationError):
            transition_rates_1d(s, grid.with_pivot(1.0).conventions)
        with pytest.raises(ValidationError):
            transition_rates_2d(s)
        with pytest.raises(MissingRatesError):
            transition_rates_1d(s).cumulative_2d()

    def test_from_intensities(self):
        space, grid, model = two_state(step=0.1, t_max=1.0)
        rates = RateSystem.from_intensities(model, grid)
        assert (np.allclose(rates.d1[0, 1, 1:], MU * 0.1))
        assert (rates.d1[0, 1, 0] == 0.0)
        assert (np.allclose(rates.d1[0, 0], -rates.d1[0, 1]))
        with pytest.raises(ValidationError):
            RateSystem.from_intensities(disability()[2], disability()[1])

    def test_perturbed(self):
        space, grid, model = two_state(step=0.1, t_max=1.0)
        rates = RateSystem.from_intensities(model, grid)
        bumped = rates.perturbed((0, 1), 3, 0.01)
        assert (np.isclose(bumped.d1[0, 1, 3], rates.d1[0, 1, 3] + 0.01))
        assert (bumped.source.endswith("perturbed"))
