from dataclasses import replace

import numpy as np
import pytest

from pyfwdrates.errors import MissingRatesError
from pyfwdrates.estimate import AsIfMarkov, StateDuration, estimate_moment_surfaces, transition_rates_1d, transition_rates_2d
from pyfwdrates.kolmogorov import (SolvedProbabilities, boundary_identities, residual_and_consistency, solve,
                                   solve_forward_1d, solve_forward_2d)
from pyfwdrates.simulate import simulate_ensemble

from . import disability


@pytest.fixture(scope="module")
def ensemble():
    space, grid, model = disability(step=0.1, pivot=2.0)
    return space, grid, simulate_ensemble(model, grid, 2000, base_seed=41)


class Test_solve_forward_2d:
    @pytest.mark.parametrize("label", ["active", "disabled"])
    def test_reproduces_estimated_pairs(self, ensemble, label):
        space, grid, paths = ensemble
        surfaces = estimate_moment_surfaces(paths, AsIfMarkov(space, grid), label)
        solved = solve(transition_rates_2d(surfaces), surfaces.initial, label)
        report = residual_and_consistency(solved, surfaces)
        assert (report.p1_residual < 1e-12)
        assert (report.p2_residual < 1e-9)
        assert (report.within(1e-9))
        assert (boundary_identities(solved))

    @pytest.mark.parametrize("scheme,label", [("as_if_markov", "active"), ("state_duration", "active|d[0.5,inf)")])
    def test_long_backward_sweep_is_exact(self, scheme, label):
        space, grid, model = disability(step=0.02, t_max=3.0, pivot=2.5)
        assert (grid.pivot_index >= 100)
        paths = simulate_ensemble(model, grid, 1500, base_seed=43)
        conditioning = AsIfMarkov(space, grid) if scheme == "as_if_markov" else StateDuration(space, grid, [0.5])
        surfaces = estimate_moment_surfaces(paths, conditioning, label)
        solved = solve(transition_rates_2d(surfaces), surfaces.initial, label)
        report = residual_and_consistency(solved, surfaces)
        assert (report.p1_residual == 0.0)
        assert (report.p2_residual == 0.0)
        assert (report.out_of_range <= 1e-9)
        assert (boundary_identities(solved))

    def test_public_solver_matches_solve(self, ensemble):
        space, grid, paths = ensemble
        surfaces = estimate_moment_surfaces(paths, AsIfMarkov(space, grid), "active")
        rates = transition_rates_2d(surfaces)
        p1 = solve_forward_1d(rates, surfaces.initial)
        assert (np.array_equal(p1, surfaces.p1))
        assert (np.array_equal(solve_forward_2d(rates, p1, surfaces.initial), surfaces.p2))

    def test_float_rates_stay_close(self, ensemble):
        space, grid, paths = ensemble
        surfaces = estimate_moment_surfaces(paths, AsIfMarkov(space, grid), "active")
        rates = replace(transition_rates_2d(surfaces), counts=None)
        solved = solve(rates, surfaces.initial)
        assert (np.max(np.abs(solved.p2 - surfaces.p2)) < 1e-9)

    def test_state_duration_cell(self, ensemble):
        space, grid, paths = ensemble
        scheme = StateDuration(space, grid, [0.5])
        surfaces = estimate_moment_surfaces(paths, scheme, "active|d[0.5,inf)")
        solved = solve(transition_rates_2d(surfaces), surfaces.initial)
        assert (np.max(np.abs(solved.p2 - surfaces.p2)) < 1e-9)

    def test_needs_2d_rates(self, ensemble):
        space, grid, paths = ensemble
        surfaces = estimate_moment_surfaces(paths, AsIfMarkov(space, grid), "active", two_dimensional=False)
        rates = transition_rates_1d(surfaces)
        with pytest.raises(MissingRatesError):
            solve_forward_2d(rates, surfaces.p1, surfaces.initial)
        assert (solve(rates, surfaces.initial).p2 is None)

    def test_save_load(self, ensemble, tmp_path):
        space, grid, paths = ensemble
        surfaces = estimate_moment_surfaces(paths, AsIfMarkov(space, grid), "active")
        solved = solve(transition_rates_2d(surfaces), surfaces.initial, "active")
        solved.save(tmp_path / "solved.npz")
        loaded = SolvedProbabilities.load(tmp_path / "solved.npz")
        assert (loaded.label == "active" and loaded.pivot == solved.pivot)
        assert (np.array_equal(loaded.p2, solved.p2))
