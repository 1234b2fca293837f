import numpy as np
import pytest

from pyfwdrates.cashflow import check_no_lump_sum
from pyfwdrates.errors import LumpSumAtExerciseError
from pyfwdrates.simulate import simulate_ensemble

from . import free_policy


class Test_check_no_lump_sum:
    def test_blackout_model(self):
        space, grid, model, fp = free_policy(step=0.05, exercise=0.5)
        paths = simulate_ensemble(model, grid, 3000, base_seed=1)
        assert ((paths.tau > 0).sum() > 100)
        check_no_lump_sum(fp, paths.states)
        blocked = set(fp.blocked_indices().tolist())
        assert (not blocked & set(paths.tau[paths.tau > 0].tolist()))

    def test_exercise_on_premium_date(self):
        space, grid, model, fp = free_policy(step=0.05)
        states = np.zeros((2, grid.n_points), dtype=int)
        m = grid.index_of(1.0)
        states[1, m:] = 2
        with pytest.raises(LumpSumAtExerciseError) as e:
            check_no_lump_sum(fp, states, offset=10)
        assert (e.value.path_index == 11)
        assert (e.value.grid_index == m)
        assert (e.value.field == "free_policy")

    def test_exercise_between_premium_dates(self):
        space, grid, model, fp = free_policy(step=0.05)
        states = np.zeros((1, grid.n_points), dtype=int)
        states[0, grid.index_of(1.5):] = 2
        check_no_lump_sum(fp, states)
