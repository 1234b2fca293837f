import numpy as np
import pytest

from pyfwdrates.core import PivotConventions, TimeGrid
from pyfwdrates.errors import GridRangeError, ValidationError


class Test_TimeGrid:
    def test_points(self):
        grid = TimeGrid(10.0, 0.02, 2.0)
        assert (grid.n_steps == 500)
        assert (grid.n_points == 501)
        assert (grid.pivot_index == 100)
        assert (np.isclose(grid.points[-1], 10.0))

    def test_pivot_off_grid(self):
        with pytest.raises(ValidationError) as e:
            TimeGrid(10.0, 0.02, 3.005)
        assert (e.value.field == "grid.pivot")
        assert ("grid.pivot" in str(e.value))

    def test_pivot_outside(self):
        with pytest.raises(ValidationError) as e:
            TimeGrid(10.0, 0.5, 11.0)
        assert (e.value.field == "grid.pivot")

    def test_horizon_not_multiple(self):
        with pytest.raises(ValidationError) as e:
            TimeGrid(1.0, 0.3)
        assert (e.value.field == "grid.step")

    def test_index_of(self):
        grid = TimeGrid(5.0, 0.25)
        assert (grid.index_of(1.25) == 5)
        with pytest.raises(GridRangeError):
            grid.index_of(1.3)
        with pytest.raises(GridRangeError):
            grid.index_of(6.0)

    def test_with_pivot(self):
        grid = TimeGrid(5.0, 0.25).with_pivot(2.5)
        assert (grid.conventions == PivotConventions(10, 21))
