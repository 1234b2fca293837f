import math

import numpy as np
import pytest

from pyfwdrates.errors import ValidationError
from pyfwdrates.estimate import AsIfMarkov, StateDuration, estimate_moment_surfaces, transition_rates_1d
from pyfwdrates.oracle import label_frequencies, mc_conditional_mean
from pyfwdrates.reserve import expected_future_1d, mixture_value
from pyfwdrates.simulate import DiscountCurve, ensemble_payouts, simulate_ensemble

from . import R, annuity, disability


def reserve(paths, scheme, label, spec, kappa):
    surfaces = estimate_moment_surfaces(paths, scheme, label, two_dimensional=False)
    return expected_future_1d(spec, surfaces, transition_rates_1d(surfaces), kappa)


@pytest.fixture(scope="module")
def setting():
    space, grid, model = disability(step=0.05, t_max=8.0, pivot=4.0)
    paths = simulate_ensemble(model, grid, 6000, base_seed=121)
    return space, grid, paths, annuity(space, grid, 1), DiscountCurve.flat(R, grid)


class Test_mixture_value:
    def test_total_expectation(self, setting):
        space, grid, paths, spec, kappa = setting
        coarse = reserve(paths, AsIfMarkov(space, grid), "disabled", spec, kappa)
        scheme = StateDuration(space, grid, [0.5, 2.0])
        freq = {k: v for k, v in label_frequencies(paths, scheme).items() if k.startswith("disabled|")}
        values = [reserve(paths, scheme, label, spec, kappa) for label in freq]
        assert (np.isclose(mixture_value(values, list(freq.values())), coarse, rtol=1e-10))

    def test_buckets_discriminate(self, setting):
        space, grid, paths, spec, kappa = setting
        scheme = StateDuration(space, grid, [0.5, 2.0])
        short, long = "disabled|d[0,0.5)", "disabled|d[2,inf)"
        pivot = grid.conventions
        oracles = [mc_conditional_mean(paths, scheme, label, lambda cell: ensemble_payouts(cell, spec, kappa, pivot),
                                       vectorized=True) for label in (short, long)]
        difference = reserve(paths, scheme, long, spec, kappa) - reserve(paths, scheme, short, spec, kappa)
        assert (difference > 5 * math.hypot(*(o.standard_error for o in oracles)))

    def test_weights(self):
        assert (mixture_value([1.0, 3.0], [1, 3]) == 2.5)
        with pytest.raises(ValidationError):
            mixture_value([1.0], [0.0])
