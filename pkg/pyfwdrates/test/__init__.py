import os

import numpy as np

from pyfwdrates.cashflow import CashflowSpec1D, FreePolicySpec
from pyfwdrates.core import Measure1D, StateSpace, TimeGrid
from pyfwdrates.simulate import ConstantIntensity, DurationDecay, IntensityModel

MU = 0.1
R = 0.03

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def two_state(step=0.02, t_max=10.0, pivot=0.0, mu=MU):
    space = StateSpace(("alive", "dead"))
    grid = TimeGrid(t_max, step, pivot)
    model = IntensityModel(space, {(0, 1): ConstantIntensity(mu)}, np.array([1.0, 0.0]))
    return space, grid, model


def disability(step=0.05, t_max=5.0, pivot=2.0):
    space = StateSpace(("active", "disabled", "dead"))
    grid = TimeGrid(t_max, step, pivot)
    model = IntensityModel(space, {
        (0, 1): ConstantIntensity(0.15),
        (0, 2): ConstantIntensity(0.02),
        (1, 0): DurationDecay(0.8, 1.5, 0.05),
        (1, 2): ConstantIntensity(0.05),
    }, np.array([1.0, 0.0, 0.0]))
    return space, grid, model


def free_policy(step=0.05, t_max=5.0, pivot=2.0, exercise=0.15, rho=None):
    space = StateSpace(("active", "dead", "active_free", "dead_free"),
                       s0=("active", "dead"), s1=("active_free", "dead_free"))
    grid = TimeGrid(t_max, step, pivot)
    n = grid.n_points
    premiums = np.zeros(n)
    for t in range(int(t_max)):
        premiums[grid.index_of(float(t))] = -0.1
    scheme = CashflowSpec1D.build(4, n, sojourn={
        0: Measure1D(premiums) + Measure1D.atom(n, n - 1, 1.0),
        2: Measure1D.atom(n, n - 1, 1.0),
    }, transition={(0, 1): 1.0, (2, 3): 1.0}, name="contract")
    factors = np.zeros((4, 4, n))
    factors[0, 2] = 0.3 + 0.1 * grid.points if rho is None else rho
    fp = FreePolicySpec(space, scheme, factors)
    transitions = {(0, 1): ConstantIntensity(0.03), (2, 3): DurationDecay(0.05, 1.0, 0.02)}
    if exercise > 0:
        transitions[(0, 2)] = ConstantIntensity(exercise)
    model = IntensityModel(space, transitions, np.array([1.0, 0.0, 0.0, 0.0]))
    model = model.with_blackout(fp.exercise_pairs(), fp.blocked_indices())
    return space, grid, model, fp


def term_insurance(space, grid, i=0, j=1, amount=1.0):
    return CashflowSpec1D.build(space.size, grid.n_points, transition={(i, j): amount}, name="term_insurance")


def endowment(space, grid, state=0, amount=1.0):
    n = grid.n_points
    return CashflowSpec1D.build(space.size, n, sojourn={state: Measure1D.atom(n, n - 1, amount)}, name="endowment")


def annuity(space, grid, state=0, rate=1.0):
    n = grid.n_points
    atoms = np.full(n, rate * grid.step)
    atoms[0] = 0.0
    return CashflowSpec1D.build(space.size, n, sojourn={state: Measure1D(atoms)}, name="annuity")


def random_spec(rng, n_states, n_points, density=0.2):
    sojourn = np.where(rng.random((n_states, n_points)) < density, rng.normal(size=(n_states, n_points)), 0.0)
    transition = rng.normal(size=(n_states, n_states, n_points))
    transition[np.arange(n_states), np.arange(n_states)] = 0.0
    return CashflowSpec1D(sojourn, transition, name="random")
