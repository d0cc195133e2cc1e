import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dro_kit import core
from dro_kit.core import DroProblem, DualPoint, GradientEstimate, make_problem
from dro_kit.datasets import Dataset, rademacher_dataset, synth_imbalanced
from dro_kit.divergences import DivergenceSpec
from dro_kit.errors import MissingConstant
from dro_kit.losses import FixedLoss, counterexample_loss, fixed_losses, logistic_loss


def fixed_problem(div=None, lam=1.0):
    return DroProblem(FixedLoss(), div or DivergenceSpec.chi2(), lam)


def test_problem_validation():
    with pytest.raises(ValueError):
        DroProblem(FixedLoss(), DivergenceSpec.chi2(), 0.0)
    with pytest.raises(ValueError):
        DualPoint([1.0, float("nan")], 0.0)


def test_objective_sample_trivial():
    p = fixed_problem()
    # z = (0 - 0)/1, psi*(0) = 0
    assert core.objective_sample(p, DualPoint([0.0], 0.0), fixed_losses([0.0]).samples[0]) == 0.0


def test_solve_eta_chi2_two_losses():
    p = fixed_problem()
    data = fixed_losses([0.0, 2.0])
    eta = core.solve_eta(p, np.zeros(1), data)
    assert eta == pytest.approx(1.0, abs=1e-9)
    # closed form: Psi = E l + Var(l) = 1 + 1/4 ... with psi = (s-1)^2 the penalty is Var/4
    assert core.evaluate_psi(p, np.zeros(1), data) == pytest.approx(1.25, abs=1e-9)


def test_solve_eta_matches_grid_oracle():
    data = synth_imbalanced(0, base_n=20, feature_dim=3)
    for div in (DivergenceSpec.chi2(), DivergenceSpec.smoothed_cvar(0.1), DivergenceSpec.kl()):
        p = make_problem(logistic_loss(10, 3), div, 0.5, data)
        x = np.random.default_rng(1).normal(size=p.loss.dim)
        eta = core.solve_eta(p, x, data)
        grid = np.linspace(eta - 1, eta + 1, 20001)
        vals = [core.full_objective(p, DualPoint(x, e), data) for e in grid[::50]]
        assert core.full_objective(p, DualPoint(x, eta), data) <= min(vals) + 1e-12
        assert abs(core.full_gradient(p, DualPoint(x, eta), data).grad_eta) <= 1e-8


def test_solve_eta_cvar_is_a_quantile():
    # alpha * n = 2 exactly, so the objective is flat between the losses 3 and 4
    losses = [1.0, 2.0, 3.0, 4.0, 5.0]
    data = fixed_losses(losses)
    p = fixed_problem(DivergenceSpec.cvar(0.4))
    eta = core.solve_eta(p, np.zeros(1), data)
    assert 3.0 - 1e-8 <= eta <= 4.0 + 1e-8
    # with alpha = 0.3 the minimizer is unique: the loss with 30% of the mass at or above it
    eta = core.solve_eta(fixed_problem(DivergenceSpec.cvar(0.3)), np.zeros(1), data)
    assert eta == pytest.approx(4.0, abs=1e-8)
    # CVaR_0.4 = mean of the top 40%: (4 + 5) / 2
    assert core.evaluate_psi(p, np.zeros(1), data) == pytest.approx(4.5, abs=1e-7)


def test_full_gradient_is_mean_of_per_sample():
    data = Dataset(np.zeros((3, 1)), [0.0, 1.0, 3.0], [1, 2, 1])
    p = fixed_problem()
    w = DualPoint([0.0], 0.5)
    rows = core.per_sample_gradients(p, w, data.features, data.targets)
    g = core.full_gradient(p, w, data)
    assert g.grad_eta == pytest.approx(float(data.probs @ rows[:, -1]))


def test_stochastic_gradient_unbiased_in_the_limit():
    data = rademacher_dataset()
    p = make_problem(counterexample_loss(), DivergenceSpec.chi2(), 1.0, data)
    w = DualPoint([1.3], 0.2)
    rng = np.random.default_rng(0)
    g = core.stochastic_gradient(p, w, data, 200_000, rng)
    full = core.full_gradient(p, w, data)
    assert np.allclose(g.as_vector(), full.as_vector(), atol=0.2)
    assert core.stochastic_gradient(p, w, data, 5, rng, use_all=True).as_vector().tolist() == \
        full.as_vector().tolist()


def test_stochastic_gradient_reproducible():
    data = rademacher_dataset()
    p = make_problem(counterexample_loss(), DivergenceSpec.chi2(), 1.0, data)
    w = DualPoint([2.0], 0.0)
    a = core.stochastic_gradient(p, w, data, 7, np.random.default_rng(9))
    b = core.stochastic_gradient(p, w, data, 7, np.random.default_rng(9))
    assert a.as_vector().tolist() == b.as_vector().tolist()


def test_stationarity_transfer():
    g = GradientEstimate(np.array([0.03]), 0.04, 1)
    r = core.stationarity_transfer(g, 0.1)
    assert r.grad_norm == pytest.approx(0.05)
    assert r.certified and r.split_certified
    r = core.stationarity_transfer(GradientEstimate(np.array([0.06]), 0.06, 1), 0.1)
    assert not r.certified and r.split_norm == pytest.approx(0.12) and not r.split_certified


def test_dro_constants_counterexample():
    data = rademacher_dataset()
    p = make_problem(counterexample_loss(), DivergenceSpec.chi2(), 1.0, data)
    c = core.dro_constants(p, w0=DualPoint([3.0], 0.0), data=data)
    G = p.G
    assert c.K0 == pytest.approx(8 + 2 * G * G * 0.5)
    assert c.K1 == pytest.approx(8 / G)
    assert c.Gamma2 == 8.0
    assert c.Lambda2 == pytest.approx(11 * G * G * 0.25 * 4 + 8 * G * G)
    assert c.Delta > 0 and c.delta_is_estimate


def test_dro_constants_smoothed_cvar_and_errors():
    data = rademacher_dataset()
    p = make_problem(counterexample_loss(), DivergenceSpec.smoothed_cvar(0.5), 0.1, data)
    c = core.dro_constants(p)
    assert c.K1 == 0.0 and c.Gamma2 == 0.0
    assert c.K0 == pytest.approx(8 / 0.5 + p.G ** 2 / (2 * 0.1 * 0.5))
    with pytest.raises(MissingConstant):
        core.dro_constants(make_problem(counterexample_loss(), DivergenceSpec.kl(), 1.0, data))
    lg = make_problem(logistic_loss(10, 3), DivergenceSpec.chi2(), 1.0, synth_imbalanced(0, base_n=5, feature_dim=3))
    with pytest.raises(MissingConstant):
        core.dro_constants(lg)


@given(st.lists(st.floats(0, 10), min_size=2, max_size=8), st.floats(0.05, 3.0))
def test_psi_is_at_least_the_mean_loss(losses, lam):
    # Q = P is feasible in the sup, so the penalized worst case dominates the average
    data = fixed_losses(losses)
    for div in (DivergenceSpec.chi2(), DivergenceSpec.smoothed_cvar(0.3)):
        p = fixed_problem(div, lam)
        psi = core.evaluate_psi(p, np.zeros(1), data)
        assert psi >= np.mean(losses) - 1e-8
        assert psi <= max(losses) + 1e-8 or div.kind.value == "chi2"


@given(st.lists(st.floats(0, 5), min_size=2, max_size=6), st.floats(-2, 2))
def test_psi_is_min_over_eta(losses, shift):
    data = fixed_losses(losses)
    p = fixed_problem(DivergenceSpec.chi2(), 0.7)
    eta = core.solve_eta(p, np.zeros(1), data)
    best = core.full_objective(p, DualPoint([0.0], eta), data)
    assert best <= core.full_objective(p, DualPoint([0.0], eta + shift), data) + 1e-12
