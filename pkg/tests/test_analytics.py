import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import lfilter

from fedlangevin.analytics import (
    BudgetProblem,
    GaussianLaw,
    TwoClientGaussianSpec,
    admissible_step_bound,
    budget_iterations,
    budget_optimize,
    fald_stationary_mean,
    fald_two_step_stationary,
    gaussian_product_posterior,
    heterogeneity_lower_bound,
    reference_step_size,
    stated_heterogeneity_bound,
    w2_gaussian,
)
from fedlangevin.errors import InfeasibleBudgetError, InputError, NumericalError
from fedlangevin.potentials import (
    GaussianPotential,
    LogisticPotential,
    PotentialSet,
    generate_gaussian_set,
    minimizer,
)


def random_law(rng, d):
    a = rng.standard_normal((d, d))
    return GaussianLaw(rng.standard_normal(d), a @ a.T + 0.1 * np.eye(d))


# -- posterior ---------------------------------------------------------------


def test_posterior_two_unit_gaussians():
    pset = PotentialSet([GaussianPotential([0.0], [[1.0]]), GaussianPotential([2.0], [[1.0]])])
    law = gaussian_product_posterior(pset)
    assert law.mean == pytest.approx([1.0])
    assert law.covariance[0, 0] == pytest.approx(0.5)


def test_posterior_single_client_is_its_law(rng):
    law = random_law(rng, 3)
    post = gaussian_product_posterior(PotentialSet([GaussianPotential(law.mean, law.precision)]))
    assert np.allclose(post.mean, law.mean, rtol=1e-12)
    assert np.allclose(post.covariance, law.covariance, rtol=1e-10)


def test_posterior_mean_residual(rng):
    laws = [random_law(rng, 3) for _ in range(5)]
    pset = PotentialSet([GaussianPotential(l.mean, l.precision) for l in laws])
    x = gaussian_product_posterior(pset).mean
    res = sum(l.precision @ (x - l.mean) for l in laws)
    assert np.linalg.norm(res) <= 1e-10


def test_posterior_needs_gaussian_clients(rng):
    z = rng.standard_normal((4, 2))
    pset = PotentialSet([LogisticPotential(z, [0.0, 1.0, 1.0, 0.0], 0.1)])
    with pytest.raises(InputError):
        gaussian_product_posterior(pset)


def test_law_validation_and_round_trip(rng):
    with pytest.raises(InputError):
        GaussianLaw([0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(InputError):
        GaussianLaw([0.0], [[1.0, 0.0]])
    law = random_law(rng, 2)
    back = GaussianLaw.from_dict(law.to_dict())
    assert np.array_equal(back.mean, law.mean) and np.array_equal(back.covariance, law.covariance)


# -- W2 between Gaussians ----------------------------------------------------


def test_w2_examples(rng):
    law = random_law(rng, 3)
    assert w2_gaussian(law, law) == pytest.approx(0.0, abs=1e-7)
    assert w2_gaussian(GaussianLaw([0.0], [[1.0]]), GaussianLaw([3.0], [[1.0]])) == pytest.approx(3.0)
    assert w2_gaussian(GaussianLaw([0.0], [[1.0]]), GaussianLaw([0.0], [[4.0]])) == pytest.approx(1.0)
    with pytest.raises(InputError):
        w2_gaussian(GaussianLaw([0.0], [[1.0]]), law)


def test_w2_commuting_covariances_closed_form(rng):
    a = GaussianLaw(np.zeros(3), np.diag([1.0, 4.0, 9.0]))
    b = GaussianLaw(np.ones(3), np.diag([4.0, 4.0, 1.0]))
    expected = math.sqrt(3.0 + (1 - 2) ** 2 + 0.0 + (3 - 1) ** 2)
    assert w2_gaussian(a, b) == pytest.approx(expected, rel=1e-12)


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4))
def test_w2_is_a_metric(seed, d):
    rng = np.random.default_rng(seed)
    a, b, c = (random_law(rng, d) for _ in range(3))
    if d == 1:
        assert w2_gaussian(a, b) == w2_gaussian(b, a)
    else:
        assert w2_gaussian(a, b) == pytest.approx(w2_gaussian(b, a), rel=1e-9, abs=1e-10)
    assert w2_gaussian(a, c) <= w2_gaussian(a, b) + w2_gaussian(b, c) + 1e-10
    assert w2_gaussian(a, b) > 0


# -- two-client stationary law -----------------------------------------------


def test_stationary_small_step_limit():
    spec = TwoClientGaussianSpec(0.0, 2.0, 1.0, 4.0)
    law = fald_two_step_stationary(spec, 1e-9)
    assert law.mean[0] == pytest.approx(spec.target_mean, abs=1e-8)
    assert law.covariance[0, 0] == pytest.approx(spec.target_var, abs=1e-8)


@given(
    mu=st.floats(-5, 5),
    v1=st.floats(0.1, 10),
    v2=st.floats(0.1, 10),
    frac=st.floats(0.01, 0.99),
)
def test_equal_means_give_unbiased_mean(mu, v1, v2, frac):
    spec = TwoClientGaussianSpec(mu, mu, v1, v2)
    law = fald_two_step_stationary(spec, frac * admissible_step_bound(spec))
    assert law.mean[0] == pytest.approx(mu, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("gamma", [0.0, -0.1, 10.0])
def test_inadmissible_steps_rejected(gamma):
    spec = TwoClientGaussianSpec(0.0, 2.0, 1.0, 4.0)
    with pytest.raises(InputError):
        fald_two_step_stationary(spec, gamma)
    with pytest.raises(InputError):
        heterogeneity_lower_bound(spec, gamma)


def simulate_two_step(spec, gamma, n, seed):
    """Averaged two-client chain with a fresh noise pair every step, run as an AR(1) filter."""
    sb2 = spec.target_var
    a = 1 - gamma / sb2 + 0.5 * gamma**2 * (1 / spec.var1**2 + 1 / spec.var2**2)
    c = gamma * spec.target_mean / sb2 - 0.5 * gamma**2 * (spec.mu1 / spec.var1**2 + spec.mu2 / spec.var2**2)
    z = np.random.default_rng(seed).standard_normal((n, 2))
    noise = math.sqrt(gamma) * ((1 - gamma / (2 * sb2)) * z[:, 0] + z[:, 1])
    mean = c / (1 - a)
    return mean + lfilter([1.0], [1.0, -a], noise)


def batch_means_se(x, n_batches=100):
    m = x[: len(x) // n_batches * n_batches].reshape(n_batches, -1).mean(axis=1)
    return m.std(ddof=1) / math.sqrt(n_batches)


def test_stationary_law_matches_simulation():
    spec = TwoClientGaussianSpec(0.0, 2.0, 1.0, 4.0)
    law = fald_two_step_stationary(spec, 0.05)
    x = simulate_two_step(spec, 0.05, 400_000, seed=1)[1000:]
    assert abs(x.mean() - law.mean[0]) <= 3 * batch_means_se(x)
    sq = (x - law.mean[0]) ** 2
    assert abs(sq.mean() - law.covariance[0, 0]) <= 3 * batch_means_se(sq)


# -- heterogeneity bound -----------------------------------------------------


def test_bound_vanishes_for_homogeneous_clients():
    assert stated_heterogeneity_bound(TwoClientGaussianSpec(0.0, 3.0, 2.0, 2.0), 0.1) == 0.0
    assert heterogeneity_lower_bound(TwoClientGaussianSpec(1.0, 1.0, 1.0, 3.0), 0.1) == 0.0


def test_corrected_bound_value():
    spec = TwoClientGaussianSpec(0.0, 2.0, 1.0, 4.0)
    stated = 0.5 * 0.05 * 2.0 * abs(0.8 / 1.0 - 0.8 / 4.0)
    assert stated_heterogeneity_bound(spec, 0.05) == pytest.approx(stated, rel=1e-14)
    assert heterogeneity_lower_bound(spec, 0.05) == pytest.approx(stated / 5.0, rel=1e-14)


def test_corrected_bound_below_exact_distance():
    rng = np.random.default_rng(0)
    for _ in range(50):
        spec = TwoClientGaussianSpec(*rng.uniform(-5, 5, 2), *np.exp(rng.uniform(math.log(0.1), math.log(10), 2)))
        gamma = rng.uniform(0, 1) * admissible_step_bound(spec)
        exact = w2_gaussian(fald_two_step_stationary(spec, gamma), spec.target())
        assert heterogeneity_lower_bound(spec, gamma) <= exact * (1 + 1e-12)


# -- reference step size -----------------------------------------------------


def test_reference_step_examples(rng):
    q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    prec = (q * [1.0, 3.0]) @ q.T
    assert reference_step_size(GaussianLaw(np.zeros(2), np.linalg.inv(prec))) == pytest.approx(0.5)
    assert reference_step_size(GaussianLaw(np.zeros(3), np.eye(3) / 4.0)) == pytest.approx(0.25)


def test_reference_step_eigen_oracle(rng):
    law = random_law(rng, 20)
    eig = 1.0 / np.linalg.eigvalsh(law.covariance)
    assert reference_step_size(law) == pytest.approx(2.0 / (eig.min() + eig.max()), rel=1e-10)


# -- server stationary mean --------------------------------------------------


def test_stationary_mean_with_full_communication_is_minimizer():
    pset = generate_gaussian_set(4, 3, seed=2, n_terms=2)
    assert np.allclose(fald_stationary_mean(pset, 0.01, 1.0), minimizer(pset), atol=1e-10)


def test_stationary_mean_errors(rng):
    pset = generate_gaussian_set(2, 2, seed=2)
    with pytest.raises(NumericalError):
        fald_stationary_mean(pset, 100.0, 0.5)
    with pytest.raises(InputError):
        fald_stationary_mean(pset, 0.01, 0.0)
    z = rng.standard_normal((4, 2))
    with pytest.raises(InputError):
        fald_stationary_mean(PotentialSet([LogisticPotential(z, [0.0, 1.0, 1.0, 0.0], 0.1)]), 0.01, 0.5)


# -- budget ------------------------------------------------------------------


def test_budget_worked_example():
    sol = budget_optimize(BudgetProblem(10.0, 0.0, 1.0, 1.0, 0.1))
    assert sol.K_eps == pytest.approx(761.64, rel=1e-4)
    assert sol.gamma_eps == pytest.approx(0.0900, rel=1e-3)


@pytest.mark.parametrize(
    "problem",
    [BudgetProblem(0.01, 1.0, 1.0, 1.0, 0.2), BudgetProblem(1.0, 0.0, 0.0, 1.0, 0.1)],
)
def test_budget_infeasible(problem):
    with pytest.raises(InfeasibleBudgetError):
        budget_optimize(problem)


def test_budget_rejects_bad_inputs():
    with pytest.raises(InputError):
        BudgetProblem(-1.0, 0.0, 1.0, 1.0, 0.1)
    with pytest.raises(InputError):
        BudgetProblem.from_dict({"c0": 1.0})


def test_budget_c1_zero_matches_fine_grid():
    p = BudgetProblem(5.0, 0.0, 2.0, 1.5, 0.3)
    sol = budget_optimize(p)
    z = np.arange(1, 1_000_000) * 1e-6
    obj = (math.log(p.c0 / p.epsilon**2) - np.log1p(-z * z)) / z
    z_grid = z[np.argmin(obj)]
    assert abs(sol.z_eps - z_grid) <= 1e-6


def test_budget_monotone_in_epsilon():
    ks = [budget_optimize(BudgetProblem(4.0, 0.2, 1.0, 1.0, eps)).K_eps for eps in np.linspace(0.1, 1.5, 15)]
    assert all(b <= a for a, b in zip(ks, ks[1:]))


def test_budget_linear_constraint_has_no_z():
    sol = budget_optimize(BudgetProblem(4.0, 0.5, 0.0, 1.0, 0.3))
    assert sol.z_eps is None
    assert 0 < sol.gamma_eps < 0.09 / 0.5


def random_problem(rng):
    eps = rng.uniform(0.05, 0.5)
    return BudgetProblem(
        c0=rng.uniform(2, 100) * eps**2,
        c1=rng.uniform(0, 1),
        c2=rng.uniform(0.01, 2),
        m=rng.uniform(0.5, 2),
        epsilon=eps,
    )


def test_budget_matches_brute_force_grid():
    rng = np.random.default_rng(7)
    for _ in range(5):
        p = random_problem(rng)
        gammas = np.linspace(0, p.gamma_max(), 10_001)[1:-1]
        k_grid = budget_iterations(p, gammas).min()
        sol = budget_optimize(p)
        assert abs(sol.K_eps - k_grid) <= 0.01 * k_grid
        assert sol.K_eps <= k_grid * (1 + 1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_budget_solution_saturates_constraint(seed):
    p = random_problem(np.random.default_rng(seed))
    sol = budget_optimize(p)
    e2 = p.epsilon**2
    assert sol.constraint_value <= e2 * (1 + 1e-9)
    assert abs(sol.constraint_value - e2) <= 1e-6 * e2
    assert 0 < sol.gamma_eps < p.gamma_max()
