"""Closed-form ground truth for Gaussian federations.

Contents: product posteriors, 2-Wasserstein distances between Gaussians, the
stationary law of two-client FALD with two local steps per round, a
heterogeneity lower bound on its bias, the Langevin reference step size and
the iteration-budget optimiser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .errors import InfeasibleBudgetError, InputError, NumericalError

__all__ = [
    "GaussianLaw",
    "TwoClientGaussianSpec",
    "BudgetProblem",
    "BudgetSolution",
    "gaussian_product_posterior",
    "w2_gaussian",
    "sqrtm_psd",
    "fald_two_step_stationary",
    "admissible_step_bound",
    "heterogeneity_lower_bound",
    "stated_heterogeneity_bound",
    "reference_step_size",
    "fald_stationary_mean",
    "budget_iterations",
    "budget_optimize",
]

_EIG_FLOOR = 1e-14


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InputError(f"mean shape {mean.shape} and covariance shape {cov.shape} disagree")
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise InputError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov)[0] < _EIG_FLOOR:
            raise InputError("covariance is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self):
        return self.mean.size

    @property
    def precision(self):
        return np.linalg.inv(self.covariance)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["mean"], doc["covariance"])


@dataclass(frozen=True)
class TwoClientGaussianSpec:
    """Two one-dimensional Gaussian clients ``N(mu_i, var_i)``."""

    mu1: float
    mu2: float
    var1: float
    var2: float

    def __post_init__(self):
        if not (self.var1 > 0 and self.var2 > 0):
            raise InputError("client variances must be positive")

    @property
    def target_var(self):
        return 1.0 / (1.0 / self.var1 + 1.0 / self.var2)

    @property
    def target_mean(self):
        return (self.mu1 * self.var2 + self.mu2 * self.var1) / (self.var1 + self.var2)

    def target(self):
        return GaussianLaw([self.target_mean], [[self.target_var]])


def gaussian_product_posterior(pset):
    """Law proportional to ``exp(-sum_i U^i)`` for an all-Gaussian set."""
    if not pset.is_gaussian:
        raise InputError("product posterior is closed-form only for Gaussian clients")
    st = pset._stack
    total = st.full_prec.sum(axis=0)
    try:
        cov = np.linalg.inv(total)
    except np.linalg.LinAlgError:
        raise NumericalError("summed precision is singular") from None
    mean = cov @ st.full_lin.sum(axis=0)
    return GaussianLaw(mean, 0.5 * (cov + cov.T))


def sqrtm_psd(mat):
    """Symmetric square root with eigenvalues below 1e-14 clamped to zero."""
    eig, vec = np.linalg.eigh(0.5 * (mat + mat.T))
    eig = np.where(eig < _EIG_FLOOR, 0.0, eig)
    return (vec * np.sqrt(eig)) @ vec.T


def w2_gaussian(a, b):
    """2-Wasserstein distance between Gaussian laws (Bures formula)."""
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.dim == 1:
        sa, sb = math.sqrt(a.covariance[0, 0]), math.sqrt(b.covariance[0, 0])
        return math.hypot(a.mean[0] - b.mean[0], sa - sb)
    root_a = sqrtm_psd(a.covariance)
    cross = sqrtm_psd(root_a @ b.covariance @ root_a)
    bures = np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * np.trace(cross)
    dm = a.mean - b.mean
    return math.sqrt(max(float(dm @ dm + bures), 0.0))


def admissible_step_bound(spec):
    """Upper end of the step sizes for which the two-step kernel contracts."""
    s1, s2 = spec.var1**2, spec.var2**2
    return 2.0 * s1 * s2 / (spec.target_var * (s1 + s2))


def _check_step(spec, gamma):
    bound = admissible_step_bound(spec)
    if not 0.0 < gamma < bound:
        raise InputError(f"step size {gamma} outside the admissible interval (0, {bound:.6g})")


def fald_two_step_stationary(spec, gamma):
    """Stationary law of two-client FALD averaging after every two local steps."""
    _check_step(spec, gamma)
    v1, v2 = spec.var1, spec.var2
    sb2 = spec.target_var
    sb = math.sqrt(sb2)
    inv4 = 1.0 / v1**2 + 1.0 / v2**2
    mu4 = spec.mu1 / v1**2 + spec.mu2 / v2**2
    mean = (spec.target_mean - 0.5 * gamma * sb2 * mu4) / (1.0 - 0.5 * gamma * sb2 * inv4)
    num = sb2 - 0.5 * gamma + gamma**2 / (8.0 * sb2)
    den = 1.0 - 0.5 * gamma * sb2 * inv4 - 0.5 * gamma * (1.0 / sb - 0.5 * gamma * sb * inv4) ** 2
    return GaussianLaw([mean], [[num / den]])


def stated_heterogeneity_bound(spec, gamma):
    """``(gamma/2)|mu1 - mu2||s^2/var1 - s^2/var2|`` with ``s^2`` the target variance.

    Kept for comparison only; it is not a valid lower bound once
    ``var1 + var2 > 1`` (see :func:`heterogeneity_lower_bound`).
    """
    _check_step(spec, gamma)
    sb2 = spec.target_var
    return 0.5 * gamma * abs(spec.mu1 - spec.mu2) * abs(sb2 / spec.var1 - sb2 / spec.var2)


def heterogeneity_lower_bound(spec, gamma):
    """Lower bound on ``W2(stationary law, target)`` from the mean shift alone.

    The mean shift equals ``(gamma s^2/2)|mu1 - mu2||1/var1 - 1/var2| / (var1 + var2)``
    divided by a factor in ``(0, 1]``, so this quantity never exceeds the
    exact distance.
    """
    return stated_heterogeneity_bound(spec, gamma) / (spec.var1 + spec.var2)


def fald_stationary_mean(pset, gamma, p_comm):
    """Stationary mean of the server average under plain FALD on Gaussian clients.

    Client means follow ``m' = B (A m + gamma l)`` with ``A = I - gamma P_i``
    blockwise, ``l_i = P_i mu_i`` and ``B = p J + (1 - p) I`` (``J`` averages
    over clients).  Minibatch gradients of Gaussian terms are unbiased and
    affine in ``x`` with state-independent coefficients, so the same mean holds
    for stochastic gradients; ``tau`` does not enter.
    """
    if not pset.is_gaussian:
        raise InputError("stationary mean is only available for Gaussian clients")
    if not gamma > 0 or not 0.0 < p_comm <= 1.0:
        raise InputError("need gamma > 0 and p_comm in (0, 1]")
    b, d = pset.num_clients, pset.dim
    prec = [pset.client_hessian(i, np.zeros(d)) for i in range(b)]
    lin = np.concatenate([-pset.client_grad(i, np.zeros(d)) for i in range(b)])
    A = np.eye(b * d) - gamma * block_diag(*prec)
    J = np.kron(np.full((b, b), 1.0 / b), np.eye(d))
    B = p_comm * J + (1.0 - p_comm) * np.eye(b * d)
    T = B @ A
    if np.max(np.abs(np.linalg.eigvals(T))) >= 1.0:
        raise NumericalError("mean recursion is not contracting at this step size")
    m = np.linalg.solve(np.eye(b * d) - T, gamma * (B @ lin))
    return (A @ m + gamma * lin).reshape(b, d).mean(axis=0)


def reference_step_size(posterior):
    """``2 / (lambda_min + lambda_max)`` of the posterior precision."""
    eig = np.linalg.eigvalsh(np.atleast_2d(posterior.precision))
    return 2.0 / (eig[0] + eig[-1])


# -- iteration budget ---------------------------------------------------------


@dataclass(frozen=True)
class BudgetProblem:
    """Minimise ``k`` subject to ``c0 exp(-k gamma m / 8) + c1 gamma + c2 gamma^2 <= eps^2``."""

    c0: float
    c1: float
    c2: float
    m: float
    epsilon: float

    def __post_init__(self):
        if min(self.c0, self.c1, self.c2) < 0:
            raise InputError("c0, c1, c2 must be nonnegative")
        if not self.m > 0:
            raise InputError("m must be positive")
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive")

    def gamma_max(self):
        """Largest step with positive slack ``eps^2 - c1 gamma - c2 gamma^2``."""
        e2 = self.epsilon**2
        if self.c2 == 0:
            return e2 / self.c1 if self.c1 > 0 else math.inf
        return (-self.c1 + math.sqrt(self.c1**2 + 4.0 * self.c2 * e2)) / (2.0 * self.c2)

    def constraint(self, k, gamma):
        return self.c0 * math.exp(-k * gamma * self.m / 8.0) + self.c1 * gamma + self.c2 * gamma**2

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(*(float(doc[key]) for key in ("c0", "c1", "c2", "m", "epsilon")))
        except KeyError as exc:
            raise InputError(f"budget problem is missing field {exc}") from None


@dataclass(frozen=True)
class BudgetSolution:
    gamma_eps: float
    K_eps: float
    z_eps: float | None
    constraint_value: float

    def to_dict(self):
        return {
            "gamma_eps": self.gamma_eps,
            "K_eps": self.K_eps,
            "z_eps": self.z_eps,
            "constraint_value": self.constraint_value,
        }


def budget_iterations(p, gamma):
    """Iterations that saturate the constraint at step ``gamma`` (inf outside the feasible range)."""
    gamma = np.asarray(gamma, dtype=float)
    slack = p.epsilon**2 - p.c1 * gamma - p.c2 * gamma**2
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 8.0 / (gamma * p.m) * np.log(p.c0 / slack)
    return np.where((gamma > 0) & (slack > 0), k, np.inf)


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden(f, lo, hi, tol):
    a, b = lo, hi
    c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def budget_optimize(p, tol=1e-10):
    """Smallest iteration count and its step size for a :class:`BudgetProblem`.

    The optimum is searched over ``z = (x - mu)/sigma`` with
    ``x = gamma / eps^2``, ``mu = -c1/(2 c2 eps^2)`` and
    ``sigma = sqrt(mu^2 + 1/(c2 eps^2))``, which maps the feasible steps to
    ``(-mu/sigma, 1)``.  A coarse scan brackets the minimum, golden section
    narrows it to ``tol`` and a few Newton steps polish it.
    """
    e2 = p.epsilon**2
    if p.c0 <= e2:
        raise InfeasibleBudgetError(
            f"c0={p.c0:g} <= eps^2={e2:g}: the constraint holds without iterating, no positive optimum"
        )
    if p.c1 == 0 and p.c2 == 0:
        raise InfeasibleBudgetError("c1 = c2 = 0: the iteration count decreases without bound in gamma")

    if p.c2 > 0:
        c2t = e2 * p.c2
        mu = -p.c1 / (2.0 * c2t)
        sigma = math.sqrt(mu * mu + 1.0 / c2t)
        lo, hi = max(-mu / sigma, -0.999999), 0.999999

        def to_gamma(z):
            return e2 * (mu + z * sigma)
    else:
        # linear constraint: z is the fraction of the feasible step range
        mu, sigma = None, None
        lo, hi = 0.0, 0.999999

        def to_gamma(z):
            return z * e2 / p.c1

    def objective(z):
        return float(budget_iterations(p, to_gamma(z)))

    grid = np.linspace(lo, hi, 2001)[1:]
    vals = np.array([objective(z) for z in grid])
    j = int(np.argmin(vals))
    a = grid[max(j - 1, 0)] if j > 0 else lo
    b = grid[min(j + 1, grid.size - 1)]
    z = _golden(objective, a, b, tol)

    h = 1e-6 * (b - a)
    for _ in range(5):
        f0, fp, fm = objective(z), objective(z + h), objective(z - h)
        curv = (fp - 2.0 * f0 + fm) / h**2
        if not curv > 0:
            break
        z_new = z - (fp - fm) / (2.0 * h) / curv
        if not (a < z_new < b) or objective(z_new) > f0:
            break
        if abs(z_new - z) < tol:
            z = z_new
            break
        z = z_new

    gamma = to_gamma(z)
    K = objective(z)
    if not math.isfinite(K):
        raise NumericalError("budget optimiser left the feasible region")
    return BudgetSolution(
        gamma_eps=gamma,
        K_eps=K,
        z_eps=z if p.c2 > 0 else None,
        constraint_value=p.constraint(K, gamma),
    )
