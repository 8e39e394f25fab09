"""Client potentials, gradient oracles and the global constants of a federation.

A client potential is a finite sum ``U(x) = sum_j U_j(x)`` plus an optional
exactly-evaluated part (the logistic ridge term).  Minibatch estimates draw
``n`` of the ``N`` terms without replacement and rescale by ``N / n``.

All gradient methods are vectorised over leading axes: ``x`` of shape
``(..., d)`` gives gradients of shape ``(..., d)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import block_diag
from scipy.special import expit

from .errors import InputError, NumericalError

__all__ = [
    "GaussianPotential",
    "LogisticPotential",
    "PotentialSet",
    "ConstantsReport",
    "grad",
    "stochastic_grad",
    "minimizer",
    "heterogeneity",
    "constants",
    "generate_gaussian_set",
    "load_potential_set",
    "potential_set_to_dict",
]

_SYM_RTOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_dim(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise InputError(f"expected trailing dimension {dim}, got shape {x.shape}")
    return x


def _check_spd(mat, name):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InputError(f"{name} must be square, got shape {mat.shape}")
    scale = max(np.abs(mat).max(), 1.0)
    if np.abs(mat - mat.T).max() > _SYM_RTOL * scale:
        raise InputError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(mat)
    if eig[0] <= 0:
        raise InputError(f"{name} is not positive definite (min eigenvalue {eig[0]:.3e})")
    return eig


class GaussianPotential:
    """Quadratic potential ``(1/2)(x - mean)^T P (x - mean)``.

    Optionally split into ``N`` terms ``U_j(x) = (w_j/2)(x - a_j)^T P (x - a_j)``
    with positive weights summing to one and ``sum_j w_j a_j = mean``; the
    terms add up to the potential up to an additive constant, so ``value``
    stays zero at the mean.
    """

    kind = "gaussian"

    def __init__(self, mean, precision, term_centers=None, term_weights=None):
        self.mean = _frozen(mean)
        if self.mean.ndim != 1:
            raise InputError("mean must be a vector")
        self.dim = self.mean.shape[0]
        self.precision = _frozen(precision)
        if self.precision.shape != (self.dim, self.dim):
            raise InputError(
                f"precision shape {self.precision.shape} does not match dimension {self.dim}"
            )
        self._eig = _check_spd(self.precision, "precision")

        if (term_centers is None) != (term_weights is None):
            raise InputError("term_centers and term_weights must be given together")
        if term_centers is None:
            self.term_centers = self.mean[None, :]
            self.term_weights = _frozen([1.0])
            self._has_terms = False
        else:
            centers = _frozen(term_centers)
            weights = _frozen(term_weights)
            if centers.ndim != 2 or centers.shape[1] != self.dim:
                raise InputError("term_centers must have shape (N, d)")
            if weights.shape != (centers.shape[0],):
                raise InputError("term_weights must have one entry per term")
            if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise InputError("term_weights must be positive and sum to 1")
            centroid = weights @ centers
            if np.abs(centroid - self.mean).max() > 1e-10 * (1.0 + np.abs(self.mean).max()):
                raise InputError("weighted term centers must average to the mean")
            self.term_centers = centers
            self.term_weights = weights
            self._has_terms = True
        self.n_terms = self.term_weights.shape[0]

    @classmethod
    def from_terms(cls, term_centers, term_weights, precision):
        centers = np.asarray(term_centers, dtype=float)
        weights = np.asarray(term_weights, dtype=float)
        return cls(weights @ centers, precision, centers, weights)

    def value(self, x):
        r = x - self.mean
        return 0.5 * np.einsum("...i,ij,...j->...", r, self.precision, r)

    def grad(self, x):
        return (x - self.mean) @ self.precision

    def hessian(self, x=None):
        return np.array(self.precision)

    def batch_grad(self, x, idx):
        """Rescaled minibatch gradient for index array ``idx`` of shape ``(..., n)``."""
        if not self._has_terms:
            return self.grad(x)
        n = idx.shape[-1]
        scale = self.n_terms / n
        w = self.term_weights[idx]
        c = scale * w.sum(axis=-1)
        v = scale * np.einsum("...n,...nd->...d", w, self.term_centers[idx])
        return (c[..., None] * x - v) @ self.precision

    def term_grad(self, x, j):
        return self.term_weights[j] * ((x - self.term_centers[j]) @ self.precision)

    def term_lipschitz(self):
        return self.term_weights * self._eig[-1]

    def curvature_bounds(self, extra_precision=None):
        mat = self.precision if extra_precision is None else self.precision + extra_precision
        eig = np.linalg.eigvalsh(mat)
        return float(eig[0]), float(eig[-1])

    def to_dict(self):
        out = {"type": "gaussian", "mean": self.mean.tolist(), "precision": self.precision.tolist()}
        if self._has_terms:
            out["term_centers"] = self.term_centers.tolist()
            out["term_weights"] = self.term_weights.tolist()
        return out


class LogisticPotential:
    """Ridge-regularised logistic negative log-likelihood.

    ``U(x) = sum_j [o_j log(1 + e^{-z_j.x}) + (1 - o_j) log(1 + e^{z_j.x})] + ridge * |x|^2``.
    The ridge part is evaluated exactly inside minibatch estimates.
    """

    kind = "logistic"

    def __init__(self, covariates, labels, ridge=1.0):
        self.covariates = _frozen(covariates)
        self.labels = _frozen(labels)
        self.ridge = float(ridge)
        if self.covariates.ndim != 2:
            raise InputError("covariates must be a matrix")
        if self.labels.shape != (self.covariates.shape[0],):
            raise InputError("labels length must equal the number of covariate rows")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InputError("labels must be 0 or 1")
        if self.ridge < 0:
            raise InputError("ridge weight must be nonnegative")
        self.n_terms, self.dim = self.covariates.shape
        if self.n_terms == 0:
            raise InputError("logistic potential needs at least one observation")

    def value(self, x):
        s = x @ self.covariates.T
        nll = np.logaddexp(0.0, s) - self.labels * s
        return nll.sum(axis=-1) + self.ridge * np.sum(x * x, axis=-1)

    def grad(self, x):
        r = expit(x @ self.covariates.T) - self.labels
        return r @ self.covariates + 2.0 * self.ridge * x

    def hessian(self, x):
        s = expit(self.covariates @ x)
        wz = self.covariates * (s * (1.0 - s))[:, None]
        return self.covariates.T @ wz + 2.0 * self.ridge * np.eye(self.dim)

    def batch_grad(self, x, idx):
        n = idx.shape[-1]
        zb = self.covariates[idx]
        s = np.einsum("...nd,...d->...n", zb, x)
        r = expit(s) - self.labels[idx]
        return (self.n_terms / n) * np.einsum("...n,...nd->...d", r, zb) + 2.0 * self.ridge * x

    def term_grad(self, x, j):
        z = self.covariates[j]
        return (expit(x @ z) - self.labels[j]) * z

    def term_lipschitz(self):
        # per-row logistic bound plus an even share of the ridge curvature
        sq = np.sum(self.covariates**2, axis=1)
        return sq / 4.0 + 2.0 * self.ridge / self.n_terms

    def curvature_bounds(self, extra_precision=None):
        gram = self.covariates.T @ self.covariates
        lo, hi = 2.0 * self.ridge, 2.0 * self.ridge + np.linalg.eigvalsh(gram)[-1] / 4.0
        if extra_precision is not None:
            eig = np.linalg.eigvalsh(extra_precision)
            lo, hi = lo + eig[0], hi + eig[-1]
        return float(lo), float(hi)

    def to_dict(self):
        return {
            "type": "logistic",
            "covariates": self.covariates.tolist(),
            "labels": self.labels.tolist(),
            "ridge": self.ridge,
        }


class PotentialSet:
    """The ``b`` client potentials ``U^i = w_i U^0 + (client data part)``.

    ``prior`` is an optional Gaussian ``U^0`` split across clients by
    ``prior_weights`` (uniform ``1/b`` by default).
    """

    def __init__(self, clients, prior_weights=None, prior=None):
        self.clients = tuple(clients)
        if not self.clients:
            raise InputError("a potential set needs at least one client")
        self.dim = self.clients[0].dim
        if any(c.dim != self.dim for c in self.clients):
            raise InputError("all clients must share the same dimension")
        b = len(self.clients)
        if prior_weights is None:
            prior_weights = np.full(b, 1.0 / b)
        self.prior_weights = _frozen(prior_weights)
        if self.prior_weights.shape != (b,):
            raise InputError("prior_weights needs one entry per client")
        if np.any(self.prior_weights < 0) or abs(self.prior_weights.sum() - 1.0) > 1e-12:
            raise InputError("prior_weights must be nonnegative and sum to 1")
        if prior is not None:
            if not isinstance(prior, GaussianPotential) or prior.n_terms != 1:
                raise InputError("the global prior must be a single-term Gaussian")
            if prior.dim != self.dim:
                raise InputError("prior dimension does not match the clients")
        self.prior = prior
        self.is_gaussian = all(isinstance(c, GaussianPotential) for c in self.clients)
        self._stack = _GaussianStack(self) if self.is_gaussian else None

    @property
    def num_clients(self):
        return len(self.clients)

    @property
    def n_terms(self):
        return np.array([c.n_terms for c in self.clients])

    def client(self, i):
        """Client ``i`` with its prior share folded in, usable wherever a model is."""
        return _ClientView(self, i)

    def _prior_grad(self, i, x):
        if self.prior is None or self.prior_weights[i] == 0:
            return 0.0
        return self.prior_weights[i] * self.prior.grad(x)

    def client_value(self, i, x):
        v = self.clients[i].value(x)
        if self.prior is not None:
            v = v + self.prior_weights[i] * self.prior.value(x)
        return v

    def client_grad(self, i, x):
        return self.clients[i].grad(x) + self._prior_grad(i, x)

    def client_batch_grad(self, i, x, idx):
        return self.clients[i].batch_grad(x, idx) + self._prior_grad(i, x)

    def client_hessian(self, i, x):
        h = self.clients[i].hessian(x)
        if self.prior is not None:
            h = h + self.prior_weights[i] * self.prior.precision
        return h

    def total_value(self, x):
        return sum(self.client_value(i, x) for i in range(self.num_clients))

    def total_grad(self, x):
        return sum(self.client_grad(i, x) for i in range(self.num_clients))

    def total_hessian(self, x):
        return sum(self.client_hessian(i, x) for i in range(self.num_clients))

    def grads(self, xs):
        """Exact per-client gradients for ``xs`` of shape ``(..., b, d)``."""
        if self._stack is not None:
            return self._stack.grads(xs)
        return np.stack(
            [self.client_grad(i, xs[..., i, :]) for i in range(self.num_clients)], axis=-2
        )

    def fold_batches(self, idx):
        """Pre-evaluate the batch-dependent part of minibatch gradients.

        Returns a :class:`BatchCoefficients` (indexable along leading axes)
        for Gaussian sets with equal term counts, else ``idx`` unchanged.
        Either result is accepted by :meth:`batch_grads`.
        """
        if self._stack is not None and self._stack.uniform_terms and isinstance(idx, np.ndarray):
            return BatchCoefficients(*self._stack._batch_coeffs(idx))
        return idx

    def batch_grads(self, xs, idx):
        """Minibatch per-client gradients.

        ``idx`` is either a per-client list of index arrays ``(..., n_i)`` or,
        for equal batch sizes, one array of shape ``(..., b, n)``.
        """
        if isinstance(idx, BatchCoefficients):
            return self._stack.batch_grads(xs, idx)
        if self._stack is not None and self._stack.uniform_terms:
            if not isinstance(idx, np.ndarray):
                if len({a.shape[-1] for a in idx}) != 1:
                    return self._loop_batch_grads(xs, idx)
                idx = np.stack(idx, axis=-2)
            return self._stack.batch_grads(xs, idx)
        return self._loop_batch_grads(xs, idx)

    def _loop_batch_grads(self, xs, idx):
        if isinstance(idx, np.ndarray):
            idx = [idx[..., i, :] for i in range(self.num_clients)]
        return np.stack(
            [self.client_batch_grad(i, xs[..., i, :], idx[i]) for i in range(self.num_clients)],
            axis=-2,
        )

    def batch_grad_diffs(self, xs, ys, idx):
        """``batch_grads(xs, idx) - batch_grads(ys, idx)`` with shared batches."""
        if isinstance(idx, BatchCoefficients) or (
            self._stack is not None and self._stack.uniform_terms and isinstance(idx, np.ndarray)
        ):
            return self._stack.batch_grad_diffs(xs, ys, idx)
        return self.batch_grads(xs, idx) - self.batch_grads(ys, idx)

    def mean_grad(self, y):
        """``(1/b) sum_i grad U^i(y)`` for ``y`` of shape ``(..., d)``."""
        if self._stack is not None:
            return self._stack.mean_grad(y)
        ys = np.broadcast_to(y[..., None, :], y.shape[:-1] + (self.num_clients, self.dim))
        return self.grads(ys).mean(axis=-2)


class _ClientView:
    def __init__(self, pset, i):
        self._pset, self._i = pset, i
        model = pset.clients[i]
        self.dim, self.n_terms, self.kind = model.dim, model.n_terms, model.kind

    def value(self, x):
        return self._pset.client_value(self._i, x)

    def grad(self, x):
        return self._pset.client_grad(self._i, x)

    def batch_grad(self, x, idx):
        return self._pset.client_batch_grad(self._i, x, idx)

    def hessian(self, x):
        return self._pset.client_hessian(self._i, x)


@dataclass(frozen=True)
class BatchCoefficients:
    """Gaussian minibatch folded into a scale ``c`` ``(..., b)`` and offset ``v`` ``(..., b, d)``.

    The batch gradient is then ``P_i (c x - v)`` (plus any prior share).
    """

    scale: np.ndarray
    offset: np.ndarray

    def __getitem__(self, key):
        return BatchCoefficients(self.scale[key], self.offset[key])


class _GaussianStack:
    """Stacked arrays for evaluating all Gaussian clients at once.

    Small federations multiply the flattened ``(..., b*d)`` parameters by a
    block-diagonal matrix of precisions (one GEMM); larger ones fall back to
    batched matmul.
    """

    BLOCK_LIMIT = 512

    def __init__(self, pset):
        clients = pset.clients
        self.b, self.d = len(clients), pset.dim
        self.prec = np.stack([c.precision for c in clients])
        self.lin = np.einsum("bij,bj->bi", self.prec, np.stack([c.mean for c in clients]))
        if pset.prior is not None:
            w = np.asarray(pset.prior_weights)
            self.prior_prec = w[:, None, None] * pset.prior.precision
            self.prior_lin = self.prior_prec @ pset.prior.mean
            self.full_prec = self.prec + self.prior_prec
            self.full_lin = self.lin + self.prior_lin
        else:
            self.prior_prec = None
            self.full_prec, self.full_lin = self.prec, self.lin
        self.mean_prec = self.full_prec.mean(axis=0)
        self.mean_lin = self.full_lin.mean(axis=0)
        self._block = self.b * self.d <= self.BLOCK_LIMIT
        if self._block:
            self._bd_prec = block_diag(*self.prec)
            self._bd_full = block_diag(*self.full_prec)
            self._bd_prior = None if self.prior_prec is None else block_diag(*self.prior_prec)
        n_terms = {c.n_terms for c in clients}
        self.uniform_terms = len(n_terms) == 1
        if self.uniform_terms:
            self.n_terms = n_terms.pop()
            self.centers = np.stack([c.term_centers for c in clients])
            self.weights = np.stack([c.term_weights for c in clients])
            self._rows = np.arange(self.b)[:, None]

    def _apply(self, xs, which):
        if self._block:
            mat = {"data": self._bd_prec, "full": self._bd_full, "prior": self._bd_prior}[which]
            flat = xs.reshape(xs.shape[:-2] + (self.b * self.d,))
            return (flat @ mat).reshape(xs.shape)
        mat = {"data": self.prec, "full": self.full_prec, "prior": self.prior_prec}[which]
        return np.matmul(xs[..., None, :], mat)[..., 0, :]

    def grads(self, xs):
        return self._apply(xs, "full") - self.full_lin

    def mean_grad(self, y):
        return y @ self.mean_prec - self.mean_lin

    def _batch_coeffs(self, idx):
        if idx.shape[-1] == 1:
            j = idx[..., 0]
            w = self.weights[self._rows[:, 0], j]
            c = self.n_terms * w
            return c, c[..., None] * self.centers[self._rows[:, 0], j]
        scale = self.n_terms / idx.shape[-1]
        w = self.weights[self._rows, idx]
        c = scale * w.sum(axis=-1)
        v = scale * np.einsum("...bn,...bnd->...bd", w, self.centers[self._rows, idx])
        return c, v

    def _coeffs(self, idx):
        if isinstance(idx, BatchCoefficients):
            return idx.scale, idx.offset
        return self._batch_coeffs(idx)

    def batch_grads(self, xs, idx):
        c, v = self._coeffs(idx)
        g = self._apply(c[..., None] * xs - v, "data")
        if self.prior_prec is not None:
            g = g + self._apply(xs, "prior") - self.prior_lin
        return g

    def batch_grad_diffs(self, xs, ys, idx):
        """``g(xs) - g(ys)`` under the same batch; exact zero where ``xs == ys``."""
        c, _ = self._coeffs(idx)
        diff = xs - ys
        g = self._apply(c[..., None] * diff, "data")
        if self.prior_prec is not None:
            g = g + self._apply(diff, "prior")
        return g


# -- public operations -------------------------------------------------------


def grad(model, x):
    """Exact gradient of a single client model."""
    return model.grad(_check_dim(x, model.dim))


def stochastic_grad(model, x, batch, prior_weight=0.0, prior=None):
    """``prior_weight * grad U0(x) + (N/n) sum_{j in batch} grad U_j(x)``."""
    x = _check_dim(x, model.dim)
    batch = np.asarray(batch)
    if batch.ndim != 1 or batch.size == 0:
        raise InputError("batch must be a nonempty 1-d index set")
    if not np.issubdtype(batch.dtype, np.integer):
        raise InputError("batch indices must be integers")
    if batch.min() < 0 or batch.max() >= model.n_terms:
        raise InputError(f"batch index out of range [0, {model.n_terms})")
    if np.unique(batch).size != batch.size:
        raise InputError("batch indices must be distinct (sampling is without replacement)")
    g = model.batch_grad(x, batch)
    if prior is not None and prior_weight:
        g = g + prior_weight * prior.grad(x)
    return g


def minimizer(pset, max_iter=200, tol=1e-8):
    """Minimiser ``x_*`` of ``sum_i U^i``.

    Closed form for all-Gaussian sets, damped Newton with backtracking otherwise.
    """
    if pset.is_gaussian:
        st = pset._stack
        return np.linalg.solve(st.full_prec.sum(axis=0), st.full_lin.sum(axis=0))

    x = np.zeros(pset.dim)
    f = pset.total_value(x)
    for _ in range(max_iter):
        g = pset.total_grad(x)
        if np.linalg.norm(g) <= tol * (1.0 + np.linalg.norm(x)):
            return x
        step = np.linalg.solve(pset.total_hessian(x), g)
        t, slope = 1.0, g @ step
        while True:
            x_new = x - t * step
            f_new = pset.total_value(x_new)
            if f_new <= f - 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        x, f = x_new, f_new
    g = pset.total_grad(x)
    if np.linalg.norm(g) <= tol * (1.0 + np.linalg.norm(x)):
        return x
    raise NumericalError(f"Newton solve did not converge in {max_iter} iterations")


def heterogeneity(pset, x_star=None):
    """``H = (1/b) sum_i |grad U^i(x_*)|^2``."""
    if x_star is None:
        x_star = minimizer(pset)
    g = [pset.client_grad(i, x_star) for i in range(pset.num_clients)]
    return float(np.mean([v @ v for v in g]))


@dataclass(frozen=True)
class ConstantsReport:
    minimizer: np.ndarray
    heterogeneity: float
    strong_convexity: float
    smoothness: float
    stochastic_smoothness: float
    vr_variance_const: float
    grad_variance_const: float

    def to_dict(self):
        out = asdict(self)
        out["minimizer"] = np.asarray(self.minimizer).tolist()
        return out


def _sampling_factor(N, n):
    # variance factor of the (N/n)-rescaled without-replacement sum
    if n >= N:
        return 0.0
    return N * (N - n) / (n * (N - 1))


def constants(pset, batch_sizes=None):
    """Strong convexity, smoothness and minibatch variance constants.

    ``batch_sizes`` defaults to full batches.  Variance constants carry the
    ``(N/n)^2`` rescaling of the unbiased estimator, so they bound the
    variance of the gradients the samplers actually use.
    """
    b = pset.num_clients
    N = pset.n_terms
    n = N.copy() if batch_sizes is None else np.asarray(batch_sizes, dtype=int)
    if n.shape != (b,) or np.any(n < 1) or np.any(n > N):
        raise InputError("batch_sizes must give one size in [1, N_i] per client")

    bounds = []
    for i, c in enumerate(pset.clients):
        extra = None
        if pset.prior is not None and pset.prior_weights[i] > 0:
            extra = pset.prior_weights[i] * pset.prior.precision
        bounds.append(c.curvature_bounds(extra))
    m = min(lo for lo, _ in bounds)
    L = max(hi for _, hi in bounds)

    factors = np.array([_sampling_factor(int(N[i]), int(n[i])) for i in range(b)])
    lj_max = np.array([float(np.max(c.term_lipschitz())) for c in pset.clients])
    L_hat = L * np.sqrt(1.0 + np.max(factors * lj_max) / L)
    omega = float(np.max(factors * lj_max) * L)
    omega_tilde = float(np.sum(factors * lj_max) / b**2 * L)

    x_star = minimizer(pset)
    return ConstantsReport(
        minimizer=x_star,
        heterogeneity=heterogeneity(pset, x_star),
        strong_convexity=m,
        smoothness=L,
        stochastic_smoothness=float(L_hat),
        vr_variance_const=omega,
        grad_variance_const=omega_tilde,
    )


# -- construction and serialisation ------------------------------------------


def _random_precision(rng, dim, condition_number, scale):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if dim == 1:
        eig = np.array([1.0])
    else:
        eig = np.exp(rng.uniform(0.0, np.log(condition_number), size=dim))
        eig[0], eig[-1] = 1.0, condition_number
    p = scale * (q * eig) @ q.T
    return 0.5 * (p + p.T)


def generate_gaussian_set(
    num_clients,
    dim,
    seed=0,
    mean_spread=1.0,
    condition_number=10.0,
    scale=1.0,
    n_terms=1,
    term_spread=1.0,
    weight_concentration=5.0,
):
    """Random heterogeneous Gaussian clients.

    Client means are ``N(0, mean_spread^2 I)``; each precision has a random
    eigenbasis and spectrum in ``[scale, scale * condition_number]``.  With
    ``n_terms > 1`` every client is split into terms with Dirichlet weights and
    centres scattered by ``term_spread`` around the client mean.
    """
    if num_clients < 1 or dim < 1:
        raise InputError("num_clients and dim must be positive")
    if condition_number < 1:
        raise InputError("condition_number must be >= 1")
    rng = np.random.default_rng(seed)
    clients = []
    for _ in range(num_clients):
        mu = mean_spread * rng.standard_normal(dim)
        prec = _random_precision(rng, dim, condition_number, scale)
        if n_terms == 1:
            clients.append(GaussianPotential(mu, prec))
            continue
        w = rng.dirichlet(np.full(n_terms, weight_concentration))
        a = mu + term_spread * rng.standard_normal((n_terms, dim))
        a = a - w @ a + mu
        clients.append(GaussianPotential(w @ a, prec, a, w))
    return PotentialSet(clients)


def _client_from_dict(doc, where):
    kind = doc.get("type")
    try:
        if kind == "gaussian":
            return GaussianPotential(
                doc["mean"], doc["precision"], doc.get("term_centers"), doc.get("term_weights")
            )
        if kind == "logistic":
            return LogisticPotential(doc["covariates"], doc["labels"], doc.get("ridge", 1.0))
    except KeyError as exc:
        raise InputError(f"{where}: missing field {exc}") from None
    except InputError as exc:
        raise InputError(f"{where}: {exc}") from None
    raise InputError(f"{where}: unknown client type {kind!r}")


def load_potential_set(source):
    """Build a :class:`PotentialSet` from a JSON document, path or parsed dict."""
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
    else:
        doc = source
    if "clients" not in doc:
        raise InputError("potential set document needs a 'clients' list")
    clients = [_client_from_dict(c, f"clients[{i}]") for i, c in enumerate(doc["clients"])]
    prior = None
    if doc.get("prior") is not None:
        prior = GaussianPotential(doc["prior"]["mean"], doc["prior"]["precision"])
    pset = PotentialSet(clients, doc.get("prior_weights"), prior)
    if "dim" in doc and doc["dim"] != pset.dim:
        raise InputError(f"dim field {doc['dim']} does not match client dimension {pset.dim}")
    return pset


def potential_set_to_dict(pset):
    doc = {
        "dim": pset.dim,
        "prior_weights": pset.prior_weights.tolist(),
        "clients": [c.to_dict() for c in pset.clients],
    }
    if pset.prior is not None:
        doc["prior"] = {"mean": pset.prior.mean.tolist(), "precision": pset.prior.precision.tolist()}
    return doc
