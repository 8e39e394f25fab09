"""Empirical diagnostics on sample traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytics import GaussianLaw, w2_gaussian
from .errors import InputError

__all__ = [
    "MomentSummary",
    "HpdEstimate",
    "moments",
    "variance_mse",
    "empirical_w2_1d",
    "gaussian_fit_w2",
    "hpd_threshold",
    "relative_hpd_error",
]


def _as_samples(trace):
    x = trace.samples if hasattr(trace, "samples") else trace
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError("trace holds no samples")
    return x


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def second_moment_about(self, point):
        """Average ``|X - point|^2`` implied by the moments (biased covariance)."""
        d = self.mean - np.asarray(point, dtype=float)
        return float(d @ d + np.trace(self.covariance) * (self.n - 1) / self.n)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist(), "n": self.n}


def moments(trace):
    """Sample mean and unbiased sample covariance."""
    x = _as_samples(trace)
    if x.shape[0] < 2:
        raise InputError("need at least two samples for a covariance estimate")
    return MomentSummary(x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False)), x.shape[0])


def variance_mse(trace, posterior):
    """``(mean_k |X_k - x_*|^2 - tr(Sigma_*))^2`` for a Gaussian posterior ``(x_*, Sigma_*)``."""
    x = _as_samples(trace)
    if x.shape[1] != posterior.dim:
        raise InputError(f"trace dimension {x.shape[1]} does not match posterior {posterior.dim}")
    r = x - posterior.mean
    return float((np.mean(np.sum(r * r, axis=1)) - np.trace(posterior.covariance)) ** 2)


def empirical_w2_1d(samples_a, samples_b):
    """Exact W2 between two equal-size 1-d empirical measures (sorted coupling)."""
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InputError("empirical W2 needs nonempty samples")
    if a.size != b.size:
        # compare on a common quantile grid
        n = min(a.size, b.size)
        q = (np.arange(n) + 0.5) / n
        a, b = np.quantile(a, q), np.quantile(b, q)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def gaussian_fit_w2(trace, reference, ridge=1e-10):
    """W2 between the moment-matched Gaussian of ``trace`` and ``reference``.

    Returns ``(distance, regularized)``; a singular covariance estimate gets
    ``ridge * I`` added and ``regularized`` is True.
    """
    m = moments(trace)
    cov = m.covariance
    regularized = False
    try:
        fit = GaussianLaw(m.mean, cov)
    except InputError:
        regularized = True
        fit = GaussianLaw(m.mean, cov + ridge * np.eye(cov.shape[0]))
    return w2_gaussian(fit, reference), regularized


@dataclass(frozen=True)
class HpdEstimate:
    alpha: float
    threshold: float

    def to_dict(self):
        return {"alpha": self.alpha, "threshold": self.threshold}


def hpd_threshold(potential_values, alpha):
    """Level ``eta`` with ``{x : pi(x) >= exp(-eta)}`` holding mass ``1 - alpha``.

    ``potential_values`` are ``-log pi~(X_k)`` over the samples; the
    threshold is their empirical ``(1 - alpha)``-quantile (linear interpolation).
    """
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    v = np.asarray(potential_values, dtype=float).ravel()
    if v.size == 0:
        raise InputError("no potential values")
    return HpdEstimate(float(alpha), float(np.quantile(v, 1.0 - alpha, method="linear")))


def relative_hpd_error(estimate, reference):
    return abs(estimate.threshold / reference.threshold - 1.0)
