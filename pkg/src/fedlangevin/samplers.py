"""Per-iteration update rules: noise, local gradients, control variates, ULA.

Everything here is a pure function of explicit random draws.  Array
arguments may carry leading batch axes (replicate chains); client-indexed
arrays have shape ``(..., b, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

__all__ = [
    "NoiseSpec",
    "ControlVariateState",
    "LocalGradientRule",
    "correlated_noise",
    "client_noise",
    "fald_gradient",
    "vrfald_gradient",
    "local_gradients",
    "local_step",
    "init_control_variate",
    "update_control_variate",
    "ula_step",
]


@dataclass(frozen=True)
class NoiseSpec:
    tau: float
    dim: int
    num_clients: int = 1

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise InputError(f"tau must lie in [0, 1], got {self.tau}")
        if self.dim < 1 or self.num_clients < 1:
            raise InputError("dim and num_clients must be positive")

    @property
    def shared_scale(self):
        return math.sqrt(self.tau / self.num_clients)

    @property
    def local_scale(self):
        return math.sqrt(1.0 - self.tau)


def correlated_noise(shared_draw, local_draw, tau, num_clients=1):
    """Client Gaussian input ``sqrt(tau/b) * shared + sqrt(1 - tau) * local``.

    The ``1/b`` on the shared part keeps the client average at covariance
    ``I/b`` for every ``tau``, which is what makes the averaged chain target
    ``exp(-sum_i U^i)``.  With ``num_clients=1`` this is the plain mixture
    ``sqrt(tau) * shared + sqrt(1 - tau) * local``.
    """
    spec = NoiseSpec(float(tau), np.shape(shared_draw)[-1], num_clients)
    return spec.shared_scale * np.asarray(shared_draw) + spec.local_scale * np.asarray(local_draw)


def client_noise(shared, local, spec):
    """Vectorised noise for all clients: ``shared`` is ``(..., d)``, ``local`` is ``(..., b, d)``."""
    return spec.shared_scale * shared[..., None, :] + spec.local_scale * local


@dataclass(frozen=True)
class ControlVariateState:
    """Reference point ``Y_k`` and shift ``C_k`` shared by all clients."""

    reference: np.ndarray
    shift: np.ndarray


_RULES = {
    "fald": (False, False),
    "vrfald": (True, False),
    "fald-exact": (False, True),
    "vrfald-exact": (True, True),
}


@dataclass(frozen=True)
class LocalGradientRule:
    """Which local gradient a client uses.

    ``variance_reduced`` selects the control-variate gradient; ``exact``
    replaces minibatch estimates by full gradients.
    """

    variance_reduced: bool = False
    exact: bool = False

    @classmethod
    def from_name(cls, name):
        if isinstance(name, cls):
            return name
        try:
            vr, exact = _RULES[name]
        except KeyError:
            raise ConfigError(f"unknown rule {name!r}; expected one of {sorted(_RULES)}") from None
        return cls(vr, exact)

    @property
    def name(self):
        return ("vrfald" if self.variance_reduced else "fald") + ("-exact" if self.exact else "")


def fald_gradient(model, x_local, batch=None):
    """Plain local gradient: minibatch estimate, or exact when ``batch`` is None."""
    if batch is None:
        return model.grad(x_local)
    return model.batch_grad(x_local, np.asarray(batch))


def vrfald_gradient(model, x_local, cv, batch=None):
    """Recentred gradient ``g(x) - g(Y) + C`` with the same batch in both evaluations."""
    if batch is None:
        return model.grad(x_local) - model.grad(cv.reference) + cv.shift
    batch = np.asarray(batch)
    return model.batch_grad(x_local, batch) - model.batch_grad(cv.reference, batch) + cv.shift


def local_gradients(rule, pset, xs, idx=None, cv=None):
    """All clients' local gradients at once.

    ``xs`` has shape ``(..., b, d)``; ``idx`` is a per-client list of index
    arrays ``(..., n_i)`` (or one ``(..., b, n)`` array when sizes agree), or
    None for exact gradients.
    """
    if not rule.variance_reduced:
        return pset.grads(xs) if idx is None else pset.batch_grads(xs, idx)
    ys = np.broadcast_to(cv.reference[..., None, :], xs.shape)
    if idx is None:
        diff = pset.grads(xs) - pset.grads(ys)
    else:
        diff = pset.batch_grad_diffs(xs, ys, idx)
    return diff + cv.shift[..., None, :]


def local_step(x, g, gamma, z):
    """One Langevin step ``x - gamma * g + sqrt(2 gamma) * z``."""
    if not gamma > 0:
        raise ConfigError(f"step size must be positive, got {gamma}")
    return x - gamma * g + math.sqrt(2.0 * gamma) * z


def init_control_variate(client_params, pset):
    """``Y_0`` = client average, ``C_0 = (1/b) sum_i grad U^i(Y_0)``."""
    y = np.mean(client_params, axis=-2)
    return ControlVariateState(y, pset.mean_grad(y))


def update_control_variate(cv, client_params, pset, triggered):
    """Refresh ``(Y, C)`` from the pre-step client parameters when triggered.

    ``triggered`` may be a scalar flag or a boolean array over leading axes.
    """
    triggered = np.asarray(triggered, dtype=bool)
    if not triggered.any():
        return cv
    fresh = init_control_variate(client_params, pset)
    if triggered.ndim == 0:
        return fresh
    mask = triggered[..., None]
    return ControlVariateState(
        np.where(mask, fresh.reference, cv.reference), np.where(mask, fresh.shift, cv.shift)
    )


def ula_step(pset, x, gamma, z):
    """Centralised Langevin step ``x - (gamma/b) sum_i grad U^i(x) + sqrt(2 gamma / b) z``."""
    if not gamma > 0:
        raise ConfigError(f"step size must be positive, got {gamma}")
    b = pset.num_clients
    xs = np.broadcast_to(x[..., None, :], x.shape[:-1] + (b, pset.dim))
    total = pset.grads(xs).sum(axis=-2)
    return x - (gamma / b) * total + math.sqrt(2.0 * gamma / b) * z
