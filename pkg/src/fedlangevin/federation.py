"""Simulated client/server loop for FALD and VR-FALD*.

Random numbers come from independent streams per purpose: one for the
shared noise, one noise and one minibatch stream per client, and one stream
each for the communication and control-variate Bernoullis.  Changing ``tau``,
``p_comm`` or ``q_cv`` therefore never shifts the draws of another stream.

Draws are generated in fixed-size chunks per chain, so a chain sees the
same random inputs whether it runs alone or alongside other chains (see
:func:`run_chains`).  Its trace then agrees up to floating-point rounding;
matrix products may be blocked differently for different chain counts.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError, InputError
from .samplers import (
    ControlVariateState,
    LocalGradientRule,
    NoiseSpec,
    init_control_variate,
    local_gradients,
    ula_step,
    update_control_variate,
)

__all__ = [
    "Seeds",
    "SamplerConfig",
    "FederationState",
    "RoundDraws",
    "SampleTrace",
    "init_state",
    "round",
    "run",
    "run_chains",
    "run_ula",
    "grad_eval_count",
]

log = logging.getLogger(__name__)

CHUNK = 512
DIVERGENCE_NORM = 1e8


@dataclass(frozen=True)
class Seeds:
    """Root seeds of the random streams.  ``batch`` defaults to one derived from ``client``."""

    shared: int = 0
    client: int = 1
    schedule: int = 2
    batch: int | None = None

    @classmethod
    def from_base(cls, base):
        return cls(shared=base, client=base + 1, schedule=base + 2)


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float
    total_iters: int
    p_comm: float = 1.0
    q_cv: float | None = None
    tau: float = 0.0
    batch_sizes: int | tuple | None = None
    burn_in: int | None = None
    thinning: int = 1
    period: int | None = None
    rule: LocalGradientRule = field(default_factory=LocalGradientRule)
    seeds: Seeds = field(default_factory=Seeds)
    record: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "rule", LocalGradientRule.from_name(self.rule))
        if isinstance(self.seeds, dict):
            object.__setattr__(self, "seeds", Seeds(**self.seeds))
        if isinstance(self.batch_sizes, list):
            object.__setattr__(self, "batch_sizes", tuple(self.batch_sizes))
        if self.q_cv is None:
            object.__setattr__(self, "q_cv", self.p_comm)
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.total_iters // 10)
        self.validate()

    def validate(self):
        if not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise ConfigError("must be a positive number", "gamma")
        if not 0.0 < self.p_comm <= 1.0:
            raise ConfigError("must lie in (0, 1]", "p_comm")
        if not 0.0 < self.q_cv <= 1.0:
            raise ConfigError("must lie in (0, 1]", "q_cv")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("must lie in [0, 1]", "tau")
        if int(self.total_iters) != self.total_iters or self.total_iters < 1:
            raise ConfigError("must be a positive integer", "total_iters")
        if not 0 <= self.burn_in < self.total_iters:
            raise ConfigError("must satisfy 0 <= burn_in < total_iters", "burn_in")
        if self.thinning < 1:
            raise ConfigError("must be a positive integer", "thinning")
        if self.period is not None and self.period < 1:
            raise ConfigError("must be a positive integer", "period")
        if self.record not in ("all", "comm"):
            raise ConfigError("must be 'all' or 'comm'", "record")
        if self.rule.variance_reduced and self.q_cv > self.p_comm:
            warnings.warn(
                f"q_cv={self.q_cv} exceeds p_comm={self.p_comm}; the VR-FALD* guarantees assume q_cv <= p_comm",
                stacklevel=3,
            )

    def batch_sizes_for(self, pset):
        """Per-client minibatch sizes; full batches when unset or under an exact rule."""
        N = pset.n_terms
        if self.rule.exact or self.batch_sizes is None:
            return N.copy()
        if isinstance(self.batch_sizes, (int, np.integer)):
            n = np.full(pset.num_clients, int(self.batch_sizes))
        else:
            n = np.asarray(self.batch_sizes, dtype=int)
        if n.shape != (pset.num_clients,) or np.any(n < 1) or np.any(n > N):
            raise ConfigError(f"need one size in [1, N_i] per client, got {self.batch_sizes}", "batch_sizes")
        return n

    def n_samples(self):
        return (self.total_iters - self.burn_in) // self.thinning

    def to_dict(self):
        out = asdict(self)
        out["rule"] = self.rule.name
        out["batch_sizes"] = (
            list(self.batch_sizes) if isinstance(self.batch_sizes, tuple) else self.batch_sizes
        )
        return out


@dataclass
class FederationState:
    """Client parameters ``X_k^i``, server average ``X_k``, control variates, counter ``k``."""

    client_params: np.ndarray
    server_param: np.ndarray
    cv: ControlVariateState | None
    iter: int = 0


@dataclass
class RoundDraws:
    """Every random input one round consumes.

    ``batches`` is a per-client list of index arrays, or None for exact gradients.
    """

    comm: bool | np.ndarray
    cv_refresh: bool | np.ndarray
    shared_noise: np.ndarray
    local_noise: np.ndarray
    batches: list | None = None


@dataclass
class SampleTrace:
    samples: np.ndarray
    iterations: np.ndarray
    n_comm_rounds: int
    n_cv_rounds: int
    n_grad_evals: int
    total_iters: int
    config: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.samples.shape[1]

    def summary(self):
        out = {
            "n_samples": int(self.samples.shape[0]),
            "total_iters": int(self.total_iters),
            "n_comm_rounds": int(self.n_comm_rounds),
            "n_cv_rounds": int(self.n_cv_rounds),
            "n_grad_evals": int(self.n_grad_evals),
            "config": self.config,
        }
        if self.samples.shape[0]:
            out["mean"] = self.samples.mean(axis=0).tolist()
        if self.samples.shape[0] > 1:
            out["covariance"] = np.atleast_2d(np.cov(self.samples, rowvar=False)).tolist()
        return out


def init_state(pset, init, variance_reduced):
    init = np.asarray(init, dtype=float)
    if init.shape[-1] != pset.dim:
        raise InputError(f"init has dimension {init.shape[-1]}, potentials have {pset.dim}")
    xs = np.broadcast_to(init[..., None, :], init.shape[:-1] + (pset.num_clients, pset.dim)).copy()
    cv = init_control_variate(xs, pset) if variance_reduced else None
    return FederationState(xs, xs.mean(axis=-2), cv, 0)


def _coefficients(cfgs, b):
    """Per-chain step size and noise multipliers, shaped to broadcast over ``(R, b, d)``."""
    gamma = np.array([c.gamma for c in cfgs], dtype=float)
    root = np.sqrt(2.0 * gamma)
    shared = np.array([NoiseSpec(c.tau, 1, b).shared_scale for c in cfgs]) * root
    local = np.array([NoiseSpec(c.tau, 1, b).local_scale for c in cfgs]) * root
    return gamma[:, None, None], shared[:, None, None], local[:, None, None]


def _noise(coef, shared, local):
    """Scaled client noise ``sqrt(2 gamma) (sqrt(tau/b) shared + sqrt(1 - tau) local)``."""
    _, c_shared, c_local = coef
    return c_shared * shared[..., None, :] + c_local * local


def _advance(xs, cv, comm, cv_refresh, noise, batches, gamma, rule, pset):
    """One iteration on arrays with a leading chain axis; ``noise`` is already scaled."""
    g = local_gradients(rule, pset, xs, batches, cv)
    x_tilde = xs - gamma * g + noise
    if rule.variance_reduced:
        # (Y, C) for the next round come from the pre-step parameters
        cv = update_control_variate(cv, xs, pset, cv_refresh)
    server = x_tilde.sum(axis=-2) / pset.num_clients
    new_xs = np.where(comm[..., None, None], server[..., None, :], x_tilde)
    return new_xs, server, cv


def round(state, cfg, pset, draws):
    """Advance a single federation by one iteration using explicit draws."""
    coef = tuple(c[0] for c in _coefficients([cfg], pset.num_clients))
    noise = _noise(
        coef, np.asarray(draws.shared_noise, dtype=float), np.asarray(draws.local_noise, dtype=float)
    )
    xs, server, cv = _advance(
        state.client_params,
        state.cv,
        np.asarray(draws.comm, dtype=bool),
        draws.cv_refresh,
        noise,
        draws.batches,
        coef[0],
        cfg.rule,
        pset,
    )
    return FederationState(xs, server, cv, state.iter + 1)


class _Streams:
    """Chunked draws for all chains, iteration axis first.

    Every chain owns its generators, so a chain's draws do not depend on
    which other chains run alongside it.  Noise streams whose coefficient is
    zero for a chain (``tau = 0`` or ``tau = 1``) are not drawn.
    """

    def __init__(self, seeds_list, pset, batch_sizes, need_batches, need_cv, skip_shared, skip_local):
        b = pset.num_clients
        self.R, self.b, self.dim = len(seeds_list), b, pset.dim
        self.shared, self.noise, self.batch, self.comm, self.cvr = [], [], [], [], []
        for seeds in seeds_list:
            self.shared.append(np.random.default_rng(np.random.SeedSequence(seeds.shared)))
            self.noise.append(
                [np.random.default_rng(np.random.SeedSequence(seeds.client, spawn_key=(i, 0))) for i in range(b)]
            )
            if seeds.batch is None:
                bseeds = [np.random.SeedSequence(seeds.client, spawn_key=(i, 1)) for i in range(b)]
            else:
                bseeds = [np.random.SeedSequence(seeds.batch, spawn_key=(i,)) for i in range(b)]
            self.batch.append([np.random.default_rng(s) for s in bseeds])
            self.comm.append(np.random.default_rng(np.random.SeedSequence(seeds.schedule, spawn_key=(0,))))
            self.cvr.append(np.random.default_rng(np.random.SeedSequence(seeds.schedule, spawn_key=(1,))))
        self.N = pset.n_terms
        self.n = batch_sizes
        self.need_batches = need_batches
        self.need_cv = need_cv
        self.skip_shared, self.skip_local = skip_shared, skip_local
        self.uniform = len(set(batch_sizes.tolist())) == 1

    def _batch_chunk(self, rng, i, size):
        N, n = int(self.N[i]), int(self.n[i])
        if n == 1:
            return rng.integers(0, N, size=(size, 1))
        keys = rng.random((size, N))
        return np.argpartition(keys, n - 1, axis=1)[:, :n] if n < N else np.argsort(keys, axis=1)

    def chunk(self, size):
        R, b, d = self.R, self.b, self.dim
        shared = np.zeros((size, R, d))
        local = np.zeros((size, R, b, d))
        comm = np.empty((size, R))
        for r in range(R):
            if not self.skip_shared[r]:
                shared[:, r] = self.shared[r].standard_normal((size, d))
            if not self.skip_local[r]:
                for i in range(b):
                    local[:, r, i] = self.noise[r][i].standard_normal((size, d))
            comm[:, r] = self.comm[r].random(size)
        out = {"shared": shared, "local": local, "comm": comm}
        if self.need_cv:
            cv = np.empty((size, R))
            for r in range(R):
                cv[:, r] = self.cvr[r].random(size)
            out["cv"] = cv
        if self.need_batches:
            if self.uniform:
                batches = np.empty((size, R, b, int(self.n[0])), dtype=np.int64)
                for r in range(R):
                    for i in range(b):
                        batches[:, r, i] = self._batch_chunk(self.batch[r][i], i, size)
            else:
                batches = [
                    np.stack([self._batch_chunk(self.batch[r][i], i, size) for r in range(R)], axis=1)
                    for i in range(b)
                ]
            out["batches"] = batches
        return out


def _batches_at(batches, t):
    if isinstance(batches, list):
        return [bt[t] for bt in batches]
    return batches[t]


_SHARED_FIELDS = ("total_iters", "burn_in", "thinning", "period", "record", "rule", "batch_sizes")


def run_chains(cfg, pset, init, seeds_list=None):
    """Run several chains in lockstep.

    ``cfg`` is one :class:`SamplerConfig` (paired with ``seeds_list``) or a
    list of configs, one per chain.  Chains in one call may differ in
    ``gamma``, ``p_comm``, ``q_cv``, ``tau`` and seeds; the remaining fields
    must agree.  Each chain consumes the same draws as when run alone.
    """
    if isinstance(cfg, SamplerConfig):
        seeds_list = [cfg.seeds] if seeds_list is None else list(seeds_list)
        cfgs = [replace(cfg, seeds=s) for s in seeds_list]
    else:
        cfgs = list(cfg)
        if seeds_list is not None:
            if len(seeds_list) != len(cfgs):
                raise InputError("need one seed set per config")
            cfgs = [replace(c, seeds=s) for c, s in zip(cfgs, seeds_list)]
    R = len(cfgs)
    if R == 0:
        raise InputError("need at least one chain")
    base = cfgs[0]
    for c in cfgs[1:]:
        for name in _SHARED_FIELDS:
            if getattr(c, name) != getattr(base, name):
                raise ConfigError("must agree across chains run together", name)

    rule = base.rule
    vr = rule.variance_reduced
    batch_sizes = base.batch_sizes_for(pset)
    need_batches = not (rule.exact or np.array_equal(batch_sizes, pset.n_terms))
    coef = _coefficients(cfgs, pset.num_clients)
    streams = _Streams(
        [c.seeds for c in cfgs],
        pset,
        batch_sizes,
        need_batches,
        vr,
        skip_shared=coef[1].ravel() == 0.0,
        skip_local=coef[2].ravel() == 0.0,
    )
    gamma = coef[0]
    p_comm = np.array([c.p_comm for c in cfgs])
    q_cv = np.array([c.q_cv for c in cfgs])

    init = np.asarray(init, dtype=float)
    if init.shape[-1:] != (pset.dim,):
        raise InputError(f"init has shape {init.shape}, potentials have dimension {pset.dim}")
    init = np.broadcast_to(init, (R, pset.dim))
    state = init_state(pset, init, vr)
    xs, cv = state.client_params, state.cv

    K, k0, thin = base.total_iters, base.burn_in, base.thinning
    per_iter = int(batch_sizes.sum()) * (2 if vr else 1)
    full_eval = int(pset.n_terms.sum())
    n_comm = np.zeros(R, dtype=np.int64)
    n_cv = np.zeros(R, dtype=np.int64)
    all_mode = base.record == "all"
    if all_mode:
        n_keep = base.n_samples()
        samples = np.empty((R, n_keep, pset.dim))
        iterations = k0 + thin * np.arange(1, n_keep + 1)
        slot = 0
    else:
        kept = [[] for _ in range(R)]
        kept_iters = [[] for _ in range(R)]
        comm_seen = np.zeros(R, dtype=np.int64)
    limit = DIVERGENCE_NORM**2

    k = 0
    while k < K:
        size = min(CHUNK, K - k)
        ch = streams.chunk(size)
        if base.period is None:
            comm_all = ch["comm"] < p_comm
        else:
            fire = (np.arange(k + 1, k + size + 1) % base.period) == 0
            comm_all = np.repeat(fire[:, None], R, axis=1)
        n_comm += comm_all.sum(axis=0)
        cv_all = None
        if vr:
            cv_all = ch["cv"] < q_cv
            n_cv += cv_all.sum(axis=0)
        noise = _noise(coef, ch["shared"], ch["local"])
        batches = pset.fold_batches(ch["batches"]) if need_batches else None
        for t in range(size):
            comm = comm_all[t]
            xs, server, cv = _advance(
                xs,
                cv,
                comm,
                None if cv_all is None else cv_all[t],
                noise[t],
                None if batches is None else _batches_at(batches, t),
                gamma,
                rule,
                pset,
            )
            k += 1
            if not (server * server).sum(axis=-1).max() <= limit:
                raise DivergenceError(
                    f"server parameter diverged (norm > {DIVERGENCE_NORM:g} or non-finite) at iteration {k}",
                    iteration=k,
                )
            if k <= k0:
                continue
            if all_mode:
                if (k - k0) % thin == 0:
                    samples[:, slot] = server
                    slot += 1
            else:
                for r in np.flatnonzero(comm):
                    comm_seen[r] += 1
                    if comm_seen[r] % thin == 0:
                        kept[r].append(server[r].copy())
                        kept_iters[r].append(k)

    traces = []
    for r in range(R):
        if all_mode:
            smp, its = samples[r], iterations
        else:
            smp = np.array(kept[r]).reshape(-1, pset.dim)
            its = np.array(kept_iters[r], dtype=np.int64)
        traces.append(
            SampleTrace(
                samples=smp,
                iterations=its,
                n_comm_rounds=int(n_comm[r]),
                n_cv_rounds=int(n_cv[r]),
                n_grad_evals=int(K * per_iter + n_cv[r] * full_eval),
                total_iters=K,
                config=cfgs[r].to_dict(),
            )
        )
    return traces


def run(cfg, pset, init):
    """Run one chain and return its :class:`SampleTrace`."""
    return run_chains([cfg], pset, init)[0]


def run_ula(pset, init, gamma, total_iters, seeds=None, burn_in=0, thinning=1):
    """Centralised Langevin chain driven by the shared noise stream of ``seeds``.

    With ``b = 1`` this consumes exactly the draws FALD uses at ``tau = 1``.
    """
    seeds = seeds or Seeds()
    rng = np.random.default_rng(np.random.SeedSequence(seeds.shared))
    x = np.asarray(init, dtype=float)[None, :]
    n_keep = (total_iters - burn_in) // thinning
    samples = np.empty((n_keep, pset.dim))
    slot, k = 0, 0
    while k < total_iters:
        size = min(CHUNK, total_iters - k)
        z = rng.standard_normal((size, pset.dim))
        for t in range(size):
            x = ula_step(pset, x, gamma, z[t][None, :])
            k += 1
            if k > burn_in and (k - burn_in) % thinning == 0:
                samples[slot] = x[0]
                slot += 1
    iterations = burn_in + thinning * np.arange(1, n_keep + 1)
    n_evals = int(total_iters * pset.n_terms.sum())
    return SampleTrace(samples, iterations, 0, 0, n_evals, total_iters, {"rule": "ula", "gamma": gamma})


def grad_eval_count(trace):
    """Component-gradient evaluations recorded in ``trace``."""
    return trace.n_grad_evals


def with_seeds(cfg, seeds):
    return replace(cfg, seeds=seeds)
