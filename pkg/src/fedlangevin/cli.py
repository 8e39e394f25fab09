"""Configuration-driven experiment runner.

Commands::

    fedlangevin run --spec experiment.json --out results/
    fedlangevin analyze --trace a.csv b.csv --posterior posterior.json
    fedlangevin budget --problem problem.json
    fedlangevin generate --num-clients 10 --dim 5 --out set.json

Errors are reported as one JSON object on stderr with a nonzero exit code.
The worker count for ``run`` comes from ``FEDLANGEVIN_WORKERS`` (default 1).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import chi2

from . import __version__
from .analytics import (
    BudgetProblem,
    GaussianLaw,
    budget_optimize,
    gaussian_product_posterior,
    reference_step_size,
)
from .errors import ConfigError, FedLangevinError, InputError, TraceParseError
from .federation import SamplerConfig, Seeds, run_chains
from .metrics import (
    HpdEstimate,
    empirical_w2_1d,
    gaussian_fit_w2,
    hpd_threshold,
    moments,
    relative_hpd_error,
    variance_mse,
)
from .potentials import (
    generate_gaussian_set,
    heterogeneity,
    load_potential_set,
    minimizer,
    potential_set_to_dict,
)

log = logging.getLogger("fedlangevin")

WORKERS_ENV = "FEDLANGEVIN_WORKERS"
RUN_FORMAT = "fedlangevin-run/1"
ANALYZE_FORMAT = "fedlangevin-analyze/1"

EXIT_CODES = {
    "input_error": 2,
    "config_error": 2,
    "parse_error": 2,
    "io_error": 2,
    "infeasible": 3,
    "numerical_error": 4,
    "divergence": 4,
}

RESULT_COLUMNS = [
    "cell", "rule", "p_comm", "q_cv", "gamma", "gamma_multiplier", "tau", "replicate",
    "seed_shared", "seed_client", "seed_schedule", "n_samples", "n_comm_rounds",
    "n_cv_rounds", "n_grad_evals", "mse", "gaussian_fit_w2", "fit_regularized", "mean_error",
]  # fmt: skip
CELL_COLUMNS = [
    "cell", "rule", "p_comm", "q_cv", "gamma", "gamma_multiplier", "tau", "replicates",
    "mse_mean", "mse_se", "gaussian_fit_w2_mean", "gaussian_fit_w2_se", "pooled_mean_error",
    "comm_fraction", "grad_evals_mean",
]  # fmt: skip
METRIC_COLUMNS = ["config_hash", "cell", "metric", "value"]
CELL_METRICS = CELL_COLUMNS[CELL_COLUMNS.index("mse_mean") :]


# -- schemas -----------------------------------------------------------------


def load_schema(name):
    """Parsed JSON schema shipped with the package, e.g. ``"summary"``."""
    text = resources.files("fedlangevin").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_document(doc, name, error=ConfigError):
    """Validate ``doc`` against schema ``name``; raise ``error`` naming the first bad field."""
    validator = jsonschema.Draft202012Validator(load_schema(name))
    first = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if first is None:
        return
    path = ".".join(str(p) for p in first.absolute_path) or "<root>"
    if error is ConfigError:
        raise ConfigError(first.message, path)
    raise error(f"{path}: {first.message}")


# -- experiment spec ---------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    index: int
    rule: str
    p_comm: float
    q_cv: float
    gamma: float
    gamma_multiplier: float | None
    tau: float

    def key(self):
        return {
            "rule": self.rule,
            "p_comm": self.p_comm,
            "q_cv": self.q_cv,
            "gamma": self.gamma,
            "tau": self.tau,
        }


@dataclass(frozen=True)
class ExperimentSpec:
    """Validated experiment description with every default filled in."""

    potentials: dict
    sweep: tuple
    sampler: dict
    replication: dict
    outputs: dict = field(default_factory=dict)
    name: str = ""
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        validate_document(doc, "experiment_spec")
        blocks = doc["sweep"] if isinstance(doc["sweep"], list) else [doc["sweep"]]
        sweep = []
        for block in blocks:
            kind, values = next(iter(block["gamma"].items()))
            sweep.append(
                {
                    "rule": list(block["rule"]),
                    "p_comm": [float(p) for p in block["p_comm"]],
                    "q_cv": [q if q == "p_comm" else float(q) for q in block.get("q_cv", ["p_comm"])],
                    "gamma": {kind: [float(g) for g in values]},
                    "tau": [float(t) for t in block.get("tau", [0.0])],
                }
            )
        s = doc["sampler"]
        K = int(s["total_iters"])
        burn = s.get("burn_in")
        batch = s.get("batch_size")
        schedule = s.get("schedule", "bernoulli")
        init = s.get("init", "minimizer")
        sampler = {
            "total_iters": K,
            "burn_in": K // 10 if burn is None else int(burn),
            "thinning": int(s.get("thinning", 1)),
            "batch_size": list(batch) if isinstance(batch, list) else batch,
            "period": None if schedule == "bernoulli" else int(schedule["period"]),
            "record": s.get("record", "all"),
            "init": [float(v) for v in init] if isinstance(init, list) else init,
        }
        if not sampler["burn_in"] < K:
            raise ConfigError("must be smaller than total_iters", "sampler.burn_in")
        rep = doc.get("replication", {})
        replication = {
            "chains": int(rep.get("chains", 1)),
            "base_seed": int(rep.get("base_seed", 0)),
            "common_seeds": bool(rep.get("common_seeds", False)),
        }
        outputs = {"traces": bool(doc.get("outputs", {}).get("traces", False))}
        return cls(
            potentials=dict(doc["potentials"]),
            sweep=tuple(sweep),
            sampler=sampler,
            replication=replication,
            outputs=outputs,
            name=doc.get("name", ""),
            base_dir=Path(base_dir),
        )

    def semantic(self):
        """Fields that determine the numbers; the potential source is hashed by content."""
        return {"sweep": list(self.sweep), "sampler": self.sampler, "replication": self.replication}

    def to_dict(self):
        return {"name": self.name, "potentials": self.potentials, **self.semantic(), "outputs": self.outputs}


def load_experiment(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    return ExperimentSpec.from_dict(doc, base_dir=path.parent)


def build_potentials(spec):
    src = spec.potentials
    if "generate" in src:
        return generate_gaussian_set(**src["generate"])
    if "inline" in src:
        validate_document(src["inline"], "potential_set")
        return load_potential_set(src["inline"])
    path = Path(src["path"])
    if not path.is_absolute():
        path = spec.base_dir / path
    doc = json.loads(path.read_text())
    validate_document(doc, "potential_set")
    return load_potential_set(doc)


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(spec, pset):
    """SHA-256 over the semantic spec fields and the potential set content."""
    payload = {"format": RUN_FORMAT, "spec": spec.semantic(), "potentials": potential_set_to_dict(pset)}
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


def reference_precision(pset):
    """Posterior precision for Gaussian sets, Hessian at the minimiser otherwise."""
    if pset.is_gaussian:
        return np.linalg.inv(gaussian_product_posterior(pset).covariance)
    return pset.total_hessian(minimizer(pset))


def expand_cells(spec, gamma_bar):
    cells = []
    for block in spec.sweep:
        kind, values = next(iter(block["gamma"].items()))
        for rule, p, q, g, tau in itertools.product(
            block["rule"], block["p_comm"], block["q_cv"], values, block["tau"]
        ):
            q_val = p if q == "p_comm" else q
            if kind == "multiplier":
                gamma, mult = g * p * gamma_bar, g
            else:
                gamma, mult = g, None
            cells.append(Cell(len(cells), rule, p, q_val, gamma, mult, tau))
    return cells


def cell_seeds(spec, cell, replicate):
    """Seeds of one replicate.  Cells own their seeds unless ``common_seeds`` is set."""
    entropy = [spec.replication["base_seed"], replicate]
    if not spec.replication["common_seeds"]:
        digest = hashlib.sha256(_canonical_json(cell.key()).encode()).digest()
        entropy += [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    words = np.random.SeedSequence(entropy).generate_state(3)
    return Seeds(*(int(w) for w in words))


def _initial_point(spec, pset):
    init = spec.sampler["init"]
    if init == "minimizer":
        return minimizer(pset)
    if init == "zero":
        return np.zeros(pset.dim)
    x = np.asarray(init, dtype=float)
    if x.shape != (pset.dim,):
        raise ConfigError(f"needs {pset.dim} coordinates", "sampler.init")
    return x


# SamplerConfig fields set by the experiment's sampler block
_SAMPLER_PATHS = {
    "total_iters": "sampler.total_iters",
    "burn_in": "sampler.burn_in",
    "thinning": "sampler.thinning",
    "batch_sizes": "sampler.batch_size",
    "period": "sampler.schedule.period",
    "record": "sampler.record",
}


def _sampler_config(spec, cell, seeds, pset):
    s = spec.sampler
    try:
        cfg = SamplerConfig(
            gamma=cell.gamma,
            total_iters=s["total_iters"],
            p_comm=cell.p_comm,
            q_cv=cell.q_cv,
            tau=cell.tau,
            batch_sizes=s["batch_size"],
            burn_in=s["burn_in"],
            thinning=s["thinning"],
            period=s["period"],
            rule=cell.rule,
            seeds=seeds,
            record=s["record"],
        )
        cfg.batch_sizes_for(pset)
    except ConfigError as exc:
        path = _SAMPLER_PATHS.get(exc.path, f"cells[{cell.index}].{exc.path}")
        raise ConfigError(exc.message, path) from None
    return cfg


# -- running -----------------------------------------------------------------


def _run_cell(cfgs, pset, init, posterior, keep_traces):
    """Run one cell's replicates in lockstep and reduce each trace to its statistics."""
    traces = run_chains(cfgs, pset, init)
    out = []
    for tr in traces:
        stats = {
            "n_samples": int(tr.samples.shape[0]),
            "n_comm_rounds": tr.n_comm_rounds,
            "n_cv_rounds": tr.n_cv_rounds,
            "n_grad_evals": tr.n_grad_evals,
            "mse": None,
            "gaussian_fit_w2": None,
            "fit_regularized": None,
            "mean_error": None,
            "mean": None,
            "covariance": None,
        }
        if tr.samples.shape[0] >= 2:
            m = moments(tr)
            stats["mean"], stats["covariance"] = m.mean, m.covariance
            if posterior is not None:
                stats["mse"] = variance_mse(tr, posterior)
                stats["gaussian_fit_w2"], stats["fit_regularized"] = gaussian_fit_w2(tr, posterior)
                stats["mean_error"] = float(np.linalg.norm(m.mean - posterior.mean))
        if keep_traces:
            stats["samples"], stats["iterations"] = tr.samples, tr.iterations
        out.append(stats)
    return out


def _pooled_moments(stats):
    """Mean and unbiased covariance of the union of equal-length replicate traces."""
    usable = [s for s in stats if s["mean"] is not None]
    if not usable:
        return None, None
    n = usable[0]["n_samples"]
    means = np.array([s["mean"] for s in usable])
    mean = means.mean(axis=0)
    scatter = sum((n - 1) * s["covariance"] + n * np.outer(s["mean"] - mean, s["mean"] - mean) for s in usable)
    return mean, scatter / (n * len(usable) - 1)


def _mean_se(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else None
    return float(arr.mean()), se


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    config_hash: str
    pset: object
    posterior: GaussianLaw | None
    gamma_bar: float
    cells: list
    rows: list
    cell_rows: list
    traces: dict

    def summary(self, created):
        x_star = minimizer(self.pset)
        return {
            "format": RUN_FORMAT,
            "version": __version__,
            "config_hash": self.config_hash,
            "created": created,
            "spec": self.spec.to_dict(),
            "potentials": {
                "num_clients": self.pset.num_clients,
                "dim": self.pset.dim,
                "n_terms": [int(n) for n in self.pset.n_terms],
                "gaussian": bool(self.pset.is_gaussian),
                "minimizer": x_star.tolist(),
                "heterogeneity": heterogeneity(self.pset, x_star),
                "reference_step": self.gamma_bar,
                "posterior": None if self.posterior is None else self.posterior.to_dict(),
            },
            "cells": self.cell_rows,
        }


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"must be a positive integer, got {raw!r}", WORKERS_ENV) from None
    if n < 1:
        raise ConfigError(f"must be a positive integer, got {raw!r}", WORKERS_ENV)
    return n


def run_experiment(spec, pset=None, workers=None):
    """Run every cell of ``spec`` and collect per-replicate and per-cell statistics.

    Each cell runs its replicates in lockstep as one work unit, so results do
    not depend on the worker count.
    """
    pset = build_potentials(spec) if pset is None else pset
    posterior = gaussian_product_posterior(pset) if pset.is_gaussian else None
    lam = np.linalg.eigvalsh(reference_precision(pset))
    gamma_bar = 2.0 / (lam[0] + lam[-1]) if posterior is None else reference_step_size(posterior)
    cells = expand_cells(spec, gamma_bar)
    init = _initial_point(spec, pset)
    R = spec.replication["chains"]
    keep = spec.outputs["traces"]

    units = []
    for cell in cells:
        seeds = [cell_seeds(spec, cell, r) for r in range(R)]
        units.append([_sampler_config(spec, cell, s, pset) for s in seeds])

    workers = worker_count() if workers is None else workers
    if workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(units))) as pool:
            futures = [pool.submit(_run_cell, u, pset, init, posterior, keep) for u in units]
            results = [f.result() for f in futures]
    else:
        results = []
        for cell, unit in zip(cells, units):
            log.info("cell %d/%d: %s", cell.index + 1, len(cells), cell.key())
            results.append(_run_cell(unit, pset, init, posterior, keep))

    rows, cell_rows, traces = [], [], {}
    K = spec.sampler["total_iters"]
    for cell, unit, stats in zip(cells, units, results):
        base = {
            "cell": cell.index,
            "rule": cell.rule,
            "p_comm": cell.p_comm,
            "q_cv": cell.q_cv,
            "gamma": cell.gamma,
            "gamma_multiplier": cell.gamma_multiplier,
            "tau": cell.tau,
        }
        for r, (cfg, st) in enumerate(zip(unit, stats)):
            rows.append(
                {
                    **base,
                    "replicate": r,
                    "seed_shared": cfg.seeds.shared,
                    "seed_client": cfg.seeds.client,
                    "seed_schedule": cfg.seeds.schedule,
                    **{k: st[k] for k in RESULT_COLUMNS if k in st},
                }
            )
            if keep:
                traces[(cell.index, r)] = (st["iterations"], st["samples"])
        mse_mean, mse_se = _mean_se([s["mse"] for s in stats])
        w2_mean, w2_se = _mean_se([s["gaussian_fit_w2"] for s in stats])
        pooled_error = None
        if posterior is not None:
            pooled_mean, _ = _pooled_moments(stats)
            if pooled_mean is not None:
                pooled_error = float(np.linalg.norm(pooled_mean - posterior.mean))
        cell_rows.append(
            {
                **base,
                "replicates": R,
                "mse_mean": mse_mean,
                "mse_se": mse_se,
                "gaussian_fit_w2_mean": w2_mean,
                "gaussian_fit_w2_se": w2_se,
                "pooled_mean_error": pooled_error,
                "comm_fraction": float(np.mean([s["n_comm_rounds"] for s in stats]) / K),
                "grad_evals_mean": float(np.mean([s["n_grad_evals"] for s in stats])),
            }
        )
    return ExperimentResult(
        spec, config_hash(spec, pset), pset, posterior, gamma_bar, cells, rows, cell_rows, traces
    )


# -- writing -----------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _json_text(doc):
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _timestamp():
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible builds
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (
        datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc)
    )
    return moment.replace(microsecond=0).isoformat()


def trace_csv_text(iterations, samples):
    d = samples.shape[1]
    rows = [{"iteration": int(k), **{f"x{j}": v for j, v in enumerate(x)}} for k, x in zip(iterations, samples)]
    return _csv_text(["iteration"] + [f"x{j}" for j in range(d)], rows)


def metric_rows(result):
    rows = []
    for cell in result.cell_rows:
        for name in CELL_METRICS:
            if cell[name] is not None:
                rows.append(
                    {"config_hash": result.config_hash, "cell": cell["cell"], "metric": name, "value": cell[name]}
                )
    return rows


def write_outputs(result, out_dir):
    """Write all run artifacts into ``out_dir`` and return the summary document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "results.csv": _csv_text(RESULT_COLUMNS, result.rows),
        "cells.csv": _csv_text(CELL_COLUMNS, result.cell_rows),
        "metrics.csv": _csv_text(METRIC_COLUMNS, metric_rows(result)),
        "potentials.json": _json_text(potential_set_to_dict(result.pset)),
    }
    if result.posterior is not None:
        files["posterior.json"] = _json_text(result.posterior.to_dict())
    for (c, r), (its, smp) in sorted(result.traces.items()):
        files[f"traces/cell{c:03d}_rep{r:03d}.csv"] = trace_csv_text(its, smp)
    summary = result.summary(_timestamp())
    summary["files"] = sorted(files) + ["summary.json"]
    files["summary.json"] = _json_text(summary)
    for name, text in files.items():
        target = out / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    return summary


# -- traces ------------------------------------------------------------------


def read_trace(path):
    """Parse a trace CSV into ``(iterations, samples)``; errors carry the line number."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError("empty file, expected a header", 1, path) from None
        d = len(header) - 1
        if d < 1 or header != ["iteration"] + [f"x{j}" for j in range(d)]:
            raise TraceParseError("header must be 'iteration,x0,...,x{d-1}'", 1, path)
        iterations, samples = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != d + 1:
                raise TraceParseError(f"expected {d + 1} fields, found {len(row)}", line, path)
            try:
                k = int(row[0])
                x = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise TraceParseError(f"not a number: {exc}", line, path) from None
            if not all(math.isfinite(v) for v in x):
                raise TraceParseError("non-finite coordinate", line, path)
            iterations.append(k)
            samples.append(x)
    if not samples:
        raise TraceParseError("trace holds no samples", None, path)
    return np.asarray(iterations, dtype=np.int64), np.asarray(samples, dtype=float)


def load_gaussian_law(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    validate_document(doc, "gaussian_law", error=InputError)
    return GaussianLaw.from_dict(doc)


def _gaussian_potential(posterior, samples):
    # -log of the unnormalised density, constant dropped
    r = samples - posterior.mean
    return 0.5 * np.einsum("ni,ij,nj->n", r, posterior.precision, r)


def analyze(trace_paths, posterior_path, alpha=0.1, reference_path=None):
    """Metrics report for one or more traces against a Gaussian posterior."""
    posterior = load_gaussian_law(posterior_path)
    traces = [(str(p), read_trace(p)[1]) for p in trace_paths]
    for name, x in traces:
        if x.shape[1] != posterior.dim:
            raise InputError(f"{name}: dimension {x.shape[1]} does not match posterior dimension {posterior.dim}")
        if x.shape[0] < 2:
            raise InputError(f"{name}: need at least two samples")
    # the quadratic potential of a Gaussian draw is half a chi-square with d degrees
    exact = HpdEstimate(alpha, float(0.5 * chi2.ppf(1.0 - alpha, posterior.dim)))
    ref_hpd = None
    if reference_path is not None:
        ref = read_trace(reference_path)[1]
        ref_hpd = hpd_threshold(_gaussian_potential(posterior, ref), alpha)

    reports = []
    for name, x in traces:
        m = moments(x)
        w2, regularized = gaussian_fit_w2(x, posterior)
        hpd = hpd_threshold(_gaussian_potential(posterior, x), alpha)
        hpd_doc = {
            **hpd.to_dict(),
            "exact_threshold": exact.threshold,
            "relative_error_vs_exact": relative_hpd_error(hpd, exact),
        }
        if ref_hpd is not None:
            hpd_doc["relative_error_vs_reference"] = relative_hpd_error(hpd, ref_hpd)
        reports.append(
            {
                "path": name,
                "n_samples": int(x.shape[0]),
                "mean": m.mean.tolist(),
                "covariance": m.covariance.tolist(),
                "variance_mse": variance_mse(x, posterior),
                "gaussian_fit_w2": w2,
                "fit_regularized": regularized,
                "hpd": hpd_doc,
            }
        )
    pairs = []
    for (na, xa), (nb, xb) in itertools.combinations(traces, 2):
        pairs.append(
            {"a": na, "b": nb, "per_coordinate": [empirical_w2_1d(xa[:, j], xb[:, j]) for j in range(xa.shape[1])]}
        )
    return {
        "format": ANALYZE_FORMAT,
        "posterior": str(posterior_path),
        "alpha": alpha,
        "reference": None if reference_path is None else str(reference_path),
        "traces": reports,
        "pairwise_w2_1d": pairs,
    }


# -- budget ------------------------------------------------------------------


def solve_budget(doc):
    validate_document(doc, "budget_problem", error=InputError)
    problem = BudgetProblem.from_dict(doc)
    sol = budget_optimize(problem)
    out = {"problem": dict(doc), **sol.to_dict(), "communications": None}
    if "p_comm" in doc:
        out["communications"] = {"p_comm": doc["p_comm"], "expected_rounds": doc["p_comm"] * sol.K_eps}
    return out


# -- entry point -------------------------------------------------------------


def _read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None


def _emit(doc, out):
    text = _json_text(doc)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args):
    spec = load_experiment(args.spec)
    result = run_experiment(spec)
    summary = write_outputs(result, args.out)
    _emit(
        {"out": str(args.out), "config_hash": summary["config_hash"], "cells": len(result.cells), "rows": len(result.rows)},
        None,
    )


def cmd_analyze(args):
    _emit(analyze(args.trace, args.posterior, args.alpha, args.reference), args.out)


def cmd_budget(args):
    _emit(solve_budget(_read_json(args.problem)), args.out)


def cmd_generate(args):
    pset = generate_gaussian_set(
        args.num_clients,
        args.dim,
        seed=args.seed,
        mean_spread=args.mean_spread,
        condition_number=args.condition_number,
        n_terms=args.n_terms,
        term_spread=args.term_spread,
    )
    _emit(potential_set_to_dict(pset), args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog="fedlangevin", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a sampler sweep")
    p.add_argument("--spec", required=True, help="experiment spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="metrics for sample traces")
    p.add_argument("--trace", required=True, nargs="+", help="trace CSV files")
    p.add_argument("--posterior", required=True, help="Gaussian posterior JSON (mean, covariance)")
    p.add_argument("--alpha", type=float, default=0.1, help="HPD level (default 0.1)")
    p.add_argument("--reference", help="reference trace for the relative HPD error")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("budget", help="optimal step size and iteration count")
    p.add_argument("--problem", required=True, help="budget problem JSON")
    p.add_argument("--out", help="write the solution here instead of stdout")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("generate", help="write a random heterogeneous Gaussian potential set")
    p.add_argument("--num-clients", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-spread", type=float, default=1.0)
    p.add_argument("--condition-number", type=float, default=10.0)
    p.add_argument("--n-terms", type=int, default=1)
    p.add_argument("--term-spread", type=float, default=1.0)
    p.add_argument("--out", help="write the set here instead of stdout")
    p.set_defaults(func=cmd_generate)
    return parser


def _fail(doc, code):
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except FedLangevinError as exc:
        doc = exc.to_dict()
        return _fail(doc, EXIT_CODES.get(doc["error"], 1))
    except OSError as exc:
        return _fail({"error": "io_error", "message": str(exc)}, EXIT_CODES["io_error"])
    except Exception as exc:  # noqa: BLE001 - report anything else as JSON too
        log.debug("unexpected failure", exc_info=True)
        return _fail({"error": "internal_error", "message": f"{type(exc).__name__}: {exc}"}, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
