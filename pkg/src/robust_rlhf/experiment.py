"""Experiment sweeps over (epsilon, seed) cells with deterministic CSV output,
plus the coverage report used by the ``diagnose`` command.
"""
from __future__ import annotations

import csv
import io as _io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .contamination import AttackSpec, corrupt
from .io import ExperimentConfig, load_mdp
from .mdp import optimal_value, random_linear_mdp
from .pipelines import PipelineConfig, run_pipeline, suboptimality_gap
from .policy import epsilon_greedy, random_policy, uniform_policy
from .preferences import coverage_diagnostics, sample_dataset

__all__ = [
    "THREADS_ENV",
    "RECORD_FIELDS",
    "ExperimentRecord",
    "derive_seed",
    "build_instance",
    "run_cell",
    "run_experiment",
    "format_csv",
    "rate_bounds",
    "diagnose",
    "default_threads",
]

logger = logging.getLogger(__name__)

THREADS_ENV = "ROBUST_RLHF_THREADS"

RECORD_FIELDS = (
    "epsilon",
    "attack",
    "pipeline",
    "oracle",
    "seed",
    "suboptimality_gap",
    "theta_l2_error",
    "confidence_set_contains_true",
    "oracle_calls",
    "error",
)

# phase tags for seed derivation
PHASE_MDP, PHASE_DATA, PHASE_ATTACK, PHASE_PIPELINE, PHASE_POLICY = 1, 2, 3, 4, 5


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple such as ``(seed, cell, phase)``."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


@dataclass
class ExperimentRecord:
    epsilon: float
    attack: str
    pipeline: str
    oracle: str
    seed: int
    suboptimality_gap: float | None = None
    theta_l2_error: float | None = None
    confidence_set_contains_true: bool | None = None
    oracle_calls: int | None = None
    error: str = ""
    wall_time_ms: float = 0.0

    def row(self) -> list[str]:
        out = []
        for name in RECORD_FIELDS:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif isinstance(v, bool):
                out.append("true" if v else "false")
            elif isinstance(v, float):
                out.append(f"{v:.10g}")
            else:
                out.append(str(v))
        return out


def _make_policy(spec: dict, mdp, seed: int, name: str):
    kind = spec["kind"]
    if kind == "uniform":
        return uniform_policy(mdp.H, mdp.S, mdp.A)
    optimal = optimal_value(mdp, mdp.theta_star)[1]
    if kind == "optimal":
        return optimal
    if kind == "epsilon-greedy":
        return epsilon_greedy(optimal, float(spec.get("explore", 0.5)))
    phase = 0 if name == "mu0" else 1
    rng = np.random.default_rng(derive_seed(int(spec.get("seed", seed)), phase, PHASE_POLICY))
    return random_policy(mdp.H, mdp.S, mdp.A, rng, float(spec.get("concentration", 1.0)))


def build_instance(cfg: ExperimentConfig):
    """Return ``(mdp, mu0, mu1)`` described by the config."""
    m = cfg.mdp
    if "file" in m:
        path = Path(m["file"])
        if not path.is_absolute() and cfg.source is not None:
            path = Path(cfg.source).parent / path
        mdp = load_mdp(path)
    else:
        seed = int(m.get("seed", 0))
        mdp = random_linear_mdp(
            int(m["S"]),
            int(m["A"]),
            int(m["d"]),
            H=int(m["H"]),
            rng=np.random.default_rng(derive_seed(seed, 0, PHASE_MDP)),
            kind=m.get("kind", "simplex"),
            identifiable=bool(m.get("identifiable", True)),
            theta_norm=None if m.get("theta_norm") is None else float(m["theta_norm"]),
        )
    seed = int(m.get("seed", 0))
    mu0 = _make_policy(cfg.behavior["mu0"], mdp, seed, "mu0")
    mu1 = _make_policy(cfg.behavior["mu1"], mdp, seed, "mu1")
    return mdp, mu0, mu1


def _cells(cfg: ExperimentConfig):
    # a cell is one (epsilon, seed) pair; all pipelines in a cell share its data and split
    cells = []
    for i, eps in enumerate(cfg.epsilon_grid):
        for j, seed in enumerate(cfg.seeds):
            cell = i * len(cfg.seeds) + j
            for pipe in cfg.pipelines:
                cells.append((cell, eps, seed, pipe))
    return cells


def run_cell(instance, cfg: ExperimentConfig, cell: int, epsilon: float, seed: int, pipeline: str) -> ExperimentRecord:
    """Run one pipeline on one (epsilon, seed) cell; failures become an error record."""
    mdp, mu0, mu1 = instance
    record = ExperimentRecord(epsilon, cfg.attack, pipeline, cfg.oracle, seed)
    start = time.perf_counter()
    try:
        # the clean sample depends on the seed only, so epsilon curves are paired
        data = sample_dataset(mdp, mu0, mu1, cfg.N, np.random.default_rng(derive_seed(seed, 0, PHASE_DATA)))
        data = corrupt(data, AttackSpec(epsilon, cfg.attack, seed=derive_seed(seed, cell, PHASE_ATTACK)), mdp.theta_star)
        params = {k: v for k, v in cfg.pipeline_params.items() if k not in ("pipeline", "epsilon", "oracle", "seed", "delta")}
        pcfg = PipelineConfig(
            pipeline=pipeline,
            epsilon=epsilon,
            delta=cfg.delta,
            oracle=cfg.oracle,
            seed=derive_seed(seed, cell, PHASE_PIPELINE),
            oracle_params=dict(cfg.oracle_params),
            **params,
        )
        result = run_pipeline(data, pcfg, mdp=mdp)
        record.suboptimality_gap = suboptimality_gap(mdp, result.policy)
        record.theta_l2_error = float(np.linalg.norm(result.reward_estimate.theta_hat - mdp.theta_star.reshape(-1)))
        if result.confidence_set is not None:
            record.confidence_set_contains_true = bool(result.confidence_set.contains(mdp.theta_star.reshape(-1)))
        record.oracle_calls = int(result.oracle_calls)
    except Exception as exc:  # isolate per-cell failures
        logger.warning("cell %d (%s, eps=%g, seed=%d) failed: %s", cell, pipeline, epsilon, seed, exc)
        record.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    record.wall_time_ms = (time.perf_counter() - start) * 1000.0
    return record


def format_csv(records) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out=None, threads: int | None = None) -> list[ExperimentRecord]:
    """Execute every cell and write ``out`` (CSV) plus ``out`` with a ``.json`` suffix.

    Cells run on a thread pool of size ``threads`` (default: config value, then
    the ``ROBUST_RLHF_THREADS`` variable, then 1); rows are written in cell order
    regardless of completion order, so identical configs give identical CSV files.
    """
    from . import __version__

    n_threads = threads or cfg.threads or default_threads()
    out = Path(out if out is not None else cfg.output)
    started = datetime.now(timezone.utc).isoformat()
    instance = build_instance(cfg)
    cells = _cells(cfg)
    if n_threads == 1:
        records = [run_cell(instance, cfg, *c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            records = list(pool.map(lambda c: run_cell(instance, cfg, *c), cells))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_csv(records))
    sidecar = {
        "version": __version__,
        "config": cfg.to_dict(),
        "threads": n_threads,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_time_ms": [round(r.wall_time_ms, 3) for r in records],
        "failed_cells": sum(1 for r in records if r.error),
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return records


def rate_bounds(diag, H: int, d: int, epsilon: float) -> dict:
    """Order-of-magnitude suboptimality and oracle-call rates with all constants set to 1.

    ``uniform`` uses ``xi`` (which is 0 for any linear MDP whose transitions are
    normalised) and ``uniform_rowspace`` the smallest nonzero eigenvalue instead.
    """
    eps = float(epsilon)

    def over(x, den):
        return math.inf if den <= 0 else x / den

    kappa, alpha, nu = diag.kappa, diag.alpha, diag.nu
    return {
        "epsilon": eps,
        "uniform": over((H**3 + math.sqrt(H * d)) * eps, diag.xi),
        "uniform_rowspace": over((H**3 + math.sqrt(H * d)) * eps, diag.xi_rowspace),
        "condition_number": H**2 * d * kappa * math.sqrt(alpha * eps) + H**1.25 * d**0.75 * (alpha * eps) ** 0.25,
        "first_order": nu * kappa * math.sqrt(eps) * H**2 * d**1.5,
        "calls_uniform": 1,
        "calls_condition_number": over(H**1.5 * d**5, eps**3),
        "calls_first_order": over(1.0, eps * nu),
    }


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def diagnose(cfg: ExperimentConfig) -> dict:
    """Coverage constants of the configured instance and the rate bounds at each grid epsilon."""
    mdp, mu0, mu1 = build_instance(cfg)
    diag = coverage_diagnostics(mdp, mu0, mu1, mu_ref=mu0, rng=np.random.default_rng(derive_seed(0, 0, PHASE_DATA)))
    report = {
        "instance": {"H": mdp.H, "S": mdp.S, "A": mdp.A, "d": mdp.d},
        "coverage": {k: v for k, v in diag.as_dict().items() if k not in ("sigma_diff", "sigma_avg")},
        "xi_at_least_5eps": {f"{e:g}": bool(diag.xi >= 5 * e) for e in cfg.epsilon_grid},
        "xi_rowspace_at_least_5eps": {f"{e:g}": bool(diag.xi_rowspace >= 5 * e) for e in cfg.epsilon_grid},
        "bounds": [rate_bounds(diag, mdp.H, mdp.d, e) for e in cfg.epsilon_grid],
    }
    return _jsonable(report)
