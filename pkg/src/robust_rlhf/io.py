"""Serialization: MDP JSON documents, preference datasets as JSON lines and
YAML experiment configs.

MDP document::

    {"H": 3, "S": 4, "A": 2, "d": 4,
     "rho": [...S],
     "features": [[...d] for every (s, a), row index s * A + a],
     "mu": [[[...d] for every s] for every h],
     "theta_star": [[...d] for every h]}

Dataset line::

    {"tau0": {"states": [...H + 1], "actions": [...H]},
     "tau1": {"states": [...H + 1], "actions": [...H]},
     "o": 1, "corrupted": false}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .contamination import ATTACK_ALIASES
from .mdp import LinearMdp, validate
from .pipelines import ORACLES, PIPELINES
from .preferences import PreferenceDataset

__all__ = [
    "mdp_to_dict",
    "mdp_from_dict",
    "save_mdp",
    "load_mdp",
    "save_dataset",
    "load_dataset",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "load_config",
]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


def mdp_to_dict(mdp: LinearMdp) -> dict:
    return {
        "H": mdp.H,
        "S": mdp.S,
        "A": mdp.A,
        "d": mdp.d,
        "rho": mdp.rho.tolist(),
        "features": mdp.features.reshape(mdp.S * mdp.A, mdp.d).tolist(),
        "mu": mdp.mu.tolist(),
        "theta_star": mdp.theta_star.tolist(),
    }


def mdp_from_dict(doc: dict, *, check: bool = True) -> LinearMdp:
    missing = [k for k in ("H", "S", "A", "d", "rho", "features", "mu", "theta_star") if k not in doc]
    if missing:
        raise ValueError(f"MDP document lacks {missing}")
    S, A, d = int(doc["S"]), int(doc["A"]), int(doc["d"])
    features = np.asarray(doc["features"], dtype=float)
    if features.shape != (S * A, d):
        raise ValueError(f"features must be a {S * A} x {d} table")
    mdp = LinearMdp(doc["rho"], features.reshape(S, A, d), doc["mu"], doc["theta_star"])
    if mdp.H != int(doc["H"]):
        raise ValueError("H disagrees with the length of mu")
    if check:
        problems = validate(mdp)
        if problems:
            raise ValueError("invalid MDP: " + "; ".join(problems[:5]))
    return mdp


def save_mdp(mdp: LinearMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp)) + "\n")


def load_mdp(path, *, check: bool = True) -> LinearMdp:
    return mdp_from_dict(json.loads(Path(path).read_text()), check=check)


def save_dataset(dataset: PreferenceDataset, path) -> None:
    with open(path, "w") as fh:
        for n in range(dataset.N):
            row = {
                "tau0": {"states": dataset.states0[n].tolist(), "actions": dataset.actions0[n].tolist()},
                "tau1": {"states": dataset.states1[n].tolist(), "actions": dataset.actions1[n].tolist()},
                "o": int(dataset.labels[n]),
                "corrupted": bool(dataset.corrupted[n]),
            }
            fh.write(json.dumps(row) + "\n")


def load_dataset(path, features) -> PreferenceDataset:
    """Read a JSON-lines dataset; ``features`` is the (S, A, d) table it indexes."""
    cols = {k: [] for k in ("s0", "a0", "s1", "a1", "o", "c")}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                cols["s0"].append(row["tau0"]["states"])
                cols["a0"].append(row["tau0"]["actions"])
                cols["s1"].append(row["tau1"]["states"])
                cols["a1"].append(row["tau1"]["actions"])
                cols["o"].append(row["o"])
                cols["c"].append(row.get("corrupted", False))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed preference record ({exc})") from exc
    return PreferenceDataset(features, cols["s0"], cols["a0"], cols["s1"], cols["a1"], cols["o"], cols["c"])


# -- experiment configs ----------------------------------------------------------

POLICY_KINDS = ("uniform", "optimal", "epsilon-greedy", "random")


@dataclass
class ExperimentConfig:
    """Parsed experiment file. See the README for the accepted keys."""

    mdp: dict = field(default_factory=lambda: {"S": 4, "A": 2, "d": 4, "H": 3, "seed": 0})
    behavior: dict = field(default_factory=lambda: {"mu0": {"kind": "epsilon-greedy", "explore": 0.5}, "mu1": {"kind": "uniform"}})
    N: int = 2000
    epsilon_grid: list = field(default_factory=lambda: [0.0])
    attack: str = "flip-margin"
    pipelines: list = field(default_factory=lambda: ["uniform"])
    oracle: str = "exact"
    delta: float = 0.1
    seeds: list = field(default_factory=lambda: [0])
    output: str = "results.csv"
    pipeline_params: dict = field(default_factory=dict)
    oracle_params: dict = field(default_factory=dict)
    threads: int | None = None
    source: str | None = None

    def to_dict(self) -> dict:
        return {
            "mdp": self.mdp,
            "behavior": self.behavior,
            "N": self.N,
            "epsilon_grid": self.epsilon_grid,
            "attack": self.attack,
            "pipelines": self.pipelines,
            "oracle": self.oracle,
            "delta": self.delta,
            "seeds": self.seeds,
            "output": self.output,
            "pipeline_params": self.pipeline_params,
            "oracle_params": self.oracle_params,
            "threads": self.threads,
        }


_KEYS = {
    "mdp", "behavior", "N", "epsilon_grid", "attack", "pipeline", "pipelines", "oracle",
    "delta", "seeds", "output", "pipeline_params", "oracle_params", "threads",
}


def _fail(field_name, message):
    raise ConfigError(f"field '{field_name}': {message}")


def _check_policy(name, spec):
    if not isinstance(spec, dict) or spec.get("kind") not in POLICY_KINDS:
        _fail(f"behavior.{name}", f"needs a 'kind' among {POLICY_KINDS}")
    if spec["kind"] == "epsilon-greedy" and not 0.0 <= float(spec.get("explore", 0.5)) <= 1.0:
        _fail(f"behavior.{name}.explore", "must lie in [0, 1]")


def parse_config(doc, source: str | None = None) -> ExperimentConfig:
    """Validate a parsed YAML mapping and build an :class:`ExperimentConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("the config must be a mapping at top level")
    unknown = sorted(set(doc) - _KEYS)
    if unknown:
        _fail(unknown[0], "unknown key")
    cfg = ExperimentConfig(source=source)
    if "mdp" in doc:
        m = doc["mdp"]
        if not isinstance(m, dict):
            _fail("mdp", "must be a mapping with either 'file' or generator sizes")
        if "file" not in m:
            for k in ("S", "A", "d", "H"):
                if k not in m:
                    _fail(f"mdp.{k}", "is required for generated instances")
                if int(m[k]) != m[k] or m[k] < 1:
                    _fail(f"mdp.{k}", "must be a positive integer")
            norm = m.get("theta_norm")
            if norm is not None and (not isinstance(norm, (int, float)) or not 0 < norm <= m["d"] ** 0.5):
                _fail("mdp.theta_norm", "must lie in (0, sqrt(d)]")
        cfg.mdp = dict(m)
    if "behavior" in doc:
        b = doc["behavior"]
        if not isinstance(b, dict):
            _fail("behavior", "must be a mapping with mu0 and mu1")
        cfg.behavior = {**cfg.behavior, **b}
    for name in ("mu0", "mu1"):
        _check_policy(name, cfg.behavior.get(name))
    if "N" in doc:
        if not isinstance(doc["N"], int) or doc["N"] < 4:
            _fail("N", "must be an integer of at least 4")
        cfg.N = doc["N"]
    if "epsilon_grid" in doc:
        grid = doc["epsilon_grid"]
        if not isinstance(grid, list) or not grid:
            _fail("epsilon_grid", "must be a nonempty list")
        for e in grid:
            if not isinstance(e, (int, float)) or not 0.0 <= e < 0.5:
                _fail("epsilon_grid", f"value {e!r} is outside [0, 0.5)")
        cfg.epsilon_grid = [float(e) for e in grid]
    if "attack" in doc:
        if doc["attack"] not in ATTACK_ALIASES:
            _fail("attack", f"must be one of {sorted(ATTACK_ALIASES)}")
        cfg.attack = doc["attack"]
    if "pipeline" in doc and "pipelines" in doc:
        _fail("pipeline", "give either 'pipeline' or 'pipelines', not both")
    pipes = doc.get("pipelines", doc.get("pipeline", cfg.pipelines))
    pipes = [pipes] if isinstance(pipes, str) else pipes
    if not isinstance(pipes, list) or not pipes:
        _fail("pipelines", "must be a pipeline name or a nonempty list")
    for p in pipes:
        if p not in PIPELINES:
            _fail("pipelines", f"unknown pipeline {p!r}; choose from {PIPELINES}")
    cfg.pipelines = list(pipes)
    if "oracle" in doc:
        if doc["oracle"] not in ORACLES:
            _fail("oracle", f"must be one of {ORACLES}")
        cfg.oracle = doc["oracle"]
    if "delta" in doc:
        if not isinstance(doc["delta"], (int, float)) or not 0.0 < doc["delta"] < 1.0:
            _fail("delta", "must lie in (0, 1)")
        cfg.delta = float(doc["delta"])
    if "seeds" in doc:
        seeds = doc["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            _fail("seeds", "must be a nonempty list of nonnegative integers")
        cfg.seeds = list(seeds)
    if "output" in doc:
        cfg.output = str(doc["output"])
    for key in ("pipeline_params", "oracle_params"):
        if key in doc:
            if not isinstance(doc[key], dict):
                _fail(key, "must be a mapping")
            setattr(cfg, key, dict(doc[key]))
    if "threads" in doc and doc["threads"] is not None:
        if not isinstance(doc["threads"], int) or doc["threads"] < 1:
            _fail("threads", "must be a positive integer")
        cfg.threads = doc["threads"]
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment file.

    Syntax errors are reported with their line number, semantic errors with the
    field name.
    """
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ConfigError(f"{path}: YAML syntax error at {where}") from exc
    try:
        return parse_config(doc, str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
