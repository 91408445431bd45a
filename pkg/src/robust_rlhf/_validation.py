"""Small input-checking helpers shared across modules."""
from __future__ import annotations

import numbers

import numpy as np


def as_generator(seed) -> np.random.Generator:
    """Turn None, an int, a seed sequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_epsilon(epsilon, *, upper=0.5, name="epsilon") -> float:
    if not isinstance(epsilon, numbers.Real) or not np.isfinite(epsilon):
        raise ValueError(f"{name} must be a finite real number, got {epsilon!r}")
    epsilon = float(epsilon)
    if epsilon < 0 or epsilon >= upper:
        raise ValueError(f"{name} must lie in [0, {upper}), got {epsilon}")
    return epsilon


def check_delta(delta) -> float:
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return delta


def check_positive(value, name) -> float:
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_labels(o) -> np.ndarray:
    o = np.asarray(o)
    if o.ndim != 1:
        raise ValueError("labels must be a 1-d array")
    if not np.all(np.isin(o, (-1, 1))):
        raise ValueError("labels must take values in {+1, -1}")
    return o.astype(float)


def check_theta(theta, H: int, d: int) -> np.ndarray:
    """Return reward parameters as an (H, d) array; flat (H*d,) input is accepted."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape == (H * d,):
        theta = theta.reshape(H, d)
    if theta.shape != (H, d):
        raise ValueError(f"theta must have shape ({H}, {d}) or ({H * d},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return theta


def project_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the centred ball of the given radius."""
    norm = np.linalg.norm(x)
    if norm <= radius:
        return x
    return x * (radius / norm)
