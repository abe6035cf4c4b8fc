"""Small input-validation helpers used across the package."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from .errors import ValidationError

Vec3 = tuple[float, float, float]


def check_vec3(value, name: str) -> Vec3:
    """Coerce a length-3 numeric sequence to a float tuple."""
    try:
        x, y, z = value
        return (float(x), float(y), float(z))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} must be a 3-vector of numbers, got {value!r}") from exc


def check_bbox(bbox_min: Vec3, bbox_max: Vec3, name: str) -> None:
    if any(lo > hi for lo, hi in zip(bbox_min, bbox_max)):
        raise ValidationError(f"{name}: bbox_min {bbox_min} exceeds bbox_max {bbox_max}")


def check_inside(point: Vec3, bbox_min: Vec3, bbox_max: Vec3) -> bool:
    return all(lo <= p <= hi for p, lo, hi in zip(point, bbox_min, bbox_max))


def check_probabilities(values: Sequence[float], name: str, tol: float = 1e-6) -> np.ndarray:
    """Validate a probability vector: nonnegative entries summing to 1 within tol."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a nonempty 1-d probability vector")
    if np.any(arr < 0):
        raise ValidationError(f"{name} contains a negative probability: min={arr.min()}")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"{name} sums to {total}, expected 1 within {tol}")
    return arr


def as_distribution(dist, name: str = "distribution", tol: float = 1e-6):
    """Accept a mapping label->p or a plain sequence; return (labels, probs array).

    labels is None when a bare sequence is given.
    """
    if isinstance(dist, Mapping):
        labels = list(dist.keys())
        probs = check_probabilities([dist[k] for k in labels], name, tol)
        return labels, probs
    return None, check_probabilities(dist, name, tol)


def check_nonempty(seq, name: str):
    if len(seq) == 0:
        raise ValidationError(f"{name} must be nonempty")
    return seq


def check_choice(value: str, allowed: Sequence[str], name: str) -> str:
    if value not in allowed:
        raise ValidationError(f"{name} must be one of {list(allowed)}, got {value!r}")
    return value


def check_positive(value, name: str):
    if value <= 0:
        raise ValidationError(f"{name} must be positive, got {value}")
    return value


def check_nonnegative(value, name: str):
    if value < 0:
        raise ValidationError(f"{name} must be nonnegative, got {value}")
    return value
