"""Small input checks shared by the estimators, trainer and CLI."""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

__all__ = [
    "NotFittedError",
    "check_choice",
    "check_int",
    "check_nonnegative",
    "check_path",
    "check_points",
    "check_positive",
]


def check_points(X) -> np.ndarray:
    """Coerce scalars, lists or (K, 1) arrays of x values to a finite 1-D float array."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"expected a single feature column of x values, got shape {arr.shape}")
        arr = arr[:, 0]
    return check_array(arr, ensure_2d=False, dtype=float)


def check_path(X) -> np.ndarray:
    xs = check_points(X)
    if np.any(np.diff(xs) <= 0):
        raise ValueError("path points must be strictly increasing")
    return xs


def check_choice(name: str, value, choices: Iterable) -> None:
    choices = tuple(choices)
    if value not in choices:
        raise ValueError(f"{name} must be one of {choices}, got {value!r}")


def check_int(name: str, value, minimum: int | None = None) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")


def check_positive(name: str, value) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


def check_nonnegative(name: str, value) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
        raise ValueError(f"{name} must be a non-negative finite number, got {value!r}")
