"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from numbers import Integral
from typing import Optional

import numpy as np
from sklearn.utils import check_array


def check_vectors(X, dim: Optional[int] = None, name: str = "X") -> np.ndarray:
    """Return ``X`` as a finite, C-contiguous float32 matrix."""
    arr = check_array(X, dtype=np.float32, order="C", ensure_all_finite=True,
                      input_name=name)
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} has {arr.shape[1]} features, index expects {dim}")
    return arr


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)
