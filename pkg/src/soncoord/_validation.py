"""Input validation helpers shared by the public functions."""

import numpy as np


class NumericalError(ArithmeticError):
    """A numerical routine could not return a trustworthy result."""


def as_vector(x, name="vector", dim=None):
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {dim}")
    return v


def as_square(a, name="matrix"):
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if m.shape[0] < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def check_positive(x, name):
    if not x > 0:
        raise ValueError(f"{name} must be > 0, got {x}")
    return x


def check_index(i, dim):
    if not 0 <= i < dim:
        raise IndexError(f"index {i} out of range for dimension {dim}")
    return int(i)
