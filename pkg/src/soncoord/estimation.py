"""Identify an affine model ``F(theta) ~ A theta + b`` from field evaluations."""

import json
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import NumericalError, as_square, as_vector
from .model import LinearSystem, VectorField


class RankDeficiencyError(NumericalError):
    def __init__(self, message, directions):
        super().__init__(message)
        self.directions = directions


def _evaluate(oracle, theta):
    return np.asarray(oracle(theta), dtype=float).reshape(-1)


def default_steps(theta):
    theta = np.asarray(theta, dtype=float)
    return 1e-3 * np.maximum(1.0, np.abs(theta))


def jacobian_fd(oracle, theta, delta=None, n_avg=1):
    """Central-difference Jacobian ``J[j, i] ~ d F_j / d theta_i``.

    Each column is the mean of ``n_avg`` central differences, so noisy
    oracles (any callable) are averaged down.
    """
    theta = as_vector(theta, "theta")
    n = theta.shape[0]
    delta = default_steps(theta) if delta is None else np.broadcast_to(
        np.asarray(delta, dtype=float), (n,))
    if np.any(delta <= 0):
        raise ValueError("finite-difference steps must be > 0")
    if n_avg < 1:
        raise ValueError("n_avg must be >= 1")
    columns = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = delta[i]
        acc = 0.0
        for _ in range(n_avg):
            acc = acc + (_evaluate(oracle, theta + e) - _evaluate(oracle, theta - e)) / (2.0 * delta[i])
        columns.append(acc / n_avg)
    return np.column_stack(columns)


def offset_estimate(oracle, n_avg=1, dim=None):
    """Mean of ``n_avg`` evaluations at the origin (the offset ``b``)."""
    if dim is None:
        dim = oracle.dim
    zero = np.zeros(dim)
    return sum(_evaluate(oracle, zero) for _ in range(n_avg)) / n_avg


@dataclass(frozen=True)
class SampleSet:
    theta: np.ndarray  # (n, I)
    y: np.ndarray  # (n, I)

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if theta.shape[0] != y.shape[0]:
            raise ValueError("theta and y must have the same number of rows")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_array(cls, data):
        """Split ``[theta_1..theta_I, y_1..y_I]`` columns."""
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[1] % 2:
            raise ValueError("sample table needs an even number of columns")
        half = data.shape[1] // 2
        return cls(data[:, :half], data[:, half:])

    def columns(self):
        n = self.theta.shape[1]
        return [f"theta_{k + 1}" for k in range(n)] + [f"y_{k + 1}" for k in range(self.y.shape[1])]


class AffineFieldRegressor(BaseEstimator, RegressorMixin):
    """Least-squares fit of ``y = A theta + b``, one output row at a time.

    After ``fit``, ``coef_`` is ``A`` (outputs x inputs), ``intercept_`` is
    ``b`` and ``residual_`` is the RMS residual.

    Parameters
    ----------
    rank_rtol : float, default=1e-10
        Singular values of the design ``[theta | 1]`` below
        ``rank_rtol * s_max`` count as rank deficiency.
    """

    def __init__(self, rank_rtol=1e-10):
        self.rank_rtol = rank_rtol

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        design = np.column_stack([X, np.ones(X.shape[0])])
        _, s, vt = np.linalg.svd(design, full_matrices=True)
        s_full = np.zeros(design.shape[1])
        s_full[: s.shape[0]] = s
        deficient = s_full <= self.rank_rtol * s_full.max()
        if np.any(deficient):
            directions = vt[deficient]
            raise RankDeficiencyError(
                f"design [theta | 1] is rank deficient along {directions.shape[0]} direction(s): "
                + "; ".join(np.array2string(d, precision=3) for d in directions),
                directions,
            )
        Q, R = np.linalg.qr(design)
        coef = np.linalg.solve(R, Q.T @ y)
        y2 = y.reshape(X.shape[0], -1)
        coef = coef.reshape(design.shape[1], -1)
        self.coef_ = coef[:-1].T
        self.intercept_ = coef[-1]
        self.residual_ = float(np.sqrt(np.mean((design @ coef - y2) ** 2)))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X)
        return X @ self.coef_.T + self.intercept_

    def to_linear_system(self):
        check_is_fitted(self)
        return LinearSystem.from_matrices(self.coef_, self.intercept_)


def least_squares_fit(samples: SampleSet):
    """Fit ``(A, b)`` to samples; returns ``{"A", "b", "residual"}``."""
    reg = AffineFieldRegressor().fit(samples.theta, samples.y)
    return {"A": reg.coef_, "b": reg.intercept_, "residual": reg.residual_}


def linearize(oracle, theta_star, delta=None, n_avg=1, dim=None, warn_tol=1e-2):
    """Linear model around an equilibrium: ``A = J F(theta*)``, ``b = -A theta*``."""
    theta_star = as_vector(theta_star, "theta_star")
    residual = np.linalg.norm(_evaluate(oracle, theta_star))
    if residual > warn_tol:
        warnings.warn(f"||F(theta*)|| = {residual:.3g} exceeds {warn_tol}; theta* may not be an equilibrium")
    A = jacobian_fd(oracle, theta_star, delta, n_avg)
    return LinearSystem(A, -A @ theta_star, theta_star.copy())


class ConditionDB:
    """Per-operating-condition store of fitted ``(A, b)`` pairs.

    Persisted as one JSON document ``{label: {A, b, timestamp, sample_count}}``.
    Single writer, many readers.
    """

    def __init__(self, entries=None):
        self._entries = dict(entries or {})

    def __contains__(self, label):
        return label in self._entries

    def __len__(self):
        return len(self._entries)

    def labels(self):
        return sorted(self._entries)

    def put(self, label, A, b, sample_count=0, timestamp=None):
        if not label:
            raise ValueError("label must be non-empty")
        A = as_square(A, "A")
        b = as_vector(b, "b", A.shape[0])
        if timestamp is None:
            timestamp = datetime.now(timezone.utc).isoformat()
        self._entries[label] = {
            "A": A.tolist(),
            "b": b.tolist(),
            "timestamp": timestamp,
            "sample_count": int(sample_count),
        }
        return self

    def get(self, label):
        if label not in self._entries:
            raise KeyError(f"no entry for condition {label!r}")
        e = self._entries[label]
        return {
            "A": np.array(e["A"], dtype=float),
            "b": np.array(e["b"], dtype=float),
            "timestamp": e["timestamp"],
            "sample_count": e["sample_count"],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self._entries, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            entries = json.load(fh)
        db = cls()
        for label, e in entries.items():
            db.put(label, e["A"], e["b"], e.get("sample_count", 0), e["timestamp"])
        return db


def db_put(db, label, A, b, sample_count=0):
    return db.put(label, A, b, sample_count)


def db_get(db, label):
    return db.get(label)
