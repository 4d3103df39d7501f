"""Coordination matrices that replace loop dynamics ``A`` by ``C A``.

The gradient-flow choice ``C = -A^T W`` turns the weighted squared error
``V = sum_j w_j (f_j - target_j)^2`` into a Lyapunov function, and each loop
can evaluate its own component of ``-grad V`` from neighbor data only.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_square, as_vector
from .model import LinearSystem, SingularMatrixError, VectorField
from .stability import eigen_stability

PROVENANCES = ("gradient_flow", "inverse", "custom")


@dataclass(frozen=True)
class Coordinator:
    C: np.ndarray
    provenance: str = "custom"
    weights: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "gradient_flow":
            if self.weights is None or np.any(self.weights <= 0):
                raise ValueError("gradient_flow coordinators need strictly positive weights")

    @property
    def dim(self):
        return self.C.shape[0]


def _check_weights(w, dim):
    w = np.ones(dim) if w is None else as_vector(w, "weights", dim)
    if np.any(w <= 0):
        raise ValueError(f"weights must be strictly positive, got {w}")
    return w


def synthesize_gradient_coordinator(A, w=None):
    """``C = -A^T diag(w)``; the coordinated dynamics are ``-A^T W A (theta - theta*)``."""
    A = as_square(A, "A")
    w = _check_weights(w, A.shape[0])
    C = -A.T * w[None, :]
    return Coordinator(C, "gradient_flow", w, A.copy())


def inverse_coordinator(A):
    """``C = A^{-1}``; stabilizing but dense, so not implementable locally."""
    A = as_square(A, "A")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrixError(f"A is not invertible (cond={cond:.3e})", cond=cond)
    return Coordinator(np.linalg.inv(A), "inverse", None, A.copy())


def custom_coordinator(C):
    return Coordinator(as_square(C, "C"), "custom")


def coordinated_field(coord: Coordinator, sys: LinearSystem):
    """Field ``theta -> C (A theta + b)``."""
    if coord.dim != sys.dim:
        raise ValueError(f"coordinator has dimension {coord.dim}, system {sys.dim}")
    C, A, b = coord.C, sys.A, sys.b
    return VectorField(sys.dim, lambda theta: C @ (A @ theta + b), name="coordinated")


def coordinate_field(C, field: VectorField):
    """Coordinate an arbitrary (possibly nonlinear) field: ``theta -> C F(theta)``."""
    C = as_square(C, "C")
    if C.shape[0] != field.dim:
        raise ValueError(f"C has dimension {C.shape[0]}, field {field.dim}")
    return VectorField(field.dim, lambda theta: C @ field(theta), name=f"coordinated {field.name}")


def coordinated_kpi(coord, kpi_values):
    """Indicators seen by each loop after mixing: ``c = C f``."""
    C = coord.C if isinstance(coord, Coordinator) else as_square(coord, "C")
    return C @ as_vector(kpi_values, "kpi_values", C.shape[0])


def distributed_update_direction(i, partials, residuals, weights=None):
    """Loop ``i``'s share of ``-grad V`` computed from neighbor data only.

    Parameters
    ----------
    i : int
        Loop index (used in error messages; the sums run over the keys).
    partials : mapping
        ``j -> d f_j / d theta_i`` for every neighbor ``j`` of ``i``.
    residuals : mapping
        ``j -> f_j(theta) - target_j``.
    weights : mapping, optional
        ``j -> w_j``; all ones when omitted.

    Returns
    -------
    float
        ``-sum_j 2 w_j (d f_j / d theta_i) (f_j - target_j)``.
    """
    keys = set(partials)
    if weights is None:
        weights = dict.fromkeys(keys, 1.0)
    if set(residuals) != keys or set(weights) != keys:
        raise KeyError(f"loop {i}: partials, residuals and weights must share the neighbor set")
    total = 0.0
    for j in sorted(keys):
        w = weights[j]
        if w <= 0:
            raise ValueError(f"weight of loop {j} must be > 0")
        total += 2.0 * w * partials[j] * residuals[j]
    return -total


def distributed_direction_vector(J, residuals, weights=None, graph=None):
    """Assemble every loop's distributed direction into one vector.

    ``J[j, i] = d f_j / d theta_i``. With ``graph`` given, loop ``i`` only
    sums over ``graph[i]``.
    """
    J = as_square(J, "J")
    n = J.shape[0]
    r = as_vector(residuals, "residuals", n)
    w = _check_weights(weights, n)
    out = np.empty(n)
    for i in range(n):
        keys = range(n) if graph is None else graph[i]
        out[i] = distributed_update_direction(
            i,
            {j: J[j, i] for j in keys},
            {j: r[j] for j in keys},
            {j: w[j] for j in keys},
        )
    return out


def verify_coordinated(coord: Coordinator, A=None):
    """Spectrum test of the coordinated matrix ``C A``."""
    A = coord.A if A is None else as_square(A, "A")
    if A is None:
        raise ValueError("no matrix A given and none stored on the coordinator")
    if A.shape != coord.C.shape:
        raise ValueError(f"C has shape {coord.C.shape}, A has {A.shape}")
    return eigen_stability(coord.C @ A)


class GradientCoordinator(BaseEstimator, TransformerMixin):
    """Estimator wrapper around the gradient-flow coordinator.

    ``fit(A)`` builds ``C = -A^T W``; ``transform(F)`` maps rows of raw
    indicator values (or residuals) to the coordinated indicators ``F C^T``.

    Parameters
    ----------
    weights : array-like of shape (n_loops,), default=None
        Positive loop weights. ``None`` means all ones.
    """

    def __init__(self, weights=None):
        self.weights = weights

    def fit(self, A, y=None):
        A = check_array(A)
        self.coordinator_ = synthesize_gradient_coordinator(A, self.weights)
        self.n_features_in_ = A.shape[0]
        return self

    @property
    def coef_(self):
        check_is_fitted(self)
        return self.coordinator_.C

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X @ self.coordinator_.C.T

    def verify(self):
        check_is_fitted(self)
        return verify_coordinated(self.coordinator_)
