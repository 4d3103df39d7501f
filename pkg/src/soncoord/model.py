"""Vector fields over loop parameters and their linear specialization.

A set of I control loops is described by an update direction ``F(theta)``:
loop ``i`` moves its scalar parameter ``theta_i`` proportionally to
``F_i(theta)``. Everything else in the package consumes the
:class:`VectorField` and :class:`LinearSystem` types defined here.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import NumericalError, as_square, as_vector, check_index

#: Reject a matrix as singular when its reciprocal condition number is below this.
RCOND_MIN = 1e-12


class SingularMatrixError(NumericalError):
    """Raised when a matrix that must be inverted is singular or ill-conditioned."""

    def __init__(self, message, cond=np.inf):
        super().__init__(message)
        self.cond = cond


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VectorField:
    """Deterministic map ``theta -> F(theta)`` on R^dim.

    Randomized indicators (Monte Carlo KPIs) must freeze their randomness
    before being wrapped, so that repeated calls return identical values.
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    name: str = "field"

    def __call__(self, theta):
        theta = as_vector(theta, "theta", self.dim)
        out = np.asarray(self.func(theta), dtype=float).reshape(-1)
        if out.shape[0] != self.dim:
            raise ValueError(
                f"{self.name} returned {out.shape[0]} components, expected {self.dim}"
            )
        return out

    def eval(self, theta):
        return self(theta)


@dataclass(frozen=True)
class LinearSystem:
    """Affine field ``F(theta) = A theta + b`` with equilibrium ``theta_star``.

    Build instances with :meth:`from_matrices`, which computes and checks the
    equilibrium.
    """

    A: np.ndarray
    b: np.ndarray
    theta_star: np.ndarray

    @classmethod
    def from_matrices(cls, A, b):
        A = as_square(A, "A")
        b = as_vector(b, "b", A.shape[0])
        star = _solve_equilibrium(A, b)
        return cls(_frozen(A), _frozen(b), _frozen(star))

    @property
    def dim(self):
        return self.A.shape[0]

    def field(self):
        return make_linear_field(self.A, self.b)


@dataclass(frozen=True)
class ZeroFindingSpec:
    """Indicators ``kpi(theta)`` (length I) and their target levels."""

    kpi: Callable[[np.ndarray], np.ndarray]
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "targets", _frozen(as_vector(self.targets, "targets")))


@dataclass(frozen=True)
class InteractionGraph:
    """``neighbors[i]`` holds every loop ``j`` whose indicator reacts to ``theta_i``."""

    neighbors: tuple
    tol: float

    def __len__(self):
        return len(self.neighbors)

    def __getitem__(self, i):
        return self.neighbors[i]


def make_linear_field(A, b):
    """Return the affine field ``theta -> A @ theta + b``."""
    A = _frozen(as_square(A, "A"))
    b = _frozen(as_vector(b, "b", A.shape[0]))
    return VectorField(A.shape[0], lambda theta: A @ theta + b, name="linear")


def _solve_equilibrium(A, b):
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_MIN:
        raise SingularMatrixError(
            f"A is singular or ill-conditioned (cond={cond:.3e}, limit {1 / RCOND_MIN:.0e})",
            cond=cond,
        )
    return -np.linalg.solve(A, b)


def equilibrium(sys_or_A, b=None):
    """Equilibrium ``-A^{-1} b`` of an affine field.

    Accepts either a :class:`LinearSystem` or the pair ``(A, b)``.

    Raises
    ------
    SingularMatrixError
        If ``1/cond(A)`` is below :data:`RCOND_MIN`; the condition number is
        attached as ``.cond``.
    """
    if isinstance(sys_or_A, LinearSystem):
        return sys_or_A.theta_star.copy()
    A = as_square(sys_or_A, "A")
    b = as_vector(b, "b", A.shape[0])
    return _solve_equilibrium(A, b)


def zero_finding_field(spec: ZeroFindingSpec, dim=None):
    """Field whose i-th component is ``kpi_i(theta) - target_i``."""
    targets = spec.targets
    dim = targets.shape[0] if dim is None else dim
    kpi = spec.kpi

    def func(theta):
        values = np.asarray(kpi(theta), dtype=float).reshape(-1)
        if values.shape != targets.shape:
            raise ValueError(f"kpi returned {values.shape[0]} values, expected {targets.shape[0]}")
        return values - targets

    return VectorField(dim, func, name="zero_finding")


def standalone_field(field: VectorField, i, frozen):
    """Loop ``i`` running alone: every other parameter is held at ``frozen``.

    Component ``i`` is ``F_i`` evaluated with ``theta_j = frozen_j`` for all
    ``j != i``; all other components are identically zero.
    """
    i = check_index(i, field.dim)
    frozen = _frozen(as_vector(frozen, "frozen", field.dim))

    def func(theta):
        point = frozen.copy()
        point[i] = theta[i]
        out = np.zeros(field.dim)
        out[i] = field(point)[i]
        return out

    return VectorField(field.dim, func, name=f"standalone[{i}]")


def interaction_graph(J, tol=None):
    """Neighbor sets from a Jacobian ``J[j, i] = d f_j / d theta_i``.

    ``j`` is a neighbor of ``i`` when ``|J[j, i]| > tol``. The default
    tolerance is ``1e-8 * max|J|``.
    """
    J = as_square(J, "J")
    if tol is None:
        tol = 1e-8 * float(np.max(np.abs(J)))
    if tol < 0:
        raise ValueError("tol must be >= 0")
    neighbors = tuple(
        frozenset(int(j) for j in np.flatnonzero(np.abs(J[:, i]) > tol))
        for i in range(J.shape[0])
    )
    return InteractionGraph(neighbors, float(tol))
