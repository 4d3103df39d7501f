"""Processor-sharing cell with logistic admission control.

Two loops share one cell: resource allocation moves the used fraction ``x``
to hold a smoothed outage target, admission control moves the blocking
threshold ``b`` to hold a transfer-time target. The number of active users
is a birth-death chain, so every indicator is a closed-form sum over its
stationary distribution.

Note the name clash: the blocking threshold ``b`` here is unrelated to the
offset ``b`` of a :class:`~soncoord.model.LinearSystem`.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from ._validation import NumericalError
from .model import VectorField
from .stability import eigen_stability, instability_det_2x2

TAIL_RTOL = 1e-14
N_START = 100
N_LIMIT = 1 << 20


@dataclass(frozen=True)
class QueueParams:
    """Arrival rate (users/s), mean file size (Mbit), peak rate and minimum rate (Mbit/s)."""

    lam: float = 0.5
    mean_size: float = 10.0
    R: float = 15.0
    R_min: float = 2.0
    x_max: float = 1.0

    def __post_init__(self):
        for name in ("lam", "mean_size", "R", "R_min", "x_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.R_min > self.R:
            raise ValueError("R_min must not exceed R")


@dataclass(frozen=True)
class StationaryDist:
    probs: np.ndarray
    n_max: int
    tail_mass_bound: float

    @property
    def support(self):
        return np.arange(self.probs.shape[0])


def logistic_phi(n):
    """Admission probability ``1 / (1 + e^n)``; overflow-safe."""
    return expit(-np.asarray(n, dtype=float))


def _log_phi(n):
    return -np.logaddexp(0.0, n)


def load(params: QueueParams, x):
    """Offered load ``lam * E[size] / (x R)``."""
    if not x > 0:
        raise ValueError("resource fraction x must be > 0")
    return params.lam * params.mean_size / (x * params.R)


def _check_point(params, x, b):
    if not 0 < x <= params.x_max * (1 + 1e-12):
        raise ValueError(f"x must lie in (0, {params.x_max}], got {x}")
    if b < 0:
        raise ValueError(f"blocking threshold must be >= 0, got {b}")


def _log_weights(rho, b, n_max):
    k = np.arange(n_max)
    log_terms = np.empty(n_max + 1)
    log_terms[0] = 0.0
    log_terms[1:] = np.cumsum(np.log(rho) + _log_phi(k - b))
    return log_terms


def stationary(params: QueueParams, x, b, n_max=N_START, check=True):
    """Stationary law ``pi(n) ~ rho^n prod_{k<n} phi(k - b)`` with adaptive truncation.

    The truncation doubles from ``n_max`` until the last unnormalized term is
    below ``1e-14`` of the total.
    """
    if check:
        _check_point(params, x, b)
    if n_max < 10:
        raise ValueError("n_max must be >= 10")
    rho = load(params, x)
    while True:
        logw = _log_weights(rho, b, n_max)
        log_total = logsumexp(logw)
        # ratio pi(n+1)/pi(n) is decreasing once phi kicks in, so the tail is geometric-bounded
        ratio = rho * logistic_phi(n_max - b)
        if logw[-1] - log_total < np.log(TAIL_RTOL) and ratio < 1:
            tail = np.exp(logw[-1] - log_total) * ratio / (1 - ratio)
            probs = np.exp(logw - log_total)
            probs /= probs.sum()
            return StationaryDist(probs, n_max, float(tail))
        n_max *= 2
        if n_max > N_LIMIT:
            raise NumericalError(f"stationary distribution did not converge (rho={rho}, b={b})")


def mean_transfer_time(params: QueueParams, x, b, dist=None):
    """Little's law: mean number of users over the arrival rate (seconds)."""
    dist = stationary(params, x, b) if dist is None else dist
    return float(dist.support @ dist.probs) / params.lam


def outage_threshold(params: QueueParams, x):
    return x * params.R / params.R_min


def outage(params: QueueParams, x, b, dist=None):
    """Probability that the per-user rate ``x R / n`` falls below ``R_min``."""
    dist = stationary(params, x, b) if dist is None else dist
    mask = dist.support - outage_threshold(params, x) > 0
    return float(dist.probs[mask].sum())


def smoothed_outage(params: QueueParams, x, b, s=1.0, dist=None):
    """Outage with the step replaced by ``psi(u) = 1 / (1 + e^{-u/s})``."""
    if not s > 0:
        raise ValueError("sharpness s must be > 0")
    dist = stationary(params, x, b) if dist is None else dist
    u = dist.support - outage_threshold(params, x)
    return float(dist.probs @ expit(u / s))


@dataclass(frozen=True)
class AdmissionTargets:
    outage: float
    transfer_time: float


def indicators(params: QueueParams, x, b, s=1.0):
    """``(smoothed outage, transfer time)`` at one operating point."""
    dist = stationary(params, x, b, check=False)
    return smoothed_outage(params, x, b, s, dist), mean_transfer_time(params, x, b, dist)


def admission_field(params: QueueParams, targets: AdmissionTargets, s=1.0,
                    x_min=0.05, b_max=50.0):
    """Two-loop field over ``(x, b)``: ``(O~ - O_target, T_target - T)``.

    Points outside ``[x_min, x_max] x [0, b_max]`` are clamped before
    evaluation; the returned field records the number of clamp events in
    ``field.func.clamped``.
    """

    def func(theta):
        x = float(np.clip(theta[0], x_min, params.x_max))
        b = float(np.clip(theta[1], 0.0, b_max))
        if x != theta[0] or b != theta[1]:
            func.clamped += 1
        o, t = indicators(params, x, b, s)
        return np.array([o - targets.outage, targets.transfer_time - t])

    func.clamped = 0
    return VectorField(2, func, name="admission")


def field_jacobian(params: QueueParams, x, b, s=1.0, dx=1e-4, db=1e-3):
    """Central-difference Jacobian of ``(O~, -T)`` with respect to ``(x, b)``.

    Targets only shift the field, so they do not enter the Jacobian.
    """
    def f(xx, bb):
        o, t = indicators(params, xx, bb, s)
        return np.array([o, -t])

    col_x = (f(x + dx, b) - f(x - dx, b)) / (2 * dx)
    col_b = (f(x, b + db) - f(x, b - db)) / (2 * db)
    return np.column_stack([col_x, col_b])


def classify_point(params: QueueParams, x, b, s=1.0, dx=1e-4, db=1e-3):
    J = field_jacobian(params, x, b, s, dx, db)
    verdict = eigen_stability(J)
    return {
        "x": float(x),
        "b": float(b),
        "det": float(np.linalg.det(J)),
        "trace": float(np.trace(J)),
        "max_re_eig": verdict.margin,
        "det_unstable": instability_det_2x2(J),
        "stable": verdict.stable,
        "jacobian": J,
    }


SCAN_COLUMNS = ("x", "b", "det", "trace", "max_re_eig", "stable")


def _scan_row(args):
    params, x, b, s = args
    r = classify_point(params, x, b, s)
    return (r["x"], r["b"], r["det"], r["trace"], r["max_re_eig"], int(r["stable"]))


def stability_region_scan(params: QueueParams, x_grid, b_grid, s=1.0, jobs=1):
    """Classify every ``(x, b)`` grid point; returns rows in ``SCAN_COLUMNS`` order.

    Rows are ordered by ``x`` then ``b`` whatever the number of workers.
    """
    tasks = [(params, float(x), float(b), s) for x in x_grid for b in b_grid]
    if not tasks:
        raise ValueError("empty scan grid")
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_scan_row, tasks, chunksize=32))
    return [_scan_row(t) for t in tasks]
