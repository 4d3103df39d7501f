"""Trajectories of the loop dynamics: RK4 for the ODE, noisy discrete updates.

The discrete scheme is ``theta[t+1] = theta[t] + eps * (F(theta[t]) + M[t])``
with i.i.d. Gaussian measurement noise ``M``. Updates can touch all loops at
once (``synchronous``), one loop per step in cyclic order (``round_robin``),
or one uniformly chosen loop per step (``random_coordinate``).
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector, check_positive
from .model import VectorField

#: Runs are stopped and flagged once ``||theta||`` exceeds this.
ESCAPE_NORM = 1e9

SCHEDULES = ("synchronous", "round_robin", "random_coordinate")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (T, I)
    meta: dict = field(default_factory=dict)
    escaped: bool = False

    def __len__(self):
        return self.times.shape[0]

    @property
    def final(self):
        return self.states[-1]

    def columns(self):
        return ["t"] + [f"theta_{k + 1}" for k in range(self.states.shape[1])]

    def rows(self):
        for t, s in zip(self.times, self.states):
            yield [float(t), *map(float, s)]


@dataclass(frozen=True)
class SASchedule:
    kind: str = "synchronous"
    epsilon: float = 0.01
    noise_sigma: float = 0.0
    steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; choose from {SCHEDULES}")
        check_positive(self.epsilon, "epsilon")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def _escaped(theta):
    return not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > ESCAPE_NORM


def integrate_ode(field: VectorField, theta0, h, t_end, record_every=1):
    """Classical fixed-step RK4 for ``theta' = F(theta)`` on ``[0, t_end]``.

    ``t_end`` is reached in ``round(t_end / h)`` steps; every
    ``record_every``-th state (plus the last) is stored.
    """
    check_positive(h, "h")
    if t_end < h:
        raise ValueError("t_end must be >= h")
    theta = as_vector(theta0, "theta0", field.dim).copy()
    n_steps = int(round(t_end / h))
    times, states = [0.0], [theta.copy()]
    escaped = False
    for k in range(1, n_steps + 1):
        k1 = field(theta)
        k2 = field(theta + 0.5 * h * k1)
        k3 = field(theta + 0.5 * h * k2)
        k4 = field(theta + h * k3)
        theta = theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if _escaped(theta):
            escaped = True
            times.append(k * h)
            states.append(theta.copy())
            break
        if k % record_every == 0 or k == n_steps:
            times.append(k * h)
            states.append(theta.copy())
    meta = {"scheme": "rk4", "step": h, "seed": None}
    return Trajectory(np.array(times), np.array(states), meta, escaped)


def simulate_sa(field: VectorField, theta0, sched: SASchedule, record_every=1):
    """Noisy discrete-time loop updates under the given schedule.

    Identical schedules (seed included) give bit-identical trajectories.
    In the single-coordinate schedules only the updated loop receives noise.
    """
    rng = np.random.default_rng(sched.seed)
    dim = field.dim
    theta = as_vector(theta0, "theta0", dim).copy()
    eps, sigma = sched.epsilon, sched.noise_sigma
    times, states = [0.0], [theta.copy()]
    escaped = False
    for t in range(sched.steps):
        F = field(theta)
        if sched.kind == "synchronous":
            noise = rng.normal(0.0, sigma, dim) if sigma > 0 else 0.0
            theta = theta + eps * (F + noise)
        else:
            i = t % dim if sched.kind == "round_robin" else int(rng.integers(dim))
            noise = rng.normal(0.0, sigma) if sigma > 0 else 0.0
            theta = theta.copy()
            theta[i] += eps * (F[i] + noise)
        if _escaped(theta):
            escaped = True
            times.append(float(t + 1))
            states.append(theta.copy())
            break
        if (t + 1) % record_every == 0 or t + 1 == sched.steps:
            times.append(float(t + 1))
            states.append(theta.copy())
    meta = {"scheme": sched.kind, "step": eps, "seed": sched.seed, "noise_sigma": sigma}
    return Trajectory(np.array(times), np.array(states), meta, escaped)


def convergence_stats(traj: Trajectory, theta_star):
    """Distances to ``theta_star``: final, mean over the last 10 %, and of the tail mean."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    star = as_vector(theta_star, "theta_star", traj.states.shape[1])
    dist = np.linalg.norm(traj.states - star, axis=1)
    n_tail = max(1, int(np.ceil(0.1 * len(traj))))
    tail = traj.states[-n_tail:]
    return {
        "final_dist": float(dist[-1]),
        "mean_tail_dist": float(dist[-n_tail:].mean()),
        "tail_mean_dist": float(np.linalg.norm(tail.mean(axis=0) - star)),
        "escaped": traj.escaped,
    }
