"""Multi-cell downlink power control: each base station tunes its power (dBm)
so that the coverage of its neighbor cells sits at a target level.

Coverage is a Monte Carlo area average over sample points that are drawn
once per experiment together with their shadowing, so the indicators are
deterministic functions of the power vector and finite differences work.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ._validation import NumericalError, as_vector, check_positive
from .coordination import coordinate_field
from .dynamics import integrate_ode
from .estimation import jacobian_fd
from .model import VectorField
from .stability import eigen_stability

log = logging.getLogger(__name__)

P_LO, P_HI = 0.0, 60.0
MIN_DISTANCE_KM = 1e-3


@dataclass(frozen=True)
class RadioParams:
    pl_const: float = 128.0
    pl_slope: float = 36.4
    shadow_sigma: float = 6.0
    noise_psd: float = -174.0  # dBm/Hz
    bandwidth: float = 2e7  # Hz
    rate_min: float = 2e7  # bit/s

    def __post_init__(self):
        check_positive(self.bandwidth, "bandwidth")
        if self.shadow_sigma < 0:
            raise ValueError("shadow_sigma must be >= 0")

    @property
    def noise_dbm(self):
        return self.noise_psd + 10.0 * np.log10(self.bandwidth)

    @property
    def noise_mw(self):
        return db_to_linear(self.noise_dbm)

    @property
    def sinr_min(self):
        """Linear SINR needed for ``rate_min``: ``2^(rate_min / w) - 1``."""
        return 2.0 ** (self.rate_min / self.bandwidth) - 1.0


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def attenuation_db(d, shadow=0.0, radio=RadioParams()):
    """Path loss plus shadowing in dB at distance ``d`` km."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0")
    return radio.pl_const + radio.pl_slope * np.log10(d) + shadow


# --------------------------------------------------------------------------- layouts


@dataclass(frozen=True)
class NetworkLayout:
    """Base-station sites in km.

    ``periods`` holds the two torus period vectors as columns when the
    layout wraps around, else ``None`` and ``extent`` is the bounding
    rectangle ``(width, height)`` with origin at 0.
    """

    positions: np.ndarray
    neighbors: tuple
    periods: np.ndarray = None
    extent: tuple = None
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def toroidal(self):
        return self.periods is not None

    @property
    def area(self):
        if self.toroidal:
            return float(abs(np.linalg.det(self.periods)))
        return float(self.extent[0] * self.extent[1])

    def displacement(self, a, b):
        """Shortest displacement vectors ``b - a`` (wrap-around aware), broadcasting."""
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if not self.toroidal:
            return d
        inv = np.linalg.inv(self.periods)
        c = d @ inv.T
        c -= np.round(c)
        best = c @ self.periods.T
        best_norm = np.einsum("...k,...k->...", best, best)
        for s1 in (-1, 0, 1):
            for s2 in (-1, 0, 1):
                if s1 == 0 and s2 == 0:
                    continue
                cand = (c + np.array([s1, s2])) @ self.periods.T
                cn = np.einsum("...k,...k->...", cand, cand)
                better = cn < best_norm
                best = np.where(better[..., None], cand, best)
                best_norm = np.where(better, cn, best_norm)
        return best

    def distances(self, points):
        """``(n_bs, n_points)`` distance matrix in km."""
        points = np.atleast_2d(points)
        d = self.displacement(self.positions[:, None, :], points[None, :, :])
        return np.sqrt(np.einsum("ijk,ijk->ij", d, d))

    def wrap(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.toroidal:
            return points
        c = points @ np.linalg.inv(self.periods).T
        return (c - np.floor(c)) @ self.periods.T

    def sample_uniform(self, rng, m):
        u = rng.random((m, 2))
        if self.toroidal:
            return u @ self.periods.T
        return u * np.asarray(self.extent)


def _nearest_neighbors(layout_dist, k):
    n = layout_dist.shape[0]
    k = min(k, n - 1)
    out = []
    for i in range(n):
        d = layout_dist[i].copy()
        d[i] = np.inf
        out.append(tuple(sorted(int(j) for j in np.argsort(d, kind="stable")[:k])))
    return tuple(out)


def hexagonal_layout(n=12, isd=0.5, cols=None):
    """Triangular lattice of ``n`` sites on a rectangular torus, spacing ``isd`` km.

    Rows are ``isd * sqrt(3) / 2`` apart and odd rows are offset by half a
    spacing, so the row count must be even for the rectangle to close. Every
    site has exactly six neighbors at distance ``isd``. ``n = 12`` uses
    3 columns by 4 rows.
    """
    def valid(c):
        r = n // c
        return n % c == 0 and c >= 3 and r >= 4 and r % 2 == 0

    if cols is None:
        cols = next((c for c in range(3, n + 1) if valid(c)), None)
    if cols is None or not valid(cols):
        raise ValueError(f"{n} sites cannot tile a rectangular torus with >= 3 columns and an even number >= 4 of rows")
    rows = n // cols
    dy = isd * np.sqrt(3.0) / 2.0
    positions = np.array([[(i + 0.5 * (j % 2)) * isd, j * dy] for j in range(rows) for i in range(cols)])
    periods = np.diag([cols * isd, rows * dy])
    proto = NetworkLayout(positions, (), periods, None, "hexagonal")
    dist = proto.distances(positions)
    neighbors = _nearest_neighbors(dist, 6)
    for i, nb in enumerate(neighbors):
        if not np.allclose(dist[i, list(nb)], isd):
            raise ValueError(f"torus {cols}x{rows} too small for a proper hexagonal neighborhood")
    meta = {"cols": cols, "rows": rows, "isd": isd}
    return NetworkLayout(positions, neighbors, periods, None, "hexagonal", meta)


def lattice_translation(layout: NetworkLayout, di=1, dj=0):
    """Site permutation and shift vector of a lattice translation of a hexagonal layout.

    The shift is ``di`` steps along the rows plus ``dj`` steps up and to the
    right; site ``k`` lands on site ``perm[k]``.
    """
    isd = layout.meta["isd"]
    shift = di * np.array([isd, 0.0]) + dj * np.array([isd / 2.0, isd * np.sqrt(3.0) / 2.0])
    moved = layout.positions + shift
    perm = np.argmin(layout.distances(moved), axis=0)
    if sorted(perm.tolist()) != list(range(layout.n)):
        raise ValueError("shift is not a symmetry of the layout")
    return perm, shift


def poisson_layout(density, area=4.0, seed=0, rng=None, n_neighbors=6):
    """Poisson number of sites, uniform in a square of ``area`` km^2, no wrap-around.

    Draws with fewer than two sites are redrawn; ``meta["resampled"]`` counts them.
    """
    check_positive(density, "density")
    rng = np.random.default_rng(seed) if rng is None else rng
    side = float(np.sqrt(area))
    resampled = 0
    while True:
        n = int(rng.poisson(density * area))
        if n >= 2:
            break
        resampled += 1
    positions = rng.random((n, 2)) * side
    proto = NetworkLayout(positions, (), None, (side, side), "poisson")
    neighbors = _nearest_neighbors(proto.distances(positions), n_neighbors)
    meta = {"density": density, "resampled": resampled}
    return NetworkLayout(positions, neighbors, None, (side, side), "poisson", meta)


# --------------------------------------------------------------------------- propagation


class ShadowField:
    """Frozen sample points, their serving cell and per-link shadowing.

    ``shadow_db[j, p]`` is the shadowing between site ``j`` and point ``p``.
    A point belongs to the site with the strongest path gain, shadowing
    included (``assignment="gain"``), or to the closest site
    (``assignment="nearest"``). Neither depends on the transmit powers, so
    cells stay fixed while powers move. ``cell_area`` is the Monte Carlo
    estimate of each cell's area.
    """

    def __init__(self, layout, radio, points, shadow_db, seed=None, assignment="gain"):
        if assignment not in ("gain", "nearest"):
            raise ValueError(f"unknown assignment {assignment!r}")
        self.layout = layout
        self.radio = radio
        self.seed = seed
        self.assignment = assignment
        dist = layout.distances(points)
        keep = dist.min(axis=0) >= MIN_DISTANCE_KM
        self.points = np.asarray(points, dtype=float)[keep]
        self.shadow_db = np.asarray(shadow_db, dtype=float)[:, keep]
        dist = dist[:, keep]
        self.gain = db_to_linear(-attenuation_db(dist, self.shadow_db, radio))
        if assignment == "gain":
            self.owner = np.argmax(self.gain, axis=0)
        else:
            self.owner = np.argmin(dist, axis=0)
        m = self.points.shape[0]
        self.serving_gain = self.gain[self.owner, np.arange(m)]
        self.counts = np.bincount(self.owner, minlength=layout.n)
        self.cell_area = self.counts / m * layout.area
        for j in np.flatnonzero(self.counts == 0):
            log.warning("cell %d has no sample points; its coverage is taken as 1", j)
        for a in (self.points, self.shadow_db, self.owner, self.gain, self.serving_gain,
                  self.counts, self.cell_area):
            a.setflags(write=False)

    @classmethod
    def generate(cls, layout, radio=RadioParams(), n_samples=2000, seed=0, assignment="gain"):
        """``n_samples * n_sites`` uniform points with i.i.d. Gaussian shadowing."""
        rng = np.random.default_rng(seed)
        m = n_samples * layout.n
        points = layout.sample_uniform(rng, m)
        shadow = rng.normal(0.0, radio.shadow_sigma, (layout.n, m))
        return cls(layout, radio, points, shadow, seed, assignment)

    def translated(self, perm, shift):
        """Same randomness moved by a lattice translation: site ``j`` becomes ``perm[j]``."""
        shadow = np.empty_like(self.shadow_db)
        shadow[perm] = self.shadow_db
        return ShadowField(self.layout, self.radio, self.layout.wrap(self.points + shift),
                           shadow, self.seed, self.assignment)

    def sinr(self, P_dbm):
        """Linear SINR of every sample point with its serving cell."""
        p = db_to_linear(as_vector(P_dbm, "P", self.layout.n))
        rx = p @ self.gain
        signal = p[self.owner] * self.serving_gain
        return signal / (self.radio.noise_mw + rx - signal)

    def coverages(self, P_dbm):
        """Per-cell fraction of sample points whose Shannon rate meets ``rate_min``."""
        ok = (self.sinr(P_dbm) >= self.radio.sinr_min).astype(float)
        hits = np.bincount(self.owner, weights=ok, minlength=self.layout.n)
        return np.where(self.counts > 0, hits / np.maximum(self.counts, 1), 1.0)

    def neighbor_coverages(self, P_dbm):
        return neighbor_coverage_vector(self.coverages(P_dbm), self.cell_area, self.layout.neighbors)


def sinr(point, i, P_dbm, layout, radio=RadioParams(), shadow_db=None):
    """SINR at one location served by site ``i`` (linear scale)."""
    P = as_vector(P_dbm, "P", layout.n)
    d = layout.distances(np.asarray(point, dtype=float))[:, 0]
    shadow = np.zeros(layout.n) if shadow_db is None else as_vector(shadow_db, "shadow", layout.n)
    rx = db_to_linear(P - attenuation_db(d, shadow, radio))
    return float(rx[i] / (radio.noise_mw + rx.sum() - rx[i]))


def sinr_from_powers(signal_mw, interference_mw, noise_mw):
    return signal_mw / (noise_mw + np.sum(interference_mw))


def shannon_rate(s, bandwidth=2e7):
    """``w log2(1 + S)`` in bit/s."""
    return bandwidth * np.log2(1.0 + np.asarray(s, dtype=float))


def rate(point, i, P_dbm, layout, radio=RadioParams(), shadow_db=None):
    return float(shannon_rate(sinr(point, i, P_dbm, layout, radio, shadow_db), radio.bandwidth))


def coverage(i, P_dbm, shadow: ShadowField):
    return float(shadow.coverages(P_dbm)[i])


def neighbor_coverage(i, coverages, areas, neighbors):
    """Area-weighted mean coverage over the neighbor cells of ``i``."""
    nb = list(neighbors[i])
    if not nb:
        raise ValueError(f"site {i} has no neighbors")
    a = np.asarray(areas, dtype=float)[nb]
    k = np.asarray(coverages, dtype=float)[nb]
    if a.sum() == 0:
        return float(k.mean())
    return float(a @ k / a.sum())


def neighbor_coverage_vector(coverages, areas, neighbors):
    return np.array([neighbor_coverage(i, coverages, areas, neighbors)
                     for i in range(len(neighbors))])


def interference_field(shadow: ShadowField, targets, p_lo=P_LO, p_hi=P_HI):
    """Field ``F_i(P) = G_i(P) - target_i`` over powers in dBm.

    Powers are clamped to ``[p_lo, p_hi]`` before evaluation; clamp events
    are counted on ``field.func.clamped``.
    """
    n = shadow.layout.n
    targets = np.broadcast_to(np.asarray(targets, dtype=float), (n,)).copy()
    if np.any((targets <= 0) | (targets >= 1)):
        raise ValueError("coverage targets must lie in (0, 1)")

    def func(P):
        Pc = np.clip(P, p_lo, p_hi)
        if np.any(Pc != P):
            func.clamped += 1
        return shadow.neighbor_coverages(Pc) - targets

    func.clamped = 0
    return VectorField(n, func, name="interference")


@dataclass(frozen=True)
class EqualizationResult:
    P: np.ndarray
    coverages: np.ndarray
    converged: bool
    iterations: int


def find_equal_coverage(shadow: ShadowField, target=0.8, tol=0.02, max_iter=200,
                        kappa=5.0, P0=46.0, p_lo=P_LO, p_hi=P_HI):
    """Damped fixed point ``P_i <- clamp(P_i + kappa (target - K_i(P)))``.

    ``target=None`` equalizes towards the current mean coverage instead of a
    fixed level.
    """
    if target is not None and not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    P = np.broadcast_to(np.asarray(P0, dtype=float), (shadow.layout.n,)).copy()
    for it in range(max_iter + 1):
        K = shadow.coverages(P)
        goal = K.mean() if target is None else target
        if np.max(np.abs(K - goal)) < tol:
            return EqualizationResult(P, K, True, it)
        if it == max_iter:
            break
        P = np.clip(P + kappa * (goal - K), p_lo, p_hi)
    return EqualizationResult(P, K, False, max_iter)


# --------------------------------------------------------------------------- experiments


SNAPSHOT_COLUMNS = ("snapshot_id", "N_bs", "converged", "max_Re_eig", "unstable")


def snapshot_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def run_snapshot(density, snapshot_id, seed, radio=RadioParams(), n_samples=2000,
                 target=None, area=4.0, fd_step=0.5, tol=0.02, max_iter=200):
    """One Poisson snapshot: layout, equal-coverage point, Jacobian of G, spectrum."""
    rng = np.random.default_rng(seed)
    layout = poisson_layout(density, area, rng=rng)
    shadow = ShadowField.generate(layout, radio, n_samples, seed=rng.integers(2**63))
    eq = find_equal_coverage(shadow, target, tol, max_iter)
    row = {"snapshot_id": snapshot_id, "N_bs": layout.n, "converged": eq.converged,
           "max_Re_eig": float("nan"), "unstable": None}
    if eq.converged:
        J = jacobian_fd(shadow.neighbor_coverages, eq.P, fd_step)
        verdict = eigen_stability(J)
        row["max_Re_eig"] = verdict.margin
        row["unstable"] = not verdict.stable
    return row


def _snapshot_task(args):
    return run_snapshot(*args[:3], **args[3])


def snapshot_instability(density, n_snapshots=100, radio=RadioParams(), seed=0, jobs=1, **kw):
    """Fraction of equalized Poisson snapshots whose linearization is unstable.

    Snapshot ``k`` draws from its own stream spawned from ``(seed, k)``, so
    results do not depend on ``jobs``.
    """
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    kw = dict(kw, radio=radio)
    tasks = [(density, k, s, kw) for k, s in enumerate(snapshot_seeds(seed, n_snapshots))]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_snapshot_task, tasks))
    else:
        rows = [_snapshot_task(t) for t in tasks]
    converged = [r for r in rows if r["converged"]]
    if not converged:
        raise NumericalError(f"no snapshot reached equal coverage at density {density}")
    unstable = sum(1 for r in converged if r["unstable"])
    return {"p_unstable": unstable / len(converged), "n_converged": len(converged), "rows": rows}


@dataclass(frozen=True)
class HexagonalRun:
    times: np.ndarray
    powers: np.ndarray
    coverage: np.ndarray  # G traces
    P_star: np.ndarray
    targets: np.ndarray
    jacobian: np.ndarray
    max_deviation: float
    left_ball: bool
    escaped: bool


def hexagonal_setup(n_samples=2000, seed=0, p_star=46.0, radio=RadioParams(), fd_step=0.5):
    layout = hexagonal_layout(12, 0.5)
    shadow = ShadowField.generate(layout, radio, n_samples, seed)
    P_star = np.full(layout.n, p_star)
    G_star = shadow.neighbor_coverages(P_star)
    J = jacobian_fd(shadow.neighbor_coverages, P_star, fd_step)
    return layout, shadow, P_star, G_star, J


def hexagonal_experiment(coordinated, t_end=100.0, h=0.01, seed=0, n_samples=2000,
                         perturbation=1.0, ball=3.0, p_star=46.0, targets=None,
                         radio=RadioParams(), record_every=10, setup=None):
    """Integrate the 12-site power-control ODE from a perturbed ``P*``.

    ``targets=None`` uses ``G(P*)`` so that ``P*`` is an exact equilibrium.
    The coordinated run integrates ``C F`` with ``C = -J^T`` and ``J`` the
    finite-difference Jacobian of ``G`` at ``P*``. The ball test uses the
    largest per-site deviation in dB.
    """
    layout, shadow, P_star, G_star, J = setup or hexagonal_setup(n_samples, seed, p_star, radio)
    targets = G_star if targets is None else np.broadcast_to(targets, G_star.shape)
    F = interference_field(shadow, targets)
    if coordinated:
        F = coordinate_field(-J.T, F)
    rng = np.random.default_rng([seed, 1])
    P0 = P_star + perturbation * rng.uniform(-1.0, 1.0, layout.n)
    traj = integrate_ode(F, P0, h, t_end, record_every=record_every)
    powers = np.clip(traj.states, P_LO, P_HI)
    G = np.array([shadow.neighbor_coverages(p) for p in powers])
    dev = float(np.max(np.abs(powers - P_star)))  # worst site, dB
    return HexagonalRun(traj.times, powers, G, P_star, targets, J, dev, dev > ball, traj.escaped)
