import numpy as np
import pytest

from soncoord.interference import (
    NetworkLayout,
    RadioParams,
    ShadowField,
    attenuation_db,
    db_to_linear,
    find_equal_coverage,
    hexagonal_experiment,
    hexagonal_layout,
    hexagonal_setup,
    interference_field,
    lattice_translation,
    neighbor_coverage,
    poisson_layout,
    rate,
    run_snapshot,
    shannon_rate,
    sinr,
    sinr_from_powers,
    snapshot_instability,
)
from soncoord.stability import eigen_stability

RADIO = RadioParams()


@pytest.fixture(scope="module")
def hexa():
    return hexagonal_setup(2000, 0)


def single_site():
    return NetworkLayout(np.array([[1.0, 1.0]]), ((),), None, (2.0, 2.0), "custom")


def test_attenuation_examples():
    assert attenuation_db(1.0) == 128.0
    assert attenuation_db(0.5) == pytest.approx(128 - 36.4 * np.log10(2), abs=1e-12)
    assert round(float(attenuation_db(0.5)), 2) == 117.04
    assert attenuation_db(0.5, 6.0) - attenuation_db(0.5) == pytest.approx(6.0, abs=1e-12)
    with pytest.raises(ValueError):
        attenuation_db(0.0)


def test_noise_and_threshold():
    assert RADIO.noise_dbm == pytest.approx(-174 + 10 * np.log10(2e7), abs=1e-12)
    assert round(RADIO.noise_dbm, 2) == -100.99
    assert RADIO.sinr_min == 1.0


def test_sinr_examples():
    assert sinr_from_powers(2.0, [0.5], 0.5) == 2.0
    one = single_site()
    s = sinr([1.5, 1.0], 0, [40.0], one)
    h = db_to_linear(-attenuation_db(0.5))
    assert s == pytest.approx(h * db_to_linear(40.0) / RADIO.noise_mw, rel=1e-12)


def test_rate_examples():
    assert shannon_rate(1.0) == 2e7
    assert shannon_rate(0.0) == 0.0
    assert shannon_rate(3.0) == 4e7
    one = single_site()
    assert rate([1.5, 1.0], 0, [40.0], one) == pytest.approx(
        2e7 * np.log2(1 + sinr([1.5, 1.0], 0, [40.0], one)))


def test_hexagonal_layout_geometry():
    lay = hexagonal_layout(12, 0.5)
    assert lay.n == 12 and lay.toroidal
    d = lay.distances(lay.positions)
    np.fill_diagonal(d, np.inf)
    assert d.min() == pytest.approx(0.5, abs=1e-12)
    for i, nb in enumerate(lay.neighbors):
        assert len(nb) == 6 and i not in nb
        assert np.allclose(d[i, list(nb)], 0.5)
        assert all(i in lay.neighbors[j] for j in nb)
    assert lay.area == pytest.approx(12 * 0.5 ** 2 * np.sqrt(3) / 2)
    with pytest.raises(ValueError):
        hexagonal_layout(7)


def test_torus_displacement_is_shortest():
    lay = hexagonal_layout(12, 0.5)
    rng = np.random.default_rng(0)
    pts = lay.sample_uniform(rng, 200)
    d = lay.distances(pts)
    # brute force over a 5x5 block of periodic images
    shifts = [i * lay.periods[:, 0] + j * lay.periods[:, 1] for i in range(-2, 3) for j in range(-2, 3)]
    for k in range(lay.n):
        brute = np.min([np.linalg.norm(pts + s - lay.positions[k], axis=1) for s in shifts], axis=0)
        assert np.allclose(d[k], brute, atol=1e-12)


def test_lattice_translation_permutes_coverage_exactly(hexa):
    layout, shadow, P_star, _, _ = hexa
    K = shadow.coverages(P_star)
    for di, dj in [(1, 0), (0, 1), (2, 1)]:
        perm, shift = lattice_translation(layout, di, dj)
        moved = shadow.translated(perm, shift)
        assert np.array_equal(moved.coverages(P_star)[perm], K)
    P = P_star + np.arange(12)
    perm, shift = lattice_translation(layout, 1, 1)
    moved = shadow.translated(perm, shift)
    P_moved = np.empty(12)
    P_moved[perm] = P
    assert np.array_equal(moved.coverages(P_moved)[perm], shadow.coverages(P))


def test_equal_powers_equal_coverage(hexa):
    _, shadow, P_star, G_star, _ = hexa
    K = shadow.coverages(P_star)
    assert K.max() - K.min() <= 2 / np.sqrt(2000)
    assert np.abs(G_star - G_star.mean()).max() <= 2 / np.sqrt(2000)


def test_coverage_extremes():
    one = single_site()
    shadow = ShadowField.generate(one, RADIO, 500, seed=1)
    assert shadow.coverages([60.0])[0] == 1.0
    assert shadow.coverages([-200.0])[0] == 0.0
    assert shadow.coverages([0.0])[0] < shadow.coverages([20.0])[0] < shadow.coverages([46.0])[0]


def test_empty_cell_counts_as_covered():
    lay = NetworkLayout(np.array([[0.5, 0.5], [0.5, 0.5001]]), ((1,), (0,)), None, (1.0, 1.0))
    points = np.array([[0.1, 0.1], [0.9, 0.1]])
    shadow = ShadowField(lay, RADIO, points, np.zeros((2, 2)), assignment="nearest")
    assert shadow.counts[1] == 0
    assert shadow.coverages([46.0, 46.0])[1] == 1.0


def test_neighbor_coverage_examples():
    nb = ((1, 2), (0,), (0,))
    assert neighbor_coverage(0, [0.0, 0.6, 1.0], [1.0, 1.0, 1.0], nb) == pytest.approx(0.8)
    assert neighbor_coverage(0, [0.3, 0.7, 0.7], [5.0, 2.0, 3.0], nb) == pytest.approx(0.7)
    assert neighbor_coverage(0, [0.0, 0.0, 1.0], [1.0, 1.0, 3.0], nb) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        neighbor_coverage(0, [0.5], [1.0], ((),))


def test_monotonicity_on_frozen_randomness(hexa):
    _, shadow, P_star, _, _ = hexa
    rng = np.random.default_rng(3)
    for _ in range(10):
        P = P_star + rng.uniform(-3, 3, 12)
        K, G = shadow.coverages(P), shadow.neighbor_coverages(P)
        for i in range(12):
            Q = P.copy()
            Q[i] += 2.0
            assert shadow.coverages(Q)[i] >= K[i]
            assert shadow.neighbor_coverages(Q)[i] <= G[i]
            others = np.arange(12) != i
            assert np.all(shadow.coverages(Q)[others] <= K[others])


def test_uniform_shift_leaves_g_unchanged(hexa):
    # interference-limited: noise sits far below the received interference
    _, shadow, P_star, G_star, J = hexa
    for delta in (0.5, 1.0, 2.0):
        change = np.abs(shadow.neighbor_coverages(P_star + delta) - G_star).max()
        assert change <= 0.1 * np.abs(J).max() * delta


@pytest.mark.xfail(strict=True, reason="finite-difference noise of the piecewise-constant G; see notes")
def test_jacobian_row_sums_small(hexa):
    J = hexa[4]
    assert np.all(np.abs(J.sum(axis=1)) <= 0.1 * np.abs(J).max(axis=1))


def test_hexagonal_operating_point(hexa):
    _, shadow, P_star, G_star, J = hexa
    assert np.abs(G_star - 0.8).max() < 0.03
    F = interference_field(shadow, 0.8)
    assert np.linalg.norm(F(P_star), np.inf) < 0.03
    assert np.all(np.diag(J) < 0)
    assert not eigen_stability(J).stable
    assert eigen_stability(-J.T @ J).stable


def test_interference_field_clamps():
    _, shadow, P_star, G_star, _ = hexagonal_setup(200, 1)
    F = interference_field(shadow, G_star)
    assert np.array_equal(F(P_star), np.zeros(12))
    assert F.func.clamped == 0
    assert np.array_equal(F(np.full(12, 100.0)), F(np.full(12, 60.0)))
    assert F.func.clamped == 1
    with pytest.raises(ValueError):
        interference_field(shadow, 1.0)


def test_equalization_symmetric_start(hexa):
    _, shadow, _, _, _ = hexa
    eq = find_equal_coverage(shadow, target=None)
    assert eq.converged and eq.iterations <= 3
    K = shadow.coverages(np.full(12, 46.0))
    eq = find_equal_coverage(shadow, target=float(K.mean()))
    assert eq.converged and eq.iterations <= 3


def test_equalization_single_site():
    shadow = ShadowField.generate(single_site(), RADIO, 500, seed=1)
    eq = find_equal_coverage(shadow, 0.5, tol=0.01)
    assert eq.converged and abs(eq.coverages[0] - 0.5) < 0.01
    bad = find_equal_coverage(shadow, 0.9999, tol=1e-5, max_iter=50)
    assert not bad.converged and bad.iterations == 50
    with pytest.raises(ValueError):
        find_equal_coverage(shadow, 1.5)


def test_poisson_layout_properties():
    a = poisson_layout(3, seed=11)
    b = poisson_layout(3, seed=11)
    assert np.array_equal(a.positions, b.positions) and a.neighbors == b.neighbors
    assert not a.toroidal and a.area == pytest.approx(4.0)
    assert np.all((a.positions >= 0) & (a.positions <= 2.0))
    for lay in (a, poisson_layout(0.8, seed=2), poisson_layout(12, seed=3)):
        assert all(len(nb) == min(6, lay.n - 1) for nb in lay.neighbors)
        d = lay.distances(lay.positions)
        for i, nb in enumerate(lay.neighbors):
            others = np.delete(d[i], [i, *nb])
            assert others.size == 0 or d[i, list(nb)].max() <= others.min()


def test_poisson_mean_count():
    counts = [poisson_layout(3, seed=s).n for s in range(2000)]
    assert abs(np.mean(counts) - 12) < 3 * np.sqrt(12 / 2000)


def test_poisson_resamples_tiny_layouts():
    lay = poisson_layout(0.05, seed=0)
    assert lay.n >= 2 and lay.meta["resampled"] > 0


def test_golden_equal_coverage_point():
    # captured at first build; guards against silent changes of the RNG plumbing
    rng = np.random.default_rng(2024)
    lay = poisson_layout(3, rng=rng)
    eq = find_equal_coverage(ShadowField.generate(lay, RADIO, 500, seed=7), None)
    assert lay.n == 14 and eq.converged and eq.iterations == 7
    golden = [46.720819377363, 44.32875250446545, 44.86778423359304, 46.051367977080936,
              46.06366449218644, 45.97235301170233, 46.6844219170969, 45.359329253274254,
              46.36521443223173, 47.059447735160695, 46.16499463691612, 46.8932627109315,
              45.701199372722385, 45.767388345275215]
    assert eq.P.tolist() == golden


def test_snapshot_determinism_and_range():
    a = snapshot_instability(3, 3, seed=5, n_samples=300)
    b = snapshot_instability(3, 3, seed=5, n_samples=300)
    assert repr(a) == repr(b)
    assert 0.0 <= a["p_unstable"] <= 1.0
    assert run_snapshot(3, 0, 123, n_samples=300) == run_snapshot(3, 0, 123, n_samples=300)
    with pytest.raises(ValueError):
        snapshot_instability(3, 0)


def test_snapshot_parallel_matches_serial():
    serial = snapshot_instability(6, 4, seed=1, n_samples=200)
    parallel = snapshot_instability(6, 4, seed=1, n_samples=200, jobs=2)
    assert [r["max_Re_eig"] for r in serial["rows"]] == [r["max_Re_eig"] for r in parallel["rows"]]


def test_hexagonal_zero_perturbation_is_equilibrium():
    setup = hexagonal_setup(300, 2)
    for coordinated in (False, True):
        run = hexagonal_experiment(coordinated, t_end=1.0, h=0.05, perturbation=0.0, setup=setup)
        assert run.max_deviation == 0.0 and not run.left_ball


def test_hexagonal_short_run_shapes():
    setup = hexagonal_setup(300, 2)
    run = hexagonal_experiment(True, t_end=1.0, h=0.01, record_every=10, setup=setup)
    assert run.powers.shape == (11, 12) and run.coverage.shape == (11, 12)
    assert run.times[-1] == pytest.approx(1.0)
    assert 0 < run.max_deviation <= 1.0 + 1e-9
