import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from soncoord.dynamics import integrate_ode
from soncoord.io import read_matrix_csv, read_vector_csv
from soncoord.model import (
    LinearSystem,
    SingularMatrixError,
    VectorField,
    ZeroFindingSpec,
    equilibrium,
    interaction_graph,
    make_linear_field,
    standalone_field,
    zero_finding_field,
)

WITNESS = np.array([[-1.0, 2.0], [2.0, -1.0]])


@pytest.mark.parametrize(
    "A, b, theta, expected",
    [
        ([[-1.0]], [1.0], [0.0], [1.0]),
        (WITNESS, [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]),
        ([[-1.0, 0.0], [0.0, -2.0]], [1.0, 2.0], [1.0, 1.0], [0.0, 0.0]),
    ],
)
def test_make_linear_field_examples(A, b, theta, expected):
    assert np.array_equal(make_linear_field(A, b)(theta), expected)


def test_make_linear_field_dimension_mismatch():
    with pytest.raises(ValueError):
        make_linear_field(WITNESS, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        make_linear_field([[1.0, 2.0]], [1.0])


def test_equilibrium_examples():
    assert np.allclose(equilibrium(-np.eye(2), [1.0, 2.0]), [1.0, 2.0], atol=1e-15)
    # hand solution: A^{-1} = [[1/3, 2/3], [2/3, 1/3]], so -A^{-1} b = [1, 1]
    star = equilibrium(WITNESS, [-1.0, -1.0])
    assert np.allclose(star, [1.0, 1.0], atol=1e-12)
    assert np.allclose(WITNESS @ star + [-1.0, -1.0], 0.0, atol=1e-12)


def test_equilibrium_singular_reports_condition():
    with pytest.raises(SingularMatrixError) as info:
        equilibrium([[0.0, 1.0], [0.0, 0.0]], [1.0, 1.0])
    assert info.value.cond > 1e12


def test_linear_system_is_immutable():
    sys = LinearSystem.from_matrices(WITNESS, [1.0, 0.0])
    with pytest.raises(ValueError):
        sys.A[0, 0] = 5.0


def _invertible(n, seed):
    rng = np.random.default_rng(seed)
    while True:
        A = rng.uniform(-1, 1, (n, n))
        if 1.0 / np.linalg.cond(A) > 1e-6:
            return A


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_field_vanishes_at_equilibrium(n, seed):
    A = _invertible(n, seed)
    b = np.random.default_rng(seed + 1).uniform(-5, 5, n)
    sys = LinearSystem.from_matrices(A, b)
    assert np.linalg.norm(sys.field()(sys.theta_star)) <= 1e-9 * max(1.0, np.linalg.norm(b))


def test_zero_finding_examples():
    ident = zero_finding_field(ZeroFindingSpec(lambda th: th, [0.0]))
    assert np.array_equal(ident([3.5]), [3.5])
    const = zero_finding_field(ZeroFindingSpec(lambda th: np.array([2.0, -1.0]), [2.0, -1.0]))
    assert np.array_equal(const([7.0, 9.0]), [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1),
       arrays(float, 5, elements=st.floats(-10, 10)))
def test_zero_finding_matches_linear_field(n, seed, theta):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    b = rng.normal(size=n)
    zf = zero_finding_field(ZeroFindingSpec(lambda th: A @ th, -b))
    lin = make_linear_field(A, b)
    th = theta[:n]
    assert np.allclose(zf(th), lin(th), rtol=0, atol=1e-12 * (1 + np.abs(A).sum() * np.abs(th).max()))


def test_zero_finding_dimension_check():
    bad = zero_finding_field(ZeroFindingSpec(lambda th: th[:1], [0.0, 0.0]))
    with pytest.raises(ValueError):
        bad([1.0, 2.0])


def test_standalone_examples():
    field = make_linear_field(WITNESS, [0.0, 0.0])
    s0 = standalone_field(field, 0, [99.0, 0.0])
    assert np.array_equal(s0([1.0, 0.0]), [-1.0, 0.0])
    assert s0([1.0, 5.0])[1] == 0.0
    s1 = standalone_field(field, 1, [0.0, 0.0])
    assert np.array_equal(s1([0.0, 1.0]), [0.0, -1.0])
    with pytest.raises(IndexError):
        standalone_field(field, 2, [0.0, 0.0])


def test_standalone_frozen_components_never_move():
    field = make_linear_field(WITNESS, [0.3, -0.2])
    s = standalone_field(field, 1, [0.7, 0.0])
    traj = integrate_ode(s, [0.7, 2.0], 1e-2, 5.0)
    assert np.all(traj.states[:, 0] == 0.7)
    # stand-alone loop 1 is stable (A[1,1] < 0): converges to its own root
    assert abs(traj.final[1] - (2.0 * 0.7 - 0.2)) < 1e-2


def test_interaction_graph_examples():
    g = interaction_graph(np.diag([-1.0, -2.0, -3.0]), 0.0)
    assert list(g.neighbors) == [{0}, {1}, {2}]
    g = interaction_graph(WITNESS, 0.0)
    assert list(g.neighbors) == [{0, 1}, {0, 1}]
    g = interaction_graph([[-1.0, 0.01], [0.01, -1.0]], 0.1)
    assert list(g.neighbors) == [{0}, {1}]


def test_interaction_graph_reads_columns():
    # J[j, i] = d f_j / d theta_i: loop 1 reacts to theta_0, loop 0 ignores theta_1
    J = np.array([[-1.0, 0.0], [0.5, -1.0]])
    g = interaction_graph(J, 0.0)
    assert g[0] == {0, 1} and g[1] == {1}


def test_interaction_graph_default_tolerance_is_scale_free():
    J = np.array([[-1.0, 1e-10], [0.3, -2.0]])
    assert interaction_graph(J).neighbors == interaction_graph(1e6 * J).neighbors
    assert interaction_graph(J)[1] == {1}


def test_vector_field_checks_output_dimension():
    f = VectorField(2, lambda th: th[:1])
    with pytest.raises(ValueError):
        f([1.0, 2.0])


def test_csv_loading(tmp_path):
    p = tmp_path / "A.csv"
    p.write_text("# comment\nc1,c2\n-1,2\n2,-1.5\n")
    assert np.array_equal(read_matrix_csv(p), [[-1.0, 2.0], [2.0, -1.5]])
    q = tmp_path / "b.csv"
    q.write_text("1\n2\n")
    assert np.array_equal(read_vector_csv(q), [1.0, 2.0])
    r = tmp_path / "bad.csv"
    r.write_text("1,2\n3\n")
    with pytest.raises(ValueError):
        read_matrix_csv(r)
