import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phononcorr.fock import (
    DensityMatrix,
    FockError,
    Operator,
    TruncationError,
    annihilation,
    check_truncation,
    creation,
    expectation,
    identity,
    make_layout,
    number_op,
    thermal_populations,
    thermal_state,
    top_level_population,
    vacuum,
)


@pytest.fixture
def layout():
    return make_layout([("a", 3), ("b", 4)])


def test_layout_basics(layout):
    assert layout.dimension == 12
    assert layout.names == ("a", "b")
    assert layout.stride("a") == 4 and layout.stride("b") == 1
    assert list(layout.occupations("a")) == [0] * 4 + [1] * 4 + [2] * 4
    assert list(layout.occupations("b")[:5]) == [0, 1, 2, 3, 0]


@pytest.mark.parametrize("modes", [[], [("a", 1)], [("a", 2), ("a", 3)], [("a", 2.5)]])
def test_layout_rejects_bad_modes(modes):
    with pytest.raises(FockError):
        make_layout(modes)


def test_layout_dimension_limit():
    with pytest.raises(FockError, match="exceeds"):
        make_layout([("a", 100), ("b", 100)])
    assert make_layout([("a", 100), ("b", 100)], max_dimension=10_000).dimension == 10_000


def test_unknown_mode(layout):
    with pytest.raises(FockError, match="unknown mode"):
        annihilation(layout, "c")


def test_ladder_action(layout):
    a = annihilation(layout, "b").matrix
    # |a=1, b=3> -> sqrt(3) |a=1, b=2>
    ket = np.zeros(12)
    ket[1 * 4 + 3] = 1
    out = a @ ket
    assert out[1 * 4 + 2] == pytest.approx(np.sqrt(3))
    assert np.count_nonzero(out) == 1


def test_commutator_below_cutoff(layout):
    for m, cut in layout.modes:
        a, ad = annihilation(layout, m), creation(layout, m)
        comm = (a @ ad - ad @ a).matrix
        occ = layout.occupations(m)
        # [a, a^dag] = 1 except on the top retained level
        expected = np.where(occ < cut - 1, 1.0, -(cut - 1))
        assert np.allclose(np.diag(comm), expected)
        assert np.allclose(comm - np.diag(np.diag(comm)), 0)


def test_number_is_adag_a(layout):
    for m in layout.names:
        ad, a = creation(layout, m), annihilation(layout, m)
        assert np.allclose((ad @ a).matrix, number_op(layout, m).matrix)


def test_operator_arithmetic(layout):
    n = number_op(layout, "a")
    one = identity(layout)
    assert np.allclose((2 * n + one - n).matrix, (n + one).matrix)
    assert n.is_hermitian()
    assert not annihilation(layout, "a").is_hermitian()
    with pytest.raises(FockError):
        n @ number_op(make_layout([("x", 2)]), "x")


def test_operator_is_read_only(layout):
    n = number_op(layout, "a")
    with pytest.raises(ValueError):
        n.matrix[0, 0] = 5


def test_operator_shape_and_finiteness(layout):
    with pytest.raises(FockError):
        Operator(layout, np.eye(3))
    m = np.eye(12)
    m[0, 0] = np.nan
    with pytest.raises(FockError):
        Operator(layout, m)


def test_density_matrix_validation(layout):
    with pytest.raises(FockError, match="trace"):
        DensityMatrix(layout, 2 * vacuum(layout).matrix)
    bad = np.zeros((12, 12), complex)
    bad[0, 1] = 1
    bad[0, 0] = 1
    with pytest.raises(FockError, match="Hermitian"):
        DensityMatrix(layout, bad)
    neg = np.diag([1.5, -0.5] + [0] * 10).astype(complex)
    with pytest.raises(FockError, match="negative"):
        DensityMatrix(layout, neg)


def test_thermal_state(layout):
    rho = thermal_state(layout, {"b": 0.3})
    pops = rho.populations("b")
    r = 0.3 / 1.3
    expected = r ** np.arange(4)
    assert np.allclose(pops, expected / expected.sum())
    assert rho.populations("a")[0] == pytest.approx(1.0)
    assert np.trace(rho.matrix).real == pytest.approx(1.0, abs=1e-14)


def test_thermal_state_input_checks(layout):
    with pytest.raises(FockError):
        thermal_state(layout, {"zz": 0.1})
    with pytest.raises(FockError):
        thermal_state(layout, [0.1])
    with pytest.raises(FockError):
        thermal_populations(-1, 3)


def test_expectation_of_number_matches_truncated_mean(layout):
    rho = thermal_state(layout, [0.2, 0.0])
    p = thermal_populations(0.2, 3)
    assert expectation(number_op(layout, "a"), rho).real == pytest.approx(p @ np.arange(3))


def test_truncation_guard(layout):
    rho = thermal_state(layout, {"b": 1.0})
    pops = top_level_population(layout, rho.matrix)
    assert pops["b"] == pytest.approx(0.125 / 1.875)
    with pytest.raises(TruncationError, match="'b'"):
        check_truncation(layout, rho.matrix, 1e-4)
    check_truncation(layout, vacuum(layout).matrix, 1e-4)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 4), min_size=2, max_size=3), st.data())
def test_ladders_on_different_modes_commute(cutoffs, data):
    layout = make_layout([(f"m{i}", c) for i, c in enumerate(cutoffs)])
    i, j = data.draw(st.lists(st.integers(0, len(cutoffs) - 1), min_size=2, max_size=2, unique=True))
    a = annihilation(layout, f"m{i}")
    b = creation(layout, f"m{j}")
    assert np.allclose((a @ b - b @ a).matrix, 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2), st.integers(2, 6))
def test_thermal_populations_normalized(occ, cutoff):
    p = thermal_populations(occ, cutoff)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.diff(p) <= 0)
