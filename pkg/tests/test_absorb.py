import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from perceptbias.absorb import FixedEffectAbsorber, Groups, demean, fe_degrees_of_freedom, nested_within
from perceptbias.exceptions import ConvergenceError
from perceptbias.linalg import independent_columns, qr_solve


def test_single_driver_two_values():
    out, n_iter = demean(np.array([0.0, 1.0]), np.array(["d", "d"]))
    np.testing.assert_allclose(out, [-0.5, 0.5])
    assert n_iter == 1


def test_within_constant_column_goes_to_zero(rng):
    g = rng.integers(0, 5, 40)
    col = rng.normal(size=5)[g]
    out, _ = demean(col, g)
    np.testing.assert_allclose(out, 0.0, atol=1e-14)


def test_two_way_matches_dummy_regression():
    driver = np.array([0, 0, 1, 1, 2, 2])
    officer = np.array([0, 1, 0, 1, 1, 0])
    y = np.array([1.0, 0.0, 0.5, 2.0, -1.0, 3.0])
    D = np.column_stack([(driver[:, None] == np.arange(3)).astype(float),
                         (officer[:, None] == np.arange(2)).astype(float)])
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    out, _ = demean(y, np.column_stack([driver, officer]))
    np.testing.assert_allclose(out, y - D @ coef, atol=1e-10)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_orthogonality_to_every_indicator(seed, n_dims):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 120))
    fe = np.column_stack([rng.integers(0, int(rng.integers(1, 12)), n) for _ in range(n_dims)])
    X = rng.normal(size=(n, 3))
    out, _ = demean(X, fe)
    for j in range(n_dims):
        g = Groups(fe[:, j])
        sums = np.abs(g.sums(out))
        norms = np.linalg.norm(X, axis=0)
        assert np.all(sums <= 1e-8 * norms)


def test_weighted_single_dimension():
    y = np.array([1.0, 3.0, 5.0])
    w = np.array([1.0, 3.0, 1.0])
    out, _ = demean(y, np.zeros(3), weights=w)
    np.testing.assert_allclose(out, y - (1 + 9 + 5) / 5)


def test_convergence_error_carries_residual(rng):
    fe = np.column_stack([rng.integers(0, 30, 300), rng.integers(0, 30, 300)])
    with pytest.raises(ConvergenceError) as info:
        demean(rng.normal(size=300), fe, tol=1e-300, max_iter=3)
    assert info.value.residual is not None and info.value.residual > 0


def test_fe_dof_counts():
    a = Groups(np.array([0, 0, 1, 1, 2, 2]))
    b = Groups(np.array([0, 1, 0, 1, 0, 1]))
    assert fe_degrees_of_freedom([a]) == 3
    assert fe_degrees_of_freedom([a, b]) == 4  # 3 + 2 - 1 connected component
    # two disconnected blocks lose one more level
    c = Groups(np.array([0, 0, 0, 1, 1, 1]))
    d = Groups(np.array([0, 1, 0, 2, 3, 2]))
    assert fe_degrees_of_freedom([c, d]) == 2 + 4 - 2
    assert fe_degrees_of_freedom([a], clusters=a) == 0
    assert fe_degrees_of_freedom([a], clusters=a, exclude_nested=False) == 3
    assert nested_within(a, Groups(np.array([0, 0, 0, 0, 1, 1])))
    assert not nested_within(b, a)


def test_absorber_estimator_api(rng):
    X = rng.normal(size=(20, 2))
    g = rng.integers(0, 4, 20)
    est = FixedEffectAbsorber()
    assert clone(est).get_params() == {"tol": 1e-10, "max_iter": 10_000}
    out = est.fit_transform(X, groups=g)
    np.testing.assert_allclose(out, demean(X, g)[0])
    with pytest.raises(ValueError):
        est.transform(X[:5])


def test_independent_columns_in_column_order(rng):
    a = rng.normal(size=30)
    b = rng.normal(size=30)
    X = np.column_stack([a, b, a + b, 2 * a, rng.normal(size=30), np.zeros(30)])
    np.testing.assert_array_equal(independent_columns(X), [True, True, False, False, True, False])


@given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10)))
def test_qr_solve_matches_lstsq(X):
    if np.linalg.matrix_rank(X) < 3 or np.linalg.cond(X) > 1e8:
        return
    y = np.arange(12, dtype=float)
    np.testing.assert_allclose(qr_solve(X, y)[0], np.linalg.lstsq(X, y, rcond=None)[0], rtol=1e-6, atol=1e-8)


def test_independent_columns_wider_than_tall():
    # a dependent column early on must not push a valid later column past the row count
    X = np.array([[1.0, 2.0, 0.0, 0.0],
                  [0.0, 0.0, 1.0, 0.0],
                  [0.0, 0.0, 0.0, 1.0]])
    np.testing.assert_array_equal(independent_columns(X), [True, False, True, True])
    wide = np.random.default_rng(0).normal(size=(3, 6))
    np.testing.assert_array_equal(independent_columns(wide), [True] * 3 + [False] * 3)


def test_two_way_exactly_spanned_column_dropped():
    # the last column equals driver + officer indicators, so projections leave only rounding
    rng = np.random.default_rng(3)
    d = np.repeat(np.arange(15), 4)
    o = rng.integers(0, 6, 60)
    spanned = rng.normal(size=15)[d] + rng.normal(size=6)[o]
    X = np.column_stack([rng.normal(size=60), spanned])
    from perceptbias.linear import LinearFixedEffects

    est = LinearFixedEffects().fit(X, rng.normal(size=60), groups=[d, o])
    np.testing.assert_array_equal(est.kept_, [True, False])
