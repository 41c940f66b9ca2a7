import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

import oracles
from polylut.polymath import (
    MonomialFeatures,
    PolyNeuron,
    decompose_wide_dot,
    enumerate_monomials,
    eval_monomials,
    monomial_count,
    monomial_jacobian,
    monomial_values,
    neuron_preactivation,
    weighted_sum,
)


def test_worked_basis_two_vars_degree_two():
    assert enumerate_monomials(2, 2).names() == ["1", "x0", "x1", "x0^2", "x0*x1", "x1^2"]


@pytest.mark.parametrize("f,d", [(f, d) for f in range(1, 6) for d in range(1, 5)])
def test_basis_matches_brute_force(f, d):
    basis = enumerate_monomials(f, d)
    assert [tuple(r) for r in basis.exponents.tolist()] == oracles.exponent_tuples(f, d)


def test_count_is_binomial():
    for f in range(1, 9):
        for d in range(1, 7):
            assert monomial_count(f, d) == oracles.count_monomials(f, d) == math.comb(f + d, d)


def test_count_overflow():
    with pytest.raises(OverflowError):
        monomial_count(200, 200)


def test_invalid_basis_args():
    with pytest.raises(ValueError):
        enumerate_monomials(0, 2)
    with pytest.raises(ValueError):
        enumerate_monomials(3, 0)


def test_exponents_are_read_only():
    with pytest.raises(ValueError):
        enumerate_monomials(2, 2).exponents[0, 0] = 1


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 4),
    st.integers(1, 3),
    st.lists(st.floats(-4, 4, allow_subnormal=False), min_size=4, max_size=4),
    st.integers(0, 1000),
)
def test_values_and_sum_match_scalar_oracle_bitwise(f, d, xs, seed):
    x = np.asarray(xs[:f])
    basis = enumerate_monomials(f, d)
    w = np.random.default_rng(seed).normal(size=len(basis))
    got = neuron_preactivation(PolyNeuron(basis, w), x)
    assert float(got) == oracles.poly(w, x.tolist(), d)


def test_batched_evaluation_matches_elementwise():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 5, 3))
    exps = enumerate_monomials(3, 3).exponents
    full = monomial_values(exps, x)
    assert full.shape == (3, 5, 20)
    for i in range(3):
        for j in range(5):
            assert np.array_equal(full[i, j], monomial_values(exps, x[i, j]))


def test_weighted_sum_broadcasts_weights():
    monos = np.arange(12.0).reshape(2, 2, 3)
    w = np.array([[1.0, 0.0, 2.0], [0.5, 1.0, 0.0]])
    assert np.array_equal(weighted_sum(monos, w), [[4.0, 5.5], [22.0, 14.5]])


def test_jacobian_against_finite_differences():
    rng = np.random.default_rng(1)
    exps = enumerate_monomials(3, 3).exponents
    x = rng.uniform(-1, 1, size=3)
    jac = monomial_jacobian(exps, x)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (monomial_values(exps, x + e) - monomial_values(exps, x - e)) / (2 * h)
        np.testing.assert_allclose(jac[:, j], fd, atol=1e-8)


def test_eval_checks_width():
    with pytest.raises(ValueError):
        eval_monomials(enumerate_monomials(2, 1), np.zeros(3))


def test_neuron_rejects_bad_weight_shape():
    with pytest.raises(ValueError):
        PolyNeuron(enumerate_monomials(2, 1), np.zeros(4))


@given(st.lists(st.integers(-3, 3), min_size=4, max_size=4), st.integers(-5, 5), st.lists(st.integers(0, 3), min_size=4, max_size=4))
def test_decomposition_sums_to_wide_dot(w, b, x):
    subs = decompose_wide_dot(w, b, 2)
    parts = [neuron_preactivation(s, np.asarray(x[2 * a:2 * a + 2], float)) for a, s in enumerate(subs)]
    assert sum(parts) == b + sum(wi * xi for wi, xi in zip(w, x))
    assert subs[1].weights[0] == 0.0


def test_decomposition_rejects_uneven_split():
    with pytest.raises(ValueError):
        decompose_wide_dot([1.0, 2.0, 3.0], 0.0, 2)


class TestMonomialFeatures:
    def test_transform_and_names(self):
        X = np.array([[1.0, 2.0], [3.0, -1.0]])
        mf = MonomialFeatures(degree=2).fit(X)
        np.testing.assert_array_equal(mf.transform(X), [[1, 1, 2, 1, 2, 4], [1, 3, -1, 9, -3, 1]])
        assert mf.n_output_features_ == 6
        assert list(mf.get_feature_names_out(["a", "b"])) == ["1", "a", "b", "a^2", "a b", "b^2"]

    def test_params_and_clone(self):
        mf = MonomialFeatures(degree=3)
        assert mf.get_params() == {"degree": 3}
        assert clone(mf).degree == 3

    def test_feature_count_checked(self):
        mf = MonomialFeatures().fit(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            mf.transform(np.zeros((2, 4)))

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            MonomialFeatures().transform(np.zeros((1, 2)))
