import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from polylut.quantize import (
    BatchNormAffine,
    QuantSpec,
    activation_quantized,
    adder_input_bits,
    apply_batchnorm,
    dequantize,
    fake_quantize,
    fold_batchnorm,
    quantize,
    ste_mask,
    subneuron_output_spec,
)


def test_code_ranges():
    assert (QuantSpec(3, True).code_min, QuantSpec(3, True).code_max) == (-4, 3)
    assert (QuantSpec(3, False).code_min, QuantSpec(3, False).code_max) == (0, 7)
    assert QuantSpec(2, True).codes().tolist() == [-2, -1, 0, 1]


def test_spec_validation():
    with pytest.raises(ValueError):
        QuantSpec(0, False)
    with pytest.raises(ValueError):
        QuantSpec(2, False, scale=0.0)
    with pytest.raises(ValueError):
        QuantSpec(2, False, scale=float("inf"))


def test_ties_round_away_from_zero():
    spec = QuantSpec(4, True, 1.0)
    assert quantize(np.array([0.5, -0.5, 1.5, -1.5, 2.4999]), spec).tolist() == [1, -1, 2, -2, 2]


def test_saturation_and_specials():
    spec = QuantSpec(3, True, 0.5)
    vals = np.array([100.0, -100.0, np.inf, -np.inf, np.nan])
    assert quantize(vals, spec).tolist() == [3, -4, 3, -4, 0]
    assert quantize(float("nan"), QuantSpec(3, False, 1.0, zero_point=2)) == 2


def test_scalar_in_scalar_out():
    assert isinstance(quantize(0.3, QuantSpec(2, False, 0.25)), int)
    assert isinstance(dequantize(1, QuantSpec(2, False, 0.25)), float)


@given(
    st.floats(allow_nan=True, allow_infinity=True, width=64),
    st.integers(1, 8),
    st.booleans(),
    st.floats(1e-3, 10),
    st.integers(-2, 2),
)
def test_quantize_matches_scalar_oracle(v, bits, signed, scale, zp):
    spec = QuantSpec(bits, signed, scale, zp)
    assert quantize(v, spec) == oracles.quantize(v, bits, signed, scale, zp)


@given(st.integers(1, 8), st.booleans(), st.floats(1e-3, 10))
def test_dequantize_then_quantize_is_identity(bits, signed, scale):
    spec = QuantSpec(bits, signed, scale)
    codes = spec.codes()
    assert np.array_equal(quantize(dequantize(codes, spec), spec), codes)


def test_fake_quantize_is_idempotent():
    spec = QuantSpec(3, False, 0.3)
    x = np.linspace(-1, 3, 41)
    once = fake_quantize(x, spec)
    assert np.array_equal(fake_quantize(once, spec), once)


def test_ste_mask_marks_clipping_range():
    spec = QuantSpec(2, False, 1.0)
    assert ste_mask(np.array([-0.1, 0.0, 1.5, 3.0, 3.1]), spec).tolist() == [0, 1, 1, 1, 0]


def test_activation_quantized_applies_relu():
    assert activation_quantized(np.array([-2.0, 0.6, 9.0]), QuantSpec(2, False, 1.0)).tolist() == [0, 1, 3]


def test_subneuron_word_is_one_bit_wider_and_signed():
    spec = subneuron_output_spec(3, 0.1)
    assert (spec.bits, spec.signed) == (4, True)
    assert adder_input_bits(2, 3) == 9
    with pytest.raises(ValueError):
        subneuron_output_spec(0)


def test_batchnorm_folding_matches_unfolded_form():
    rng = np.random.default_rng(0)
    bn = BatchNormAffine(rng.uniform(0.5, 2, 5), rng.normal(size=5), rng.normal(size=5), rng.uniform(0.1, 3, 5))
    x = rng.normal(size=(7, 5))
    a, c = fold_batchnorm(bn)
    np.testing.assert_allclose(a * x + c, apply_batchnorm(bn, x), rtol=1e-12, atol=1e-12)


def test_batchnorm_negative_variance():
    bn = BatchNormAffine(np.ones(1), np.zeros(1), np.zeros(1), -np.ones(1))
    with pytest.raises(ValueError):
        fold_batchnorm(bn)


def test_fold_is_exact_for_identity():
    bn = BatchNormAffine(np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), 0.0)
    a, c = fold_batchnorm(bn)
    assert a.tolist() == [1.0, 1.0] and c.tolist() == [0.0, 0.0]
    assert math.isclose(float(a[0]), 1.0)
