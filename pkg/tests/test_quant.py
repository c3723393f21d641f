"""quantize / gemm_q8 / requantize against exact-arithmetic oracles."""

from fractions import Fraction

import numpy as np
import pytest

from vitaccel.quant import (
    AccTensor,
    QuantError,
    QuantTensor,
    gemm_q8,
    quantize,
    requantize,
)


def rne_oracle(x: Fraction) -> int:
    """Round-half-even in exact rational arithmetic (Python round on
    Fraction is banker's rounding)."""
    return int(round(x))


class TestQuantize:
    def test_zero_maps_to_zero_point(self):
        assert quantize(np.array([0.0]), 0.1, 0).data.tolist() == [0]
        assert quantize(np.array([0.0]), 0.1, 5).data.tolist() == [5]

    def test_boundary_saturation(self):
        assert quantize(np.array([12.7]), 0.1).data.tolist() == [127]
        assert quantize(np.array([1e9]), 0.1).data.tolist() == [127]
        assert quantize(np.array([-1e9]), 0.1).data.tolist() == [-128]

    def test_round_to_nearest_even_oracle(self):
        # 0.26 / 0.1 = 2.6 exactly in rational arithmetic, rounds to 3
        assert rne_oracle(Fraction(26, 100) / Fraction(1, 10)) == 3
        assert quantize(np.array([0.26]), 0.1).data.tolist() == [3]

    def test_half_even_ties(self):
        # exact .5 quotients settle on the even neighbour
        out = quantize(np.array([0.5, 1.5, 2.5, -0.5, -1.5]), 1.0)
        assert out.data.tolist() == [0, 2, 2, 0, -2]

    def test_rejects_non_finite(self):
        with pytest.raises(QuantError):
            quantize(np.array([np.nan]), 0.1)
        with pytest.raises(QuantError):
            quantize(np.array([np.inf]), 0.1)

    def test_rejects_bad_scale(self):
        with pytest.raises(QuantError):
            quantize(np.array([1.0]), 0.0)
        with pytest.raises(QuantError):
            quantize(np.array([1.0]), -1.0)

    def test_monotone_in_input(self, rng):
        x = np.sort(rng.uniform(-20, 20, 400))
        q = quantize(x, 0.07).data
        assert np.all(np.diff(q.astype(int)) >= 0)

    def test_roundtrip_error_bound(self, rng):
        # dequantize(quantize(x)) within scale/2 of clamp(x)
        scale = 0.05
        x = rng.uniform(-127 * scale, 127 * scale, 300)
        back = quantize(x, scale).dequantize()
        assert np.max(np.abs(back - x)) <= scale / 2 + 1e-12


def gemm_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive triple loop over Python ints."""
    n, d = a.shape
    d2, m = b.shape
    assert d == d2
    out = np.zeros((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            s = 0
            for t in range(d):
                s += int(a[i, t]) * int(b[t, j])
            out[i, j] = s
    return out


class TestGemm:
    def test_1x1(self):
        a = QuantTensor(np.array([[2]], dtype=np.int8), 1.0)
        b = QuantTensor(np.array([[3]], dtype=np.int8), 1.0)
        out = gemm_q8(a, b)
        assert out.data.tolist() == [[6]]
        assert out.scale == 1.0

    def test_identity_widens(self, rng):
        a = QuantTensor(rng.integers(-127, 128, (4, 4), dtype=np.int8), 0.3)
        eye = QuantTensor(np.eye(4, dtype=np.int8), 1.0)
        out = gemm_q8(a, eye)
        assert out.data.dtype == np.int32
        assert np.array_equal(out.data, a.data.astype(np.int32))
        assert out.scale == pytest.approx(0.3)

    def test_random_5x7x3_matches_triple_loop(self):
        r = np.random.default_rng(42)
        a = QuantTensor(r.integers(-128, 128, (5, 7), dtype=np.int8), 0.1)
        b = QuantTensor(r.integers(-128, 128, (7, 3), dtype=np.int8), 0.2)
        out = gemm_q8(a, b)
        assert np.array_equal(out.data, gemm_oracle(a.data, b.data).astype(np.int32))
        assert out.scale == pytest.approx(0.02)

    @pytest.mark.parametrize("seed", range(12))
    def test_property_matches_oracle_dims_up_to_32(self, seed):
        r = np.random.default_rng(seed)
        n, d, m = (int(r.integers(1, 33)) for _ in range(3))
        a = QuantTensor(r.integers(-128, 128, (n, d), dtype=np.int8), 0.5)
        b = QuantTensor(r.integers(-128, 128, (d, m), dtype=np.int8), 0.25)
        out = gemm_q8(a, b)
        assert np.array_equal(out.data.astype(np.int64), gemm_oracle(a.data, b.data))

    def test_shape_mismatch(self):
        a = QuantTensor(np.zeros((2, 3), dtype=np.int8), 1.0)
        b = QuantTensor(np.zeros((4, 2), dtype=np.int8), 1.0)
        with pytest.raises(QuantError):
            gemm_q8(a, b)

    def test_nonzero_zero_point_rejected(self):
        a = QuantTensor(np.zeros((1, 1), dtype=np.int8), 1.0, zero_point=3)
        b = QuantTensor(np.zeros((1, 1), dtype=np.int8), 1.0)
        with pytest.raises(QuantError):
            gemm_q8(a, b)

    def test_inner_dim_overflow_guard(self):
        a = QuantTensor(np.zeros((1, 4097), dtype=np.int8), 1.0)
        b = QuantTensor(np.zeros((4097, 1), dtype=np.int8), 1.0)
        with pytest.raises(QuantError):
            gemm_q8(a, b)

    def test_accumulator_bound(self):
        # worst case at the inner-dim bound stays inside int32
        a = QuantTensor(np.full((1, 4096), 127, dtype=np.int8), 1.0)
        b = QuantTensor(np.full((4096, 1), 127, dtype=np.int8), 1.0)
        out = gemm_q8(a, b)
        assert out.data[0, 0] == 4096 * 127 * 127 < 2**31

    def test_dequantized_gemm_exact_with_pow2_scales(self, rng):
        # with power-of-two scales every dequantized product and sum is
        # exactly representable, so integer and float GEMM agree to the bit
        a = QuantTensor(rng.integers(-128, 128, (6, 9), dtype=np.int8), 2.0**-4)
        b = QuantTensor(rng.integers(-128, 128, (9, 5), dtype=np.int8), 2.0**-3)
        out = gemm_q8(a, b)
        float_gemm = a.dequantize() @ b.dequantize()
        assert np.array_equal(out.dequantize(), float_gemm)


class TestRequantize:
    def test_zero(self):
        acc = AccTensor(np.array([[0]], dtype=np.int32), 0.5)
        assert requantize(acc, 1.0).data.tolist() == [[0]]

    def test_rescale_oracle(self):
        # 100 * 0.01 / 1.0 = 1 exactly in rationals
        acc = AccTensor(np.array([[100]], dtype=np.int32), 0.01)
        expected = rne_oracle(Fraction(100) * Fraction(0.01) / Fraction(1))
        assert expected == 1
        assert requantize(acc, 1.0).data.tolist() == [[1]]

    def test_saturation(self):
        acc = AccTensor(np.array([[10**6]], dtype=np.int32), 1.0)
        assert requantize(acc, 1.0).data.tolist() == [[127]]
        acc = AccTensor(np.array([[-(10**6)]], dtype=np.int32), 1.0)
        assert requantize(acc, 1.0).data.tolist() == [[-128]]

    def test_matches_exact_rational_oracle(self, rng):
        acc_scale, out_scale = 0.125, 0.75
        vals = rng.integers(-30000, 30000, 200, dtype=np.int32)
        acc = AccTensor(vals, acc_scale)
        got = requantize(acc, out_scale).data.astype(int)
        ratio = Fraction(acc_scale) / Fraction(out_scale)
        want = [max(-128, min(127, rne_oracle(int(v) * ratio))) for v in vals]
        assert got.tolist() == want

    def test_monotone_in_acc(self, rng):
        vals = np.sort(rng.integers(-50000, 50000, 300, dtype=np.int32))
        out = requantize(AccTensor(vals, 0.003), 0.9).data.astype(int)
        assert np.all(np.diff(out) >= 0)

    def test_scale_product_passthrough(self):
        a = QuantTensor(np.array([[10]], dtype=np.int8), 0.25)
        b = QuantTensor(np.array([[12]], dtype=np.int8), 0.5)
        acc = gemm_q8(a, b)
        assert acc.scale == pytest.approx(0.125)
        # 120 * 0.125 / 0.5 = 30
        assert requantize(acc, 0.5).data.tolist() == [[30]]
