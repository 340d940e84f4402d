import numpy as np
import pytest

from blocksparse import bcsc
from blocksparse.bench import random_bcsc
from blocksparse.kernels import (
    apply_nonlinearity,
    bspmm,
    bspmm_fused,
    bspmm_rt,
    flops,
    gelu,
    relu,
    sigmoid,
    silu,
    silu_grad,
)

from oracles import matmul_triple, rel_err


def masked_random(rng, rows, cols, b, sparsity):
    w = random_bcsc(rows, cols, b, sparsity, rng)
    return w, w.to_dense()


class TestBspmm:
    def test_block_diagonal_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((6, 8)).astype(np.float32)
        w = bcsc.from_dense(np.eye(8, dtype=np.float32), 4)
        np.testing.assert_array_equal(bspmm(x, w), x)

    def test_empty_matrix_gives_zero(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((5, 8)).astype(np.float32)
        w = bcsc.from_dense(np.zeros((8, 12), dtype=np.float32), 4)
        assert w.nnzb == 0
        np.testing.assert_array_equal(bspmm(x, w), np.zeros((5, 12), dtype=np.float32))

    def test_random_case_vs_triple_loop(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((16, 8)).astype(np.float32)
        w, wd = masked_random(rng, 8, 12, 4, 0.5)
        ref = matmul_triple(x.astype(np.float64), wd.astype(np.float64))
        assert rel_err(bspmm(x, w), ref) <= 1e-5

    @pytest.mark.parametrize("b", [1, 2, 4, 8, 16])
    @pytest.mark.parametrize("sparsity", [0.0, 0.5, 0.9, 1.0])
    def test_oracle_equivalence_sweep(self, b, sparsity):
        rng = np.random.default_rng(hash((b, sparsity)) % 2**32)
        for _ in range(12):
            m = int(rng.integers(1, 65))
            k = int(rng.integers(1, 65))
            n = int(rng.integers(1, 65))
            x = rng.standard_normal((m, k)).astype(np.float32)
            w, wd = masked_random(rng, k, n, b, sparsity)
            ref = matmul_triple(x.astype(np.float64), wd.astype(np.float64))
            assert rel_err(bspmm(x, w), ref) <= 1e-5

    def test_linearity(self):
        rng = np.random.default_rng(3)
        w, _ = masked_random(rng, 24, 16, 4, 0.5)
        x1 = rng.standard_normal((10, 24)).astype(np.float32)
        x2 = rng.standard_normal((10, 24)).astype(np.float32)
        a, b_ = np.float32(0.7), np.float32(-1.3)
        lhs = bspmm(a * x1 + b_ * x2, w)
        rhs = a * bspmm(x1, w) + b_ * bspmm(x2, w)
        assert rel_err(lhs, rhs) <= 1e-4

    def test_deterministic_repeat_calls(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((64, 48)).astype(np.float32)
        w, _ = masked_random(rng, 48, 40, 8, 0.4)
        y1, y2 = bspmm(x, w), bspmm(x, w)
        assert np.array_equal(y1.view(np.uint32), y2.view(np.uint32))

    def test_blk_m_tiling_matches_default(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((30, 16)).astype(np.float32)
        w, wd = masked_random(rng, 16, 16, 4, 0.3)
        base = bspmm(x, w)
        ref = matmul_triple(x.astype(np.float64), wd.astype(np.float64))
        for blk_m in (1, 7, 16, 64):
            assert rel_err(bspmm(x, w, blk_m=blk_m), ref) <= 1e-5
        assert rel_err(base, ref) <= 1e-5

    def test_dimension_mismatch(self):
        w = bcsc.from_dense(np.eye(8, dtype=np.float32), 4)
        with pytest.raises(ValueError, match="mismatch"):
            bspmm(np.ones((3, 9), dtype=np.float32), w)

    def test_unpadded_boundary_dims(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((9, 13)).astype(np.float32)
        dense = rng.standard_normal((13, 11)).astype(np.float32)
        w = bcsc.from_dense(dense, 4)
        ref = matmul_triple(x.astype(np.float64), dense.astype(np.float64))
        assert rel_err(bspmm(x, w), ref) <= 1e-5


class TestFused:
    def test_none_is_plain_bspmm(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((8, 16)).astype(np.float32)
        w, _ = masked_random(rng, 16, 12, 4, 0.4)
        np.testing.assert_array_equal(bspmm_fused(x, w, "none"), bspmm(x, w))

    def test_relu_clamps_negatives(self):
        x = np.array([[1.0, -1.0]], dtype=np.float32)
        w = bcsc.from_dense(np.diag([1.0, 1.0]).astype(np.float32), 1)
        y = bspmm_fused(x, w, "relu")
        np.testing.assert_array_equal(y, [[1.0, 0.0]])
        assert bspmm(x, w)[0, 1] < 0.0

    @pytest.mark.parametrize("f", ["relu", "gelu", "silu"])
    def test_fusion_transparency_exact(self, f):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((12, 20)).astype(np.float32)
        w, _ = masked_random(rng, 20, 16, 4, 0.5)
        fused = bspmm_fused(x, w, f)
        mapped = apply_nonlinearity(bspmm(x, w), f)
        assert np.array_equal(fused, mapped)

    def test_silu_matches_scalar_reference(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((10, 8)).astype(np.float32)
        w, wd = masked_random(rng, 8, 8, 4, 0.5)
        ref = matmul_triple(x.astype(np.float64), wd.astype(np.float64))
        ref = ref / (1.0 + np.exp(-ref))
        assert rel_err(bspmm_fused(x, w, "silu"), ref) <= 1e-5

    def test_unknown_nonlinearity(self):
        w = bcsc.from_dense(np.eye(4, dtype=np.float32), 2)
        with pytest.raises(ValueError, match="unknown nonlinearity"):
            bspmm_fused(np.ones((2, 4), dtype=np.float32), w, "tanh")


class TestTransposedProduct:
    @pytest.mark.parametrize("sparsity", [0.0, 0.5, 0.9])
    def test_matches_dense_transpose(self, sparsity):
        rng = np.random.default_rng(10)
        for _ in range(8):
            k = int(rng.integers(1, 40))
            n = int(rng.integers(1, 40))
            m = int(rng.integers(1, 20))
            b = int(rng.integers(1, 7))
            w, wd = masked_random(rng, k, n, b, sparsity)
            x = rng.standard_normal((m, n)).astype(np.float32)
            ref = matmul_triple(x.astype(np.float64), wd.T.astype(np.float64))
            assert rel_err(bspmm_rt(x, w), ref) <= 1e-5

    def test_dimension_mismatch(self):
        w = bcsc.from_dense(np.eye(8, dtype=np.float32), 4)
        with pytest.raises(ValueError, match="mismatch"):
            bspmm_rt(np.ones((3, 9), dtype=np.float32), w)


class TestActivations:
    def test_silu_at_one(self):
        assert abs(silu(np.array([1.0]))[0] - 0.7310585786300049) < 1e-12

    def test_sigmoid_extremes_stable(self):
        # split form never evaluates exp on large positive arguments
        with np.errstate(over="raise"):
            s = sigmoid(np.array([-500.0, 0.0, 500.0]))
        assert 0.0 <= s[0] < 1e-100
        assert s[1] == 0.5
        assert s[2] == 1.0

    def test_silu_grad_matches_difference_quotient(self):
        x = np.linspace(-4, 4, 33)
        h = 1e-6
        fd = (silu(x + h) - silu(x - h)) / (2 * h)
        np.testing.assert_allclose(silu_grad(x), fd, atol=1e-8)

    def test_gelu_reference_points(self):
        # tanh-form gelu: gelu(0) = 0, gelu(1) ~ 0.8412, odd-symmetric tail
        assert gelu(np.array([0.0]))[0] == 0.0
        assert abs(gelu(np.array([1.0]))[0] - 0.841192) < 1e-5
        assert gelu(np.array([10.0]))[0] == pytest.approx(10.0, abs=1e-5)

    def test_relu(self):
        np.testing.assert_array_equal(relu(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])


class TestFlops:
    def test_full_grid_equals_dense(self):
        k, n, b = 32, 48, 8
        nnzb = (k // b) * (n // b)
        dense, sparse = flops(16, n, k, nnzb, b)
        assert sparse == dense

    def test_empty_is_zero(self):
        assert flops(16, 32, 32, 0, 8)[1] == 0

    def test_worked_value(self):
        dense, sparse = flops(1024, 4096, 1024, 16, 128)
        assert sparse == 536_870_912
        assert dense == 2 * 1024 * 4096 * 1024
