import numpy as np
import pytest

from blocksparse.bcsc import BlockMask
from blocksparse.mlp import MaskedMatrix, SparseMlp, mlp_backward, mlp_forward
from blocksparse.pruner import apply_mask, generate_masks

from oracles import central_diff, gated_mlp_f64, rel_err

SILU_1 = 0.7310585786300049  # 1 / (1 + e^-1)


def build_mlp(rng, e, h, b, sparsity=0.0):
    """SparseMlp with random weights, optionally pruned to a target sparsity."""
    mlp = SparseMlp.create(e, h, b, rng)
    if sparsity > 0.0:
        for mat in mlp.matrices():
            g = rng.standard_normal(mat.dense.shape).astype(np.float32)
            mask, _ = generate_masks(mat.dense, g, b, sparsity)
            mat.mask = mask
            mat.dense, mat.cache = apply_mask(mat.dense, mask, b)
    return mlp


def mlp_from_dense(wg, wu, wd, b):
    mlp = SparseMlp(
        gate=MaskedMatrix.dense_init(wg, b),
        up=MaskedMatrix.dense_init(wu, b),
        down=MaskedMatrix.dense_init(wd, b),
    )
    return mlp


class TestForward:
    def test_zero_weights_zero_output(self):
        z = np.zeros((8, 8), dtype=np.float32)
        mlp = mlp_from_dense(z, z, z, 4)
        x = np.random.default_rng(0).standard_normal((5, 8)).astype(np.float32)
        y, _ = mlp_forward(x, mlp)
        np.testing.assert_array_equal(y, np.zeros((5, 8)))

    def test_identity_weights_hand_value(self):
        e = 8
        eye = np.eye(e, dtype=np.float32)
        mlp = mlp_from_dense(eye, eye, eye, 4)
        y, _ = mlp_forward(eye, mlp)
        expected = np.diag(np.full(e, SILU_1)).astype(np.float64)
        assert rel_err(y, expected) <= 1e-6

    def test_random_matches_dense_composition(self):
        rng = np.random.default_rng(1)
        mlp = build_mlp(rng, 8, 16, 4, sparsity=0.5)
        x = rng.standard_normal((10, 8)).astype(np.float32)
        y, acts = mlp_forward(x, mlp)
        ref = gated_mlp_f64(x, mlp.gate.dense, mlp.up.dense, mlp.down.dense)
        assert rel_err(y, ref) <= 1e-5
        np.testing.assert_array_equal(acts.x, x)
        assert acts.gate_pre.shape == (10, 16)

    @pytest.mark.parametrize("seed", range(6))
    def test_random_sweep(self, seed):
        rng = np.random.default_rng(100 + seed)
        e = int(rng.integers(2, 33))
        h = int(rng.integers(2, 33))
        b = int(rng.integers(1, 9))
        sparsity = float(rng.choice([0.0, 0.3, 0.6]))
        mlp = build_mlp(rng, e, h, b, sparsity)
        x = rng.standard_normal((int(rng.integers(1, 12)), e)).astype(np.float32)
        y, _ = mlp_forward(x, mlp)
        ref = gated_mlp_f64(x, mlp.gate.dense, mlp.up.dense, mlp.down.dense)
        assert rel_err(y, ref) <= 1e-5

    def test_shape_mismatch(self):
        mlp = build_mlp(np.random.default_rng(2), 8, 8, 4)
        with pytest.raises(ValueError, match="feature dim"):
            mlp_forward(np.ones((3, 9), dtype=np.float32), mlp)

    def test_forward_uses_masked_weights_only(self):
        rng = np.random.default_rng(3)
        mlp = build_mlp(rng, 16, 16, 4, sparsity=0.75)
        # clobber the dense master outside the mask; cache must not see it
        x = rng.standard_normal((4, 16)).astype(np.float32)
        y1, _ = mlp_forward(x, mlp)
        ref = gated_mlp_f64(x, mlp.gate.dense, mlp.up.dense, mlp.down.dense)
        assert rel_err(y1, ref) <= 1e-5


class TestBackward:
    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(4)
        mlp = build_mlp(rng, 8, 8, 4, sparsity=0.5)
        x = rng.standard_normal((5, 8)).astype(np.float32)
        _, acts = mlp_forward(x, mlp)
        dx, dg, du, dd = mlp_backward(np.zeros((5, 8), dtype=np.float32), acts, mlp)
        for g in (dx, dg, du, dd):
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_scalar_network_hand_chain_rule(self):
        x, w1, w2, w3 = 0.7, 0.9, -1.1, 1.3
        mlp = mlp_from_dense(
            np.array([[w1]], dtype=np.float32),
            np.array([[w2]], dtype=np.float32),
            np.array([[w3]], dtype=np.float32),
            1,
        )
        _, acts = mlp_forward(np.array([[x]], dtype=np.float32), mlp)
        dx, dg, du, dd = mlp_backward(np.array([[1.0]], dtype=np.float32), acts, mlp)

        # chain rule written out by hand
        a = x * w1
        sig = 1.0 / (1.0 + np.exp(-a))
        s = a * sig
        bb = x * w2
        g = s * bb
        ds = w3 * bb
        dbb = w3 * s
        da = ds * sig * (1.0 + a * (1.0 - sig))
        exp_dw3 = g
        exp_dw1 = x * da
        exp_dw2 = x * dbb
        exp_dx = da * w1 + dbb * w2

        assert dd[0, 0] == pytest.approx(exp_dw3, rel=1e-6)
        assert dg[0, 0] == pytest.approx(exp_dw1, rel=1e-6)
        assert du[0, 0] == pytest.approx(exp_dw2, rel=1e-6)
        assert dx[0, 0] == pytest.approx(exp_dx, rel=1e-6)

    @pytest.mark.parametrize("seed,sparsity", [(0, 0.0), (1, 0.5), (2, 0.75)])
    def test_grads_match_finite_differences(self, seed, sparsity):
        rng = np.random.default_rng(200 + seed)
        e = int(rng.integers(2, 17))
        h = int(rng.integers(2, 17))
        b = int(rng.integers(1, 5))
        mlp = build_mlp(rng, e, h, b, sparsity)
        x = rng.standard_normal((4, e)).astype(np.float32)
        y, acts = mlp_forward(x, mlp)
        # loss = 0.5 * ||Y||^2, so upstream gradient is Y itself
        dx, dg, du, dd = mlp_backward(y, acts, mlp)

        wg, wu, wd = (m.dense.astype(np.float64) for m in mlp.matrices())
        x64 = x.astype(np.float64)

        def loss_wrt(name):
            def f(arr):
                args = {"x": x64, "wg": wg, "wu": wu, "wd": wd}
                args[name] = arr
                out = gated_mlp_f64(args["x"], args["wg"], args["wu"], args["wd"])
                return 0.5 * float(np.sum(out * out))
            return f

        for got, name, point in ((dx, "x", x64), (dg, "wg", wg),
                                 (du, "wu", wu), (dd, "wd", wd)):
            fd = central_diff(loss_wrt(name), point.copy(), h=1e-3)
            assert rel_err(got, fd) <= 1e-3, name

    def test_weight_grads_are_dense_over_pruned_blocks(self):
        rng = np.random.default_rng(5)
        mlp = build_mlp(rng, 16, 16, 4, sparsity=0.5)
        x = rng.standard_normal((6, 16)).astype(np.float32)
        y, acts = mlp_forward(x, mlp)
        _, dg, _, _ = mlp_backward(y, acts, mlp)
        from blocksparse.bcsc import expand_mask
        inactive = ~mlp.gate.mask.active
        assert inactive.any()
        # the full-grid gradient is not structurally zeroed where weights are pruned
        pruned_entries = dg[expand_mask(inactive, 4, 16, 16)]
        assert np.any(pruned_entries != 0.0)

    def test_missing_activations(self):
        mlp = build_mlp(np.random.default_rng(6), 8, 8, 4)
        with pytest.raises(ValueError, match="saved activations"):
            mlp_backward(np.ones((2, 8), dtype=np.float32), None, mlp)

    def test_bad_upstream_shape(self):
        rng = np.random.default_rng(7)
        mlp = build_mlp(rng, 8, 8, 4)
        x = rng.standard_normal((3, 8)).astype(np.float32)
        _, acts = mlp_forward(x, mlp)
        with pytest.raises(ValueError, match="dY shape"):
            mlp_backward(np.ones((4, 8), dtype=np.float32), acts, mlp)
