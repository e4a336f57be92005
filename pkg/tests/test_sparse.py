"""Submanifold sparse convolution against dense oracles."""

import numpy as np
import pytest

from evcl.autodiff import Tape, backward, mse
from evcl.histograms import SparseGrid, to_sparse_grid
from evcl.sparse import (
    RuleBookMismatch,
    SparseConvLayer,
    SparseEncoder,
    build_rulebook,
    sparse_global_pool,
    sparse_relu,
    submanifold_conv,
)

FD_STEP = 1e-5


def _random_grid(rng, width, height, channels, density=0.4):
    """Grid whose active set is an independent Bernoulli mask per pixel."""
    mask = rng.random((height, width)) < density
    img = np.zeros((channels, height, width))
    n = int(mask.sum())
    img[:, mask] = rng.uniform(0.5, 1.5, (channels, n)) * rng.choice([-1.0, 1.0], (channels, n))
    return to_sparse_grid(img)


class TestRuleBook:
    def test_single_site_has_one_pair(self):
        grid = SparseGrid(5, 5, 1, np.array([[2, 2]]), np.ones((1, 1)))
        rb = build_rulebook(grid, 3)
        total = sum(len(ii) for ii, _ in rb.pairs.values())
        assert total == 1
        assert set(rb.pairs) == {(0, 0)}

    def test_adjacent_pair_counts(self):
        """Two horizontally adjacent sites: two self pairs plus one each way."""
        grid = SparseGrid(4, 4, 1, np.array([[1, 1], [1, 2]]), np.ones((2, 1)))
        rb = build_rulebook(grid, 3)
        total = sum(len(ii) for ii, _ in rb.pairs.values())
        assert total == 4
        assert set(rb.pairs) == {(0, 0), (0, -1), (0, 1)}

    def test_dense_grid_pair_count_formula(self):
        """All sites active: pair count per offset is (H-|dy|) * (W-|dx|)."""
        h, w = 4, 5
        img = np.ones((1, h, w))
        rb = build_rulebook(to_sparse_grid(img), 3)
        for (dy, dx), (ii, oi) in rb.pairs.items():
            assert len(ii) == (h - abs(dy)) * (w - abs(dx))
            assert len(ii) == len(oi)
        total = sum(len(ii) for ii, _ in rb.pairs.values())
        expected = sum(
            (h - abs(dy)) * (w - abs(dx)) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
        )
        assert total == expected

    def test_even_kernel_rejected(self):
        grid = SparseGrid(3, 3, 1, np.array([[0, 0]]), np.ones((1, 1)))
        with pytest.raises(ValueError):
            build_rulebook(grid, 2)

    def test_empty_grid(self):
        grid = SparseGrid(6, 6, 2, np.zeros((0, 2)), np.zeros((0, 2)))
        rb = build_rulebook(grid, 3)
        assert rb.pairs == {}
        assert rb.n_sites == 0


class TestSubmanifoldConv:
    def test_identity_kernel_passthrough(self):
        rng = np.random.default_rng(0)
        grid = _random_grid(rng, 6, 6, 3)
        layer = SparseConvLayer(3, 3, 1, rng)
        layer.weight.value[0, 0] = np.eye(3)
        layer.bias.value[:] = 0.0
        rb = build_rulebook(grid, 1)
        tape = Tape()
        out = submanifold_conv(tape, grid, layer, rb)
        np.testing.assert_allclose(out.features.data, grid.features, atol=1e-12)

    def test_matches_dense_correlation_oracle(self):
        """Inactive sites are zero, so a dense correlation over the dense
        image agrees with the rulebook gather at every active site."""
        rng = np.random.default_rng(1)
        for _ in range(10):
            c_in, c_out, k = 2, 3, 3
            grid = _random_grid(rng, 6, 5, c_in, density=rng.uniform(0.2, 0.8))
            if grid.n_sites == 0:
                continue
            layer = SparseConvLayer(c_in, c_out, k, rng)
            layer.bias.value[:] = rng.normal(size=c_out)
            rb = build_rulebook(grid, k)
            tape = Tape()
            out = submanifold_conv(tape, grid, layer, rb)

            img = grid.to_dense()
            r = k // 2
            w = layer.weight.value
            for s, (y, x) in enumerate(grid.sites):
                acc = layer.bias.value.copy()
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        iy, ix = y + dy, x + dx
                        if 0 <= iy < grid.height and 0 <= ix < grid.width:
                            acc += img[:, iy, ix] @ w[dy + r, dx + r]
                np.testing.assert_allclose(out.features.data[s], acc, atol=1e-9)

    def test_preserves_active_set_despite_bias(self):
        """Submanifold outputs live on the input sites only; a non-zero bias
        must not light up inactive pixels in the dense render."""
        rng = np.random.default_rng(2)
        grid = _random_grid(rng, 7, 7, 2, density=0.3)
        layer = SparseConvLayer(2, 4, 3, rng)
        layer.bias.value[:] = 5.0
        out = submanifold_conv(Tape(), grid, layer, build_rulebook(grid, 3))
        np.testing.assert_array_equal(out.sites, grid.sites)
        dense = out.to_dense()
        inactive = np.ones((grid.height, grid.width), dtype=bool)
        inactive[grid.sites[:, 0], grid.sites[:, 1]] = False
        assert np.all(dense[:, inactive] == 0.0)

    def test_empty_grid_forward(self):
        rng = np.random.default_rng(3)
        grid = SparseGrid(6, 6, 2, np.zeros((0, 2)), np.zeros((0, 2)))
        layer = SparseConvLayer(2, 4, 3, rng)
        tape = Tape()
        out = submanifold_conv(tape, grid, layer, build_rulebook(grid, 3))
        assert out.n_sites == 0
        pooled = sparse_global_pool(tape, out)
        np.testing.assert_array_equal(pooled.data, np.zeros(4))

    def test_rulebook_mismatch_errors(self):
        rng = np.random.default_rng(4)
        grid_a = _random_grid(rng, 6, 6, 2)
        grid_b = _random_grid(rng, 6, 6, 2)
        assert not np.array_equal(grid_a.sites, grid_b.sites)
        layer = SparseConvLayer(2, 3, 3, rng)
        with pytest.raises(RuleBookMismatch):
            submanifold_conv(Tape(), grid_b, layer, build_rulebook(grid_a, 3))
        with pytest.raises(RuleBookMismatch):
            submanifold_conv(Tape(), grid_a, layer, build_rulebook(grid_a, 5))
        bad_channels = SparseConvLayer(3, 3, 3, rng)
        with pytest.raises(RuleBookMismatch):
            submanifold_conv(Tape(), grid_a, bad_channels, build_rulebook(grid_a, 3))


class TestGradients:
    def _loss(self, encoder, grid, target):
        tape = Tape()
        rb = build_rulebook(grid, encoder.kernel_size)
        h = sparse_relu(tape, submanifold_conv(tape, grid, encoder.conv1, rb))
        h = sparse_relu(tape, submanifold_conv(tape, h, encoder.conv2, rb))
        pooled = sparse_global_pool(tape, h).reshape((1, -1))
        out = pooled @ tape.leaf(encoder.fc_w) + tape.leaf(encoder.fc_b)
        return mse(out, target)

    def test_finite_differences_through_two_layers(self):
        rng = np.random.default_rng(5)
        encoder = SparseEncoder(rng, in_channels=2, conv_channels=(3, 4), feature_dim=5)
        grid = _random_grid(rng, 6, 6, 2, density=0.5)
        target = rng.normal(size=(1, 5))

        for param in encoder.params():
            param.grad[:] = 0.0
        loss = self._loss(encoder, grid, target)
        backward(loss)

        for param in encoder.params():
            flat = param.value.reshape(-1)
            gflat = param.grad.reshape(-1)
            idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + FD_STEP
                up = self._loss(encoder, grid, target).data.item()
                flat[i] = orig - FD_STEP
                down = self._loss(encoder, grid, target).data.item()
                flat[i] = orig
                numeric = (up - down) / (2 * FD_STEP)
                denom = max(abs(numeric), abs(gflat[i]), 1e-8)
                assert abs(numeric - gflat[i]) / denom < 1e-4

    def test_encode_batch_shape_and_determinism(self):
        rng = np.random.default_rng(6)
        encoder = SparseEncoder(rng, conv_channels=(4, 4), feature_dim=8)
        grids = [_random_grid(rng, 8, 8, 2) for _ in range(3)]
        out1 = encoder.encode_batch(Tape(), grids).data
        out2 = encoder.encode_batch(Tape(), grids).data
        assert out1.shape == (3, 8)
        np.testing.assert_array_equal(out1, out2)
        with pytest.raises(ValueError):
            encoder.encode_batch(Tape(), [])
