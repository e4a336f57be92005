"""Submanifold sparse convolution over active-site grids.

A convolution step never creates new active sites: outputs live exactly on
the input's active set, and each output gathers only from active inputs
under the kernel footprint. Gather/scatter index pairs are precomputed per
kernel offset in a RuleBook so the arithmetic is a handful of small matmuls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tape, Tensor
from .histograms import SparseGrid


class RuleBookMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RuleBook:
    """Per-offset (input_index, output_index) pairs for one active-site set."""

    kernel_size: int
    width: int
    height: int
    sites: np.ndarray
    pairs: dict  # (dy, dx) -> (in_idx, out_idx), row-major offset order

    @property
    def n_sites(self) -> int:
        return len(self.sites)


def build_rulebook(grid: SparseGrid, kernel_size: int) -> RuleBook:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
    r = kernel_size // 2
    h, w = grid.height, grid.width
    sites = grid.sites
    lut = np.full(h * w, -1, dtype=np.int64)
    lut[sites[:, 0] * w + sites[:, 1]] = np.arange(len(sites))
    pairs = {}
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            iy = sites[:, 0] + dy
            ix = sites[:, 1] + dx
            valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
            out_idx = np.nonzero(valid)[0]
            in_idx = lut[iy[valid] * w + ix[valid]]
            present = in_idx >= 0
            if present.any():
                pairs[(dy, dx)] = (in_idx[present], out_idx[present])
    return RuleBook(kernel_size, w, h, sites, pairs)


class SparseConvLayer:
    """Weights for one submanifold convolution: (k, k, C_in, C_out) + bias."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = kernel_size * kernel_size * in_channels
        self.weight = Parameter(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), (kernel_size, kernel_size, in_channels, out_channels))
        )
        self.bias = Parameter(np.zeros(out_channels))

    def params(self):
        return [self.weight, self.bias]


def _features_tensor(tape: Tape, grid: SparseGrid) -> Tensor:
    f = grid.features
    if isinstance(f, Tensor):
        if f.tape is not tape:
            raise ValueError("grid features recorded on a different tape")
        return f
    return tape.const(f)


def submanifold_conv(tape: Tape, grid: SparseGrid, layer: SparseConvLayer, rulebook: RuleBook) -> SparseGrid:
    """Apply `layer` on `grid`'s active sites; returns a grid on the same sites."""
    if (
        rulebook.width != grid.width
        or rulebook.height != grid.height
        or not np.array_equal(rulebook.sites, grid.sites)
    ):
        raise RuleBookMismatch("rulebook was built for a different active-site set")
    if rulebook.kernel_size != layer.kernel_size:
        raise RuleBookMismatch(
            f"rulebook kernel {rulebook.kernel_size} != layer kernel {layer.kernel_size}"
        )
    if grid.channels != layer.in_channels:
        raise RuleBookMismatch(
            f"grid has {grid.channels} channels, layer expects {layer.in_channels}"
        )
    x = _features_tensor(tape, grid)
    wt = tape.leaf(layer.weight)
    bt = tape.leaf(layer.bias)
    n = grid.n_sites
    r = layer.kernel_size // 2
    x_data, w_data, b_data = x.data, wt.data, bt.data
    offsets = [(dy + r, dx + r, ii, oi) for (dy, dx), (ii, oi) in rulebook.pairs.items()]

    out = np.broadcast_to(b_data, (n, layer.out_channels)).copy()
    for ky, kx, ii, oi in offsets:
        out[oi] += x_data[ii] @ w_data[ky, kx]

    def backward(g):
        gx = np.zeros_like(x_data)
        gw = np.zeros_like(w_data)
        for ky, kx, ii, oi in offsets:
            go = g[oi]
            gw[ky, kx] += x_data[ii].T @ go
            gx[ii] += go @ w_data[ky, kx].T
        return (gx, gw, g.sum(axis=0))

    out_t = tape.record(out, (x, wt, bt), backward)
    return SparseGrid(grid.width, grid.height, layer.out_channels, grid.sites, out_t)


def sparse_relu(tape: Tape, grid: SparseGrid) -> SparseGrid:
    f = _features_tensor(tape, grid)
    return SparseGrid(grid.width, grid.height, grid.channels, grid.sites, f.relu())


def sparse_global_pool(tape: Tape, grid: SparseGrid) -> Tensor:
    """Mean feature over active sites, (C,); zero vector when nothing is active."""
    if grid.n_sites == 0:
        return tape.const(np.zeros(grid.channels))
    return _features_tensor(tape, grid).mean_rows()


class SparseEncoder:
    """Two submanifold conv layers, global mean pool, and a linear projection."""

    def __init__(self, rng, in_channels: int = 2, conv_channels=(16, 32), feature_dim: int = 64, kernel_size: int = 3):
        c1, c2 = conv_channels
        self.conv1 = SparseConvLayer(in_channels, c1, kernel_size, rng)
        self.conv2 = SparseConvLayer(c1, c2, kernel_size, rng)
        self.fc_w = Parameter(rng.normal(0.0, np.sqrt(2.0 / c2), (c2, feature_dim)))
        self.fc_b = Parameter(np.zeros(feature_dim))
        self.feature_dim = feature_dim
        self.kernel_size = kernel_size

    def params(self):
        return self.conv1.params() + self.conv2.params() + [self.fc_w, self.fc_b]

    def forward(self, tape: Tape, grid: SparseGrid) -> Tensor:
        """Encode one grid into a (1, feature_dim) row."""
        rb = build_rulebook(grid, self.kernel_size)
        h = sparse_relu(tape, submanifold_conv(tape, grid, self.conv1, rb))
        h = sparse_relu(tape, submanifold_conv(tape, h, self.conv2, rb))
        pooled = sparse_global_pool(tape, h).reshape((1, -1))
        return pooled @ tape.leaf(self.fc_w) + tape.leaf(self.fc_b)

    def encode_batch(self, tape: Tape, grids) -> Tensor:
        """Stack per-grid encodings into an (n, feature_dim) tensor."""
        from .autodiff import concat

        rows = [self.forward(tape, g) for g in grids]
        if not rows:
            raise ValueError("encode_batch of no grids")
        return concat(rows, axis=0) if len(rows) > 1 else rows[0]
