"""Polarity histograms and their sparse active-site representation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventStream


@dataclass(frozen=True)
class PolarityHistogram:
    """Per-pixel event counts split by polarity.

    counts has shape (2, height, width): channel 0 counts +1 events,
    channel 1 counts -1 events.
    """

    width: int
    height: int
    counts: np.ndarray

    def __post_init__(self):
        if self.counts.shape != (2, self.height, self.width):
            raise ValueError(
                f"counts shape {self.counts.shape} != (2, {self.height}, {self.width})"
            )
        if (self.counts < 0).any():
            raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def build_histogram(window: EventStream) -> PolarityHistogram:
    """Count events per pixel, split into increase/decrease channels."""
    w, h = window.width, window.height
    flat = window.y * w + window.x
    pos = window.polarity == 1
    counts = np.stack(
        [
            np.bincount(flat[pos], minlength=h * w).reshape(h, w),
            np.bincount(flat[~pos], minlength=h * w).reshape(h, w),
        ]
    ).astype(np.int64)
    return PolarityHistogram(w, h, counts)


def normalize_histogram(hist: PolarityHistogram, clip: int = 8) -> np.ndarray:
    """Map each count c to min(c, clip)/clip, giving a float image in [0, 1]."""
    if clip < 1:
        raise ValueError(f"clip must be >= 1, got {clip}")
    return np.minimum(hist.counts, clip).astype(np.float64) / clip


@dataclass
class SparseGrid:
    """Active pixel sites with their channel vectors.

    sites is an (n, 2) array of (y, x) coordinates in strictly increasing
    row-major order; features holds one channel-length vector per site and
    may be a plain array or an autodiff tensor during training.
    """

    width: int
    height: int
    channels: int
    sites: np.ndarray
    features: object

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=np.int64).reshape(-1, 2)
        n = len(self.sites)
        if n:
            ys, xs = self.sites[:, 0], self.sites[:, 1]
            if ys.min() < 0 or ys.max() >= self.height or xs.min() < 0 or xs.max() >= self.width:
                raise ValueError("site coordinates out of bounds")
            flat = ys * self.width + xs
            if not (np.diff(flat) > 0).all():
                raise ValueError("sites must be sorted by (y, x) and unique")
        if self._feature_array().shape != (n, self.channels):
            raise ValueError(
                f"features shape {self._feature_array().shape} != ({n}, {self.channels})"
            )

    def _feature_array(self) -> np.ndarray:
        data = getattr(self.features, "data", self.features)
        return np.asarray(data)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def to_dense(self) -> np.ndarray:
        """Materialize a (channels, height, width) image, zeros at inactive sites."""
        img = np.zeros((self.channels, self.height, self.width))
        if self.n_sites:
            img[:, self.sites[:, 0], self.sites[:, 1]] = self._feature_array().T
        return img


def to_sparse_grid(img: np.ndarray) -> SparseGrid:
    """Collect exactly the pixels where any channel is non-zero.

    densify(to_sparse_grid(img)) reproduces img exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    channels, height, width = img.shape
    mask = (img != 0).any(axis=0)
    sites = np.argwhere(mask)  # row-major order, already sorted by (y, x)
    features = img[:, sites[:, 0], sites[:, 1]].T.copy() if len(sites) else np.zeros((0, channels))
    return SparseGrid(width, height, channels, sites, features)


def densify(grid: SparseGrid) -> np.ndarray:
    return grid.to_dense()


def save_pgm(hist: PolarityHistogram, base_path) -> tuple[Path, Path]:
    """Dump each polarity channel as an ASCII PGM for visual inspection."""
    base = Path(base_path)
    peak = max(1, int(hist.counts.max()))
    out = []
    for ch, name in ((0, "pos"), (1, "neg")):
        img = (hist.counts[ch] * 255) // peak
        lines = ["P2", f"{hist.width} {hist.height}", "255"]
        lines += [" ".join(str(int(v)) for v in row) for row in img]
        path = base.with_name(f"{base.name}_{name}.pgm")
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
        out.append(path)
    return tuple(out)
