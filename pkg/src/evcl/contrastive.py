"""Self-supervised pretraining of the sparse encoder on augmented histograms.

Two stochastic views of each event window are pushed through encoder +
projection head; the loss pulls a view toward its sibling and away from the
other samples' views at the same temperature. Downstream quality is read
out by freezing the encoder and fitting a softmax probe on its features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tape, Tensor, backward, l2_normalize_rows, softmax_cross_entropy
from .events import EventStream, random_window
from .histograms import build_histogram, normalize_histogram, to_sparse_grid
from .optim import AdamState, adam_step
from .sparse import SparseEncoder

FEATURE_MAGIC = b"EVFT"


class DegenerateBatch(ValueError):
    pass


class FeatureTableError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    """Stochastic view parameters; draws always happen in the same order."""

    crop_scale: tuple = (0.6, 1.0)
    flip_prob: float = 0.5
    dropout_prob: float = 0.1
    jitter: tuple = (0.9, 1.1)

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"bad crop_scale {self.crop_scale}")
        for name in ("flip_prob", "dropout_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"bad {name} {p}")
        jlo, jhi = self.jitter
        if not (0.0 < jlo <= jhi):
            raise ValueError(f"bad jitter {self.jitter}")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        """A config whose augment() is a bit-exact no-op."""
        return cls(crop_scale=(1.0, 1.0), flip_prob=0.0, dropout_prob=0.0, jitter=(1.0, 1.0))


def augment(img: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    """One stochastic view of a (C, H, W) image.

    Order is fixed — crop/resize, horizontal flip, dropout, multiplicative
    jitter — and every random draw happens regardless of configuration, so
    identical seeds with different configs stay comparable.
    """
    c, h, w = img.shape
    s = float(rng.uniform(*cfg.crop_scale))
    ch = max(1, round(h * s))
    cw = max(1, round(w * s))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    flip_draw = float(rng.random())
    drop_draw = rng.random((c, h, w))
    jitter_draw = rng.uniform(cfg.jitter[0], cfg.jitter[1], (c, h, w))

    patch = img[:, top : top + ch, left : left + cw]
    rows = (np.arange(h) * ch) // h  # nearest-neighbor resize back to full size
    cols = (np.arange(w) * cw) // w
    out = patch[:, rows[:, None], cols[None, :]]
    if flip_draw < cfg.flip_prob:
        out = out[:, :, ::-1]
    out = np.where(drop_draw < cfg.dropout_prob, 0.0, out)
    return out * jitter_draw


class ProjectionHead:
    """Two-layer MLP mapping encoder features to the contrastive space."""

    def __init__(self, rng, in_dim: int = 64, hidden_dim: int = 64, out_dim: int = 32):
        self.w1 = Parameter(rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, hidden_dim)))
        self.b1 = Parameter(np.zeros(hidden_dim))
        self.w2 = Parameter(rng.normal(0.0, np.sqrt(2.0 / hidden_dim), (hidden_dim, out_dim)))
        self.b2 = Parameter(np.zeros(out_dim))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, tape: Tape, x: Tensor) -> Tensor:
        h = (x @ tape.leaf(self.w1) + tape.leaf(self.b1)).relu()
        return h @ tape.leaf(self.w2) + tape.leaf(self.b2)


def nt_xent_loss(tape: Tape, embeddings: Tensor, temperature: float = 0.5) -> Tensor:
    """Paired-view contrastive loss on interleaved embeddings.

    Rows 2i and 2i+1 are the two views of sample i. Each anchor scores its
    cosine similarity against every row of the opposite view (its own
    sibling is the positive; the other samples' opposite views are the
    negatives) and pays cross-entropy at the given temperature. The mean
    over all 2N anchors is returned.
    """
    n2 = embeddings.data.shape[0]
    if n2 < 4 or n2 % 2:
        raise DegenerateBatch(
            f"need an even number of rows covering at least 2 samples, got {n2}"
        )
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = l2_normalize_rows(embeddings)
    sims = z @ z.transpose()

    n = n2 // 2
    logits = sims.data / temperature
    a = logits[0::2][:, 1::2]  # even anchors vs odd candidates; positives on diagonal
    b = logits[1::2][:, 0::2]

    def half_loss(m):
        mx = m.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(m - mx).sum(axis=1))
        return lse - np.diag(m)

    loss = (half_loss(a).sum() + half_loss(b).sum()) / n2

    def bwd(g):
        scale = g / (n2 * temperature)

        def half_grad(m):
            mx = m.max(axis=1, keepdims=True)
            p = np.exp(m - mx)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), np.arange(n)] -= 1.0
            return p * scale

        gs = np.zeros_like(logits)
        gs[np.ix_(np.arange(0, n2, 2), np.arange(1, n2, 2))] = half_grad(a)
        gs[np.ix_(np.arange(1, n2, 2), np.arange(0, n2, 2))] = half_grad(b)
        return (gs,)

    return tape.record(loss, (sims,), bwd)


def _window_views(stream: EventStream, cfg: AugmentConfig, rng, window_events: int, clip: int):
    # Each view gets its own window draw: the pair shares the scene but not
    # the event realization, so agreement cannot latch onto per-window noise.
    views = []
    for _ in range(2):
        window = random_window(stream, window_events, rng)
        img = normalize_histogram(build_histogram(window), clip=clip)
        views.append(to_sparse_grid(augment(img, cfg, rng)))
    return tuple(views)


def pretrain(
    streams,
    encoder: SparseEncoder,
    head: ProjectionHead,
    *,
    epochs: int,
    batch_size: int = 32,
    temperature: float = 0.5,
    lr: float = 1e-3,
    window_events: int = 5000,
    clip: int = 8,
    augment_config: AugmentConfig | None = None,
    seed: int = 0,
) -> list:
    """Contrastive training over event streams; returns per-epoch mean losses."""
    streams = list(streams)
    if len(streams) < 2:
        raise DegenerateBatch(f"need at least 2 streams, got {len(streams)}")
    cfg = AugmentConfig() if augment_config is None else augment_config
    params = encoder.params() + head.params()
    opt = AdamState(lr=lr)
    master = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        order = master.permutation(len(streams))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            if len(batch) < 2:
                continue
            grids = []
            for idx in batch:
                child = np.random.default_rng(master.integers(2**63))
                grids.extend(_window_views(streams[idx], cfg, child, window_events, clip))
            tape = Tape()
            feats = encoder.encode_batch(tape, grids)
            proj = head.forward(tape, feats)
            loss = nt_xent_loss(tape, proj, temperature)
            backward(loss)
            adam_step(opt, params)
            for p in params:
                p.zero_grad()
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)) if losses else float("nan"))
    return history


@dataclass(frozen=True)
class FeatureTable:
    """Encoded samples: features (n, dim) float64 with integer labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2 or self.labels.shape != (len(self.features),):
            raise FeatureTableError(
                f"features {self.features.shape} incompatible with labels {self.labels.shape}"
            )

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def select_classes(self, classes) -> "FeatureTable":
        mask = np.isin(self.labels, np.asarray(list(classes), dtype=np.int64))
        return FeatureTable(self.features[mask], self.labels[mask])


def extract_features(streams, encoder: SparseEncoder, *, window_events: int = 5000, clip: int = 8) -> FeatureTable:
    """Encode one canonical window per stream; window seed = sample index."""
    rows = []
    labels = []
    for idx, stream in enumerate(streams):
        if stream.label is None:
            raise ValueError(f"stream {idx} has no label")
        rng = np.random.default_rng(idx)
        window = random_window(stream, window_events, rng)
        grid = to_sparse_grid(normalize_histogram(build_histogram(window), clip=clip))
        tape = Tape()
        rows.append(encoder.forward(tape, grid).data[0])
        labels.append(stream.label)
    if not rows:
        raise ValueError("no streams to extract from")
    return FeatureTable(np.stack(rows), np.asarray(labels))


def feature_table_to_bytes(table: FeatureTable) -> bytes:
    n, d = table.features.shape
    out = [FEATURE_MAGIC, struct.pack("<II", n, d)]
    for label, row in zip(table.labels, table.features):
        out.append(struct.pack("<I", int(label)))
        out.append(np.ascontiguousarray(row, dtype="<f8").tobytes())
    return b"".join(out)


def feature_table_from_bytes(data: bytes) -> FeatureTable:
    if data[:4] != FEATURE_MAGIC:
        raise FeatureTableError(f"bad feature table magic {data[:4]!r}")
    if len(data) < 12:
        raise FeatureTableError("truncated feature table header")
    n, d = struct.unpack("<II", data[4:12])
    row_bytes = 4 + 8 * d
    expected = 12 + n * row_bytes
    if len(data) != expected:
        raise FeatureTableError(
            f"feature table is {len(data)} bytes, expected {expected} for {n}x{d}"
        )
    labels = np.empty(n, dtype=np.int64)
    features = np.empty((n, d))
    for i in range(n):
        off = 12 + i * row_bytes
        labels[i] = struct.unpack_from("<I", data, off)[0]
        features[i] = np.frombuffer(data, dtype="<f8", count=d, offset=off + 4)
    return FeatureTable(features, labels)


def save_feature_table(path, table: FeatureTable) -> None:
    with open(path, "wb") as fh:
        fh.write(feature_table_to_bytes(table))


def load_feature_table(path) -> FeatureTable:
    with open(path, "rb") as fh:
        return feature_table_from_bytes(fh.read())


def linear_probe(
    train: FeatureTable,
    test: FeatureTable,
    n_classes: int,
    *,
    steps: int = 300,
    lr: float = 0.05,
    seed: int = 0,
) -> float:
    """Fit a softmax readout on frozen train features; returns test accuracy."""
    if train.dim != test.dim:
        raise FeatureTableError(f"feature dims differ: {train.dim} vs {test.dim}")
    rng = np.random.default_rng(seed)
    w = Parameter(rng.normal(0.0, 0.01, (train.dim, n_classes)))
    b = Parameter(np.zeros(n_classes))
    opt = AdamState(lr=lr)
    mu = train.features.mean(axis=0)
    sd = np.maximum(train.features.std(axis=0), 1e-8)
    x_train = (train.features - mu) / sd
    x_test = (test.features - mu) / sd
    for _ in range(steps):
        tape = Tape()
        logits = tape.const(x_train) @ tape.leaf(w) + tape.leaf(b)
        loss = softmax_cross_entropy(logits, train.labels)
        backward(loss)
        adam_step(opt, [w, b])
        w.zero_grad()
        b.zero_grad()
    pred = (x_test @ w.value + b.value).argmax(axis=1)
    return float(np.mean(pred == test.labels))
