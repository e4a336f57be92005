"""Pretrain the encoder without labels, then measure what a probe can read.

The trick: draw two different event windows of the same stream, augment
each, and train encoder + projection head so the two land close together
while windows from other streams land far away. No labels anywhere — yet
features learned this way separate the classes far better than a random
encoder, which is checked with a linear probe at the end.

This demo uses a deliberately small dataset and few epochs so it finishes
in seconds; the full-size run lives behind `evcl pretrain`.
"""

import numpy as np

from evcl.contrastive import (
    AugmentConfig,
    ProjectionHead,
    extract_features,
    linear_probe,
    pretrain,
)
from evcl.sparse import SparseEncoder
from evcl.synth import EsimConfig, SaccadePath, SceneSpec, synth_stream

# Four classes, eight streams each, tiny 24x24 sensor. Pose varies per
# stream, so the only reliable signature of a class is its shape.
n_classes, per_class = 4, 8
cfg = EsimConfig(threshold=0.25, frame_rate=30, noise_rate=6.0)


def make_streams(seed0):
    streams = []
    k = 0
    for c in range(n_classes):
        for _ in range(per_class):
            r = np.random.default_rng(seed0 + k)
            scene = SceneSpec(
                class_id=c,
                glyph=c,
                scale=float(r.uniform(0.8, 1.2)),
                rotation=float(r.uniform(-0.25, 0.25)),
                contrast=float(r.uniform(0.3, 1.0)),
            )
            streams.append(synth_stream(scene, SaccadePath.triangle(6.7), 24, 24, cfg, r))
            k += 1
    return streams


train_streams = make_streams(0)
test_streams = make_streams(1000)
print(f"{len(train_streams)} train / {len(test_streams)} test streams, "
      f"{n_classes} classes")

augment = AugmentConfig(
    crop_scale=(0.8, 1.0), flip_prob=0.5, dropout_prob=0.15, jitter=(0.7, 1.3)
)


def fresh_encoder():
    return SparseEncoder(np.random.default_rng(0), conv_channels=(8, 16), feature_dim=32)


encoder = fresh_encoder()
head = ProjectionHead(np.random.default_rng(1), in_dim=32, hidden_dim=32, out_dim=16)

history = pretrain(
    train_streams,
    encoder,
    head,
    epochs=60,
    batch_size=16,
    temperature=0.2,
    lr=1e-3,
    window_events=1000,
    augment_config=augment,
    seed=0,
)
print(f"contrastive loss: {history[0]:.3f} (epoch 0) -> {history[-1]:.3f} "
      f"(epoch {len(history) - 1})")

# The probe is the honest part: freeze features, fit a softmax, report
# test accuracy. The untrained encoder is the baseline that random
# projections of the histogram already achieve.
kw = dict(window_events=1000)
trained_train = extract_features(train_streams, encoder, **kw)
trained_test = extract_features(test_streams, encoder, **kw)
raw = fresh_encoder()
raw_train = extract_features(train_streams, raw, **kw)
raw_test = extract_features(test_streams, raw, **kw)

acc_raw = linear_probe(raw_train, raw_test, n_classes, seed=0)
acc_ssl = linear_probe(trained_train, trained_test, n_classes, seed=0)
print(f"\nlinear probe, untrained encoder:  {acc_raw:.3f}")
print(f"linear probe, pretrained encoder: {acc_ssl:.3f}")
print(f"margin: {acc_ssl - acc_raw:+.3f}")
