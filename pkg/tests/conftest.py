"""Shared fixtures for the test suite.

The acceptance tests register one verdict per criterion here; a terminal
summary hook prints them as a block at the end of the run so the outcome
of every criterion is visible in one place even without -s.
"""

import time

import numpy as np
import pytest

CRITERIA = {
    1: "habituation decay closed form",
    2: "gradient scaling exactness",
    3: "reduction identities",
    4: "autodiff finite differences",
    5: "sparsity preservation and dense equivalence",
    6: "histogram conservation",
    7: "contrastive loss oracle",
    8: "synaptic importance anchors",
    9: "vae and replay properties",
    10: "forgetting and replay margins",
    11: "pretraining probe margin",
}

_VERDICTS: dict = {}


@pytest.fixture
def record_criterion():
    """Callable(num, ok, detail) that logs a criterion verdict for the summary."""

    def record(num: int, ok: bool, detail: str = "") -> bool:
        _VERDICTS[num] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        name = CRITERIA[num]
        if num in _VERDICTS:
            ok, detail = _VERDICTS[num]
            status = "PASS" if ok else "FAIL"
        else:
            status, detail = "FAIL", "did not run"
        line = f"criterion {num:2d} ({name}): {status}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """The full default pipeline, built once and shared.

    Generates the default synthetic dataset, pretrains the encoder with the
    default schedule, and extracts feature tables with both the pretrained
    and a freshly initialized encoder. Several acceptance tests consume
    these tables; the build time is included in the runtime accounting of
    whichever test touches the fixture first.
    """
    from evcl import contrastive, synth
    from evcl.events import read_evs1_file, read_manifest
    from evcl.harness import ExperimentConfig
    from evcl.sparse import SparseEncoder

    started = time.monotonic()
    cfg = ExperimentConfig()
    data_dir = tmp_path_factory.mktemp("dataset")
    esim = synth.EsimConfig(
        threshold=cfg.esim_threshold,
        frame_rate=cfg.esim_frame_rate,
        noise_rate=cfg.esim_noise_rate,
    )
    synth.gen_dataset(
        cfg.classes,
        cfg.train_per_class,
        cfg.test_per_class,
        cfg.width,
        cfg.height,
        esim,
        0,
        data_dir,
    )
    manifest = read_manifest(data_dir / "manifest.tsv")

    def streams(split):
        return [
            read_evs1_file(data_dir / e.path, label=e.class_id)
            for e in manifest.split_entries(split)
        ]

    train_streams = streams("train")
    test_streams = streams("test")

    def fresh_encoder():
        return SparseEncoder(
            np.random.default_rng(0), in_channels=2, feature_dim=cfg.feature_dim
        )

    encoder = fresh_encoder()
    head = contrastive.ProjectionHead(np.random.default_rng(1), in_dim=cfg.feature_dim)
    contrastive.pretrain(
        train_streams,
        encoder,
        head,
        epochs=cfg.ssl_epochs,
        batch_size=cfg.ssl_batch,
        temperature=cfg.ssl_temperature,
        lr=cfg.ssl_lr,
        window_events=cfg.window_events,
        clip=cfg.clip,
        augment_config=contrastive.AugmentConfig(
            crop_scale=(cfg.crop_min, cfg.crop_max),
            flip_prob=cfg.flip_prob,
            dropout_prob=cfg.dropout_prob,
            jitter=(cfg.jitter_min, cfg.jitter_max),
        ),
        seed=0,
    )

    def extract(enc, split_streams):
        return contrastive.extract_features(
            split_streams, enc, window_events=cfg.window_events, clip=cfg.clip
        )

    untrained = fresh_encoder()
    out = {
        "cfg": cfg,
        "train": extract(encoder, train_streams),
        "test": extract(encoder, test_streams),
        "train_untrained": extract(untrained, train_streams),
        "test_untrained": extract(untrained, test_streams),
        "build_seconds": 0.0,
    }
    out["build_seconds"] = time.monotonic() - started
    return out
