"""Config files, curve aggregation, CSV stability, and the SVG report."""

import numpy as np
import pytest

from evcl.continual import CilResult, EpisodeSchedule
from evcl.harness import (
    ConfigError,
    ExperimentConfig,
    LengthMismatch,
    aggregate,
    format_config,
    format_run_csv,
    format_steps_csv,
    format_summary_csv,
    load_config,
    parse_config,
    parse_summary_csv,
    render_report,
    summarize_runs,
    write_report,
)


class TestConfig:
    def test_format_parse_round_trip(self):
        cfg = ExperimentConfig(width=48, ssl_lr=0.005, data_dir="elsewhere")
        assert parse_config(format_config(cfg)) == cfg

    def test_defaults_when_empty(self):
        assert parse_config("") == ExperimentConfig()

    def test_partial_override(self):
        cfg = parse_config("width = 16\n# a comment\n\nssl_temperature = 0.4\n")
        assert cfg.width == 16
        assert cfg.ssl_temperature == 0.4
        assert cfg.height == ExperimentConfig().height

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="wdith"):
            parse_config("wdith = 16")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("width = 16\nclasses = ten\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("just some words\n")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("classes = 4\nepisodes = 2\n")
        cfg = load_config(path)
        assert (cfg.classes, cfg.episodes) == (4, 2)


class TestAggregate:
    def test_identical_curves_zero_sem(self):
        mean, sem = aggregate([[0.5, 0.6], [0.5, 0.6], [0.5, 0.6]])
        np.testing.assert_array_equal(mean, [0.5, 0.6])
        np.testing.assert_array_equal(sem, [0.0, 0.0])

    def test_hand_computed_sem(self):
        """Sample sd of (10, 20, 30) is 10, so the SEM is 10 / sqrt(3)."""
        mean, sem = aggregate([[10.0], [20.0], [30.0]])
        np.testing.assert_allclose(mean, [20.0])
        np.testing.assert_allclose(sem, [10.0 / np.sqrt(3.0)], rtol=1e-12)

    def test_single_curve_zero_sem(self):
        mean, sem = aggregate([[0.1, 0.2, 0.3]])
        np.testing.assert_array_equal(mean, [0.1, 0.2, 0.3])
        np.testing.assert_array_equal(sem, np.zeros(3))

    def test_length_mismatch_rejected(self):
        with pytest.raises(LengthMismatch):
            aggregate([[1.0, 2.0], [1.0]])
        with pytest.raises(LengthMismatch):
            aggregate([])


def _result(preset="bir", seed=0, overall=(0.5, 0.25)):
    return CilResult(
        preset=preset,
        seed=seed,
        schedule=EpisodeSchedule(((0, 1), (2, 3))),
        per_episode=[[0.5], [0.3, 0.2]],
        overall=list(overall),
        steps=[],
    )


class TestCsv:
    def test_run_csv_pinned_bytes(self):
        text = format_run_csv(_result())
        assert text == (
            "episode,seen_classes,accuracy\n"
            "0,2,0.500000\n"
            "1,4,0.250000\n"
        )

    def test_steps_csv_blank_for_nan(self):
        res = _result()
        res.steps = [
            {"episode": 0, "step": 0, "ce": 1.5, "replay_ce": float("nan"),
             "vae": 0.25, "si": float("nan"), "total": 1.75},
        ]
        text = format_steps_csv(res)
        assert text == (
            "episode,step,ce,replay_ce,vae,si,total\n"
            "0,0,1.500000,,0.250000,,1.750000\n"
        )

    def test_summary_round_trip(self):
        summary = {
            "none": (np.array([0.9, 0.4]), np.array([0.01, 0.02])),
            "bir": (np.array([0.9, 0.7]), np.array([0.0, 0.03])),
        }
        parsed = parse_summary_csv(format_summary_csv(summary))
        assert set(parsed) == {"none", "bir"}
        for k in summary:
            np.testing.assert_allclose(parsed[k][0], summary[k][0], atol=1e-6)
            np.testing.assert_allclose(parsed[k][1], summary[k][1], atol=1e-6)

    def test_summary_rejects_other_csv(self):
        with pytest.raises(ConfigError):
            parse_summary_csv("episode,accuracy\n0,0.5\n")

    def test_summarize_runs_groups_by_preset(self):
        results = [
            _result("bir", 0, (0.8, 0.6)),
            _result("bir", 1, (0.6, 0.4)),
            _result("none", 0, (0.9, 0.2)),
        ]
        summary = summarize_runs(results)
        np.testing.assert_allclose(summary["bir"][0], [0.7, 0.5])
        np.testing.assert_allclose(summary["none"][0], [0.9, 0.2])
        np.testing.assert_array_equal(summary["none"][1], [0.0, 0.0])

    def test_csv_byte_stable_across_calls(self):
        res = _result()
        assert format_run_csv(res) == format_run_csv(res)


class TestSvgReport:
    def _summary(self, presets=("none", "bir"), sem=0.02):
        return {
            p: (np.array([0.9, 0.7, 0.6]), np.full(3, sem)) for p in presets
        }

    def test_one_polyline_and_band_per_preset(self):
        svg = render_report(self._summary())
        assert svg.count("<polyline") == 2
        assert svg.count("<polygon") == 2
        assert svg.startswith("<svg")
        assert svg.rstrip().endswith("</svg>")

    def test_legend_names_presets(self):
        svg = render_report(self._summary(("none", "bir", "bir-si")))
        for name in ("none", "bir", "bir-si"):
            assert f">{name}</text>" in svg

    def test_zero_sem_band_collapses_onto_line(self):
        svg = render_report({"bir": (np.array([0.5, 0.6]), np.zeros(2))})
        points = svg.split('<polygon points="')[1].split('"')[0].split()
        upper, lower = points[:2], points[2:]
        assert upper == lower[::-1]

    def test_empty_summary_rejected(self):
        with pytest.raises(ValueError):
            render_report({})

    def test_write_report_creates_file(self, tmp_path):
        path = tmp_path / "report.svg"
        write_report(path, self._summary())
        text = path.read_text()
        assert text.startswith("<svg")
        assert "accuracy" in text
