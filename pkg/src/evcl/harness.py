"""Experiment configuration, result aggregation, and report generation.

Everything an end-to-end run needs around the learning code itself: a flat
key=value config file, byte-stable CSV writers for per-run curves and
cross-seed summaries, and a dependency-free SVG chart of accuracy per
episode.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Every tunable of the pipeline; file overrides use `key = value` lines."""

    width: int = 32
    height: int = 32
    classes: int = 10
    train_per_class: int = 20
    test_per_class: int = 30
    esim_threshold: float = 0.25
    esim_frame_rate: int = 30
    esim_noise_rate: float = 8.0
    window_events: int = 1500
    clip: int = 8
    feature_dim: int = 64
    ssl_epochs: int = 300
    ssl_batch: int = 32
    ssl_temperature: float = 0.2
    ssl_lr: float = 1e-3
    crop_min: float = 0.8
    crop_max: float = 1.0
    flip_prob: float = 0.5
    dropout_prob: float = 0.15
    jitter_min: float = 0.7
    jitter_max: float = 1.3
    episodes: int = 5
    classes_per_episode: int = 2
    steps_per_episode: int = 600
    batch_size: int = 32
    lr: float = 3e-3
    hidden_dim: int = 128
    latent_dim: int = 16
    vae_beta: float = 0.25
    data_dir: str = "data"
    encoder_file: str = "encoder.evck"
    train_features_file: str = "train.evft"
    test_features_file: str = "test.evft"
    runs_dir: str = "runs"
    summary_file: str = "summary.csv"
    report_file: str = "report.svg"


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config(text: str) -> ExperimentConfig:
    """Build a config from `key = value` lines; # starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        ftype = _FIELD_TYPES.get(key)
        if ftype is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if ftype == "int":
                values[key] = int(val)
            elif ftype == "float":
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: ExperimentConfig) -> str:
    return "\n".join(f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)) + "\n"


def aggregate(curves) -> tuple:
    """Pointwise mean and standard error across same-length sequences.

    The standard error uses the n-1 sample deviation; a single curve gets
    zero error everywhere.
    """
    curves = [np.asarray(c, dtype=np.float64) for c in curves]
    if not curves:
        raise LengthMismatch("no curves to aggregate")
    length = len(curves[0])
    for c in curves[1:]:
        if len(c) != length:
            raise LengthMismatch(f"curve lengths differ: {len(c)} vs {length}")
    stack = np.stack(curves)
    mean = stack.mean(axis=0)
    if len(curves) == 1:
        return mean, np.zeros(length)
    sem = stack.std(axis=0, ddof=1) / math.sqrt(len(curves))
    return mean, sem


# ---------------------------------------------------------------------------
# CSV writers (byte-stable: fixed field order, fixed float formatting, \n)


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.6f}"


def format_run_csv(result) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["episode", "seen_classes", "accuracy"])
    for e, acc in enumerate(result.overall):
        w.writerow([e, len(result.schedule.seen_through(e)), _fmt(acc)])
    return out.getvalue()


def format_steps_csv(result) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["episode", "step", "ce", "replay_ce", "vae", "si", "total"])
    for row in result.steps:
        w.writerow(
            [
                row["episode"],
                row["step"],
                _fmt(row["ce"]),
                _fmt(row["replay_ce"]),
                _fmt(row["vae"]),
                _fmt(row["si"]),
                _fmt(row["total"]),
            ]
        )
    return out.getvalue()


def format_summary_csv(summary: dict) -> str:
    """summary maps preset name -> (mean per episode, sem per episode)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["preset", "episode", "mean_acc", "sem"])
    for preset, (mean, sem) in summary.items():
        for e, (m, s) in enumerate(zip(mean, sem)):
            w.writerow([preset, e, _fmt(m), _fmt(s)])
    return out.getvalue()


def parse_summary_csv(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["preset", "episode", "mean_acc", "sem"]:
        raise ConfigError("not a summary csv")
    acc: dict = {}
    for preset, episode, mean, sem in rows[1:]:
        acc.setdefault(preset, []).append((int(episode), float(mean), float(sem)))
    out = {}
    for preset, entries in acc.items():
        entries.sort()
        out[preset] = (
            np.array([m for _, m, _ in entries]),
            np.array([s for _, _, s in entries]),
        )
    return out


def summarize_runs(results: list) -> dict:
    """Group CilResults by preset and aggregate their overall-accuracy curves."""
    by_preset: dict = {}
    for r in results:
        by_preset.setdefault(r.preset, []).append(r)
    return {
        preset: aggregate([r.overall for r in runs])
        for preset, runs in by_preset.items()
    }


# ---------------------------------------------------------------------------
# SVG report

_PALETTE = {
    "none": "#d62728",
    "bir": "#1f77b4",
    "bir-si": "#2ca02c",
    "bir-h": "#9467bd",
    "bir-si-h": "#ff7f0e",
}
_FALLBACK_COLORS = ["#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def render_report(summary: dict, title: str = "Accuracy on seen classes") -> str:
    """An 800x500 SVG line chart: one curve per preset with a +-SEM band."""
    width, height = 800, 500
    left, right, top, bottom = 70, 170, 50, 60
    plot_w = width - left - right
    plot_h = height - top - bottom
    n_ep = max((len(mean) for mean, _ in summary.values()), default=0)
    if n_ep == 0:
        raise ValueError("nothing to plot")

    def x_of(e: int) -> float:
        return left + (plot_w * e / (n_ep - 1) if n_ep > 1 else plot_w / 2)

    def y_of(acc: float) -> float:
        return top + plot_h * (1.0 - min(max(acc, 0.0), 1.0))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + plot_w / 2:.1f}" y="28" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]
    # axes
    parts.append(
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" '
        'stroke="black"/>'
    )
    for tick in range(0, 11, 2):
        acc = tick / 10
        y = y_of(acc)
        parts.append(f'<line x1="{left - 5}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{left - 9}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{acc:.1f}</text>'
        )
    for e in range(n_ep):
        x = x_of(e)
        parts.append(
            f'<line x1="{x:.1f}" y1="{top + plot_h}" x2="{x:.1f}" y2="{top + plot_h + 5}" '
            'stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{top + plot_h + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{e + 1}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 14}" text-anchor="middle" '
        'font-family="sans-serif" font-size="13">episode</text>'
    )
    parts.append(
        f'<text x="20" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 20 {top + plot_h / 2:.1f})">accuracy</text>'
    )

    fallback = iter(_FALLBACK_COLORS)
    legend_y = top + 10
    for preset, (mean, sem) in summary.items():
        color = _PALETTE.get(preset) or next(fallback)
        upper = [(x_of(e), y_of(m + s)) for e, (m, s) in enumerate(zip(mean, sem))]
        lower = [(x_of(e), y_of(m - s)) for e, (m, s) in enumerate(zip(mean, sem))]
        band = " ".join(f"{x:.1f},{y:.1f}" for x, y in upper + lower[::-1])
        parts.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.15"/>')
        line = " ".join(f"{x_of(e):.1f},{y_of(m):.1f}" for e, m in enumerate(mean))
        parts.append(
            f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for e, m in enumerate(mean):
            parts.append(
                f'<circle cx="{x_of(e):.1f}" cy="{y_of(m):.1f}" r="3" fill="{color}"/>'
            )
        lx = left + plot_w + 16
        parts.append(
            f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 24}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 30}" y="{legend_y + 4}" font-family="sans-serif" '
            f'font-size="12">{preset}</text>'
        )
        legend_y += 20
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(path, summary: dict, title: str = "Accuracy on seen classes") -> None:
    Path(path).write_text(render_report(summary, title), encoding="utf-8")
