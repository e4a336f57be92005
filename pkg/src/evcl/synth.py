"""Synthetic labeled event streams: glyph scenes swept under saccade motion
through a per-pixel log-intensity change-threshold camera model."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import DatasetManifest, EventStream, ManifestEntry, write_evs1_file, write_manifest

GLYPH_NAMES = (
    "hbar",
    "vbar",
    "plus",
    "xcross",
    "square_ring",
    "triangle",
    "ring",
    "disk",
    "arc",
    "double_bar",
)
N_GLYPHS = len(GLYPH_NAMES)

BACKGROUND = 0.08
LOG_EPS = 1e-3  # intensity floor before log, bounds the dynamic range


class NonMonotonicTimestamps(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    """One rendered object: glyph index plus pose and contrast."""

    class_id: int
    glyph: int
    scale: float = 1.0
    rotation: float = 0.0
    contrast: float = 1.0

    def __post_init__(self):
        if not 0 <= self.glyph < N_GLYPHS:
            raise ValueError(f"glyph index {self.glyph} outside 0..{N_GLYPHS - 1}")
        if not 0 < self.contrast <= 1:
            raise ValueError(f"contrast {self.contrast} outside (0, 1]")


@dataclass(frozen=True)
class SaccadePath:
    """Exactly three linear sweeps, each (start_offset, end_offset, duration_us)."""

    segments: tuple

    def __post_init__(self):
        if len(self.segments) != 3:
            raise ValueError(f"expected 3 segments, got {len(self.segments)}")
        for _, _, dur in self.segments:
            if dur <= 0:
                raise ValueError("segment durations must be positive")

    @classmethod
    def triangle(cls, amplitude: float, duration_us: int = 100_000, jitter=None):
        """Default sweep through the corners of a triangle, optionally jittered."""
        a = amplitude
        pts = np.array([(-a, -a * 0.6), (a, -a * 0.6), (0.0, a * 0.8), (-a, -a * 0.6)])
        if jitter is not None:
            pts = pts + jitter
        segs = tuple(
            (tuple(pts[i]), tuple(pts[i + 1]), duration_us) for i in range(3)
        )
        return cls(segs)


@dataclass(frozen=True)
class EsimConfig:
    """Change-threshold camera model parameters."""

    threshold: float = 0.25  # log-intensity contrast threshold C
    frame_rate: int = 30  # rendering steps per sweep segment
    noise_rate: float = 0.1  # spurious events per pixel per second

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if self.frame_rate < 2:
            raise ValueError(f"frame_rate must be >= 2, got {self.frame_rate}")
        if self.noise_rate < 0:
            raise ValueError(f"noise_rate must be >= 0, got {self.noise_rate}")


def _box_sdf(px, py, hx, hy):
    qx = np.abs(px) - hx
    qy = np.abs(py) - hy
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def _rot(px, py, angle):
    c, s = np.cos(angle), np.sin(angle)
    return c * px + s * py, -s * px + c * py


def _glyph_sdf(glyph: int, px, py, r0: float):
    """Signed distance (pixels) to the glyph boundary in canonical pose."""
    if glyph == 0:  # horizontal bar
        return _box_sdf(px, py, r0, 0.22 * r0)
    if glyph == 1:  # vertical bar
        return _box_sdf(px, py, 0.22 * r0, r0)
    if glyph == 2:  # plus
        return np.minimum(
            _box_sdf(px, py, r0, 0.2 * r0), _box_sdf(px, py, 0.2 * r0, r0)
        )
    if glyph == 3:  # diagonal cross
        ux, uy = _rot(px, py, np.pi / 4)
        return np.minimum(
            _box_sdf(ux, uy, r0, 0.2 * r0), _box_sdf(ux, uy, 0.2 * r0, r0)
        )
    if glyph == 4:  # hollow square
        return np.abs(_box_sdf(px, py, 0.75 * r0, 0.75 * r0)) - 0.16 * r0
    if glyph == 5:  # filled triangle (equilateral, apex up)
        a = r0
        d = py - 0.5 * a
        for ang in (2 * np.pi / 3, -2 * np.pi / 3):
            ux, uy = _rot(px, py, ang)
            d = np.maximum(d, uy - 0.5 * a)
        return d
    if glyph == 6:  # ring
        return np.abs(np.hypot(px, py) - 0.78 * r0) - 0.16 * r0
    if glyph == 7:  # filled disk
        return np.hypot(px, py) - 0.8 * r0
    if glyph == 8:  # upper half-ring
        ring = np.abs(np.hypot(px, py) - 0.78 * r0) - 0.16 * r0
        return np.maximum(ring, -py)
    if glyph == 9:  # two parallel horizontal bars
        return np.minimum(
            _box_sdf(px, py - 0.55 * r0, r0, 0.18 * r0),
            _box_sdf(px, py + 0.55 * r0, r0, 0.18 * r0),
        )
    raise ValueError(f"unknown glyph {glyph}")


def render_frame(scene: SceneSpec, offset, width: int, height: int) -> np.ndarray:
    """Render the glyph at the given sub-pixel offset into a [0,1] image.

    Pure function of its arguments; the glyph sits on a constant background
    with a one-pixel soft edge.
    """
    if width < 8 or height < 8:
        raise ValueError(f"canvas {width}x{height} below minimum 8x8")
    ox, oy = float(offset[0]), float(offset[1])
    cx, cy = width / 2.0, height / 2.0
    xs = np.arange(width, dtype=np.float64) - (cx + ox)
    ys = np.arange(height, dtype=np.float64) - (cy + oy)
    px, py = np.meshgrid(xs, ys)
    px, py = _rot(px, py, -scene.rotation)
    px, py = px / scene.scale, py / scene.scale
    r0 = 0.28 * min(width, height)
    d = _glyph_sdf(scene.glyph, px, py, r0) * scene.scale
    mask = np.clip(0.5 - d, 0.0, 1.0)
    return BACKGROUND + mask * scene.contrast * (1.0 - BACKGROUND)


def frames_to_events(
    frames, times_us, cfg: EsimConfig, rng: np.random.Generator, label=None
) -> EventStream:
    """Convert a rendered frame sequence to an event stream.

    Per pixel, a reference log-intensity chases log(I + eps); every full
    threshold crossing emits one event at a linearly interpolated timestamp
    and moves the reference by +-C toward the new value. Poisson background
    noise at cfg.noise_rate is mixed in with random polarity.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    times = np.asarray(times_us, dtype=np.int64)
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    if len(frames) != len(times):
        raise ValueError("frames and timestamps have different lengths")
    if not (np.diff(times) > 0).all():
        raise NonMonotonicTimestamps("frame timestamps must be strictly increasing")
    height, width = frames[0].shape
    c = cfg.threshold

    log_ref = np.log(frames[0] + LOG_EPS)
    log_prev = log_ref.copy()
    ev_x, ev_y, ev_t, ev_p = [], [], [], []
    for t_prev, t_new, frame in zip(times[:-1], times[1:], frames[1:]):
        log_new = np.log(frame + LOG_EPS)
        diff = log_new - log_ref
        n_cross = np.floor(np.abs(diff) / c).astype(np.int64)
        active = n_cross.nonzero()
        if active[0].size:
            counts = n_cross[active]
            sign = np.sign(diff[active]).astype(np.int64)
            total = int(counts.sum())
            rep = np.repeat(np.arange(active[0].size), counts)
            # k = 1..counts within each pixel's burst
            k = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + 1
            level = log_ref[active][rep] + sign[rep] * k * c
            ramp = log_new[active][rep] - log_prev[active][rep]
            frac = (level - log_prev[active][rep]) / ramp
            frac = np.clip(frac, 0.0, 1.0)
            t_ev = np.rint(t_prev + frac * (t_new - t_prev)).astype(np.int64)
            ev_x.append(active[1][rep].astype(np.int64))
            ev_y.append(active[0][rep].astype(np.int64))
            ev_t.append(t_ev)
            ev_p.append(sign[rep])
            log_ref[active] += sign * counts * c
        log_prev = log_new

    duration_s = (times[-1] - times[0]) / 1e6
    n_noise = int(rng.poisson(cfg.noise_rate * width * height * duration_s)) if cfg.noise_rate > 0 else 0
    if n_noise:
        ev_x.append(rng.integers(0, width, size=n_noise))
        ev_y.append(rng.integers(0, height, size=n_noise))
        ev_t.append(rng.integers(times[0], times[-1] + 1, size=n_noise))
        ev_p.append(rng.choice((-1, 1), size=n_noise))

    if ev_x:
        x = np.concatenate(ev_x)
        y = np.concatenate(ev_y)
        t = np.concatenate(ev_t)
        p = np.concatenate(ev_p)
    else:
        x = y = t = p = np.empty(0, dtype=np.int64)
    return EventStream(width, height, x, y, t, p, label=label)


def render_saccade(scene: SceneSpec, path: SaccadePath, width, height, cfg: EsimConfig):
    """Sample frames and timestamps along the saccade path."""
    frames, times = [], []
    t0 = 0
    for start, end, dur in path.segments:
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        for j in range(cfg.frame_rate):
            frac = j / cfg.frame_rate
            off = start + frac * (end - start)
            frames.append(render_frame(scene, off, width, height))
            times.append(t0 + int(round(frac * dur)))
        t0 += int(dur)
    final = np.asarray(path.segments[-1][1], dtype=np.float64)
    frames.append(render_frame(scene, final, width, height))
    times.append(t0)
    return frames, times


def synth_stream(
    scene: SceneSpec, path: SaccadePath, width, height, cfg: EsimConfig, rng
) -> EventStream:
    frames, times = render_saccade(scene, path, width, height, cfg)
    return frames_to_events(frames, times, cfg, rng, label=scene.class_id)


def _sample_scene(class_id: int, rng: np.random.Generator) -> SceneSpec:
    return SceneSpec(
        class_id=class_id,
        glyph=class_id,
        scale=float(rng.uniform(0.75, 1.25)),
        rotation=float(rng.uniform(-0.26, 0.26)),
        contrast=float(rng.uniform(0.25, 1.0)),
    )


def _sample_path(width, height, rng: np.random.Generator) -> SaccadePath:
    amplitude = 0.28 * min(width, height)
    jitter = rng.uniform(-0.1 * amplitude, 0.1 * amplitude, size=(4, 2))
    return SaccadePath.triangle(amplitude, duration_us=100_000, jitter=jitter)


def gen_dataset(
    n_classes: int,
    train_per_class: int,
    test_per_class: int,
    width: int,
    height: int,
    cfg: EsimConfig,
    seed: int,
    out_dir,
) -> DatasetManifest:
    """Generate EVS1 files plus a manifest for a labeled synthetic dataset.

    Each sample gets its own generator seeded with `seed ^ sample_index`, so
    serial and per-sample-parallel generation produce identical bytes.
    """
    if n_classes > N_GLYPHS:
        raise ValueError(f"at most {N_GLYPHS} classes available, asked for {n_classes}")
    out_dir = Path(out_dir)
    (out_dir / "train").mkdir(parents=True, exist_ok=True)
    (out_dir / "test").mkdir(parents=True, exist_ok=True)
    entries = []
    sample_index = 0
    for class_id in range(n_classes):
        for split, per_class in (("train", train_per_class), ("test", test_per_class)):
            for i in range(per_class):
                rng = np.random.default_rng(seed ^ sample_index)
                scene = _sample_scene(class_id, rng)
                path = _sample_path(width, height, rng)
                stream = synth_stream(scene, path, width, height, cfg, rng)
                rel = f"{split}/c{class_id:02d}_{i:03d}.evs1"
                write_evs1_file(stream, out_dir / rel)
                entries.append(ManifestEntry(rel, class_id, split))
                sample_index += 1
    manifest = DatasetManifest(entries, list(GLYPH_NAMES[:n_classes]))
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
