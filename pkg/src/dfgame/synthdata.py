"""Deterministic synthetic face-swap dataset generator.

Each person is a seeded smooth "face" pattern (a sum of low-frequency 2-D
cosines drawn from a frequency bucket disjoint from every other person's)
composited as an ellipse over a per-video background; frames add small
seeded jitter.  Swapped frames keep the target frame's background but paste
the source person's face pattern, with mild blending artifacts (a seam ring
and a luminance dip) so that swaps are learnable by downstream detectors.

Everything is a pure function of the config and the seed: regenerating a
dataset yields byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

from .errors import ParameterError
from .imagebuf import ImageBuf, save_png
from .protocol import FaceSwapId, render_real_name, write_task_list

# Seed-domain tags so every entity draws from an independent stream.
_DOM_FACE = 11
_DOM_BG = 12
_DOM_JITTER = 13
_DOM_TASKS = 14
_DOM_TRAIN_TASKS = 15
_DOM_GRAIN = 16

_FACE_BAND = [(fx, fy) for fx in range(5) for fy in range(5) if 1 <= max(fx, fy) <= 4]
_BG_BAND = [(fx, fy) for fx in range(8) for fy in range(8) if 5 <= max(fx, fy) <= 7]
_MODES_PER_FACE = 3
_MODES_PER_BG = 4
MAX_PERSONS = len(_FACE_BAND) // _MODES_PER_FACE

_FACE_RMS = 0.16
_BG_RMS = 0.10
_BASE = 0.5

# Ellipse geometry shared with the agents (fractions of width/height).
ELLIPSE_CENTER = (0.50, 0.52)
ELLIPSE_AXES = (0.30, 0.38)
REAL_FEATHER_PX = 2.5
SWAP_FEATHER_PX = 4.0

# Swap compositing artifacts: what makes a swap detectable.
SWAP_FACE_GAIN = 0.94
SWAP_FACE_OFFSET = -0.035
SWAP_SEAM_DEPTH = -0.07
SWAP_SEAM_WIDTH = 0.07
# Per-pixel texture noise the swap generator leaves behind; real frames are
# clean, so the noise score rewards post-processing that smooths it away.
SWAP_GRAIN_SIGMA = 0.006


@dataclass(frozen=True)
class GenConfig:
    """Synthetic dataset shape; video 0 is the reference video, videos
    1..n_train_videos feed detector training, the rest are the eval set."""

    n_persons: int = 6
    n_videos_per_person: int = 2
    n_frames: int = 9
    image_size: int = 64
    n_tasks: int = 100
    n_ref_frames: int = 4
    n_train_videos: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_persons < 2:
            raise ParameterError(f"need at least 2 persons, got {self.n_persons}")
        if self.n_persons > MAX_PERSONS:
            raise ParameterError(
                f"at most {MAX_PERSONS} persons supported, got {self.n_persons}"
            )
        if self.image_size < 32:
            raise ParameterError(f"image_size must be >= 32, got {self.image_size}")
        if min(self.n_videos_per_person, self.n_frames, self.n_ref_frames) < 1:
            raise ParameterError("frame/video counts must be >= 1")
        grid = self.n_persons * self.n_videos_per_person * self.n_frames
        if self.n_tasks < 1 or self.n_tasks > grid:
            raise ParameterError(
                f"n_tasks must be in [1, {grid}] for this grid, got {self.n_tasks}"
            )

    @property
    def eval_vids(self) -> List[int]:
        start = 1 + self.n_train_videos
        return list(range(start, start + self.n_videos_per_person))

    @property
    def train_vids(self) -> List[int]:
        return list(range(1, 1 + self.n_train_videos))

    def to_meta(self) -> dict:
        return {"schema": 1, "generator": asdict(self)}

    @classmethod
    def from_meta(cls, root: str | Path) -> "GenConfig":
        meta = json.loads((Path(root) / "meta.json").read_text(encoding="utf-8"))
        return cls(**meta["generator"])


def person_label(idx: int) -> str:
    return f"id{idx}"


def person_index(label: str) -> int:
    if not label.startswith("id") or not label[2:].isdigit():
        raise ParameterError(f"not a generated person label: {label!r}")
    return int(label[2:])


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def _draw_modes(rng: np.random.Generator, pool, count: int):
    idx = rng.choice(len(pool), size=count, replace=False)
    amps = rng.uniform(0.6, 1.0, size=count)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return [(pool[i][0], pool[i][1], a, p) for i, a, p in zip(idx, amps, phases)]


def _face_modes(cfg: GenConfig, person: int):
    rng = _rng(cfg.seed, _DOM_FACE)
    order = rng.permutation(len(_FACE_BAND))
    picked = order[person * _MODES_PER_FACE : (person + 1) * _MODES_PER_FACE]
    amps = _rng(cfg.seed, _DOM_FACE, person).uniform(0.6, 1.0, size=_MODES_PER_FACE)
    phases = _rng(cfg.seed, _DOM_FACE, person, 1).uniform(0, 2 * np.pi, _MODES_PER_FACE)
    return [
        (_FACE_BAND[i][0], _FACE_BAND[i][1], a, p)
        for i, a, p in zip(picked, amps, phases)
    ]


def _bg_modes(cfg: GenConfig, person: int, vid: int):
    return _draw_modes(_rng(cfg.seed, _DOM_BG, person, vid), _BG_BAND, _MODES_PER_BG)


def _wave_sum(modes, size: int, shift: tuple[float, float], rms: float) -> np.ndarray:
    """Evaluate a sum of 2-D cosines on the pixel grid, normalized to a target RMS."""
    ys, xs = np.meshgrid(
        np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij"
    )
    out = np.zeros((size, size), dtype=np.float64)
    for fx, fy, amp, phase in modes:
        out += amp * np.cos(
            2.0 * np.pi * (fx * (xs + shift[0]) + fy * (ys + shift[1])) / size + phase
        )
    raw_rms = np.sqrt(sum(a * a for _, _, a, _ in modes) / 2.0)
    return out * (rms / raw_rms)


def _ellipse_radius(shape: tuple[int, int]) -> np.ndarray:
    """Normalized radial coordinate of the face ellipse (1.0 at the boundary)."""
    h, w = shape
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    cx, cy = ELLIPSE_CENTER[0] * w, ELLIPSE_CENTER[1] * h
    ax, ay = ELLIPSE_AXES[0] * w, ELLIPSE_AXES[1] * h
    return np.sqrt(((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2)


def face_ellipse_mask(
    shape: tuple[int, int], feather_px: float = REAL_FEATHER_PX, scale: float = 1.0
) -> np.ndarray:
    """Feathered face-region mask in [0, 1]; 1 inside the (scaled) ellipse."""
    r = _ellipse_radius(shape) / scale
    half = feather_px / min(ELLIPSE_AXES[0] * shape[1], ELLIPSE_AXES[1] * shape[0])
    if half <= 0:
        return (r <= 1.0).astype(np.float64)
    return np.clip((1.0 + half - r) / (2.0 * half), 0.0, 1.0)


def _jitter(cfg: GenConfig, person: int, vid: int, frame: int):
    rng = _rng(cfg.seed, _DOM_JITTER, person, vid, frame)
    dx, dy = rng.uniform(-0.7, 0.7, size=2)
    brightness = rng.uniform(-0.01, 0.01)
    gains = rng.uniform(0.9, 1.1, size=3)
    return (dx, dy), brightness, gains


def _compose(
    bg: np.ndarray,
    face: np.ndarray,
    mask: np.ndarray,
    brightness: float,
    gains: np.ndarray,
) -> ImageBuf:
    lum = _BASE + brightness + bg * (1.0 - mask) + face * mask
    rgb = lum[:, :, None] * gains[None, None, :]
    return ImageBuf.from_floats(rgb)


def render_real(cfg: GenConfig, person: int, vid: int, frame: int) -> ImageBuf:
    """Render one real frame of a person's video."""
    size = cfg.image_size
    shift, brightness, gains = _jitter(cfg, person, vid, frame)
    bg = _wave_sum(_bg_modes(cfg, person, vid), size, shift, _BG_RMS)
    face = _wave_sum(_face_modes(cfg, person), size, shift, _FACE_RMS)
    mask = face_ellipse_mask((size, size), REAL_FEATHER_PX)
    return _compose(bg, face, mask, brightness, gains)


def render_swap(cfg: GenConfig, task: FaceSwapId) -> ImageBuf:
    """Render the stock face swap for a task: target frame, source face.

    The compositing differs slightly from real frames (wider feather, seam
    ring, dimmed face) -- the learnable "swap artifact".
    """
    size = cfg.image_size
    t_idx = person_index(task.id_t)
    s_idx = person_index(task.id_s)
    shift, brightness, gains = _jitter(cfg, t_idx, task.vid_idx, task.frame_idx)
    bg = _wave_sum(_bg_modes(cfg, t_idx, task.vid_idx), size, shift, _BG_RMS)
    face = _wave_sum(_face_modes(cfg, s_idx), size, shift, _FACE_RMS)
    face = face * SWAP_FACE_GAIN + SWAP_FACE_OFFSET
    mask = face_ellipse_mask((size, size), SWAP_FEATHER_PX)
    r = _ellipse_radius((size, size))
    seam = SWAP_SEAM_DEPTH * np.exp(-((r - 1.0) ** 2) / (2.0 * SWAP_SEAM_WIDTH**2))
    grain_rng = _rng(cfg.seed, _DOM_GRAIN, t_idx, s_idx, task.vid_idx, task.frame_idx)
    grain = grain_rng.normal(0.0, SWAP_GRAIN_SIGMA, (size, size))
    lum = _BASE + brightness + bg * (1.0 - mask) + face * mask + seam + grain
    rgb = lum[:, :, None] * gains[None, None, :]
    return ImageBuf.from_floats(rgb)


def _pick_sources(cfg: GenConfig, rng: np.random.Generator, n: int, targets: List[int]):
    sources = []
    for t in targets[:n]:
        others = [p for p in range(cfg.n_persons) if p != t]
        sources.append(others[int(rng.integers(len(others)))])
    return sources


def build_task_entries(cfg: GenConfig) -> List[FaceSwapId]:
    """The eval-grid face-swap tasks: n_tasks frames, each paired with a
    deterministically chosen distinct source person."""
    grid = [
        (p, v, f)
        for p in range(cfg.n_persons)
        for v in cfg.eval_vids
        for f in range(cfg.n_frames)
    ]
    rng = _rng(cfg.seed, _DOM_TASKS)
    if cfg.n_tasks < len(grid):
        keep = np.sort(rng.choice(len(grid), size=cfg.n_tasks, replace=False))
        grid = [grid[i] for i in keep]
    sources = _pick_sources(cfg, rng, len(grid), [t for t, _, _ in grid])
    return [
        FaceSwapId(person_label(t), person_label(s), v, f)
        for (t, v, f), s in zip(grid, sources)
    ]


def build_train_entries(cfg: GenConfig) -> List[FaceSwapId]:
    """One stock-swap task per training frame (for detector training data)."""
    grid = [
        (p, v, f)
        for p in range(cfg.n_persons)
        for v in cfg.train_vids
        for f in range(cfg.n_frames)
    ]
    rng = _rng(cfg.seed, _DOM_TRAIN_TASKS)
    sources = _pick_sources(cfg, rng, len(grid), [t for t, _, _ in grid])
    return [
        FaceSwapId(person_label(t), person_label(s), v, f)
        for (t, v, f), s in zip(grid, sources)
    ]


def gen_synthetic(cfg: GenConfig, out_dir: str | Path) -> Dict[str, int]:
    """Write the full dataset tree under ``out_dir``.

    Layout::

        real/                 eval real frames            idT_vid_frame.png
        refs/<person>/        per-person reference frames (video 0)
        train/real/           training real frames
        train/fake/           stock swaps of the training frames
        tasks.txt             the fake images a submission must contain
        meta.json             generator config (lets agents re-render swaps)
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    n_real = 0
    for p in range(cfg.n_persons):
        label = person_label(p)
        for k in range(cfg.n_ref_frames):
            save_png(render_real(cfg, p, 0, k), root / "refs" / label / render_real_name(label, 0, k))
        for v in cfg.train_vids:
            for f in range(cfg.n_frames):
                save_png(render_real(cfg, p, v, f), root / "train" / "real" / render_real_name(label, v, f))
        for v in cfg.eval_vids:
            for f in range(cfg.n_frames):
                save_png(render_real(cfg, p, v, f), root / "real" / render_real_name(label, v, f))
                n_real += 1

    train_entries = build_train_entries(cfg)
    for task in train_entries:
        save_png(render_swap(cfg, task), root / "train" / "fake" / task.render())

    entries = build_task_entries(cfg)
    write_task_list(root / "tasks.txt", entries)
    (root / "meta.json").write_text(
        json.dumps(cfg.to_meta(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return {
        "n_real": n_real,
        "n_tasks": len(entries),
        "n_train_real": cfg.n_persons * cfg.n_train_videos * cfg.n_frames,
        "n_train_fake": len(train_entries),
        "n_refs": cfg.n_persons * cfg.n_ref_frames,
    }
