"""Deterministic synthetic video corpus: a bright square moving in one of four directions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError
from .formats import Dataset
from .rng import SeededRng

CLASSES = ("right", "left", "down", "up")
# (dy, dx) per frame, in units of the speed
DIRECTIONS = {"right": (0, 1), "left": (0, -1), "down": (1, 0), "up": (-1, 0)}


@dataclass
class SyntheticCorpusSpec:
    num_samples: int = 100  # per class
    size: int = 32
    frames: int = 8
    channels: int = 1
    square: int = 8
    speed: int = 2
    square_intensity: float = 0.9
    background: float = 0.1
    texture: float = 0.05
    seed: int = 0

    @property
    def travel(self) -> int:
        return self.speed * (self.frames - 1)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def split_sizes(per_class: int) -> tuple[int, int, int]:
    n_train = (per_class * 6) // 10
    n_val = (per_class * 2) // 10
    return n_train, n_val, per_class - n_train - n_val


def render_sample(spec: SyntheticCorpusSpec, label: int, rng: SeededRng) -> np.ndarray:
    dy, dx = DIRECTIONS[CLASSES[label]]
    free = spec.size - spec.square
    # start range keeps the square on canvas for the whole clip
    lo_y, hi_y = (0, free - spec.travel) if dy > 0 else (spec.travel, free) if dy < 0 else (0, free)
    lo_x, hi_x = (0, free - spec.travel) if dx > 0 else (spec.travel, free) if dx < 0 else (0, free)
    pos = rng.split("pos").uniform(2)
    y0 = lo_y + int(pos[0] * (hi_y - lo_y + 1))
    x0 = lo_x + int(pos[1] * (hi_x - lo_x + 1))
    video = np.full((spec.channels, spec.frames, spec.size, spec.size), spec.background, np.float32)
    for f in range(spec.frames):
        y = y0 + dy * spec.speed * f
        x = x0 + dx * spec.speed * f
        video[:, f, y:y + spec.square, x:x + spec.square] = spec.square_intensity
    noise = (2.0 * rng.split("texture").uniform(video.shape) - 1.0) * np.float32(spec.texture)
    return np.clip(video + noise, 0.0, 1.0).astype(np.float32)


def gen_corpus(spec: SyntheticCorpusSpec) -> Dataset:
    """All samples, ordered train block, val block, test block (60/20/20 per class)."""
    if spec.num_samples < 1:
        raise ContractError("num_samples per class must be >= 1")
    if spec.size - spec.square < spec.travel:
        raise ContractError(
            f"canvas {spec.size} too small for a {spec.square}px square travelling {spec.travel}px"
        )
    root = SeededRng(spec.seed, ("corpus",))
    per_split = [[] for _ in range(3)]
    sizes = split_sizes(spec.num_samples)
    for label in range(len(CLASSES)):
        i = 0
        for s, count in enumerate(sizes):
            for _ in range(count):
                video = render_sample(spec, label, root.split(label, i))
                per_split[s].append((label, video))
                i += 1
    xs, ys = [], []
    for block in per_split:
        # blocks are grouped by label; interleave them
        n = len(block) // len(CLASSES)
        for j in range(n):
            for label in range(len(CLASSES)):
                lab, video = block[label * n + j]
                ys.append(lab)
                xs.append(video)
    return Dataset(np.stack(xs), np.asarray(ys, dtype=np.int64), len(CLASSES))


def split_corpus(ds: Dataset) -> Splits:
    per_class = len(ds) // ds.num_classes
    n_train, n_val, _ = split_sizes(per_class)
    a = n_train * ds.num_classes
    b = a + n_val * ds.num_classes
    idx = np.arange(len(ds))
    return Splits(ds.subset(idx[:a]), ds.subset(idx[a:b]), ds.subset(idx[b:]))


def centroid_track(video: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """(frames, 2) centroid (row, col) of above-threshold pixels, channel 0."""
    out = []
    for frame in video[0]:
        rows, cols = np.nonzero(frame > threshold)
        out.append((rows.mean(), cols.mean()))
    return np.asarray(out)
