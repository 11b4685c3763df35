"""Motion words from grayscale frame sequences.

Each consecutive frame pair gives a dense flow field.  The field is averaged
over non-overlapping ``cell_size`` blocks; a block whose mean motion is at
least ``tau`` pixels/frame emits one word encoding the block and one of four
directions.  Words from ``clip_length`` consecutive pairs form one document.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .corpus import Corpus, Document, Vocabulary

RIGHT, UP, LEFT, DOWN = 0, 1, 2, 3
DIRECTIONS = ("right", "up", "left", "down")

# neighbourhood average used by the smoothness update
_AVG = np.array([[1 / 12, 1 / 6, 1 / 12],
                 [1 / 6, 0.0, 1 / 6],
                 [1 / 12, 1 / 6, 1 / 12]])
_KX = np.array([[-1.0, 1.0], [-1.0, 1.0]]) * 0.25
_KY = np.array([[-1.0, -1.0], [1.0, 1.0]]) * 0.25
_KT = np.ones((2, 2)) * 0.25


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    cell_size: int = 8
    tau: float = 0.05            # pixels/frame
    clip_length: int = 25        # frame pairs per document
    smoothness: float = 0.01     # weight of the smoothness term, intensities in [0, 1]
    iterations: int = 200

    def __post_init__(self):
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1")
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        if self.clip_length < 1:
            raise ValueError("clip_length must be >= 1")
        if not self.smoothness > 0:
            raise ValueError("smoothness must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def grid(self, shape) -> tuple:
        """Number of cell rows and columns for an image of ``shape`` (H, W)."""
        return shape[0] // self.cell_size, shape[1] // self.cell_size

    def vocab_size(self, shape) -> int:
        rows, cols = self.grid(shape)
        return rows * cols * 4


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray   # columns per frame, positive to the right
    v: np.ndarray   # rows per frame, positive downwards

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be 2-D arrays of equal shape")

    @property
    def shape(self):
        return self.u.shape


def _as_gray(frame, name="frame") -> np.ndarray:
    a = np.asarray(frame)
    if a.ndim != 2:
        raise FrameError(f"{name}: expected a single-channel image, got shape {a.shape}")
    a = a.astype(np.float64)
    if np.issubdtype(np.asarray(frame).dtype, np.integer):
        a /= 255.0
    return a


def compute_flow(frame_a, frame_b, cfg: FeatureConfig = FeatureConfig()) -> FlowField:
    """Dense flow between two frames by global-smoothness fixed-point iteration.

    Integer frames are taken as 8-bit and scaled to [0, 1]; float frames are
    used as given.
    """
    a = _as_gray(frame_a, "frame_a")
    b = _as_gray(frame_b, "frame_b")
    if a.shape != b.shape:
        raise FrameError(f"frame sizes differ: {a.shape} vs {b.shape}")
    conv = lambda img, k: ndimage.correlate(img, k, mode="nearest")
    ix = conv(a, _KX) + conv(b, _KX)
    iy = conv(a, _KY) + conv(b, _KY)
    it = conv(b, _KT) - conv(a, _KT)
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    den = cfg.smoothness + ix ** 2 + iy ** 2
    for _ in range(cfg.iterations):
        ubar = conv(u, _AVG)
        vbar = conv(v, _AVG)
        r = (ix * ubar + iy * vbar + it) / den
        u = ubar - ix * r
        v = vbar - iy * r
    return FlowField(u, v)


def direction(u: float, v: float) -> int:
    """Direction code of a screen-coordinate vector (v > 0 points down).

    Four half-open 90 degree sectors centred on the axes, each owning its
    lower (clockwise) edge.
    """
    theta = math.degrees(math.atan2(-v, u)) % 360.0
    return int(((theta + 45.0) % 360.0) // 90.0)


def cell_means(flow: FlowField, cell_size: int) -> tuple:
    rows, cols = flow.shape[0] // cell_size, flow.shape[1] // cell_size
    h, w = rows * cell_size, cols * cell_size

    def pool(a):
        return a[:h, :w].reshape(rows, cell_size, cols, cell_size).mean(axis=(1, 3))
    return pool(flow.u), pool(flow.v)


def quantize_words(flow: FlowField, cfg: FeatureConfig = FeatureConfig()) -> list:
    """Words of one frame pair, in cell order."""
    mu, mv = cell_means(flow, cfg.cell_size)
    words = []
    for idx, (u, v) in enumerate(zip(mu.ravel(), mv.ravel())):
        mag = math.hypot(u, v)
        if mag == 0.0 or mag < cfg.tau:
            continue
        words.append(idx * 4 + direction(u, v))
    return words


def clip_bounds(n_frames: int, clip_length: int) -> list:
    """``(first_pair, stop_pair, partial)`` for each clip of a sequence."""
    n_pairs = max(n_frames - 1, 0)
    out = []
    for start in range(0, n_pairs, clip_length):
        stop = min(start + clip_length, n_pairs)
        out.append((start, stop, stop - start < clip_length))
    return out


def extract_corpus(frames: Sequence, cfg: FeatureConfig = FeatureConfig(), map_fn=map) -> Corpus:
    """Pool words of consecutive frame pairs into clip documents.

    A trailing clip shorter than ``clip_length`` pairs is kept; ``clip_bounds``
    reports which clip that is.  ``map_fn`` may be a thread pool's ``map``.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise FrameError("need at least two frames")
    shape = np.asarray(frames[0]).shape
    for i, f in enumerate(frames):
        if np.asarray(f).shape != shape:
            raise FrameError(f"frame {i} has shape {np.asarray(f).shape}, frame 0 has {shape}")
    V = cfg.vocab_size(shape)
    if V == 0:
        raise FrameError(f"frames of shape {shape} hold no {cfg.cell_size}x{cfg.cell_size} cell")
    pair_words = list(map_fn(lambda ab: quantize_words(compute_flow(ab[0], ab[1], cfg), cfg),
                             zip(frames[:-1], frames[1:])))
    docs = []
    for start, stop, _ in clip_bounds(len(frames), cfg.clip_length):
        docs.append(Document([w for ws in pair_words[start:stop] for w in ws], len(docs)))
    labels = tuple(f"c{i}_{d}" for i in range(V // 4) for d in DIRECTIONS)
    return Corpus(Vocabulary(V, labels), tuple(docs))


# ---------------------------------------------------------------------------
# PGM frames


def read_pgm(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode not in ("L", "I", "I;16", "I;16B"):
                raise FrameError(f"{path}: not a grayscale PGM file")
            return np.asarray(im)
    except (OSError, SyntaxError) as e:
        raise FrameError(f"{path}: unreadable frame ({e})") from e


def write_pgm(path, frame) -> None:
    a = np.asarray(frame)
    if a.ndim != 2:
        raise FrameError(f"{path}: expected a 2-D array")
    Image.fromarray(np.clip(a, 0, 255).astype(np.uint8), mode="L").save(path, format="PPM")


def _frame_key(p: Path):
    nums = re.findall(r"\d+", p.stem)
    return (int(nums[-1]) if nums else -1, p.name)


def list_frames(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise FrameError(f"{d}: not a directory")
    files = sorted((p for p in d.iterdir() if p.suffix.lower() == ".pgm"), key=_frame_key)
    if not files:
        raise FrameError(f"{d}: no .pgm frames found")
    return files


def load_frames(directory) -> list:
    files = list_frames(directory)
    frames = [read_pgm(p) for p in files]
    for p, f in zip(files[1:], frames[1:]):
        if f.shape != frames[0].shape:
            raise FrameError(f"frame size mismatch: {files[0]} is {frames[0].shape}, {p} is {f.shape}")
    return frames


def moving_blobs(n_frames: int = 50, size=(48, 64), seed: int = 0) -> list:
    """Smooth blobs drifting across a textured background; 8-bit frames."""
    rng = np.random.default_rng(seed)
    H, W = size
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    bg = ndimage.gaussian_filter(rng.random((H, W)), 3.0)
    bg = 60 + 40 * (bg - bg.min()) / (np.ptp(bg) + 1e-12)
    n_blobs = 3
    pos = rng.uniform([8, 8], [H - 8, W - 8], size=(n_blobs, 2))
    vel = rng.choice([-1.0, 1.0], size=(n_blobs, 2)) * rng.uniform(0.5, 1.5, size=(n_blobs, 2))
    frames = []
    for _ in range(n_frames):
        img = bg.copy()
        for (r, c) in pos:
            img += 120 * np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / (2 * 4.0 ** 2))
        frames.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        pos += vel
        for b in range(n_blobs):
            for ax, lim in ((0, H), (1, W)):
                if not 4 <= pos[b, ax] <= lim - 4:
                    vel[b, ax] = -vel[b, ax]
                    pos[b, ax] = min(max(pos[b, ax], 4), lim - 4)
    return frames


def write_sequence(directory, frames: Iterable) -> list:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = Path(directory) / f"frame_{i:04d}.pgm"
        write_pgm(p, f)
        paths.append(p)
    return paths
