import math

import numpy as np
import pytest

from dynhdp.features import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    FeatureConfig,
    FlowField,
    FrameError,
    clip_bounds,
    compute_flow,
    direction,
    extract_corpus,
    load_frames,
    moving_blobs,
    quantize_words,
    read_pgm,
    write_pgm,
    write_sequence,
)


def smooth_pair(shift_x=1.0, shift_y=0.0, size=40):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)

    def g(x, y):
        return np.sin(x / 5.0) + np.cos(y / 7.0) + 0.5 * np.sin((x + y) / 9.0)

    a = g(xx, yy)
    lo, span = a.min(), np.ptp(a)
    # content moves by (shift_x, shift_y): new(x) = old(x - shift)
    return (a - lo) / span, (g(xx - shift_x, yy - shift_y) - lo) / span


def interior(a, m=8):
    return a[m:-m, m:-m]


def test_unit_shift_right():
    a, b = smooth_pair(1.0, 0.0)
    f = compute_flow(a, b)
    assert 0.5 <= interior(f.u).mean() <= 1.5
    assert -0.25 <= interior(f.v).mean() <= 0.25


def test_unit_shift_down_is_positive_v():
    a, b = smooth_pair(0.0, 1.0)
    f = compute_flow(a, b)
    assert 0.5 <= interior(f.v).mean() <= 1.5
    assert abs(interior(f.u).mean()) <= 0.25


def test_identical_frames_zero_flow():
    a, _ = smooth_pair()
    f = compute_flow(a, a)
    assert max(np.abs(f.u).max(), np.abs(f.v).max()) < 1e-6


def test_flat_frames_zero_flow():
    a = np.full((20, 30), 0.4)
    f = compute_flow(a, a.copy())
    assert np.abs(f.u).max() < 1e-6 and np.abs(f.v).max() < 1e-6
    # a brightness change without texture gives no direction either
    g = compute_flow(np.full((20, 30), 100, np.uint8), np.full((20, 30), 120, np.uint8))
    assert np.abs(g.u).max() < 1e-6 and np.abs(g.v).max() < 1e-6


def test_flow_dimension_mismatch():
    with pytest.raises(FrameError):
        compute_flow(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(FrameError):
        compute_flow(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))


def test_flow_deterministic():
    a, b = smooth_pair()
    f1, f2 = compute_flow(a, b), compute_flow(a, b)
    assert np.array_equal(f1.u, f2.u) and np.array_equal(f1.v, f2.v)


@pytest.mark.parametrize("uv,code", [
    ((1, 0), RIGHT), ((0, -1), UP), ((-1, 0), LEFT), ((0, 1), DOWN),
    ((1, -1), UP),       # 45 degrees: lower edge of up
    ((-1, -1), LEFT),    # 135 degrees
    ((-1, 1), DOWN),     # 225 degrees
    ((1, 1), RIGHT),     # 315 degrees = -45: lower edge of right
    ((1, 1e-9), RIGHT), ((1e-9, 1), DOWN),
])
def test_direction_bins(uv, code):
    assert direction(*uv) == code


def test_direction_partition():
    for deg in np.arange(0.0, 360.0, 0.5):
        t = math.radians(deg)
        u, v = math.cos(t), -math.sin(t)
        expect = int(((deg + 45.0) % 360.0) // 90.0)
        assert direction(u, v) == expect


def make_flow(cell_vectors, cell=4):
    rows, cols = len(cell_vectors), len(cell_vectors[0])
    u = np.zeros((rows * cell + 2, cols * cell + 3))   # remainder pixels are ignored
    v = np.zeros_like(u)
    for r in range(rows):
        for c in range(cols):
            u[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = cell_vectors[r][c][0]
            v[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = cell_vectors[r][c][1]
    u[-2:, :] = 100.0
    return FlowField(u, v)


def test_quantize_words_cells_and_threshold():
    cfg = FeatureConfig(cell_size=4, tau=0.1)
    flow = make_flow([[(1, 0), (0, 0)], [(0.05, 0), (0, 2)]])
    assert quantize_words(flow, cfg) == [0 * 4 + RIGHT, 3 * 4 + DOWN]
    assert quantize_words(flow, FeatureConfig(cell_size=4, tau=0.0)) == [0, 8 + RIGHT, 12 + DOWN]


def test_words_below_vocab_size():
    rng = np.random.default_rng(0)
    cfg = FeatureConfig(cell_size=3, tau=0.0)
    for _ in range(20):
        flow = FlowField(rng.normal(size=(17, 11)), rng.normal(size=(17, 11)))
        words = quantize_words(flow, cfg)
        assert all(0 <= w < cfg.vocab_size((17, 11)) for w in words)
    assert cfg.vocab_size((17, 11)) == (11 // 3) * (17 // 3) * 4


def test_clip_counting():
    assert clip_bounds(11, 5) == [(0, 5, False), (5, 10, False)]
    assert clip_bounds(12, 5)[-1] == (10, 11, True)
    frames = [np.full((8, 8), 50, np.uint8)] * 11
    c = extract_corpus(frames, FeatureConfig(cell_size=4, clip_length=5, iterations=5))
    assert len(c) == 2 and c.V == 16
    assert c.lengths().tolist() == [0, 0]


def test_static_two_frames_single_empty_document():
    a, _ = smooth_pair()
    c = extract_corpus([a, a], FeatureConfig(cell_size=8))
    assert len(c) == 1 and len(c[0]) == 0 and c.V == 5 * 5 * 4


def test_extract_needs_two_equal_frames():
    with pytest.raises(FrameError):
        extract_corpus([np.zeros((8, 8))])
    with pytest.raises(FrameError):
        extract_corpus([np.zeros((8, 8)), np.zeros((9, 8))])


def test_moving_sequence_has_words():
    frames = moving_blobs(6, (32, 32), seed=1)
    c = extract_corpus(frames, FeatureConfig(cell_size=8, clip_length=5, iterations=50))
    assert len(c) == 1 and len(c[0]) > 0


def test_pgm_round_trip(tmp_path):
    img = (np.arange(60).reshape(6, 10) * 4).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5")
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_errors(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"not an image")
    with pytest.raises(FrameError, match="bad.pgm"):
        read_pgm(tmp_path / "bad.pgm")
    with pytest.raises(FrameError, match="not a directory"):
        load_frames(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FrameError, match="no .pgm"):
        load_frames(tmp_path / "empty")


def test_load_frames_numeric_order(tmp_path):
    frames = [np.full((4, 4), i, np.uint8) for i in range(12)]
    write_sequence(tmp_path, frames)
    (tmp_path / "frame_0011.pgm").rename(tmp_path / "frame_11.pgm")
    got = load_frames(tmp_path)
    assert [int(f[0, 0]) for f in got] == list(range(12))


def test_load_frames_size_mismatch_names_files(tmp_path):
    write_pgm(tmp_path / "f0.pgm", np.zeros((4, 4), np.uint8))
    write_pgm(tmp_path / "f1.pgm", np.zeros((5, 4), np.uint8))
    with pytest.raises(FrameError, match="f0.pgm.*f1.pgm"):
        load_frames(tmp_path)


def test_feature_config_validation():
    for bad in [dict(cell_size=0), dict(tau=-1.0), dict(clip_length=0), dict(smoothness=0.0)]:
        with pytest.raises(ValueError):
            FeatureConfig(**bad)
