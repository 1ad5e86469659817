import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2g.data import GenConfig, gen_sample
from l2g.errors import GeometryError
from l2g.rng import Rng, stream
from l2g.views import (Rect, build_viewset, center_rect, crop_map, paste_map,
                       sample_global_view, sample_local_views,
                       sliding_window_rects)


@pytest.fixture(scope="module")
def sample():
    return gen_sample(4, GenConfig())


def test_full_size_global_view_is_identity(sample):
    view, rect = sample_global_view(sample, 96, Rng(0))
    assert rect == Rect(0, 0, 96, 96)
    assert np.array_equal(view, sample.image)


def test_global_view_in_bounds_over_1000_draws(sample):
    rng = stream(1, "draws")
    for _ in range(1000):
        _, rect = sample_global_view(sample, 64, rng)
        assert rect.in_bounds(96, 96)


def test_global_view_deterministic(sample):
    _, r1 = sample_global_view(sample, 64, Rng(5))
    _, r2 = sample_global_view(sample, 64, Rng(5))
    assert r1 == r2


def test_global_view_too_large(sample):
    with pytest.raises(ValueError):
        sample_global_view(sample, 128, Rng(0))


def test_local_views_cardinality(sample):
    gv, _ = sample_global_view(sample, 64, Rng(1))
    pairs = sample_local_views(gv, 4, 48, Rng(2))
    assert len(pairs) == 4


def test_local_view_full_size_degenerate(sample):
    gv, _ = sample_global_view(sample, 64, Rng(1))
    for view, rect in sample_local_views(gv, 3, 64, Rng(2)):
        assert rect == Rect(0, 0, 64, 64)
        assert np.array_equal(view, gv)


def test_local_view_crop_paste_roundtrip(sample):
    gv, _ = sample_global_view(sample, 64, Rng(1))
    for view, rect in sample_local_views(gv, 5, 48, Rng(3)):
        assert np.array_equal(view, crop_map(gv, rect))


def test_local_view_too_large(sample):
    gv, _ = sample_global_view(sample, 64, Rng(1))
    with pytest.raises(ValueError):
        sample_local_views(gv, 1, 65, Rng(0))


def test_viewset_invariants(sample):
    vs = build_viewset(sample, 64, 48, 4, Rng(9))
    assert vs.local_views.shape == (4, 3, 48, 48)
    assert len(vs.local_rects) == 4
    for rect in vs.local_rects:
        assert rect.in_bounds(64, 64)


# -- crop_map ---------------------------------------------------------------------


def test_crop_map_delta_translation():
    m = np.zeros((2, 10, 10))
    m[1, 7, 4] = 1.0
    r = Rect(x0=3, y0=5, w=6, h=5)
    out = crop_map(m, r)
    assert out.shape == (2, 5, 6)
    assert out[1, 7 - 5, 4 - 3] == 1.0
    assert out.sum() == 1.0


def test_crop_map_full_rect_identity():
    m = np.arange(32.0).reshape(2, 4, 4)
    assert np.array_equal(crop_map(m, Rect(0, 0, 4, 4)), m)


def test_crop_map_out_of_bounds_reports_rect():
    with pytest.raises(GeometryError, match="Rect"):
        crop_map(np.zeros((4, 4)), Rect(2, 2, 4, 4))


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_crop_paste_roundtrip_property(data):
    h = data.draw(st.integers(4, 20))
    w = data.draw(st.integers(4, 20))
    rh = data.draw(st.integers(1, h))
    rw = data.draw(st.integers(1, w))
    y0 = data.draw(st.integers(0, h - rh))
    x0 = data.draw(st.integers(0, w - rw))
    rng = stream(data.draw(st.integers(0, 1000)), "cp")
    m = rng.uniform_array(h * w).reshape(h, w)
    rect = Rect(x0, y0, rw, rh)
    out = m.copy()
    paste_map(out, crop_map(m, rect), rect)
    assert np.array_equal(out, m)


def test_crop_paste_roundtrip_10k_random_rects():
    rng = stream(42, "rects")
    m = rng.uniform_array(64 * 64).reshape(64, 64)
    for _ in range(10_000):
        w = rng.randint(1, 64)
        h = rng.randint(1, 64)
        x0 = rng.randint(0, 64 - w)
        y0 = rng.randint(0, 64 - h)
        rect = Rect(x0, y0, w, h)
        assert rect.in_bounds(64, 64)
        out = m.copy()
        paste_map(out, crop_map(m, rect), rect)
        assert np.array_equal(out, m)


# -- sliding grid ------------------------------------------------------------------


def test_sliding_grid_448_320_64_gives_9():
    rects = sliding_window_rects(448, 320, 64)
    assert len(rects) == 9
    assert rects[0] == Rect(0, 0, 320, 320)
    assert rects[-1] == Rect(128, 128, 320, 320)


def test_sliding_grid_64_48_8_gives_9():
    # ((64-48)/8+1)^2 = 9
    assert len(sliding_window_rects(64, 48, 8)) == 9


def test_sliding_grid_window_equals_grid():
    assert sliding_window_rects(32, 32, 4) == [Rect(0, 0, 32, 32)]


def test_sliding_grid_covers_every_pixel():
    for g, w, s in [(448, 320, 64), (64, 48, 8), (50, 16, 10), (33, 8, 7)]:
        cover = np.zeros((g, g), dtype=bool)
        for r in sliding_window_rects(g, w, s):
            assert r.in_bounds(g, g)
            cover[r.y0:r.y0 + r.h, r.x0:r.x0 + r.w] = True
        assert cover.all(), (g, w, s)


def test_center_rect():
    assert center_rect(96, 64) == Rect(16, 16, 64, 64)
    assert center_rect(64, 64) == Rect(0, 0, 64, 64)
