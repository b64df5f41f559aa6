import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from rtimplant import imagecore as ic
from rtimplant.errors import ParameterError, ShapeError

ALL_3x3 = [np.array(bits, dtype=float).reshape(3, 3) for bits in itertools.product((0, 1), repeat=9)]


def dilate_oracle(m, k):
    h, w = m.shape
    r = k // 2
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    y, x = i + di, j + dj
                    if 0 <= y < h and 0 <= x < w and m[y, x] == 1:
                        out[i, j] = 1
    return out


def composite_oracle(pred, x, m):
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        for i in range(x.shape[1]):
            for j in range(x.shape[2]):
                out[c, i, j] = pred[c, i, j] if m[i, j] == 1 else x[c, i, j]
    return out


# --- composite -------------------------------------------------------------

def test_composite_full_and_empty_masks():
    rng = np.random.default_rng(0)
    pred, x = rng.random((2, 3, 4, 4))
    np.testing.assert_array_equal(ic.composite(pred, x, np.ones((4, 4))), pred)
    np.testing.assert_array_equal(ic.composite(pred, x, np.zeros((4, 4))), x)


def test_composite_2x2_diagonal():
    pred = np.arange(12, dtype=float).reshape(3, 2, 2) / 12
    x = 1 - pred
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    r = ic.composite(pred, x, m)
    assert r[:, 0, 0].tolist() == pred[:, 0, 0].tolist()
    assert r[:, 0, 1].tolist() == x[:, 0, 1].tolist()
    assert r[:, 1, 0].tolist() == x[:, 1, 0].tolist()
    assert r[:, 1, 1].tolist() == pred[:, 1, 1].tolist()


def test_composite_exhaustive_3x3():
    rng = np.random.default_rng(1)
    pred, x = rng.random((2, 3, 3, 3))
    for m in ALL_3x3:
        np.testing.assert_array_equal(ic.composite(pred, x, m), composite_oracle(pred, x, m))


def test_composite_shape_errors():
    with pytest.raises(ShapeError):
        ic.composite(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)), np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        ic.composite(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)), np.zeros((5, 4)))


@given(arrays(np.float64, (3, 5, 5), elements=st.floats(0, 1)),
       arrays(np.uint8, (5, 5), elements=st.integers(0, 1)))
def test_composite_identical_inputs(x, m):
    np.testing.assert_array_equal(ic.composite(x, x, m.astype(float)), x)


# --- expansion -------------------------------------------------------------

def test_expand_single_pixel():
    m = np.zeros((7, 7))
    m[3, 3] = 1
    expected = np.zeros((7, 7))
    expected[2:5, 2:5] = 1
    np.testing.assert_array_equal(ic.expand_mask(m, 3), expected)


def test_expand_empty_and_full():
    np.testing.assert_array_equal(ic.expand_mask(np.zeros((6, 6)), 7), np.zeros((6, 6)))
    np.testing.assert_array_equal(ic.expand_mask(np.ones((6, 6)), 7), np.ones((6, 6)))


@pytest.mark.parametrize("k", [2, 0, -1, 4])
def test_expand_rejects_bad_kernel(k):
    with pytest.raises(ParameterError):
        ic.expand_mask(np.zeros((5, 5)), k)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_expand_exhaustive_3x3(k):
    for m in ALL_3x3:
        np.testing.assert_array_equal(ic.expand_mask(m, k), dilate_oracle(m, k))


def test_expand_extensive_and_monotone_exhaustive():
    expanded = {m.tobytes(): ic.expand_mask(m, 3) for m in ALL_3x3}
    for m in ALL_3x3:
        assert np.all(expanded[m.tobytes()] >= m)
    # every ordered pair m1 <= m2 (3^9 pairs)
    for assign in itertools.product((0, 1, 2), repeat=9):
        a = np.array(assign).reshape(3, 3)
        m1 = (a == 2).astype(float)
        m2 = (a >= 1).astype(float)
        assert np.all(expanded[m1.tobytes()] <= expanded[m2.tobytes()])


# --- subtraction -----------------------------------------------------------

def test_subtract_basic_cases():
    t = np.zeros((5, 5))
    t[2, 2] = 1
    e = np.zeros((5, 5))
    e[1:4, 1:4] = 1
    assert ic.subtract_trigger(t, t).sum() == 0
    d = np.zeros((5, 5))
    d[0, 0] = 1
    np.testing.assert_array_equal(ic.subtract_trigger(d, t), d)
    ring = ic.subtract_trigger(e, t)
    assert ring.sum() == 8 and ring[2, 2] == 0


def test_subtract_exhaustive_3x3():
    for e in ALL_3x3:
        for t in ALL_3x3:
            out = ic.subtract_trigger(e, t)
            oracle = np.array([[max(0.0, min(1.0, e[i, j] - t[i, j])) for j in range(3)]
                               for i in range(3)])
            assert np.array_equal(out, oracle)
            assert not np.any(out * t)


def test_subtract_of_expansion_partitions():
    for t in ALL_3x3:
        e = ic.expand_mask(t, 3)
        ring = ic.subtract_trigger(e, t)
        np.testing.assert_array_equal(np.maximum(ring, t), e)


def test_subtract_shape_error():
    with pytest.raises(ShapeError):
        ic.subtract_trigger(np.zeros((3, 3)), np.zeros((3, 4)))


# --- incomplete sampling ---------------------------------------------------

def test_sample_incomplete_extremes():
    e = ic.expand_mask(ic.centered_square(32, 8), 7)
    np.testing.assert_array_equal(ic.sample_incomplete(e, 1.0, 3), e)
    assert ic.sample_incomplete(e, 0.0, 3).sum() == 0


def test_sample_incomplete_half_count():
    e = np.zeros((40, 40))
    e[10:30, 10:30] = 1
    kept = ic.sample_incomplete(e, 0.5, seed=12345)
    assert 180 <= kept.sum() <= 220


@given(st.integers(0, 2**63 - 1), st.floats(0, 1))
@settings(max_examples=50)
def test_sample_incomplete_subset_and_deterministic(seed, fraction):
    e = ic.expand_mask(ic.centered_square(16, 4), 5)
    a = ic.sample_incomplete(e, fraction, seed)
    b = ic.sample_incomplete(e, fraction, seed)
    np.testing.assert_array_equal(a, b)
    assert np.all(a <= e)


def test_sample_incomplete_halfplane():
    e = np.zeros((20, 20))
    e[5:15, 5:15] = 1
    kept = ic.sample_incomplete(e, 0.5, 4, mode="halfplane")
    assert kept.sum() == 50 and np.all(kept <= e)


@pytest.mark.parametrize("fraction", [-0.1, 1.5])
def test_sample_incomplete_rejects_fraction(fraction):
    with pytest.raises(ParameterError):
        ic.sample_incomplete(np.ones((4, 4)), fraction, 0)


# --- file I/O --------------------------------------------------------------

def test_load_image_byte_values(tmp_path):
    data = np.array([[[255, 0, 128]]], dtype=np.uint8)
    Image.fromarray(data, mode="RGB").save(tmp_path / "px.png")
    img = ic.load_image(tmp_path / "px.png")
    assert img.shape == (3, 1, 1)
    assert img[0, 0, 0] == 1.0
    assert img[1, 0, 0] == 0.0
    assert img[2, 0, 0] == pytest.approx(0.50196, abs=1e-5)
    assert img[2, 0, 0] == 128 / 255


@given(arrays(np.float64, (3, 6, 5), elements=st.floats(0, 1)))
@settings(max_examples=30, deadline=None)
def test_image_roundtrip_quantization(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("rt") / "img.png"
    ic.save_image(img, path)
    back = ic.load_image(path)
    assert np.abs(back - img).max() <= 1 / 510 + 1e-12


def test_load_image_rejects_16bit(tmp_path):
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ParameterError):
        ic.load_image(tmp_path / "deep.png")


def test_load_mask_threshold(tmp_path):
    for value, expected in ((255, 1.0), (0, 0.0), (127, 0.0), (128, 1.0)):
        Image.fromarray(np.full((3, 3), value, dtype=np.uint8), mode="L").save(tmp_path / "m.png")
        m = ic.load_mask(tmp_path / "m.png")
        assert np.all(m == expected)


def test_load_mask_from_rgb(tmp_path):
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[:2] = 255
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "m.png")
    m = ic.load_mask(tmp_path / "m.png")
    assert m[:2].sum() == 8 and m[2:].sum() == 0


def test_mask_roundtrip(tmp_path):
    m = ic.centered_square(16, 4)
    ic.save_mask(m, tmp_path / "m.png")
    np.testing.assert_array_equal(ic.load_mask(tmp_path / "m.png"), m)


def test_check_image_rejects_out_of_range():
    with pytest.raises(ParameterError):
        ic.check_image(np.full((3, 2, 2), 1.5))
    with pytest.raises(ShapeError):
        ic.check_image(np.zeros((2, 2)))
