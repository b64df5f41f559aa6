import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtimplant import diffcore as dc
from rtimplant import inpaintnet as inn
from rtimplant.errors import CheckpointError, ParameterError, ShapeError


def count_oracle(w):
    # (c_in, c_out) per 3x3 conv, weights plus biases
    chans = [(4, 16 * w), (16 * w, 32 * w), (32 * w, 32 * w), (32 * w, 32 * w), (32 * w, 16 * w), (16 * w, 3)]
    return sum(ci * co * 9 + co for ci, co in chans)


def test_parameter_count_pinned():
    assert inn.init_model(0).params.count() == 28787
    assert count_oracle(1) == 28787


@pytest.mark.parametrize("w", [1, 2, 3])
def test_parameter_count_matches_shape_walk(w):
    assert inn.init_model(0, w).params.count() == count_oracle(w)


def test_init_is_deterministic():
    a, b = inn.init_model(7), inn.init_model(7)
    assert a.param_bytes() == b.param_bytes()
    assert a.param_bytes() != inn.init_model(8).param_bytes()


def test_init_rejects_zero_width():
    with pytest.raises(ParameterError):
        inn.init_model(0, 0)


def test_untrained_output_strictly_inside_unit_interval(rng):
    x = rng.random((2, 3, 16, 16))
    out = inn.generate(inn.init_model(0), x, np.ones((16, 16))).value
    assert out.shape == x.shape
    assert np.all(out > 0) and np.all(out < 1)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_output_range_for_extreme_inputs(seed):
    rng = np.random.default_rng(seed)
    x = rng.choice([0.0, 1.0], size=(3, 8, 8))
    m = (rng.random((8, 8)) < 0.5).astype(float)
    r = inn.predict(inn.init_model(seed % 5), x, m)
    assert np.all((r >= 0) & (r <= 1))


def test_passthrough_outside_mask(quick_model, scene, trigger):
    r = inn.predict(quick_model, scene, trigger)
    outside = ~trigger.astype(bool)
    assert np.array_equal(r[:, outside], scene[:, outside])


def test_empty_mask_returns_input(quick_model, scene):
    assert np.array_equal(inn.predict(quick_model, scene, np.zeros((64, 64))), scene)


def test_output_ignores_hidden_pixels(quick_model, scene, trigger, rng):
    noisy = scene.copy()
    noisy[:, trigger.astype(bool)] = rng.random((3, int(trigger.sum())))
    assert np.array_equal(inn.predict(quick_model, scene, trigger), inn.predict(quick_model, noisy, trigger))


def test_indivisible_sides_rejected():
    with pytest.raises(ShapeError):
        inn.predict(inn.init_model(0), np.zeros((3, 10, 12)), np.zeros((10, 12)))
    with pytest.raises(ShapeError):
        inn.predict(inn.init_model(0), np.zeros((3, 8, 8)), np.zeros((4, 8)))


@pytest.mark.parametrize("seed", range(3))
def test_predict_input_gradient(seed):
    model = inn.init_model(seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    m = np.zeros((8, 8))
    m[2:6, 3:7] = 1
    target = rng.random((1, 3, 8, 8))
    rep = dc.grad_check(lambda t: dc.mse(inn.predict_batch(model, t, m), target),
                        dc.Tensor(rng.random((1, 3, 8, 8))))
    assert rep.passed, rep


def test_trained_beats_untrained_on_held_out(quick_model):
    from rtimplant import metrics, synthtrain
    x = synthtrain.generate_scene(synthtrain.SceneSpec(seed=424242))
    m = synthtrain.random_rect_mask(3, 64, (0.05, 0.05))
    trained = metrics.psnr(inn.predict(quick_model, x, m), x, m).value
    untrained = metrics.psnr(inn.predict(inn.init_model(0), x, m), x, m).value
    assert trained > untrained


# --- checkpoints -----------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path, quick_model, scene, trigger):
    path = tmp_path / "m.mgck"
    inn.save_model(quick_model, path)
    back = inn.load_model(path)
    assert back.param_bytes() == quick_model.param_bytes()
    assert back.train_steps == quick_model.train_steps
    assert inn.predict(back, scene, trigger).tobytes() == inn.predict(quick_model, scene, trigger).tobytes()


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "m.mgck"
    inn.save_model(inn.init_model(0), path)
    data = path.read_bytes()
    assert data[:4] == b"MGCK"
    assert struct.unpack_from("<IIII", data, 4) == (1, 1, 0, 12)
    assert data.endswith(np.ascontiguousarray(inn.init_model(0).params["dec2.bias"].value, "<f4").tobytes())


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.mgck"
    inn.save_model(inn.init_model(0), path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="magic"):
        inn.load_model(path)


def test_checkpoint_future_version(tmp_path):
    path = tmp_path / "m.mgck"
    inn.save_model(inn.init_model(0), path)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version 2"):
        inn.load_model(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.mgck"
    inn.save_model(inn.init_model(0), path)
    path.write_bytes(path.read_bytes()[:-400])
    with pytest.raises(CheckpointError, match="truncated"):
        inn.load_model(path)
