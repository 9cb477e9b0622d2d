import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultrange.errors import ConfigError
from faultrange.graph import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Flatten,
    Linear,
    MaxPool2d,
    ModelGraph,
    ReLU,
    dump_fmaps,
    forward,
    predict,
)


def identity_conv():
    return Conv2d(1, 1, (1, 1), weight=np.ones((1, 1, 1, 1), np.float32))


def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
    out = identity_conv().forward(x)
    assert np.array_equal(out, x)


def test_conv_known_sum():
    w = np.ones((1, 1, 2, 2), np.float32)
    conv = Conv2d(1, 1, (2, 2), weight=w)
    x = np.array([[[1, 2], [3, 4]]], np.float32)
    assert conv.forward(x)[0, 0, 0] == 10.0


def test_conv_bias_seeds_accumulator():
    conv = Conv2d(1, 1, (1, 1), weight=np.zeros((1, 1, 1, 1), np.float32),
                  bias=np.array([3.0], np.float32))
    out = conv.forward(np.ones((1, 2, 2), np.float32))
    assert np.all(out == 3.0)


def test_conv_padding_and_stride():
    conv = Conv2d(1, 1, (3, 3), stride=2, padding=1,
                  weight=np.ones((1, 1, 3, 3), np.float32))
    x = np.ones((1, 4, 4), np.float32)
    out = conv.forward(x)
    assert out.shape == (1, 2, 2)
    assert out[0, 0, 0] == 4.0  # corner: only 4 in-image taps


def test_conv_shape_validation():
    with pytest.raises(ConfigError):
        Conv2d(1, 1, (1, 1), weight=np.ones((2, 1, 1, 1), np.float32))
    with pytest.raises(ConfigError):
        Conv2d(1, 1, (1, 1), weight=np.ones((1, 1, 1, 1), np.float64))


def test_avgpool_mean():
    pool = AvgPool2d((2, 2))
    x = np.array([[[1, 2], [3, 4]]], np.float32)
    assert pool.forward(x)[0, 0, 0] == 2.5


def test_maxpool_max():
    pool = MaxPool2d((2, 2))
    x = np.array([[[1, 2], [3, 4]]], np.float32)
    assert pool.forward(x)[0, 0, 0] == 4.0


def test_relu():
    out = ReLU().forward(np.array([-1.0, 0.0, 3.0], np.float32))
    assert np.array_equal(out, [0.0, 0.0, 3.0])


def test_linear_matches_matmul():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 7)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    x = rng.standard_normal(7).astype(np.float32)
    out = Linear(7, 4, weight=w, bias=b).forward(x)
    np.testing.assert_allclose(out, w @ x + b, rtol=1e-5)


def test_batchnorm_affine():
    bn = BatchNorm2d(
        2, eps=0.0,
        scale=np.array([2.0, 1.0], np.float32),
        shift=np.array([1.0, 0.0], np.float32),
        running_mean=np.array([1.0, 0.0], np.float32),
        running_var=np.array([4.0, 1.0], np.float32))
    x = np.ones((2, 1, 1), np.float32)
    out = bn.forward(x)
    assert out[0, 0, 0] == pytest.approx(1.0)  # (1-1)/2*2+1
    assert out[1, 0, 0] == pytest.approx(1.0)  # (1-0)/1*1+0


def tiny_model(protection_points=()):
    layers = [identity_conv(), ReLU(), Flatten(),
              Linear(4, 2, weight=np.eye(2, 4, dtype=np.float32),
                     bias=np.array([0.5, 0.25], np.float32))]
    return ModelGraph(layers, (1, 2, 2), ["a", "b"], protection_points)


def test_forward_scores():
    out = forward(tiny_model(), np.ones((1, 2, 2), np.float32))
    assert not out.is_due
    np.testing.assert_array_equal(out.scores, [1.5, 1.25])


def test_forward_due_at_nan_weight():
    model = tiny_model()
    model.layers[0].weight = np.full((1, 1, 1, 1), np.nan, np.float32)
    out = forward(model, np.ones((1, 2, 2), np.float32))
    assert out.is_due
    assert out.due.layer_index == 0
    assert out.due.kind == "nan"


def test_forward_hook_transforms_output():
    # A hook that zeroes everything leaves only the final bias in the scores.
    def clamp(i, x):
        return np.zeros_like(x)

    out = forward(tiny_model(), np.ones((1, 2, 2), np.float32), hooks=(clamp,))
    np.testing.assert_array_equal(out.scores, [0.0, 0.0])


def test_forward_hook_chain_order():
    # A later hook can remove an Inf introduced by an earlier one; the scan
    # sees the post-chain tensor and the run continues.
    def inject(i, x):
        if i == 0:
            x = x.copy()
            x.reshape(-1)[0] = np.inf
        return x

    def heal(i, x):
        return np.where(np.isinf(x), np.float32(0.0), x)

    out = forward(tiny_model(), np.ones((1, 2, 2), np.float32), hooks=(inject, heal))
    assert not out.is_due

    out = forward(tiny_model(), np.ones((1, 2, 2), np.float32), hooks=(inject,))
    assert out.is_due and out.due.layer_index == 0 and out.due.kind == "inf"


def test_forward_input_shape_checked():
    with pytest.raises(ConfigError):
        forward(tiny_model(), np.ones((1, 3, 3), np.float32))


def test_forward_determinism(model, dataset):
    a = forward(model, dataset.images[0]).scores
    b = forward(model, dataset.images[0]).scores
    assert a.tobytes() == b.tobytes()


def test_predict_argmax_and_ties():
    assert predict(np.array([0.1, 0.9], np.float32)) == 1
    assert predict(np.array([0.5, 0.5], np.float32)) == 0
    with pytest.raises(ConfigError):
        predict(np.array([], np.float32))


def test_protection_points_validated():
    with pytest.raises(ConfigError):
        tiny_model(protection_points=(3, 1))
    with pytest.raises(ConfigError):
        tiny_model(protection_points=(4,))


def test_class_names_must_match_output():
    layers = [identity_conv(), Flatten()]
    with pytest.raises(ConfigError):
        ModelGraph(layers, (1, 2, 2), ["a", "b", "c"])


def test_shape_chain_mismatch_is_construction_error():
    layers = [Linear(3, 2, weight=np.zeros((2, 3), np.float32))]
    with pytest.raises(ConfigError):
        ModelGraph(layers, (1, 2, 2), None)


@st.composite
def conv_stacks(draw):
    channels = draw(st.integers(1, 3))
    size = draw(st.integers(6, 14))
    layers = []
    shape = (channels, size, size)
    for _ in range(draw(st.integers(1, 4))):
        kind = draw(st.sampled_from(["conv2d", "relu", "maxpool2d", "avgpool2d"]))
        if kind == "conv2d":
            c_out = draw(st.integers(1, 3))
            k = draw(st.integers(1, min(3, shape[1], shape[2])))
            layers.append(Conv2d(shape[0], c_out, (k, k),
                                 weight=np.zeros((c_out, shape[0], k, k), np.float32)))
        elif kind == "relu":
            layers.append(ReLU())
        else:
            if min(shape[1], shape[2]) < 2:
                continue
            cls = MaxPool2d if kind == "maxpool2d" else AvgPool2d
            layers.append(cls((2, 2)))
        shape = layers[-1].out_shape(shape)
    layers.append(Flatten())
    return ModelGraph(layers, (channels, size, size), None), (channels, size, size)


@given(conv_stacks())
@settings(max_examples=50, deadline=None)
def test_shape_chaining_property(stack):
    model, input_shape = stack
    out = forward(model, np.zeros(input_shape, np.float32))
    assert not out.is_due
    assert out.scores.shape == model.output_shape


def test_dump_fmaps(tmp_path):
    model = tiny_model()
    x = np.arange(4, dtype=np.float32).reshape(1, 2, 2) / 3
    written = dump_fmaps(model, x, str(tmp_path))
    # conv(1ch) + relu(1ch) + flatten(1 row) + linear(1 row)
    assert len(written) == 4
    grid = np.loadtxt(tmp_path / "layer0_ch0.txt").astype(np.float32)
    assert grid.tobytes() == x[0].tobytes()  # identity conv, exact round-trip


def test_dump_fmaps_shows_saturation_under_large_weight(tmp_path):
    model = tiny_model()
    model.layers[0].weight = np.full((1, 1, 1, 1), 2.0**40, np.float32)
    dump_fmaps(model, np.ones((1, 2, 2), np.float32), str(tmp_path))
    grid = np.loadtxt(tmp_path / "layer0_ch0.txt").astype(np.float32)
    assert np.all(grid >= 2.0**40)
