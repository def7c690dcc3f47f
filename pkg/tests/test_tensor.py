import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedet.tensor import (
    ConvKernel,
    Layer,
    NormParams,
    ShapeError,
    add,
    batch_norm_infer,
    concat_channels,
    conv2d,
    conv_layer,
    count_params_flops,
    gelu,
    hadamard,
    read_t4f,
    relu,
    sigmoid,
    upsample_nearest2x,
    write_t4f,
)

from oracles import naive_conv


def test_ones_kernel_center_and_corners():
    x = np.ones((1, 1, 3, 3))
    y = conv2d(x, ConvKernel(np.ones((1, 1, 3, 3)), padding=1))
    assert y[0, 0, 1, 1] == 9
    assert y[0, 0, 0, 0] == y[0, 0, 0, 2] == y[0, 0, 2, 0] == y[0, 0, 2, 2] == 4


def test_identity_kernel_returns_input(rng):
    x = rng.normal(size=(2, 3, 7, 5)).astype(np.float32)
    w = np.zeros((3, 3, 5, 5))
    w[np.arange(3), np.arange(3), 2, 2] = 1
    np.testing.assert_array_equal(conv2d(x, ConvKernel(w, padding=2)), x)


def test_stride_two_output_dims():
    assert conv2d(np.ones((1, 1, 4, 4)), ConvKernel(np.ones((1, 1, 1, 1)), stride=2)).shape == (1, 1, 2, 2)


@pytest.mark.parametrize("stride,pad,groups,c_in,c_out,k", [
    (1, 1, 1, 3, 4, 3),
    (2, 1, 1, 2, 5, 3),
    (1, 2, 4, 4, 4, 5),
    (2, 0, 2, 4, 6, 1),
    (1, 0, 1, 3, 2, 2),
])
def test_conv_matches_naive_oracle(rng, stride, pad, groups, c_in, c_out, k):
    x = rng.normal(size=(2, c_in, 9, 8))
    w = rng.normal(size=(c_out, c_in // groups, k, k))
    b = rng.normal(size=c_out)
    got = conv2d(x, ConvKernel(w, b, stride, pad, groups))
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad, groups), atol=1e-4)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(ShapeError, match="channel axis"):
        conv2d(np.ones((1, 2, 4, 4)), ConvKernel(np.ones((1, 3, 3, 3))))


def test_conv_empty_output_names_axis():
    with pytest.raises(ShapeError, match="height axis"):
        conv2d(np.ones((1, 1, 2, 8)), ConvKernel(np.ones((1, 1, 3, 3))))


def test_kernel_validation():
    with pytest.raises(ShapeError):
        ConvKernel(np.ones((2, 1, 3)))
    with pytest.raises(ShapeError):
        ConvKernel(np.ones((2, 1, 3, 3)), bias=np.ones(3))
    with pytest.raises(ValueError):
        ConvKernel(np.ones((2, 1, 3, 3)), stride=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_is_linear(seed, a, b):
    r = np.random.default_rng(seed)
    k = ConvKernel(r.normal(size=(2, 3, 3, 3)), padding=1)
    x, y = r.normal(size=(2, 1, 3, 6, 6))
    lhs = conv2d(a * x + b * y, k)
    rhs = a * conv2d(x, k) + b * conv2d(y, k)
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)


def test_batch_norm_examples():
    x = np.full((1, 1, 2, 2), 2.0)
    np.testing.assert_array_equal(batch_norm_infer(x, NormParams.identity(1, 0.0)), x)
    y = batch_norm_infer(x, NormParams(np.array([3.0]), np.array([1.0]), np.array([2.0]), np.array([4.0]), 0.0))
    np.testing.assert_array_equal(y, np.ones_like(x))
    z = batch_norm_infer(np.random.default_rng(0).normal(size=(1, 1, 3, 3)),
                         NormParams(np.array([0.0]), np.array([0.7]), np.array([0.0]), np.array([1.0])))
    np.testing.assert_allclose(z, 0.7, atol=1e-7)


def test_batch_norm_errors():
    bad = NormParams(np.ones(1), np.zeros(1), np.zeros(1), np.array([-1.0]), 0.5)
    with pytest.raises(ValueError, match="positive"):
        batch_norm_infer(np.ones((1, 1, 2, 2)), bad)
    with pytest.raises(ValueError, match="statistics"):
        NormParams(np.ones(1), np.zeros(1), None, None).folded()
    with pytest.raises(ShapeError):
        batch_norm_infer(np.ones((1, 2, 2, 2)), NormParams.identity(3))


def test_activations():
    x = np.array([-2.0, 0.0, 1.5], np.float32)
    np.testing.assert_array_equal(relu(x), [0, 0, 1.5])
    np.testing.assert_allclose(gelu(np.array([0.0, 1.0, -1.0])), [0, 0.8413447, -0.1586553], atol=1e-6)
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(s))
    np.testing.assert_array_equal(s, [0, 0.5, 1])


def test_upsample_examples():
    np.testing.assert_array_equal(upsample_nearest2x(np.full((1, 1, 1, 1), 7.0)), np.full((1, 1, 2, 2), 7.0))
    got = upsample_nearest2x(np.array([[[[1, 2], [3, 4]]]]))
    want = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    np.testing.assert_array_equal(got[0, 0], want)
    assert upsample_nearest2x(np.zeros((2, 3, 4, 5))).shape == (2, 3, 8, 10)


def test_concat_and_elementwise():
    assert concat_channels([np.zeros((1, 2, 3, 3)), np.zeros((1, 3, 3, 3))]).shape == (1, 5, 3, 3)
    with pytest.raises(ShapeError):
        concat_channels([np.zeros((1, 2, 3, 3)), np.zeros((1, 3, 4, 3))])
    with pytest.raises(ShapeError):
        add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))
    np.testing.assert_array_equal(hadamard(np.full((1, 1, 2, 2), 2.0), np.full((1, 1, 2, 2), 3.0)), 6.0)


def test_t4f_roundtrip(tmp_path, rng):
    x = rng.normal(size=(2, 3, 4, 5)).astype(np.float32)
    path = tmp_path / "x.t4f"
    write_t4f(path, x)
    np.testing.assert_array_equal(read_t4f(path), x)
    assert [p.name for p in tmp_path.iterdir()] == ["x.t4f"]


def test_t4f_rejects_bad_files(tmp_path):
    good = tmp_path / "g.t4f"
    write_t4f(good, np.ones((1, 1, 2, 2)))
    raw = good.read_bytes()
    (tmp_path / "magic.t4f").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.t4f").write_bytes(raw[:-4])
    nan = bytearray(raw)
    nan[-4:] = np.array([np.nan], "<f4").tobytes()
    (tmp_path / "nan.t4f").write_bytes(bytes(nan))
    for name, msg in (("magic", "magic"), ("short", "expected"), ("nan", "NaN")):
        with pytest.raises(ValueError, match=msg):
            read_t4f(tmp_path / f"{name}.t4f")


def test_count_examples():
    k = ConvKernel(np.ones((1, 1, 3, 3)), np.zeros(1), padding=1)
    assert k.num_params() == 10
    assert count_params_flops([conv_layer(k, (1, 8, 8))]) == (10, 2 * 9 * 64)
    assert count_params_flops([]) == (0, 0)


def test_count_rejects_unshaped_layer():
    with pytest.raises(ShapeError, match="unshaped"):
        count_params_flops([Layer("act", "relu")])


def test_count_elementwise_convention():
    s = (4, 5, 6)
    assert count_params_flops([Layer("norm", "bn", s)]) == (8, 2 * 120)
    assert count_params_flops([Layer("act", "a", s), Layer("add", "b", s)]) == (0, 240)
    assert count_params_flops([Layer("fixed_conv", "dwt", s, kernel=(16, 1, 2, 2), stride=2)]) == (0, 2 * 16 * (2 * 3) * 4)
