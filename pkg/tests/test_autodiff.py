import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sekge.autodiff import Adam, Tensor, adam_step, backward, current_tape, no_grad, ops
from sekge.autodiff.serialize import dump_array, load_array, load_tensor, save_tensor
from sekge.exceptions import ShapeError, TrainingError

from helpers import FD_RTOL, check_grad

rng = np.random.default_rng(1234)


def _r(*shape):
    return rng.normal(size=shape)


def _bn(training):
    def f(x, g, b):
        C = x.shape[1]
        return ops.batch_norm(x, g, b, np.zeros(C), np.ones(C) * 1.3, training=training)
    return f


def _dropout(channelwise):
    def f(x):
        return ops.dropout(x, 0.3, np.random.default_rng(7), training=True, channelwise=channelwise)
    return f


SEG = np.array([0, 0, 1, 2, 2, 2, 4])

PRIMITIVES = {
    "add": (lambda a, b: ops.add(a, b), lambda: [_r(3, 4), _r(1, 4)]),
    "sub": (lambda a, b: ops.sub(a, b), lambda: [_r(3, 4), _r(3, 1)]),
    "mul": (lambda a, b: ops.mul(a, b), lambda: [_r(3, 4), _r(4)]),
    "matmul": (lambda a, b: ops.matmul(a, b), lambda: [_r(3, 5), _r(5, 2)]),
    "transpose": (lambda a: ops.transpose(a), lambda: [_r(3, 5)]),
    "sum_axis": (lambda a: ops.sum(a, axis=1), lambda: [_r(3, 5)]),
    "mean": (lambda a: ops.mean(a, axis=0), lambda: [_r(3, 5)]),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), lambda: [_r(3, 2), _r(3, 4)]),
    "reshape": (lambda a: ops.reshape(a, (2, 6)), lambda: [_r(3, 4)]),
    "gather": (lambda a: ops.gather(a, np.array([0, 2, 2, 1, 0])), lambda: [_r(4, 3)]),
    "scatter_add": (lambda a: ops.scatter_add(a, np.array([1, 1, 3, 0, 1]), 5), lambda: [_r(5, 3)]),
    "softmax": (lambda a: ops.softmax(a, axis=-1), lambda: [_r(3, 5)]),
    "segment_softmax": (lambda a: ops.segment_softmax(a, SEG, 5), lambda: [_r(7)]),
    "sigmoid": (lambda a: ops.sigmoid(a), lambda: [_r(4, 3) * 3]),
    "tanh": (lambda a: ops.tanh(a), lambda: [_r(4, 3)]),
    "relu": (lambda a: ops.relu(a), lambda: [_r(4, 3) + 0.05]),
    "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, padding=1), lambda: [_r(2, 2, 4, 5), _r(3, 2, 3, 3), _r(3)]),
    "conv2d_valid": (lambda x, w: ops.conv2d(x, w, padding=0), lambda: [_r(2, 1, 4, 4), _r(2, 1, 3, 3)]),
    "batch_norm_train": (_bn(True), lambda: [_r(4, 3, 2, 2), _r(3), _r(3)]),
    "batch_norm_eval": (_bn(False), lambda: [_r(5, 3), _r(3), _r(3)]),
    "dropout": (_dropout(False), lambda: [_r(4, 5)]),
    "dropout_channel": (_dropout(True), lambda: [_r(2, 4, 3, 3)]),
    "bce_with_logits": (lambda x: ops.bce_with_logits(x, np.array([[1., 0, 0.3], [0, 1, 0.9]])),
                        lambda: [_r(2, 3) * 4]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name):
    build, make = PRIMITIVES[name]
    for probe in range(3):
        assert check_grad(build, make(), seed=probe) < FD_RTOL


def test_softmax_of_single_scalar_is_one():
    assert ops.softmax(Tensor([3.7]), axis=-1).data.tolist() == [1.0]
    assert ops.segment_softmax(Tensor([-12.0]), [0], 1).data.tolist() == [1.0]


def test_sigmoid_zero():
    assert ops.sigmoid(Tensor([0.0])).data[0] == 0.5


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-500, 500)))
@settings(max_examples=50, deadline=None)
def test_segment_softmax_sums_to_one(x):
    seg = np.arange(len(x)) % 3
    a = ops.segment_softmax(Tensor(x, dtype=np.float64), seg, 3).data
    sums = np.bincount(seg, weights=a, minlength=3)
    present = np.bincount(seg, minlength=3) > 0
    np.testing.assert_allclose(sums[present], 1.0, atol=1e-6)


@given(arrays(np.float32, st.integers(1, 50), elements=st.floats(-88, 88, width=32)),
       st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_bce_finite_on_safe_logit_range(x, y):
    out = ops.bce_with_logits(Tensor(x), np.full(x.shape, y))
    assert np.isfinite(out.data)


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
    backward(ops.sum(ops.mul(x, x)))
    assert x.grad.tolist() == [2.0, 4.0]
    assert len(current_tape()) == 0


def test_backward_constant_loss_gives_zero_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ops.add(ops.sum(ops.mul(x, 0.0)), 3.0)
    backward(loss)
    assert np.all(x.grad == 0)


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ops.mul(x, 2.0))


def test_composite_graph_matches_finite_differences():
    def build(a, b, c):
        h = ops.tanh(ops.matmul(a, b))
        z = ops.concat([h, ops.sigmoid(h)], axis=1)
        att = ops.segment_softmax(ops.sum(z, axis=1), np.array([0, 1, 0, 1]), 2)
        return ops.scatter_add(ops.mul(z, ops.reshape(att, (-1, 1))), np.array([1, 0, 0, 1]), 2) + c
    for probe in range(5):
        assert check_grad(build, [_r(4, 3), _r(3, 2), _r(2, 4)], seed=probe) < FD_RTOL


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    current_tape().clear()
    with no_grad():
        y = ops.mul(x, 3.0)
    assert len(current_tape()) == 0 and not y.requires_grad


def test_dropout_eval_is_identity_and_train_is_inverted():
    x = Tensor(np.ones((1000, 10)))
    assert ops.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
    y = ops.dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05


def test_batch_norm_running_stats_momentum():
    x = Tensor(np.arange(8, dtype=np.float64).reshape(4, 2))
    rm, rv = np.zeros(2), np.ones(2)
    ops.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=True)
    np.testing.assert_allclose(rm, 0.1 * np.array([3.0, 4.0]))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * np.var([0, 2, 4, 6], ddof=1))


# -- Adam ------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, {}, lr=0.1)
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    g = np.array([0.3, -5.0, 1e-3])
    adam_step(p, {"w": g}, {}, lr=0.01, eps=1e-8)
    np.testing.assert_allclose(p["w"], 1.0 - 0.01 * np.sign(g), rtol=0, atol=1e-7)


def test_adam_rejects_nan_with_name():
    with pytest.raises(TrainingError, match="bias"):
        adam_step({"bias": np.zeros(2)}, {"bias": np.array([np.nan, 0])}, {}, lr=0.1)


def _adam_oracle(x0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook recurrence written out in scalar loops."""
    x = list(x0)
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            x[i] -= lr * mh / (vh ** 0.5 + eps)
        traj.append(list(x))
    return traj


def test_adam_quadratic_bowl_descends_and_matches_recurrence():
    scale = np.array([1.0, 4.0, 0.5])

    def loss(x):
        return float(np.sum(scale * np.asarray(x) ** 2))

    def grad(x):
        return list(2 * scale * np.asarray(x))

    x0 = [1.0, -2.0, 3.0]
    oracle = _adam_oracle(x0, grad, 10, lr=0.05)
    w = Tensor(np.array(x0), requires_grad=True, dtype=np.float64)
    opt = Adam({"w": w}, lr=0.05)
    losses = [loss(x0)]
    for k in range(10):
        opt.zero_grad()
        backward(ops.sum(ops.mul(ops.mul(w, w), Tensor(scale, dtype=np.float64))))
        opt.step()
        np.testing.assert_allclose(w.data, oracle[k], rtol=1e-12)
        losses.append(loss(w.data))
    assert all(b < a for a, b in zip(losses, losses[1:]))


# -- serialization ---------------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int64])
def test_tensor_file_roundtrip(tmp_path, dtype):
    a = (rng.normal(size=(3, 4, 2)) * 100).astype(dtype)
    save_tensor(tmp_path / "a.bin", a)
    b = load_tensor(tmp_path / "a.bin")
    assert b.dtype == a.dtype and b.shape == a.shape and np.array_equal(a, b)


def test_tensor_file_header_layout():
    buf = dump_array(np.array([[1.0, 2.0]], dtype=np.float32))
    assert buf[:4] == b"SEKT"
    assert int.from_bytes(buf[4:12], "little") == 1
    assert int.from_bytes(buf[12:20], "little") == 2
    assert int.from_bytes(buf[20:28], "little") == 1
    assert int.from_bytes(buf[28:36], "little") == 2
    assert np.frombuffer(buf[36:], "<f4").tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        load_array(b"XXXX" + buf[4:])
