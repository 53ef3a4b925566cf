import math

import numpy as np
import pytest

from pedintent.nncore import (
    AdamState, Tensor, adam_step, clip_grad_norm, concat, conv2d, fc, l2_penalty, lstm_cell,
    maxpool2d, mse, softmax_ce, ShapeError,
)
from pedintent.nncore import checkpoint
from pedintent.nncore.gradcheck import check

TOL = 1e-4
STEP = 1e-3


def rand_t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, shape), requires_grad=True)


# conv2d -----------------------------------------------------------------

def test_conv_1x1_identity():
    x = Tensor(np.arange(12.0).reshape(3, 4, 1))
    k = Tensor(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(conv2d(x, k).data, x.data)


def test_conv_ones_kernel_hand_values():
    x = Tensor(np.ones((5, 5, 1)))
    k = Tensor(np.ones((3, 3, 1, 1)))
    out = conv2d(x, k).data[..., 0]
    assert out[2, 2] == 9 and out[1, 3] == 9
    assert out[0, 0] == 4 and out[4, 4] == 4 and out[0, 4] == 4
    assert out[0, 2] == 6


@pytest.mark.parametrize("h,w,s", [(5, 5, 2), (7, 4, 2), (16, 17, 2), (3, 9, 3)])
def test_conv_output_dims_ceil(h, w, s):
    out = conv2d(Tensor(np.zeros((h, w, 2))), Tensor(np.zeros((3, 3, 2, 4))), stride=s)
    assert out.shape == (math.ceil(h / s), math.ceil(w / s), 4)


def test_conv_matches_direct_loops():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 6, 5, 3))
    k = rng.normal(size=(3, 3, 3, 4))
    out = conv2d(Tensor(x), Tensor(k), stride=2).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    for b in range(2):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                patch = xp[b, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
                ref = np.einsum("abc,abcd->d", patch, k)
                np.testing.assert_allclose(out[b, i, j], ref, rtol=1e-12, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


@pytest.mark.parametrize("seed", range(5))
def test_conv_gradcheck(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(3, 8, size=2)
    x = rand_t(rng, 2, h, w, 2)
    k = rand_t(rng, 3, 3, 2, 3)
    b = rand_t(rng, 3)
    wts = rng.normal(size=conv2d(x, k, b, stride=2).shape)
    err = check(lambda: (conv2d(x, k, b, stride=2) * wts).sum(), [x, k, b], STEP)
    assert err <= TOL


# maxpool ----------------------------------------------------------------

def test_maxpool_constant():
    out = maxpool2d(Tensor(np.full((4, 5, 2), 3.0)), 2, 1)
    np.testing.assert_array_equal(out.data, 3.0)


def test_maxpool_2x2():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1))
    assert maxpool2d(x, 2, 2).data.reshape(-1).tolist() == [4.0]
    assert maxpool2d(x, 2, 1).data[0, 0, 0] == 4.0


def test_maxpool_tie_routes_first():
    x = Tensor(np.ones((2, 2, 1)), requires_grad=True)
    maxpool2d(x, 2, 2).sum().backward()
    assert x.grad.reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]


@pytest.mark.parametrize("seed", range(4))
def test_maxpool_gradcheck(seed):
    rng = np.random.default_rng(seed)
    # distinct values keep the argmax away from ties under perturbation
    vals = rng.permutation(2 * 5 * 6 * 2).astype(float) * 0.1
    x = Tensor(vals.reshape(2, 5, 6, 2), requires_grad=True)
    stride = 1 + seed % 2
    wts = rng.normal(size=maxpool2d(x, 2, stride).shape)
    assert check(lambda: (maxpool2d(x, 2, stride) * wts).sum(), [x], STEP) <= TOL


# fc ---------------------------------------------------------------------

def test_fc_identity_and_bias():
    x = Tensor(np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(fc(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    b = np.array([0.5, 1.5])
    np.testing.assert_array_equal(fc(x, Tensor(np.zeros((3, 2))), Tensor(b)).data, b)


@pytest.mark.parametrize("seed", range(3))
def test_fc_gradcheck(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rand_t(rng, 4, 5), rand_t(rng, 5, 3), rand_t(rng, 3)
    wts = rng.normal(size=(4, 3))
    assert check(lambda: (fc(x, w, b) * wts).sum(), [x, w, b], STEP) <= TOL


# lstm -------------------------------------------------------------------

def test_lstm_zero_everything():
    z = Tensor(np.zeros((1, 3)))
    h, c = lstm_cell(Tensor(np.zeros((1, 2))), z, z, Tensor(np.zeros((5, 12))), Tensor(np.zeros(12)))
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(c.data, 0.0)


def test_lstm_forget_gate_irrelevant_with_zero_cell():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 3)))
    z = Tensor(np.zeros((2, 4)))
    w = rng.normal(size=(7, 16))
    b = rng.normal(size=16)
    h1, _ = lstm_cell(x, z, z, Tensor(w), Tensor(b))
    w2, b2 = w.copy(), b.copy()
    w2[:, 4:8] += rng.normal(size=(7, 4))
    b2[4:8] += 5.0
    h2, _ = lstm_cell(x, z, z, Tensor(w2), Tensor(b2))
    np.testing.assert_array_equal(h1.data, h2.data)


@pytest.mark.parametrize("seed", range(3))
def test_lstm_three_cells_gradcheck(seed):
    rng = np.random.default_rng(seed)
    xs = [rand_t(rng, 2, 3) for _ in range(3)]
    h0, c0 = rand_t(rng, 2, 4, scale=0.5), rand_t(rng, 2, 4, scale=0.5)
    w, b = rand_t(rng, 7, 16, scale=0.5), rand_t(rng, 16, scale=0.5)
    wh = rng.normal(size=(2, 4))
    wc = rng.normal(size=(2, 4))

    def fn():
        h, c = h0, c0
        for x in xs:
            h, c = lstm_cell(x, h, c, w, b)
        return (h * wh).sum() + (c * wc).sum()

    assert check(fn, xs + [h0, c0, w, b], STEP) <= TOL


def test_lstm_matches_loop_reference():
    rng = np.random.default_rng(9)
    x, h, c = rng.normal(size=(1, 3)), rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
    w, b = rng.normal(size=(5, 8)), rng.normal(size=8)
    ht, ct = lstm_cell(Tensor(x), Tensor(h), Tensor(c), Tensor(w), Tensor(b))
    z = np.concatenate([x, h], 1) @ w + b
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:, :2]), sig(z[:, 2:4]), np.tanh(z[:, 4:6]), sig(z[:, 6:])
    c_ref = f * c + i * g
    np.testing.assert_allclose(ct.data, c_ref, rtol=1e-12)
    np.testing.assert_allclose(ht.data, o * np.tanh(c_ref), rtol=1e-12)


# losses -----------------------------------------------------------------

def test_softmax_ce_uniform_two_class():
    assert softmax_ce(Tensor(np.zeros(2)), 0).item() == pytest.approx(math.log(2), abs=1e-12)


def test_softmax_ce_saturates():
    assert softmax_ce(Tensor(np.array([20.0, 0.0])), 0).item() < 1e-6


def test_softmax_ce_gradient_closed_form():
    rng = np.random.default_rng(0)
    lg = Tensor(rng.normal(size=4), requires_grad=True)
    softmax_ce(lg, 2, weight=0.7).backward()
    p = np.exp(lg.data) / np.exp(lg.data).sum()
    onehot = np.eye(4)[2]
    np.testing.assert_allclose(lg.grad, 0.7 * (p - onehot), rtol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_softmax_ce_gradcheck(seed):
    rng = np.random.default_rng(seed)
    lg = rand_t(rng, 5, 4)
    lab = rng.integers(0, 4, 5)
    cw = rng.uniform(0.5, 2.0, 4)
    assert check(lambda: softmax_ce(lg, lab, cw), [lg], STEP) <= TOL


def test_softmax_ce_bad_label():
    with pytest.raises(ShapeError):
        softmax_ce(Tensor(np.zeros(3)), 3)


def test_mse_values():
    t = np.arange(6.0).reshape(2, 3)
    assert mse(Tensor(t), t).item() == 0.0
    assert mse(Tensor(t + 2.0), t).item() == pytest.approx(4.0)


def test_mse_gradcheck():
    rng = np.random.default_rng(0)
    p = rand_t(rng, 3, 2)
    tgt = rng.normal(size=(3, 2))
    assert check(lambda: mse(p, tgt), [p], STEP) <= TOL


def test_l2_penalty_values_and_grad():
    assert l2_penalty([Tensor(np.zeros(3), requires_grad=True)], 0.5).item() == 0.0
    p = Tensor(np.array([3.0]), requires_grad=True)
    loss = l2_penalty([p], 0.0003)
    assert loss.item() == pytest.approx(0.0027, abs=1e-15)
    loss.backward()
    assert p.grad[0] == pytest.approx(2 * 0.0003 * 3.0)
    rng = np.random.default_rng(1)
    q = rand_t(rng, 4, 3)
    assert check(lambda: l2_penalty([p, q], 0.01), [p, q], STEP) <= TOL


@pytest.mark.parametrize("seed", range(20))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    assert softmax_ce(Tensor(rng.normal(0, 5, k)), int(rng.integers(k))).item() >= 0
    assert mse(Tensor(rng.normal(size=4)), rng.normal(size=4)).item() >= 0
    assert l2_penalty([Tensor(rng.normal(size=3), requires_grad=True)], 0.1).item() >= 0


# composite graph ----------------------------------------------------------

def test_shared_node_gradients_accumulate():
    rng = np.random.default_rng(0)
    a = rand_t(rng, 3, 4)
    b = rand_t(rng, 4, 2)

    def fn():
        y = (a @ b).tanh()
        z = concat([y, y.sigmoid()], axis=1)
        return (z * z).sum() + a[1:, 2].relu().sum()

    assert check(fn, [a, b], STEP) <= TOL


@pytest.mark.parametrize("seed", range(20))
def test_random_shape_gradchecks(seed):
    rng = np.random.default_rng(100 + seed)
    h, w, cin, cout = (int(v) for v in rng.integers(2, 6, size=4))
    x = rand_t(rng, 1, h, w, cin)
    k = rand_t(rng, 3, 3, cin, cout)
    wts = rng.normal(size=(1, -(-h // 2), -(-w // 2), cout))
    assert check(lambda: (conv2d(x, k, stride=2).tanh() * wts).sum(), [x, k], STEP) <= TOL


def test_forward_deterministic():
    rng = np.random.default_rng(4)
    x, k = rng.normal(size=(2, 9, 7, 3)), rng.normal(size=(3, 3, 3, 5))
    a = maxpool2d(conv2d(Tensor(x), Tensor(k), stride=2), 2, 1).data
    b = maxpool2d(conv2d(Tensor(x.copy()), Tensor(k.copy()), stride=2), 2, 1).data
    assert a.tobytes() == b.tobytes()


# adam -------------------------------------------------------------------

def test_adam_zero_grad():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st = AdamState(lr=0.1)
    adam_step({"p": p}, {"p": np.zeros(2)}, st)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st.t == 1


def test_adam_first_step_magnitude_is_lr():
    lr = 1e-3
    p = Tensor(np.array([0.0, 1.0, 5.0]), requires_grad=True)
    before = p.data.copy()
    g = np.array([0.5, -3.0, 10.0])
    adam_step({"p": p}, {"p": g}, AdamState(lr=lr))
    # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    np.testing.assert_allclose(np.abs(p.data - before), lr, atol=1e-6 * lr)


def test_adam_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(7)
        p = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        st = AdamState(lr=1e-2)
        for _ in range(10):
            adam_step({"p": p}, {"p": np.sin(p.data) + 0.1}, st)
        return p.data.tobytes()

    assert run() == run()


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    total = clip_grad_norm(g, 1.0)
    assert total == pytest.approx(5.0)
    norm = np.sqrt(sum((v ** 2).sum() for v in g.values()))
    assert norm == pytest.approx(1.0)


# checkpoint ---------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.w": rng.normal(size=(2, 3)).astype(np.float32), "b": rng.normal(size=4)}
    st = AdamState(lr=0.01, t=3)
    st.m["a.w"] = np.ones((2, 3), np.float32)
    st.v["a.w"] = np.full((2, 3), 2.0, np.float32)
    at, am = checkpoint.pack_adam(st)
    checkpoint.save(tmp_path / "c.ckpt", {**tensors, **at}, {"epoch": 4, "adam": am})
    back, meta = checkpoint.load(tmp_path / "c.ckpt")
    assert meta["epoch"] == 4
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype
        np.testing.assert_array_equal(back[k], v)
    st2 = checkpoint.unpack_adam(back, meta["adam"])
    assert st2.t == 3 and st2.lr == 0.01
    np.testing.assert_array_equal(st2.v["a.w"], 2.0)


def test_checkpoint_header_layout(tmp_path):
    checkpoint.save(tmp_path / "c.ckpt", {"x": np.array([1.5], dtype=np.float32)}, {})
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw[:8] == b"PIDCKPT\0"
    assert int.from_bytes(raw[8:12], "little") == 1
    assert raw[-4:] == np.array([1.5], dtype="<f4").tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope" * 8)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "bad")
