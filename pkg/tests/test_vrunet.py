import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedintent.datapipe import SynthSpec, WindowConfig, build_samples, synthesize_scenes
from pedintent.datapipe.schema import NUM_CLASSES, TASKS
from pedintent.nncore import Tensor, softmax_ce
from pedintent.nncore.gradcheck import check
from pedintent.vrunet import (LossWeights, TrainConfig, TrainingDiverged, VRUNet, VRUNetConfig, action_loss,
                              class_weights, evaluate, format_config_text, load_model, make_batch, mean_mask,
                              parse_config_text, predict, save_model, scene_flatten_size, smooth_trajectory,
                              total_loss, traj_loss, train)
from pedintent.vrunet.train import batch_loss


def tiny_samples(n=6, seed=0, cfg=None):
    cfg = cfg or VRUNetConfig.tiny()
    spec = SynthSpec(n_scenes=n, track_len=cfg.obs_len + cfg.horizon, obs_len=cfg.obs_len)
    wc = WindowConfig(obs_len=cfg.obs_len, horizon=cfg.horizon, mask_h=cfg.mask_h, mask_w=cfg.mask_w,
                      min_duration=0.0)
    return build_samples(synthesize_scenes(spec, seed), wc)[0]


@pytest.fixture(scope="module")
def tiny():
    cfg = VRUNetConfig.tiny()
    return cfg, tiny_samples(cfg=cfg)


# shapes -----------------------------------------------------------------------

def test_pose_encoder_time_length():
    cfg = VRUNetConfig.tiny(obs_len=16)
    m = VRUNet(cfg, dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(2, 16, 17, 3))
    y = m.pose_enc.conv2(m.pose_enc.conv1(Tensor(x)).relu())
    assert y.shape[1] == 4
    assert m.encode_pose(x).shape == (2, cfg.embed)


def test_box_encoder_paper_widths():
    cfg = VRUNetConfig(mask_h=8, mask_w=8, scene_channels=(4, 4), scene_fc=(8, 8, 8, 256))
    m = VRUNet(cfg)
    boxes = np.tile(np.array([0.5, 0.5, 0.1, 0.3]), (1, 30, 1))[..., None]
    emb, (h, c) = m.encode_box(boxes)
    assert emb.shape == (1, 256) and h.shape == (1, 256) and c.shape == (1, 256)
    assert np.all(np.isfinite(emb.data)) and np.all(np.isfinite(h.data)) and np.all(np.isfinite(c.data))


@pytest.mark.parametrize("h,w", [(90, 160), (36, 64), (8, 8), (17, 33), (360, 640)])
def test_scene_flatten_formula(h, w):
    cfg = VRUNetConfig(mask_h=h, mask_w=w)
    ceil4 = lambda n: -(-(-(-(-(-(-(-n // 2)) // 2)) // 2)) // 2)
    assert scene_flatten_size(cfg) == ceil4(h) * ceil4(w) * 512


def test_scene_encoder_output_dims():
    cfg = VRUNetConfig.tiny(mask_h=17, mask_w=33, scene_channels=(4, 6))
    m = VRUNet(cfg, dtype=np.float64)
    x = np.random.default_rng(1).random((3, 17, 33, 5))
    assert m.scene_enc.flat_dim == 2 * 3 * 6
    assert m.encode_scene(x).shape == (3, cfg.embed)


def test_mean_mask_constant():
    m = np.random.default_rng(0).integers(0, 5, (1, 6, 7))
    masks = np.repeat(m, 4, axis=0)
    np.testing.assert_array_equal(mean_mask(masks), np.eye(5)[m[0]])


def test_mean_mask_alternating():
    masks = np.zeros((6, 1, 1), dtype=np.uint8)
    masks[1::2] = 1
    np.testing.assert_array_equal(mean_mask(masks)[0, 0], [0.5, 0.5, 0, 0, 0])


def test_mean_mask_rejects_bad_class():
    with pytest.raises(ValueError):
        mean_mask(np.full((2, 3, 3), 5))


def test_forward_shapes_and_distributions(tiny):
    cfg, samples = tiny
    b = predict(VRUNet(cfg), samples)
    for t in TASKS:
        p = b.probs(t)
        assert p.shape == (len(samples), NUM_CLASSES[t])
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-6)
    assert b.trajectory.shape == (len(samples), cfg.horizon, 2)
    assert np.all(np.isfinite(b.trajectory))


def test_forward_deterministic(tiny):
    cfg, samples = tiny
    a = predict(VRUNet(cfg, seed=3), samples)
    b = predict(VRUNet(cfg, seed=3), samples)
    for k in list(TASKS) + ["trajectory"]:
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()


def test_identical_inputs_identical_embeddings():
    m = VRUNet(VRUNetConfig.tiny(), dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(1, 4, 17, 3))
    e = m.encode_pose(np.concatenate([x, x]))
    np.testing.assert_array_equal(e.data[0], e.data[1])


def test_ablated_model_has_no_scene_params(tiny):
    cfg, samples = tiny
    m = VRUNet(VRUNetConfig.tiny(use_scene=False))
    assert not any(k.startswith("scene_enc") for k in m.named_parameters())
    assert predict(m, samples).trajectory.shape == (len(samples), cfg.horizon, 2)


# gradient checks ----------------------------------------------------------------

def _tiny_loss(model, batch, teacher=False):
    return lambda: batch_loss(model, batch, teacher)[0]


@pytest.mark.parametrize("teacher", [False, True])
def test_full_model_gradcheck(tiny, teacher):
    cfg, samples = tiny
    model = VRUNet(cfg, seed=1, dtype=np.float64)
    batch = make_batch(samples[:3], cfg, np.float64)
    err = check(_tiny_loss(model, batch, teacher), model.parameters(), step=1e-6, max_entries=6,
                rng=np.random.default_rng(0))
    assert err <= 1e-3


@pytest.mark.parametrize("branch", ["pose", "box"])
def test_encoder_branch_gradcheck(branch):
    cfg = VRUNetConfig.tiny()
    m = VRUNet(cfg, seed=2, dtype=np.float64)
    rng = np.random.default_rng(3)
    if branch == "pose":
        x = rng.normal(size=(2, 4, 17, 3))
        enc, fn = m.pose_enc, lambda: (m.encode_pose(x) * Tensor(w)).sum()
    else:
        x = rng.normal(size=(2, 4, 4, 1))
        enc, fn = m.box_enc, lambda: (m.encode_box(x)[0] * Tensor(w)).sum() + m.encode_box(x)[1][1].sum()
    w = rng.normal(size=(2, cfg.embed))
    assert check(fn, enc.parameters(), step=1e-6) <= 1e-4


def test_total_loss_gradient_is_weighted_sum(tiny):
    cfg, samples = tiny
    model = VRUNet(cfg, seed=4, dtype=np.float64)
    batch = make_batch(samples[:2], cfg, np.float64)
    p = model.heads[0].fc2.weight

    def grad_of(alpha, beta):
        model.zero_grad()
        out = model(batch)
        la = action_loss(out.logits, batch.labels, cfg.loss_weights)
        lt = traj_loss(out.trajectory, batch.future, model.trajectory_parameters(), cfg.lambda_reg)
        total_loss(la, lt, alpha, beta).backward()
        return p.grad.copy() if p.grad is not None else np.zeros_like(p.data)

    np.testing.assert_allclose(grad_of(0.7, 1.9), 0.7 * grad_of(1, 0) + 1.9 * grad_of(0, 1), rtol=1e-10, atol=1e-12)
    fn = lambda: total_loss(action_loss(model(batch).logits, batch.labels, cfg.loss_weights),
                            traj_loss(model(batch).trajectory, batch.future, model.trajectory_parameters(),
                                      cfg.lambda_reg), 0.7, 1.9)
    assert check(fn, [p, model.decoder.out.weight], step=1e-6) <= 1e-4


# losses -------------------------------------------------------------------------

def _random_logits(rng, n):
    return {t: Tensor(rng.normal(size=(n, NUM_CLASSES[t]))) for t in TASKS}


def _ce_oracle(x, y):
    x = np.asarray(x, dtype=np.float64)
    return sum(np.log(np.sum(np.exp(row))) - row[k] for row, k in zip(x, y))


def test_action_loss_equal_terms():
    logits = {t: Tensor(np.zeros((3, NUM_CLASSES[t]))) for t in TASKS}
    labels = np.zeros((3, 5), dtype=int)
    for t in TASKS:
        logits[t].data[:, :] = 0
    # make every task CE equal by using 2-way logits for orientation too
    logits["orientation"] = Tensor(np.array([[0.0, 0.0, -np.inf, -np.inf]] * 3))
    per = 3 * np.log(2)
    assert float(action_loss(logits, labels, LossWeights()).data) == pytest.approx(5 * per, rel=1e-12)


def test_action_loss_single_task():
    rng = np.random.default_rng(0)
    logits = _random_logits(rng, 4)
    labels = np.column_stack([rng.integers(0, NUM_CLASSES[t], 4) for t in TASKS])
    got = float(action_loss(logits, labels, LossWeights(1, 0, 0, 0, 0)).data)
    assert got == pytest.approx(_ce_oracle(logits["gait"].data, labels[:, 0]), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_action_loss_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    logits = _random_logits(rng, n)
    labels = np.column_stack([rng.integers(0, NUM_CLASSES[t], n) for t in TASKS])
    w = LossWeights(*rng.uniform(0, 2, 5))
    cw = class_weights(labels)
    got = float(action_loss(logits, labels, w, cw).data)
    want = 0.0
    for j, t in enumerate(TASKS):
        x = logits[t].data
        for i in range(n):
            want += getattr(w, t) * cw[t][labels[i, j]] * _ce_oracle(x[i:i + 1], labels[i:i + 1, j])
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 10**6))
def test_weight_scaling_is_linear(c, seed):
    rng = np.random.default_rng(seed)
    logits = _random_logits(rng, 3)
    labels = np.column_stack([rng.integers(0, NUM_CLASSES[t], 3) for t in TASKS])
    w = LossWeights(*rng.uniform(0.1, 2, 5))
    a = float(action_loss(logits, labels, w).data)
    b = float(action_loss(logits, labels, w.scaled(c)).data)
    assert b == pytest.approx(c * a, rel=1e-12)


def test_weight_scaling_keeps_argmax(tiny):
    cfg, samples = tiny
    base = predict(VRUNet(cfg, seed=5), samples)
    scaled = predict(VRUNet(VRUNetConfig.tiny(loss_weights=LossWeights().scaled(3.0)), seed=5), samples)
    for t in TASKS:
        np.testing.assert_array_equal(base.probs(t).argmax(1), scaled.probs(t).argmax(1))


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        LossWeights(-1, 1, 1, 1, 1)


def test_traj_loss_perfect_zero():
    target = np.random.default_rng(0).random((2, 5, 2))
    zero = [Tensor(np.zeros((3, 3)), requires_grad=True)]
    assert float(traj_loss(Tensor(target), target, zero, 0.1).data) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_traj_loss_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    pred, target = rng.normal(size=(2, 3, 6, 2))
    params = [Tensor(rng.normal(size=(4, 3)), requires_grad=True), Tensor(rng.normal(size=3), requires_grad=True)]
    lam = float(rng.uniform(0, 0.01))
    want = sum(np.mean((pred[i] - target[i]) ** 2) for i in range(3)) + lam * sum(np.sum(p.data ** 2) for p in params)
    assert float(traj_loss(Tensor(pred), target, params, lam).data) == pytest.approx(want, rel=1e-12)
    pure = sum(np.mean((pred[i] - target[i]) ** 2) for i in range(3))
    assert float(traj_loss(Tensor(pred), target, params, 0.0).data) == pytest.approx(pure, rel=1e-12)


def test_total_loss_combinations():
    one = Tensor(1.0)
    assert float(total_loss(one, one, 1, 1).data) == 2.0
    assert float(total_loss(Tensor(3.0), Tensor(5.0), 1, 0).data) == 3.0


def test_class_weights_inverse_frequency():
    labels = np.zeros((10, 5), dtype=int)
    labels[:2, 0] = 1
    w = class_weights(labels)
    np.testing.assert_allclose(w["gait"], [10 / (2 * 8), 10 / (2 * 2)])
    np.testing.assert_allclose(w["attention"], [1.0, 1.0])
    counts = np.bincount(labels[:, 0])
    assert np.sum(w["gait"] * counts) == pytest.approx(10)


# smoothing ----------------------------------------------------------------------

def test_smooth_exact_cubic():
    t = np.arange(1, 31, dtype=float)
    c = np.column_stack([0.01 * t ** 3 - 0.2 * t ** 2 + 3 * t + 100, -0.003 * t ** 3 + 0.5 * t + 50])
    s, fitted = smooth_trajectory(c)
    assert fitted and np.abs(s - c).max() <= 1e-9


def test_smooth_constant():
    c = np.full((30, 2), 123.5)
    np.testing.assert_allclose(smooth_trajectory(c)[0], c, atol=1e-9)


def test_smooth_short_passthrough():
    c = np.random.default_rng(0).random((3, 2))
    s, fitted = smooth_trajectory(c)
    assert not fitted
    np.testing.assert_array_equal(s, c)


def test_smooth_reduces_noise():
    rng = np.random.default_rng(0)
    t = np.arange(1, 31, dtype=float)
    clean = np.column_stack([0.002 * t ** 3 + 2 * t, 0.1 * t ** 2])
    better = 0
    for _ in range(200):
        noisy = clean + rng.normal(0, 1, clean.shape)
        s = smooth_trajectory(noisy)[0]
        better += np.sqrt(np.mean((s - clean) ** 2)) < np.sqrt(np.mean((noisy - clean) ** 2))
    assert better == 200


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 60), st.integers(0, 10**6))
def test_smooth_idempotent(n, seed):
    c = np.random.default_rng(seed).normal(0, 100, (n, 2)) + 300
    s1 = smooth_trajectory(c)[0]
    s2 = smooth_trajectory(s1)[0]
    assert np.abs(s2 - s1).max() <= 1e-9


# training -----------------------------------------------------------------------

def test_lr_zero_keeps_parameters(tiny):
    cfg, samples = tiny
    res = train(samples, samples, cfg, TrainConfig(epochs=3, batch_size=4, lr=0.0), seed=0)
    fresh = VRUNet(cfg, seed=int(np.random.SeedSequence(0).spawn(2)[0].generate_state(1)[0]))
    for k, v in fresh.state_dict().items():
        np.testing.assert_array_equal(res.model.state_dict()[k], v)


def test_same_seed_same_log(tiny, tmp_path):
    cfg, samples = tiny
    hyper = TrainConfig(epochs=3, batch_size=4, lr=1e-3, flip=True, pixel_dropout=0.1, keypoint_noise=1.0)
    a = train(samples, samples, cfg, hyper, seed=7, out_dir=tmp_path / "a")
    b = train(samples, samples, cfg, hyper, seed=7, out_dir=tmp_path / "b")
    assert a.log == b.log
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("epoch,train_loss,val_loss") and "ap_crossing" in header


def test_loss_decreases_first_epochs():
    cfg = VRUNetConfig.tiny()
    samples = tiny_samples(32, seed=1, cfg=cfg)
    ok = 0
    for seed in range(10):
        res = train(samples, samples, cfg, TrainConfig(epochs=10, lr=1e-3), seed=seed)
        losses = [r["train_loss"] for r in res.log]
        ok += all(b < a for a, b in zip(losses, losses[1:]))
    assert ok >= 9


def test_best_checkpoint_round_trip(tiny, tmp_path):
    cfg, samples = tiny
    res = train(samples, samples, cfg, TrainConfig(epochs=4, batch_size=3, lr=1e-3), seed=1, out_dir=tmp_path)
    model, meta = load_model(tmp_path / "best.ckpt")
    assert meta["epoch"] == res.best_epoch
    for k, v in res.best_state.items():
        np.testing.assert_array_equal(model.state_dict()[k], v)
    save_model(tmp_path / "again.ckpt", model)
    again, _ = load_model(tmp_path / "again.ckpt")
    assert predict(again, samples).trajectory.tobytes() == predict(model, samples).trajectory.tobytes()


def test_divergence_aborts(tiny):
    cfg, samples = tiny
    bad = [s for s in samples]
    bad[0] = type(bad[0])(**{**bad[0].__dict__, "poses": np.full_like(bad[0].poses, np.nan)})
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(bad, samples, cfg, TrainConfig(epochs=2, batch_size=len(bad), lr=1e-3), seed=0)


def test_train_requires_data(tiny):
    cfg, samples = tiny
    with pytest.raises(ValueError):
        train([], samples, cfg)


def test_evaluate_keys(tiny):
    cfg, samples = tiny
    r = evaluate(VRUNet(cfg), samples)
    assert set(r) >= {f"ap_{t}" for t in TASKS} | {"ade", "fde"}


def test_config_text_round_trip():
    d = {"lr": 0.001, "epochs": 5, "flip": True, "dtype": "float32"}
    assert parse_config_text(format_config_text(d) + "# comment\n\n") == d
    assert parse_config_text("dtype = float64")["dtype"] == "float64"
    with pytest.raises(ValueError):
        parse_config_text("nonsense line")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1})
    cfg = VRUNetConfig.tiny()
    assert VRUNetConfig.from_dict(cfg.to_dict()) == cfg
