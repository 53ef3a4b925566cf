import itertools

import numpy as np
import pytest

from pedintent import tracking as tk


def random_state(rng):
    mean = rng.normal(0, 50, 8)
    a = rng.normal(size=(8, 8))
    cov = a @ a.T + 0.5 * np.eye(8)
    return tk.KalmanState(mean, cov)


def test_predict_zero_velocity():
    st = tk.KalmanState(np.array([5.0, 6, 10, 20, 0, 0, 0, 0]), np.eye(8))
    for dt in (1, 3, 7):
        np.testing.assert_array_equal(tk.predict(st, dt).mean[:4], [5, 6, 10, 20])


def test_predict_linear_motion():
    st = tk.KalmanState(np.array([0.0, 0, 10, 20, 2, 3, 0, 0]), np.eye(8))
    np.testing.assert_array_equal(tk.predict(st, 1).mean[:4], [2, 3, 10, 20])


@pytest.mark.parametrize("seed", range(100))
def test_predict_update_match_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    st = random_state(rng)
    dt = int(rng.integers(1, 4))
    F = np.block([[np.eye(4), dt * np.eye(4)], [np.zeros((4, 4)), np.eye(4)]])
    Q = np.diag([1.0] * 4 + [0.25] * 4)
    p = tk.predict(st, dt)
    np.testing.assert_allclose(p.mean, F @ st.mean, atol=1e-9, rtol=0)
    np.testing.assert_allclose(p.cov, F @ st.cov @ F.T + Q, atol=1e-9, rtol=1e-12)

    z = rng.normal(0, 50, 4)
    H = np.hstack([np.eye(4), np.zeros((4, 4))])
    R = np.eye(4)
    S = H @ p.cov @ H.T + R
    K = p.cov @ H.T @ np.linalg.inv(S)
    mean_ref = p.mean + K @ (z - H @ p.mean)
    cov_ref = (np.eye(8) - K @ H) @ p.cov
    u = tk.update(p, z)
    np.testing.assert_allclose(u.mean, mean_ref, atol=1e-9, rtol=1e-9)
    np.testing.assert_allclose(u.cov, cov_ref, atol=1e-9, rtol=1e-9)
    assert np.trace(u.cov) < np.trace(p.cov)


def test_update_zero_innovation():
    st = tk.init_state([10, 20, 5, 8])
    st = tk.predict(st)
    u = tk.update(st, st.mean[:4])
    np.testing.assert_allclose(u.mean, st.mean, atol=1e-12)


def test_update_noise_free_limit():
    rng = np.random.default_rng(3)
    st = random_state(rng)
    z = rng.normal(0, 30, 4)
    u = tk.update(st, z, r=1e-12)
    np.testing.assert_allclose(u.mean[:4], z, atol=1e-6)


def test_update_singular_innovation():
    st = tk.KalmanState(np.zeros(8), np.zeros((8, 8)))
    with pytest.raises(np.linalg.LinAlgError):
        tk.update(st, np.ones(4), r=0.0)


@pytest.mark.parametrize("seed", range(20))
def test_covariance_stays_spd(seed):
    rng = np.random.default_rng(seed)
    st = tk.init_state(rng.uniform(50, 300, 4))
    for _ in range(60):
        st = tk.predict(st, int(rng.integers(1, 3)))
        if rng.random() < 0.7:
            st = tk.update(st, st.mean[:4] + rng.normal(0, 5, 4))
        assert np.abs(st.cov - st.cov.T).max() < 1e-9
        assert np.linalg.eigvalsh(st.cov).min() > 1e-12


def test_constant_velocity_converges():
    st = tk.init_state([100.0, 200.0, 40.0, 100.0])
    for k in range(1, 11):
        st = tk.predict(st)
        st = tk.update(st, [100.0 + 3 * k, 200.0 - 1.5 * k, 40.0, 100.0])
    err = np.hypot(st.mean[0] - 130.0, st.mean[1] - 185.0)
    assert err <= 1.0


def test_iou_basic():
    assert tk.iou([0, 0, 2, 2], [0, 0, 2, 2]) == 1.0
    assert tk.iou([0, 0, 2, 2], [10, 10, 2, 2]) == 0.0
    assert tk.iou([0, 0, 2, 2], [1, 0, 2, 2]) == pytest.approx(1 / 3)


def test_associate_identity_and_disjoint():
    boxes = [[10, 10, 4, 4], [50, 50, 6, 6], [100, 20, 8, 8]]
    res = tk.associate(boxes, boxes)
    assert sorted(res.matches) == [(0, 0), (1, 1), (2, 2)]
    assert sum(tk.iou(boxes[i], boxes[j]) for i, j in res.matches) == 3
    far = [[1000, 1000, 4, 4]]
    res = tk.associate(boxes, far)
    assert res.matches == [] and res.unmatched_detections == [0] and res.unmatched_tracks == [0, 1, 2]


@pytest.mark.parametrize("seed", range(100))
def test_associate_matches_permutation_search(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 30, size=(4, 2))
    tracks = [[*c, 10, 10] for c in centers]
    dets = [[*(c + rng.normal(0, 4, 2)), 10, 10] for c in rng.permutation(centers)]
    m = tk.iou_matrix(tracks, dets)
    best = max(sum(m[i, p[i]] for i in range(4)) for p in itertools.permutations(range(4)))
    res = tk.associate(tracks, dets, iou_min=0.0)
    got = sum(m[i, j] for i, j in res.matches)
    assert got == pytest.approx(best, abs=1e-12)


def test_single_static_detection():
    tr = tk.Tracker()
    pose = np.zeros((17, 3))
    for f in range(30):
        tr.step(f, [([100, 100, 40, 90], pose)])
    tracks = tr.all_tracks()
    assert len(tracks) == 1 and len(tracks[0].history) == 30 and tracks[0].id == 0


def _walkers(n, frames, rng):
    starts = [(40 + 60 * i, rng.uniform(100, 300)) for i in range(n)]
    vel = [(rng.uniform(-1, 1), rng.uniform(-1, 1)) for _ in range(n)]
    return {
        f: [([s[0] + v[0] * f, s[1] + v[1] * f, 30, 80], None) for s, v in zip(starts, vel)]
        for f in range(frames)
    }, starts, vel


def test_two_walkers_no_switch():
    frames = {f: [([100 + 2 * f, 200, 30, 80], None), ([400 - 2 * f, 200, 30, 80], None)] for f in range(40)}
    tracks = tk.track_scene(frames)
    assert len(tracks) == 2
    for t in tracks:
        xs = [b[0] for _, b, _ in t.history]
        assert np.all(np.diff(xs) == xs[1] - xs[0])


def test_parallel_walkers_keep_ids():
    frames, starts, vel = _walkers(6, 60, np.random.default_rng(4))
    tracks = tk.track_scene(frames)
    assert len(tracks) == 6
    for t in tracks:
        assert len(t.history) == 60
        k = int(np.argmin([abs(t.history[0][1][0] - s[0]) for s in starts]))
        expected = np.array(starts[k]) + 59 * np.array(vel[k])
        assert np.hypot(*(t.box[:2] - expected)) <= 1.0


def test_retired_track_gets_new_id():
    tr = tk.Tracker(max_misses=3)
    box = [100, 100, 40, 90]
    for f in range(5):
        tr.step(f, [(box, None)])
    for f in range(5, 10):
        tr.step(f, [])
    tr.step(10, [(box, None)])
    ids = [t.id for t in tr.all_tracks()]
    assert ids == [0, 1]
    assert len(set(ids)) == len(ids)


def test_frames_must_increase():
    tr = tk.Tracker()
    tr.step(3, [])
    with pytest.raises(ValueError):
        tr.step(3, [])
