import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseadapt import metrics

from oracles import rodrigues_matrix


def random_cloud(rng, n=13):
    return rng.normal(size=(n, 3))


def random_similarity(rng):
    rot = rodrigues_matrix(rng.normal(size=3))
    s = float(rng.uniform(0.3, 2.5))
    t = rng.normal(size=3)
    return rot, s, t


def test_mpjpe_zero_on_identical(rng):
    cloud = random_cloud(rng)
    assert metrics.mpjpe(cloud, cloud) == 0.0


def test_mpjpe_ignores_constant_offset(rng):
    cloud = random_cloud(rng)
    assert metrics.mpjpe(cloud + np.array([0.3, -0.7, 2.0]), cloud) < 1e-12


def test_mpjpe_two_joint_arithmetic():
    truth = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    pred = np.array([[0.0, 0, 0], [1.0, 0.2, 0]])
    # distances after root alignment: 0 and 0.2 -> mean 0.1
    assert abs(metrics.mpjpe(pred, truth) - 0.1) < 1e-12


def test_mpjpe_shape_mismatch():
    with pytest.raises(ValueError):
        metrics.mpjpe(np.zeros((4, 3)), np.zeros((5, 3)))


def test_procrustes_recovers_known_transform(rng):
    src = random_cloud(rng, 6)
    rot, s, t = random_similarity(rng)
    dst = s * src @ rot.T + t
    res = metrics.procrustes_align(src, dst)
    assert np.abs(res.rotation - rot).max() < 1e-8
    assert abs(res.scale - s) < 1e-8
    assert np.abs(res.translation - t).max() < 1e-8
    assert np.abs(res.aligned - dst).max() < 1e-8


def test_procrustes_identity_inputs(rng):
    cloud = random_cloud(rng)
    res = metrics.procrustes_align(cloud, cloud)
    assert np.allclose(res.rotation, np.eye(3), atol=1e-10)
    assert abs(res.scale - 1.0) < 1e-10
    assert np.allclose(res.translation, 0.0, atol=1e-10)


def test_procrustes_rotation_is_proper(rng):
    for _ in range(20):
        res = metrics.procrustes_align(random_cloud(rng), random_cloud(rng))
        assert abs(np.linalg.det(res.rotation) - 1.0) < 1e-9


def test_procrustes_degenerate_cloud(rng):
    pred = np.ones((5, 3))
    truth = random_cloud(rng, 5)
    res = metrics.procrustes_align(pred, truth)
    assert res.scale == 1.0
    assert np.array_equal(res.rotation, np.eye(3))
    assert np.allclose(res.aligned, pred + res.translation)


def test_procrustes_local_optimality(rng):
    pred, truth = random_cloud(rng), random_cloud(rng)
    res = metrics.procrustes_align(pred, truth)
    best = ((res.aligned - truth) ** 2).sum()
    for _ in range(100):
        d_rot = rodrigues_matrix(rng.normal(size=3) * 1e-3)
        s = res.scale * (1 + rng.normal() * 1e-3)
        t = res.translation + rng.normal(size=3) * 1e-3
        cand = s * pred @ (d_rot @ res.rotation).T + t
        assert ((cand - truth) ** 2).sum() >= best - 1e-12


@given(st.integers(0, 10_000))
def test_pa_mpjpe_zero_on_similarity_copies(seed):
    rng = np.random.default_rng(seed)
    truth = random_cloud(rng)
    rot, s, t = random_similarity(rng)
    pred = (truth @ rot.T) * s + t
    assert metrics.pa_mpjpe(pred, truth) < 1e-9


@given(st.integers(0, 10_000))
def test_pa_mpjpe_similarity_invariance(seed):
    rng = np.random.default_rng(seed)
    pred, truth = random_cloud(rng), random_cloud(rng)
    rot, s, t = random_similarity(rng)
    moved = s * pred @ rot.T + t
    assert abs(metrics.pa_mpjpe(moved, truth) - metrics.pa_mpjpe(pred, truth)) < 1e-9


def test_pa_mpjpe_scaling_invariance(rng):
    pred, truth = random_cloud(rng), random_cloud(rng)
    assert abs(metrics.pa_mpjpe(2.0 * pred, truth) - metrics.pa_mpjpe(pred, truth)) < 1e-9


def test_pa_not_above_mpjpe_on_random_pairs(rng):
    for _ in range(300):
        scale = rng.uniform(0.05, 1.0)
        truth = random_cloud(rng)
        pred = truth + scale * random_cloud(rng)
        assert metrics.pa_mpjpe(pred, truth) <= metrics.mpjpe(pred, truth) + 1e-9


def test_pck_boundaries(rng):
    truth = random_cloud(rng)
    assert metrics.pck(truth, truth) == 1.0
    # every joint displaced by 0.2 in a different direction after root alignment
    offsets = rng.normal(size=(13, 3))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets *= 0.2
    offsets[0] = 0.0
    assert metrics.pck(truth + offsets, truth, threshold=0.15) == pytest.approx(1 / 13)


def test_pck_counting():
    truth = np.zeros((4, 3))
    truth[1:] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    pred = truth.copy()
    pred[3] += [0.3, 0, 0]  # one joint pushed out of the 0.15 ball
    assert metrics.pck(pred, truth) == 0.75


def test_pck_strict_inequality():
    truth = np.zeros((2, 3))
    pred = truth.copy()
    pred[1] = [0.15, 0.0, 0.0]  # exactly at threshold -> not correct
    assert metrics.pck(pred, truth) == 0.5


def test_metrics_report_aggregates(rng):
    preds = [random_cloud(rng) for _ in range(5)]
    truths = [p + 0.01 * random_cloud(rng) for p in preds]
    rep = metrics.MetricsReport.from_frames(preds, truths)
    assert rep.mpjpe == pytest.approx(rep.mpjpe_per_frame.mean())
    assert 0.0 <= rep.pck <= 1.0
    assert "mpjpe" in rep.summary()


def test_metrics_report_rejects_bad_pck():
    with pytest.raises(ValueError):
        metrics.MetricsReport(np.ones(2), np.ones(2), np.array([0.5, 1.5]))
