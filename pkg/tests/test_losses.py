import numpy as np
import pytest

from oskf import autograd as ag
from oskf.errors import EmptyModel, LengthMismatch
from oskf.geometry import SiteTranslation, axis_angle_matrix
from oskf.keypoints import ObjectModel
from oskf.losses import (LossConfig, lambda_schedule, position_loss, position_loss_t, rotation_loss,
                         rotation_loss_sym, rotation_loss_t, step_loss, total_loss, total_loss_t)
from oskf.synth import random_rotation

Rz = lambda a: axis_angle_matrix([0, 0, 1], a)  # noqa: E731


def rotation_loss_oracle(Rp, Rg, pts):
    total = 0.0
    for x in pts:
        a, b = Rp @ x, Rg @ x
        total += sum(abs(a[i] - b[i]) for i in range(3))
    return total / len(pts)


def test_rotation_loss_fixtures():
    R = random_rotation(np.random.default_rng(0))
    assert rotation_loss(R, R, np.eye(3)) == 0.0
    assert rotation_loss(Rz(np.pi), np.eye(3), [[1.0, 0, 0]]) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_rotation_loss_matches_loop(seed):
    rng = np.random.default_rng(seed)
    Rp, Rg, pts = random_rotation(rng), random_rotation(rng), rng.normal(size=(30, 3))
    assert rotation_loss(Rp, Rg, pts) == pytest.approx(rotation_loss_oracle(Rp, Rg, pts), abs=1e-13)


def test_rotation_loss_empty():
    with pytest.raises(EmptyModel):
        rotation_loss(np.eye(3), np.eye(3), np.zeros((0, 3)))


def test_symmetric_loss():
    pts = np.random.default_rng(1).normal(size=(20, 3))
    R = random_rotation(np.random.default_rng(2))
    plain = ObjectModel(pts)
    assert rotation_loss_sym(Rz(0.3) @ R, R, plain) == rotation_loss(Rz(0.3) @ R, R, pts)
    flip = ObjectModel(pts, symmetries=[np.eye(3), Rz(np.pi)], symmetric=True)
    assert rotation_loss_sym(R @ Rz(np.pi), R, flip) == pytest.approx(0.0, abs=1e-14)


def test_symmetric_loss_matches_group_enumeration():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(15, 3))
    group = [Rz(2 * np.pi * k / 12) for k in range(12)]
    model = ObjectModel(pts, symmetries=group, symmetric=True)
    for _ in range(10):
        Rp, Rg = random_rotation(rng), random_rotation(rng)
        best = min(rotation_loss_oracle(Rp, Rg @ S, pts) for S in group)
        got = rotation_loss_sym(Rp, Rg, model)
        assert got == pytest.approx(best, abs=1e-13)
        assert got <= rotation_loss(Rp, Rg, pts) + 1e-15


def test_position_loss():
    a, b = SiteTranslation(0.1, -0.2, 3.0), SiteTranslation(0.0, 0.0, 3.5)
    assert position_loss(a, a) == 0.0
    assert position_loss(a, b) == pytest.approx(0.8, abs=1e-15)
    assert position_loss(a, b) == position_loss(b, a)


def test_step_loss_weighting():
    pts = np.array([[1.0, 0, 0]])
    R = Rz(np.pi / 2)  # L_R = |0-1| + |1-0| = 2
    gt = (np.eye(3), SiteTranslation(0, 0, 1))
    pred = (R, SiteTranslation(0.1, 0, 1.1))
    assert step_loss(gt, gt, pts, LossConfig()) == 0.0
    l3 = step_loss(pred, gt, pts, LossConfig(alpha=3))
    l6 = step_loss(pred, gt, pts, LossConfig(alpha=6))
    assert l3 == pytest.approx(3 * 2 + 0.2, abs=1e-12)
    assert l6 - l3 == pytest.approx(3 * 2, abs=1e-12)


def test_step_loss_value_example():
    pts = np.array([[1.0, 0, 0], [0.0, 0, 0]])  # second point contributes nothing
    theta = np.pi / 4  # (1 - cos) + sin = 1 for the first point, so the mean is 0.5
    gt = (np.eye(3), SiteTranslation(0, 0, 2))
    pred = (Rz(theta), SiteTranslation(0.2, 0, 2))
    assert rotation_loss(pred[0], gt[0], pts) == pytest.approx(0.5, abs=1e-15)
    assert step_loss(pred, gt, pts, LossConfig(alpha=3)) == pytest.approx(1.7, abs=1e-14)


def test_total_loss_lambda():
    pts = np.array([[1.0, 0, 0]])
    gt = (np.eye(3), SiteTranslation(0, 0, 1))
    coarse = (np.eye(3), SiteTranslation(1.0, 0, 1))
    refined = (np.eye(3), SiteTranslation(0.5, 0, 1))
    poses = [coarse, refined, refined, refined]
    assert total_loss(poses, gt, pts, LossConfig(lam=1.0)) == pytest.approx(1.0)
    assert total_loss(poses, gt, pts, LossConfig(lam=0.0)) == pytest.approx(1.5)
    same = [refined] * 4
    assert total_loss(same, gt, pts, LossConfig(lam=2 / 3)) == pytest.approx(5 / 3 * 0.5, abs=1e-15)
    with pytest.raises(LengthMismatch):
        total_loss(poses[:3], gt, pts, LossConfig(lam=0.0))


def test_lambda_schedule():
    assert lambda_schedule(0.1, 3) == 0.0
    assert lambda_schedule(0.0, 3) == 0.0
    assert lambda_schedule(0.5, 3) == pytest.approx(2 / 3)
    assert lambda_schedule(0.2, 3) == pytest.approx(2 / 3)
    assert lambda_schedule(1.0, 2) == 0.5


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=0)
    with pytest.raises(ValueError):
        LossConfig(lam=1.5)


def test_losses_non_negative_and_zero_only_at_truth():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(10, 3))
    for _ in range(50):
        Rp, Rg = random_rotation(rng), random_rotation(rng)
        assert rotation_loss(Rp, Rg, pts) > 0
        a, b = SiteTranslation(*rng.normal(size=3)), SiteTranslation(*rng.normal(size=3))
        assert position_loss(a, b) > 0


def test_batched_losses_match_scalar():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(12, 3))
    B = 4
    Rp = np.stack([random_rotation(rng) for _ in range(B)])
    Rg = np.stack([random_rotation(rng) for _ in range(B)])
    gp, gg = rng.normal(size=(B, 3)), rng.normal(size=(B, 3))
    np.testing.assert_allclose(rotation_loss_t(Rp, Rg, pts), [rotation_loss(Rp[i], Rg[i], pts) for i in range(B)],
                               atol=1e-13)
    np.testing.assert_allclose(position_loss_t(gp, gg), np.abs(gp - gg).sum(-1), atol=1e-15)
    states = [(Rp, gp), (Rg, gg), (Rp, gg)]
    want = np.mean([total_loss([(Rp[i], SiteTranslation(*gp[i])), (Rg[i], SiteTranslation(*gg[i])),
                                (Rp[i], SiteTranslation(*gg[i]))],
                               (Rg[i], SiteTranslation(*gg[i])), pts, LossConfig(lam=0.5, n_refiners=2))
                    for i in range(B)])
    assert float(total_loss_t(states, Rg, gg, pts, 3.0, 0.5)) == pytest.approx(want, abs=1e-12)


def test_batched_symmetric_matches_scalar():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(12, 3))
    group = [Rz(2 * np.pi * k / 4) for k in range(4)]
    model = ObjectModel(pts, symmetries=group, symmetric=True)
    Rp = np.stack([random_rotation(rng) for _ in range(3)])
    Rg = np.stack([random_rotation(rng) for _ in range(3)])
    np.testing.assert_allclose(rotation_loss_t(Rp, Rg, pts, group),
                               [rotation_loss_sym(Rp[i], Rg[i], model) for i in range(3)], atol=1e-13)


def test_rotation_loss_gradient():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(6, 3))
    Rg = random_rotation(rng)[None]
    X = rng.normal(size=(1, 3, 3))
    t = ag.Tensor(X, requires_grad=True)
    rotation_loss_t(t, Rg, pts).sum().backward()
    h = 1e-6
    num = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        num[idx] = (rotation_loss_t(Xp, Rg, pts)[0] - rotation_loss_t(Xm, Rg, pts)[0]) / (2 * h)
    np.testing.assert_allclose(t.grad, num, atol=1e-6)
