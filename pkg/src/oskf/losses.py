"""Training objectives.

Scalar functions take numpy inputs and return floats. The ``*_t``
variants are batched and differentiable and are what training calls.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import EmptyModel, LengthMismatch

ALPHA = 3.0
WARMUP_FRACTION = 0.2


@dataclass(frozen=True)
class LossConfig:
    alpha: float = ALPHA
    lam: float = 0.0
    n_refiners: int = 3
    symmetric: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


def lambda_schedule(progress, n_refiners):
    """Coarse-term weight: 0 during warm-up, (N-1)/N afterwards."""
    if progress < WARMUP_FRACTION:
        return 0.0
    return (n_refiners - 1) / n_refiners


def _points(points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyModel("loss needs at least one model point")
    return pts


def rotation_loss(R_pred, R_gt, model_points):
    """Mean over points of the L1 distance between the two rotated copies."""
    pts = _points(model_points)
    D = np.asarray(R_pred, dtype=np.float64) - np.asarray(R_gt, dtype=np.float64)
    return float(np.abs(pts @ D.T).sum(axis=1).mean())


def rotation_loss_sym(R_pred, R_gt, model):
    pts = _points(model.points)
    return min(rotation_loss(R_pred, np.asarray(R_gt) @ S, pts) for S in model.symmetries)


def position_loss(site_pred, site_gt):
    return float(np.abs(site_pred.as_array() - site_gt.as_array()).sum())


def step_loss(pred, gt, model, cfg):
    R_p, s_p = pred
    R_g, s_g = gt
    if cfg.symmetric:
        lr = rotation_loss_sym(R_p, R_g, model)
    else:
        lr = rotation_loss(R_p, R_g, getattr(model, "points", model))
    return cfg.alpha * lr + position_loss(s_p, s_g)


def total_loss(poses, gt, model, cfg):
    """lam * coarse term + (1 - lam) * sum of refinement terms."""
    if len(poses) != cfg.n_refiners + 1:
        raise LengthMismatch(f"expected {cfg.n_refiners + 1} poses, got {len(poses)}")
    terms = [step_loss(p, gt, model, cfg) for p in poses]
    return cfg.lam * terms[0] + (1.0 - cfg.lam) * sum(terms[1:])


# ---------------------------------------------------------------- batched

def rotation_loss_t(R_pred, R_gt, points, symmetries=None):
    """Per-scene rotation loss (B,). With ``symmetries`` the best one is
    selected per scene on the forward values and differentiated through."""
    pts = _points(points)
    R_gt = np.asarray(R_gt, dtype=np.float64)
    if symmetries is None or len(symmetries) <= 1:
        D = ag.as_tensor(R_pred) - R_gt
        return ag.absolute(ag.matmul(pts, D.swapaxes(-1, -2))).sum(axis=-1).mean(axis=-1)
    Rp = ag.data_of(R_pred)
    cands = np.stack([R_gt @ S for S in symmetries], axis=1)  # (B, S, 3, 3)
    costs = np.abs((Rp[:, None] - cands) @ pts.T).sum(axis=-2).mean(axis=-1)
    best = cands[np.arange(len(cands)), np.argmin(costs, axis=1)]
    return rotation_loss_t(R_pred, best, pts)


def position_loss_t(gamma_pred, gamma_gt):
    return ag.absolute(ag.as_tensor(gamma_pred) - np.asarray(gamma_gt)).sum(axis=-1)


def total_loss_t(states, R_gt, gamma_gt, points, alpha, lam, symmetries=None):
    """Batch-mean total loss over the N+1 cascade states."""
    terms = []
    for R, g in states:
        terms.append(alpha * rotation_loss_t(R, R_gt, points, symmetries) + position_loss_t(g, gamma_gt))
    total = terms[0] * lam
    for t in terms[1:]:
        total = total + t * (1.0 - lam)
    return total.mean()
