"""Toy-scale end-to-end training of the coarse head and the refiner cascade."""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import BehindCamera, DegenerateDirection, DegenerateRotation, DivergenceDetected
from .keypoints import farthest_point_sample
from .losses import ALPHA, lambda_schedule, total_loss_t
from .refiner import SceneBatch, cascade_t


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    momentum: float = 0.9
    clip_norm: float = 5.0  # global gradient norm; 0 disables clipping
    cosine: bool = True  # cosine-anneal the learning rate to zero
    loss_points: int = 64
    alpha: float = ALPHA
    seed: int = 0


def scene_batch(scenes, n_keypoints):
    model = scenes[0].model
    kp = farthest_point_sample(model, n_keypoints).keypoints
    return SceneBatch.from_scenes([s.pyramid for s in scenes], [s.crop for s in scenes],
                                  [s.K_cam for s in scenes], kp)


def gt_arrays(scenes):
    R = np.stack([s.gt_state[0] for s in scenes])
    gamma = np.stack([s.gt_state[1].as_array() for s in scenes])
    return R, gamma


def loss_and_grads(params, batch, R_gt, gamma_gt, points, lam, alpha=ALPHA, symmetries=None):
    """Batch-mean total loss and its gradient for every parameter."""
    leaves = {k: ag.Tensor(v, requires_grad=True) for k, v in params.tensors.items()}
    # non-finite values are reported below, not warned about on the way
    with np.errstate(invalid="ignore", over="ignore"):
        try:
            states = cascade_t(batch, leaves, params.config)
        except (BehindCamera, DegenerateRotation, DegenerateDirection) as e:
            raise DivergenceDetected(f"cascade left the valid pose domain: {e}") from e
        loss = total_loss_t(states, R_gt, gamma_gt, points, alpha, lam, symmetries)
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceDetected(f"non-finite loss {value}")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in leaves.items()}
    return value, grads


def learning_rate_at(step, steps, base, cosine=True):
    if not cosine or steps <= 1:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * step / steps))


def toy_train(params, scenes, steps, learning_rate, cfg=None):
    """SGD with momentum on the total cascade loss.

    Returns ``(trained_params, trace)`` where ``trace`` holds the minibatch
    loss seen at every step, before that step's update. The input
    ``params`` is not modified.
    """
    cfg = cfg or TrainConfig()
    params = params.copy()
    if not scenes:
        return params, []
    rcfg = params.config
    model = scenes[0].model
    batch = scene_batch(scenes, rcfg.keypoints)
    R_all, g_all = gt_arrays(scenes)
    points = farthest_point_sample(model, min(cfg.loss_points, len(model.points))).keypoints
    syms = model.symmetries if model.symmetric else None
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    bs = min(cfg.batch_size, len(scenes))
    trace = []
    for step in range(steps):
        idx = np.sort(rng.choice(len(scenes), bs, replace=False))
        lam = lambda_schedule(step / steps, rcfg.steps)
        value, grads = loss_and_grads(params, batch.subset(idx), R_all[idx], g_all[idx], points, lam,
                                      cfg.alpha, syms)
        trace.append(value)
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if not math.isfinite(norm):
            raise DivergenceDetected(f"non-finite gradient at step {step}")
        scale = cfg.clip_norm / norm if cfg.clip_norm and norm > cfg.clip_norm else 1.0
        lr = learning_rate_at(step, steps, learning_rate, cfg.cosine)
        for k, g in grads.items():
            v = velocity[k]
            v *= cfg.momentum
            v += scale * g
            if lr:
                params.tensors[k] = params.tensors[k] - lr * v
    return params, trace
