"""Central finite-difference check of the refiner's analytic gradients."""

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .keypoints import farthest_point_sample
from .losses import ALPHA, lambda_schedule, total_loss_t
from .losses import position_loss_t, rotation_loss_t
from .refiner import (RefinerConfig, RefinerParams, SceneBatch, cascade_t, coarse_t, refine_step_t,
                      split_layers, step_prefix)
from .synth import SceneConfig, make_scenes, make_toy_object

TOY_CONFIG = RefinerConfig(d_model=16, heads=2, points=4, levels=2, keypoints=8, steps=2,
                           channels=8, crop_size=64)


@dataclass
class GradCheckResult:
    max_rel_error: float  # over entries with |analytic| >= abs_floor
    max_abs_error: float  # over the remaining, near-zero entries
    worst: str
    checked: int
    seconds: float
    abs_floor: float = 1e-8

    def passed(self, tol=1e-3):
        return self.max_rel_error < tol and self.max_abs_error < self.abs_floor


class ToyProblem:
    """A tiny scene batch plus a randomly initialized refiner and its loss."""

    def __init__(self, config=TOY_CONFIG, n_scenes=1, seed=0, loss_points=32):
        self.config = config
        model = make_toy_object()
        scfg = SceneConfig(crop_size=config.crop_size, levels=config.levels, channels=config.channels)
        scenes = make_scenes(model, scfg, n_scenes, seed)
        rng = np.random.default_rng(seed)
        prior = np.mean([sc.gt_state[1].as_array() for sc in scenes], axis=0)
        self.params = RefinerParams.init(config, rng, gamma_prior=prior)
        # perturb the zero-initialized heads so every path carries gradient
        for name in self.params.names():
            if ".head." in name or name.startswith("head."):
                self.params[name] = rng.normal(0.0, 0.05, self.params[name].shape)
        kp = farthest_point_sample(model, config.keypoints).keypoints
        self.batch = SceneBatch.from_scenes([sc.pyramid for sc in scenes], [sc.crop for sc in scenes],
                                            [sc.K_cam for sc in scenes], kp)
        self.R_gt = np.stack([sc.gt_state[0] for sc in scenes])
        self.gamma_gt = np.stack([sc.gt_state[1].as_array() for sc in scenes])
        self.points = farthest_point_sample(model, loss_points).keypoints
        self.lam = lambda_schedule(1.0, config.steps)

    def loss(self, P):
        states = cascade_t(self.batch, P, self.config)
        return total_loss_t(states, self.R_gt, self.gamma_gt, self.points, ALPHA, self.lam)

    def value(self, P):
        return float(ag.data_of(self.loss(P)))

    # Staged evaluation: perturbing one parameter only changes the cascade
    # from the stage that parameter enters onwards, so earlier stages and
    # their loss terms are reused from the unperturbed run.

    def stage_of(self, name):
        head = name.split(".", 1)[0]
        if head == "coarse":
            return 0
        if head == "query0" or self.config.share_step_weights:
            return 1
        return 2 + int(head[len("step"):])

    def _term(self, R, gamma):
        r = rotation_loss_t(R, self.R_gt, self.points)
        return ag.data_of(ALPHA * r + position_loss_t(gamma, self.gamma_gt))

    def staged_value(self, P, stage=0, cache=None):
        """Loss value recomputed from ``stage``; a full run fills an empty ``cache``."""
        cfg, groups = self.config, split_layers(P)
        fill = stage == 0 and cache is not None and not cache
        if stage == 0:
            R, gamma = coarse_t(self.batch, groups["coarse"])
            terms = [self._term(R, gamma)]
        else:
            R, gamma = cache["coarse"]
            terms = [cache["terms"][0]]
        B = self.batch.size
        if stage <= 1:
            Q = np.broadcast_to(ag.data_of(P["query0"]).reshape(1, cfg.keypoints, cfg.d_model),
                                (B, cfg.keypoints, cfg.d_model))
            first = 0
        else:
            first = stage - 2
            R, gamma, Q = cache["steps"][first - 1] if first else (*cache["coarse"], cache["query"])
            terms += cache["terms"][1:first + 1]
        if fill:
            cache.update(coarse=(R, gamma), query=Q, steps=[], terms=terms)
        for i in range(first, cfg.steps):
            R, gamma, Q, _, _ = refine_step_t(R, gamma, Q, self.batch, groups[step_prefix(cfg, i)], cfg)
            terms.append(self._term(R, gamma))
            if fill:
                cache["steps"].append((R, gamma, Q))
        total = self.lam * terms[0] + (1.0 - self.lam) * sum(terms[1:])
        return float(np.mean(total))

    def gradients(self, P):
        leaves = {k: ag.Tensor(v, requires_grad=True) for k, v in P.items()}
        self.loss(leaves).backward()
        return {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in leaves.items()}


def check_gradients(problem, h=1e-5, abs_floor=1e-8, names=None, max_entries=None, rng=None):
    """Compare analytic and central-difference gradients entry by entry.

    Entries whose analytic value is below ``abs_floor`` in magnitude are
    compared absolutely instead.
    """
    start = time.perf_counter()
    P = {k: np.array(v, dtype=np.float64) for k, v in problem.params.tensors.items()}
    grads = problem.gradients(P)
    cache = {}
    base = problem.staged_value(P, 0, cache)
    if not np.isclose(base, problem.value(P), rtol=1e-12, atol=0.0):
        raise AssertionError("staged evaluation disagrees with the full loss")
    worst, worst_abs, worst_name, checked = 0.0, 0.0, "", 0
    for name in names or list(P):
        arr = P[name]
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        g = grads[name].reshape(-1)
        stage = problem.stage_of(name)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = problem.staged_value(P, stage, cache)
            flat[i] = old - h
            fm = problem.staged_value(P, stage, cache)
            flat[i] = old
            num = (fp - fm) / (2.0 * h)
            a = g[i]
            checked += 1
            if abs(a) < abs_floor:
                worst_abs = max(worst_abs, abs(a - num))
                continue
            err = abs(a - num) / max(abs(a), abs(num))
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckResult(float(worst), float(worst_abs), worst_name, checked,
                           time.perf_counter() - start, abs_floor)
