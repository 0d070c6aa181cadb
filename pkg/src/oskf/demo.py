"""Train a toy cascade on synthetic scenes and report per-iteration errors."""

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .geometry import Pose, project_keypoints
from .metrics import add_distance, rotation_error_deg
from .refiner import RefinerConfig, RefinerParams, cascade_batch, decode_translation, save_checkpoint
from .synth import SceneConfig, make_scenes, make_toy_object
from .training import TrainConfig, scene_batch, toy_train


@dataclass(frozen=True)
class DemoConfig:
    seed: int = 1
    steps: int = 3000
    scenes: int = 200
    test_scenes: int = 50
    lr: float = 3e-3
    batch_size: int = 8
    d_model: int = 32
    heads: int = 8
    points: int = 4
    levels: int = 4
    keypoints: int = 16
    channels: int = 16
    refiners: int = 3
    crop_size: int = 64
    max_angle: float = 30.0  # degrees around the canonical view; <= 0 samples all of SO(3)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise KeyError(f"unknown demo option(s): {', '.join(unknown)}")
        return cls(**values)

    def refiner_config(self):
        return RefinerConfig(d_model=self.d_model, heads=self.heads, points=self.points, levels=self.levels,
                             keypoints=self.keypoints, steps=self.refiners, channels=self.channels,
                             crop_size=self.crop_size)

    def scene_config(self):
        return SceneConfig(crop_size=self.crop_size, levels=self.levels, channels=self.channels,
                           max_angle_deg=self.max_angle if self.max_angle > 0 else None)


@dataclass
class IterationErrors:
    iteration: int
    rotation_deg: float
    add_m: float


@dataclass
class DemoResult:
    config: DemoConfig
    params: RefinerParams
    trace: list
    rows: list

    def table(self):
        lines = [f"{'iter':>4} {'rot_err_deg':>12} {'ADD_mm':>10}"]
        for r in self.rows:
            lines.append(f"{r.iteration:>4d} {r.rotation_deg:12.4f} {1000 * r.add_m:10.4f}")
        return "\n".join(lines)

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "demo.ckpt")
        save_checkpoint(ckpt, self.params, extra={"demo": asdict(self.config)})
        with open(os.path.join(out_dir, "table.txt"), "w") as f:
            f.write(self.table() + "\n")
        with open(os.path.join(out_dir, "trace.json"), "w") as f:
            json.dump(self.trace, f)
        return ckpt


def cascade_errors(params, scenes):
    """Mean rotation error and mean ADD over ``scenes`` at every cascade iteration."""
    model = scenes[0].model
    batch = scene_batch(scenes, params.config.keypoints)
    rows = []
    for i, (R, gamma) in enumerate(cascade_batch(batch, params)):
        t = decode_translation(gamma, batch)
        rot = [rotation_error_deg(R[j], s.gt_pose.rotation) for j, s in enumerate(scenes)]
        add = [add_distance(Pose(R[j], t[j]), s.gt_pose, model.points) for j, s in enumerate(scenes)]
        rows.append(IterationErrors(i, float(np.mean(rot)), float(np.mean(add))))
    return rows


def reprojection_errors(params, scenes):
    """Per-scene mean keypoint reprojection error in image pixels, (N+1, n_scenes)."""
    batch = scene_batch(scenes, params.config.keypoints)
    kp = batch.keypoints
    out = []
    for R, gamma in cascade_batch(batch, params):
        t = decode_translation(gamma, batch)
        errs = []
        for j, s in enumerate(scenes):
            pred = project_keypoints(kp, Pose(R[j], t[j]), s.K_cam)
            gt = project_keypoints(kp, s.gt_pose, s.K_cam)
            errs.append(float(np.linalg.norm(pred - gt, axis=1).mean()))
        out.append(errs)
    return np.array(out)


def demo_scenes(cfg):
    """(train, held-out) scene lists and the init seed for ``cfg``."""
    model = make_toy_object()
    scfg = cfg.scene_config()
    seeds = np.random.default_rng(cfg.seed).integers(0, 2**31 - 1, 3)
    train = make_scenes(model, scfg, cfg.scenes, int(seeds[0]))
    test = make_scenes(model, scfg, cfg.test_scenes, int(seeds[1]))
    return train, test, seeds


def run_demo(cfg=None):
    cfg = cfg or DemoConfig()
    train, test, seeds = demo_scenes(cfg)
    prior = np.mean([s.gt_state[1].as_array() for s in train], axis=0)
    params = RefinerParams.init(cfg.refiner_config(), np.random.default_rng(int(seeds[2])), gamma_prior=prior)
    tcfg = TrainConfig(batch_size=cfg.batch_size, seed=int(seeds[2]))
    params, trace = toy_train(params, train, cfg.steps, cfg.lr, tcfg)
    return DemoResult(cfg, params, trace, cascade_errors(params, test))
