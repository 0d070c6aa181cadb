"""Invariant suite behind ``oskf selfcheck``.

Each check returns ``(ok, detail)``; :func:`run_checks` times them and
never lets one failure stop the rest.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import oracles
from .errors import OskfError
from .geometry import (CameraIntrinsics, CropFrame, allo_to_ego, back_project, ego_to_allo, is_rotation,
                       project, recover_rotation, site_decode, site_encode)
from .gradcheck import ToyProblem, check_gradients
from .keypoints import default_seed_index, farthest_point_sample
from .pyramid import FeaturePyramid, extract_oskf
from .refiner import (RefinerConfig, RefinerParams, SceneBatch, cascade_batch, deformable_attention,
                      load_checkpoint, self_attention)
from .synth import SceneConfig, make_scene, make_toy_object

K_CAM = CameraIntrinsics(572.4, 573.6, 325.3, 242.0)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def check_geometry(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    R = recover_rotation(rng.normal(size=(n, 6)))
    ortho = np.abs(np.swapaxes(R, 1, 2) @ R - np.eye(3)).max()
    det = np.abs(np.linalg.det(R) - 1.0).max()
    worst = 0.0
    for i in range(200):
        t = np.array([*rng.uniform(-0.3, 0.3, 2), rng.uniform(0.5, 2.0)])
        crop = CropFrame(rng.uniform(100, 500, 2), rng.uniform(50, 300), 640.0)
        O = project(t, K_CAM)
        O2, tz = site_decode(site_encode(O, t[2], crop), crop)
        worst = max(worst, np.abs(back_project(O2, tz, K_CAM) - t).max())
        worst = max(worst, np.abs(ego_to_allo(allo_to_ego(R[i], t), t) - R[i]).max())
    ok = ortho < 1e-9 and det < 1e-9 and worst < 1e-9
    return ok, f"orthonormality {ortho:.1e}, det {det:.1e}, round-trip {worst:.1e}"


def check_fps(n_clouds=30, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_clouds):
        pts = rng.normal(size=(int(rng.integers(2, 80)), 3))
        k = int(rng.integers(1, len(pts) + 1))
        got = farthest_point_sample(pts, k).indices.tolist()
        want = oracles.fps_oracle(pts, k, default_seed_index(pts))
        if got != want:
            return False, f"index mismatch on a {len(pts)}-point cloud, k={k}"
    return True, f"{n_clouds} clouds index-for-index"


def _toy_layers(rng):
    cfg = RefinerConfig(d_model=16, heads=2, points=4, levels=2, keypoints=8, steps=1, channels=8, crop_size=64)
    P = RefinerParams.init(cfg, rng)
    for name in P.names():
        P[name] = rng.normal(0.0, 0.3, P[name].shape)
    return P


def check_attention(n=10, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        P = _toy_layers(rng)
        Q, E = rng.normal(size=(8, 16)), rng.normal(size=(8, 16))
        sa = P.layer("step0.sa1")
        worst = max(worst, np.abs(self_attention(Q, E, sa, 2) - oracles.self_attention_oracle(Q, E, sa, 2)).max())
        pyr = FeaturePyramid((rng.normal(size=(16, 16, 8)), rng.normal(size=(8, 8, 8))), 64)
        pos = rng.uniform(-4, 68, (8, 2))
        da = P.layer("step0.da")
        got = deformable_attention(Q, pos, pyr, da, 2, 4)
        want, _ = oracles.deformable_attention_oracle(Q, pos, list(pyr.levels), 64, da, 2, 4)
        worst = max(worst, np.abs(got - want).max())
    return worst < 1e-10, f"max deviation {worst:.1e} over {n} instances"


def degenerate_layer(C, level, L, J):
    """Deformable-attention weights that attend only to (level, point 0)
    with zero offsets and an identity value projection (single head)."""
    logits = np.full(L * J, -1e4)
    logits[level * J] = 0.0
    return {
        "w_off": np.zeros((C, L * J * 2)), "b_off": np.zeros(L * J * 2),
        "w_att": np.zeros((C, L * J)), "b_att": logits,
        "w_val": np.eye(C), "b_val": np.zeros(C),
        "w_out": np.zeros((C, C)), "b_out": np.zeros(C),
        "ln_g": np.ones(C), "ln_b": np.zeros(C),
    }


def check_degenerate_sampling(seed=0):
    rng = np.random.default_rng(seed)
    C, J = 8, 4
    pyr = FeaturePyramid((rng.normal(size=(16, 16, C)), rng.normal(size=(8, 8, C))), 64)
    pos = rng.uniform(0, 64, (8, 2))
    direct = extract_oskf(pyr, pos).features
    worst = 0.0
    for level in range(2):
        _, parts = deformable_attention(rng.normal(size=(8, C)), pos, pyr, degenerate_layer(C, level, 2, J),
                                        1, J, return_parts=True)
        worst = max(worst, np.abs(parts["pre"] - direct[:, level]).max())
    return worst == 0.0, f"max deviation {worst:.1e}"


def check_identity_cascade(seed=0):
    cfg = RefinerConfig(d_model=16, heads=2, points=4, levels=2, keypoints=8, steps=3, channels=8, crop_size=64)
    scene = make_scene(make_toy_object(), SceneConfig(levels=2, channels=8), seed)
    P = RefinerParams.init(cfg, np.random.default_rng(seed)).zero_pose_heads()
    kp = farthest_point_sample(scene.model, 8).keypoints
    batch = SceneBatch.from_scenes([scene.pyramid], [scene.crop], [scene.K_cam], kp)
    states = cascade_batch(batch, P)
    same = all(np.array_equal(R, states[0][0]) and np.array_equal(g, states[0][1]) for R, g in states)
    valid = all(is_rotation(R[0]) and g[0, 2] > 0 for R, g in states)
    return same and valid, f"{len(states)} states bit-identical" if same else "cascade moved"


def check_gradient():
    res = check_gradients(ToyProblem())
    return res.passed(), (f"{res.checked} entries, max rel {res.max_rel_error:.1e}, "
                          f"max abs {res.max_abs_error:.1e} ({res.seconds:.0f} s)")


def check_checkpoint(path):
    def run():
        params = load_checkpoint(path)
        cfg = params.config
        scene = make_scene(make_toy_object(), SceneConfig(crop_size=cfg.crop_size, levels=cfg.levels,
                                                          channels=cfg.channels), 0)
        kp = farthest_point_sample(scene.model, cfg.keypoints).keypoints
        batch = SceneBatch.from_scenes([scene.pyramid], [scene.crop], [scene.K_cam], kp)
        states = cascade_batch(batch, params)
        ok = all(np.all(np.isfinite(R)) and np.all(np.isfinite(g)) for R, g in states)
        return ok, f"{params.num_parameters()} parameters, {len(states)} finite states"
    return run


CHECKS = [
    ("geometry round-trips", check_geometry),
    ("fps oracle", check_fps),
    ("attention oracles", check_attention),
    ("degenerate sampling", check_degenerate_sampling),
    ("identity cascade", check_identity_cascade),
    ("gradient check", check_gradient),
]


def run_checks(checkpoint=None, checks=None):
    todo = list(checks or CHECKS)
    if checkpoint is not None:
        todo.insert(0, ("checkpoint", check_checkpoint(checkpoint)))
    results = []
    for name, fn in todo:
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except (OskfError, OSError, ValueError) as e:
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
    return results


def format_results(results):
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.ok else 'FAIL'}  {r.detail}" for r in results]
    return "\n".join(lines)
