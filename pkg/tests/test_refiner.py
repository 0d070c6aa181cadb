import numpy as np
import pytest

from oskf import refiner as rf
from oskf.errors import BadWidth, DegenerateRotation, FormatError
from oskf.geometry import PoseOffset, allo_to_ego, is_rotation
from oskf.keypoints import farthest_point_sample
from oskf.oracles import deformable_attention_oracle, layer_norm_oracle, self_attention_oracle
from oskf.pyramid import FeaturePyramid, extract_oskf
from oskf.selfcheck import degenerate_layer
from oskf.synth import SceneConfig, make_scene, make_scenes, make_toy_object

TOY = rf.RefinerConfig(d_model=16, heads=2, points=4, levels=2, keypoints=8, steps=2, channels=8, crop_size=64)


@pytest.fixture(scope="module")
def scene():
    return make_scene(make_toy_object(), SceneConfig(levels=2, channels=8), 3)


@pytest.fixture(scope="module")
def keypoints(scene):
    return farthest_point_sample(scene.model, 8)


def random_params(cfg=TOY, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    P = rf.RefinerParams.init(cfg, rng)
    for name in P.names():
        P[name] = rng.normal(0.0, scale, P[name].shape)
    return P


# ---------------------------------------------------------------- config and params

def test_config_validation():
    with pytest.raises(BadWidth):
        rf.RefinerConfig(d_model=30, heads=4)
    with pytest.raises(BadWidth):
        rf.RefinerConfig(d_model=6, heads=2)
    assert rf.RefinerConfig.from_json(TOY.to_json()) == TOY


def test_parameter_layout():
    P = rf.RefinerParams.init(TOY, np.random.default_rng(0))
    assert P["step1.da.w_off"].shape == (16, 2 * 2 * 4 * 2)
    assert P["step0.in.w"].shape == (2 * 8, 16)
    shared = rf.RefinerParams.init(rf.RefinerConfig(**{**TOY.to_json(), "share_step_weights": True}),
                                   np.random.default_rng(0))
    assert "step.da.w_att" in shared.names() and "step0.da.w_att" not in shared.names()
    assert shared.num_parameters() < P.num_parameters()


def test_init_makes_heads_noops():
    P = rf.RefinerParams.init(TOY, np.random.default_rng(0))
    for i in range(TOY.steps):
        assert not P[f"step{i}.head.w2"].any() and not P[f"step{i}.head.b2"].any()
        assert P[f"step{i}.head.w1"].any()


def test_checkpoint_round_trip(tmp_path):
    P = random_params()
    rf.save_checkpoint(tmp_path / "c.ckpt", P, extra={"note": 1})
    Q = rf.load_checkpoint(tmp_path / "c.ckpt")
    assert Q.config == P.config
    for n in P.names():
        np.testing.assert_array_equal(P[n], Q[n])


@pytest.mark.parametrize("mutate", [
    lambda raw: raw[:-1],
    lambda raw: raw + b"\0" * 8,
    lambda raw: raw[:5],
    lambda raw: raw.replace(b'"d_model": 16', b'"d_model": 17'),
    lambda raw: raw[:-8] + np.array([np.nan]).astype("<f8").tobytes(),
])
def test_corrupt_checkpoint(tmp_path, mutate):
    rf.save_checkpoint(tmp_path / "c.ckpt", random_params())
    raw = (tmp_path / "c.ckpt").read_bytes()
    (tmp_path / "c.ckpt").write_bytes(mutate(raw))
    with pytest.raises((FormatError, BadWidth)):
        rf.load_checkpoint(tmp_path / "c.ckpt")


# ---------------------------------------------------------------- coarse head

def test_coarse_zero_weights_is_degenerate(scene):
    P = rf.RefinerParams.init(TOY, np.random.default_rng(0))
    for n in P.names():
        if n.startswith("coarse."):
            P[n] = np.zeros_like(P[n])
    with pytest.raises(DegenerateRotation):
        rf.coarse_pose(scene.pyramid, P, scene.crop, scene.K_cam)


def test_coarse_crafted_weights(scene):
    P = rf.RefinerParams.init(TOY, np.random.default_rng(0))
    g = 2.5
    P["coarse.w1"] = np.zeros_like(P["coarse.w1"])
    P["coarse.w2"] = np.zeros_like(P["coarse.w2"])
    P["coarse.b2"] = np.array([1, 0, 0, 0, 1, 0, 0, 0, np.log(np.expm1(g))])
    pose, (R, site) = rf.coarse_pose(scene.pyramid, P, scene.crop, scene.K_cam)
    assert site.gamma_x == 0 and site.gamma_y == 0
    assert site.gamma_z == pytest.approx(g, rel=1e-12)
    t_z = g * scene.crop.ratio
    K = scene.K_cam
    t = t_z * np.array([(scene.crop.center[0] - K.cx) / K.fx, (scene.crop.center[1] - K.cy) / K.fy, 1.0])
    np.testing.assert_allclose(pose.translation, t, atol=1e-12)
    np.testing.assert_allclose(R, allo_to_ego(np.eye(3), t), atol=1e-12)


def test_coarse_invariant_to_spatial_permutation(scene):
    P = random_params(seed=1, scale=0.1)
    P["coarse.b2"] = np.array([1, 0, 0, 0, 1, 0, 0, 0, 1.0])
    a, _ = rf.coarse_pose(scene.pyramid, P, scene.crop, scene.K_cam)
    last = scene.pyramid.levels[-1]
    h, w, C = last.shape
    perm = np.random.default_rng(0).permutation(h * w)
    shuffled = last.reshape(h * w, C)[perm].reshape(h, w, C)
    pyr = FeaturePyramid(scene.pyramid.levels[:-1] + (shuffled,), scene.pyramid.crop_size)
    b, _ = rf.coarse_pose(pyr, P, scene.crop, scene.K_cam)
    np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-12)
    np.testing.assert_allclose(a.translation, b.translation, atol=1e-12)


# ---------------------------------------------------------------- positional embedding

def test_embedding_at_origin():
    E = rf.positional_embed(np.zeros((1, 2)), 64, 16)[0]
    m = 16 // 4
    for block in range(2):
        np.testing.assert_array_equal(E[block * 2 * m:block * 2 * m + m], 0.0)
        np.testing.assert_array_equal(E[block * 2 * m + m:(block + 1) * 2 * m], 1.0)


def test_embedding_bounded_and_injective():
    grid = np.stack(np.meshgrid(np.arange(16) * 4.0, np.arange(16) * 4.0), -1).reshape(-1, 2)
    E = rf.positional_embed(grid, 64, 32)
    for block in range(2):
        part = E[:, block * 16:(block + 1) * 16]
        assert np.all(np.linalg.norm(part, axis=1) <= np.sqrt(32 / 2) + 1e-12)
    dist = np.linalg.norm(E[:, None] - E[None], axis=-1)
    assert np.all(dist[~np.eye(len(E), dtype=bool)] > 1e-6)


def test_embedding_width_must_divide_by_four():
    with pytest.raises(BadWidth):
        rf.positional_embed(np.zeros((1, 2)), 64, 18)


# ---------------------------------------------------------------- self-attention

def test_self_attention_single_token():
    P = random_params()
    sa = P.layer("step0.sa1")
    Q = np.random.default_rng(0).normal(size=(1, 16))
    E = np.random.default_rng(1).normal(size=(1, 16))
    mixed = (Q @ sa["wv"] + sa["bv"]) @ sa["wo"] + sa["bo"]
    expected = layer_norm_oracle(Q + mixed, sa["ln_g"], sa["ln_b"])
    np.testing.assert_allclose(rf.self_attention(Q, E, sa, 2), expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_self_attention_matches_oracle(seed):
    P = random_params(seed=seed)
    rng = np.random.default_rng(seed)
    Q, E = rng.normal(size=(4, 16)), rng.normal(size=(4, 16))
    for layer in ("step0.sa1", "step1.sa2"):
        sa = P.layer(layer)
        np.testing.assert_allclose(rf.self_attention(Q, E, sa, 2), self_attention_oracle(Q, E, sa, 2), atol=1e-10)
        np.testing.assert_allclose(rf.self_attention(Q, None, sa, 2), self_attention_oracle(Q, None, sa, 2),
                                   atol=1e-10)


def test_self_attention_permutation_equivariant():
    P = random_params()
    sa = P.layer("step0.sa1")
    rng = np.random.default_rng(3)
    Q, E = rng.normal(size=(8, 16)), rng.normal(size=(8, 16))
    perm = rng.permutation(8)
    np.testing.assert_allclose(rf.self_attention(Q[perm], E[perm], sa, 2), rf.self_attention(Q, E, sa, 2)[perm],
                               atol=1e-12)


def test_self_attention_weights_normalized():
    P = random_params()
    Q = np.random.default_rng(0).normal(size=(1, 8, 16))
    _, A = rf.self_attention_t(Q, None, P.layer("step0.sa1"), 2, return_weights=True)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=-1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- deformable attention

def random_pyramid(seed, C=8):
    rng = np.random.default_rng(seed)
    return FeaturePyramid((rng.normal(size=(16, 16, C)), rng.normal(size=(8, 8, C))), 64)


@pytest.mark.parametrize("seed", range(5))
def test_deformable_matches_oracle(seed):
    P = random_params(seed=seed)
    da = P.layer("step0.da")
    rng = np.random.default_rng(seed)
    Q, pos = rng.normal(size=(8, 16)), rng.uniform(-4, 68, (8, 2))
    pyr = random_pyramid(seed)
    out, parts = rf.deformable_attention(Q, pos, pyr, da, 2, 4, return_parts=True)
    want, pre = deformable_attention_oracle(Q, pos, list(pyr.levels), 64, da, 2, 4)
    np.testing.assert_allclose(out, want, atol=1e-10)
    np.testing.assert_allclose(parts["pre"], pre, atol=1e-10)


def test_deformable_weights_normalized_over_levels_and_points():
    P = random_params(seed=4)
    _, parts = rf.deformable_attention(np.random.default_rng(0).normal(size=(8, 16)), np.full((8, 2), 32.0),
                                       random_pyramid(0), P.layer("step0.da"), 2, 4, return_parts=True)
    A = parts["weights"]  # (K, H, L, J)
    assert A.shape == (8, 2, 2, 4)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=(-2, -1)), 1.0, atol=1e-12)


@pytest.mark.parametrize("level", [0, 1])
def test_one_hot_attention_is_direct_sampling(level):
    pyr = random_pyramid(7)
    pos = np.random.default_rng(1).uniform(0, 64, (8, 2))
    _, parts = rf.deformable_attention(np.zeros((8, 8)), pos, pyr, degenerate_layer(8, level, 2, 4), 1, 4,
                                       return_parts=True)
    np.testing.assert_array_equal(parts["pre"], extract_oskf(pyr, pos).features[:, level])


def test_constant_pyramid_gives_projected_constant():
    v = np.random.default_rng(0).normal(size=8)
    pyr = FeaturePyramid((np.tile(v, (16, 16, 1)), np.tile(v, (8, 8, 1))), 64)
    P = random_params(seed=2)
    da = P.layer("step0.da")
    da["w_off"] = da["w_off"] * 1e-3  # keep every sample inside the maps
    da["b_off"] = da["b_off"] * 1e-3
    pos = np.random.default_rng(2).uniform(20, 44, (8, 2))
    _, parts = rf.deformable_attention(np.random.default_rng(3).normal(size=(8, 16)), pos, pyr, da, 2, 4,
                                       return_parts=True)
    np.testing.assert_allclose(parts["pre"], np.tile(v @ da["w_val"] + da["b_val"], (8, 1)), atol=1e-12)


# ---------------------------------------------------------------- pose head and steps

def test_zero_head_is_identity_offset():
    P = rf.RefinerParams.init(TOY, np.random.default_rng(0))
    off = rf.pose_head(np.random.default_rng(1).normal(size=(8, 16)), P.layer("step0.head"))
    np.testing.assert_array_equal(off.delta_rotation.as_array(), PoseOffset.identity().delta_rotation.as_array())
    np.testing.assert_array_equal(off.delta_gamma, 0.0)


def test_pose_head_oracle_and_pooling_symmetry():
    P = random_params(seed=5)
    head = P.layer("step0.head")
    Q = np.random.default_rng(2).normal(size=(8, 16))
    pooled = Q.mean(axis=0)
    h = np.maximum(pooled @ head["w1"] + head["b1"], 0)
    expected = h @ head["w2"] + head["b2"] + rf.IDENTITY_OFFSET
    got = rf.pose_head(Q, head)
    np.testing.assert_allclose(np.r_[got.delta_rotation.as_array(), got.delta_gamma], expected, atol=1e-12)
    shuffled = rf.pose_head(Q[::-1], head)
    np.testing.assert_allclose(shuffled.delta_gamma, got.delta_gamma, atol=1e-12)


def test_zero_head_step_keeps_state(scene, keypoints):
    P = random_params(seed=6).zero_pose_heads()
    state = (scene.gt_state[0], scene.gt_state[1])
    new, _, _ = rf.refine_step(state, P["query0"], scene.pyramid, keypoints, scene.crop, scene.K_cam,
                               P.layer("step0"), TOY)
    np.testing.assert_array_equal(new[0], state[0])
    assert new[1] == state[1]


def test_q_next_is_deformable_output(scene, keypoints):
    P = random_params(seed=7, scale=0.1)
    layer = P.layer("step0")
    R, site = scene.gt_state
    new, Q_next, _ = rf.refine_step((R, site), P["query0"], scene.pyramid, keypoints, scene.crop, scene.K_cam,
                                    layer, TOY)
    # rebuild the block from its public pieces
    batch = rf._batch1(scene.pyramid, scene.crop, scene.K_cam, keypoints)
    t = rf.decode_translation(site.as_array()[None], batch)
    pos = rf.keypoints_to_crop(R[None], t, batch)[0]
    E = rf.positional_embed(pos, 64, 16)
    Z = extract_oskf(scene.pyramid, pos).features.reshape(8, -1)
    Q_in = P["query0"] + Z @ layer["in.w"] + layer["in.b"]
    Q_S = rf.self_attention(Q_in, E, rf.sublayer(layer, "sa1"), 2)
    Z_t = rf.deformable_attention(Q_S, pos, scene.pyramid, rf.sublayer(layer, "da"), 2, 4)
    assert Q_next.shape == (8, 16)
    np.testing.assert_allclose(Q_next, Z_t, atol=1e-12)


# ---------------------------------------------------------------- cascade

def test_cascade_lengths(scene, keypoints):
    for n in (0, 1, 3):
        cfg = rf.RefinerConfig(**{**TOY.to_json(), "steps": n})
        P = rf.RefinerParams.init(cfg, np.random.default_rng(0), gamma_prior=scene.gt_state[1].as_array())
        poses = rf.cascade(scene.pyramid, keypoints, scene.crop, scene.K_cam, P)
        assert len(poses) == n + 1


def test_identity_cascade_bit_identical(scene, keypoints):
    P = random_params(seed=8, scale=0.05).zero_pose_heads()
    P["coarse.b2"] = np.r_[1, 0, 0, 0, 1, 0, scene.gt_state[1].as_array()]
    poses = rf.cascade(scene.pyramid, keypoints, scene.crop, scene.K_cam, P)
    for p in poses[1:]:
        np.testing.assert_array_equal(p.rotation, poses[0].rotation)
        np.testing.assert_array_equal(p.translation, poses[0].translation)


def test_cascade_invariants_over_random_draws(scene, keypoints):
    for seed in range(100):
        P = random_params(TOY, seed=seed, scale=0.05)
        P["coarse.b2"] = np.r_[1, 0, 0, 0, 1, 0, 0, 0, 2.0]
        for pose, (R, site) in rf.cascade_states(scene.pyramid, keypoints, scene.crop, scene.K_cam, P):
            assert is_rotation(R, 1e-9) and pose.is_valid()
            assert site.gamma_z > 0


def test_batch_matches_single_scenes():
    scenes = make_scenes(make_toy_object(), SceneConfig(levels=2, channels=8), 3, 11)
    kp = farthest_point_sample(scenes[0].model, 8)
    P = random_params(seed=9, scale=0.05)
    P["coarse.b2"] = np.r_[1, 0, 0, 0, 1, 0, 0, 0, 2.0]
    batch = rf.SceneBatch.from_scenes([s.pyramid for s in scenes], [s.crop for s in scenes],
                                      [s.K_cam for s in scenes], kp.keypoints)
    states = rf.cascade_batch(batch, P)
    for i, s in enumerate(scenes):
        single = rf.cascade_states(s.pyramid, kp, s.crop, s.K_cam, P)
        for (R, g), (_, (R1, site)) in zip(states, single):
            np.testing.assert_allclose(R[i], R1, atol=1e-12)
            np.testing.assert_allclose(g[i], site.as_array(), atol=1e-12)


def test_gradients_reach_every_parameter(scene, keypoints):
    P = random_params(seed=10, scale=0.1)
    P["coarse.b2"] = np.r_[1, 0, 0, 0, 1, 0, scene.gt_state[1].as_array()]
    batch = rf._batch1(scene.pyramid, scene.crop, scene.K_cam, keypoints)
    leaves = P.tracked()
    states = rf.cascade_t(batch, leaves, TOY)
    total = None
    for R, g in states:
        term = (R * R.data).sum() + g.sum()
        total = term if total is None else total + term
    total.backward()
    assert all(t.grad is not None for t in leaves.values())
