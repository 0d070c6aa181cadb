"""Coarse pose head, OSKF pose transformer blocks and the refinement cascade.

Everything here is written against :mod:`oskf.autograd` so the same code
path gives inference results and parameter gradients. Internals carry a
leading batch axis ``B`` (one entry per scene); the public single-scene
functions wrap them with ``B = 1`` and return numpy values.

Shapes used throughout: ``K`` keypoints, ``d`` model width, ``H`` heads,
``L`` pyramid levels, ``J`` sampling points per head and level, ``C``
pyramid channels.
"""

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .errors import BadWidth, BehindCamera, DegenerateDirection, DegenerateRotation, FormatError
from .geometry import TOL, IDENTITY_6D, CameraIntrinsics, Pose, PoseOffset, SiteTranslation, back_project

IDENTITY_OFFSET = np.concatenate([IDENTITY_6D, np.zeros(3)])


@dataclass(frozen=True)
class RefinerConfig:
    d_model: int = 32
    heads: int = 8
    points: int = 4
    levels: int = 4
    keypoints: int = 64
    steps: int = 3
    channels: int = 32
    crop_size: int = 64
    mlp_hidden: int = 0  # 0 -> d_model
    share_step_weights: bool = False

    def __post_init__(self):
        if self.d_model % self.heads:
            raise BadWidth(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.d_model % 4:
            raise BadWidth(f"d_model={self.d_model} not divisible by 4")
        for name in ("heads", "points", "levels", "keypoints", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @property
    def hidden(self):
        return self.mlp_hidden or self.d_model

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


# ---------------------------------------------------------------- parameters

def _shapes(cfg):
    d, C, L, H, J, hid = cfg.d_model, cfg.channels, cfg.levels, cfg.heads, cfg.points, cfg.hidden
    out = [
        ("coarse.w1", (C, hid)), ("coarse.b1", (hid,)),
        ("coarse.w2", (hid, 9)), ("coarse.b2", (9,)),
        ("query0", (cfg.keypoints, d)),
    ]
    n_sets = 1 if cfg.share_step_weights else cfg.steps
    for i in range(n_sets):
        p = step_prefix(cfg, i)
        out += [(f"{p}.in.w", (L * C, d)), (f"{p}.in.b", (d,))]
        for sa in ("sa1", "sa2"):
            for m in ("q", "k", "v", "o"):
                out += [(f"{p}.{sa}.w{m}", (d, d)), (f"{p}.{sa}.b{m}", (d,))]
            out += [(f"{p}.{sa}.ln_g", (d,)), (f"{p}.{sa}.ln_b", (d,))]
        out += [
            (f"{p}.da.w_off", (d, H * L * J * 2)), (f"{p}.da.b_off", (H * L * J * 2,)),
            (f"{p}.da.w_att", (d, H * L * J)), (f"{p}.da.b_att", (H * L * J,)),
            (f"{p}.da.w_val", (C, d)), (f"{p}.da.b_val", (d,)),
            (f"{p}.da.w_out", (d, d)), (f"{p}.da.b_out", (d,)),
            (f"{p}.da.ln_g", (d,)), (f"{p}.da.ln_b", (d,)),
            (f"{p}.head.w1", (d, hid)), (f"{p}.head.b1", (hid,)),
            (f"{p}.head.w2", (hid, 9)), (f"{p}.head.b2", (9,)),
        ]
    return out


def step_prefix(cfg, i):
    return "step" if cfg.share_step_weights else f"step{i}"


def _softplus_inv(y):
    return float(y + np.log(-np.expm1(-y)))


class RefinerParams:
    """Named float64 arrays holding every learnable parameter."""

    def __init__(self, config, tensors):
        self.config = config
        expected = _shapes(config)
        self.tensors = OrderedDict()
        for name, shape in expected:
            if name not in tensors:
                raise FormatError(f"missing parameter {name}")
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise FormatError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            self.tensors[name] = arr

    @classmethod
    def init(cls, config, rng, gamma_prior=(0.0, 0.0, 1.0)):
        """Random init; pose-head output layers start at zero so refiners
        are no-ops (the hidden layer stays random so gradients reach it).

        ``gamma_prior`` seeds the coarse translation biases.
        """
        t = OrderedDict()
        for name, shape in _shapes(config):
            leaf = name.rsplit(".", 1)[-1]
            if name == "query0":
                t[name] = rng.normal(0.0, 1.0, shape)
            elif ".head.w2" in name or ".head.b" in name:
                t[name] = np.zeros(shape)
            elif leaf == "ln_g":
                t[name] = np.ones(shape)
            elif leaf.startswith("w"):
                bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                t[name] = rng.uniform(-bound, bound, shape)
            else:
                t[name] = np.zeros(shape)
        for i in range(1 if config.share_step_weights else config.steps):
            p = step_prefix(config, i)
            t[f"{p}.da.w_off"] *= 0.1
        b2 = t["coarse.b2"]
        b2[:6] = IDENTITY_6D
        b2[6], b2[7] = gamma_prior[0], gamma_prior[1]
        b2[8] = _softplus_inv(max(gamma_prior[2], 1e-3))
        t["coarse.w2"] *= 0.1
        return cls(config, t)

    def copy(self):
        return RefinerParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def names(self):
        return list(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = np.asarray(value, dtype=np.float64).reshape(self.tensors[name].shape)

    def num_parameters(self):
        return sum(v.size for v in self.tensors.values())

    def zero_pose_heads(self):
        for name in self.tensors:
            if ".head." in name:
                self.tensors[name] = np.zeros_like(self.tensors[name])
        return self

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def tracked(self):
        """Name -> Tensor leaves with gradients enabled."""
        return OrderedDict((k, ag.Tensor(v, requires_grad=True)) for k, v in self.tensors.items())

    def layer(self, prefix):
        return sublayer(self.tensors, prefix)


def sublayer(P, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in P.items() if k.startswith(prefix + ".")}


def split_layers(P):
    """Group a flat parameter dict by its first name component."""
    out = {}
    for k, v in P.items():
        head, _, rest = k.partition(".")
        out.setdefault(head, {})[rest] = v
    return out


# ---------------------------------------------------------------- checkpoint
#
# One JSON header line (config echo + name/shape table) terminated by "\n",
# then every tensor as little-endian float64 in table order.

def save_checkpoint(path, params, extra=None):
    header = {
        "config": params.config.to_json(),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for v in params.tensors.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("checkpoint has no header line")
    try:
        header = json.loads(raw[:nl])
        config = RefinerConfig.from_json(header["config"])
        table = [(e["name"], tuple(e["shape"])) for e in header["tensors"]]
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as e:
        raise FormatError(f"bad checkpoint header: {e}") from None
    payload = raw[nl + 1:]
    need = sum(int(np.prod(s)) for _, s in table) * 8
    if len(payload) != need:
        raise FormatError(f"checkpoint payload is {len(payload)} bytes, expected {need}")
    tensors, off = {}, 0
    for name, shape in table:
        n = int(np.prod(shape))
        tensors[name] = np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += n * 8
    params = RefinerParams(config, tensors)
    if not params.all_finite():
        raise FormatError("checkpoint contains non-finite values")
    return params


# ---------------------------------------------------------------- batches

@dataclass
class SceneBatch:
    """Per-scene inputs stacked along a leading batch axis."""

    levels: list  # L arrays of shape (B, h, w, C)
    crop_size: float
    centers: np.ndarray  # (B, 2) crop centers, image pixels
    s_bbox: np.ndarray  # (B,)
    s_image: np.ndarray  # (B,)
    intrinsics: np.ndarray  # (B, 4): fx, fy, cx, cy
    keypoints: np.ndarray  # (K, 3) object frame

    @classmethod
    def from_scenes(cls, pyramids, crops, intrinsics, keypoints):
        crop_size = pyramids[0].crop_size
        L = pyramids[0].num_levels
        levels = [np.stack([p.levels[l] for p in pyramids]) for l in range(L)]
        return cls(
            levels=levels,
            crop_size=float(crop_size),
            centers=np.stack([c.center for c in crops]),
            s_bbox=np.array([c.s_bbox for c in crops], dtype=np.float64),
            s_image=np.array([c.s_image for c in crops], dtype=np.float64),
            intrinsics=np.stack([k.as_array() for k in intrinsics]),
            keypoints=np.asarray(keypoints, dtype=np.float64).reshape(-1, 3),
        )

    @property
    def size(self):
        return len(self.centers)

    def subset(self, idx):
        return SceneBatch(
            [m[idx] for m in self.levels], self.crop_size, self.centers[idx], self.s_bbox[idx],
            self.s_image[idx], self.intrinsics[idx], self.keypoints,
        )


# ---------------------------------------------------------------- pose algebra

def rotation_from_6d(v, tol=TOL):
    """Batched differentiable 6D -> rotation, v: (..., 6) -> (..., 3, 3)."""
    v = ag.as_tensor(v)
    r1, r2 = v[..., 0:3], v[..., 3:6]
    n1 = ag.norm(r1, keepdims=True)
    if np.any(ag.data_of(n1) <= tol.degenerate):
        raise DegenerateRotation(f"|r1| <= {tol.degenerate}")
    R1 = r1 / n1
    R3 = ag.cross(R1, r2)
    n3 = ag.norm(R3, keepdims=True)
    # |r1 x r2| = |R1 x r2| * |r1|
    if np.any(ag.data_of(n3) * ag.data_of(n1) <= tol.degenerate):
        raise DegenerateRotation(f"|r1 x r2| <= {tol.degenerate}")
    R3 = R3 / n3
    R2 = ag.cross(R3, R1)
    return ag.stack([R1, R2, R3], axis=-1)


def decode_translation(gamma, batch):
    """Site translation (B, 3) -> metric translation (B, 3)."""
    gamma = ag.as_tensor(gamma)
    fx, fy, cx, cy = (batch.intrinsics[:, i] for i in range(4))
    ratio = batch.s_bbox / batch.s_image
    ox = batch.centers[:, 0] + gamma[:, 0] * batch.s_bbox
    oy = batch.centers[:, 1] + gamma[:, 1] * batch.s_bbox
    tz = gamma[:, 2] * ratio
    return ag.stack([tz * ((ox - cx) / fx), tz * ((oy - cy) / fy), tz], axis=-1)


def view_rotation_t(t, tol=TOL):
    """Batched R_view: minimal rotation taking (0,0,1) to t/|t|."""
    t = ag.as_tensor(t)
    d = t / ag.norm(t, keepdims=True)
    c = d[:, 2]
    if np.any(1.0 + ag.data_of(c) <= tol.direction):
        raise DegenerateDirection("viewing ray antiparallel to the optical axis")
    vx, vy = -d[:, 1], d[:, 0]
    zero = ag.Tensor(np.zeros(len(ag.data_of(c))))
    # [v]x for v = (vx, vy, 0)
    V = ag.stack([
        ag.stack([zero, zero, vy], axis=-1),
        ag.stack([zero, zero, -vx], axis=-1),
        ag.stack([-vy, vx, zero], axis=-1),
    ], axis=1)
    scale = (1.0 / (1.0 + c)).reshape(-1, 1, 1)
    return np.eye(3) + V + (V @ V) * scale


def keypoints_to_crop(R, t, batch, tol=TOL):
    """Project object keypoints; returns crop-pixel positions (B, K, 2)."""
    S = batch.keypoints
    X = ag.matmul(ag.Tensor(S), R.swapaxes(-1, -2)) + t.reshape(-1, 1, 3)
    z = X[..., 2]
    bad = np.argwhere(ag.data_of(z) <= tol.near_plane)
    if len(bad):
        b, k = map(int, bad[0])
        raise BehindCamera(f"keypoint {k} of scene {b} has depth {ag.data_of(z)[b, k]}", index=k)
    fx, fy, cx, cy = (batch.intrinsics[:, i:i + 1] for i in range(4))
    u = X[..., 0] / z * fx + cx
    v = X[..., 1] / z * fy + cy
    s = batch.crop_size
    scale = (s / batch.s_bbox)[:, None]
    pu = (u - batch.centers[:, 0:1]) * scale + s / 2.0
    pv = (v - batch.centers[:, 1:2]) * scale + s / 2.0
    return ag.stack([pu, pv], axis=-1)


def offset_update(R, gamma, raw, tol=TOL):
    """Apply raw 9-vector offsets (B, 9) to the state (R, gamma)."""
    dR = rotation_from_6d(raw[:, 0:6], tol)
    R_new = dR @ R
    gxy = gamma[:, 0:2] + raw[:, 6:8]
    gz = gamma[:, 2:3] * (1.0 + ag.tanh(raw[:, 8:9]))
    return R_new, ag.concatenate([gxy, gz], axis=-1)


# ---------------------------------------------------------------- layers

def mlp(x, P):
    h = ag.relu(ag.linear(x, P["w1"], P["b1"]))
    return ag.linear(h, P["w2"], P["b2"])


def pos_embed_t(positions, crop_size, d_model):
    """Sinusoidal embedding of crop-pixel positions (..., 2) -> (..., d)."""
    if d_model % 4:
        raise BadWidth(f"d_model={d_model} not divisible by 4")
    m = d_model // 4
    freqs = 2.0 * np.pi * 10000.0 ** (-4.0 * np.arange(m) / d_model)
    u = ag.as_tensor(positions) * (1.0 / crop_size)
    blocks = []
    for axis in (0, 1):
        a = u[..., axis:axis + 1] * freqs
        blocks += [ag.sin(a), ag.cos(a)]
    return ag.concatenate(blocks, axis=-1)


def _split_heads(x, H):
    B, K, d = x.shape
    return x.reshape(B, K, H, d // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, K, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, K, H * dh)


def self_attention_t(Q, E, P, heads, return_weights=False):
    """Multi-head attention with query = key = Q + E and value = Q,
    followed by residual addition and layer norm. Q, E: (B, K, d)."""
    Q = ag.as_tensor(Q)
    QE = Q if E is None else Q + E
    d = Q.shape[-1]
    q = _split_heads(ag.linear(QE, P["wq"], P["bq"]), heads)
    k = _split_heads(ag.linear(QE, P["wk"], P["bk"]), heads)
    v = _split_heads(ag.linear(Q, P["wv"], P["bv"]), heads)
    A = ag.softmax((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d // heads)), axis=-1)
    o = ag.linear(_merge_heads(A @ v), P["wo"], P["bo"])
    out = ag.layer_norm(Q + o, P["ln_g"], P["ln_b"])
    return (out, A) if return_weights else out


def deformable_attention_t(Q_S, positions, levels, crop_size, P, heads, points, return_parts=False):
    """Multi-scale deformable attention around keypoint positions.

    Offsets are predicted in crop-normalized units and scaled to pixels;
    attention weights are normalized over all L*J slots of a head.
    """
    Q_S = ag.as_tensor(Q_S)
    B, K, d = Q_S.shape
    L, H, J = len(levels), heads, points
    C = levels[0].shape[-1]
    off = ag.linear(Q_S, P["w_off"], P["b_off"]).reshape(B, K, H, L, J, 2) * crop_size
    att = ag.softmax(ag.linear(Q_S, P["w_att"], P["b_att"]).reshape(B, K, H, L * J), axis=-1)
    att = att.reshape(B, K, H, L, J)
    loc = ag.as_tensor(positions).reshape(B, K, 1, 1, 1, 2) + off  # (B, K, H, L, J, 2)

    agg = None
    for l, m in enumerate(levels):
        h, w = m.shape[1:3]
        x = loc[:, :, :, l, :, 0] * (w / crop_size) - 0.5
        y = loc[:, :, :, l, :, 1] * (h / crop_size) - 0.5
        samp = ag.grid_sample(m, x, y)  # (B, K, H, J, C)
        part = (samp * att[:, :, :, l, :].reshape(B, K, H, J, 1)).sum(axis=3)
        agg = part if agg is None else agg + part  # (B, K, H, C)

    # per-head value projection; the weighted sum commutes with it
    Wh = ag.as_tensor(P["w_val"]).reshape(C, H, d // H).transpose(1, 0, 2)  # (H, C, dh)
    heads_out = agg.transpose(0, 2, 1, 3) @ Wh  # (B, H, K, dh)
    pre = _merge_heads(heads_out) + P["b_val"]
    out = ag.layer_norm(Q_S + ag.linear(pre, P["w_out"], P["b_out"]), P["ln_g"], P["ln_b"])
    if return_parts:
        return out, {"pre": pre, "weights": att, "locations": loc}
    return out


def sample_oskf_t(levels, positions, crop_size):
    """OSKFs at the keypoint positions: (B, K, L, C)."""
    feats = []
    for m in levels:
        h, w = m.shape[1:3]
        x = positions[..., 0] * (w / crop_size) - 0.5
        y = positions[..., 1] * (h / crop_size) - 0.5
        feats.append(ag.grid_sample(m, x, y))
    return ag.stack(feats, axis=2)


def pose_head_t(Q_P, P):
    """Mean-pool keypoints -> MLP -> raw offset (B, 9), identity at zero."""
    return mlp(ag.as_tensor(Q_P).mean(axis=1), P) + IDENTITY_OFFSET


def coarse_t(batch, P, tol=TOL):
    """Coarse state from the globally pooled last pyramid level."""
    pooled = batch.levels[-1].mean(axis=(1, 2))  # (B, C)
    raw = mlp(ag.Tensor(pooled), P)
    R_allo = rotation_from_6d(raw[:, 0:6], tol)
    gamma = ag.concatenate([raw[:, 6:8], ag.softplus(raw[:, 8:9])], axis=-1)
    t = decode_translation(gamma, batch)
    R = view_rotation_t(t, tol) @ R_allo
    return R, gamma


def refine_step_t(R, gamma, Q_prev, batch, P, cfg, tol=TOL):
    """One OSKF-PT block. Returns (R, gamma, Q_next, raw_offset, extras)."""
    t = decode_translation(gamma, batch)
    pos = keypoints_to_crop(R, t, batch, tol)
    E = pos_embed_t(pos, batch.crop_size, cfg.d_model)
    B, K = pos.shape[:2]
    Z = sample_oskf_t(batch.levels, pos, batch.crop_size).reshape(B, K, -1)
    Q_in = ag.as_tensor(Q_prev) + ag.linear(Z, P["in.w"], P["in.b"])
    Q_S = self_attention_t(Q_in, E, sublayer(P, "sa1"), cfg.heads)
    Z_t = deformable_attention_t(Q_S, pos, batch.levels, batch.crop_size, sublayer(P, "da"),
                                 cfg.heads, cfg.points)
    Q_P = self_attention_t(Z_t, None, sublayer(P, "sa2"), cfg.heads)
    raw = pose_head_t(Q_P, sublayer(P, "head"))
    R_new, gamma_new = offset_update(R, gamma, raw, tol)
    return R_new, gamma_new, Z_t, raw, {"positions": pos, "Q_S": Q_S, "Q_P": Q_P}


def cascade_t(batch, P, cfg, tol=TOL):
    """All N+1 states [(R, gamma), ...] for a batch, as Tensors."""
    groups = split_layers(P)
    R, gamma = coarse_t(batch, groups["coarse"], tol)
    states = [(R, gamma)]
    B = batch.size
    Q = ag.as_tensor(P["query0"]).reshape(1, cfg.keypoints, cfg.d_model) + np.zeros((B, 1, 1))
    for i in range(cfg.steps):
        R, gamma, Q, _, _ = refine_step_t(R, gamma, Q, batch, groups[step_prefix(cfg, i)], cfg, tol)
        states.append((R, gamma))
    return states


# ---------------------------------------------------------------- public API

def _batch1(pyramid, crop, K_cam, keypoints=None):
    kp = np.zeros((1, 3)) if keypoints is None else getattr(keypoints, "keypoints", keypoints)
    return SceneBatch.from_scenes([pyramid], [crop], [K_cam], kp)


def _state_out(R, gamma, batch, i=0):
    Rn = np.array(ag.data_of(R)[i])
    g = SiteTranslation.from_array(ag.data_of(gamma)[i])
    O = batch.centers[i] + ag.data_of(gamma)[i, :2] * batch.s_bbox[i]
    tz = ag.data_of(gamma)[i, 2] * batch.s_bbox[i] / batch.s_image[i]
    fx, fy, cx, cy = batch.intrinsics[i]
    t = back_project(O, tz, CameraIntrinsics(fx, fy, cx, cy))
    return Pose(Rn, t), (Rn, g)


def coarse_pose(pyramid, params, crop, K_cam):
    """Returns ``(Pose, (R, SiteTranslation))`` for one scene."""
    crop.validate()
    batch = _batch1(pyramid, crop, K_cam)
    R, gamma = coarse_t(batch, params.layer("coarse"))
    return _state_out(R, gamma, batch)


def positional_embed(position_px, crop_size, d_model):
    size = getattr(crop_size, "s_bbox", crop_size)
    return ag.data_of(pos_embed_t(np.asarray(position_px, dtype=np.float64), size, d_model))


def self_attention(Q_in, E, layer_params, heads):
    """Single-scene self-attention; Q_in and E are (K, d) arrays."""
    Q = np.asarray(Q_in, dtype=np.float64)[None]
    Eb = None if E is None else np.asarray(E, dtype=np.float64)[None]
    return ag.data_of(self_attention_t(Q, Eb, layer_params, heads))[0]


def deformable_attention(Q_S, positions, pyramid, layer_params, heads, points, return_parts=False):
    """Single-scene deformable attention; returns Z~ as a (K, d) array."""
    levels = [m[None] for m in pyramid.levels]
    pos = np.asarray(positions, dtype=np.float64)[None]
    res = deformable_attention_t(np.asarray(Q_S, dtype=np.float64)[None], pos, levels,
                                 pyramid.crop_size, layer_params, heads, points, return_parts)
    if return_parts:
        out, parts = res
        return ag.data_of(out)[0], {k: ag.data_of(v)[0] for k, v in parts.items()}
    return ag.data_of(res)[0]


def pose_head(Q_P, head_params):
    raw = ag.data_of(pose_head_t(np.asarray(Q_P, dtype=np.float64)[None], head_params))[0]
    return PoseOffset.from_array(raw)


def refine_step(state, Q_prev, pyramid, keypoints, crop, K_cam, step_params, config):
    """One refinement step for one scene.

    ``state`` is ``(R, SiteTranslation)``; returns ``(new_state, Q_next,
    PoseOffset)`` with ``Q_next`` the deformable-attention output.
    """
    crop.validate()
    batch = _batch1(pyramid, crop, K_cam, keypoints)
    R0, site = state
    R = ag.Tensor(np.asarray(R0, dtype=np.float64)[None])
    gamma = ag.Tensor(site.as_array()[None])
    R, gamma, Q, raw, _ = refine_step_t(R, gamma, np.asarray(Q_prev, dtype=np.float64)[None],
                                        batch, step_params, config)
    _, new_state = _state_out(R, gamma, batch)
    return new_state, ag.data_of(Q)[0], PoseOffset.from_array(ag.data_of(raw)[0])


def cascade(pyramid, keypoints, crop, K_cam, params, config=None):
    """Coarse pose followed by every refinement: N+1 metric poses."""
    return [pose for pose, _ in cascade_states(pyramid, keypoints, crop, K_cam, params, config)]


def cascade_states(pyramid, keypoints, crop, K_cam, params, config=None):
    config = config or params.config
    crop.validate()
    batch = _batch1(pyramid, crop, K_cam, keypoints)
    states = cascade_t(batch, params.tensors, config)
    return [_state_out(R, g, batch) for R, g in states]


def cascade_batch(batch, params, config=None):
    """Numpy ``(R (B,3,3), gamma (B,3))`` per cascade iteration."""
    config = config or params.config
    return [(ag.data_of(R), ag.data_of(g)) for R, g in cascade_t(batch, params.tensors, config)]
