"""6D pose evaluation metrics: ADD, ADD-S, AUC and n-degree n-cm accuracy."""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyList, KeyMismatch
from .geometry import Pose, geodesic_angle
from .keypoints import ObjectModel, read_ply

AUC_MAX_THRESHOLD = 0.10  # meters
ADD_THRESHOLD_FRAC = 0.1


def _transform(pose, points):
    return np.asarray(points, dtype=np.float64) @ pose.rotation.T + pose.translation


def add_distance(pose_pred, pose_gt, points):
    diff = _transform(pose_pred, points) - _transform(pose_gt, points)
    return float(np.linalg.norm(diff, axis=1).mean())


def _nearest_brute(src, dst, block=512):
    out = np.empty(len(src))
    for i in range(0, len(src), block):
        d = np.linalg.norm(src[i:i + block, None, :] - dst[None, :, :], axis=-1)
        out[i:i + block] = d.min(axis=1)
    return out


def _nearest_tree(src, dst):
    """KD-tree candidates, re-scored with the brute-force formula so the
    result is bit-identical to :func:`_nearest_brute`."""
    tree = cKDTree(dst)
    approx, _ = tree.query(src)
    out = np.empty(len(src))
    for i, (p, r) in enumerate(zip(src, approx)):
        cand = tree.query_ball_point(p, r * (1 + 1e-9) + 1e-12)
        out[i] = np.linalg.norm(p[None, :] - dst[cand], axis=-1).min()
    return out


def adds_distance(pose_pred, pose_gt, points, use_index=None):
    """Mean distance from each predicted point to its closest GT point.

    ``use_index`` forces the KD-tree path on (True) or off (False); by
    default it is used above 5000 points.
    """
    src = _transform(pose_pred, points)
    dst = _transform(pose_gt, points)
    if use_index is None:
        use_index = len(dst) > 5000
    d = _nearest_tree(src, dst) if use_index else _nearest_brute(src, dst)
    return float(d.mean())


def add_s_accuracy(distances, diameter, threshold_frac=ADD_THRESHOLD_FRAC):
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyList("no distances to score")
    return float(np.mean(d < threshold_frac * diameter))


def auc_add(distances, max_threshold=AUC_MAX_THRESHOLD):
    """Exact area under accuracy(threshold) on [0, max], normalized.

    Accuracy at threshold ``x`` counts distances strictly below ``x``, so
    each distance contributes ``max - d`` when ``d < max`` and nothing
    otherwise.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyList("no distances to score")
    return float(np.clip(max_threshold - d, 0.0, None).sum() / (d.size * max_threshold))


def rotation_error_deg(R_pred, R_gt, symmetries=None):
    syms = symmetries if symmetries else [np.eye(3)]
    return min(np.degrees(geodesic_angle(R_pred, np.asarray(R_gt) @ S)) for S in syms)


def ndeg_ncm(pose_pred, pose_gt, symmetries, n_deg, n_cm):
    ang = rotation_error_deg(pose_pred.rotation, pose_gt.rotation, symmetries)
    dt = np.linalg.norm(pose_pred.translation - pose_gt.translation)
    return bool(ang <= n_deg and dt <= n_cm / 100.0)


# ---------------------------------------------------------------- reports

@dataclass
class ObjectMetrics:
    obj: int
    count: int
    add_accuracy: float
    auc_add_s: float
    acc_2deg2cm: float
    acc_5deg5cm: float
    symmetric: bool = False

    def to_json(self):
        return {
            "obj": self.obj,
            "count": self.count,
            "symmetric": self.symmetric,
            "add_accuracy": self.add_accuracy,
            "auc_add_s": self.auc_add_s,
            "acc_2deg2cm": self.acc_2deg2cm,
            "acc_5deg5cm": self.acc_5deg5cm,
        }


@dataclass
class MetricReport:
    objects: list = field(default_factory=list)

    @property
    def count(self):
        return sum(o.count for o in self.objects)

    def aggregate(self, name):
        n = self.count
        return sum(getattr(o, name) * o.count for o in self.objects) / n if n else 0.0

    def to_json(self):
        names = ("add_accuracy", "auc_add_s", "acc_2deg2cm", "acc_5deg5cm")
        return {
            "objects": [o.to_json() for o in self.objects],
            "aggregate": {"count": self.count, **{k: self.aggregate(k) for k in names}},
        }

    def table(self):
        head = f"{'obj':>6} {'n':>6} {'ADD(-S)':>8} {'AUC':>8} {'2deg2cm':>8} {'5deg5cm':>8}"
        rows = [head, "-" * len(head)]
        for o in self.objects:
            name = f"{o.obj}{'*' if o.symmetric else ''}"
            rows.append(f"{name:>6} {o.count:>6d} {100 * o.add_accuracy:8.2f} {100 * o.auc_add_s:8.2f} "
                        f"{100 * o.acc_2deg2cm:8.2f} {100 * o.acc_5deg5cm:8.2f}")
        rows.append("-" * len(head))
        rows.append(f"{'all':>6} {self.count:>6d} {100 * self.aggregate('add_accuracy'):8.2f} "
                    f"{100 * self.aggregate('auc_add_s'):8.2f} {100 * self.aggregate('acc_2deg2cm'):8.2f} "
                    f"{100 * self.aggregate('acc_5deg5cm'):8.2f}")
        return "\n".join(rows)


def evaluate_instances(pairs, models):
    """Score ``{obj: [(pose_pred, pose_gt), ...]}`` against ``{obj: ObjectModel}``."""
    report = MetricReport()
    for obj in sorted(pairs):
        m = models[obj]
        dist = []
        ok2 = ok5 = 0
        for pred, gt in pairs[obj]:
            if m.symmetric:
                dist.append(adds_distance(pred, gt, m.points))
            else:
                dist.append(add_distance(pred, gt, m.points))
            syms = m.symmetries if m.symmetric else None
            ok2 += ndeg_ncm(pred, gt, syms, 2, 2)
            ok5 += ndeg_ncm(pred, gt, syms, 5, 5)
        n = len(dist)
        report.objects.append(ObjectMetrics(
            obj=obj,
            count=n,
            add_accuracy=add_s_accuracy(dist, m.diameter),
            auc_add_s=auc_add(dist),
            acc_2deg2cm=ok2 / n,
            acc_5deg5cm=ok5 / n,
            symmetric=m.symmetric,
        ))
    return report


# ---------------------------------------------------------------- file I/O

def read_pose_records(path):
    """JSON-lines records keyed by (scene, im, obj)."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (int(rec["scene"]), int(rec["im"]), int(rec["obj"]))
                pose = Pose(np.asarray(rec["R"], dtype=np.float64).reshape(3, 3), rec["t"])
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad pose record ({e})") from None
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key}")
            out[key] = pose
    return out


def write_pose_records(path, records):
    with open(path, "w") as f:
        for (scene, im, obj), pose in sorted(records.items()):
            rec = {"scene": scene, "im": im, "obj": obj,
                   "R": pose.rotation.reshape(-1).tolist(), "t": pose.translation.tolist()}
            f.write(json.dumps(rec) + "\n")


def read_models(path):
    """Models manifest: a JSON list of {"obj", "ply", "diameter", "symmetric", "symmetries"}."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        entries = json.load(f)
    if isinstance(entries, dict):
        entries = [entries]
    models = {}
    for e in entries:
        ply = e["ply"] if os.path.isabs(e["ply"]) else os.path.join(base, e["ply"])
        syms = [np.asarray(s, dtype=np.float64).reshape(3, 3) for s in e.get("symmetries", [])]
        models[int(e["obj"])] = ObjectModel(
            read_ply(ply), diameter=e.get("diameter"), symmetries=syms, symmetric=bool(e.get("symmetric", False)))
    return models


def evaluate(pred_path, gt_path, models):
    """Join predictions to ground truth and score every object."""
    if isinstance(models, (str, os.PathLike)):
        models = read_models(models)
    pred = read_pose_records(pred_path)
    gt = read_pose_records(gt_path)
    missing_pred = sorted(set(gt) - set(pred))
    missing_gt = sorted(set(pred) - set(gt))
    unknown = sorted({k[2] for k in gt} - set(models))
    if missing_pred or missing_gt:
        raise KeyMismatch(
            f"{len(missing_pred)} ground-truth instances without prediction, "
            f"{len(missing_gt)} predictions without ground truth",
            missing_pred, missing_gt)
    if unknown:
        raise KeyMismatch(f"objects missing from the models manifest: {unknown}")
    pairs = {}
    for key in sorted(gt):
        pairs.setdefault(key[2], []).append((pred[key], gt[key]))
    return evaluate_instances(pairs, models)
