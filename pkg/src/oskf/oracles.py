"""Slow reference implementations written as plain loops.

They share no code with the vectorized paths and exist to check them, both
in the test suite and in ``oskf selfcheck``.
"""

import math

import numpy as np


def fps_oracle(points, k, seed_index):
    """O(n^2 k) greedy farthest point sampling, lowest index on ties."""
    pts = [tuple(map(float, p)) for p in np.asarray(points)]
    chosen = [seed_index]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i, p in enumerate(pts):
            d = min(math.dist(p, pts[c]) for c in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def bilinear_oracle(level, px, py, crop_size):
    """One bilinear lookup, zero outside the map; returns a (C,) array."""
    h, w, C = level.shape
    x = px * w / crop_size - 0.5
    y = py * h / crop_size - 0.5
    x0, y0 = math.floor(x), math.floor(y)
    out = np.zeros(C)
    for yi in (y0, y0 + 1):
        for xi in (x0, x0 + 1):
            if 0 <= xi < w and 0 <= yi < h:
                wgt = (1.0 - abs(x - xi)) * (1.0 - abs(y - yi))
                out = out + wgt * level[yi, xi]
    return out


def layer_norm_oracle(x, gain, bias, eps=1e-5):
    out = np.empty_like(x)
    for i, row in enumerate(x):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = [(v - mu) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gain, bias)]
    return out


def _softmax(values):
    m = max(values)
    e = [math.exp(v - m) for v in values]
    s = sum(e)
    return [v / s for v in e]


def self_attention_oracle(Q, E, P, heads):
    """Single scene, Q and E of shape (K, d)."""
    K, d = Q.shape
    dh = d // heads
    QE = Q if E is None else Q + E
    mixed = np.zeros((K, d))
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(K):
            q = QE[i] @ P["wq"][:, cols] + P["bq"][cols]
            scores = []
            for j in range(K):
                kj = QE[j] @ P["wk"][:, cols] + P["bk"][cols]
                scores.append(float(q @ kj) / math.sqrt(dh))
            a = _softmax(scores)
            for j in range(K):
                mixed[i, cols] += a[j] * (Q[j] @ P["wv"][:, cols] + P["bv"][cols])
    out = Q + mixed @ P["wo"] + P["bo"]
    return layer_norm_oracle(out, P["ln_g"], P["ln_b"])


def deformable_attention_oracle(Q_S, positions, levels, crop_size, P, heads, points):
    """Single scene; ``levels`` is a list of (h, w, C) maps."""
    K, d = Q_S.shape
    L, H, J = len(levels), heads, points
    dh = d // H
    pre = np.zeros((K, d))
    for k in range(K):
        off = (Q_S[k] @ P["w_off"] + P["b_off"]).reshape(H, L, J, 2) * crop_size
        logits = (Q_S[k] @ P["w_att"] + P["b_att"]).reshape(H, L * J)
        for h in range(H):
            cols = slice(h * dh, (h + 1) * dh)
            a = _softmax(list(logits[h]))
            acc = np.array(P["b_val"][cols], dtype=np.float64)
            for l in range(L):
                for j in range(J):
                    px = positions[k, 0] + off[h, l, j, 0]
                    py = positions[k, 1] + off[h, l, j, 1]
                    feat = bilinear_oracle(levels[l], px, py, crop_size)
                    acc = acc + a[l * J + j] * (feat @ P["w_val"][:, cols])
            pre[k, cols] = acc
    out = Q_S + pre @ P["w_out"] + P["b_out"]
    return layer_norm_oracle(out, P["ln_g"], P["ln_b"]), pre
