"""Independent reference implementations shared by the unit and acceptance tests."""

import math

import numpy as np


def product_oracle(intr, s, t):
    """Explicit three-factor product, assembled from scratch."""
    Kc = np.eye(4)
    Kc[3, 2] = -1.0 / intr.F
    D = np.eye(4)
    D[0, 3], D[1, 3], D[2, 3] = intr.Ox, intr.Oy, intr.d
    Ks = np.array([[intr.f, 0, 0, -intr.f * s], [0, intr.f, 0, -intr.f * t], [0, 0, 1, 0]], dtype=float)
    return Ks @ D @ Kc


def brute_force_metrics(est, gt):
    """One pass over matched ids with plain Python arithmetic."""
    e = {int(i): float(p[2]) for i, p in zip(est.ids, est.points)}
    g = {int(i): float(p[2]) for i, p in zip(gt.ids, gt.points)}
    n = rel = diff = sq = 0.0
    hits = [0, 0, 0]
    for k in sorted(set(e) & set(g)):
        d = abs(e[k] - g[k])
        n += 1
        rel += d / abs(g[k])
        diff += d
        sq += d * d
        ratio = max(e[k] / g[k], g[k] / e[k]) if e[k] != 0 else math.inf
        for j in range(3):
            hits[j] += ratio < 1.25 ** (j + 1)
    return rel / n, diff / n, math.sqrt(sq / n), hits[0] / n, hits[1] / n, hits[2] / n
