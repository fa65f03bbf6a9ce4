"""Slow reference implementations used only by the tests."""

import numpy as np


def surface_voxels(mask):
    """Foreground voxels with a background 6-neighbour or on the volume edge, by loops."""
    out = []
    shape = mask.shape
    for p in map(tuple, np.argwhere(mask)):
        for ax in range(3):
            for step in (-1, 1):
                q = list(p)
                q[ax] += step
                if not (0 <= q[ax] < shape[ax]) or not mask[tuple(q)]:
                    out.append(p)
                    break
            else:
                continue
            break
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def nearest_distances(src, dst, spacing):
    """For every point of ``src`` the smallest distance to any point of ``dst`` (O(S^2))."""
    s = np.asarray(spacing, dtype=np.float64)
    out = np.empty(len(src))
    for k, p in enumerate(src):
        diff = (dst.astype(np.float64) - p.astype(np.float64)) * s
        out[k] = np.min(np.sqrt(np.sum(diff * diff, axis=-1)))
    return out


def symmetric_distances(h, t, spacing):
    sh, st = surface_voxels(h), surface_voxels(t)
    return np.concatenate([nearest_distances(sh, st, spacing), nearest_distances(st, sh, spacing)])


def voe_count(h, t):
    inter = sum(1 for p in np.argwhere(h) if t[tuple(p)])
    union = int(h.sum() + t.sum()) - inter
    return 100.0 * (1.0 - inter / union)


def vd_count(h, t):
    return 100.0 * (int(h.sum()) - int(t.sum())) / int(t.sum())


# offset angle -> (row step, column step) on an axial image whose rows run along y
STEPS = {0: (0, 1), 45: (1, 1), 90: (1, 0), 135: (1, -1)}


def glcm_oracle(img, angle, levels, mask=None):
    dr, dc = STEPS[angle]
    nr, nc = img.shape
    counts = np.zeros((levels, levels), dtype=np.int64)
    for r in range(nr):
        for c in range(nc):
            r2, c2 = r + dr, c + dc
            if not (0 <= r2 < nr and 0 <= c2 < nc):
                continue
            if mask is not None and not (mask[r, c] and mask[r2, c2]):
                continue
            counts[img[r, c], img[r2, c2]] += 1
    return counts


def haralick_oracle(counts):
    n = counts.shape[0]
    total = float(sum(counts[i][j] for i in range(n) for j in range(n)))
    p = [[counts[i][j] / total for j in range(n)] for i in range(n)]
    cells = [(i, j) for i in range(n) for j in range(n)]
    mu_i = sum(i * p[i][j] for i, j in cells)
    mu_j = sum(j * p[i][j] for i, j in cells)
    var_i = sum((i - mu_i) ** 2 * p[i][j] for i, j in cells)
    var_j = sum((j - mu_j) ** 2 * p[i][j] for i, j in cells)
    cov = sum((i - mu_i) * (j - mu_j) * p[i][j] for i, j in cells)
    corr = cov / np.sqrt(var_i * var_j) if var_i * var_j > 0 else 1.0
    return np.array([
        -sum(p[i][j] * np.log(p[i][j]) for i, j in cells if p[i][j] > 0),
        sum(p[i][j] ** 2 for i, j in cells),
        sum((i - j) ** 2 * p[i][j] for i, j in cells),
        sum(p[i][j] / (1 + abs(i - j)) for i, j in cells),
        mu_i,
        corr,
        max(p[i][j] for i, j in cells),
        sum(p[i][j] / (1 + (i - j) ** 2) for i, j in cells),
        sum((i + j - mu_i - mu_j) ** 2 * p[i][j] for i, j in cells),
    ])
