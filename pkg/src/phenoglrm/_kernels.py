"""Hot loops: Gower pair sums, PAM BUILD/SWAP, per-row silhouette.

Each kernel exists twice. ``*_loop`` functions are written as plain loops and
compiled by numba; ``*_np`` functions are vectorized numpy. The public names at
the bottom of the module point at one or the other depending on
:data:`phenoglrm._accel.USE_NUMBA`. Both paths make the same decisions (tie
breaks, acceptance thresholds); they may differ in the last bits of float sums.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# Minimum improvement for a SWAP to be accepted; guards against cycling on
# float noise.
SWAP_TOL = 1e-12


# --------------------------------------------------------------------------
# Gower

def _gower_loop(values, is_binary, ranges, weights):
    m, nf = values.shape
    out = np.zeros((m, m))
    wsum = 0.0
    for f in range(nf):
        wsum += weights[f]
    for i in range(m):
        for j in range(i + 1, m):
            num = 0.0
            for f in range(nf):
                a = values[i, f]
                b = values[j, f]
                if is_binary[f]:
                    d = 1.0 if a != b else 0.0
                else:
                    d = abs(a - b) / ranges[f]
                num += weights[f] * d
            val = num / wsum
            if val > 1.0:
                val = 1.0
            out[i, j] = val
            out[j, i] = val
    return out


def _gower_np(values, is_binary, ranges, weights):
    m, nf = values.shape
    num = np.zeros((m, m))
    for f in range(nf):
        col = values[:, f]
        if is_binary[f]:
            d = (col[:, None] != col[None, :]).astype(np.float64)
        else:
            d = np.abs(col[:, None] - col[None, :]) / ranges[f]
        num += weights[f] * d
    wsum = 0.0
    for f in range(nf):
        wsum += weights[f]
    out = np.minimum(num / wsum, 1.0)
    np.fill_diagonal(out, 0.0)
    return out


# --------------------------------------------------------------------------
# PAM

def _build_loop(dist, n_clusters):
    m = dist.shape[0]
    near = np.full(m, np.inf)
    is_medoid = np.zeros(m, dtype=np.bool_)
    medoids = np.empty(n_clusters, dtype=np.int64)
    for c in range(n_clusters):
        best = np.inf
        best_h = -1
        for h in range(m):
            if is_medoid[h]:
                continue
            total = 0.0
            for i in range(m):
                d = dist[i, h]
                total += d if d < near[i] else near[i]
            if total < best:
                best = total
                best_h = h
        medoids[c] = best_h
        is_medoid[best_h] = True
        for i in range(m):
            if dist[i, best_h] < near[i]:
                near[i] = dist[i, best_h]
    return medoids


def _build_np(dist, n_clusters):
    m = dist.shape[0]
    near = np.full(m, np.inf)
    is_medoid = np.zeros(m, dtype=bool)
    medoids = np.empty(n_clusters, dtype=np.int64)
    for c in range(n_clusters):
        totals = np.minimum(dist, near[:, None]).sum(axis=0)
        totals[is_medoid] = np.inf
        h = int(np.argmin(totals))
        medoids[c] = h
        is_medoid[h] = True
        near = np.minimum(near, dist[:, h])
    return medoids


def _nearest_loop(dist, medoids):
    """Nearest/second-nearest medoid distances; slots visited in ascending row order."""
    m = dist.shape[0]
    k = medoids.shape[0]
    order = np.argsort(medoids, kind="mergesort")
    near = np.full(m, np.inf)
    second = np.full(m, np.inf)
    slot = np.full(m, -1, dtype=np.int64)
    for j in range(m):
        for oi in range(k):
            s = order[oi]
            d = dist[j, medoids[s]]
            if d < near[j]:
                second[j] = near[j]
                near[j] = d
                slot[j] = s
            elif d < second[j]:
                second[j] = d
    return near, second, slot


def _swap_loop(dist, medoids, max_iter):
    m = dist.shape[0]
    k = medoids.shape[0]
    medoids = medoids.copy()
    is_medoid = np.zeros(m, dtype=np.bool_)
    for s in range(k):
        is_medoid[medoids[s]] = True
    n_swaps = 0
    for _ in range(max_iter):
        near, second, slot = _nearest_loop(dist, medoids)
        order = np.argsort(medoids, kind="mergesort")
        best = 0.0
        best_s = -1
        best_h = -1
        for oi in range(k):
            s = order[oi]
            for h in range(m):
                if is_medoid[h]:
                    continue
                delta = 0.0
                for j in range(m):
                    d = dist[j, h]
                    if slot[j] == s:
                        delta += (d if d < second[j] else second[j]) - near[j]
                    elif d < near[j]:
                        delta += d - near[j]
                if delta < best:
                    best = delta
                    best_s = s
                    best_h = h
        if best_s < 0 or best > -SWAP_TOL:
            break
        is_medoid[medoids[best_s]] = False
        is_medoid[best_h] = True
        medoids[best_s] = best_h
        n_swaps += 1
    return medoids, n_swaps


def _nearest_np(dist, medoids):
    order = np.argsort(medoids, kind="mergesort")
    sub = dist[:, medoids[order]]
    pos = np.argmin(sub, axis=1)
    near = sub[np.arange(sub.shape[0]), pos]
    if sub.shape[1] > 1:
        masked = sub.copy()
        masked[np.arange(sub.shape[0]), pos] = np.inf
        second = masked.min(axis=1)
    else:
        second = np.full(sub.shape[0], np.inf)
    return near, second, order[pos]


def _swap_np(dist, medoids, max_iter):
    m = dist.shape[0]
    k = medoids.shape[0]
    medoids = medoids.copy()
    is_medoid = np.zeros(m, dtype=bool)
    is_medoid[medoids] = True
    n_swaps = 0
    for _ in range(max_iter):
        near, second, slot = _nearest_np(dist, medoids)
        # Gain from adding h for points that keep their current medoid.
        keep = np.minimum(dist - near[:, None], 0.0)
        # Replacement cost for points whose medoid is removed.
        lose = np.minimum(dist, second[:, None]) - near[:, None]
        best = 0.0
        best_s = -1
        best_h = -1
        for s in np.argsort(medoids, kind="mergesort"):
            members = slot == s
            delta = keep[~members].sum(axis=0) + lose[members].sum(axis=0)
            delta[is_medoid] = np.inf
            h = int(np.argmin(delta))
            if delta[h] < best:
                best = delta[h]
                best_s = int(s)
                best_h = h
        if best_s < 0 or best > -SWAP_TOL:
            break
        is_medoid[medoids[best_s]] = False
        is_medoid[best_h] = True
        medoids[best_s] = best_h
        n_swaps += 1
    return medoids, n_swaps


# --------------------------------------------------------------------------
# Silhouette

def _silhouette_loop(dist, labels, n_labels):
    m = dist.shape[0]
    counts = np.zeros(n_labels, dtype=np.int64)
    for i in range(m):
        counts[labels[i]] += 1
    out = np.zeros(m)
    sums = np.zeros(n_labels)
    for i in range(m):
        own = labels[i]
        if counts[own] <= 1:
            out[i] = 0.0
            continue
        for c in range(n_labels):
            sums[c] = 0.0
        for j in range(m):
            sums[labels[j]] += dist[i, j]
        a = sums[own] / (counts[own] - 1)
        b = np.inf
        for c in range(n_labels):
            if c != own and counts[c] > 0:
                v = sums[c] / counts[c]
                if v < b:
                    b = v
        denom = a if a > b else b
        out[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return out


def _silhouette_np(dist, labels, n_labels):
    m = dist.shape[0]
    onehot = np.zeros((m, n_labels))
    onehot[np.arange(m), labels] = 1.0
    counts = onehot.sum(axis=0)
    sums = dist @ onehot
    own = labels
    own_counts = counts[own]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[np.arange(m), own] / (own_counts - 1)
        means = sums / counts
    means[np.arange(m), own] = np.inf
    means[:, counts == 0] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (b - a) / denom
    s[(own_counts <= 1) | (denom == 0.0)] = 0.0
    return s


gower_loop = njit(_gower_loop)
build_loop = njit(_build_loop)
_nearest_loop = njit(_nearest_loop)
swap_loop = njit(_swap_loop)
silhouette_loop = njit(_silhouette_loop)

if USE_NUMBA:
    gower_kernel = gower_loop
    build_kernel = build_loop
    swap_kernel = swap_loop
    silhouette_kernel = silhouette_loop
else:
    gower_kernel = _gower_np
    build_kernel = _build_np
    swap_kernel = _swap_np
    silhouette_kernel = _silhouette_np

NUMPY_KERNELS = {
    "gower": _gower_np,
    "build": _build_np,
    "swap": _swap_np,
    "silhouette": _silhouette_np,
}
LOOP_KERNELS = {
    "gower": gower_loop,
    "build": build_loop,
    "swap": swap_loop,
    "silhouette": silhouette_loop,
}
