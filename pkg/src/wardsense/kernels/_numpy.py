"""Pure-numpy kernels.

Every function here has a loop twin in ``_numba`` with the same signature and
the same contract. This path is used when numba is missing or disabled through
``WARDSENSE_DISABLE_JIT``.
"""

import numpy as np


def window_extreme(values, width, find_max, min_count, rtol):
    """Best sliding-window sum estimate over a gappy series.

    ``values`` carries NaN for missing slots. A window is eligible when it has at
    least ``min_count`` observed slots; its sum estimate is the observed sum
    rescaled to the full width. Estimates within ``rtol`` (relative to the
    largest eligible magnitude) of the optimum count as ties and the earliest
    start wins. Returns ``(nan, -1)`` when no window is eligible.
    """
    n = values.shape[0]
    if width > n or width < 1:
        return np.nan, -1
    observed = ~np.isnan(values)
    filled = np.where(observed, values, 0.0)
    # direct per-window sums; cumulative-sum differences cancel badly and can
    # go negative where the true sum is zero
    sums = np.lib.stride_tricks.sliding_window_view(filled, width).sum(axis=1)
    ccnt = np.concatenate(([0], np.cumsum(observed.astype(np.int64))))
    counts = ccnt[width:] - ccnt[:-width]
    eligible = counts >= max(min_count, 1)
    if not eligible.any():
        return np.nan, -1
    est = np.full(sums.shape, np.nan)
    est[eligible] = sums[eligible] * width / counts[eligible]
    scale = np.max(np.abs(est[eligible]))
    tol = rtol * scale
    if find_max:
        best = np.max(est[eligible])
        hits = np.flatnonzero(eligible & (est >= best - tol))
    else:
        best = np.min(est[eligible])
        hits = np.flatnonzero(eligible & (est <= best + tol))
    start = int(hits[0])
    return float(est[start]), start


def loess_fit(x, y, grid, q, degree):
    """Tricube local polynomial fit of ``y`` on sorted ``x`` evaluated at ``grid``.

    The bandwidth at each grid point is the distance to its ``q``-th nearest
    sample. Returns the fitted values and a boolean mask of points where the
    local design was singular and a weighted mean was used instead.
    """
    m = grid.shape[0]
    fit = np.empty(m)
    fallback = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        g = grid[i]
        d = np.abs(x - g)
        h = np.partition(d, q - 1)[q - 1]
        if h <= 0.0:
            sel = d == 0.0
            fit[i] = np.mean(y[sel])
            fallback[i] = True
            continue
        sel = d < h
        u = (x[sel] - g) / h
        w = (1.0 - np.abs(u) ** 3) ** 3
        ys = y[sel]
        value, singular = _solve_local(u, w, ys, degree)
        fit[i] = value
        fallback[i] = singular
    return fit, fallback


def _solve_local(u, w, ys, degree):
    s0 = np.sum(w)
    t0 = np.sum(w * ys)
    mean = t0 / s0
    if degree == 0:
        return mean, False
    s1 = np.sum(w * u)
    s2 = np.sum(w * u * u)
    t1 = np.sum(w * u * ys)
    if degree == 1:
        det = s0 * s2 - s1 * s1
        if s0 * s2 <= 0.0 or det <= 1e-10 * s0 * s2:
            return mean, True
        return (s2 * t0 - s1 * t1) / det, False
    s3 = np.sum(w * u ** 3)
    s4 = np.sum(w * u ** 4)
    t2 = np.sum(w * u * u * ys)
    det = s0 * (s2 * s4 - s3 * s3) - s1 * (s1 * s4 - s3 * s2) + s2 * (s1 * s3 - s2 * s2)
    ref = s0 * s2 * s4
    if ref <= 0.0 or abs(det) <= 1e-10 * ref:
        return mean, True
    det0 = t0 * (s2 * s4 - s3 * s3) - s1 * (t1 * s4 - s3 * t2) + s2 * (t1 * s3 - s2 * t2)
    return det0 / det, False


def knn_query(train, queries, k, p):
    """Indices and Minkowski distances of the ``k`` nearest training rows.

    Ordered by distance, ties by lowest training index.
    """
    m = queries.shape[0]
    idx = np.empty((m, k), dtype=np.int64)
    dist = np.empty((m, k))
    chunk = max(1, 2_000_000 // max(1, train.size))
    for lo in range(0, m, chunk):
        block = queries[lo:lo + chunk]
        diff = np.abs(block[:, None, :] - train[None, :, :])
        if np.isinf(p):
            raw = diff.max(axis=2)
        else:
            raw = np.sum(diff ** p, axis=2)
        order = np.argsort(raw, axis=1, kind="stable")[:, :k]
        idx[lo:lo + chunk] = order
        picked = np.take_along_axis(raw, order, axis=1)
        dist[lo:lo + chunk] = picked if np.isinf(p) else picked ** (1.0 / p)
    return idx, dist


def nan_euclidean(receivers, donors):
    """Euclidean distance over mutually observed coordinates, rescaled by the
    fraction of coordinates observed. NaN when nothing is shared."""
    f = receivers.shape[1]
    r_obs = ~np.isnan(receivers)
    d_obs = ~np.isnan(donors)
    r0 = np.where(r_obs, receivers, 0.0)
    d0 = np.where(d_obs, donors, 0.0)
    out = np.empty((receivers.shape[0], donors.shape[0]))
    for i in range(receivers.shape[0]):
        both = r_obs[i][None, :] & d_obs
        diff = np.where(both, r0[i][None, :] - d0, 0.0)
        sq = np.sum(diff * diff, axis=1)
        shared = both.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            row = np.sqrt(sq * f / shared)
        row[shared == 0] = np.nan
        out[i] = row
    return out


def rank_sum_counts(doubled_ranks, n_a):
    """Number of size-``n_a`` subsets for each achievable sum of doubled ranks."""
    total = int(np.sum(doubled_ranks))
    dp = np.zeros((n_a + 1, total + 1))
    dp[0, 0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        nxt = dp.copy()
        if r == 0:
            nxt[1:] += dp[:-1]
        else:
            nxt[1:, r:] += dp[:-1, :total + 1 - r]
        dp = nxt
    return dp[n_a]


def nms(x, y, w, h, order, threshold):
    """Greedy suppression in the given ``order``; returns kept indices."""
    keep = []
    alive = np.ones(x.shape[0], dtype=np.bool_)
    for pos in range(order.shape[0]):
        i = order[pos]
        if not alive[i]:
            continue
        keep.append(i)
        rest = order[pos + 1:]
        rest = rest[alive[rest]]
        if rest.size == 0:
            continue
        iw = np.maximum(0.0, np.minimum(x[i] + w[i], x[rest] + w[rest]) - np.maximum(x[i], x[rest]))
        ih = np.maximum(0.0, np.minimum(y[i] + h[i], y[rest] + h[rest]) - np.maximum(y[i], y[rest]))
        inter = iw * ih
        union = w[i] * h[i] + w[rest] * h[rest] - inter
        alive[rest[inter / union > threshold]] = False
    return np.asarray(keep, dtype=np.int64)
