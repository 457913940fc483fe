"""Loop kernels compiled with numba.

Signatures and contracts mirror ``_numpy``; see the docstrings there.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _window_sums(filled, width):
    # NaN-free input, so reassociating the sum (and vectorizing it) is safe
    n_win = filled.shape[0] - width + 1
    out = np.empty(n_win)
    for start in range(n_win):
        s = 0.0
        for i in range(start, start + width):
            s += filled[i]
        out[start] = s
    return out


@njit(cache=True)
def window_extreme(values, width, find_max, min_count, rtol):
    n = values.shape[0]
    if width > n or width < 1:
        return np.nan, -1
    need = max(min_count, 1)
    n_win = n - width + 1
    filled = np.empty(n)
    ccnt = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        v = values[i]
        if np.isnan(v):
            filled[i] = 0.0
            ccnt[i + 1] = ccnt[i]
        else:
            filled[i] = v
            ccnt[i + 1] = ccnt[i] + 1
    # each window is summed afresh: a running sum drifts and can leave a
    # small negative residue where the true sum is zero
    sums = _window_sums(filled, width)
    est = np.empty(n_win)
    ok = np.zeros(n_win, dtype=np.bool_)
    for start in range(n_win):
        c = ccnt[start + width] - ccnt[start]
        if c >= need:
            ok[start] = True
            est[start] = sums[start] * width / c
    scale = 0.0
    best = np.nan
    any_ok = False
    for i in range(n_win):
        if ok[i]:
            a = abs(est[i])
            if a > scale:
                scale = a
            if not any_ok:
                best = est[i]
                any_ok = True
            elif find_max and est[i] > best:
                best = est[i]
            elif (not find_max) and est[i] < best:
                best = est[i]
    if not any_ok:
        return np.nan, -1
    tol = rtol * scale
    for i in range(n_win):
        if ok[i]:
            if find_max and est[i] >= best - tol:
                return est[i], i
            if (not find_max) and est[i] <= best + tol:
                return est[i], i
    return np.nan, -1


@njit(cache=True)
def loess_fit(x, y, grid, q, degree):
    n = x.shape[0]
    m = grid.shape[0]
    fit = np.empty(m)
    fallback = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        g = grid[i]
        hi = np.searchsorted(x, g)
        lo = hi - 1
        h = 0.0
        for _ in range(q):
            if lo < 0:
                h = x[hi] - g
                hi += 1
            elif hi >= n:
                h = g - x[lo]
                lo -= 1
            elif g - x[lo] <= x[hi] - g:
                h = g - x[lo]
                lo -= 1
            else:
                h = x[hi] - g
                hi += 1
        if h <= 0.0:
            tot = 0.0
            cnt = 0
            for j in range(lo + 1, hi):
                if x[j] == g:
                    tot += y[j]
                    cnt += 1
            fit[i] = tot / cnt
            fallback[i] = True
            continue
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        s4 = 0.0
        t0 = 0.0
        t1 = 0.0
        t2 = 0.0
        for j in range(lo + 1, hi):
            u = (x[j] - g) / h
            au = abs(u)
            if au >= 1.0:
                continue
            t = 1.0 - au * au * au
            w = t * t * t
            s0 += w
            s1 += w * u
            s2 += w * u * u
            s3 += w * u * u * u
            s4 += w * u * u * u * u
            t0 += w * y[j]
            t1 += w * u * y[j]
            t2 += w * u * u * y[j]
        mean = t0 / s0
        if degree == 0:
            fit[i] = mean
        elif degree == 1:
            det = s0 * s2 - s1 * s1
            if s0 * s2 <= 0.0 or det <= 1e-10 * s0 * s2:
                fit[i] = mean
                fallback[i] = True
            else:
                fit[i] = (s2 * t0 - s1 * t1) / det
        else:
            det = s0 * (s2 * s4 - s3 * s3) - s1 * (s1 * s4 - s3 * s2) + s2 * (s1 * s3 - s2 * s2)
            ref = s0 * s2 * s4
            if ref <= 0.0 or abs(det) <= 1e-10 * ref:
                fit[i] = mean
                fallback[i] = True
            else:
                det0 = t0 * (s2 * s4 - s3 * s3) - s1 * (t1 * s4 - s3 * t2) + s2 * (t1 * s3 - s2 * t2)
                fit[i] = det0 / det
    return fit, fallback


@njit(cache=True)
def knn_query(train, queries, k, p):
    n = train.shape[0]
    f = train.shape[1]
    m = queries.shape[0]
    idx = np.empty((m, k), dtype=np.int64)
    dist = np.empty((m, k))
    inf_order = np.isinf(p)
    best_i = np.empty(k, dtype=np.int64)
    best_d = np.empty(k)
    for i in range(m):
        filled = 0
        for j in range(n):
            acc = 0.0
            for c in range(f):
                d = abs(queries[i, c] - train[j, c])
                if inf_order:
                    if d > acc:
                        acc = d
                elif p == 2.0:
                    acc += d * d
                elif p == 1.0:
                    acc += d
                else:
                    acc += d ** p
            # keep the k best sorted; strict comparison keeps the lower index first on ties
            if filled == k and acc >= best_d[k - 1]:
                continue
            pos = filled if filled < k else k - 1
            while pos > 0 and best_d[pos - 1] > acc:
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = acc
            best_i[pos] = j
            if filled < k:
                filled += 1
        for r in range(k):
            idx[i, r] = best_i[r]
            dist[i, r] = best_d[r] if inf_order else best_d[r] ** (1.0 / p)
    return idx, dist


@njit(cache=True)
def nan_euclidean(receivers, donors):
    m = receivers.shape[0]
    n = donors.shape[0]
    f = receivers.shape[1]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            sq = 0.0
            shared = 0
            for c in range(f):
                a = receivers[i, c]
                b = donors[j, c]
                if np.isnan(a) or np.isnan(b):
                    continue
                sq += (a - b) * (a - b)
                shared += 1
            if shared == 0:
                out[i, j] = np.nan
            else:
                out[i, j] = np.sqrt(sq * f / shared)
    return out


@njit(cache=True)
def rank_sum_counts(doubled_ranks, n_a):
    total = 0
    for r in doubled_ranks:
        total += r
    dp = np.zeros((n_a + 1, total + 1))
    dp[0, 0] = 1.0
    for r in doubled_ranks:
        for j in range(n_a, 0, -1):
            for s in range(total, r - 1, -1):
                dp[j, s] += dp[j - 1, s - r]
    return dp[n_a].copy()


@njit(cache=True)
def nms(x, y, w, h, order, threshold):
    n = order.shape[0]
    alive = np.ones(x.shape[0], dtype=np.bool_)
    keep = np.empty(n, dtype=np.int64)
    nk = 0
    for pos in range(n):
        i = order[pos]
        if not alive[i]:
            continue
        keep[nk] = i
        nk += 1
        for q in range(pos + 1, n):
            j = order[q]
            if not alive[j]:
                continue
            iw = max(0.0, min(x[i] + w[i], x[j] + w[j]) - max(x[i], x[j]))
            ih = max(0.0, min(y[i] + h[i], y[j] + h[j]) - max(y[i], y[j]))
            inter = iw * ih
            union = w[i] * h[i] + w[j] * h[j] - inter
            if inter / union > threshold:
                alive[j] = False
    return keep[:nk].copy()
