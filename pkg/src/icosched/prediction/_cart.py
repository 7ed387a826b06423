"""Compiled kernels for growing and walking regression trees.

Samples are never re-sorted inside the tree. ``order[f]`` lists the
in-bag sample ids sorted by feature ``f``; every row is partitioned the same
way at each split, so a node owns the same ``[start, end)`` slice in every
row and split search is a linear scan.

Bootstrap duplicates are carried as integer weights, so ``min_samples_leaf``
counts draws, not distinct rows.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _splitmix(state):
    z = state[0] + np.uint64(0x9E3779B97F4A7C15)
    state[0] = z
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _randbelow(state, n):
    # 53 high-quality bits scaled to [0, n)
    u = np.float64(_splitmix(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    k = np.int64(u * n)
    return k if k < n else n - 1


@njit(cache=True, nogil=True)
def grow_tree(XT, y, w, order, max_depth, min_leaf, n_candidates, rng_seed):
    """Grow one tree; returns (feature, threshold, left, right, value) arrays.

    ``feature[i] == -1`` marks a leaf. Rows go left when ``x < threshold``.
    Candidate features are scanned in ascending index order and positions in
    ascending value order, and only a strictly better gain replaces the
    incumbent, so ties resolve to the lowest feature then lowest threshold.
    """
    n_features = XT.shape[0]
    m = order.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)

    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(rng_seed)
    perm = np.arange(n_features)
    goes_left = np.zeros(y.shape[0], dtype=np.bool_)
    buf = np.empty(m, dtype=order.dtype)

    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node = np.empty(cap, dtype=np.int64)
    top = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    stack_node[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        node = stack_node[top]

        row0 = order[0]
        w_tot = 0.0
        s_tot = 0.0
        y_lo = np.inf
        y_hi = -np.inf
        for p in range(start, end):
            s = row0[p]
            w_tot += w[s]
            s_tot += w[s] * y[s]
            if y[s] < y_lo:
                y_lo = y[s]
            if y[s] > y_hi:
                y_hi = y[s]
        mean = s_tot / w_tot
        # leaf means can drift one ulp past the extrema; keep them inside
        if mean < y_lo:
            mean = y_lo
        if mean > y_hi:
            mean = y_hi
        value[node] = mean

        if depth >= max_depth or w_tot < 2 * min_leaf or y_lo == y_hi:
            continue

        # partial Fisher-Yates draw of the candidate set, then sort it
        for i in range(n_candidates):
            j = i + _randbelow(state, n_features - i)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        cands = np.sort(perm[:n_candidates].copy())

        parent_gain = s_tot * s_tot / w_tot
        best_gain = parent_gain
        best_f = -1
        best_pos = -1
        best_thr = 0.0
        for ci in range(n_candidates):
            f = cands[ci]
            row = order[f]
            xf = XT[f]
            wl = 0.0
            sl = 0.0
            for p in range(start, end - 1):
                s = row[p]
                wl += w[s]
                sl += w[s] * y[s]
                a = xf[s]
                b = xf[row[p + 1]]
                if a < b and wl >= min_leaf and w_tot - wl >= min_leaf:
                    wr = w_tot - wl
                    sr = s_tot - sl
                    gain = sl * sl / wl + sr * sr / wr
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_pos = p
                        thr = a + (b - a) * 0.5
                        if thr <= a:
                            thr = b
                        best_thr = thr

        if best_f < 0 or best_gain <= parent_gain * (1.0 + 1e-12):
            continue

        row = order[best_f]
        for p in range(start, end):
            goes_left[row[p]] = p <= best_pos
        n_left = best_pos + 1 - start

        for g in range(n_features):
            rg = order[g]
            li = start
            ri = 0
            for p in range(start, end):
                s = rg[p]
                if goes_left[s]:
                    rg[li] = s
                    li += 1
                else:
                    buf[ri] = s
                    ri += 1
            for q in range(ri):
                rg[li + q] = buf[q]

        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lchild
        right[node] = rchild

        # push right first so the left subtree is numbered first
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1
        stack_node[top] = rchild
        top += 1
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        stack_node[top] = lchild
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value, out):
    """Add each row's leaf value to ``out``."""
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]
