"""Numba kernels for CART tree construction and traversal.

Trees are stored as flat parallel arrays indexed by node id. All in-kernel
randomness comes from an explicit splitmix64 state, so results are
bit-reproducible for a given seed on any platform and are independent of
how many trees are trained or in what order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_ONE = np.uint64(1)


@njit(cache=True)
def _next_u64(state):
    # splitmix64 step; state is a length-1 uint64 array
    s = state[0] + _GOLDEN
    state[0] = s
    z = (s ^ (s >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _rand_below(state, n):
    # modulo bias is < 2^-50 for the n used here
    return np.int64(_next_u64(state) % np.uint64(n))


@njit(cache=True)
def fit_tree(X, y_reg, y_cls, n_classes, levels, is_classification,
             mtry, min_node_size, max_depth, seed):
    """Grow one CART tree on a fresh bootstrap sample of the rows of X.

    Split criterion is variance reduction (regression) or Gini decrease
    (classification); at each node ``mtry`` features are sampled without
    replacement. Continuous candidates are midpoints between distinct
    sorted values; categorical candidates are all binary partitions of
    the levels present at the node. Candidate features are scanned in
    ascending index order and thresholds in ascending order, with only a
    strictly better score accepted, so ties resolve to the lowest feature
    index and lowest threshold.

    Returns (feature, threshold, cat_mask, left, right, leaf_value,
    leaf_counts, inbag, n_nodes); node arrays are oversized and must be
    trimmed to n_nodes by the caller.
    """
    n = X.shape[0]
    p = X.shape[1]
    nc = n_classes if n_classes > 0 else 1
    max_nodes = 2 * n

    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes, np.float64)
    cat_mask = np.zeros(max_nodes, np.uint64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    leaf_value = np.zeros(max_nodes, np.float64)
    leaf_counts = np.zeros((max_nodes, nc), np.float64)
    inbag = np.zeros(n, np.int32)

    state = np.empty(1, np.uint64)
    state[0] = seed

    rows = np.empty(n, np.int64)
    for i in range(n):
        r = _rand_below(state, n)
        rows[i] = r
        inbag[r] += 1

    tmp = np.empty(n, np.int64)
    vbuf = np.empty(n, np.float64)
    ybuf = np.empty(n, np.float64)
    cbuf = np.empty(n, np.int32)
    perm = np.empty(p, np.int64)
    cls_node = np.zeros(nc, np.float64)
    cls_left = np.zeros(nc, np.float64)

    lmax = 1
    for f in range(p):
        if levels[f] > lmax:
            lmax = levels[f]
    lcnt = np.zeros(lmax, np.int64)
    lsum = np.zeros(lmax, np.float64)
    lcls = np.zeros((lmax, nc), np.float64)
    lorder = np.empty(lmax, np.int64)
    lkey = np.empty(lmax, np.float64)

    stack = np.empty((max_nodes, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        lo = stack[sp, 1]
        hi = stack[sp, 2]
        depth = stack[sp, 3]
        m = hi - lo

        # node statistics and purity
        sum_y = 0.0
        node_mean = 0.0
        pure = False
        parent_score = 0.0
        if is_classification:
            for k in range(nc):
                cls_node[k] = 0.0
            for i in range(lo, hi):
                cls_node[y_cls[rows[i]]] += 1.0
            maxc = 0.0
            for k in range(nc):
                if cls_node[k] > maxc:
                    maxc = cls_node[k]
                parent_score += cls_node[k] * cls_node[k]
            parent_score /= m
            pure = maxc == m
        else:
            ymin = y_reg[rows[lo]]
            ymax = ymin
            for i in range(lo, hi):
                yv = y_reg[rows[i]]
                sum_y += yv
                if yv < ymin:
                    ymin = yv
                if yv > ymax:
                    ymax = yv
            pure = ymin == ymax
            parent_score = sum_y * sum_y / m
            node_mean = sum_y / m

        stop = m < 2 * min_node_size or pure
        if max_depth >= 0 and depth >= max_depth:
            stop = True

        best_feat = np.int64(-1)
        best_thr = 0.0
        best_mask = np.uint64(0)
        if not stop:
            # sample mtry features without replacement, then scan ascending
            for j in range(p):
                perm[j] = j
            for j in range(mtry):
                k = j + _rand_below(state, p - j)
                t = perm[j]
                perm[j] = perm[k]
                perm[k] = t
            for a in range(1, mtry):
                key = perm[a]
                b = a - 1
                while b >= 0 and perm[b] > key:
                    perm[b + 1] = perm[b]
                    b -= 1
                perm[b + 1] = key

            best_score = parent_score
            for fj in range(mtry):
                f = perm[fj]
                lf = levels[f]
                if lf == 0:
                    for i in range(m):
                        r = rows[lo + i]
                        vbuf[i] = X[r, f]
                        if is_classification:
                            cbuf[i] = y_cls[r]
                        else:
                            ybuf[i] = y_reg[r]
                    order = np.argsort(vbuf[:m])
                    if is_classification:
                        for k in range(nc):
                            cls_left[k] = 0.0
                        for i in range(m - 1):
                            cls_left[cbuf[order[i]]] += 1.0
                            v_i = vbuf[order[i]]
                            v_next = vbuf[order[i + 1]]
                            if v_i < v_next:
                                n_l = i + 1
                                n_r = m - n_l
                                sl = 0.0
                                sr = 0.0
                                for k in range(nc):
                                    cl = cls_left[k]
                                    cr = cls_node[k] - cl
                                    sl += cl * cl
                                    sr += cr * cr
                                score = sl / n_l + sr / n_r
                                if score > best_score:
                                    thr = v_i + 0.5 * (v_next - v_i)
                                    if thr < v_i or thr >= v_next:
                                        thr = v_i
                                    best_score = score
                                    best_feat = f
                                    best_thr = thr
                                    best_mask = np.uint64(0)
                    else:
                        sl_y = 0.0
                        for i in range(m - 1):
                            sl_y += ybuf[order[i]]
                            v_i = vbuf[order[i]]
                            v_next = vbuf[order[i + 1]]
                            if v_i < v_next:
                                n_l = i + 1
                                n_r = m - n_l
                                sr_y = sum_y - sl_y
                                score = sl_y * sl_y / n_l + sr_y * sr_y / n_r
                                if score > best_score:
                                    thr = v_i + 0.5 * (v_next - v_i)
                                    if thr < v_i or thr >= v_next:
                                        thr = v_i
                                    best_score = score
                                    best_feat = f
                                    best_thr = thr
                                    best_mask = np.uint64(0)
                else:
                    # categorical: aggregate per level, order levels, then
                    # enumerate all binary partitions of the present levels
                    # (highest-ordered level pinned to the right side)
                    for l in range(lf):
                        lcnt[l] = 0
                        lsum[l] = 0.0
                        for k in range(nc):
                            lcls[l, k] = 0.0
                    for i in range(lo, hi):
                        r = rows[i]
                        l = np.int64(X[r, f])
                        lcnt[l] += 1
                        if is_classification:
                            lcls[l, y_cls[r]] += 1.0
                        else:
                            lsum[l] += y_reg[r]
                    n_present = 0
                    for l in range(lf):
                        if lcnt[l] > 0:
                            if is_classification:
                                lkey[n_present] = lcls[l, 0] / lcnt[l]
                            else:
                                lkey[n_present] = lsum[l] / lcnt[l]
                            lorder[n_present] = l
                            n_present += 1
                    if n_present < 2:
                        continue
                    for a in range(1, n_present):
                        keyv = lkey[a]
                        keyl = lorder[a]
                        b = a - 1
                        while b >= 0 and (
                            lkey[b] > keyv or (lkey[b] == keyv and lorder[b] > keyl)
                        ):
                            lkey[b + 1] = lkey[b]
                            lorder[b + 1] = lorder[b]
                            b -= 1
                        lkey[b + 1] = keyv
                        lorder[b + 1] = keyl
                    n_subsets = (1 << (n_present - 1)) - 1
                    for bits in range(1, n_subsets + 1):
                        n_l = 0
                        score = 0.0
                        if is_classification:
                            for k in range(nc):
                                cls_left[k] = 0.0
                            for j2 in range(n_present - 1):
                                if (bits >> j2) & 1:
                                    l = lorder[j2]
                                    n_l += lcnt[l]
                                    for k in range(nc):
                                        cls_left[k] += lcls[l, k]
                            n_r = m - n_l
                            sl = 0.0
                            sr = 0.0
                            for k in range(nc):
                                cl = cls_left[k]
                                cr = cls_node[k] - cl
                                sl += cl * cl
                                sr += cr * cr
                            score = sl / n_l + sr / n_r
                        else:
                            sl_y = 0.0
                            for j2 in range(n_present - 1):
                                if (bits >> j2) & 1:
                                    l = lorder[j2]
                                    n_l += lcnt[l]
                                    sl_y += lsum[l]
                            n_r = m - n_l
                            sr_y = sum_y - sl_y
                            score = sl_y * sl_y / n_l + sr_y * sr_y / n_r
                        if score > best_score:
                            mask = np.uint64(0)
                            for j2 in range(n_present - 1):
                                if (bits >> j2) & 1:
                                    mask |= _ONE << np.uint64(lorder[j2])
                            best_score = score
                            best_feat = f
                            best_thr = 0.0
                            best_mask = mask

        if best_feat < 0:
            if is_classification:
                for k in range(nc):
                    leaf_counts[node, k] = cls_node[k]
            else:
                leaf_value[node] = node_mean
            continue

        # stable partition of rows[lo:hi] by the chosen split
        lf = levels[best_feat]
        nl = 0
        for i in range(lo, hi):
            r = rows[i]
            if lf == 0:
                go_left = X[r, best_feat] <= best_thr
            else:
                go_left = (best_mask >> np.uint64(np.int64(X[r, best_feat]))) & _ONE != 0
            if go_left:
                tmp[nl] = r
                nl += 1
        k2 = nl
        for i in range(lo, hi):
            r = rows[i]
            if lf == 0:
                go_left = X[r, best_feat] <= best_thr
            else:
                go_left = (best_mask >> np.uint64(np.int64(X[r, best_feat]))) & _ONE != 0
            if not go_left:
                tmp[k2] = r
                k2 += 1
        for i in range(m):
            rows[lo + i] = tmp[i]

        feature[node] = best_feat
        threshold[node] = best_thr
        cat_mask[node] = best_mask
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        stack[sp, 0] = rid
        stack[sp, 1] = lo + nl
        stack[sp, 2] = hi
        stack[sp, 3] = depth + 1
        sp += 1
        stack[sp, 0] = lid
        stack[sp, 1] = lo
        stack[sp, 2] = lo + nl
        stack[sp, 3] = depth + 1
        sp += 1

    return (feature, threshold, cat_mask, left, right, leaf_value,
            leaf_counts, inbag, n_nodes)


@njit(cache=True)
def tree_apply(feature, threshold, cat_mask, left, right, levels, X):
    """Leaf node id for every row of X."""
    n = X.shape[0]
    out = np.empty(n, np.int32)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            f = feature[node]
            if levels[f] == 0:
                if X[i, f] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            else:
                lvl = np.uint64(np.int64(X[i, f]))
                if (cat_mask[node] >> lvl) & _ONE != 0:
                    node = left[node]
                else:
                    node = right[node]
        out[i] = node
    return out
