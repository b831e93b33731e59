"""Compiled inner loops for sum-of-trees samplers.

Trees are stored in heap layout (children of node ``k`` at ``2k+1`` and
``2k+2``) with a state code per node: 0 absent, 1 leaf, 2 internal.
Covariates arrive pre-binned as small integers: for ordinal columns a split
``rule`` sends ``bin <= rule`` left, for categorical columns ``rule`` is a
bitmask of the levels sent left.

A forest contributes ``h_i * g(x_i)`` to unit ``i``'s mean, where ``h`` is
a fixed basis (all ones, or the treatment indicator for an effect forest).
Residual precision of unit ``i`` is ``wt_i / sigma2``.
"""
import math

import numba as nb
import numpy as np

ABSENT = 0
LEAF = 1
INTERNAL = 2


@nb.njit(cache=True)
def seed_rng(s):
    np.random.seed(s)


@nb.njit(cache=True)
def _depth(k):
    d = 0
    k += 1
    while k > 1:
        k >>= 1
        d += 1
    return d


@nb.njit(cache=True)
def _p_split(depth, alpha, beta, max_depth):
    if depth >= max_depth:
        return 0.0
    return alpha * (1.0 + depth) ** (-beta)


@nb.njit(cache=True)
def _goes_left(b, cat, rule):
    if cat:
        return ((rule >> b) & 1) == 1
    return b <= rule


@nb.njit(cache=True)
def _log_ml(A, B, leaf_var):
    P = 1.0 / leaf_var + A
    return -0.5 * math.log(leaf_var * P) + 0.5 * B * B / P


@nb.njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@nb.njit(cache=True)
def _node_ranges(Xb, is_cat, idx, nn, lo, hi, mask, avail):
    p = Xb.shape[1]
    for v in range(p):
        lo[v] = 1 << 30
        hi[v] = -1
        mask[v] = 0
    for q in range(nn):
        i = idx[q]
        for v in range(p):
            b = Xb[i, v]
            if is_cat[v]:
                mask[v] |= np.int64(1) << b
            else:
                if b < lo[v]:
                    lo[v] = b
                if b > hi[v]:
                    hi[v] = b
    n_avail = 0
    for v in range(p):
        if is_cat[v]:
            ok = _popcount(mask[v]) >= 2
        else:
            ok = hi[v] > lo[v]
        avail[v] = ok
        if ok:
            n_avail += 1
    return n_avail


@nb.njit(cache=True)
def _draw_rule(cat, lo_v, hi_v, mask_v):
    if not cat:
        return np.int64(lo_v + np.random.randint(0, hi_v - lo_v))
    levels = np.empty(64, np.int64)
    L = 0
    for b in range(63):
        if (mask_v >> b) & 1:
            levels[L] = b
            L += 1
    # subsets that contain the first present level, excluding the full set
    s = np.random.randint(0, (np.int64(1) << (L - 1)) - 1)
    rule = np.int64(1) << levels[0]
    for j in range(L - 1):
        if (s >> j) & 1:
            rule |= np.int64(1) << levels[j + 1]
    return rule


@nb.njit(cache=True)
def _pick_var(avail, n_avail):
    target = np.random.randint(0, n_avail)
    for v in range(avail.size):
        if avail[v]:
            if target == 0:
                return v
            target -= 1
    return -1


@nb.njit(cache=True)
def _split_stats(Xb, is_cat, h, wt, r, idx, nn, v, rule, sigma2, out):
    # out: AL, BL, AR, BR, effL, effR, nL, nR
    for j in range(8):
        out[j] = 0.0
    cat = is_cat[v]
    for q in range(nn):
        i = idx[q]
        hw = wt[i] * h[i]
        a_ = hw * h[i] / sigma2
        b_ = hw * r[i] / sigma2
        if _goes_left(Xb[i, v], cat, rule):
            out[0] += a_
            out[1] += b_
            out[6] += 1.0
            if h[i] != 0.0:
                out[4] += 1.0
        else:
            out[2] += a_
            out[3] += b_
            out[7] += 1.0
            if h[i] != 0.0:
                out[5] += 1.0


@nb.njit(cache=True)
def update_forest(Xb, is_cat, h, wt, y, ftot, state, var, rule, val, leaf_of, tree_max,
                  sigma2, alpha, beta, leaf_sd, max_depth, min_eff,
                  r, idx, lo, hi, mask, avail, sA, sB, nodes, stats, counts):
    """One Metropolis-within-Gibbs pass over every tree.

    ``ftot`` holds this forest's current contribution ``h * g(x)`` and is
    updated in place; ``y`` is the target with all other components removed.
    ``counts`` accumulates [proposed, accepted] per move type
    (grow, prune, change).
    """
    m = state.shape[0]
    n = y.size
    leaf_var = leaf_sd * leaf_sd
    for t in range(m):
        for i in range(n):
            r[i] = y[i] - ftot[i] + h[i] * val[t, leaf_of[t, i]]
        # leaves and prunable nodes (internal nodes with two leaf children)
        n_leaf = 0
        n_nog = 0
        top = tree_max[t]
        for k in range(top + 1):
            if state[t, k] == LEAF:
                nodes[n_leaf] = k
                n_leaf += 1
        nog_base = n_leaf
        for k in range(top + 1):
            if state[t, k] == INTERNAL and state[t, 2 * k + 1] == LEAF \
                    and state[t, 2 * k + 2] == LEAF:
                nodes[nog_base + n_nog] = k
                n_nog += 1
        u = np.random.random()
        if u < 0.25:
            counts[0, 0] += 1
            eta = nodes[np.random.randint(0, n_leaf)]
            d = _depth(eta)
            if d < max_depth:
                nn = 0
                for i in range(n):
                    if leaf_of[t, i] == eta:
                        idx[nn] = i
                        nn += 1
                n_av = _node_ranges(Xb, is_cat, idx, nn, lo, hi, mask, avail)
                if n_av > 0:
                    v = _pick_var(avail, n_av)
                    rl = _draw_rule(is_cat[v], lo[v], hi[v], mask[v])
                    _split_stats(Xb, is_cat, h, wt, r, idx, nn, v, rl, sigma2, stats)
                    if stats[4] >= min_eff and stats[5] >= min_eff \
                            and stats[6] > 0 and stats[7] > 0:
                        A = stats[0] + stats[2]
                        B = stats[1] + stats[3]
                        lr = (_log_ml(stats[0], stats[1], leaf_var)
                              + _log_ml(stats[2], stats[3], leaf_var)
                              - _log_ml(A, B, leaf_var))
                        ps = _p_split(d, alpha, beta, max_depth)
                        pc = _p_split(d + 1, alpha, beta, max_depth)
                        nog_new = n_nog + 1
                        if eta > 0:
                            sib = eta + 1 if eta % 2 == 1 else eta - 1
                            if state[t, sib] == LEAF:
                                nog_new -= 1
                        log_a = (lr + math.log(ps) + 2.0 * math.log(1.0 - pc)
                                 - math.log(1.0 - ps) + math.log(n_leaf) - math.log(nog_new))
                        if math.log(np.random.random()) < log_a:
                            counts[0, 1] += 1
                            lc = 2 * eta + 1
                            state[t, eta] = INTERNAL
                            var[t, eta] = v
                            rule[t, eta] = rl
                            state[t, lc] = LEAF
                            state[t, lc + 1] = LEAF
                            if lc + 1 > tree_max[t]:
                                tree_max[t] = lc + 1
                            cat = is_cat[v]
                            for q in range(nn):
                                i = idx[q]
                                if _goes_left(Xb[i, v], cat, rl):
                                    leaf_of[t, i] = lc
                                else:
                                    leaf_of[t, i] = lc + 1
        elif u < 0.5:
            counts[1, 0] += 1
            if n_nog > 0:
                eta = nodes[nog_base + np.random.randint(0, n_nog)]
                d = _depth(eta)
                lc = 2 * eta + 1
                AL = 0.0
                BL = 0.0
                AR = 0.0
                BR = 0.0
                for i in range(n):
                    k = leaf_of[t, i]
                    if k == lc or k == lc + 1:
                        hw = wt[i] * h[i]
                        if k == lc:
                            AL += hw * h[i] / sigma2
                            BL += hw * r[i] / sigma2
                        else:
                            AR += hw * h[i] / sigma2
                            BR += hw * r[i] / sigma2
                lr = (_log_ml(AL + AR, BL + BR, leaf_var) - _log_ml(AL, BL, leaf_var)
                      - _log_ml(AR, BR, leaf_var))
                ps = _p_split(d, alpha, beta, max_depth)
                pc = _p_split(d + 1, alpha, beta, max_depth)
                log_a = (lr + math.log(1.0 - ps) - math.log(ps) - 2.0 * math.log(1.0 - pc)
                         + math.log(n_nog) - math.log(n_leaf - 1))
                if math.log(np.random.random()) < log_a:
                    counts[1, 1] += 1
                    state[t, eta] = LEAF
                    var[t, eta] = -1
                    rule[t, eta] = 0
                    state[t, lc] = ABSENT
                    state[t, lc + 1] = ABSENT
                    for i in range(n):
                        k = leaf_of[t, i]
                        if k == lc or k == lc + 1:
                            leaf_of[t, i] = eta
        else:
            counts[2, 0] += 1
            if n_nog > 0:
                eta = nodes[nog_base + np.random.randint(0, n_nog)]
                lc = 2 * eta + 1
                nn = 0
                AL = 0.0
                BL = 0.0
                AR = 0.0
                BR = 0.0
                for i in range(n):
                    k = leaf_of[t, i]
                    if k == lc or k == lc + 1:
                        idx[nn] = i
                        nn += 1
                        hw = wt[i] * h[i]
                        if k == lc:
                            AL += hw * h[i] / sigma2
                            BL += hw * r[i] / sigma2
                        else:
                            AR += hw * h[i] / sigma2
                            BR += hw * r[i] / sigma2
                n_av = _node_ranges(Xb, is_cat, idx, nn, lo, hi, mask, avail)
                v = _pick_var(avail, n_av)
                rl = _draw_rule(is_cat[v], lo[v], hi[v], mask[v])
                _split_stats(Xb, is_cat, h, wt, r, idx, nn, v, rl, sigma2, stats)
                if stats[4] >= min_eff and stats[5] >= min_eff \
                        and stats[6] > 0 and stats[7] > 0:
                    lr = (_log_ml(stats[0], stats[1], leaf_var)
                          + _log_ml(stats[2], stats[3], leaf_var)
                          - _log_ml(AL, BL, leaf_var) - _log_ml(AR, BR, leaf_var))
                    if math.log(np.random.random()) < lr:
                        counts[2, 1] += 1
                        var[t, eta] = v
                        rule[t, eta] = rl
                        cat = is_cat[v]
                        for q in range(nn):
                            i = idx[q]
                            if _goes_left(Xb[i, v], cat, rl):
                                leaf_of[t, i] = lc
                            else:
                                leaf_of[t, i] = lc + 1
        # conjugate leaf draws
        top = tree_max[t]
        for k in range(top + 1):
            sA[k] = 0.0
            sB[k] = 0.0
        for i in range(n):
            k = leaf_of[t, i]
            hw = wt[i] * h[i]
            sA[k] += hw * h[i] / sigma2
            sB[k] += hw * r[i] / sigma2
        for k in range(top + 1):
            if state[t, k] == LEAF:
                P = 1.0 / leaf_var + sA[k]
                val[t, k] = sB[k] / P + np.random.standard_normal() / math.sqrt(P)
        for i in range(n):
            ftot[i] = y[i] - r[i] + h[i] * val[t, leaf_of[t, i]]


@nb.njit(cache=True)
def draw_sigma2(resid, wt, nu, lam):
    ssr = 0.0
    for i in range(resid.size):
        ssr += wt[i] * resid[i] * resid[i]
    return (nu * lam + ssr) / np.random.chisquare(nu + resid.size)


@nb.njit(cache=True)
def _rtnorm_above(a):
    # standard normal conditioned on x > a
    if a < 0.45:
        while True:
            x = np.random.standard_normal()
            if x > a:
                return x
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        x = a + np.random.exponential(1.0 / alpha)
        if np.random.random() <= math.exp(-0.5 * (x - alpha) ** 2):
            return x


@nb.njit(cache=True)
def draw_latent(z, ybin, mean):
    for i in range(z.size):
        m = mean[i]
        if ybin[i] == 1:
            z[i] = m + _rtnorm_above(-m)
        else:
            z[i] = m - _rtnorm_above(m)


@nb.njit(cache=True)
def compact(state, var, rule, val, tree_max):
    """Copy a forest into breadth-first arrays with left-child pointers
    (right child = left + 1, -1 marks a leaf)."""
    m = state.shape[0]
    total = 0
    for t in range(m):
        for k in range(tree_max[t] + 1):
            if state[t, k] != ABSENT:
                total += 1
    o_var = np.empty(total, np.int32)
    o_rule = np.empty(total, np.int64)
    o_val = np.empty(total, np.float64)
    o_child = np.empty(total, np.int32)
    starts = np.empty(m, np.int64)
    queue = np.empty(state.shape[1], np.int64)
    pos = 0
    for t in range(m):
        starts[t] = pos
        queue[0] = 0
        head = 0
        tail = 1
        while head < tail:
            k = queue[head]
            p = pos + head
            if state[t, k] == INTERNAL:
                o_var[p] = var[t, k]
                o_rule[p] = rule[t, k]
                o_val[p] = 0.0
                o_child[p] = pos + tail
                queue[tail] = 2 * k + 1
                queue[tail + 1] = 2 * k + 2
                tail += 2
            else:
                o_var[p] = -1
                o_rule[p] = 0
                o_val[p] = val[t, k]
                o_child[p] = -1
            head += 1
        pos += tail
    return o_var, o_rule, o_val, o_child, starts


@nb.njit(cache=True)
def predict_draws(Xb, is_cat, n_var, n_rule, n_val, n_child, starts, n_draws, n_trees):
    n = Xb.shape[0]
    out = np.zeros((n_draws, n))
    for d in range(n_draws):
        for t in range(n_trees):
            root = starts[d * n_trees + t]
            for i in range(n):
                p = root
                while n_var[p] >= 0:
                    v = n_var[p]
                    if _goes_left(Xb[i, v], is_cat[v], n_rule[p]):
                        p = n_child[p]
                    else:
                        p = n_child[p] + 1
                out[d, i] += n_val[p]
    return out


@nb.njit(cache=True)
def predict_trees(Xb, is_cat, n_var, n_rule, n_val, n_child, starts, draw, n_trees):
    n = Xb.shape[0]
    out = np.zeros((n_trees, n))
    for t in range(n_trees):
        root = starts[draw * n_trees + t]
        for i in range(n):
            p = root
            while n_var[p] >= 0:
                v = n_var[p]
                if _goes_left(Xb[i, v], is_cat[v], n_rule[p]):
                    p = n_child[p]
                else:
                    p = n_child[p] + 1
            out[t, i] = n_val[p]
    return out


@nb.njit(cache=True)
def leaf_depths(n_var, n_child, starts, n_total):
    """Depth of every leaf across all stored trees."""
    depth = np.zeros(n_total, np.int32)
    out = np.empty(n_total, np.int32)
    n_out = 0
    is_root = np.zeros(n_total, np.bool_)
    for s in starts:
        is_root[s] = True
    for p in range(n_total):
        if is_root[p]:
            depth[p] = 0
        if n_var[p] >= 0:
            c = n_child[p]
            depth[c] = depth[p] + 1
            depth[c + 1] = depth[p] + 1
        else:
            out[n_out] = depth[p]
            n_out += 1
    return out[:n_out]
