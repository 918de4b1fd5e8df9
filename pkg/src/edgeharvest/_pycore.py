"""Pure-Python kernels. Semantics match ``_core.pyx`` exactly.

These are the fallback when the compiled extension is unavailable and the
reference the compiled versions are tested against.
"""
import numpy as np

IDLE = 0
BUSY = 1
SAVE = 2

POLICY_UNIFORM = 0
POLICY_LONG_TERM = 1
POLICY_ADAPTIVE = 2


def gth_stationary(P):
    """Stationary vector of an irreducible row-stochastic matrix by GTH elimination.

    ``P`` (dense, float64, C-contiguous) is overwritten. Only sums and
    products of non-negative numbers are formed, so small entries of the
    result keep full relative accuracy.
    """
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    nz = P != 0.0
    # lowest index with a nonzero, per column (rows above the diagonal) and per row
    col_lo = np.where(nz.any(axis=0), nz.argmax(axis=0), np.arange(n))
    row_lo = np.where(nz.any(axis=1), nz.argmax(axis=1), np.arange(n))
    col_lo = np.minimum(col_lo, np.arange(n))
    row_lo = np.minimum(row_lo, np.arange(n))
    for k in range(n - 1, 0, -1):
        rl = row_lo[k]
        s = P[k, rl:k].sum() if rl < k else 0.0
        if not s > 0.0:
            raise ZeroDivisionError(f"state {k} has no path to lower states; chain is reducible")
        cl = col_lo[k]
        if cl >= k:
            continue
        col = P[cl:k, k] / s
        P[cl:k, k] = col
        P[cl:k, rl:k] += np.outer(col, P[k, rl:k])
        np.minimum(row_lo[cl:k], rl, out=row_lo[cl:k])
        np.minimum(col_lo[rl:k], cl, out=col_lo[rl:k])
    x = np.zeros(n)
    x[0] = 1.0
    tot = 1.0
    for j in range(1, n):
        lo = col_lo[j]
        x[j] = np.dot(x[lo:j], P[lo:j, j])
        tot += x[j]
        if tot > 1e280:
            # mass concentrated far from state 0; rescale before it overflows
            x[: j + 1] /= tot
            tot = 1.0
    return x / x.sum()


def _layer_weights(w, lt_w, mode, crit_mode, start, stop, policy, alpha):
    if policy == POLICY_UNIFORM:
        for d in range(start, stop):
            w[d] = 1.0
        return
    for d in range(start, stop):
        w[d] = lt_w[d]
    if policy != POLICY_ADAPTIVE:
        return
    n = stop - start
    a = alpha
    if a < 0.0:
        a = 0.0
        for d in range(start, stop):
            if mode[d] == crit_mode[d]:
                a += 1.0
    z = a / n
    for d in range(start, stop):
        if mode[d] == crit_mode[d]:
            w[d] = z * w[d]
    tot = 0.0
    for d in range(start, stop):
        tot += w[d]
    if tot <= 0.0:
        for d in range(start, stop):
            w[d] = lt_w[d]
        return
    for d in range(start, stop):
        w[d] = w[d] / tot


def _dispatch(u, w, gam, q, start, stop):
    tot = 0.0
    cnt = 0
    for d in range(start, stop):
        if gam[d] == 1 and q[d] == 0:
            tot += w[d]
            cnt += 1
    if cnt == 0:
        return -1
    if tot <= 0.0:
        k = int(u * cnt)
        if k >= cnt:
            k = cnt - 1
        for d in range(start, stop):
            if gam[d] == 1 and q[d] == 0:
                if k == 0:
                    return d
                k -= 1
    target = u * tot
    acc = 0.0
    last = -1
    for d in range(start, stop):
        if gam[d] == 1 and q[d] == 0:
            acc += w[d]
            last = d
            if target < acc:
                return d
    return last


def simulate(
    harvest,
    arrival_u,
    dispatch_u,
    layer_start,
    e_max,
    e_th,
    e_thp,
    e_lim,
    mode_at,
    kappa_of,
    ce_of,
    crit_mode,
    lt_w,
    policy,
    alpha,
    p,
    stage_acc,
    init_e,
    counts,
    dev_out,
    trace,
):
    """Run one replication of the slotted network. Returns
    ``(arrived, completed, dropped, inflight)``.

    With ``stage_acc`` the battery of a busy device is updated once, at
    the end of its stage, with the stage's harvest and full cost; otherwise
    the cost is spread over the stage's slots and every slot clamps.

    Per-device accumulators are added into ``dev_out`` (columns: downtime
    slots, low-energy slots, summed battery fraction), the mean battery
    fraction per slot into ``trace`` and stage-start state counts into
    ``counts`` when it has a non-zero first dimension.
    """
    T, D = harvest.shape
    L = layer_start.shape[0] - 1
    record = counts.shape[0] > 0
    E = [int(v) for v in init_e]
    gam = [1 if E[d] >= e_th[d] else 0 for d in range(D)]
    q = [0] * D
    busy = [0] * D
    stage_len = [0] * D
    stage_ce = [0] * D
    kind = [IDLE] * D
    mode = [0] * D
    buf = [0] * D
    w = [0.0] * D
    arrived = completed = dropped = 0

    for t in range(T):
        # stage boundaries
        for d in range(D):
            if busy[d] == 0:
                if gam[d] == 1 and q[d] == 1:
                    m = mode_at[d, E[d]]
                    mode[d] = m
                    busy[d] = kappa_of[d, m]
                    stage_len[d] = busy[d]
                    stage_ce[d] = ce_of[d, m]
                    q[d] = 0
                    kind[d] = BUSY
                    if record:
                        counts[d, E[d], 3] += 1
                elif gam[d] == 1:
                    kind[d] = IDLE
                    mode[d] = mode_at[d, E[d]]
                    if record:
                        counts[d, E[d], 1] += 1
                else:
                    kind[d] = SAVE
                    mode[d] = 0
                    if record:
                        counts[d, E[d], 2 * q[d]] += 1
        frac = 0.0
        for d in range(D):
            if gam[d] == 0:
                dev_out[d, 0] += 1.0
            if E[d] <= e_lim[d]:
                dev_out[d, 1] += 1.0
            f = E[d] / e_max[d]
            dev_out[d, 2] += f
            frac += f
        trace[t] += frac / D
        for ell in range(L):
            _layer_weights(w, lt_w, mode, crit_mode, layer_start[ell], layer_start[ell + 1], policy, alpha)

        # energy
        for d in range(D):
            c = 0
            h = harvest[t, d]
            if kind[d] == BUSY:
                if stage_acc:
                    # one battery update per stage, at its last slot
                    buf[d] += h
                    if busy[d] > 1:
                        continue
                    h = buf[d]
                    buf[d] = 0
                    c = stage_ce[d]
                else:
                    i = stage_len[d] - busy[d]
                    c = stage_ce[d] // stage_len[d]
                    if i < stage_ce[d] % stage_len[d]:
                        c += 1
            e = E[d] + h - c
            if e > e_max[d]:
                e = e_max[d]
            if e < 0:
                e = 0
            E[d] = e

        # new job into the first layer
        nu = 0
        if arrival_u[t] < p:
            arrived += 1
            dev = _dispatch(dispatch_u[t, nu], w, gam, q, layer_start[0], layer_start[1])
            nu += 1
            if dev < 0:
                dropped += 1
            else:
                q[dev] = 1

        # completions, forwarded hop by hop
        for ell in range(L):
            for d in range(layer_start[ell], layer_start[ell + 1]):
                if kind[d] == BUSY:
                    busy[d] -= 1
                    if busy[d] == 0:
                        if ell == L - 1:
                            completed += 1
                        else:
                            dev = _dispatch(
                                dispatch_u[t, nu], w, gam, q, layer_start[ell + 1], layer_start[ell + 2]
                            )
                            nu += 1
                            if dev < 0:
                                dropped += 1
                            else:
                                q[dev] = 1

        # hysteresis at stage ends
        for d in range(D):
            if kind[d] == BUSY:
                if busy[d] == 0 and E[d] < e_th[d]:
                    gam[d] = 0
            elif kind[d] == SAVE:
                if E[d] > e_thp[d]:
                    gam[d] = 1

    inflight = 0
    for d in range(D):
        inflight += q[d]
        if busy[d] > 0:
            inflight += 1
    return arrived, completed, dropped, inflight
