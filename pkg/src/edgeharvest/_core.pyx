# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Semantics match ``_pycore.py`` line for line."""
import numpy as np

cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    IDLE = 0
    BUSY = 1
    SAVE = 2
    POLICY_UNIFORM = 0
    POLICY_ADAPTIVE = 2


def gth_stationary(double[:, ::1] P):
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t i, j, k, rl, cl, lo
    cdef double s, c, pkj
    if n == 1:
        return np.ones(1)
    cdef cnp.int64_t[::1] col_lo = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] row_lo = np.empty(n, dtype=np.int64)
    for i in range(n):
        col_lo[i] = i
        row_lo[i] = i
    for i in range(n):
        for j in range(n):
            if P[i, j] != 0.0:
                if j < row_lo[i]:
                    row_lo[i] = j
                if i < col_lo[j]:
                    col_lo[j] = i
    for k in range(n - 1, 0, -1):
        rl = row_lo[k]
        s = 0.0
        for j in range(rl, k):
            s += P[k, j]
        if not s > 0.0:
            raise ZeroDivisionError(f"state {k} has no path to lower states; chain is reducible")
        cl = col_lo[k]
        if cl >= k:
            continue
        for i in range(cl, k):
            c = P[i, k] / s
            P[i, k] = c
            if c != 0.0:
                for j in range(rl, k):
                    P[i, j] += c * P[k, j]
        for i in range(cl, k):
            if row_lo[i] > rl:
                row_lo[i] = rl
        for j in range(rl, k):
            if col_lo[j] > cl:
                col_lo[j] = cl
    x_arr = np.zeros(n)
    cdef double[::1] x = x_arr
    cdef double acc, tot
    x[0] = 1.0
    tot = 1.0
    for j in range(1, n):
        lo = col_lo[j]
        acc = 0.0
        for i in range(lo, j):
            acc += x[i] * P[i, j]
        x[j] = acc
        tot += acc
        if tot > 1e280:
            # mass concentrated far from state 0; rescale before it overflows
            for i in range(j + 1):
                x[i] /= tot
            tot = 1.0
    for j in range(n):
        x[j] /= tot
    return x_arr


cdef void _layer_weights(double* w, const double[::1] lt_w, long* mode, const cnp.int64_t[::1] crit_mode,
                         Py_ssize_t start, Py_ssize_t stop, int policy, double alpha) noexcept nogil:
    cdef Py_ssize_t d
    cdef double a, z, tot
    if policy == POLICY_UNIFORM:
        for d in range(start, stop):
            w[d] = 1.0
        return
    for d in range(start, stop):
        w[d] = lt_w[d]
    if policy != POLICY_ADAPTIVE:
        return
    a = alpha
    if a < 0.0:
        a = 0.0
        for d in range(start, stop):
            if mode[d] == crit_mode[d]:
                a += 1.0
    z = a / (stop - start)
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


cdef long _dispatch(double u, double* w, long* gam, long* q, Py_ssize_t start, Py_ssize_t stop) noexcept nogil:
    cdef Py_ssize_t d
    cdef double tot = 0.0, target, acc
    cdef long cnt = 0, k, last = -1
    for d in range(start, stop):
        if gam[d] == 1 and q[d] == 0:
            tot += w[d]
            cnt += 1
    if cnt == 0:
        return -1
    if tot <= 0.0:
        k = <long>(u * cnt)
        if k >= cnt:
            k = cnt - 1
        for d in range(start, stop):
            if gam[d] == 1 and q[d] == 0:
                if k == 0:
                    return d
                k -= 1
    target = u * tot
    acc = 0.0
    for d in range(start, stop):
        if gam[d] == 1 and q[d] == 0:
            acc += w[d]
            last = d
            if target < acc:
                return d
    return last


def simulate(
    const cnp.int64_t[:, ::1] harvest,
    const double[::1] arrival_u,
    const double[:, ::1] dispatch_u,
    const cnp.int64_t[::1] layer_start,
    const cnp.int64_t[::1] e_max,
    const cnp.int64_t[::1] e_th,
    const cnp.int64_t[::1] e_thp,
    const cnp.int64_t[::1] e_lim,
    const cnp.int64_t[:, ::1] mode_at,
    const cnp.int64_t[:, ::1] kappa_of,
    const cnp.int64_t[:, ::1] ce_of,
    const cnp.int64_t[::1] crit_mode,
    const double[::1] lt_w,
    int policy,
    double alpha,
    double p,
    int stage_acc,
    const cnp.int64_t[::1] init_e,
    cnp.int64_t[:, :, ::1] counts,
    double[:, ::1] dev_out,
    double[::1] trace,
):
    cdef Py_ssize_t T = harvest.shape[0]
    cdef Py_ssize_t D = harvest.shape[1]
    cdef Py_ssize_t L = layer_start.shape[0] - 1
    cdef bint record = counts.shape[0] > 0
    cdef Py_ssize_t t, d, ell, nu, i
    cdef long m, dev, c, e, h
    cdef long arrived = 0, completed = 0, dropped = 0, inflight = 0
    cdef double frac, f

    cdef long* E = <long*> malloc(D * sizeof(long))
    cdef long* gam = <long*> malloc(D * sizeof(long))
    cdef long* q = <long*> malloc(D * sizeof(long))
    cdef long* busy = <long*> malloc(D * sizeof(long))
    cdef long* stage_len = <long*> malloc(D * sizeof(long))
    cdef long* stage_ce = <long*> malloc(D * sizeof(long))
    cdef long* kind = <long*> malloc(D * sizeof(long))
    cdef long* mode = <long*> malloc(D * sizeof(long))
    cdef long* buf = <long*> malloc(D * sizeof(long))
    cdef double* w = <double*> malloc(D * sizeof(double))
    if not (E and gam and q and busy and stage_len and stage_ce and kind and mode and buf and w):
        raise MemoryError()
    try:
        with nogil:
            for d in range(D):
                E[d] = init_e[d]
                gam[d] = 1 if E[d] >= e_th[d] else 0
                q[d] = 0
                busy[d] = 0
                stage_len[d] = 0
                stage_ce[d] = 0
                kind[d] = IDLE
                mode[d] = 0
                buf[d] = 0
                w[d] = 0.0

            for t in range(T):
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
                    f = (<double> E[d]) / e_max[d]
                    dev_out[d, 2] += f
                    frac += f
                trace[t] += frac / D
                for ell in range(L):
                    _layer_weights(w, lt_w, mode, crit_mode, layer_start[ell], layer_start[ell + 1], policy, alpha)

                for d in range(D):
                    c = 0
                    h = harvest[t, d]
                    if kind[d] == BUSY:
                        if stage_acc:
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

                nu = 0
                if arrival_u[t] < p:
                    arrived += 1
                    dev = _dispatch(dispatch_u[t, nu], w, gam, q, layer_start[0], layer_start[1])
                    nu += 1
                    if dev < 0:
                        dropped += 1
                    else:
                        q[dev] = 1

                for ell in range(L):
                    for d in range(layer_start[ell], layer_start[ell + 1]):
                        if kind[d] == BUSY:
                            busy[d] -= 1
                            if busy[d] == 0:
                                if ell == L - 1:
                                    completed += 1
                                else:
                                    dev = _dispatch(dispatch_u[t, nu], w, gam, q,
                                                    layer_start[ell + 1], layer_start[ell + 2])
                                    nu += 1
                                    if dev < 0:
                                        dropped += 1
                                    else:
                                        q[dev] = 1

                for d in range(D):
                    if kind[d] == BUSY:
                        if busy[d] == 0 and E[d] < e_th[d]:
                            gam[d] = 0
                    elif kind[d] == SAVE:
                        if E[d] > e_thp[d]:
                            gam[d] = 1

            for d in range(D):
                inflight += q[d]
                if busy[d] > 0:
                    inflight += 1
    finally:
        free(E); free(gam); free(q); free(busy); free(stage_len)
        free(stage_ce); free(kind); free(mode); free(buf); free(w)
    return arrived, completed, dropped, inflight
