# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Operation-for-operation mirror of ``_pykernels``; the two must stay in sync so
both backends return bit-identical doubles. Build with ``-ffp-contract=off``.
"""

from libc.math cimport sqrt, pow, fabs, INFINITY

import numpy as np

DEF NMAX = 8
DEF MMAX = 256

cdef double FEAS_TOL = 1e-9
cdef double DEGEN_TOL = 1e-12
cdef double MULT_TOL = 1e-11
cdef double DIR_TOL = 1e-12
cdef double DEP_TOL = 1e-9
cdef double R_TOL = 1e-14
cdef int MAX_ITER = 500

OPTIMAL = 0
INFEASIBLE = 1
ITER_LIMIT = 2
NUMERICAL = 3

BACKEND = "cython"


cdef struct Problem:
    int n
    int mt
    double A[MMAX][NMAX]
    double b[MMAX]
    int tags[MMAX]
    double q[NMAX]
    double lo[NMAX]
    double hi[NMAX]


cdef inline double _dot(const double* a, const double* b, int n) noexcept nogil:
    cdef double acc = 0.0
    cdef int k
    for k in range(n):
        acc += a[k] * b[k]
    return acc


cdef inline double _viol_tol(double rhs) noexcept nogil:
    return 1e-12 * (1.0 + fabs(rhs))


cdef double _max_violation(Problem* P, const double* x) noexcept nogil:
    cdef double worst = 0.0, v
    cdef int i
    for i in range(P.mt):
        v = P.b[i] - _dot(P.A[i], x, P.n)
        if v > worst:
            worst = v
    return worst


cdef int _add_row(Problem* P, int m_user, int i, const double* row, double rhs) noexcept nogil:
    # returns 0 ok/dropped, 1 infeasible null row, 2 overflow
    cdef int k, n = P.n
    cdef double nn = _dot(row, row, n)
    if sqrt(nn) < DEGEN_TOL:
        if rhs > 0.0:
            return 1
        return 0
    if P.mt >= MMAX:
        return 2
    for k in range(n):
        P.A[P.mt][k] = row[k]
    P.b[P.mt] = rhs
    P.tags[P.mt] = i
    P.mt += 1
    return 0


cdef int _add_box(Problem* P, int m_user) noexcept nogil:
    cdef int k, j, n = P.n
    for k in range(n):
        if P.lo[k] > -INFINITY:
            if P.mt >= MMAX:
                return 2
            for j in range(n):
                P.A[P.mt][j] = 0.0
            P.A[P.mt][k] = 1.0
            P.b[P.mt] = P.lo[k]
            P.tags[P.mt] = m_user + 2 * k
            P.mt += 1
        if P.hi[k] < INFINITY:
            if P.mt >= MMAX:
                return 2
            for j in range(n):
                P.A[P.mt][j] = 0.0
            P.A[P.mt][k] = -1.0
            P.b[P.mt] = -P.hi[k]
            P.tags[P.mt] = m_user + 2 * k + 1
            P.mt += 1
    return 0


cdef void _box_center(Problem* P, double* c) noexcept nogil:
    cdef int k
    cdef bint l_fin, h_fin
    for k in range(P.n):
        c[k] = 0.0
        l_fin = P.lo[k] > -INFINITY
        h_fin = P.hi[k] < INFINITY
        if l_fin and h_fin:
            c[k] = 0.5 * (P.lo[k] + P.hi[k])
        elif l_fin:
            c[k] = P.lo[k]
        elif h_fin:
            c[k] = P.hi[k]


cdef int _add(int n, double J[NMAX][NMAX], double R[NMAX][NMAX], double* d, int iq,
              double* r_norm) noexcept nogil:
    cdef int j, k, i
    cdef double cc, ss, h, xny, t1, t2
    j = n - 1
    while j > iq:
        cc = d[j - 1]
        ss = d[j]
        h = sqrt(cc * cc + ss * ss)
        if h == 0.0:
            j -= 1
            continue
        d[j] = 0.0
        ss = ss / h
        cc = cc / h
        if cc < 0.0:
            cc = -cc
            ss = -ss
            d[j - 1] = -h
        else:
            d[j - 1] = h
        xny = ss / (1.0 + cc)
        for k in range(n):
            t1 = J[k][j - 1]
            t2 = J[k][j]
            J[k][j - 1] = t1 * cc + t2 * ss
            J[k][j] = xny * (t1 + J[k][j - 1]) - t2
        j -= 1
    for i in range(iq + 1):
        R[i][iq] = d[i]
    if fabs(d[iq]) <= DEP_TOL * r_norm[0]:
        return 0
    if fabs(d[iq]) > r_norm[0]:
        r_norm[0] = fabs(d[iq])
    return 1


cdef int _delete(int n, double J[NMAX][NMAX], double R[NMAX][NMAX], int* act, double* u,
                 int iq, int pos) noexcept nogil:
    cdef int i, j, k
    cdef double cc, ss, h, xny, t1, t2
    for i in range(pos, iq - 1):
        act[i] = act[i + 1]
        u[i] = u[i + 1]
        for j in range(n):
            R[j][i] = R[j][i + 1]
    act[iq - 1] = act[iq]
    u[iq - 1] = u[iq]
    act[iq] = 0
    u[iq] = 0.0
    for j in range(iq):
        R[j][iq - 1] = 0.0
    iq -= 1
    for j in range(pos, iq):
        cc = R[j][j]
        ss = R[j + 1][j]
        h = sqrt(cc * cc + ss * ss)
        if h == 0.0:
            continue
        cc = cc / h
        ss = ss / h
        R[j + 1][j] = 0.0
        if cc < 0.0:
            R[j][j] = -h
            cc = -cc
            ss = -ss
        else:
            R[j][j] = h
        xny = ss / (1.0 + cc)
        for k in range(j + 1, iq):
            t1 = R[j][k]
            t2 = R[j + 1][k]
            R[j][k] = t1 * cc + t2 * ss
            R[j + 1][k] = xny * (t1 + R[j][k]) - t2
        for k in range(n):
            t1 = J[k][j]
            t2 = J[k][j + 1]
            J[k][j] = t1 * cc + t2 * ss
            J[k][j + 1] = xny * (J[k][j] + t1) - t2
    return iq


cdef inline void _copy_act(const int* act, int iq, int* act_out, int* n_act) noexcept nogil:
    cdef int k
    if act_out == NULL:
        return
    for k in range(iq):
        act_out[k] = act[k]
    n_act[0] = iq


cdef int _phase1(Problem* P, double* x, double* viol, int* iters, int* act_out, int* n_act) noexcept nogil:
    cdef int n = P.n, mt = P.mt
    cdef double J[NMAX][NMAX]
    cdef double R[NMAX][NMAX]
    cdef int act[NMAX + 1]
    cdef double u[NMAX + 1]
    cdef double d[NMAX]
    cdef double z[NMAX]
    cdef double r[NMAX]
    cdef bint is_active[MMAX]
    cdef int iq = 0, it = 0, ip, i, j, k, pos, ok
    cdef double r_norm = 1.0, smin, s, acc, t1, t2, t, ratio, zz, sp, nn
    cdef double* npv
    for i in range(n):
        for j in range(n):
            J[i][j] = 0.0
            R[i][j] = 0.0
        J[i][i] = 1.0
    for i in range(n + 1):
        act[i] = 0
        u[i] = 0.0
    for i in range(mt):
        is_active[i] = False
    while True:
        it += 1
        if it > MAX_ITER:
            viol[0] = _max_violation(P, x)
            iters[0] = it
            _copy_act(act, iq, act_out, n_act)
            return 2
        ip = -1
        smin = 0.0
        for i in range(mt):
            if is_active[i]:
                continue
            s = _dot(P.A[i], x, n) - P.b[i]
            if s < -_viol_tol(P.b[i]) and s < smin:
                smin = s
                ip = i
        if ip < 0:
            viol[0] = _max_violation(P, x)
            iters[0] = it
            _copy_act(act, iq, act_out, n_act)
            return 0
        npv = P.A[ip]
        act[iq] = ip
        u[iq] = 0.0
        nn = _dot(npv, npv, n)
        while True:
            it += 1
            if it > MAX_ITER:
                viol[0] = _max_violation(P, x)
                iters[0] = it
                _copy_act(act, iq, act_out, n_act)
                return 2
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += J[k][j] * npv[k]
                d[j] = acc
            for k in range(n):
                acc = 0.0
                for j in range(iq, n):
                    acc += J[k][j] * d[j]
                z[k] = acc
            i = iq - 1
            while i >= 0:
                acc = d[i]
                for j in range(i + 1, iq):
                    acc -= R[i][j] * r[j]
                r[i] = acc / R[i][i]
                i -= 1
            t1 = INFINITY
            pos = -1
            for k in range(iq):
                if r[k] > R_TOL:
                    ratio = u[k] / r[k]
                    if ratio < t1:
                        t1 = ratio
                        pos = k
            zz = _dot(z, z, n)
            sp = _dot(npv, x, n) - P.b[ip]
            if zz > DEP_TOL * DEP_TOL * nn:
                t2 = -sp / _dot(z, npv, n)
                if t2 < 0.0:
                    t2 = 0.0
            else:
                t2 = INFINITY
            t = t1 if t1 < t2 else t2
            if t == INFINITY:
                viol[0] = _max_violation(P, x)
                iters[0] = it
                _copy_act(act, iq, act_out, n_act)
                if viol[0] <= FEAS_TOL:
                    return 0
                return 1
            if t2 == INFINITY:
                for k in range(iq):
                    u[k] -= t * r[k]
                u[iq] += t
                is_active[act[pos]] = False
                iq = _delete(n, J, R, act, u, iq, pos)
                continue
            for k in range(n):
                x[k] += t * z[k]
            for k in range(iq):
                u[k] -= t * r[k]
            u[iq] += t
            if t2 <= t1:
                ok = _add(n, J, R, d, iq, &r_norm)
                iq += 1
                if not ok:
                    viol[0] = _max_violation(P, x)
                    iters[0] = it
                    _copy_act(act, iq, act_out, n_act)
                    if viol[0] <= FEAS_TOL:
                        return 0
                    return 1
                is_active[ip] = True
                break
            is_active[act[pos]] = False
            iq = _delete(n, J, R, act, u, iq, pos)


cdef int _chol_solve(double M[NMAX][NMAX], const double* rhs, int k, double* lam) noexcept nogil:
    cdef double L[NMAX][NMAX]
    cdef double y[NMAX]
    cdef int i, j, t
    cdef double s
    for i in range(k):
        for j in range(k):
            L[i][j] = 0.0
    for i in range(k):
        for j in range(i + 1):
            s = M[i][j]
            for t in range(j):
                s -= L[i][t] * L[j][t]
            if i == j:
                if s <= 0.0:
                    return 0
                L[i][i] = sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    for i in range(k):
        s = rhs[i]
        for t in range(i):
            s -= L[i][t] * y[t]
        y[i] = s / L[i][i]
    i = k - 1
    while i >= 0:
        s = y[i]
        for t in range(i + 1, k):
            s -= L[t][i] * lam[t]
        lam[i] = s / L[i][i]
        i -= 1
    return 1


cdef int _primal_active_set(Problem* P, double* x, int* W, int* kw, int* iters) noexcept nogil:
    cdef int n = P.n, mt = P.mt
    cdef double anorm[MMAX]
    cdef bint in_w[MMAX]
    cdef double xs[NMAX]
    cdef double p[NMAX]
    cdef double M[NMAX][NMAX]
    cdef double bw[NMAX]
    cdef double lam[NMAX]
    cdef int it = 0, k = 0, i, j, t, blk, jmin
    cdef double acc, pn, alpha, ap, slack, ratio, lmin
    for i in range(mt):
        anorm[i] = sqrt(_dot(P.A[i], P.A[i], n))
        in_w[i] = False
    while True:
        it += 1
        if it > MAX_ITER:
            kw[0] = k
            iters[0] = it
            return 2
        for i in range(k):
            for j in range(i + 1):
                acc = 0.0
                for t in range(n):
                    acc += P.A[W[i]][t] * P.A[W[j]][t] / P.q[t]
                M[i][j] = acc
                M[j][i] = acc
        for i in range(k):
            bw[i] = P.b[W[i]]
        if not _chol_solve(M, bw, k, lam):
            kw[0] = k
            iters[0] = it
            return 3
        for t in range(n):
            acc = 0.0
            for i in range(k):
                acc += lam[i] * P.A[W[i]][t]
            xs[t] = acc / P.q[t]
        for t in range(n):
            p[t] = xs[t] - x[t]
        pn = sqrt(_dot(p, p, n))
        alpha = 1.0
        blk = -1
        if pn > 0.0:
            for i in range(mt):
                if in_w[i]:
                    continue
                ap = _dot(P.A[i], p, n)
                if ap < -DIR_TOL * anorm[i] * pn:
                    slack = _dot(P.A[i], x, n) - P.b[i]
                    if slack < 0.0:
                        slack = 0.0
                    ratio = slack / (-ap)
                    if ratio < alpha:
                        alpha = ratio
                        blk = i
        if blk < 0:
            for t in range(n):
                x[t] = xs[t]
            jmin = -1
            lmin = -MULT_TOL
            for i in range(k):
                if lam[i] < lmin or (jmin >= 0 and lam[i] == lmin and W[i] < W[jmin]):
                    lmin = lam[i]
                    jmin = i
            if jmin < 0:
                kw[0] = k
                iters[0] = it
                return 0
            in_w[W[jmin]] = False
            for i in range(jmin, k - 1):
                W[i] = W[i + 1]
            k -= 1
            continue
        for t in range(n):
            x[t] += alpha * p[t]
        W[k] = blk
        k += 1
        in_w[blk] = True


cdef int _scaled_projection(Problem* P, double* x, int* W, int* kw, int* iters) noexcept nogil:
    cdef Problem S
    cdef double sq[NMAX]
    cdef double y[NMAX]
    cdef double viol
    cdef int n = P.n, i, k, status
    for k in range(n):
        sq[k] = sqrt(P.q[k])
    S.n = n
    S.mt = P.mt
    for i in range(P.mt):
        for k in range(n):
            S.A[i][k] = P.A[i][k] / sq[k]
        S.b[i] = P.b[i]
    for k in range(n):
        y[k] = 0.0
    status = _phase1(&S, y, &viol, iters, W, kw)
    for k in range(n):
        x[k] = y[k] / sq[k]
    return status


cdef void _clamp_box(Problem* P, double* x) noexcept nogil:
    cdef int k
    for k in range(P.n):
        if x[k] < P.lo[k]:
            x[k] = P.lo[k]
        elif x[k] > P.hi[k]:
            x[k] = P.hi[k]


cdef int _solve(Problem* P, double* x, double* x0, int* W, int* kw, int* iters) noexcept nogil:
    # P is assembled; x receives the solution, x0 the phase-1 point
    cdef double viol
    cdef int it1 = 0, it2 = 0, it3 = 0, status, k
    _box_center(P, x0)
    status = _phase1(P, x0, &viol, &it1, NULL, NULL)
    for k in range(P.n):
        x[k] = x0[k]
    kw[0] = 0
    if status != 0:
        iters[0] = it1
        return status
    status = _primal_active_set(P, x, W, kw, &it2)
    if status != 0:
        # degenerate working set: redo phase 2 as a projection in scaled space
        status = _scaled_projection(P, x, W, kw, &it3)
        it2 += it3
        if status == 1:
            status = 3
    iters[0] = it1 + it2
    if status != 0:
        return status
    _clamp_box(P, x)
    return 0


cdef int _load(Problem* P, int n, const double[:, ::1] rows, const double[::1] rhs,
               const double[::1] lo, const double[::1] hi) except -1:
    cdef int m = rhs.shape[0], i, k, st
    if n > NMAX:
        raise ValueError("dimension exceeds compiled limit %d" % NMAX)
    P.n = n
    P.mt = 0
    for k in range(n):
        P.lo[k] = lo[k]
        P.hi[k] = hi[k]
    for i in range(m):
        st = _add_row(P, m, i, &rows[i, 0], rhs[i])
        if st == 1:
            return 1
        if st == 2:
            raise ValueError("too many constraint rows")
    if _add_box(P, m) == 2:
        raise ValueError("too many constraint rows")
    return 0


def _as_rows(rows, n):
    return np.ascontiguousarray(np.asarray(rows, dtype=np.float64).reshape(-1, n))


def feasible_point(int n, rows, rhs, lo, hi):
    """Phase 1. Returns ``(status, x, max_violation)``."""
    cdef Problem P
    cdef double x[NMAX]
    cdef double viol = 0.0
    cdef int it = 0, status, k
    cdef const double[:, ::1] rv = _as_rows(rows, n)
    cdef const double[::1] bv = np.ascontiguousarray(rhs, dtype=np.float64)
    lo_a = np.ascontiguousarray(lo, dtype=np.float64)
    hi_a = np.ascontiguousarray(hi, dtype=np.float64)
    if _load(&P, n, rv, bv, lo_a, hi_a) == 1:
        _box_center(&P, x)
        return 1, [x[k] for k in range(n)], INFINITY
    _box_center(&P, x)
    status = _phase1(&P, x, &viol, &it, NULL, NULL)
    return status, [x[k] for k in range(n)], viol


def solve_qp(int n, quad, rows, rhs, lo, hi):
    """Solve ``min 1/2 sum quad_k x_k^2`` s.t. rows and box.

    Returns ``(status, x, active_tags, phase1_point, iterations)``.
    """
    cdef Problem P
    cdef double x[NMAX]
    cdef double x0[NMAX]
    cdef int W[NMAX]
    cdef int kw = 0, it = 0, status, k
    cdef const double[:, ::1] rv = _as_rows(rows, n)
    cdef const double[::1] bv = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(quad, dtype=np.float64)
    lo_a = np.ascontiguousarray(lo, dtype=np.float64)
    hi_a = np.ascontiguousarray(hi, dtype=np.float64)
    for k in range(n):
        P.q[k] = qv[k]
    if _load(&P, n, rv, bv, lo_a, hi_a) == 1:
        _box_center(&P, x)
        c = [x[k] for k in range(n)]
        return 1, c, [], list(c), 0
    status = _solve(&P, x, x0, W, &kw, &it)
    xs = [x[k] for k in range(n)]
    x0s = [x0[k] for k in range(n)]
    if status != 0:
        return status, (x0s if status == 1 else xs), [], x0s, it
    active = sorted([P.tags[W[k]] for k in range(kw)])
    return 0, xs, active, x0s, it


def control_step(const double[:, ::1] pos, const double[:, ::1] vel, const double[:, ::1] goal,
                 const double[::1] radius, const signed char[::1] active,
                 const double[:, ::1] obs, const double[::1] obs_r, const double[:, ::1] params,
                 double sigma, double eps, double xi, double u_max, double tol=0.0):
    """Evaluate every active agent's controller on the same world snapshot.

    Returns ``(u, delta, feasible, ncons, violation)``; ``violation`` is
    ``None`` or ``(agent, kind, other, h)`` with kind 1 = agent, 2 = obstacle.
    """
    cdef int n_agents = pos.shape[0], n_obs = obs.shape[0]
    cdef int i, j, l, status, kw, it, nrows
    cdef double sig2 = sigma * sigma
    cdef double px, py, ri, ex, ey, V, dx, dy, d2, s, h, st
    cdef double za, ea, zo, eo
    cdef double row[3]
    cdef double x[NMAX]
    cdef double x0[NMAX]
    cdef int W[NMAX]
    cdef Problem P
    u_a = np.zeros((n_agents, 2))
    delta_a = np.zeros(n_agents)
    feas_a = np.ones(n_agents, dtype=np.int8)
    ncons_a = np.zeros(n_agents, dtype=np.int64)
    cdef double[:, ::1] u = u_a
    cdef double[::1] delta = delta_a
    cdef signed char[::1] feasible = feas_a
    cdef long long[::1] ncons = ncons_a
    if 1 + n_agents + n_obs + 4 > MMAX:
        raise ValueError("too many constraint rows")
    P.n = 3
    for i in range(n_agents):
        if not active[i]:
            continue
        za = params[i, 0]
        ea = params[i, 1]
        zo = params[i, 2]
        eo = params[i, 3]
        P.q[0] = 1.0
        P.q[1] = 1.0
        P.q[2] = xi
        P.lo[0] = -u_max
        P.lo[1] = -u_max
        P.lo[2] = -INFINITY
        P.hi[0] = u_max
        P.hi[1] = u_max
        P.hi[2] = INFINITY
        P.mt = 0
        nrows = 0
        status = 0
        px = pos[i, 0]
        py = pos[i, 1]
        ri = radius[i]
        ex = px - goal[i, 0]
        ey = py - goal[i, 1]
        V = ex * ex + ey * ey
        row[0] = -2.0 * ex
        row[1] = -2.0 * ey
        row[2] = -1.0
        if _add_row(&P, 0, nrows, row, eps * V) == 1:
            status = 1
        nrows += 1
        for j in range(n_agents):
            if j == i:
                continue
            dx = px - pos[j, 0]
            dy = py - pos[j, 1]
            d2 = dx * dx + dy * dy
            if d2 > sig2:
                continue
            s = ri + radius[j]
            h = d2 - s * s
            if h < 0.0:
                st = s - tol
                if st <= 0.0 or d2 < st * st:
                    return u_a, delta_a, feas_a, ncons_a, (i, 1, j, h)
                h = 0.0
            row[0] = 2.0 * dx
            row[1] = 2.0 * dy
            row[2] = 0.0
            if _add_row(&P, 0, nrows, row, 2.0 * (dx * vel[j, 0] + dy * vel[j, 1]) - za * pow(h, ea)) == 1:
                status = 1
            nrows += 1
        for l in range(n_obs):
            dx = px - obs[l, 0]
            dy = py - obs[l, 1]
            d2 = dx * dx + dy * dy
            if d2 > sig2:
                continue
            s = ri + obs_r[l]
            h = d2 - s * s
            if h < 0.0:
                st = s - tol
                if st <= 0.0 or d2 < st * st:
                    return u_a, delta_a, feas_a, ncons_a, (i, 2, l, h)
                h = 0.0
            row[0] = 2.0 * dx
            row[1] = 2.0 * dy
            row[2] = 0.0
            if _add_row(&P, 0, nrows, row, -(zo * pow(h, eo))) == 1:
                status = 1
            nrows += 1
        ncons[i] = nrows - 1
        if status == 0:
            _add_box(&P, nrows)
            status = _solve(&P, x, x0, W, &kw, &it)
        if status == 0:
            u[i, 0] = x[0]
            u[i, 1] = x[1]
            delta[i] = x[2]
            feasible[i] = 1
        elif status == 1:
            u[i, 0] = 0.0
            u[i, 1] = 0.0
            delta[i] = 0.0
            feasible[i] = 0
        else:
            raise RuntimeError("QP solver failed with status %d" % status)
    return u_a, delta_a, feas_a, ncons_a, None
