"""Pure-Python hot kernels.

This module is the fallback for ``_ckernels`` and mirrors it operation for
operation, so both backends produce bit-identical doubles. Keep the two files
in sync: same loop orders, same accumulation orders, no ``sum()`` or
``math.hypot`` (their rounding differs from the C code).

Row convention everywhere: ``coeffs . x >= rhs``.
"""

import math

import numpy as np

INF = math.inf

FEAS_TOL = 1e-9
DEGEN_TOL = 1e-12
MULT_TOL = 1e-11
DIR_TOL = 1e-12
DEP_TOL = 1e-9
R_TOL = 1e-14
MAX_ITER = 500

OPTIMAL = 0
INFEASIBLE = 1
ITER_LIMIT = 2
NUMERICAL = 3

BACKEND = "python"


def _dot(a, b, n):
    acc = 0.0
    for k in range(n):
        acc += a[k] * b[k]
    return acc


def _viol_tol(rhs):
    return 1e-12 * (1.0 + abs(rhs))


def _assemble(n, rows, rhs, lo, hi):
    """Drop null rows and append finite box faces.

    Returns ``(A, b, tags)`` or ``None`` when a null row demands ``0 >= rhs > 0``.
    Tags map back to caller indices: user rows keep their index ``i``; the box
    face ``x_k >= lo_k`` is ``m + 2k`` and ``-x_k >= -hi_k`` is ``m + 2k + 1``.
    """
    m = len(rhs)
    A = []
    b = []
    tags = []
    for i in range(m):
        row = [float(rows[i][k]) for k in range(n)]
        nn = _dot(row, row, n)
        if math.sqrt(nn) < DEGEN_TOL:
            if rhs[i] > 0.0:
                return None
            continue
        A.append(row)
        b.append(float(rhs[i]))
        tags.append(i)
    for k in range(n):
        if lo[k] > -INF:
            row = [0.0] * n
            row[k] = 1.0
            A.append(row)
            b.append(float(lo[k]))
            tags.append(m + 2 * k)
        if hi[k] < INF:
            row = [0.0] * n
            row[k] = -1.0
            A.append(row)
            b.append(-float(hi[k]))
            tags.append(m + 2 * k + 1)
    return A, b, tags


def _box_center(n, lo, hi):
    c = [0.0] * n
    for k in range(n):
        l_fin = lo[k] > -INF
        h_fin = hi[k] < INF
        if l_fin and h_fin:
            c[k] = 0.5 * (lo[k] + hi[k])
        elif l_fin:
            c[k] = float(lo[k])
        elif h_fin:
            c[k] = float(hi[k])
    return c


def _max_violation(A, b, x, n):
    worst = 0.0
    for i in range(len(A)):
        v = b[i] - _dot(A[i], x, n)
        if v > worst:
            worst = v
    return worst


def _phase1(n, A, b, c):
    """Euclidean projection of ``c`` onto ``{x : A x >= b}``.

    Dual active-set method (Goldfarb-Idnani) with identity Hessian, so the
    infeasibility decision is exact up to the dependency tolerance.
    Returns ``(status, x, max_violation, iterations, active_rows)``.
    """
    mt = len(A)
    x = list(c)
    J = [[0.0] * n for _ in range(n)]
    for k in range(n):
        J[k][k] = 1.0
    R = [[0.0] * n for _ in range(n)]
    act = [0] * (n + 1)
    u = [0.0] * (n + 1)
    d = [0.0] * n
    z = [0.0] * n
    r = [0.0] * n
    is_active = [False] * mt
    iq = 0
    r_norm = 1.0
    it = 0
    while True:
        it += 1
        if it > MAX_ITER:
            return ITER_LIMIT, x, _max_violation(A, b, x, n), it, act[:iq]
        ip = -1
        smin = 0.0
        for i in range(mt):
            if is_active[i]:
                continue
            s = _dot(A[i], x, n) - b[i]
            if s < -_viol_tol(b[i]) and s < smin:
                smin = s
                ip = i
        if ip < 0:
            return OPTIMAL, x, _max_violation(A, b, x, n), it, act[:iq]
        npv = A[ip]
        act[iq] = ip
        u[iq] = 0.0
        nn = _dot(npv, npv, n)
        while True:
            it += 1
            if it > MAX_ITER:
                return ITER_LIMIT, x, _max_violation(A, b, x, n), it, act[:iq]
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
            for i in range(iq - 1, -1, -1):
                acc = d[i]
                for j in range(i + 1, iq):
                    acc -= R[i][j] * r[j]
                r[i] = acc / R[i][i]
            t1 = INF
            pos = -1
            for k in range(iq):
                if r[k] > R_TOL:
                    ratio = u[k] / r[k]
                    if ratio < t1:
                        t1 = ratio
                        pos = k
            zz = _dot(z, z, n)
            sp = _dot(npv, x, n) - b[ip]
            if zz > DEP_TOL * DEP_TOL * nn:
                t2 = -sp / _dot(z, npv, n)
                if t2 < 0.0:
                    t2 = 0.0
            else:
                t2 = INF
            t = t1 if t1 < t2 else t2
            if t == INF:
                viol = _max_violation(A, b, x, n)
                if viol <= FEAS_TOL:
                    return OPTIMAL, x, viol, it, act[:iq]
                return INFEASIBLE, x, viol, it, act[:iq]
            if t2 == INF:
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
                ok, r_norm = _add(n, J, R, d, iq, r_norm)
                iq += 1
                if not ok:
                    viol = _max_violation(A, b, x, n)
                    if viol <= FEAS_TOL:
                        return OPTIMAL, x, viol, it, act[:iq]
                    return INFEASIBLE, x, viol, it, act[:iq]
                is_active[ip] = True
                break
            is_active[act[pos]] = False
            iq = _delete(n, J, R, act, u, iq, pos)


def _add(n, J, R, d, iq, r_norm):
    for j in range(n - 1, iq, -1):
        cc = d[j - 1]
        ss = d[j]
        h = math.sqrt(cc * cc + ss * ss)
        if h == 0.0:
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
    for i in range(iq + 1):
        R[i][iq] = d[i]
    if abs(d[iq]) <= DEP_TOL * r_norm:
        return False, r_norm
    if abs(d[iq]) > r_norm:
        r_norm = abs(d[iq])
    return True, r_norm


def _delete(n, J, R, act, u, iq, pos):
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
        h = math.sqrt(cc * cc + ss * ss)
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


def _chol_solve(M, rhs, k):
    L = [[0.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1):
            s = M[i][j]
            for t in range(j):
                s -= L[i][t] * L[j][t]
            if i == j:
                if s <= 0.0:
                    return None
                L[i][i] = math.sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    y = [0.0] * k
    for i in range(k):
        s = rhs[i]
        for t in range(i):
            s -= L[i][t] * y[t]
        y[i] = s / L[i][i]
    lam = [0.0] * k
    for i in range(k - 1, -1, -1):
        s = y[i]
        for t in range(i + 1, k):
            s -= L[t][i] * lam[t]
        lam[i] = s / L[i][i]
    return lam


def _primal_active_set(n, q, A, b, x):
    """Primal active-set iterations for ``min 1/2 sum q_k x_k^2`` from a feasible ``x``.

    Returns ``(status, x, working_set, multipliers, iterations)``.
    """
    mt = len(A)
    anorm = [math.sqrt(_dot(A[i], A[i], n)) for i in range(mt)]
    W = []
    in_w = [False] * mt
    xs = [0.0] * n
    p = [0.0] * n
    it = 0
    while True:
        it += 1
        if it > MAX_ITER:
            return ITER_LIMIT, x, W, [], it
        k = len(W)
        M = [[0.0] * k for _ in range(k)]
        for i in range(k):
            ai = A[W[i]]
            for j in range(i + 1):
                aj = A[W[j]]
                acc = 0.0
                for t in range(n):
                    acc += ai[t] * aj[t] / q[t]
                M[i][j] = acc
                M[j][i] = acc
        bw = [b[W[i]] for i in range(k)]
        lam = _chol_solve(M, bw, k)
        if lam is None:
            return NUMERICAL, x, W, [], it
        for t in range(n):
            acc = 0.0
            for i in range(k):
                acc += lam[i] * A[W[i]][t]
            xs[t] = acc / q[t]
        for t in range(n):
            p[t] = xs[t] - x[t]
        pn = math.sqrt(_dot(p, p, n))
        alpha = 1.0
        blk = -1
        if pn > 0.0:
            for i in range(mt):
                if in_w[i]:
                    continue
                ap = _dot(A[i], p, n)
                if ap < -DIR_TOL * anorm[i] * pn:
                    slack = _dot(A[i], x, n) - b[i]
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
                return OPTIMAL, x, W, lam, it
            in_w[W[jmin]] = False
            del W[jmin]
            continue
        for t in range(n):
            x[t] += alpha * p[t]
        W.append(blk)
        in_w[blk] = True


def _scaled_projection(n, q, A, b):
    """Minimiser as the projection of the origin in ``y = sqrt(q) * x`` coordinates.

    The dual method tolerates linearly dependent active rows, so it is the
    fallback when the primal working-set solve breaks down.
    """
    sq = [math.sqrt(q[k]) for k in range(n)]
    As = [[A[i][k] / sq[k] for k in range(n)] for i in range(len(A))]
    status, y, _, it, act = _phase1(n, As, b, [0.0] * n)
    x = [y[k] / sq[k] for k in range(n)]
    return status, x, act, it


def _clamp_box(n, x, lo, hi):
    for k in range(n):
        if x[k] < lo[k]:
            x[k] = float(lo[k])
        elif x[k] > hi[k]:
            x[k] = float(hi[k])


def _to_lists(rows, rhs, n):
    if hasattr(rows, "tolist"):
        rows = np.asarray(rows, dtype=float).reshape(-1, n).tolist()
    if hasattr(rhs, "tolist"):
        rhs = rhs.tolist()
    return rows, rhs


def feasible_point(n, rows, rhs, lo, hi):
    """Phase 1. Returns ``(status, x, max_violation)``."""
    rows, rhs = _to_lists(rows, rhs, n)
    lo = [float(v) for v in lo]
    hi = [float(v) for v in hi]
    c = _box_center(n, lo, hi)
    asm = _assemble(n, rows, rhs, lo, hi)
    if asm is None:
        return INFEASIBLE, c, INF
    A, b, _ = asm
    status, x, viol, _, _ = _phase1(n, A, b, c)
    return status, x, viol


def solve_qp(n, quad, rows, rhs, lo, hi):
    """Solve ``min 1/2 sum quad_k x_k^2`` s.t. rows and box.

    Returns ``(status, x, active_tags, phase1_point, iterations)``.
    """
    rows, rhs = _to_lists(rows, rhs, n)
    lo = [float(v) for v in lo]
    hi = [float(v) for v in hi]
    q = [float(v) for v in quad]
    c = _box_center(n, lo, hi)
    asm = _assemble(n, rows, rhs, lo, hi)
    if asm is None:
        return INFEASIBLE, c, [], c, 0
    A, b, tags = asm
    status, x0, viol, it1, _ = _phase1(n, A, b, c)
    if status != OPTIMAL:
        return status, x0, [], x0, it1
    x = list(x0)
    status, x, W, _, it2 = _primal_active_set(n, q, A, b, x)
    if status != OPTIMAL:
        # degenerate working set: redo phase 2 as a projection in scaled space
        status, x, W, it3 = _scaled_projection(n, q, A, b)
        it2 += it3
        if status == INFEASIBLE:
            status = NUMERICAL
        if status != OPTIMAL:
            return status, x, [], x0, it1 + it2
    _clamp_box(n, x, lo, hi)
    active = sorted(tags[w] for w in W)
    return OPTIMAL, x, active, x0, it1 + it2


def _agent_control(i, pos, vel, goal, radius, n_agents, obs, obs_r, n_obs,
                   za, ea, zo, eo, sig2, eps, xi, u_max, tol, out):
    """One decentralized controller evaluation. ``out`` receives
    ``[u1, u2, delta, feasible, ncons, viol_kind, viol_other, viol_h]``."""
    px = pos[i][0]
    py = pos[i][1]
    ri = radius[i]
    rows = []
    rhs = []
    ex = px - goal[i][0]
    ey = py - goal[i][1]
    V = ex * ex + ey * ey
    rows.append([-2.0 * ex, -2.0 * ey, -1.0])
    rhs.append(eps * V)
    for j in range(n_agents):
        if j == i:
            continue
        dx = px - pos[j][0]
        dy = py - pos[j][1]
        d2 = dx * dx + dy * dy
        if d2 > sig2:
            continue
        s = ri + radius[j]
        h = d2 - s * s
        if h < 0.0:
            st = s - tol
            if st <= 0.0 or d2 < st * st:
                out[5] = 1
                out[6] = j
                out[7] = h
                return False
            h = 0.0
        rows.append([2.0 * dx, 2.0 * dy, 0.0])
        rhs.append(2.0 * (dx * vel[j][0] + dy * vel[j][1]) - za * h ** ea)
    for l in range(n_obs):
        dx = px - obs[l][0]
        dy = py - obs[l][1]
        d2 = dx * dx + dy * dy
        if d2 > sig2:
            continue
        s = ri + obs_r[l]
        h = d2 - s * s
        if h < 0.0:
            st = s - tol
            if st <= 0.0 or d2 < st * st:
                out[5] = 2
                out[6] = l
                out[7] = h
                return False
            h = 0.0
        rows.append([2.0 * dx, 2.0 * dy, 0.0])
        rhs.append(-(zo * h ** eo))
    status, x, _, _, _ = solve_qp(
        3, [1.0, 1.0, xi], rows, rhs, [-u_max, -u_max, -INF], [u_max, u_max, INF]
    )
    out[4] = len(rows) - 1
    if status == OPTIMAL:
        out[0] = x[0]
        out[1] = x[1]
        out[2] = x[2]
        out[3] = 1
    elif status == INFEASIBLE:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0
    else:
        raise RuntimeError("QP solver failed with status %d" % status)
    return True


def control_step(pos, vel, goal, radius, active, obs, obs_r, params,
                 sigma, eps, xi, u_max, tol=0.0):
    """Evaluate every active agent's controller on the same world snapshot.

    Returns ``(u, delta, feasible, ncons, violation)``; ``violation`` is
    ``None`` or ``(agent, kind, other, h)`` with kind 1 = agent, 2 = obstacle.
    """
    n_agents = pos.shape[0]
    n_obs = obs.shape[0]
    pos_l = pos.tolist()
    vel_l = vel.tolist()
    goal_l = goal.tolist()
    rad_l = radius.tolist()
    act_l = active.tolist()
    obs_l = obs.tolist()
    obs_rl = obs_r.tolist()
    par_l = params.tolist()
    sig2 = sigma * sigma
    u = np.zeros((n_agents, 2))
    delta = np.zeros(n_agents)
    feasible = np.ones(n_agents, dtype=np.int8)
    ncons = np.zeros(n_agents, dtype=np.int64)
    out = [0.0, 0.0, 0.0, 0, 0, 0, 0, 0.0]
    for i in range(n_agents):
        if not act_l[i]:
            continue
        za, ea, zo, eo = par_l[i]
        ok = _agent_control(i, pos_l, vel_l, goal_l, rad_l, n_agents, obs_l, obs_rl,
                            n_obs, za, ea, zo, eo, sig2, eps, xi, u_max, tol, out)
        if not ok:
            return u, delta, feasible, ncons, (i, int(out[5]), int(out[6]), out[7])
        u[i, 0] = out[0]
        u[i, 1] = out[1]
        delta[i] = out[2]
        feasible[i] = out[3]
        ncons[i] = out[4]
    return u, delta, feasible, ncons, None
