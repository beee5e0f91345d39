"""Independent reference implementations used only by the test-suite."""

import itertools

import numpy as np


def box_rows(lo, hi):
    n = len(lo)
    rows, rhs = [], []
    for k in range(n):
        if np.isfinite(lo[k]):
            e = np.zeros(n)
            e[k] = 1.0
            rows.append(e)
            rhs.append(lo[k])
        if np.isfinite(hi[k]):
            e = np.zeros(n)
            e[k] = -1.0
            rows.append(e)
            rhs.append(-hi[k])
    return rows, rhs


def enumerate_qp(quad, A, b, lo, hi, tol=1e-9):
    """Exact minimiser of 1/2 sum quad x^2 by enumerating candidate active sets.

    The optimum of a strictly convex QP is the equality-constrained minimiser
    of some linearly independent subset (size <= dim) of its constraints, so
    the best feasible candidate over all subsets is the optimum. Returns
    ``(x, objective)`` or ``None`` when no candidate is feasible.
    """
    quad = np.asarray(quad, float)
    n = len(quad)
    br, bb = box_rows(lo, hi)
    G = np.vstack([np.asarray(A, float).reshape(-1, n)] + [np.array(br).reshape(-1, n)])
    h = np.concatenate([np.asarray(b, float), np.asarray(bb, float)])
    hinv = 1.0 / quad
    best = None
    for size in range(0, n + 1):
        for S in itertools.combinations(range(len(h)), size):
            S = list(S)
            if size == 0:
                x = np.zeros(n)
            else:
                As = G[S]
                M = (As * hinv) @ As.T
                if np.linalg.cond(M) > 1e12:
                    continue
                lam = np.linalg.solve(M, h[S])
                x = hinv * (As.T @ lam)
            if np.all(G @ x - h >= -tol):
                f = 0.5 * np.dot(quad * x, x)
                if best is None or f < best[1]:
                    best = (x, f)
    return best


def grid_qp(quad, A, b, lo, hi, res=1e-3, tol=1e-9, zoom_to=1e-4):
    """Brute-force oracle for 3-variable problems with a free third variable.

    Grids the two boxed variables at resolution ``res``; for each grid point
    the feasible interval of the free variable is computed in closed form and
    the best value in it taken. The best grid point is then polished by
    repeatedly re-gridding a shrinking window around it, then by exact
    solves on the faces nearly tight there. When no grid point is feasible
    every face is tried. Returns ``(x, objective)`` or ``None``.
    """
    quad = np.asarray(quad, float)
    A = np.asarray(A, float).reshape(-1, 3)
    b = np.asarray(b, float)
    g1 = np.arange(lo[0], hi[0] + res / 2, res)
    g2 = np.arange(lo[1], hi[1] + res / 2, res)
    U1, U2 = np.meshgrid(g1, g2, indexing="ij")
    u1 = U1.ravel()
    u2 = U2.ravel()

    pos, neg, flat = A[:, 2] > 0, A[:, 2] < 0, A[:, 2] == 0

    def best_delta(u1, u2):
        # each row bounds delta from below (a3 > 0) or above (a3 < 0)
        rest = b[:, None] - A[:, :1] * u1 - A[:, 1:2] * u2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = rest / A[:, 2:3]
        dlo = np.max(ratio[pos], axis=0, initial=-np.inf)
        dhi = np.min(ratio[neg], axis=0, initial=np.inf)
        ok = np.all(rest[flat] <= tol, axis=0) & (dlo <= dhi)
        d = np.clip(0.0, dlo, dhi)
        return ok, d

    br, bb = box_rows(lo, hi)
    G = np.vstack([A, np.array(br).reshape(-1, 3)])
    h = np.concatenate([b, np.asarray(bb, float)])
    hinv = 1.0 / quad

    def polish(x, fbest, near):
        X = _face_minimisers(G, h, hinv, near, max_size=3)
        if X.shape[0]:
            feas = np.all(np.isfinite(X), axis=1) & np.all(X @ G.T - h >= -tol * (1.0 + np.abs(h)), axis=1)
            fc = 0.5 * np.einsum("aj,j,aj->a", X, quad, X)
            fc[~feas] = np.inf
            j = int(np.argmin(fc))
            if fc[j] < fbest:
                return X[j], fc[j]
        return x, fbest

    ok, d = best_delta(u1, u2)
    if not ok.any():
        # the feasible set may be a sliver thinner than the grid; a feasible
        # face minimiser is a certificate, and the best one is the optimum
        x, fbest = polish(None, np.inf, np.arange(len(h)))
        return None if x is None else (x, fbest)
    f = 0.5 * (quad[0] * u1 ** 2 + quad[1] * u2 ** 2 + quad[2] * d ** 2)
    f[~ok] = np.inf
    k = int(np.argmin(f))
    x = np.array([u1[k], u2[k], d[k]])
    fbest = f[k]
    # zoom: re-grid a window around the incumbent, recentre on improvement,
    # shrink otherwise; diagonal moves let it slide along oblique faces
    offs = np.arange(-8, 9)
    step = res
    while step > zoom_to:
        c1 = np.clip(x[0] + step * offs, lo[0], hi[0])
        c2 = np.clip(x[1] + step * offs, lo[1], hi[1])
        W1, W2 = np.meshgrid(c1, c2, indexing="ij")
        w1, w2 = W1.ravel(), W2.ravel()
        okc, dc = best_delta(w1, w2)
        fc = 0.5 * (quad[0] * w1 ** 2 + quad[1] * w2 ** 2 + quad[2] * dc ** 2)
        fc[~okc] = np.inf
        j = int(np.argmin(fc))
        if fc[j] < fbest:
            x = np.array([w1[j], w2[j], dc[j]])
            fbest = fc[j]
        else:
            step /= 4.0
    # polish: equality-constrained minimisers over subsets of the faces that
    # are nearly tight at the incumbent; keep the best feasible one
    slack = G @ x - h
    x, fbest = polish(x, fbest, np.flatnonzero(slack <= 50.0 * res * (1.0 + np.abs(G).sum(axis=1))))
    return x, fbest


def gae_bruteforce(rewards, values, gamma, lam):
    T = len(rewards)
    out = np.zeros(T)
    for t in range(T):
        acc = 0.0
        for k in range(T - t):
            delta = rewards[t + k] + gamma * values[t + k + 1] - values[t + k]
            acc += (gamma * lam) ** k * delta
        out[t] = acc
    return out


_COMBOS = {}


def _combos(m, k):
    key = (m, k)
    if key not in _COMBOS:
        _COMBOS[key] = np.array(list(itertools.combinations(range(m), k)), dtype=np.intp).reshape(-1, k)
    return _COMBOS[key]


def _face_minimisers(G, h, hinv, idx, max_size, cond_max=1e12, refine=2):
    """Minimisers of ``1/2 x^T diag(1/hinv) x`` on ``G[S] x = h[S]`` for every subset S of ``idx``.

    Subsets of each size are solved as one stacked batch; near-dependent
    subsets are dropped.
    """
    idx = np.asarray(idx, dtype=np.intp)
    n = G.shape[1]
    out = [np.zeros((0, n))]
    for k in range(1, min(max_size, idx.size) + 1):
        C = idx[_combos(idx.size, k)]
        As = G[C]                                     # (K, k, n)
        M = np.einsum("aij,j,akj->aik", As, hinv, As)
        # Hadamard ratio det(M) / prod(diag M) is in (0, 1] for a Gram matrix and
        # collapses towards 0 exactly when the chosen rows are near-dependent
        d = np.prod(np.diagonal(M, axis1=1, axis2=2), axis=1)
        with np.errstate(all="ignore"):
            ok = (d > 0) & (np.linalg.det(M) > d / cond_max)
        if not ok.any():
            continue
        Mo, Ao, ho = M[ok], As[ok], h[C[ok]]
        lam = np.linalg.solve(Mo, ho[..., None])[..., 0]
        X = hinv * np.einsum("aij,ai->aj", Ao, lam)
        for _ in range(refine):
            # iterative refinement of the equality residual on the subset
            r = ho - np.einsum("aij,aj->ai", Ao, X)
            dl = np.linalg.solve(Mo, r[..., None])[..., 0]
            X = X + hinv * np.einsum("aij,ai->aj", Ao, dl)
        out.append(X)
    return np.concatenate(out)


def enumerate_qp_batched(quad, A, b, lo, hi, tol=1e-9, cond_max=1e12, refine=2):
    """Same decision as :func:`enumerate_qp`, with every subset size solved as one stacked batch."""
    quad = np.asarray(quad, float)
    n = len(quad)
    br, bb = box_rows(lo, hi)
    G = np.vstack([np.asarray(A, float).reshape(-1, n)] + [np.array(br).reshape(-1, n)])
    h = np.concatenate([np.asarray(b, float), np.asarray(bb, float)])
    X = np.concatenate([np.zeros((1, n)), _face_minimisers(G, h, 1.0 / quad, np.arange(len(h)), n,
                                                           cond_max, refine)])
    feas = np.all(X @ G.T - h >= -tol, axis=1)
    if not feas.any():
        return None
    f = 0.5 * np.einsum("aj,j,aj->a", X, quad, X)
    f[~feas] = np.inf
    i = int(np.argmin(f))
    return X[i], f[i]


def central_diff(f, v, h=1e-6):
    """Central finite differences of scalar ``f`` at every coordinate of ``v``."""
    v = np.array(v, dtype=float)
    g = np.zeros_like(v)
    for k in range(v.size):
        old = v.flat[k]
        v.flat[k] = old + h
        fp = f(v)
        v.flat[k] = old - h
        fm = f(v)
        v.flat[k] = old
        g.flat[k] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a, b, floor=1e-12):
    a = np.ravel(a)
    b = np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def mlp_reference(sizes, theta, x):
    """Loop-based dense network (W stored in-by-out, row-major; tanh hidden, linear out)."""
    h = [float(v) for v in x]
    off = 0
    L = len(sizes) - 1
    for k in range(L):
        a, b = sizes[k], sizes[k + 1]
        W = theta[off:off + a * b]
        off += a * b
        bias = theta[off:off + b]
        off += b
        out = []
        for j in range(b):
            s = float(bias[j])
            for i in range(a):
                s += h[i] * float(W[i * b + j])
            out.append(np.tanh(s) if k < L - 1 else s)
        h = out
    return np.array(h)
