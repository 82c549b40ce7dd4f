"""Hot numeric kernels.

Everything here is written in the numpy subset numba compiles, and every
function is decorated with :func:`ssqp._jit.njit`, which is a no-op when numba
is disabled. Status codes are plain ints so the kernels stay nopython-clean;
the public wrappers in :mod:`ssqp.qp` and :mod:`ssqp.engine` translate them.
"""

import numpy as np

from ._jit import njit

OPTIMAL = 0
INFEASIBLE = 1
RANK_DEFICIENT = 2
ITERATION_LIMIT = 3
INDEFINITE_REDUCED = 4
EGMFCQ_FAILURE = 5

RANK_TOL = 1e-10
CURV_TOL = 1e-12
FEAS_TOL = 1e-16
RIDGE = 1e-12

# run-summary slots
S_LAST_THETA_LT1 = 0
S_LAST_ACTIVE_CHANGE = 1
S_N_FALLBACK = 2
S_N_THETA_RETRY = 3
S_THETA = 4
S_ALPHA_BAR = 5
S_SHIFT = 6
S_LEVEL = 7
S_MIN_THETA = 8
N_SUMMARY = 9


@njit
def box_active(x, lower, upper, tol):
    n = x.shape[0]
    lo = np.zeros(n, dtype=np.bool_)
    up = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if lower[i] > -np.inf and x[i] - lower[i] <= tol:
            lo[i] = True
        elif upper[i] < np.inf and upper[i] - x[i] <= tol:
            up[i] = True
    return lo, up


@njit
def _take_cols(A, idx):
    out = np.empty((A.shape[0], idx.shape[0]))
    for j in range(idx.shape[0]):
        for i in range(A.shape[0]):
            out[i, j] = A[i, idx[j]]
    return out


@njit
def _take_square(B, idx):
    k = idx.shape[0]
    out = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            out[a, b] = B[idx[a], idx[b]]
    return out


@njit
def _rank(s):
    if s.shape[0] == 0:
        return 0
    thresh = RANK_TOL * max(1.0, s[0])
    r = 0
    for v in s:
        if v > thresh:
            r += 1
    return r


@njit
def _least_norm(A, rhs):
    """Minimum-norm solution of A z = rhs; returns (z, full_row_rank)."""
    me, n = A.shape
    if me == 0:
        return np.zeros(n), True
    if n == 0:
        return np.zeros(0), False
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    if _rank(s) < me:
        return np.zeros(n), False
    z = vt.T @ ((u.T @ rhs) / s)
    return z, True


@njit
def _inside(z, lb, ub):
    for i in range(z.shape[0]):
        if z[i] < lb[i] or z[i] > ub[i]:
            return False
    return True


@njit
def _ratio_test(d, p, lb, ub, free):
    step = 1.0
    block = -1
    at_upper = False
    for i in range(d.shape[0]):
        if not free[i]:
            continue
        t = np.inf
        hit_upper = False
        if p[i] < 0.0 and lb[i] > -np.inf:
            t = max(0.0, (lb[i] - d[i]) / p[i])
        elif p[i] > 0.0 and ub[i] < np.inf:
            t = max(0.0, (ub[i] - d[i]) / p[i])
            hit_upper = True
        if (block < 0 and t <= step) or t < step:
            step = t
            block = i
            at_upper = hit_upper
    return step, block, at_upper


# ---------------------------------------------------------------------------
# bound-constrained least squares
# ---------------------------------------------------------------------------


@njit
def bcls_kernel(M, y, lb, ub, max_iter):
    """min ||M z - y||^2 over lb <= z <= ub by a primal active-set method.

    Returns (z, value, status). ``lb == ub`` pins a coordinate.
    """
    r, n = M.shape
    G = M.T @ M
    h = -(M.T @ y)
    scale = 1.0
    for i in range(n):
        scale = max(scale, G[i, i])
    for i in range(n):
        G[i, i] += RIDGE * scale

    z = np.minimum(np.maximum(np.zeros(n), lb), ub)
    pinned = lb == ub
    w_lo = np.zeros(n, dtype=np.bool_)
    w_up = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if pinned[i] or (lb[i] > -np.inf and z[i] == lb[i]):
            w_lo[i] = True
        elif ub[i] < np.inf and z[i] == ub[i]:
            w_up[i] = True

    # unconstrained (ridge) minimiser first: common case in the engine
    if r > 0 and n > 0:
        zu = np.linalg.solve(G, -h)
        if _inside(zu, lb, ub):
            res = M @ zu - y
            return zu, res @ res, OPTIMAL

    hscale = 1.0
    for i in range(n):
        hscale = max(hscale, abs(h[i]))
    mu_tol = 1e-13 * hscale

    status = ITERATION_LIMIT
    at_min = False
    for _ in range(max_iter):
        free = ~(w_lo | w_up)
        grad = G @ z + h
        if not at_min:
            idx = np.nonzero(free)[0]
            if idx.shape[0] == 0:
                at_min = True
                continue
            pf = -np.linalg.solve(_take_square(G, idx), grad[idx])
            p = np.zeros(n)
            for j in range(idx.shape[0]):
                p[idx[j]] = pf[j]
            step, block, at_upper = _ratio_test(z, p, lb, ub, free)
            z += step * p
            if block >= 0:
                if at_upper:
                    z[block] = ub[block]
                    w_up[block] = True
                else:
                    z[block] = lb[block]
                    w_lo[block] = True
            else:
                at_min = True
            continue
        worst = -mu_tol
        drop = -1
        for i in range(n):
            if pinned[i]:
                continue
            if w_lo[i]:
                m = grad[i]
            elif w_up[i]:
                m = -grad[i]
            else:
                continue
            if m < worst:
                worst = m
                drop = i
        if drop < 0:
            status = OPTIMAL
            break
        w_lo[drop] = False
        w_up[drop] = False
        at_min = False
    res = M @ z - y
    return z, res @ res, status


# ---------------------------------------------------------------------------
# strongly convex QP with equalities and a box
# ---------------------------------------------------------------------------


@njit
def _independent(A, w_lo, w_up):
    me = A.shape[0]
    if me == 0:
        return True
    idx = np.nonzero(~(w_lo | w_up))[0]
    if idx.shape[0] < me:
        return False
    s = np.linalg.svd(_take_cols(A, idx), full_matrices=False)[1]
    return _rank(s) >= me


@njit
def _initial_point(A, b, lb, ub, hint_lo, hint_up, use_hint, max_iter):
    n = lb.shape[0]
    me = A.shape[0]
    w_lo = np.zeros(n, dtype=np.bool_)
    w_up = np.zeros(n, dtype=np.bool_)
    bnorm2 = b @ b
    feas = FEAS_TOL * max(1.0, bnorm2)

    if use_hint:
        d = np.zeros(n)
        for i in range(n):
            if hint_lo[i] and lb[i] > -np.inf:
                d[i] = lb[i]
                w_lo[i] = True
            elif hint_up[i] and ub[i] < np.inf:
                d[i] = ub[i]
                w_up[i] = True
        idx = np.nonzero(~(w_lo | w_up))[0]
        ok = True
        if me > 0:
            rhs = b - A @ d
            zf, ok = _least_norm(_take_cols(A, idx), rhs)
            if ok:
                for j in range(idx.shape[0]):
                    d[idx[j]] = zf[j]
        else:
            for j in range(idx.shape[0]):
                i = idx[j]
                d[i] = min(max(0.0, lb[i]), ub[i])
        if ok and _inside(d, lb, ub):
            res = A @ d - b
            if res @ res <= feas:
                return d, w_lo, w_up, OPTIMAL
        w_lo[:] = False
        w_up[:] = False

    if me == 0:
        d = np.minimum(np.maximum(np.zeros(n), lb), ub)
    else:
        d, ok = _least_norm(A, b)
        if not ok:
            return d, w_lo, w_up, RANK_DEFICIENT
        if not _inside(d, lb, ub):
            d, val, st = bcls_kernel(A, b, lb, ub, max_iter)
            if val > feas:
                return d, w_lo, w_up, INFEASIBLE
            # tidy the equality residual on coordinates off the bounds
            free = np.zeros(n, dtype=np.bool_)
            for i in range(n):
                free[i] = d[i] != lb[i] and d[i] != ub[i]
            idx = np.nonzero(free)[0]
            corr, ok = _least_norm(_take_cols(A, idx), b - A @ d)
            if ok:
                trial = d.copy()
                for j in range(idx.shape[0]):
                    trial[idx[j]] += corr[j]
                if _inside(trial, lb, ub):
                    d = trial

    # bounds touched by the start point, kept only while independent of A
    for i in range(n):
        if lb[i] > -np.inf and d[i] == lb[i]:
            w_lo[i] = True
            if not _independent(A, w_lo, w_up):
                w_lo[i] = False
        elif ub[i] < np.inf and d[i] == ub[i]:
            w_up[i] = True
            if not _independent(A, w_lo, w_up):
                w_up[i] = False
    return d, w_lo, w_up, OPTIMAL


@njit
def _null_basis(A):
    """Orthonormal null-space basis of A and its rank, by Householder QR of A'."""
    me, n = A.shape
    Q = np.eye(n)
    V = np.ascontiguousarray(A.T).copy()
    big = 0.0
    for j in range(me):
        big = max(big, np.sqrt(A[j] @ A[j]))
    tol = RANK_TOL * max(1.0, big)
    v = np.empty(n)
    rk = 0
    for j in range(me):
        if rk >= n:
            break
        nrm = 0.0
        for i in range(rk, n):
            v[i] = V[i, j]
            nrm += v[i] * v[i]
        nrm = np.sqrt(nrm)
        if nrm <= tol:
            continue
        v[rk] += nrm if v[rk] >= 0.0 else -nrm
        vn = 0.0
        for i in range(rk, n):
            vn += v[i] * v[i]
        vn = np.sqrt(vn)
        for i in range(rk, n):
            v[i] /= vn
        for c in range(j, me):
            t = 0.0
            for i in range(rk, n):
                t += v[i] * V[i, c]
            for i in range(rk, n):
                V[i, c] -= 2.0 * t * v[i]
        for r in range(n):
            t = 0.0
            for i in range(rk, n):
                t += Q[r, i] * v[i]
            for i in range(rk, n):
                Q[r, i] -= 2.0 * t * v[i]
        rk += 1
    return np.ascontiguousarray(Q[:, rk:]), rk


@njit
def _cholesky(S):
    """Lower Cholesky factor and a flag; the flag is False unless S is
    comfortably positive definite (pivot ratio above 1e-10)."""
    try:
        L = np.linalg.cholesky(S)
    except Exception:
        return np.zeros_like(S), False
    lo = np.inf
    hi = 0.0
    for i in range(L.shape[0]):
        v = L[i, i] * L[i, i]
        lo = min(lo, v)
        hi = max(hi, v)
    return L, lo > 1e-10 * hi


@njit
def _chol_solve(L, b):
    """Solve L L' z = b for a vector or a matrix right-hand side."""
    n = L.shape[0]
    U = np.ascontiguousarray(L.T)
    z = b.copy()
    for i in range(n):
        z[i] = (z[i] - L[i, :i] @ z[:i]) / L[i, i]
    for i in range(n - 1, -1, -1):
        z[i] = (z[i] - U[i, i + 1 :] @ z[i + 1 :]) / L[i, i]
    return z


@njit
def _subspace_step(B, r, A, free):
    """Newton step on the working-set subspace: min 1/2 p'Bp + r'p, A p = 0, p_W = 0.

    Equalities are eliminated with an orthonormal null-space basis, so the
    step satisfies A p = 0 to rounding and the conditioning of A is not
    squared. The reduced Hessian is factored by Cholesky when comfortably
    positive definite and checked by an eigen-decomposition otherwise.
    """
    n = B.shape[0]
    me = A.shape[0]
    p = np.zeros(n)
    idx = np.nonzero(free)[0]
    nf = idx.shape[0]
    if nf < me:
        return p, RANK_DEFICIENT
    if nf == 0:
        return p, OPTIMAL
    bf = _take_square(B, idx)
    rf = r[idx]
    if me > 0:
        Z, rk = _null_basis(_take_cols(A, idx))
        if rk < me:
            return p, RANK_DEFICIENT
        if nf == me:
            return p, OPTIMAL
        rh = Z.T @ bf @ Z
        rz = Z.T @ rf
    else:
        Z = np.eye(nf)
        rh = bf
        rz = rf
    rh = 0.5 * (rh + rh.T)
    L, pd = _cholesky(rh)
    if pd:
        yv = -_chol_solve(L, rz)
    else:
        w, V = np.linalg.eigh(rh)
        if w[0] <= CURV_TOL * max(1.0, abs(w[-1])):
            return p, INDEFINITE_REDUCED
        yv = -(V @ ((V.T @ rz) / w))
    pf = Z @ yv if me > 0 else yv
    for j in range(nf):
        p[idx[j]] = pf[j]
    return p, OPTIMAL


@njit
def _eq_multipliers(A, r, free):
    me = A.shape[0]
    if me == 0:
        return np.zeros(0), OPTIMAL
    idx = np.nonzero(free)[0]
    if idx.shape[0] < me:
        return np.zeros(me), RANK_DEFICIENT
    u, s, vt = np.linalg.svd(_take_cols(A, idx), full_matrices=False)
    if _rank(s) < me:
        return np.zeros(me), RANK_DEFICIENT
    # A_F' lam = -r_F in the least-squares sense
    lam = -(u @ ((vt @ r[idx]) / s))
    return lam, OPTIMAL


@njit
def qp_kernel(B, g, A, b, lb, ub, tol, max_iter, hint_lo, hint_up, use_hint):
    """Primal active-set solve of min 1/2 d'Bd + g'd, A d = b, lb <= d <= ub.

    Returns (d, lam, mu_lower, mu_upper, act_lo, act_up, status, iterations).
    """
    n = B.shape[0]
    me = A.shape[0]
    lam = np.zeros(me)
    mu_l = np.zeros(n)
    mu_u = np.zeros(n)
    d, w_lo, w_up, status = _initial_point(A, b, lb, ub, hint_lo, hint_up, use_hint, max_iter)
    if status != OPTIMAL:
        return d, lam, mu_l, mu_u, w_lo, w_up, status, 0

    gscale = 1.0
    for i in range(n):
        gscale = max(gscale, abs(g[i]))
    mu_tol = tol * gscale

    at_min = False
    for it in range(max_iter):
        free = ~(w_lo | w_up)
        r = B @ d + g
        if not at_min:
            p, st = _subspace_step(B, r, A, free)
            if st != OPTIMAL:
                return d, lam, mu_l, mu_u, w_lo, w_up, st, it
            pmax = 0.0
            dmax = 0.0
            for i in range(n):
                pmax = max(pmax, abs(p[i]))
                dmax = max(dmax, abs(d[i]))
            if pmax <= 1e-15 * (1.0 + dmax):
                at_min = True
                continue
            step, block, at_upper = _ratio_test(d, p, lb, ub, free)
            d += step * p
            if block >= 0:
                if at_upper:
                    d[block] = ub[block]
                    w_up[block] = True
                else:
                    d[block] = lb[block]
                    w_lo[block] = True
            else:
                at_min = True
            continue

        lam, st = _eq_multipliers(A, r, free)
        if st != OPTIMAL:
            return d, lam, mu_l, mu_u, w_lo, w_up, st, it
        s = r + A.T @ lam
        worst = -mu_tol
        drop = -1
        for i in range(n):
            if w_lo[i]:
                m = s[i]
            elif w_up[i]:
                m = -s[i]
            else:
                continue
            if m < worst:
                worst = m
                drop = i
        if drop < 0:
            for i in range(n):
                if w_lo[i]:
                    mu_l[i] = max(s[i], 0.0)
                elif w_up[i]:
                    mu_u[i] = max(-s[i], 0.0)
            return d, lam, mu_l, mu_u, w_lo, w_up, OPTIMAL, it + 1
        w_lo[drop] = False
        w_up[drop] = False
        at_min = False
    return d, lam, mu_l, mu_u, w_lo, w_up, ITERATION_LIMIT, max_iter


# ---------------------------------------------------------------------------
# engine pieces
# ---------------------------------------------------------------------------


@njit
def relaxation_value(c, J, x, lower, upper, theta, max_iter):
    """Optimal value of min ||theta c + J z||^2 over the shifted box."""
    y = -theta * c
    lb = lower - x
    ub = upper - x
    z, ok = _least_norm(J, y)
    if ok and _inside(z, lb, ub):
        return 0.0, y @ y
    z, val, st = bcls_kernel(J, y, lb, ub, max_iter)
    return val, y @ y


@njit
def theta_kernel(c, J, x, lower, upper, tau, theta_min, max_iter):
    if c.shape[0] == 0:
        return 1.0, True
    theta = 1.0
    while True:
        val, ynorm2 = relaxation_value(c, J, x, lower, upper, theta, max_iter)
        if val <= FEAS_TOL * max(1.0, ynorm2):
            return theta, True
        theta *= tau
        if theta < theta_min:
            return theta, False


@njit
def lagrangian_hessian(q_bar, lam, chess):
    n = q_bar.shape[0]
    M = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            v = 0.5 * (q_bar[i, j] + q_bar[j, i])
            for k in range(lam.shape[0]):
                v += 0.5 * lam[k] * (chess[k, i, j] + chess[k, j, i])
            M[i, j] = v
            M[j, i] = v
    return M


@njit
def _tridiagonal(S):
    """Diagonal and off-diagonal of a Householder tridiagonal form of symmetric S."""
    A = S.copy()
    n = A.shape[0]
    v = np.empty(n)
    q = np.empty(n)
    for k in range(n - 2):
        m = n - k - 1
        nrm = 0.0
        for i in range(m):
            v[i] = A[k + 1 + i, k]
            nrm += v[i] * v[i]
        nrm = np.sqrt(nrm)
        if nrm == 0.0:
            continue
        alpha = -nrm if v[0] >= 0.0 else nrm
        v[0] -= alpha
        vn = 0.0
        for i in range(m):
            vn += v[i] * v[i]
        vn = np.sqrt(vn)
        if vn == 0.0:
            continue
        for i in range(m):
            v[i] /= vn
        # trailing block <- H A H with H = I - 2 v v'
        kv = 0.0
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += A[k + 1 + i, k + 1 + j] * v[j]
            q[i] = acc
            kv += v[i] * acc
        for i in range(m):
            q[i] -= kv * v[i]
        for i in range(m):
            for j in range(m):
                A[k + 1 + i, k + 1 + j] -= 2.0 * (v[i] * q[j] + q[i] * v[j])
        A[k + 1, k] = alpha
        A[k, k + 1] = alpha
    diag = np.empty(n)
    off = np.zeros(max(n - 1, 0))
    for i in range(n):
        diag[i] = A[i, i]
    for i in range(n - 1):
        off[i] = A[i + 1, i]
    return diag, off


@njit
def _sturm_count(diag, off, sigma):
    """Number of eigenvalues of the tridiagonal matrix below sigma."""
    cnt = 0
    q = diag[0] - sigma
    if q < 0.0:
        cnt += 1
    for i in range(1, diag.shape[0]):
        if q == 0.0:
            q = 1e-300
        q = diag[i] - sigma - off[i - 1] * off[i - 1] / q
        if q < 0.0:
            cnt += 1
    return cnt


@njit
def min_eig(S, floor=-np.inf):
    """Smallest eigenvalue of symmetric S by tridiagonal bisection.

    Returns ``floor`` as soon as all eigenvalues are certified to be at least
    ``floor``.
    """
    n = S.shape[0]
    if n == 0:
        return np.inf
    diag, off = _tridiagonal(S)
    if floor > -np.inf and _sturm_count(diag, off, floor) == 0:
        return floor
    lo = np.inf
    hi = -np.inf
    for i in range(n):
        r = 0.0
        if i > 0:
            r += abs(off[i - 1])
        if i < n - 1:
            r += abs(off[i])
        lo = min(lo, diag[i] - r)
        hi = max(hi, diag[i] + r)
    tol = 4e-16 * max(1.0, max(abs(lo), abs(hi)))
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if _sturm_count(diag, off, mid) >= 1:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@njit
def reduced_min_eig(M, J, x, lower, upper, eps, floor=-np.inf):
    """Smallest eigenvalue of M on the null space of the eps-active Jacobian.

    When the reduced matrix is certified to have all eigenvalues above
    ``floor``, ``floor`` itself is returned.
    """
    lo, up = box_active(x, lower, upper, eps)
    idx = np.nonzero(~(lo | up))[0]
    nf = idx.shape[0]
    if nf == 0:
        return np.inf
    mf = _take_square(M, idx)
    if J.shape[0] > 0:
        Z, rk = _null_basis(_take_cols(J, idx))
        if rk >= nf:
            return np.inf
        rh = Z.T @ mf @ Z
    else:
        rh = mf
    return min_eig(0.5 * (rh + rh.T), floor)


@njit
def clip_spectrum(B, kappa_max):
    n = B.shape[0]
    bound = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += abs(B[i, j])
        bound = max(bound, row)
    if bound <= kappa_max:
        return B
    w, V = np.linalg.eigh(B)
    if w[-1] <= kappa_max:
        return B
    w = np.minimum(w, kappa_max)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


@njit
def hessian_kernel(q_bar, lam, chess, J, x, lower, upper, eps, omega, kappa_max):
    M = lagrangian_hessian(q_bar, lam, chess)
    lmin = reduced_min_eig(M, J, x, lower, upper, eps, omega)
    shift = 0.0
    if lmin < omega:
        shift = omega - lmin
    B = M.copy()
    for i in range(B.shape[0]):
        B[i, i] += shift
    return clip_spectrum(B, kappa_max), shift


@njit
def full_shift_kernel(q_bar, lam, chess, omega, kappa_max):
    M = lagrangian_hessian(q_bar, lam, chess)
    lmin = min_eig(M, omega)
    shift = max(0.0, omega - lmin)
    B = M.copy()
    for i in range(B.shape[0]):
        B[i, i] += shift
    return clip_spectrum(B, kappa_max), shift


@njit
def step_kernel(
    x, lam, mu1, mu2, g_bar, q_bar, grad, hess, beta, gamma, alpha_bar, theta,
    c, J, chess, lower, upper, eps, omega, kappa_max, tau, identity_mode,
    qp_tol, qp_max_iter, hint_lo, hint_up, use_hint,
):
    """Averages, Hessian, subproblem and primal-dual update; updates in place.

    Returns (B, dx, lam_sub, mu_l, mu_u, act_lo, act_up, theta, shift, level,
    retried, status).
    """
    n = x.shape[0]
    for i in range(n):
        g_bar[i] = (1.0 - beta) * g_bar[i] + beta * grad[i]
    for i in range(n):
        for j in range(n):
            q_bar[i, j] = (1.0 - gamma) * q_bar[i, j] + gamma * hess[i, j]

    lb = lower - x
    ub = upper - x
    if identity_mode:
        level = 2
        B = np.eye(n)
        shift = 0.0
    else:
        level = 0
        B, shift = hessian_kernel(q_bar, lam, chess, J, x, lower, upper, eps, omega, kappa_max)

    retried = False
    while True:
        dx, lam_sub, mu_l, mu_u, act_lo, act_up, status, its = qp_kernel(
            B, g_bar, J, -theta * c, lb, ub, qp_tol, qp_max_iter, hint_lo, hint_up, use_hint
        )
        if status == OPTIMAL:
            break
        if status == INDEFINITE_REDUCED and level == 0:
            level = 1
            B, shift = full_shift_kernel(q_bar, lam, chess, omega, kappa_max)
        elif (status == INDEFINITE_REDUCED or status == ITERATION_LIMIT) and level < 2:
            level = 2
            B = np.eye(n)
            shift = 0.0
        elif status == INFEASIBLE and not retried:
            retried = True
            theta *= tau
        else:
            return B, dx, lam_sub, mu_l, mu_u, act_lo, act_up, theta, shift, level, retried, status

    a = alpha_bar
    for i in range(n):
        xi = x[i] + a * dx[i]
        x[i] = min(max(xi, lower[i]), upper[i])
        mu1[i] = (1.0 - a) * mu1[i] + a * mu_l[i]
        mu2[i] = (1.0 - a) * mu2[i] + a * mu_u[i]
    for i in range(lam.shape[0]):
        lam[i] = (1.0 - a) * lam[i] + a * lam_sub[i]
    return B, dx, lam_sub, mu_l, mu_u, act_lo, act_up, theta, shift, level, retried, OPTIMAL


@njit
def schedule(k, iota, b):
    return iota * (k + 1.0) ** (-b)


@njit
def stepsize(alpha, psi, p_adapt, random_mode, u):
    if random_mode:
        a = alpha + u * psi * alpha ** p_adapt
    else:
        a = alpha
    return min(a, 1.0)


@njit
def welford(count, mean, scatter, v):
    """One incremental covariance update; ``count`` is a length-1 array."""
    count[0] += 1.0
    n = count[0]
    delta = v - mean
    mean += delta / n
    delta2 = v - mean
    for i in range(v.shape[0]):
        for j in range(v.shape[0]):
            scatter[i, j] += delta[i] * delta2[j]


@njit
def track_summary(summary, k, theta, alpha_bar, shift, level, retried, act_lo, act_up, prev_lo, prev_up):
    if theta < 1.0:
        summary[S_LAST_THETA_LT1] = k
    changed = False
    for i in range(act_lo.shape[0]):
        if act_lo[i] != prev_lo[i] or act_up[i] != prev_up[i]:
            changed = True
        prev_lo[i] = act_lo[i]
        prev_up[i] = act_up[i]
    if changed:
        summary[S_LAST_ACTIVE_CHANGE] = k
    if level > 0:
        summary[S_N_FALLBACK] += 1.0
    if retried:
        summary[S_N_THETA_RETRY] += 1.0
    summary[S_THETA] = theta
    summary[S_ALPHA_BAR] = alpha_bar
    summary[S_SHIFT] = shift
    summary[S_LEVEL] = level
    summary[S_MIN_THETA] = min(summary[S_MIN_THETA], theta)


@njit
def run_kernel(
    constraint_fn, sample_fn, params, k0, samples, uniforms,
    x, lam, mu1, mu2, g_bar, q_bar, lower, upper,
    sched, psi, p_adapt, random_mode, tau, theta_min, eps, omega, kappa_max,
    identity_mode, qp_tol, qp_max_iter,
    hint_lo, hint_up, have_hint,
    acc_count, acc_mean, acc_scatter, summary, last_B, last_J,
):
    """Fused SSQP loop over one block of pre-drawn samples.

    State arrays are updated in place. Returns (status, k_failed).
    """
    for j in range(samples.shape[0]):
        k = k0 + j
        alpha = schedule(k, sched[0], sched[1])
        beta = schedule(k, sched[2], sched[3])
        gamma = schedule(k, sched[4], sched[5])
        c, J, chess = constraint_fn(x, params)
        theta, ok = theta_kernel(c, J, x, lower, upper, tau, theta_min, qp_max_iter)
        if not ok:
            return EGMFCQ_FAILURE, k
        fval, grad, hess = sample_fn(x, samples[j], params)
        alpha_bar = stepsize(alpha, psi, p_adapt, random_mode, uniforms[j])
        B, dx, lam_sub, mu_l, mu_u, act_lo, act_up, theta, shift, level, retried, status = step_kernel(
            x, lam, mu1, mu2, g_bar, q_bar, grad, hess, beta, gamma, alpha_bar, theta,
            c, J, chess, lower, upper, eps, omega, kappa_max, tau, identity_mode,
            qp_tol, qp_max_iter, hint_lo, hint_up, have_hint[0],
        )
        if status != OPTIMAL:
            return status, k
        welford(acc_count, acc_mean, acc_scatter, grad)
        track_summary(summary, k, theta, alpha_bar, shift, level, retried, act_lo, act_up, hint_lo, hint_up)
        have_hint[0] = True
        last_B[:, :] = B
        last_J[:, :] = J
    return OPTIMAL, -1
