"""Compiled inner loops for the simplex solvers.

Problem sizes are tiny (N controls, a few hundred periods at most) and the
solvers are called millions of times by the adaptive-regret and FLH suites, so
per-call overhead dominates; these kernels keep it to a few microseconds.
"""

import math

import numpy as np
from numba import njit

ENTROPY_FLOOR = 1e-12


@njit(cache=True)
def project_simplex(v):
    n = v.size
    u = np.sort(v)[::-1]
    css = 0.0
    tau = 0.0
    for i in range(n):
        css += u[i]
        t = (css - 1.0) / (i + 1.0)
        if u[i] - t > 0:
            tau = t
    out = np.empty(n)
    for i in range(n):
        out[i] = max(v[i] - tau, 0.0)
    return out


@njit(cache=True)
def kkt_residual(theta, grad):
    p = project_simplex(theta - grad)
    s = 0.0
    for i in range(theta.size):
        s += (theta[i] - p[i]) ** 2
    return math.sqrt(s)


@njit(cache=True)
def _lu_solve(A, b):
    # Gaussian elimination with partial pivoting; A and b are overwritten.
    n = b.size
    for k in range(n):
        p = k
        best = abs(A[k, k])
        for i in range(k + 1, n):
            if abs(A[i, k]) > best:
                best = abs(A[i, k])
                p = i
        if best == 0.0:
            return False
        if p != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                for j in range(k, n):
                    A[i, j] -= f * A[k, j]
                b[i] -= f * b[k]
    for k in range(n - 1, -1, -1):
        s = b[k]
        for j in range(k + 1, n):
            s -= A[k, j] * b[j]
        b[k] = s / A[k, k]
    return True


@njit(cache=True)
def feasible_start(start, n):
    """Clean a warm start onto the simplex, falling back to uniform weights."""
    theta = np.full(n, 1.0 / n)
    if start.size != n:
        return theta
    total = 0.0
    for i in range(n):
        v = start[i]
        if not np.isfinite(v):
            return np.full(n, 1.0 / n)
        theta[i] = v if v >= 1e-14 else 0.0
        total += theta[i]
    if total <= 0.0:
        return np.full(n, 1.0 / n)
    return theta / total


@njit(cache=True)
def problem_scale(Q, c):
    s = 1.0
    for i in range(c.size):
        s = max(s, abs(c[i]))
        for j in range(c.size):
            s = max(s, abs(Q[i, j]))
    return s


@njit(cache=True)
def active_set_qp(Q, c, start, max_iters, mult_tol):
    """Primal active-set method for min 0.5 t'Qt - c't over the simplex.

    ``mult_tol`` is relative to the problem scale.  Returns
    (theta, kkt_residual, converged, scale).
    """
    n = c.size
    scale = problem_scale(Q, c)
    mult_tol = mult_tol * scale
    theta = feasible_start(start, n)
    free = np.empty(n, dtype=np.bool_)
    for i in range(n):
        free[i] = theta[i] > 0.0
    grad = np.empty(n)
    for _ in range(max_iters):
        k = 0
        idx = np.empty(n, dtype=np.int64)
        for i in range(n):
            if free[i]:
                idx[k] = i
                k += 1
        K = np.zeros((k + 1, k + 1))
        rhs = np.empty(k + 1)
        for a in range(k):
            for b in range(k):
                K[a, b] = Q[idx[a], idx[b]]
            K[a, k] = 1.0
            K[k, a] = 1.0
            rhs[a] = c[idx[a]]
        rhs[k] = 1.0
        if not _lu_solve(K, rhs):
            break
        lam = rhs[k]
        feasible = True
        for a in range(k):
            if rhs[a] < 0.0:
                feasible = False
                break
        if feasible:
            for i in range(n):
                theta[i] = 0.0
            for a in range(k):
                theta[idx[a]] = rhs[a]
            worst = 0.0
            j = -1
            for i in range(n):
                g = -c[i]
                for m in range(n):
                    g += Q[i, m] * theta[m]
                grad[i] = g
                if not free[i]:
                    mu = g + lam
                    if mu < worst:
                        worst = mu
                        j = i
            if j < 0 or worst >= -mult_tol:
                return theta, kkt_residual(theta, grad), True, scale
            free[j] = True
            continue
        # ratio test toward the equality-constrained minimizer
        alpha = 1.0
        block = -1
        for a in range(k):
            step = rhs[a] - theta[idx[a]]
            if step < 0.0:
                r = theta[idx[a]] / -step
                if r < alpha:
                    alpha = r
                    block = a
        total = 0.0
        for a in range(k):
            i = idx[a]
            val = theta[i] + alpha * (rhs[a] - theta[i])
            if a == block or val < 0.0:
                val = 0.0
            theta[i] = val
            total += val
        for a in range(k):
            theta[idx[a]] /= total
        any_free = False
        for i in range(n):
            free[i] = theta[i] > 0.0
            any_free = any_free or free[i]
        if not any_free:
            free[idx[0]] = True
    for i in range(n):
        g = -c[i]
        for m in range(n):
            g += Q[i, m] * theta[m]
        grad[i] = g
    return theta, kkt_residual(theta, grad), False, scale


@njit(cache=True)
def _entropy_objective(Q, c, inv_eta, t):
    return 0.5 * t @ Q @ t - c @ t + inv_eta * np.sum(t * np.log(t))


@njit(cache=True)
def entropy_newton(Q, c, inv_eta, start, max_iters, tol):
    """Newton's method for min 0.5 t'Qt - c't + inv_eta * sum t log t on the simplex."""
    n = c.size
    theta = 0.999 * feasible_start(start, n) + 0.001 / n
    theta /= theta.sum()
    f = _entropy_objective(Q, c, inv_eta, theta)
    for _ in range(max_iters):
        grad = Q @ theta - c + inv_eta * (np.log(np.maximum(theta, ENTROPY_FLOOR)) + 1.0)
        K = np.zeros((n + 1, n + 1))
        rhs = np.zeros(n + 1)
        for i in range(n):
            for j in range(n):
                K[i, j] = Q[i, j]
            K[i, i] += inv_eta / max(theta[i], ENTROPY_FLOOR)
            K[i, n] = 1.0
            K[n, i] = 1.0
            rhs[i] = -grad[i]
        if not _lu_solve(K, rhs):
            break
        d = rhs[:n].copy()
        # d'Hd rather than -grad'd: the gradient is nearly constant near the
        # optimum and d sums to zero, so the latter cancels to noise
        decrement = d @ Q @ d
        for i in range(n):
            decrement += inv_eta * d[i] * d[i] / max(theta[i], ENTROPY_FLOOR)
        if decrement <= 1e-2 * tol * tol:
            break
        step = 1.0
        for i in range(n):
            if d[i] < 0.0:
                step = min(step, 0.99 * theta[i] / -d[i])
        accepted = False
        cand = theta + step * d
        if step == 1.0 and decrement < 1e-8:
            # quadratic-convergence region: take the pure Newton step
            theta = cand / cand.sum()
            f = _entropy_objective(Q, c, inv_eta, theta)
            if decrement < 1e-20:
                break
            continue
        while step > 1e-16:
            cand = theta + step * d
            if np.all(cand > 0.0):
                fc = _entropy_objective(Q, c, inv_eta, cand)
                if fc <= f - 0.25 * step * decrement:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        theta = cand / cand.sum()
        f = _entropy_objective(Q, c, inv_eta, theta)
    grad = Q @ theta - c + inv_eta * (np.log(np.maximum(theta, ENTROPY_FLOOR)) + 1.0)
    return theta, kkt_residual(theta, grad)


@njit(cache=True)
def _inner(g, lam, entropy):
    """argmax_theta g'theta - lam*Phi(theta) and its value (ridge or entropy Phi)."""
    n = g.size
    if entropy:
        z = g / lam
        zmax = z.max()
        e = np.exp(z - zmax)
        s = e.sum()
        theta = e / s
        return theta, lam * (zmax + math.log(s) - math.log(n))
    theta = project_simplex(g / lam)
    return theta, g @ theta - 0.5 * lam * (theta @ theta)


@njit(cache=True)
def _penalty(theta, entropy):
    if entropy:
        s = math.log(theta.size)
        for v in theta:
            if v > 0.0:
                s += v * math.log(v)
        return s
    return 0.5 * (theta @ theta)


@njit(cache=True)
def absolute_dual_spg(Y, y0, w, lam, entropy, u0, max_iters, tol):
    """Spectral projected gradient on the dual of weighted absolute-loss FTRL.

    Maximizes u'y0 - max_theta [(Y'u)'theta - lam*Phi(theta)] over |u| <= w.
    Returns (theta, u, gap, converged).
    """
    u = np.minimum(np.maximum(u0, -w), w)
    theta, val = _inner(Y.T @ u, lam, entropy)
    f = -(u @ y0 - val)
    g = -(y0 - Y @ theta)
    alpha = 1.0
    history = np.full(10, f)
    best_gap = np.inf
    best_theta = theta.copy()
    best_u = u.copy()
    for it in range(max_iters):
        resid = y0 - Y @ theta
        primal = np.sum(w * np.abs(resid)) + lam * _penalty(theta, entropy)
        gap = primal + f
        if gap < best_gap:
            best_gap = gap
            best_theta[:] = theta
            best_u[:] = u
        if gap <= tol * (1.0 + abs(primal)):
            return best_theta, best_u, best_gap, True
        d = np.minimum(np.maximum(u - alpha * g, -w), w) - u
        gd = g @ d
        if gd >= 0.0:
            alpha = 1.0
            d = np.minimum(np.maximum(u - g, -w), w) - u
            gd = g @ d
            if gd >= 0.0:
                break
        fmax = history.max()
        step = 1.0
        while True:
            un = u + step * d
            tn, vn = _inner(Y.T @ un, lam, entropy)
            fn = -(un @ y0 - vn)
            if fn <= fmax + 1e-4 * step * gd or step < 1e-12:
                break
            step *= 0.5
        gn = -(y0 - Y @ tn)
        s = un - u
        yv = gn - g
        sy = s @ yv
        if sy > 0.0:
            alpha = min(1e10, max(1e-10, (s @ s) / sy))
        else:
            alpha = 1e10
        u = un
        theta = tn
        f = fn
        g = gn
        history[it % 10] = f
    return best_theta, best_u, best_gap, False


@njit(cache=True)
def interval_losses(Y, y0, starts, ends, tie, max_iters, mult_tol):
    """Best fixed squared loss on every interval [starts[i], ends[j]].

    Grows each interval one block at a time and warm-starts the active-set
    solve from the previous interval's weights.  Returns (losses, ok); entries
    with ends[j] < starts[i] are NaN.
    """
    T, n = Y.shape
    out = np.full((starts.size, ends.size), np.nan)
    ok = True
    for i in range(starts.size):
        r = starts[i]
        gram = np.zeros((n, n))
        cross = np.zeros(n)
        ss = 0.0
        theta = np.full(n, 1.0 / n)
        k = r
        for j in range(ends.size):
            s = ends[j]
            if s < r:
                continue
            while k <= s:
                for a in range(n):
                    cross[a] += y0[k] * Y[k, a]
                    for b in range(n):
                        gram[a, b] += Y[k, a] * Y[k, b]
                ss += y0[k] * y0[k]
                k += 1
            Q = 2.0 * gram
            for a in range(n):
                Q[a, a] += 2.0 * tie
            theta, kkt, conv, scale = active_set_qp(Q, 2.0 * cross, theta, max_iters, mult_tol)
            ok = ok and conv
            val = theta @ gram @ theta - 2.0 * (cross @ theta) + ss
            out[i, j] = max(val, 0.0)
    return out, ok
