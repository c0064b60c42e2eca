"""Compiled inner loops.

Everything here works on plain float64/int64 arrays so it can be jitted with
numba.  The public wrappers in the other modules do validation, RNG handling
and packaging of results.
"""

import numpy as np
from numba import njit

# rate-kernel selectors
KIND_GENERAL = 0
KIND_LINEAR = 1
KIND_STAR = 2

# metering policies
POLICY_PF = 0
POLICY_UPSTREAM = 1
POLICY_DOWNSTREAM = 2

STATUS_OK = 0
STATUS_MAXITER = 1


# ---------------------------------------------------------------------------
# proportionally fair allocation


@njit(cache=True)
def _route_prices(A, q, s):
    J, I = A.shape
    for i in range(I):
        acc = 0.0
        for j in range(J):
            acc += A[j, i] * q[j]
        s[i] = acc


@njit(cache=True)
def _dual_objective(A, C, n, q, s):
    _route_prices(A, q, s)
    val = 0.0
    for j in range(C.size):
        val += C[j] * q[j]
    for i in range(n.size):
        if n[i] > 0.0:
            if s[i] <= 0.0:
                return np.inf
            val -= n[i] * np.log(s[i])
    return val


@njit(cache=True)
def _kkt_state(A, C, n, q, s, lam, grad):
    """Fill prices, rates and dual gradient; return the KKT residual."""
    J, I = A.shape
    _route_prices(A, q, s)
    for i in range(I):
        lam[i] = n[i] / s[i] if n[i] > 0.0 else 0.0
    res = 0.0
    for j in range(J):
        load = 0.0
        for i in range(I):
            load += A[j, i] * lam[i]
        grad[j] = C[j] - load
        r = abs(q[j] * grad[j])
        if -grad[j] > r:
            r = -grad[j]
        if r > res:
            res = r
    return res


@njit(cache=True)
def _line_search(A, C, n, q, qn, d, grad, g0, res, s):
    """Projected Armijo backtracking; leaves the accepted point in ``qn``."""
    J = q.size
    I = n.size
    alpha = 1.0
    while alpha > 1e-14:
        for j in range(J):
            v = q[j] + alpha * d[j]
            qn[j] = v if v > 0.0 else 0.0
        gn = _dual_objective(A, C, n, qn, s)
        if not np.isfinite(gn):
            # zeroing would leave an active route unpriced: shrink instead,
            # so duals that should be tiny get there geometrically
            for j in range(J):
                v = q[j] + alpha * d[j]
                qn[j] = v if v > 0.0 else 1e-3 * q[j]
            gn = _dual_objective(A, C, n, qn, s)
        dec = 0.0
        for j in range(J):
            dec += grad[j] * (qn[j] - q[j])
        if dec < 0.0 and gn <= g0 + 1e-4 * dec:
            return True
        if np.isfinite(gn) and abs(gn - g0) <= 1e-13 * (abs(g0) + 1.0):
            # objective flat to rounding; fall back on the residual
            lam2 = np.empty(I)
            grad2 = np.empty(J)
            if _kkt_state(A, C, n, qn, s, lam2, grad2) < res:
                return True
        alpha *= 0.5
    return False


@njit(cache=True)
def pf_newton(A, C, n, q, lam, tol, maxiter):
    """Projected Newton on the dual of the proportionally fair program.

    Minimises ``g(q) = C.q - sum_i n_i log (A'q)_i`` over ``q >= 0``.  The
    gradient is ``C - A lam`` with ``lam_i = n_i / (A'q)_i``, so the KKT
    residual ``max_j max(|q_j grad_j|, -grad_j)`` is the stopping rule.
    Variables at the bound with positive gradient are held at zero; the
    rest take a Newton step, followed by a projected Armijo backtrack.

    ``q`` must enter strictly positive on every resource that serves an
    active route.  Returns ``(iterations, status)``.
    """
    J, I = A.shape
    s = np.empty(I)
    grad = np.empty(J)
    qn = np.empty(J)
    d = np.empty(J)
    served = np.zeros(J, dtype=np.bool_)
    for j in range(J):
        for i in range(I):
            if n[i] > 0.0 and A[j, i] > 0.0:
                served[j] = True
        if not served[j]:
            q[j] = 0.0
    res = _kkt_state(A, C, n, q, s, lam, grad)
    it = 0
    while it < maxiter:
        if res <= tol:
            return it, STATUS_OK
        it += 1
        # binding threshold, relative to the dual scale (duals scale with n)
        w = 0.0
        qmax = 0.0
        for j in range(J):
            p = q[j] - grad[j]
            if p < 0.0:
                p = 0.0
            w += (q[j] - p) ** 2
            if q[j] > qmax:
                qmax = q[j]
        eps = min(1e-3 * qmax, np.sqrt(w))
        # Hessian A diag(n/s^2) A'
        H = np.zeros((J, J))
        for i in range(I):
            if n[i] > 0.0:
                wi = n[i] / (s[i] * s[i])
                for j in range(J):
                    if A[j, i] > 0.0:
                        for k in range(J):
                            if A[k, i] > 0.0:
                                H[j, k] += wi
        # a variable is held at zero only if it is near the bound and a
        # diagonal Newton step would carry it across
        free = np.zeros(J, dtype=np.bool_)
        nf = 0
        for j in range(J):
            hj = H[j, j] if H[j, j] > 0.0 else 1.0
            if served[j] and not (q[j] <= eps and grad[j] > 0.0 and grad[j] >= q[j] * hj):
                free[j] = True
                nf += 1
        for j in range(J):
            d[j] = 0.0
        # a free variable near the bound whose Newton step would cross it is
        # fixed at zero and the reduced system solved again; projecting the
        # full step instead distorts the coupled components and can cycle
        while True:
            idx = np.empty(nf, dtype=np.int64)
            c = 0
            for j in range(J):
                if free[j]:
                    idx[c] = j
                    c += 1
            if nf == 0:
                break
            Hf = np.empty((nf, nf))
            gf = np.empty(nf)
            for a in range(nf):
                gf[a] = -grad[idx[a]]
                for b in range(nf):
                    Hf[a, b] = H[idx[a], idx[b]]
                for j in range(J):
                    if served[j] and not free[j] and d[j] != 0.0:
                        gf[a] -= H[idx[a], j] * d[j]
            step = np.linalg.lstsq(Hf, gf, 1e-13)[0]
            dropped = False
            for a in range(nf):
                j = idx[a]
                if q[j] <= eps and q[j] + step[a] < 0.0:
                    free[j] = False
                    d[j] = -q[j]
                    dropped = True
            if not dropped:
                break
            nf = 0
            for j in range(J):
                if free[j]:
                    nf += 1
        if nf > 0:
            # gradient part in the Hessian null space (resources serving the
            # same active routes): g is linear there, so follow it scaled
            r = gf - Hf @ step
            rn = 0.0
            gn = 0.0
            for a in range(nf):
                rn += r[a] * r[a]
                gn += gf[a] * gf[a]
            tmax = 0.0
            if rn > 1e-16 * gn:
                tmax = np.inf
                for a in range(nf):
                    if r[a] < 0.0:
                        t_a = q[idx[a]] / (-r[a])
                        if t_a < tmax:
                            tmax = t_a
                if not np.isfinite(tmax):
                    tmax = 1.0 / Hf[0, 0] if Hf[0, 0] > 0.0 else 1.0
            for a in range(nf):
                d[idx[a]] = step[a] + tmax * r[a]
        for j in range(J):
            if served[j] and not free[j]:
                hj = H[j, j] if H[j, j] > 0.0 else 1.0
                d[j] = -max(q[j], grad[j] / hj)
        g0 = _dual_objective(A, C, n, q, s)
        accepted = _line_search(A, C, n, q, qn, d, grad, g0, res, s)
        if not accepted:
            # Newton direction useless (e.g. singular Hessian block): try the
            # diagonally scaled gradient before giving up
            for j in range(J):
                if served[j]:
                    hj = H[j, j] if H[j, j] > 0.0 else 1.0
                    d[j] = -grad[j] / hj
            accepted = _line_search(A, C, n, q, qn, d, grad, g0, res, s)
        if not accepted:
            res = _kkt_state(A, C, n, q, s, lam, grad)
            return it, STATUS_MAXITER if res > tol else STATUS_OK
        for j in range(J):
            q[j] = qn[j]
        res = _kkt_state(A, C, n, q, s, lam, grad)
    if res <= tol:
        return it, STATUS_OK
    return it, STATUS_MAXITER


@njit(cache=True)
def _block_sum(m, lo, hi):
    acc = 0.0
    for i in range(lo, hi):
        acc += m[i]
    return acc


@njit(cache=True)
def pf_linear(C, m, lam, q):
    """Exact proportionally fair rates on a linear road.

    Line ``i`` uses sections ``0..i``.  With suffix sums ``Y_k = sum_{i>=k} m_i``
    the points ``(C_k, Y_k)`` (plus the origin for ``k = J``) have an upper
    concave hull whose segments are the blocks of lines sharing a common
    delay ``d``; the segment slope is that delay and the vertices are the
    saturated sections.
    """
    J = C.size
    X = np.empty(J + 1)
    X[J] = 0.0
    for k in range(J):
        X[k] = C[k]
    hull = np.empty(J + 1, dtype=np.int64)
    h = 0
    for k in range(J, -1, -1):
        while h >= 2:
            a = hull[h - 2]
            b = hull[h - 1]
            # block sums are added directly rather than differenced from
            # suffix sums, which would cancel when m has a wide range
            s_ka = _block_sum(m, k, a)
            s_ba = _block_sum(m, b, a)
            cross = (X[b] - X[a]) * s_ka - s_ba * (X[k] - X[a])
            if cross >= 0.0:
                h -= 1
            else:
                break
        hull[h] = k
        h += 1
    for j in range(J):
        q[j] = 0.0
    d_prev = 0.0
    # walk blocks from the downstream end (hull[h-1] == 0) upstream
    for b in range(h - 1, 0, -1):
        lo = hull[b]
        hi = hull[b - 1]
        d = _block_sum(m, lo, hi) / (X[lo] - X[hi])
        q[lo] = d - d_prev
        if q[lo] < 0.0:
            q[lo] = 0.0
        for i in range(lo, hi):
            lam[i] = m[i] / d if m[i] > 0.0 else 0.0
        d_prev = d


@njit(cache=True)
def pf_star(C, m, lam, q):
    """Exact proportionally fair rates for leaves 0..L-1 feeding a root.

    Route ``i < L`` uses leaf ``i`` and the root (last resource); the last
    route uses the root only.  With root price ``t`` each leaf route gets
    ``min(C_i, m_i / t)``; ``t`` solves the root balance piecewise.
    """
    J = C.size
    L = J - 1
    croot = C[L]
    mroot = m[L]
    # breakpoints b_i = m_i / C_i for active leaves, sorted ascending
    nb = 0
    order = np.empty(L, dtype=np.int64)
    bvals = np.empty(L)
    for i in range(L):
        if m[i] > 0.0:
            order[nb] = i
            bvals[nb] = m[i] / C[i]
            nb += 1
    srt = np.argsort(bvals[:nb])
    capsum = 0.0
    for k in range(nb):
        capsum += C[order[k]]
    t = 0.0
    if not (mroot == 0.0 and capsum <= croot):
        num = mroot
        den = croot - capsum
        prev = 0.0
        t = -1.0
        for k in range(nb + 1):
            nxt = bvals[srt[k]] if k < nb else np.inf
            if den > 0.0 and num > 0.0:
                cand = num / den
                if cand >= prev and cand <= nxt:
                    t = cand
                    break
            if k < nb:
                i = order[srt[k]]
                num += m[i]
                den += C[i]
                prev = nxt
        if t < 0.0:
            t = prev
    q[L] = t
    for i in range(L):
        if m[i] > 0.0:
            b = m[i] / C[i]
            q[i] = b - t if b > t else 0.0
            lam[i] = C[i] if b > t else m[i] / t
        else:
            q[i] = 0.0
            lam[i] = 0.0
    lam[L] = mroot / t if mroot > 0.0 else 0.0


@njit(cache=True)
def pf_rates(kind, A, C, m, lam, q, tol, maxiter):
    """Dispatch to the structured solver for ``kind``; returns a status code."""
    if kind == KIND_LINEAR:
        pf_linear(C, m, lam, q)
        return STATUS_OK
    if kind == KIND_STAR:
        pf_star(C, m, lam, q)
        return STATUS_OK
    scale = 0.0
    for i in range(m.size):
        if m[i] > scale:
            scale = m[i]
    if not scale > 0.0:
        for j in range(q.size):
            q[j] = 0.0
        for i in range(lam.size):
            lam[i] = 0.0
        return STATUS_OK
    # solve at unit scale: rates are scale invariant and duals scale with m
    J, I = A.shape
    ms = m / scale
    for j in range(J):
        q[j] /= scale
        if not q[j] > 0.0:
            acc = 0.0
            for i in range(I):
                acc += A[j, i] * ms[i]
            q[j] = acc / C[j] + 1.0
    it, status = pf_newton(A, C, ms, q, lam, tol, maxiter)
    for j in range(J):
        q[j] *= scale
    return status


# ---------------------------------------------------------------------------
# priority policies on the linear road


@njit(cache=True)
def upstream_rates(C, m, allowance, lam):
    """Greedy cascade from the most upstream line down to line 0."""
    J = C.size
    used = 0.0
    for j in range(J - 1, -1, -1):
        bound = C[j] - used
        if bound < 0.0:
            bound = 0.0
        if m[j] > 0.0:
            lam[j] = bound
        else:
            lam[j] = min(bound, allowance[j])
        used += lam[j]


@njit(cache=True)
def downstream_rates(C, m, lam):
    """Lowest-indexed nonempty line takes its section's full capacity."""
    J = C.size
    for j in range(J):
        lam[j] = 0.0
    for j in range(J):
        if m[j] > 0.0:
            lam[j] = C[j]
            return


@njit(cache=True)
def _choose(choice, d, s):
    best = -1
    for k in range(choice.shape[1]):
        if choice[s, k]:
            if best < 0 or d[k] < d[best]:
                best = k
    return best


# ---------------------------------------------------------------------------
# direct Brownian dynamics


@njit(cache=True)
def cone_reflect(Minv, q0, Qn, z):
    """Minimal pushing that returns a workload to the cone ``G R_+^J``.

    Solves the linear complementarity problem ``Qn = q0 + Minv z >= 0``,
    ``z >= 0``, ``z' Qn = 0`` with ``Minv = G^-1`` (symmetric positive
    definite, so the solution is unique) by least-index principal pivoting.
    ``z_j`` is the idleness resource ``j`` needs; ``Qn`` are the new duals.
    Returns the number of pivots, or -1 if the pivot cap was reached.
    """
    J = q0.size
    active = np.zeros(J, dtype=np.bool_)
    for j in range(J):
        z[j] = 0.0
        Qn[j] = q0[j]
        if q0[j] < 0.0:
            active[j] = True
    for it in range(4 * J * J + 8):
        na = 0
        for j in range(J):
            if active[j]:
                na += 1
        idx = np.empty(na, dtype=np.int64)
        k = 0
        for j in range(J):
            if active[j]:
                idx[k] = j
                k += 1
        for j in range(J):
            z[j] = 0.0
        if na > 0:
            Ms = np.empty((na, na))
            rhs = np.empty(na)
            for a in range(na):
                rhs[a] = -q0[idx[a]]
                for b in range(na):
                    Ms[a, b] = Minv[idx[a], idx[b]]
            zs = np.linalg.solve(Ms, rhs)
            for a in range(na):
                z[idx[a]] = zs[a]
        for j in range(J):
            acc = q0[j]
            for b in range(J):
                acc += Minv[j, b] * z[b]
            Qn[j] = acc
        flip = -1
        for j in range(J):
            if active[j]:
                if z[j] < -1e-14:
                    flip = j
                    break
            elif Qn[j] < -1e-14:
                flip = j
                break
        if flip < 0:
            for j in range(J):
                if active[j]:
                    Qn[j] = 0.0
                    if z[j] < 0.0:
                        z[j] = 0.0
                elif Qn[j] < 0.0:
                    Qn[j] = 0.0
            return it
        active[flip] = not active[flip]
    return -1


@njit(cache=True)
def brownian_chunk(
    kind, policy, A, C, rho, sd, h, choice, K, Ad,
    m, q, xi, t0, record_every, step0, tol, maxiter,
    rec_t, rec_m, rec_lam, rec_q, rec_d, rec_u, rec_Q, rec_D, rec_count,
    acc, u, counters, reflect, B, Minv, P, choose_nominal,
):
    """Advance the Euler scheme ``m <- max(0, m + dE - Lambda(m) h)``.

    ``xi`` holds standard normals, one row per step and one column per source;
    source ``s`` puts its increment ``rho_s h + sd_s xi`` on the line that
    minimises the current delay estimate over ``choice[s]``.  ``K`` maps line
    sizes to the empirical dual ``Q = K m`` and ``D = Ad' Q``.

    ``acc`` accumulates time integrals: rows m, lam, q, d, Q, D.
    ``counters``: [feasibility violations, face violations, solver failures,
    reflection steps].

    ``reflect == 0`` clips each line at zero.  ``reflect == 1`` instead
    returns the workload ``B m`` to the cone ``B [rho] B' R_+`` with the
    least idleness (see :func:`cone_reflect`; ``Minv = (B [rho] B')^-1``)
    and sets ``m = P Q`` with ``P = [rho] B'``.

    Sources choose by the proportionally fair delay estimates ``A'q``, or
    by the workload-based nominal delays ``Ad' K m`` if ``choose_nominal``.
    """
    n_steps = xi.shape[0]
    S = xi.shape[1]
    J, I = A.shape
    JQ = K.shape[0]
    lam = np.zeros(I)
    inflow = np.empty(I)
    allowance = np.empty(I)
    dl = np.empty(I)
    Qv = np.empty(JQ)
    Dv = np.empty(I)
    load = np.empty(J)
    JB = B.shape[0]
    wq = np.empty(JB)
    Qn = np.empty(JB)
    zb = np.empty(JB)
    pre = np.empty(I)
    nrec = rec_count[0]
    cap = rec_t.size
    for k in range(n_steps):
        # rates and duals at the current state
        if policy == POLICY_PF:
            st = pf_rates(kind, A, C, m, lam, q, tol, maxiter)
            if st != STATUS_OK:
                counters[2] += 1
        for i in range(I):
            acc_d = 0.0
            for j in range(J):
                acc_d += A[j, i] * q[j]
            dl[i] = acc_d
        # empirical duals from workloads
        for a in range(JQ):
            acc_q = 0.0
            for i in range(I):
                acc_q += K[a, i] * m[i]
            Qv[a] = acc_q
        for i in range(I):
            acc_q = 0.0
            for a in range(JQ):
                acc_q += Ad[a, i] * Qv[a]
            Dv[i] = acc_q
        for i in range(I):
            inflow[i] = 0.0
        for s_ in range(S):
            inc = rho[s_] * h + sd[s_] * xi[k, s_]
            line = _choose(choice, Dv if choose_nominal else dl, s_)
            inflow[line] += inc
        if policy == POLICY_UPSTREAM:
            for i in range(I):
                a = (m[i] + inflow[i]) / h
                allowance[i] = a if a > 0.0 else 0.0
            upstream_rates(C, m, allowance, lam)
        elif policy == POLICY_DOWNSTREAM:
            downstream_rates(C, m, lam)
        # invariants on the nominal rates
        for j in range(J):
            tot = 0.0
            for i in range(I):
                tot += A[j, i] * lam[i]
            load[j] = tot
            if tot > C[j] + 1e-9 * (1.0 + C[j]):
                counters[0] += 1
            if policy == POLICY_PF and tot < C[j] - 1e-7 * (1.0 + C[j]) and q[j] > 1e-7:
                counters[1] += 1
        # time integrals over [t, t+h) use the left endpoint state
        for i in range(I):
            acc[0, i] += m[i] * h
            acc[1, i] += lam[i] * h
            acc[3, i] += dl[i] * h
            acc[5, i] += Dv[i] * h
        for j in range(J):
            acc[2, j] += q[j] * h
        for a in range(JQ):
            acc[4, a] += Qv[a] * h
        if (step0 + k) % record_every == 0 and nrec < cap:
            rec_t[nrec] = t0 + k * h
            for i in range(I):
                rec_m[nrec, i] = m[i]
                rec_lam[nrec, i] = lam[i]
                rec_d[nrec, i] = dl[i]
                rec_D[nrec, i] = Dv[i]
            for j in range(J):
                rec_q[nrec, j] = q[j]
                rec_u[nrec, j] = u[j]
            for a in range(JQ):
                rec_Q[nrec, a] = Qv[a]
            nrec += 1
        # Euler step, then reflection
        for i in range(I):
            pre[i] = m[i] + inflow[i] - lam[i] * h
        if reflect == 1:
            outside = False
            for a in range(JB):
                acc_q = 0.0
                for b in range(JB):
                    acc_w = 0.0
                    for i in range(I):
                        acc_w += B[b, i] * pre[i]
                    acc_q += Minv[a, b] * acc_w
                wq[a] = acc_q
                if acc_q < 0.0:
                    outside = True
            if outside:
                counters[3] += 1
                if cone_reflect(Minv, wq, Qn, zb) < 0:
                    counters[2] += 1
                for i in range(I):
                    acc_m = 0.0
                    for a in range(JB):
                        acc_m += P[i, a] * Qn[a]
                    pre[i] = acc_m
        for i in range(I):
            new = pre[i]
            if new < 0.0:
                new = 0.0
            dl[i] = (m[i] + inflow[i] - new) / h  # effective metered rate
            m[i] = new
        for j in range(J):
            tot = 0.0
            for i in range(I):
                tot += A[j, i] * dl[i]
            u[j] += (C[j] - tot) * h
    rec_count[0] = nrec


# ---------------------------------------------------------------------------
# discrete unit-work jobs, event driven


@njit(cache=True)
def _policy_rates(kind, policy, A, C, m, lam, q, zero, tol, maxiter):
    if policy == POLICY_PF:
        return pf_rates(kind, A, C, m, lam, q, tol, maxiter)
    if policy == POLICY_UPSTREAM:
        upstream_rates(C, m, zero, lam)
    else:
        downstream_rates(C, m, lam)
    return STATUS_OK


@njit(cache=True)
def jobs_run(
    kind, policy, A, C, choice, K, Ad, arr_t, arr_src, job_size, t_end,
    max_dt, tol, maxiter, m,
    ev_t, ev_total, ev_line, acc, u, delays, delay_line, counters,
    seg_t, seg_g, seg_count, choose_nominal, ev_m, ev_lam, ev_q, ev_u,
):
    """Exact event-driven run with Poisson unit-work jobs.

    Between arrivals the metered rates are held until the earliest of the next
    arrival, a line emptying, or ``max_dt``; for the linear, tree and star
    presets the proportionally fair rates are constant on such intervals, so
    the path is exact.  Records the state just after each arrival.

    ``acc`` rows: integral of m, integral of D (empirical nominal delay),
    integral of Q (empirical dual).  ``seg_t``/``seg_g`` receive every
    breakpoint of the path of ``sum(m) - job_size * (arrivals so far)``,
    which is continuous and piecewise linear, so two policies fed the same
    arrivals can be compared exactly by interpolation.  Realised delays are tracked with
    per-line FIFO queues of completion targets on cumulative metered work.
    When ``ev_m`` has rows, the line sizes, rates, duals and cumulative
    unused capacity just after each arrival are stored as well.
    """
    J, I = A.shape
    JQ = K.shape[0]
    n_arr = arr_t.size
    lam = np.zeros(I)
    q = np.zeros(J)
    zero = np.zeros(I)
    dl = np.empty(I)
    out = np.zeros(I)  # cumulative metered work per line
    # per-line FIFO of (job index) with completion targets
    fifo = np.empty((I, n_arr + 1), dtype=np.int64)
    head = np.zeros(I, dtype=np.int64)
    tail = np.zeros(I, dtype=np.int64)
    target = np.empty(n_arr)
    t = 0.0
    nseg = 0
    seg_cap = seg_t.size
    for a in range(n_arr + 1):
        t_next = arr_t[a] if a < n_arr else t_end
        while t < t_next:
            if nseg < seg_cap:
                tot = 0.0
                for i in range(I):
                    tot += m[i]
                seg_t[nseg] = t
                seg_g[nseg] = tot - a * job_size
                nseg += 1
            st = _policy_rates(kind, policy, A, C, m, lam, q, zero, tol, maxiter)
            if st != STATUS_OK:
                counters[2] += 1
            for j in range(J):
                tot = 0.0
                for i in range(I):
                    tot += A[j, i] * lam[i]
                if tot > C[j] + 1e-9 * (1.0 + C[j]):
                    counters[0] += 1
            tau = t_next - t
            if max_dt > 0.0 and max_dt < tau:
                tau = max_dt
            empties = -1
            for i in range(I):
                if lam[i] > 0.0 and m[i] / lam[i] < tau:
                    tau = m[i] / lam[i]
                    empties = i
            # integrals over the linear segment
            for i in range(I):
                m_end = m[i] - lam[i] * tau
                if m_end < 0.0:
                    m_end = 0.0
                acc[0, i] += 0.5 * (m[i] + m_end) * tau
                dl[i] = m_end
            for a2 in range(JQ):
                v0 = 0.0
                v1 = 0.0
                for i in range(I):
                    v0 += K[a2, i] * m[i]
                    v1 += K[a2, i] * dl[i]
                acc[2, a2] += 0.5 * (v0 + v1) * tau
            for i in range(I):
                v0 = 0.0
                v1 = 0.0
                for a2 in range(JQ):
                    for i2 in range(I):
                        v0 += Ad[a2, i] * K[a2, i2] * m[i2]
                        v1 += Ad[a2, i] * K[a2, i2] * dl[i2]
                acc[1, i] += 0.5 * (v0 + v1) * tau
            for j in range(J):
                tot = 0.0
                for i in range(I):
                    tot += A[j, i] * lam[i]
                u[j] += (C[j] - tot) * tau
            # job completions on each line
            for i in range(I):
                if lam[i] > 0.0:
                    o_new = out[i] + lam[i] * tau
                    while head[i] < tail[i]:
                        jb = fifo[i, head[i]]
                        if target[jb] <= o_new + 1e-9 * job_size:
                            tc = t + (target[jb] - out[i]) / lam[i]
                            if tc > t + tau:
                                tc = t + tau
                            delays[jb] = tc - arr_t[jb]
                            head[i] += 1
                        else:
                            break
                    out[i] = o_new
            for i in range(I):
                m[i] = dl[i]
            if empties >= 0:
                m[empties] = 0.0
            t += tau
        if a == n_arr:
            break
        # arrival
        s_ = arr_src[a]
        line = s_
        if choice.shape[0] > 0:
            if choose_nominal:
                for i in range(I):
                    v0 = 0.0
                    for a2 in range(JQ):
                        for i2 in range(I):
                            v0 += Ad[a2, i] * K[a2, i2] * m[i2]
                    dl[i] = v0
            else:
                if policy == POLICY_PF:
                    _policy_rates(kind, policy, A, C, m, lam, q, zero, tol, maxiter)
                for i in range(I):
                    acc_d = 0.0
                    for j in range(J):
                        acc_d += A[j, i] * q[j]
                    dl[i] = acc_d
            line = _choose(choice, dl, s_)
        target[a] = out[line] + m[line] + job_size
        fifo[line, tail[line]] = a
        tail[line] += 1
        delay_line[a] = line
        m[line] += job_size
        ev_t[a] = t
        ev_line[a] = line
        tot = 0.0
        for i in range(I):
            tot += m[i]
        ev_total[a] = tot
        if ev_m.shape[0] > 0:
            # full state just after the arrival, with the rates it induces
            _policy_rates(kind, policy, A, C, m, lam, q, zero, tol, maxiter)
            for i in range(I):
                ev_m[a, i] = m[i]
                ev_lam[a, i] = lam[i]
            for j in range(J):
                ev_q[a, j] = q[j]
                ev_u[a, j] = u[j]
    if nseg < seg_cap:
        tot = 0.0
        for i in range(I):
            tot += m[i]
        seg_t[nseg] = t
        seg_g[nseg] = tot - n_arr * job_size
        nseg += 1
    seg_count[0] = nseg


# ---------------------------------------------------------------------------
# single queues


@njit(cache=True)
def mm1_path(nu, mu, n0, expo, unif, times, counts):
    """Gillespie path of the birth-death chain with rates nu (up) and mu (down)."""
    n = n0
    t = 0.0
    times[0] = 0.0
    counts[0] = n
    for k in range(expo.size):
        rate = nu + (mu if n > 0 else 0.0)
        if rate <= 0.0:
            for r in range(k + 1, times.size):
                times[r] = np.inf
                counts[r] = n
            return
        t += expo[k] / rate
        if unif[k] * rate < nu:
            n += 1
        else:
            n -= 1
        times[k + 1] = t
        counts[k + 1] = n


# ---------------------------------------------------------------------------
# fluid model


@njit(cache=True)
def fluid_euler(
    kind, A, C, nu, mu, n, h, n_steps, record_every, tol, maxiter, rest_at_origin, rec_t, rec_n, rec_lam, counters
):
    """Explicit Euler for ``dn/dt = nu - mu Lambda(n)`` with clipping at zero.

    With ``rest_at_origin`` (stable loads) the run stops once every ``n_i``
    is within one step's inflow ``h nu_i`` of zero, and records the origin.
    Returns the number of records written.
    """
    J, I = A.shape
    lam = np.zeros(I)
    q = np.zeros(J)
    r = 0
    for k in range(n_steps + 1):
        st = pf_rates(kind, A, C, n, lam, q, tol, maxiter)
        if st != STATUS_OK:
            counters[0] += 1
        # within one step's inflow of the origin the Euler path only jitters
        # there; the fluid path itself rests at zero
        at_origin = rest_at_origin
        for i in range(I):
            if n[i] > h * nu[i]:
                at_origin = False
        if at_origin:
            for i in range(I):
                n[i] = 0.0
            for i in range(I):
                lam[i] = 0.0
        if k % record_every == 0 or k == n_steps or at_origin:
            rec_t[r] = k * h
            for i in range(I):
                rec_n[r, i] = n[i]
                rec_lam[r, i] = lam[i]
            r += 1
        if at_origin or k == n_steps:
            return r
        for i in range(I):
            v = n[i] + h * (nu[i] - mu[i] * lam[i])
            n[i] = v if v > 0.0 else 0.0
    return r
