"""Dense convex QP engine for small instances.

`solve` is a primal active-set method (phase-1 feasibility LP solved by the
same machinery) that handles positive semidefinite Q, including flat
directions of the objective.  `enumerate_kkt` exhaustively tries every
inequality active-set pattern and is used as an independent oracle in tests.

Conventions:  min 0.5 x'Qx + c'x  s.t.  A x >= b,  A_eq x = b_eq, with
stationarity  Qx + c - A'mu - A_eq'nu = 0,  mu >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr as _qr
from scipy.optimize import linprog

from .model import ConcreteQP


class QpError(Exception):
    pass


class Infeasible(QpError):
    pass


class Unbounded(QpError):
    pass


class IterationLimit(QpError):
    pass


@dataclass
class QpSolution:
    x: np.ndarray
    u_ineq: np.ndarray
    u_eq: np.ndarray
    active: np.ndarray      # bool mask over inequality rows
    objective: float
    kkt_residual: float
    iterations: int = 0


def kkt_residual(qp: ConcreteQP, x, mu, nu) -> float:
    """Max-norm residual over stationarity, feasibility, dual sign, complementarity."""
    res = 0.0
    stat = qp.Q @ x + qp.c
    if qp.q:
        stat = stat - qp.A_ineq.T @ mu
        slack = qp.A_ineq @ x - qp.b_ineq
        res = max(res, float(np.max(np.maximum(-slack, 0.0), initial=0.0)))
        res = max(res, float(np.max(np.maximum(-mu, 0.0), initial=0.0)))
        res = max(res, float(np.max(np.abs(mu * slack), initial=0.0)))
    if qp.r:
        stat = stat - qp.A_eq.T @ nu
        res = max(res, float(np.max(np.abs(qp.A_eq @ x - qp.b_eq), initial=0.0)))
    res = max(res, float(np.max(np.abs(stat), initial=0.0)))
    return res


def _independent_rows(C, tol=1e-9):
    """Greedy lowest-index subset of rows keeping full row rank."""
    k = C.shape[0]
    if k == 0:
        return []
    # fast path: pivoted QR certifies full row rank without the greedy loop
    R = _qr(C.T, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))[: min(k, C.shape[1])]
    if d.size == k and np.all(d > tol * max(1.0, d[0])):
        return list(range(k))
    keep = []
    basis = None
    for i in range(C.shape[0]):
        row = C[i]
        nr0 = np.sqrt(row @ row)
        if basis is None:
            if nr0 > tol:
                keep.append(i)
                basis = row[None, :] / nr0
        else:
            resid = row - (row @ basis.T) @ basis
            nr = np.sqrt(resid @ resid)
            if nr > tol * max(1.0, nr0):
                keep.append(i)
                basis = np.vstack([basis, resid / nr])
    return keep


def _null_space(C):
    """Orthonormal null-space basis via pivoted QR of C'.

    Column pivoting makes the R diagonal non-increasing, so thresholding it
    is a sound rank test (unpivoted QR is not: an early dependent column
    zeroes the diagonal prematurely and overestimates the null space).
    """
    m, n = C.shape
    if m == 0:
        return np.eye(n)
    Qf, R, _ = _qr(C.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
    tol = max(m, n) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > max(tol, 1e-13)))
    return Qf[:, rank:]


def _active_set(Q, c, A, b, A_eq, b_eq, x, max_iter):
    """Primal active-set loop from a feasible x.  Returns (x, mu, nu, iters)."""
    n = Q.shape[0]
    q = A.shape[0]
    r = A_eq.shape[0]
    work = []           # sorted inequality working set
    if q:
        slack0 = A @ x - b
        cand = [i for i in range(q) if slack0[i] <= 1e-9]
        if cand:
            C0 = np.concatenate([A_eq, A[cand]], axis=0) if r else A[cand]
            keep = _independent_rows(C0)
            work = [cand[i - r] for i in keep if i >= r]

    in_work = np.zeros(q, dtype=bool)
    in_work[work] = True
    stall = 0                   # consecutive no-progress iterations (degeneracy guard)
    f_best = float(0.5 * x @ Q @ x + c @ x)
    since_best = 0              # iterations since the objective last improved
    window = 2 * (q + 2)
    force_fallback = False      # set when a KKT solve produced uncertified duals
    just_full = False           # last iteration took a full step, same working set
    for it in range(1, max_iter + 1):
        g = Q @ x + c
        k = r + len(work)
        C = np.empty((k, n))
        C[:r] = A_eq
        if work:
            C[r:] = A[work]

        p = None
        lam = None
        k_skip = force_fallback and k > 0
        force_fallback = False
        if k_skip:
            pass        # go straight to the curvature-splitting fallback
        elif k:
            KKT = np.zeros((n + k, n + k))
            KKT[:n, :n] = Q
            KKT[:n, n:] = -C.T
            KKT[n:, :n] = C
            rhs = np.concatenate([-g, np.zeros(k)])
            try:
                sol = np.linalg.solve(KKT, rhs)
                resid = KKT @ sol - rhs
                # an ill-conditioned system may emit a junk direction with a
                # small residual; the full-step bookkeeping below and the
                # stationarity certification in the optimality check catch it
                ok = np.max(np.abs(resid)) <= 1e-7 * max(1.0, np.max(np.abs(rhs)))
                if ok and np.sqrt(sol[:n] @ sol[:n]) <= 1e8 * (1.0 + np.sqrt(x @ x)):
                    p = sol[:n]
                    lam = sol[n:]
            except np.linalg.LinAlgError:
                pass
        else:
            try:
                p = np.linalg.solve(Q, -g)
                lam = np.zeros(0)
                if np.max(np.abs(Q @ p + g)) > 1e-7 * max(1.0, np.max(np.abs(g))):
                    p = None
            except np.linalg.LinAlgError:
                p = None

        if p is None:
            # singular reduced system: split curvature range / flat directions
            Z = _null_space(C) if k else np.eye(n)
            if Z.shape[1] == 0:
                p = np.zeros(n)
                lam = np.linalg.lstsq(C.T, g, rcond=None)[0] if k else np.zeros(0)
            else:
                Hr = Z.T @ Q @ Z
                gr = Z.T @ g
                w, V = np.linalg.eigh(0.5 * (Hr + Hr.T))
                cut = 1e-10 * max(1.0, w[-1] if w.size else 1.0)
                flat = w <= cut
                g_flat = V[:, flat].T @ gr
                if np.sqrt(g_flat @ g_flat) > 1e-9 * (1.0 + np.sqrt(g @ g)):
                    # descent ray with zero curvature: step to nearest blocker
                    d = Z @ (V[:, flat] @ -g_flat)
                    d = d / np.sqrt(d @ d)
                    alpha, j = _blocking_step(A, b, x, d, in_work, q)
                    if j is None:
                        raise Unbounded("descent ray with no blocking constraint")
                    x = x + alpha * d
                    work = sorted(work + [j])
                    in_work[j] = True
                    f_new = float(0.5 * x @ Q @ x + c @ x)
                    if f_new < f_best - 1e-9 * (1.0 + abs(f_best)):
                        f_best = f_new
                        since_best = 0
                    else:
                        since_best += 1
                    continue
                rng_mask = ~flat
                if np.any(rng_mask):
                    step_r = -(V[:, rng_mask].T @ gr) / w[rng_mask]
                    p = Z @ (V[:, rng_mask] @ step_r)
                else:
                    p = np.zeros(n)
                lam = None

        pn = np.sqrt(p @ p)
        scale = 1.0 + np.sqrt(x @ x)
        # the optimality check runs when the step is numerically zero, when a
        # full step just reached the working-set subspace minimum (the next
        # exact direction is zero, so a nonzero one is ill-conditioning noise),
        # or when the objective has made no real progress for a whole window
        if pn <= 1e-9 * scale or just_full or since_best > window:
            just_full = False
            if lam is None:
                lam = np.linalg.lstsq(C.T, g, rcond=None)[0] if k else np.zeros(0)
            mu_w = lam[r:] if k else np.zeros(0)
            if mu_w.size == 0 or np.min(mu_w) >= -1e-9:
                # the duals must actually certify stationarity; a singular
                # KKT solve can hand back nonnegative but meaningless duals
                gap = g - (C.T @ lam if k else 0.0)
                if np.max(np.abs(gap)) <= 1e-7 * max(1.0, np.max(np.abs(g))):
                    mu = np.zeros(q)
                    for idx, i in enumerate(work):
                        mu[i] = max(mu_w[idx], 0.0)
                    nu = lam[:r] if r else np.zeros(0)
                    return x, mu, nu, it
                lam_ls = np.linalg.lstsq(C.T, g, rcond=None)[0] if k else np.zeros(0)
                gap_ls = g - (C.T @ lam_ls if k else 0.0)
                if np.max(np.abs(gap_ls)) <= 1e-7 * max(1.0, np.max(np.abs(g))) \
                        and (lam_ls[r:].size == 0 or np.min(lam_ls[r:]) >= -1e-9):
                    mu = np.zeros(q)
                    for idx, i in enumerate(work):
                        mu[i] = max(lam_ls[r + idx], 0.0)
                    nu = lam_ls[:r] if r else np.zeros(0)
                    return x, mu, nu, it
                # descent remains in the working-set null space: let the
                # curvature-splitting fallback find it on the next pass
                force_fallback = True
                stall += 1
                since_best = 0
                continue
            if stall > 2 * (len(work) + 1):
                # Bland's rule once degenerate cycling is suspected
                j = int(np.flatnonzero(mu_w < -1e-9)[0])
            else:
                j = int(np.argmin(mu_w))    # most negative; argmin takes lowest index on ties
            stall += 1
            in_work[work[j]] = False
            work.pop(j)
            continue

        alpha, j = _blocking_step(A, b, x, p, in_work, q)
        alpha = min(1.0, alpha)
        x = x + alpha * p
        f_new = float(0.5 * x @ Q @ x + c @ x)
        if alpha * pn > 1e-9 * (1.0 + np.sqrt(x @ x)):
            stall = 0
        else:
            stall += 1
        if f_new < f_best - 1e-9 * (1.0 + abs(f_best)):
            f_best = f_new
            since_best = 0
        else:
            since_best += 1
        if j is not None and alpha < 1.0 - 1e-12:
            work = sorted(work + [j])
            in_work[j] = True
        else:
            just_full = True
    raise IterationLimit(f"active-set iteration limit {max_iter} reached")


def _blocking_step(A, b, x, p, in_work, q):
    """Largest step along p before an inactive constraint blocks (lowest index ties)."""
    if q == 0:
        return np.inf, None
    Ap = A @ p
    mask = (~in_work) & (Ap < -1e-12)
    if not np.any(mask):
        return np.inf, None
    slack = np.maximum(A[mask] @ x - b[mask], 0.0)
    steps = slack / (-Ap[mask])
    smin = float(np.min(steps))
    # lowest index among numerically tied blockers (Bland-style anti-cycling)
    kk = int(np.flatnonzero(steps <= smin + 1e-12 * (1.0 + smin))[0])
    idx = np.flatnonzero(mask)
    return float(steps[kk]), int(idx[kk])


def _try_working_set(qp: ConcreteQP, work0, max_adjust=12):
    """Optimality check for a guessed active set, with bounded adjustment.

    Solves the equality-constrained QP with the guessed rows tight; if the
    point violates a primal row the row is added, if a working dual is
    negative that row is dropped, for at most `max_adjust` KKT solves.  A
    point is returned only when the full KKT conditions pass, so a wrong
    guess can never produce a wrong answer — the caller falls back to the
    feasible-point active-set loop.  Returns a QpSolution or None.
    """
    n, q, r = qp.n, qp.q, qp.r
    work = [i for i in work0 if 0 <= i < q]
    for _ in range(max_adjust):
        C_all = np.concatenate([qp.A_eq, qp.A_ineq[work]], axis=0)
        d_all = np.concatenate([qp.b_eq, qp.b_ineq[work]])
        keep = _independent_rows(C_all)
        C = C_all[keep]
        d = d_all[keep]
        k = C.shape[0]
        KKT = np.zeros((n + k, n + k))
        KKT[:n, :n] = qp.Q
        KKT[:n, n:] = -C.T
        KKT[n:, :n] = C
        rhs = np.concatenate([-qp.c, d])
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            return None
        if np.max(np.abs(KKT @ sol - rhs), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(rhs))):
            return None
        x = sol[:n]
        lam = sol[n:]
        mu = np.zeros(q)
        nu = np.zeros(r)
        dropped_dep = [i for pos, i in enumerate(range(r, C_all.shape[0]))
                       if pos + r not in keep]
        for pos, row_idx in enumerate(keep):
            if row_idx < r:
                nu[row_idx] = lam[pos]
            else:
                mu[work[row_idx - r]] = lam[pos]
        scale = 1.0 + float(np.sqrt(x @ x))
        slack = qp.A_ineq @ x - qp.b_ineq if q else np.zeros(0)
        worst = int(np.argmin(slack)) if q else -1
        if q and slack[worst] < -1e-9 * scale:
            if worst in work:
                return None         # dependent violated row: give up
            work = sorted(work + [worst])
            continue
        neg = [i for i in work if mu[i] < -1e-9]
        if neg:
            j = min(neg, key=lambda i: mu[i])
            work = [i for i in work if i != j]
            continue
        mu = np.maximum(mu, 0.0)
        res = kkt_residual(qp, x, mu, nu)
        if res > 1e-8 * max(1.0, float(np.max(np.abs(qp.c), initial=0.0))):
            return None
        active = np.zeros(q, dtype=bool)
        if q:
            active = np.abs(qp.A_ineq @ x - qp.b_ineq) <= 1e-8 * (1.0 + np.abs(qp.b_ineq))
        return QpSolution(x=x, u_ineq=mu, u_eq=nu, active=active,
                          objective=qp.objective(x), kkt_residual=res, iterations=0)
    return None


def solve(qp: ConcreteQP, tol=1e-8, x0=None, max_iter=None, work0=None) -> QpSolution:
    """Solve the convex QP by the primal active-set method.

    `x0` is an optional warm start: it is corrected onto the equality
    manifold and any remaining inequality violation is removed by the
    phase-1 LP (cheap when x0 is nearly feasible).  `work0` is an optional
    guess of the optimal inequality active set (e.g. from a closely related
    solved instance); a correct guess short-circuits the iteration.  Raises
    Infeasible, Unbounded, or IterationLimit.
    """
    n, q, r = qp.n, qp.q, qp.r
    if work0 is not None and np.all(np.isfinite(qp.Q)) and np.all(np.isfinite(qp.c)):
        guess = _try_working_set(qp, work0)
        if guess is not None:
            return guess
    if max_iter is None:
        max_iter = 200 * (n + q + 1)
    if not (np.all(np.isfinite(qp.Q)) and np.all(np.isfinite(qp.c))):
        raise QpError("non-finite problem data")

    # phase 1: feasible start
    if x0 is not None:
        x = np.array(x0, dtype=float)
        if r:
            gap = qp.b_eq - qp.A_eq @ x
            if np.max(np.abs(gap)) > 1e-12:
                x = x + np.linalg.lstsq(qp.A_eq, gap, rcond=None)[0]
    elif r:
        x, _, _, _ = np.linalg.lstsq(qp.A_eq, qp.b_eq, rcond=None)
    else:
        x = np.zeros(n)
    if r and np.max(np.abs(qp.A_eq @ x - qp.b_eq)) > 1e-7 * max(1.0, np.max(np.abs(qp.b_eq))):
        raise Infeasible("inconsistent equality constraints")
    if q:
        viol = qp.b_ineq - qp.A_ineq @ x
        if np.max(viol, initial=0.0) > 1e-9:
            x_want = x
            x = _phase1(qp, x, viol, max_iter)
            if x0 is not None:
                # the LP returns some feasible vertex; pull back toward the
                # warm start along the (feasible) segment so the active-set
                # loop starts near the caller's point instead of a far corner
                d = x_want - x
                num = qp.b_ineq - qp.A_ineq @ x_want      # violation at x_want
                den = qp.A_ineq @ d
                need = num > 0.0
                # a violated row turns feasible at alpha_i = num_i / -den_i
                # (den_i < 0 since the row holds at the LP point); all rows
                # stay feasible for any alpha >= max_i alpha_i
                alpha = 1.0
                if np.any(need) and np.all(den[need] < -1e-300):
                    alpha = float(np.max(num[need] / -den[need]))
                    alpha = min(max(alpha, 0.0), 1.0)
                x = x_want - alpha * d if alpha < 1.0 else x

    x, mu, nu, iters = _active_set(qp.Q, qp.c, qp.A_ineq, qp.b_ineq,
                                   qp.A_eq, qp.b_eq, x, max_iter)
    active = np.zeros(q, dtype=bool)
    if q:
        active = np.abs(qp.A_ineq @ x - qp.b_ineq) <= 1e-8 * (1.0 + np.abs(qp.b_ineq))
    res = kkt_residual(qp, x, mu, nu)
    return QpSolution(x=x, u_ineq=mu, u_eq=nu, active=active,
                      objective=qp.objective(x), kkt_residual=res, iterations=iters)


def _phase1(qp: ConcreteQP, x, viol, max_iter):
    """Minimize total inequality violation: LP in (x, s), solved by HiGHS."""
    n, q, r = qp.n, qp.q, qp.r
    cz = np.concatenate([np.zeros(n), np.ones(q)])
    A_ub = np.zeros((q, n + q))
    A_ub[:, :n] = -qp.A_ineq
    A_ub[:, n:] = -np.eye(q)                                # -(A x + s) <= -b
    res = linprog(cz, A_ub=A_ub, b_ub=-qp.b_ineq,
                  A_eq=(np.concatenate([qp.A_eq, np.zeros((r, q))], axis=1) if r else None),
                  b_eq=(qp.b_eq if r else None),
                  bounds=[(None, None)] * n + [(0, None)] * q,
                  method="highs")
    if res.status != 0 or res.fun > 1e-7 * (1.0 + np.max(np.abs(qp.b_ineq))):
        raise Infeasible(f"phase-1 violation "
                         f"{res.fun if res.status == 0 else 'unresolved'}")
    x = np.asarray(res.x[:n], dtype=float)
    # HiGHS tolerances can leave slightly infeasible points; clean them up by a
    # least-squares push onto any marginally violated rows
    if q:
        gap = qp.b_ineq - qp.A_ineq @ x
        bad = gap > 0.0
        if np.any(bad):
            rows = np.concatenate([qp.A_ineq[bad], qp.A_eq], axis=0) if r \
                else qp.A_ineq[bad]
            rhs = np.concatenate([gap[bad] + 1e-12, np.zeros(r)])
            x = x + np.linalg.lstsq(rows, rhs, rcond=None)[0]
    return x


def enumerate_kkt(qp: ConcreteQP, tol=1e-8) -> QpSolution:
    """Exhaustive KKT oracle: try every inequality active-set pattern.

    Solves each pattern's linear KKT system by least-norm least squares,
    keeps patterns that are primal/dual feasible, and returns the best
    objective.  Intended for testing; requires q <= 20.
    """
    n, q, r = qp.n, qp.q, qp.r
    if q > 20:
        raise QpError(f"enumerate_kkt limited to q <= 20 (got {q})")
    scale = max(1.0, float(np.max(np.abs(qp.c), initial=0.0)),
                float(np.max(np.abs(qp.b_ineq), initial=0.0)))
    best = None
    for mask in range(2 ** q):
        S = [i for i in range(q) if (mask >> i) & 1]
        k = len(S)
        M = np.zeros((n + k + r, n + k + r))
        rhs = np.zeros(n + k + r)
        M[:n, :n] = qp.Q
        rhs[:n] = -qp.c
        if k:
            M[:n, n:n + k] = -qp.A_ineq[S].T
            M[n:n + k, :n] = qp.A_ineq[S]
            rhs[n:n + k] = qp.b_ineq[S]
        if r:
            M[:n, n + k:] = -qp.A_eq.T
            M[n + k:, :n] = qp.A_eq
            rhs[n + k:] = qp.b_eq
        sol, _, _, _ = np.linalg.lstsq(M, rhs, rcond=None)
        if np.max(np.abs(M @ sol - rhs), initial=0.0) > tol * scale:
            continue
        x = sol[:n]
        mu_S = sol[n:n + k]
        nu = sol[n + k:]
        if q and np.min(qp.A_ineq @ x - qp.b_ineq) < -tol * scale:
            continue
        if k and np.min(mu_S) < -tol * scale:
            continue
        obj = qp.objective(x)
        if best is None or obj < best[0] - 1e-12:
            mu = np.zeros(q)
            mu[S] = np.maximum(mu_S, 0.0)
            best = (obj, x, mu, nu, mask)
    if best is None:
        raise Infeasible("no KKT-consistent active-set pattern")
    obj, x, mu, nu, mask = best
    active = np.array([(mask >> i) & 1 == 1 for i in range(q)], dtype=bool)
    return QpSolution(x=x, u_ineq=mu, u_eq=nu, active=active, objective=obj,
                      kkt_residual=kkt_residual(qp, x, mu, nu))
