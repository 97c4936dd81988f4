"""Primal-dual interior point solver for convex QPs and LPs.

Problem form::

    minimize    0.5 x'Px + q'x + r
    subject to  A x  = b
                G x <= h
                lb <= x <= ub

Multipliers follow the Lagrangian ``f(x) + y'(Ax - b) + z'(Gx - h)`` with
``z >= 0``; bound multipliers ``z_lb``, ``z_ub`` are nonnegative and enter
stationarity as ``- z_lb + z_ub``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

__all__ = ["QpProblem", "QpSolution", "solve_qp", "solve_lp", "kkt_residuals", "dump_problem"]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

# KKT systems up to this size are factored densely
DENSE_LIMIT = 600


def _as_matrix(M, rows: int | None, n: int):
    if M is None:
        return sp.csr_matrix((0 if rows is None else rows, n))
    if sp.issparse(M):
        return M.tocsr().astype(float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return sp.csr_matrix((0, n))
    return sp.csr_matrix(M)


@dataclass
class QpProblem:
    q: np.ndarray
    P: sp.spmatrix | np.ndarray | None = None
    A: sp.spmatrix | np.ndarray | None = None
    b: np.ndarray | None = None
    G: sp.spmatrix | np.ndarray | None = None
    h: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    r: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.P = sp.csr_matrix((n, n)) if self.P is None else _as_matrix(self.P, n, n)
        self.A = _as_matrix(self.A, None, n)
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).ravel()
        self.G = _as_matrix(self.G, None, n)
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).ravel()
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel().copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel().copy()
        self.validate()

    @property
    def n(self) -> int:
        return self.q.size

    def validate(self) -> None:
        n = self.n
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape[1] != n or self.A.shape[0] != self.b.size:
            raise ValueError("A and b dimensions disagree")
        if self.G.shape[1] != n or self.G.shape[0] != self.h.size:
            raise ValueError("G and h dimensions disagree")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must have length n")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")
        if np.isnan(self.h).any() or np.isnan(self.b).any():
            raise ValueError("right-hand sides contain NaN")
        if self.P.nnz:
            asym = abs(self.P - self.P.T)
            if asym.nnz and asym.max() > 1e-10 * max(1.0, abs(self.P).max()):
                raise ValueError("P is not symmetric")

    def check_psd(self) -> None:
        """Attempt a Cholesky factorisation of ``P + eps I``."""
        if not self.P.nnz:
            return
        n = self.n
        eps = 1e-10 * max(1.0, abs(self.P).max())
        if n <= 2000:
            try:
                la.cholesky(self.P.toarray() + eps * np.eye(n))
            except la.LinAlgError:
                raise ValueError("P is not positive semidefinite") from None
        else:
            d = self.P.diagonal()
            if np.any(d < -eps):
                raise ValueError("P is not positive semidefinite")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.r)

    @property
    def is_lp(self) -> bool:
        return self.P.nnz == 0 or abs(self.P).max() == 0


@dataclass
class QpSolution:
    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    z_lb: np.ndarray
    z_ub: np.ndarray
    objective: float
    iterations: int
    dual_objective: float = np.nan
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(prob: QpProblem, sol: QpSolution) -> dict[str, float]:
    """Infinity-norm KKT residuals of a solution against its problem."""
    x = sol.x
    stat = prob.P @ x + prob.q + prob.A.T @ sol.y + prob.G.T @ sol.z - sol.z_lb + sol.z_ub
    eq = prob.A @ x - prob.b
    ineq = np.maximum(prob.G @ x - prob.h, 0.0)
    lo = np.where(np.isfinite(prob.lb), np.maximum(prob.lb - x, 0.0), 0.0)
    hi = np.where(np.isfinite(prob.ub), np.maximum(x - prob.ub, 0.0), 0.0)
    slack_g = prob.h - prob.G @ x
    comp = [np.abs(sol.z * slack_g)]
    fin_lb = np.isfinite(prob.lb)
    fin_ub = np.isfinite(prob.ub)
    comp.append(np.abs(sol.z_lb[fin_lb] * (x[fin_lb] - prob.lb[fin_lb])))
    comp.append(np.abs(sol.z_ub[fin_ub] * (prob.ub[fin_ub] - x[fin_ub])))
    neg = min(0.0, *(v.min() for v in (sol.z, sol.z_lb, sol.z_ub) if v.size))

    def inf(v):
        return float(np.max(np.abs(v))) if v.size else 0.0

    return {
        "stationarity": inf(stat),
        "primal_eq": inf(eq),
        "primal_ineq": max(inf(ineq), inf(lo), inf(hi)),
        "complementarity": max(inf(c) for c in comp),
        "dual_sign": -neg,
    }


def dump_problem(prob: QpProblem, stream) -> None:
    """Write a plain-text summary of a problem for triage."""
    w = stream.write
    w(f"n {prob.n}\n")
    w(f"P nnz {prob.P.nnz}\n")
    w(f"A {prob.A.shape[0]} x {prob.A.shape[1]} nnz {prob.A.nnz}\n")
    w(f"G {prob.G.shape[0]} x {prob.G.shape[1]} nnz {prob.G.nnz}\n")
    w(f"finite lb {int(np.isfinite(prob.lb).sum())} finite ub {int(np.isfinite(prob.ub).sum())}\n")
    for name, v in (("q", prob.q), ("b", prob.b), ("h", prob.h), ("lb", prob.lb), ("ub", prob.ub)):
        w(f"{name} " + " ".join(f"{x:.17g}" for x in v) + "\n")
    for name, M in (("P", prob.P), ("A", prob.A), ("G", prob.G)):
        coo = M.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            w(f"{name} {i} {j} {v:.17g}\n")


class _Kkt:
    """Factorisation of ``[[H, B'], [B, -D]]`` (regularised) with iterative refinement.

    ``D`` is a non-negative diagonal; rows with ``D = 0`` are equalities.
    """

    def __init__(self, H: sp.spmatrix, B: sp.spmatrix, reg: float, delta: float, D: np.ndarray | None = None):
        n, p = H.shape[0], B.shape[0]
        self.n, self.p = n, p
        D = np.zeros(p) if D is None else D
        self.exact = sp.bmat([[H, B.T], [B, sp.diags(-D)]], format="csc") if p else sp.csc_matrix(H)
        reg_diag = np.concatenate([np.full(n, reg), np.full(p, -delta)])
        K = (self.exact + sp.diags(reg_diag)).tocsc()
        self.dense = n + p <= DENSE_LIMIT
        if self.dense:
            self.lu = la.lu_factor(K.toarray(), check_finite=False)
        else:
            self.lu = spla.splu(K, permc_spec="COLAMD")

    def _solve_once(self, r: np.ndarray) -> np.ndarray:
        if self.dense:
            return la.lu_solve(self.lu, r, check_finite=False)
        return self.lu.solve(r)

    def solve(self, r: np.ndarray, refine: int = 3) -> np.ndarray:
        x = self._solve_once(r)
        for _ in range(refine):
            res = r - self.exact @ x
            if not np.all(np.isfinite(res)):
                break
            if np.max(np.abs(res)) <= 1e-14 * max(1.0, np.max(np.abs(r))):
                break
            x = x + self._solve_once(res)
        return x


def _step_to_boundary(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _ipm(
    P, q, A, b, G, h, tol: float, max_iter: int, x0=None
) -> tuple[str, np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Core Mehrotra predictor-corrector on ``Gx + s = h`` form."""
    n, p, m = q.size, A.shape[0], G.shape[0]
    reg, delta = 1e-9, 1e-9
    GT = G.T.tocsr()
    AT = A.T.tocsr()
    scale_b = 1.0 + (np.max(np.abs(b)) if p else 0.0)
    scale_h = 1.0 + (np.max(np.abs(h)) if m else 0.0)
    scale_q = 1.0 + np.max(np.abs(q)) if n else 1.0

    if m == 0:
        kkt = _Kkt(P.tocsc(), A, reg, delta)
        sol = kkt.solve(np.concatenate([-q, b]), refine=10)
        x, y = sol[:n], sol[n:]
        rd = P @ x + q + AT @ y
        rp = A @ x - b
        if p and np.max(np.abs(rp)) > tol * scale_b * 1e3:
            return INFEASIBLE, x, y, np.zeros(0), np.zeros(0), 1
        if np.max(np.abs(rd)) > tol * scale_q * 1e3:
            return UNBOUNDED, x, y, np.zeros(0), np.zeros(0), 1
        return OPTIMAL, x, y, np.zeros(0), np.zeros(0), 1

    # initial point: least-squares fit of the inequalities
    kkt = _Kkt((P + GT @ G).tocsc(), A, reg, delta)
    sol = kkt.solve(np.concatenate([-q + GT @ h, b]))
    x = sol[:n] if x0 is None else np.asarray(x0, dtype=float).copy()
    y = sol[n:]
    s = h - G @ x
    z = -s.copy()
    a_s = -s.min()
    if a_s >= -1e-8:
        s = s + (1.0 + a_s)
    a_z = -z.min()
    if a_z >= -1e-8:
        z = z + (1.0 + a_z)

    status = ITERATION_LIMIT
    it = 0
    stall = 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + AT @ y + GT @ z
        rp = A @ x - b
        rg = G @ x + s - h
        mu = float(s @ z) / m
        obj = 0.5 * x @ (P @ x) + q @ x
        pres = max(np.max(np.abs(rp)) / scale_b if p else 0.0, np.max(np.abs(rg)) / scale_h)
        dres = np.max(np.abs(rd)) / scale_q
        gap = float(s @ z)
        log.debug("ipm it=%d pres=%.2e dres=%.2e gap=%.2e obj=%.10g", it, pres, dres, gap, obj)
        if pres <= tol and dres <= tol and gap <= tol * (1.0 + abs(obj)) and np.max(s * z) <= tol:
            status = OPTIMAL
            break
        xn = np.max(np.abs(x))
        zn = max(np.max(np.abs(z)), np.max(np.abs(y)) if p else 0.0)
        if zn > 1e13 * scale_q:
            status = INFEASIBLE
            break
        if xn > 1e10 * max(scale_b, scale_h):
            status = UNBOUNDED
            break

        B = sp.vstack([A, G]).tocsr()
        try:
            kkt = _Kkt(P.tocsc(), B, reg, delta, np.concatenate([np.zeros(p), s / z]))
        except (RuntimeError, ValueError, la.LinAlgError):
            status = ITERATION_LIMIT
            log.debug("KKT factorisation failed at iteration %d", it)
            break

        def direction(rc):
            d = kkt.solve(np.concatenate([-rd, -rp, rc / z - rg]))
            dx, dy, dz = d[:n], d[n : n + p], d[n + p :]
            # from the complementarity row; avoids cancellation in G dx when s is tiny
            ds = -(rc + s * dz) / z
            return dx, dy, ds, dz

        dx, dy, ds, dz = direction(s * z)
        a_aff = min(_step_to_boundary(s, ds), _step_to_boundary(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        sigma = min(1.0, max(0.0, sigma))
        dx, dy, ds, dz = direction(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_step_to_boundary(s, ds), _step_to_boundary(z, dz)))
        if not np.isfinite(alpha) or not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
            status = ITERATION_LIMIT
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)
        stall = stall + 1 if alpha < 1e-8 else 0
        if stall >= 5:
            status = ITERATION_LIMIT
            break
    return status, x, y, z, s, it


def _phase1(A, b, G, h, tol: float, max_iter: int) -> float:
    """Total violation of the cheapest point of ``Ax = b, Gx <= h``."""
    n, p, m = A.shape[1], A.shape[0], G.shape[0]
    # variables: x, u (p), v (p), w (m)
    nv = n + 2 * p + m
    q = np.concatenate([np.zeros(n), np.ones(2 * p + m)])
    A1 = sp.hstack([A, sp.eye(p), -sp.eye(p), sp.csr_matrix((p, m))]).tocsr() if p else sp.csr_matrix((0, nv))
    G1 = sp.vstack(
        [
            sp.hstack([G, sp.csr_matrix((m, 2 * p)), -sp.eye(m)]),
            sp.hstack([sp.csr_matrix((2 * p + m, n)), -sp.eye(2 * p + m)]),
        ]
    ).tocsr()
    h1 = np.concatenate([h, np.zeros(2 * p + m)])
    P1 = sp.csr_matrix((nv, nv))
    status, x, *_ = _ipm(P1, q, A1, b, G1, h1, tol, max_iter)
    if status != OPTIMAL:
        log.debug("phase-1 ended with status %s", status)
    return float(q @ x)


def _stack_bounds(prob: QpProblem):
    """Finite bounds as extra inequality rows; fixed variables become equalities."""
    n = prob.n
    fixed = np.isfinite(prob.lb) & (prob.lb == prob.ub)
    fix = np.flatnonzero(fixed)
    fin_lb = np.flatnonzero(np.isfinite(prob.lb) & ~fixed)
    fin_ub = np.flatnonzero(np.isfinite(prob.ub) & ~fixed)
    rows = [prob.G]
    rhs = [prob.h]
    if fin_ub.size:
        rows.append(sp.csr_matrix((np.ones(fin_ub.size), (np.arange(fin_ub.size), fin_ub)), shape=(fin_ub.size, n)))
        rhs.append(prob.ub[fin_ub])
    if fin_lb.size:
        rows.append(sp.csr_matrix((-np.ones(fin_lb.size), (np.arange(fin_lb.size), fin_lb)), shape=(fin_lb.size, n)))
        rhs.append(-prob.lb[fin_lb])
    # drop rows with an infinite right-hand side
    G = sp.vstack(rows).tocsr()
    h = np.concatenate(rhs)
    keep = np.isfinite(h)
    A, b = prob.A, prob.b
    if fix.size:
        E = sp.csr_matrix((np.ones(fix.size), (np.arange(fix.size), fix)), shape=(fix.size, n))
        A = sp.vstack([A, E]).tocsr()
        b = np.concatenate([b, prob.lb[fix]])
    return A, b, G[keep], h[keep], keep, fin_lb, fin_ub, fix


def solve_qp(prob: QpProblem, tol: float = 1e-9, max_iter: int = 100, x0=None) -> QpSolution:
    """Solve a convex QP; statuses are optimal, infeasible, unbounded or iteration-limit."""
    prob.check_psd()
    n = prob.n
    mg = prob.G.shape[0]
    p = prob.A.shape[0]
    A, b, G, h, keep, fin_lb, fin_ub, fix = _stack_bounds(prob)
    status, x, y_all, zz, s, it = _ipm(prob.P, prob.q, A, b, G, h, tol, max_iter, x0)

    if status != OPTIMAL:
        viol = _phase1(A, b, G, h, tol, max_iter)
        scale = 1.0 + max(np.max(np.abs(b)) if b.size else 0.0, np.max(np.abs(h)) if h.size else 0.0)
        if viol > 1e-6 * scale:
            status = INFEASIBLE
        elif status in (UNBOUNDED, INFEASIBLE) or np.max(np.abs(x)) > 1e8 * scale:
            # feasible, yet the iterates ran away
            status = UNBOUNDED
        log.debug("solve_qp: phase-1 violation %.3g -> %s", viol, status)

    y = y_all[:p]
    z_full = np.zeros(keep.size)
    z_full[keep] = zz if zz.size else 0.0
    z = z_full[:mg]
    z_ub = np.zeros(n)
    z_lb = np.zeros(n)
    z_ub[fin_ub] = z_full[mg : mg + fin_ub.size]
    z_lb[fin_lb] = z_full[mg + fin_ub.size :]
    if fix.size:
        y_fix = y_all[p:]
        z_ub[fix] = np.maximum(y_fix, 0.0)
        z_lb[fix] = np.maximum(-y_fix, 0.0)
    obj = prob.objective(x)
    dual = np.nan
    if status == OPTIMAL:
        dual = float(-0.5 * x @ (prob.P @ x) - b @ y_all - h @ zz + prob.r) if h.size else float(
            -0.5 * x @ (prob.P @ x) - b @ y_all + prob.r
        )
    return QpSolution(status, x, y, z, z_lb, z_ub, obj, it, dual)


def solve_lp(prob: QpProblem, tol: float = 1e-9, max_iter: int = 100, x0=None) -> QpSolution:
    """Solve a linear program (a QP whose curvature is zero)."""
    if not prob.is_lp:
        raise ValueError("solve_lp needs a problem without quadratic terms")
    return solve_qp(prob, tol, max_iter, x0)
