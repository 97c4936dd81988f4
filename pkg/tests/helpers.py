"""Shared generators for the test modules."""

import numpy as np

from hydrodispatch.dispatch.refine import FlowProjector
from hydrodispatch.qp import solve_qp


def random_qp(rng, n=None, n_eq=None, n_in=None):
    n = n or int(rng.integers(2, 9))
    n_eq = int(rng.integers(0, 3)) if n_eq is None else n_eq
    n_eq = min(n_eq, n - 1)
    n_in = int(rng.integers(1, 7)) if n_in is None else n_in
    R = rng.normal(size=(n, n))
    P = R @ R.T + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3
    x0 = rng.normal(size=n)  # a strictly feasible point
    A = rng.normal(size=(n_eq, n)) if n_eq else None
    b = A @ x0 if n_eq else None
    G = rng.normal(size=(n_in, n))
    h = G @ x0 + rng.uniform(0.1, 2.0, n_in)
    return P, q, A, b, G, h


def solve_sp(model, m):
    eta = None if model.steady else model.weights(m)
    prob, _ = model.subproblem(m, eta)
    return solve_qp(prob, tol=1e-10, max_iter=150), eta


def random_flows(model, rng, spread=0.8):
    proj = FlowProjector(model)
    lo, hi = model.m_lb, model.m_ub
    y = lo + (hi - lo) * (0.5 + spread * (rng.random(model.n_m) - 0.5))
    return proj(y)


def same_support(a, b):
    return all(
        wa.front() == wb.front() and np.array_equal(wa.alpha == 1, wb.alpha == 1) and np.array_equal(wa.beta == 1, wb.beta == 1)
        for ra, rb in zip(a, b)
        for wa, wb in zip(ra, rb)
    )


def fd_check_points(model, count, seed=0, h=1e-5):
    """Directional derivative of mu' g1(x, m, eta(m)) against the cut gradient."""
    rng = np.random.default_rng(seed)
    errors = []
    while len(errors) < count:
        m = random_flows(model, rng)
        sol, eta = solve_sp(model, m)
        if sol.status != "optimal":
            continue
        mu = sol.y[model.A_s.shape[0] :]
        grad = model.coupling_jacobian(sol.x, m, eta).T @ mu
        d = rng.normal(size=model.n_m)
        d /= np.max(np.abs(d))
        step = h * np.maximum(m, 1.0)
        mp, mm = m + step * d, m - step * d
        ep, em = model.weights(mp), model.weights(mm)
        if eta is not None and not (same_support(ep, eta) and same_support(em, eta)):
            continue  # too close to an exact-fill point
        fp = mu @ model.coupling(mp, ep).value(sol.x)
        fm = mu @ model.coupling(mm, em).value(sol.x)
        fd = (fp - fm) / 2.0
        an = float(grad @ (step * d))
        errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-12))
    return np.array(errors)
