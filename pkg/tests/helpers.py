"""Independent oracles shared by the test modules."""

import itertools

import numpy as np


def _independent_rows(A, b):
    """Drop redundant equality rows; ``None`` when the equalities are inconsistent."""
    keep = []
    for i in range(A.shape[0]):
        trial = keep + [i]
        if np.linalg.matrix_rank(A[trial]) == len(trial):
            keep = trial
        elif np.linalg.matrix_rank(np.column_stack([A[trial], b[trial]])) > np.linalg.matrix_rank(A[trial]):
            return None
    return A[keep], b[keep]


def _vertices(A_eq, b_eq, A_ineq, b_ineq, tol=1e-9):
    """All basic feasible solutions of {A_eq x = b_eq, A_ineq x <= b_ineq}, by batched subset enumeration."""
    reduced = _independent_rows(A_eq, b_eq)
    if reduced is None:
        return []
    A_eq, b_eq = reduced
    n = A_ineq.shape[1]
    size = n - A_eq.shape[0]
    if size > A_ineq.shape[0]:
        return []
    combos = list(itertools.combinations(range(A_ineq.shape[0]), size))
    subsets = np.array(combos, dtype=int).reshape(len(combos), size)
    M = np.concatenate([np.broadcast_to(A_eq, (len(subsets),) + A_eq.shape), A_ineq[subsets]], axis=1)
    rhs = np.concatenate([np.broadcast_to(b_eq, (len(subsets), len(b_eq))), b_ineq[subsets]], axis=1)
    ok = np.abs(np.linalg.det(M)) > 1e-9
    if not np.any(ok):
        return []
    X = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    scale = np.maximum(1.0, np.abs(X).max(axis=1))
    feas = np.ones(len(X), dtype=bool)
    if A_eq.shape[0]:
        feas &= np.max(np.abs(X @ A_eq.T - b_eq), axis=1) <= tol * scale
    if A_ineq.shape[0]:
        feas &= np.max(X @ A_ineq.T - b_ineq, axis=1) <= tol * scale
    return list(X[feas])


def brute_force_lp(p, box=1e6):
    """
    Solve a tiny LinearProgram by enumerating basic solutions.

    Returns ``("infeasible", None)``, ``("unbounded", None)`` or
    ``("feasible", value)``; free variables are boxed by ``box`` so that the
    feasible set is pointed.
    """
    n = p.n
    eye = np.eye(n)
    nonneg = ~p.free
    A_ineq = np.vstack([p.A_le, -eye[nonneg], eye[p.free], -eye[p.free]])
    b_ineq = np.concatenate([p.b_le, np.zeros(nonneg.sum()), np.full(2 * p.free.sum(), box)])
    verts = _vertices(p.A_eq, p.b_eq, A_ineq, b_ineq)
    if not verts:
        return "infeasible", None
    if p.c is None:
        return "feasible", 0.0
    A_cone = np.vstack([p.A_le, -eye[nonneg], eye, -eye])
    b_cone = np.concatenate([np.zeros(p.n_le + nonneg.sum()), np.ones(2 * n)])
    rays = _vertices(p.A_eq, np.zeros(p.n_eq), A_cone, b_cone)
    if min(float(p.c @ d) for d in rays) < -1e-9:
        return "unbounded", None
    return "feasible", min(float(p.c @ x) for x in verts)


def random_lp(rng, max_vars=6):
    """Small random LP with integer data; mixes equality rows, inequality rows and free variables."""
    from artifact.lp import LinearProgram

    n = int(rng.integers(1, max_vars + 1))
    n_eq = int(rng.integers(0, min(3, n) + 1))
    n_le = int(rng.integers(0, 5))
    A_eq = rng.integers(-3, 4, size=(n_eq, n)).astype(float)
    A_le = rng.integers(-3, 4, size=(n_le, n)).astype(float)
    x0 = rng.integers(-2, 3, size=n).astype(float)
    free = rng.random(n) < 0.3
    if rng.random() < 0.7:
        # plant a feasible point so that most instances are feasible
        x0[~free] = np.abs(x0[~free])
        b_eq = A_eq @ x0
        b_le = A_le @ x0 + rng.integers(0, 3, size=n_le)
    else:
        b_eq = rng.integers(-3, 4, size=n_eq).astype(float)
        b_le = rng.integers(-3, 4, size=n_le).astype(float)
    c = rng.integers(-3, 4, size=n).astype(float) if rng.random() < 0.85 else None
    return LinearProgram(n, c, A_eq, b_eq, A_le, b_le, free)


# Integrand library: (text, d, m).  Covers every example integrand and constraint plus smooth controls.
LIBRARY = [
    ("abs(xi1) - abs(xi2)", 2, 1),
    ("0.5*xi11^2 + 0.5*xi21^2 + abs(u1) + abs(u2)", 1, 2),
    ("max(-abs(u), -abs(xi))", 1, 1),
    ("-abs(xi)", 1, 1),
    ("u - abs(xi)", 1, 1),
    ("max(abs(xi) - abs(u), 0)", 1, 1),
    ("0.5*xi^2", 1, 1),
    ("0.5*xi^2 + abs(u)", 1, 1),
    ("abs(u)*abs(xi) + sin(x)*u", 1, 1),
    ("min(u^2, abs(xi - 1)) + exp(-x)*xi", 1, 1),
    ("max(abs(xi11), abs(xi12)) + square(u1)", 2, 1),
]


def random_state(rng, d, m, scale=1.0):
    """Random ``(x, u, xi)`` with the shapes expected by the expression evaluator."""
    return rng.normal(size=d), rng.normal(size=m) * scale, rng.normal(size=(m, d)) * scale


def split_direction(dx, d, m):
    """Split a flat ``(u, xi)`` increment into its blocks."""
    dx = np.asarray(dx, dtype=float)
    return dx[:m], dx[m:].reshape(m, d)
