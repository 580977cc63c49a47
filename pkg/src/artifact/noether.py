"""
Inner-variation conditions: the Noether inclusion and conservation of energy.

The Noether inclusion asks for a flux ``zeta`` with values in ``d x d``
matrices such that, cell by cell,

    (0, -div zeta, zeta) = (a, v1, grad u^T v2) + (0, w1, grad u^T w2 - f I),

where ``(a, v1, v2)`` ranges over the hypodifferential of ``f`` in ``(x, xi)``
and ``(0, w1, w2)`` is a selection of its hyperdifferential.  Since ``a`` must
vanish only the zero face of the hypodifferential enters.  As in
:mod:`artifact.optimality` the flux is eliminated: it is an affine function of
the convex coefficients, and ``-div zeta = s`` is imposed in weak form,

    sum_c w_c (sum_j zeta_c[r, j] G_j[c, n] - s_c[r] avg[c, n]) = 0

at every interior node ``n`` and every row ``r``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import lp as _lp
from .codiff_core import zero_face
from .discretize import DiscreteField, Grid, assemble_codifferential, divergence, gradient
from .expr import X_XI, VariableSelector
from .optimality import Certificate, SelectionLike, Verdict, VariationalProblem, _resolve_selection, _selected_points

__all__ = ["NoetherCertificate", "XI_ONLY", "check_energy_conservation", "check_noether"]

NoetherCertificate = Certificate

XI_ONLY = VariableSelector(("xi",))


def _weak_rows(grid: Grid) -> tuple:
    """``(R_s, R_z)``: node residual operators for the per-cell source ``s`` (d) and flux ``zeta`` (d x d)."""
    d = grid.d
    W = sp.diags(grid.weights)
    eye = sp.identity(d, format="csr")
    R_s = -sp.kron(grid.avg_matrix.T @ W, eye, format="csr")  # (nn*d, nc*d)
    parts = []
    for j, G in enumerate(grid.grad_matrices):
        e_j = sp.csr_matrix(([1.0], ([0], [j])), shape=(1, d))
        parts.append(sp.kron(sp.kron(G.T @ W, eye), e_j))
    R_z = sum(parts).tocsr()  # (nn*d, nc*d*d), flux index (c*d + r)*d + j
    return R_s, R_z


def check_noether(p: VariationalProblem, u: DiscreteField, hyper_sel: SelectionLike = None) -> Certificate:
    """
    Discrete Noether inclusion at ``u``.

    ``hyper_sel`` selects a zero-face point of each cell hyperdifferential in
    the ``(x, xi)`` variables; the default is the first zero-face vertex.
    """
    grid, m = p.grid, p.m
    d = grid.d
    if d not in (1, 2):
        raise ValueError(f"the Noether check supports d = 1 or 2, got d = {d}")
    if u.grid.cells != grid.cells or u.m != m:
        raise ValueError("field does not match the problem grid or dimension")
    F = assemble_codifferential(p.integrand, grid, u, X_XI)
    sel = _resolve_selection(hyper_sel, F)
    w = _selected_points(sel, F)
    xi = gradient(grid, u)  # (nc, m, d)
    f = F.values
    nc = grid.n_cells

    faces = [zero_face(cd.hypo) for cd in F.cells]
    b = _lp.LpBuilder()
    sizes = [len(V) for V in faces]
    th = b.add_variables("theta", int(sum(sizes)))
    starts = np.concatenate([[0], np.cumsum(sizes)])

    # per-cell affine maps theta -> s (d) and theta -> zeta (d*d)
    S_rows, S_cols, S_vals = [], [], []
    Z_rows, Z_cols, Z_vals = [], [], []
    s0 = np.zeros((nc, d))
    z0 = np.zeros((nc, d, d))
    for c in range(nc):
        V = faces[c]
        cols = th.start + starts[c] + np.arange(len(V))
        V1 = V[:, :d]
        V2 = V[:, d:].reshape(len(V), m, d)
        J = xi[c]  # (m, d): J[i, r] = d u_i / d x_r
        Zc = np.einsum("ir,kij->krj", J, V2)  # per vertex k: grad u^T v2, shape (k, d, d)
        for r in range(d):
            S_rows.append(np.full(len(V), c * d + r))
            S_cols.append(cols)
            S_vals.append(V1[:, r])
            for j in range(d):
                Z_rows.append(np.full(len(V), (c * d + r) * d + j))
                Z_cols.append(cols)
                Z_vals.append(Zc[:, r, j])
        s0[c] = w[c, :d]
        z0[c] = J.T @ w[c, d:].reshape(m, d) - f[c] * np.eye(d)
        b.add_row({tuple(cols.tolist()): 1.0}, "==", 1.0, f"convex[{c}]")
    n = b.n
    S = sp.csr_matrix((np.concatenate(S_vals), (np.concatenate(S_rows), np.concatenate(S_cols))), shape=(nc * d, n))
    Z = sp.csr_matrix((np.concatenate(Z_vals), (np.concatenate(Z_rows), np.concatenate(Z_cols))), shape=(nc * d * d, n))
    R_s, R_z = _weak_rows(grid)
    A = (R_s @ S + R_z @ Z).tocsr()
    r0 = R_s @ s0.ravel() + R_z @ z0.ravel()
    for node in grid.interior:
        for r in range(d):
            row = node * d + r
            lo, hi = A.indptr[row], A.indptr[row + 1]
            b.add_row({tuple(A.indices[lo:hi].tolist()): A.data[lo:hi]}, "==", -r0[row], f"node[{node},{r + 1}]")
    prog = b.build()
    out = _lp.solve(prog)

    if out.status is _lp.LpStatus.FEASIBLE:
        x = out.x
        s = (S @ x).reshape(nc, d) + s0
        zeta = (Z @ x).reshape(nc, d, d) + z0
        cert = Certificate(Verdict.HOLD, "noether", grid.cells, lp=prog, outcome=out, selections={"w": sel})
        cert.witness.update(x=x, zeta=zeta, source=s, div_zeta=divergence(grid, zeta))
        cert.witness["theta"] = x[th]
        return cert
    if out.status is _lp.LpStatus.INFEASIBLE:
        return Certificate(
            Verdict.FAIL, "noether", grid.cells, message="Noether inclusion violated at this resolution",
            farkas=out.farkas, selections={"w": sel}, lp=prog, outcome=out,
        )
    return Certificate(
        Verdict.INCONCLUSIVE, "noether", grid.cells, message=f"LP solver: {out.status.name}", lp=prog, outcome=out
    )


def check_energy_conservation(p: VariationalProblem, u: DiscreteField) -> Certificate:
    """
    Nonsmooth conservation of energy for autonomous 1D integrands.

    Feasibility of ``<u'_c, v2_c + w2_c> - f_c = c`` for every cell, with
    ``v2_c`` in the zero face of the hypodifferential and ``w2_c`` in the zero
    face of the hyperdifferential of ``f`` in ``xi``, and one free constant ``c``.
    """
    grid, m = p.grid, p.m
    if grid.d != 1:
        raise ValueError("the energy check needs d = 1")
    if p.integrand.depends_on("x"):
        raise ValueError("the energy check needs an autonomous integrand (no explicit x)")
    if u.grid.cells != grid.cells or u.m != m:
        raise ValueError("field does not match the problem grid or dimension")
    F = assemble_codifferential(p.integrand, grid, u, XI_ONLY)
    xi = gradient(grid, u).reshape(grid.n_cells, m)
    b = _lp.LpBuilder()
    cvar = b.add_variables("c", 1, free=True)
    blocks = []
    for c, cd in enumerate(F.cells):
        V = zero_face(cd.hypo)
        Wv = zero_face(cd.hyper)
        tv = b.add_variables(f"theta[{c}]", len(V), labels=[f"theta[{c},{k}]" for k in range(len(V))])
        tw = b.add_variables(f"omega[{c}]", len(Wv), labels=[f"omega[{c},{k}]" for k in range(len(Wv))])
        blocks.append((tv, tw, V, Wv))
        b.add_row({f"theta[{c}]": 1.0}, "==", 1.0, f"convex_hypo[{c}]")
        b.add_row({f"omega[{c}]": 1.0}, "==", 1.0, f"convex_hyper[{c}]")
        b.add_row(
            {f"theta[{c}]": V @ xi[c], f"omega[{c}]": Wv @ xi[c], "c": -1.0}, "==", float(F.values[c]), f"energy[{c}]"
        )
    prog = b.build()
    out = _lp.solve(prog)
    if out.status is _lp.LpStatus.FEASIBLE:
        x = out.x
        cert = Certificate(Verdict.HOLD, "energy", grid.cells, lp=prog, outcome=out)
        v2 = np.array([V.T @ x[tv] for tv, _, V, _ in blocks])
        w2 = np.array([Wv.T @ x[tw] for _, tw, _, Wv in blocks])
        energy = np.einsum("ci,ci->c", xi, v2 + w2) - F.values
        cert.witness.update(x=x, v2=v2, w2=w2, energy=energy)
        cert.extras["c"] = float(x[cvar][0])
        return cert
    if out.status is _lp.LpStatus.INFEASIBLE:
        return Certificate(
            Verdict.FAIL, "energy", grid.cells, message="no constant energy level is compatible with the codifferential",
            farkas=out.farkas, lp=prog, outcome=out,
        )
    return Certificate(Verdict.INCONCLUSIVE, "energy", grid.cells, message=f"LP solver: {out.status.name}", lp=prog, outcome=out)
