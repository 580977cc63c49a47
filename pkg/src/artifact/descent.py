"""
Trust-region descent driven by codifferentials of the discrete functional.

At the current iterate every cell contributes the local model

    Phi_c(delta) + <w_c, delta>,    delta = (hbar_c, (grad h)_c),

where ``Phi_c`` is the max-affine function of the cell hypodifferential and
``w_c`` one vertex of the cell hyperdifferential (with its offset).  Because
the hyperdifferential part of the increment is a minimum over its vertices,
every fixed vertex choice gives an upper model of the increment.  For each
choice in a small enumerated family the model is minimized over the box
``|h_n| <= r`` by one LP; the best step is tried on the true objective.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import scipy.sparse as sp
from scipy.optimize import linprog

from .codiff_core import zero_face
from .discretize import DiscreteField, DiscreteFunctional, assemble_codifferential, increment_operator
from .expr import U_XI
from .optimality import VariationalProblem

__all__ = ["DescentParams", "DescentResult", "TraceRow", "solve", "thread_count"]

THREADS_ENV = "ARTIFACT_THREADS"


@dataclass(frozen=True)
class DescentParams:
    """
    Solver settings.

    ``eps_stat`` is compared with the best model decrease per unit radius, so
    that a shrinking trust region alone never reports stationarity.
    ``target`` stops the run as soon as the objective reaches it.
    """

    radius: float = 0.25
    shrink: float = 0.5
    grow: float = 2.0
    max_iter: int = 200
    eps_stat: float = 1e-9
    cap: int = 16
    accept: float = 0.1
    good: float = 0.75
    min_radius: float = 1e-14
    max_radius: float = 1e6
    bundle: int = 8
    target: Optional[float] = None
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("trust radius must be positive")
        if not 0 < self.shrink < 1 < self.grow:
            raise ValueError("need 0 < shrink < 1 < grow")
        if self.max_iter < 0 or self.cap < 1:
            raise ValueError("max_iter must be nonnegative and cap at least 1")
        if not 0 < self.accept <= self.good <= 1:
            raise ValueError("need 0 < accept <= good <= 1")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    value: float
    model_decrease: float
    actual_decrease: float
    radius: float
    accepted: bool
    choices: int


@dataclass
class DescentResult:
    u: DiscreteField
    value: float
    reason: str
    trace: list = field(default_factory=list)
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def values(self) -> np.ndarray:
        """Objective after each iteration, starting with the initial value."""
        # actual_decrease is new - old for accepted steps and 0 otherwise
        start = self.trace[0].value - self.trace[0].actual_decrease if self.trace else self.value
        return np.array([start] + [row.value for row in self.trace])

    def trace_csv(self, path=None) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "value", "model_decrease", "actual_decrease", "radius", "accepted"])
        for r in self.trace:
            w.writerow([
                r.iteration, "%.17e" % r.value, "%.17e" % r.model_decrease, "%.17e" % r.actual_decrease,
                "%.17e" % r.radius, int(r.accepted),
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def thread_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


class _Model:
    """Per-iterate data shared by all subproblems."""

    def __init__(self, p: VariationalProblem, u: DiscreteField, bundle: list):
        grid = p.grid
        self.F = assemble_codifferential(p.integrand, grid, u, U_XI)
        self.grid, self.m = grid, p.m
        self.dim = self.F.dim
        free_nodes = np.flatnonzero(~grid.boundary_mask)
        self.free = (free_nodes[:, None] * self.m + np.arange(self.m)[None, :]).ravel()
        self.B = increment_operator(grid, self.m)[:, self.free].tocsr()
        self.hyper = [cd.hyper for cd in self.F.cells]
        self.hypo = _with_cuts(self.F, bundle)

    def vertex_choices(self, params: DescentParams, rng: np.random.Generator, hint: Optional[np.ndarray]):
        """Up to ``cap`` per-cell hyper vertex index arrays."""
        sizes = np.array([len(P) for P in self.hyper])
        out = []
        seen = set()

        def push(idx):
            key = idx.tobytes()
            if key not in seen:
                seen.add(key)
                out.append(idx)

        if hint is not None:
            # best vertex along the previous step: the model is then tight for that step
            inc = (self.B @ hint).reshape(self.grid.n_cells, self.dim)
            push(np.array([int(np.argmin(P.a + P.v @ inc[c])) for c, P in enumerate(self.hyper)]))
        push(np.array([int(np.argmin(P.a)) for P in self.hyper]))
        if sizes.max() == 1:
            return out
        blocks = _cell_blocks(self.grid)
        tries = 0
        while len(out) < params.cap and tries < 8 * params.cap:
            tries += 1
            nb = blocks[tries % len(blocks)]
            pick = rng.integers(0, 1 << 30, size=nb.max() + 1)
            push(pick[nb] % sizes)
        return out[: params.cap]

    def subproblem(self, idx: np.ndarray, r: float):
        """Minimize the model for one vertex choice over ``|h| <= r``; returns (decrease, h) or (None, message)."""
        nc, nf, dim = self.grid.n_cells, len(self.free), self.dim
        w = self.F.weights
        Hv = np.array([self.hyper[c].v[idx[c]] for c in range(nc)])
        Ha = np.array([self.hyper[c].a[idx[c]] for c in range(nc)])
        lin = self.B.T @ (w[:, None] * Hv).ravel()
        const = float(w @ Ha)
        # epigraph rows  v_k . (B_c h) - tau_c <= -a_k
        blocks, rhs, cells = [], [], []
        for c, (a, V) in enumerate(self.hypo):
            blocks.append(V)
            rhs.append(-a)
            cells.append(np.full(len(a), c))
        V = np.vstack(blocks)
        cells = np.concatenate(cells)
        # expand V rows into the global cell-block layout, then map through B
        rows = np.repeat(np.arange(len(V)), dim)
        cols = (cells[:, None] * dim + np.arange(dim)[None, :]).ravel()
        E = sp.csr_matrix((V.ravel(), (rows, cols)), shape=(len(V), nc * dim))
        A = sp.hstack([E @ self.B, sp.csr_matrix((-np.ones(len(V)), (np.arange(len(V)), cells)), shape=(len(V), nc))])
        c_obj = np.concatenate([lin, w])
        bounds = [(-r, r)] * nf + [(None, None)] * nc
        res = linprog(c_obj, A_ub=A.tocsc(), b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
        if res.status != 0:
            return None, f"step LP: {res.message}"
        return float(res.fun + const), res.x[:nf]


def _with_cuts(F: DiscreteFunctional, bundle: list) -> list:
    """
    Cell hypodifferentials enlarged by cutting planes from earlier points.

    A point ``z_j`` with value ``f_j`` and subgradient ``g`` gives the vertex
    ``(f_j - f + <g, z - z_j>, g)`` at the current cell point ``z``.  Cuts are
    added only where the current hyperdifferential is the single point 0 and
    the offset is nonpositive, which keeps every cell model normalized.
    """
    z = F.block_increments(F.u)
    out = []
    for c, cd in enumerate(F.cells):
        a, V = cd.hypo.a, cd.hypo.v
        if len(cd.hyper) == 1 and not np.any(cd.hyper.v) and cd.hyper.a[0] == 0.0:
            extra_a, extra_v = [], []
            for Fj, zj in bundle:
                cdj = Fj.cells[c]
                if len(cdj.hyper) != 1:
                    continue
                G = zero_face(cdj.hypo) + cdj.hyper.v[0]
                off = Fj.values[c] - F.values[c] + G @ (z[c] - zj[c])
                keep = off <= 0.0
                extra_a.append(off[keep])
                extra_v.append(G[keep])
            if extra_a:
                a = np.concatenate([a, *extra_a])
                V = np.vstack([V, *extra_v])
        out.append((a, V))
    return out


def _cell_blocks(grid) -> list:
    """Partitions of the cells into contiguous tiles of several sizes (cell -> block id)."""
    out = []
    if grid.d == 1:
        n = grid.cells[0]
        for nb in (2, 4, 8, n):
            out.append(np.minimum(np.arange(n) * nb // n, nb - 1))
        return out
    n1, n2 = grid.cells
    i, j = np.divmod(np.arange(grid.n_cells), n2)
    for nb in (2, 4, 8):
        bi = np.minimum(i * nb // n1, nb - 1)
        bj = np.minimum(j * nb // n2, nb - 1)
        out.append(bi * nb + bj)
        out.append(bj)  # stripes across the second axis
        out.append(bi)
    return out


def solve(p: VariationalProblem, u0: DiscreteField, params: Optional[DescentParams] = None) -> DescentResult:
    """
    Minimize the discrete functional of an unconstrained problem from ``u0``.

    Returns the final field, its value, the termination reason (``stationary``,
    ``target``, ``max_iter``, ``radius`` or ``lp_failure``) and the trace.
    """
    params = params or DescentParams()
    if p.family != "dirichlet":
        raise ValueError("descent handles problems with fixed boundary values and no further constraints")
    p.check_boundary_values(u0)
    rng = np.random.default_rng(params.seed)
    u = u0
    value = p.value(u)
    r = params.radius
    trace: list = []
    hint = None
    bundle: list = []
    workers = thread_count(params.threads)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for it in range(1, params.max_iter + 1):
            if params.target is not None and value <= params.target:
                return DescentResult(u, value, "target", trace)
            model = _Model(p, u, bundle)
            choices = model.vertex_choices(params, rng, hint)
            if pool is not None:
                results = list(pool.map(lambda idx: model.subproblem(idx, r), choices))
            else:
                results = [model.subproblem(idx, r) for idx in choices]
            good = [(dec, h) for dec, h in results if dec is not None]
            if not good:
                return DescentResult(u, value, "lp_failure", trace, results[0][1])
            dec, h = min(good, key=lambda t: t[0])
            if dec > -params.eps_stat * r:
                trace.append(TraceRow(it, value, dec, 0.0, r, False, len(choices)))
                return DescentResult(u, value, "stationary", trace)
            vals = u.values.copy().ravel()
            vals[model.free] += h
            trial = u.with_values(vals.reshape(u.values.shape))
            new_value = p.value(trial)
            Ft = assemble_codifferential(p.integrand, p.grid, trial, U_XI)
            bundle = (bundle + [(Ft, Ft.block_increments(trial))])[-params.bundle:]
            actual = new_value - value
            ratio = actual / dec
            accepted = actual < 0 and ratio >= params.accept
            if accepted:
                u, value, hint = trial, new_value, h
                if ratio >= params.good:
                    r = min(r * params.grow, params.max_radius)
            else:
                r *= params.shrink
                hint = h
            trace.append(TraceRow(it, value, dec, actual if accepted else 0.0, r, accepted, len(choices)))
            if r < params.min_radius:
                return DescentResult(u, value, "radius", trace)
        if params.target is not None and value <= params.target:
            return DescentResult(u, value, "target", trace)
        return DescentResult(u, value, "max_iter", trace)
    finally:
        if pool is not None:
            pool.shutdown()
