"""
Structured grids on intervals and rectangles.

Fields live on nodes.  Every cell carries one quadrature point (its centre)
with weight equal to the cell volume; the integrand is evaluated there at the
cell average of ``u`` and at the cell gradient.  In 1D the gradient is the
forward difference, in 2D it is the average of the two edge differences in
each direction, which is exact for affine and bilinear fields.

The divergence of a cell flux is defined as the negative adjoint of the
gradient, so that

    sum_c w_c <zeta_c, (grad h)_c>  =  - sum_n w_n <(div zeta)_n, h_n>

holds exactly for every nodal ``h`` vanishing on the boundary.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import lp
from .codiff_core import TOL_FACE, Codifferential, precompose_affine, zero_face
from .expr import IntegrandExpr, VariableSelector, codiff_at, eval_expr

__all__ = [
    "CellSelection",
    "DiscreteField",
    "DiscreteFunctional",
    "Grid",
    "assemble_codifferential",
    "assemble_value",
    "cell_average",
    "divergence",
    "functional_directional_derivative",
    "gradient",
    "increment_operator",
]


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid with ``cells[k]`` cells along axis ``k``."""

    bounds: tuple
    cells: tuple

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        cells = tuple(int(n) for n in self.cells)
        if len(bounds) not in (1, 2) or len(cells) != len(bounds):
            raise ValueError("grids are 1D or 2D with one cell count per axis")
        if any(n < 1 for n in cells):
            raise ValueError(f"cell counts must be positive, got {cells}")
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError(f"empty axis in bounds {bounds}")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "cells", cells)
        avg, grads = _stencils(cells, self.h)
        object.__setattr__(self, "_avg", avg)
        object.__setattr__(self, "_grads", grads)

    @classmethod
    def interval(cls, a: float, b: float, n: int) -> "Grid":
        return cls(((a, b),), (n,))

    @classmethod
    def rectangle(cls, x_bounds, y_bounds, n1: int, n2: Optional[int] = None) -> "Grid":
        return cls((tuple(x_bounds), tuple(y_bounds)), (n1, n1 if n2 is None else n2))

    @property
    def d(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> np.ndarray:
        return np.array([(hi - lo) / n for (lo, hi), n in zip(self.bounds, self.cells)])

    @property
    def shape_nodes(self) -> tuple:
        return tuple(n + 1 for n in self.cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape_nodes))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_weight(self) -> float:
        return float(np.prod(self.h))

    @property
    def node_weight(self) -> float:
        return float(np.prod(self.h))

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_cells, self.cell_weight)

    def axis_nodes(self, k: int) -> np.ndarray:
        lo, hi = self.bounds[k]
        return np.linspace(lo, hi, self.cells[k] + 1)

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, d)``; node ``(i, j)`` has index ``i * (N2 + 1) + j``."""
        axes = [self.axis_nodes(k) for k in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def centers(self) -> np.ndarray:
        axes = [0.5 * (a[1:] + a[:-1]) for a in (self.axis_nodes(k) for k in range(self.d))]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def boundary_mask(self) -> np.ndarray:
        idx = np.meshgrid(*[np.arange(n) for n in self.shape_nodes], indexing="ij")
        mask = np.zeros(self.shape_nodes, dtype=bool)
        for k, n in enumerate(self.shape_nodes):
            mask |= (idx[k] == 0) | (idx[k] == n - 1)
        return mask.ravel()

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def avg_matrix(self) -> sp.csr_matrix:
        """Sparse ``(n_cells, n_nodes)`` map from nodal values to cell averages."""
        return self._avg

    @property
    def grad_matrices(self) -> list:
        """One sparse ``(n_cells, n_nodes)`` difference operator per axis."""
        return self._grads

    def cell_nodes(self, c: int) -> np.ndarray:
        """Indices of the nodes touched by cell ``c`` (2 in 1D, 4 in 2D)."""
        return self._avg.indices[self._avg.indptr[c] : self._avg.indptr[c + 1]]

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.bounds, tuple(factor * n for n in self.cells))

    def __repr__(self) -> str:
        return f"Grid(bounds={self.bounds}, cells={self.cells})"


def _stencils(cells: tuple, h: np.ndarray):
    if len(cells) == 1:
        (n,) = cells
        rows = np.repeat(np.arange(n), 2)
        cols = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1).ravel()
        avg = sp.csr_matrix((np.tile([0.5, 0.5], n), (rows, cols)), shape=(n, n + 1))
        grad = sp.csr_matrix((np.tile([-1.0, 1.0], n) / h[0], (rows, cols)), shape=(n, n + 1))
        return avg, [grad]
    n1, n2 = cells
    ci, cj = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    node = lambda i, j: i * (n2 + 1) + j  # noqa: E731
    corners = np.stack([node(ci, cj), node(ci, cj + 1), node(ci + 1, cj), node(ci + 1, cj + 1)], axis=1)
    rows = np.repeat(np.arange(n1 * n2), 4)
    cols = corners.ravel()
    shape = (n1 * n2, (n1 + 1) * (n2 + 1))
    avg = sp.csr_matrix((np.full(rows.shape, 0.25), (rows, cols)), shape=shape)
    g1 = sp.csr_matrix((np.tile([-0.5, -0.5, 0.5, 0.5], n1 * n2) / h[0], (rows, cols)), shape=shape)
    g2 = sp.csr_matrix((np.tile([-0.5, 0.5, -0.5, 0.5], n1 * n2) / h[1], (rows, cols)), shape=shape)
    for mat in (avg, g1, g2):
        mat.sort_indices()
    return avg, [g1, g2]


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Nodal values of an ``m``-component field; ``values`` has shape ``(n_nodes, m)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_nodes:
            raise ValueError(f"field has {vals.shape[0]} nodes, grid has {self.grid.n_nodes}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.grid.boundary_mask

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable, m: Optional[int] = None) -> "DiscreteField":
        """Sample ``fn(nodes)``; ``fn`` receives node coordinates of shape ``(n_nodes, d)``."""
        vals = np.asarray(fn(grid.nodes), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if m is not None and vals.shape[1] != m:
            raise ValueError(f"function returned {vals.shape[1]} components, expected {m}")
        return cls(grid, vals)

    @classmethod
    def zeros(cls, grid: Grid, m: int = 1) -> "DiscreteField":
        return cls(grid, np.zeros((grid.n_nodes, m)))

    def with_values(self, values) -> "DiscreteField":
        return DiscreteField(self.grid, values)

    def __add__(self, other: "DiscreteField") -> "DiscreteField":
        return DiscreteField(self.grid, self.values + other.values)

    # CSV: one row per node, coordinates first, full precision, LF endings.
    def to_csv(self, path=None) -> str:
        header = [f"x{k + 1}" for k in range(self.grid.d)] + [f"u{k + 1}" for k in range(self.m)]
        data = np.hstack([self.grid.nodes, self.values])
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in data:
            buf.write(",".join("%.17e" % v for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="\n", encoding="ascii") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, grid: Optional[Grid] = None) -> "DiscreteField":
        """Read a field written by :meth:`to_csv`; the grid is rebuilt from coordinates if not given."""
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source, encoding="ascii") as fh:
                text = fh.read()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split(",")
        d = sum(1 for h in header if h.startswith("x"))
        data = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]])
        coords, vals = data[:, :d], data[:, d:]
        if grid is None:
            axes = [np.unique(coords[:, k]) for k in range(d)]
            grid = Grid(tuple((a[0], a[-1]) for a in axes), tuple(len(a) - 1 for a in axes))
        if not np.allclose(coords, grid.nodes, rtol=0, atol=1e-12 * max(1.0, np.abs(grid.nodes).max())):
            raise ValueError("CSV node coordinates do not match the grid")
        return cls(grid, vals)


def _values(field_or_array) -> np.ndarray:
    vals = field_or_array.values if isinstance(field_or_array, DiscreteField) else np.asarray(field_or_array, float)
    return vals[:, None] if vals.ndim == 1 else vals


def gradient(grid: Grid, field) -> np.ndarray:
    """Cell gradients, shape ``(n_cells, m, d)``."""
    vals = _values(field)
    return np.stack([G @ vals for G in grid.grad_matrices], axis=-1)


def cell_average(grid: Grid, field) -> np.ndarray:
    """Cell averages, shape ``(n_cells, m)``."""
    return grid.avg_matrix @ _values(field)


def divergence(grid: Grid, flux, interior_only: bool = True) -> np.ndarray:
    """
    Discrete divergence of a cell flux of shape ``(n_cells, m, d)`` (or ``(n_cells, d)`` when ``m = 1``).

    Returns values on interior nodes, shape ``(n_interior, m)``, unless
    ``interior_only`` is false.
    """
    flux = np.asarray(flux, dtype=float)
    if flux.ndim == 1:
        flux = flux[:, None, None]
    elif flux.ndim == 2:
        flux = flux[:, None, :]
    if flux.shape[0] != grid.n_cells or flux.shape[2] != grid.d:
        raise ValueError(f"flux shape {flux.shape} does not fit grid with {grid.n_cells} cells, d={grid.d}")
    acc = sum(G.T @ flux[:, :, k] for k, G in enumerate(grid.grad_matrices))
    div = -grid.cell_weight * acc / grid.node_weight
    return div[grid.interior] if interior_only else div


def _cell_points(grid: Grid, u: DiscreteField):
    return grid.centers, cell_average(grid, u), gradient(grid, u)


def increment_operator(grid: Grid, m: int) -> sp.csr_matrix:
    """
    Sparse map from stacked nodal values ``(n_nodes * m)`` to stacked cell blocks.

    Cell ``c`` occupies rows ``c * dim`` to ``(c + 1) * dim`` with ``dim = m + m d``:
    first the cell average, then the gradient flattened component-major.
    """
    d, nc = grid.d, grid.n_cells
    dim = m + m * d
    eye = sp.identity(m, format="csr")
    parts = [sp.kron(grid.avg_matrix, eye, format="csr")]
    rows_u = (np.arange(nc)[:, None] * dim + np.arange(m)[None, :]).ravel()
    pieces = [(rows_u, parts[0])]
    for k, G in enumerate(grid.grad_matrices):
        rows_k = (np.arange(nc)[:, None] * dim + m + np.arange(m)[None, :] * d + k).ravel()
        pieces.append((rows_k, sp.kron(G, eye, format="csr")))
    coo_rows, coo_cols, coo_vals = [], [], []
    for rows, A in pieces:
        A = A.tocoo()
        coo_rows.append(rows[A.row])
        coo_cols.append(A.col)
        coo_vals.append(A.data)
    return sp.csr_matrix(
        (np.concatenate(coo_vals), (np.concatenate(coo_rows), np.concatenate(coo_cols))),
        shape=(nc * dim, grid.n_nodes * m),
    )


def assemble_value(e: IntegrandExpr, grid: Grid, u: DiscreteField) -> float:
    """Midpoint quadrature of the integral functional."""
    x, ubar, xi = _cell_points(grid, u)
    return float(grid.weights @ eval_expr(e, x, ubar, xi))


# -- codifferentials of the discrete functional --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteFunctional:
    """
    Per-cell codifferentials of the discrete integral functional at ``u``.

    Vertices are stored in the block form of ``sel``: for the default
    selection ``(u, xi)`` a vertex is ``(a, v1, v2)`` with ``v1`` in ``R^m`` and
    ``v2`` the flattened ``m x d`` gradient part.
    """

    grid: Grid
    expr: IntegrandExpr
    sel: VariableSelector
    u: DiscreteField
    values: np.ndarray
    cells: tuple

    @property
    def m(self) -> int:
        return self.u.m

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def value(self) -> float:
        return float(self.weights @ self.values)

    @property
    def dim(self) -> int:
        return self.sel.dim(self.grid.d, self.m)

    def local_map(self, c: int) -> np.ndarray:
        """Matrix sending the local nodal increments of cell ``c`` (node-major) to its block variables."""
        grid, m = self.grid, self.m
        nodes = grid.cell_nodes(c)
        M = np.zeros((self.dim, len(nodes) * m))
        layout = self.sel.layout(grid.d, m)
        avg = grid.avg_matrix[c, nodes].toarray().ravel()
        grads = [G[c, nodes].toarray().ravel() for G in grid.grad_matrices]
        eye = np.eye(m)
        if "u" in layout:
            M[layout["u"]] = np.kron(avg[None, :], eye)
        if "xi" in layout:
            base = layout["xi"].start
            for i in range(m):
                for k in range(grid.d):
                    M[base + i * grid.d + k] = np.kron(grads[k], eye[i])
        return M

    def local_codifferential(self, c: int) -> Codifferential:
        """Codifferential of cell ``c``'s contribution (unweighted) in its local nodal increments."""
        if "x" in self.sel.blocks:
            raise ValueError("local nodal form needs a selection without the x block")
        return precompose_affine(self.cells[c], self.local_map(c))

    def block_increments(self, h) -> np.ndarray:
        """Per-cell block variables ``(hbar_c, (grad h)_c)`` of a nodal increment, shape ``(n_cells, dim)``."""
        if "x" in self.sel.blocks:
            raise ValueError("nodal increments do not move the x block")
        vals = _values(h)
        parts = []
        layout = self.sel.layout(self.grid.d, self.m)
        if "u" in layout:
            parts.append(cell_average(self.grid, vals))
        if "xi" in layout:
            parts.append(gradient(self.grid, vals).reshape(self.grid.n_cells, -1))
        return np.hstack(parts)


def assemble_codifferential(
    e: IntegrandExpr, grid: Grid, u: DiscreteField, sel: VariableSelector = VariableSelector(("u", "xi"))
) -> DiscreteFunctional:
    x, ubar, xi = _cell_points(grid, u)
    if e.m != u.m or e.d != grid.d:
        raise ValueError(f"integrand has (d, m) = ({e.d}, {e.m}); field has ({grid.d}, {u.m})")
    uses_x = e.depends_on("x") or "x" in sel.blocks
    cache: dict = {}
    cells = []
    for c in range(grid.n_cells):
        key = (x[c].tobytes() if uses_x else b"", ubar[c].tobytes(), xi[c].tobytes())
        cd = cache.get(key)
        if cd is None:
            cd = codiff_at(e, sel, x[c], ubar[c], xi[c])
            cache[key] = cd
        cells.append(cd)
    values = eval_expr(e, x, ubar, xi)
    return DiscreteFunctional(grid, e, sel, u, np.asarray(values, dtype=float), tuple(cells))


def functional_directional_derivative(F: DiscreteFunctional, h) -> float:
    """Directional derivative of the discrete functional at ``F.u`` along the nodal field ``h``."""
    inc = F.block_increments(h)
    total = 0.0
    for c, cd in enumerate(F.cells):
        sub = zero_face(cd.hypo)
        sup = zero_face(cd.hyper)
        total += F.weights[c] * (np.max(sub @ inc[c]) + np.min(sup @ inc[c]))
    return float(total)


# -- selections ----------------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellSelection:
    """
    One convex combination of polytope vertices per cell.

    ``kind`` is ``"hypo"`` or ``"hyper"``; ``coeffs[c]`` has one entry per vertex
    of that cell's polytope in the functional ``F`` it was built for.
    """

    kind: str
    coeffs: tuple

    def __post_init__(self):
        if self.kind not in ("hypo", "hyper"):
            raise ValueError(f"kind must be 'hypo' or 'hyper', got {self.kind!r}")
        coeffs = tuple(np.asarray(cf, dtype=float) for cf in self.coeffs)
        for c, cf in enumerate(coeffs):
            if np.any(cf < -1e-12) or abs(cf.sum() - 1.0) > 1e-9:
                raise ValueError(f"cell {c}: coefficients must be nonnegative and sum to 1")
        object.__setattr__(self, "coeffs", coeffs)

    def polytopes(self, F: DiscreteFunctional):
        return [getattr(cd, self.kind) for cd in F.cells]

    def points(self, F: DiscreteFunctional) -> tuple[np.ndarray, np.ndarray]:
        """Selected ``(a_c, v_c)`` per cell, shapes ``(n_cells,)`` and ``(n_cells, dim)``."""
        polys = self.polytopes(F)
        if len(polys) != len(self.coeffs):
            raise ValueError(f"selection has {len(self.coeffs)} cells, functional has {len(polys)}")
        a = np.empty(len(polys))
        v = np.empty((len(polys), F.dim))
        for c, (P, cf) in enumerate(zip(polys, self.coeffs)):
            if len(cf) != len(P):
                raise ValueError(f"cell {c}: {len(cf)} coefficients for {len(P)} vertices")
            a[c] = cf @ P.a
            v[c] = cf @ P.v
        return a, v

    @classmethod
    def vertex(cls, F: DiscreteFunctional, kind: str, index: Sequence[int]) -> "CellSelection":
        """Pick vertex ``index[c]`` of each cell's polytope."""
        polys = [getattr(cd, kind) for cd in F.cells]
        coeffs = []
        for P, i in zip(polys, index):
            cf = np.zeros(len(P))
            cf[int(i)] = 1.0
            coeffs.append(cf)
        return cls(kind, tuple(coeffs))

    @classmethod
    def from_targets(cls, F: DiscreteFunctional, kind: str, targets, a_targets=None, tol: float = 1e-9) -> "CellSelection":
        """
        Express the target gradient parts ``targets[c]`` as convex combinations of each cell's vertices.

        The offset is matched to ``a_targets`` (default zero), so by default the
        selection lies in the zero face.  Raises ``ValueError`` when a target is
        not in the polytope.
        """
        targets = np.asarray(targets, dtype=float)
        if targets.ndim == 1:
            targets = np.broadcast_to(targets, (F.grid.n_cells, targets.shape[0]))
        a_targets = np.zeros(F.grid.n_cells) if a_targets is None else np.broadcast_to(np.asarray(a_targets, float), (F.grid.n_cells,))
        coeffs = []
        cache: dict = {}
        for c, cd in enumerate(F.cells):
            P = getattr(cd, kind)
            key = (id(cd), targets[c].tobytes(), float(a_targets[c]))
            if key not in cache:
                cache[key] = _convex_weights(P.points, np.concatenate([[a_targets[c]], targets[c]]), tol, c)
            coeffs.append(cache[key])
        return cls(kind, tuple(coeffs))

    @classmethod
    def zero_face_default(cls, F: DiscreteFunctional, kind: str = "hyper") -> "CellSelection":
        """First vertex of each cell's zero face."""
        idx = []
        for cd in F.cells:
            P = getattr(cd, kind)
            idx.append(int(np.flatnonzero(np.abs(P.a) <= TOL_FACE)[0]))
        return cls.vertex(F, kind, idx)


def _convex_weights(points: np.ndarray, target: np.ndarray, tol: float, cell: int) -> np.ndarray:
    k = len(points)
    if k == 1:
        if np.max(np.abs(points[0] - target)) > tol * max(1.0, np.abs(target).max()):
            raise ValueError(f"cell {cell}: target {target} is not in the polytope")
        return np.ones(1)
    b = lp.LpBuilder()
    w = b.add_variables("w", k)
    for r in range(points.shape[1]):
        b.add_row({j: points[i, r] for i, j in enumerate(range(w.start, w.stop))}, "==", target[r])
    b.add_row({j: 1.0 for j in range(w.start, w.stop)}, "==", 1.0)
    out = lp.solve(b.build())
    if not out.feasible:
        raise ValueError(f"cell {cell}: target {target} is not in the polytope")
    cf = np.clip(out.x[w], 0, None)
    return cf / cf.sum()
