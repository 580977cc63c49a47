"""
Dense linear programming with validated certificates.

Problems have the general form

    minimize    c @ x
    subject to  A_eq @ x == b_eq
                A_le @ x <= b_le
                x[j] >= 0   for every j not flagged as free

and are solved by a two-phase tableau simplex.  Every outcome carries
evidence that is re-checked by direct substitution before it is returned:

* ``FEASIBLE``   -- a point ``x`` satisfying all rows (optimal when ``c`` is set);
* ``INFEASIBLE`` -- a Farkas vector ``y = (y_eq, y_le)`` with ``y_le >= 0``,
  ``(A^T y)_j >= 0`` for sign-constrained ``j``, ``(A^T y)_j == 0`` for free
  ``j`` and ``b^T y < 0``;
* ``UNBOUNDED``  -- a feasible point plus a recession ray ``d`` with ``c @ d < 0``.

When the evidence does not survive re-substitution the status is
``NUMERICAL_FAILURE``; a certificate that fails validation is never returned.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TOL_LP = 1e-9

__all__ = [
    "TOL_LP",
    "LinearProgram",
    "LpBuilder",
    "LpOutcome",
    "LpStatus",
    "check_farkas",
    "check_feasible",
    "check_ray",
    "dump_lp",
    "load_lp",
    "solve",
]


class LpStatus(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"
    ITERATION_LIMIT = "iteration_limit"


def _as_matrix(a, n, name):
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1) if a.size else np.zeros((0, n))
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"{name} must have {n} columns, got shape {a.shape}")
    return a


def _as_vector(b, k, name):
    if b is None:
        b = np.zeros(k)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != k:
        raise ValueError(f"{name} must have length {k}, got {b.shape[0]}")
    return b


@dataclass(frozen=True)
class LinearProgram:
    """
    A linear program in general form.

    Attributes
    ----------
    n : int
        Number of variables.
    c : numpy.ndarray or None
        Objective coefficients; ``None`` for a pure feasibility problem.
    A_eq, b_eq : numpy.ndarray
        Equality rows ``A_eq @ x == b_eq``.
    A_le, b_le : numpy.ndarray
        Inequality rows ``A_le @ x <= b_le``.
    free : numpy.ndarray of bool
        ``True`` where the variable has no sign constraint.
    var_names, eq_names, le_names : tuple of str
        Optional labels used by dumps and reports.
    """

    n: int
    c: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_le: Optional[np.ndarray] = None
    b_le: Optional[np.ndarray] = None
    free: Optional[np.ndarray] = None
    var_names: tuple = ()
    eq_names: tuple = ()
    le_names: tuple = ()

    def __post_init__(self):
        n = int(self.n)
        if n < 0:
            raise ValueError("number of variables must be nonnegative")
        A_eq = _as_matrix(self.A_eq, n, "A_eq")
        A_le = _as_matrix(self.A_le, n, "A_le")
        b_eq = _as_vector(self.b_eq, A_eq.shape[0], "b_eq")
        b_le = _as_vector(self.b_le, A_le.shape[0], "b_le")
        c = None if self.c is None else _as_vector(self.c, n, "c")
        free = np.zeros(n, dtype=bool) if self.free is None else np.asarray(self.free, dtype=bool).reshape(-1)
        if free.shape[0] != n:
            raise ValueError(f"free mask must have length {n}")
        for arr in (A_eq, A_le, b_eq, b_le) + ((c,) if c is not None else ()):
            if not np.all(np.isfinite(arr)):
                raise ValueError("linear program coefficients must be finite")
        for arr in (A_eq, A_le, b_eq, b_le, free) + ((c,) if c is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "A_le", A_le)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "b_le", b_le)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "free", free)
        var_names = tuple(self.var_names) or tuple(f"x{j}" for j in range(n))
        eq_names = tuple(self.eq_names) or tuple(f"eq{i}" for i in range(A_eq.shape[0]))
        le_names = tuple(self.le_names) or tuple(f"le{i}" for i in range(A_le.shape[0]))
        if len(var_names) != n or len(eq_names) != A_eq.shape[0] or len(le_names) != A_le.shape[0]:
            raise ValueError("name lists must match the problem dimensions")
        object.__setattr__(self, "var_names", var_names)
        object.__setattr__(self, "eq_names", eq_names)
        object.__setattr__(self, "le_names", le_names)

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_le(self) -> int:
        return self.A_le.shape[0]

    def without_rows(self, names: Sequence[str]) -> "LinearProgram":
        """Copy of the program with the named rows removed."""
        drop = set(names)
        unknown = drop - set(self.eq_names) - set(self.le_names)
        if unknown:
            raise KeyError(f"unknown rows: {sorted(unknown)}")
        keep_eq = [i for i, nm in enumerate(self.eq_names) if nm not in drop]
        keep_le = [i for i, nm in enumerate(self.le_names) if nm not in drop]
        return LinearProgram(
            self.n, self.c, self.A_eq[keep_eq], self.b_eq[keep_eq], self.A_le[keep_le], self.b_le[keep_le],
            self.free, self.var_names, tuple(self.eq_names[i] for i in keep_eq),
            tuple(self.le_names[i] for i in keep_le),
        )

    def with_objective(self, c) -> "LinearProgram":
        return LinearProgram(
            self.n, c, self.A_eq, self.b_eq, self.A_le, self.b_le, self.free,
            self.var_names, self.eq_names, self.le_names,
        )


class LpBuilder:
    """
    Incremental construction of a :class:`LinearProgram` from named blocks.

    Variables are added in named blocks; rows are given as a mapping from
    block name (or absolute index arrays) to coefficients.

    >>> b = LpBuilder()
    >>> x = b.add_variables("x", 2)
    >>> b.add_row({"x": [1.0, 1.0]}, "==", 1.0, name="sum")
    >>> b.build().n
    2
    """

    def __init__(self):
        self.blocks: dict[str, slice] = {}
        self._n = 0
        self._free: list[bool] = []
        self._names: list[str] = []
        self._rows = {"==": [], "<=": []}
        self._c: dict[int, float] = {}

    @property
    def n(self) -> int:
        return self._n

    def add_variables(self, name: str, count: int, free: bool = False, labels: Optional[Sequence[str]] = None) -> slice:
        if name in self.blocks:
            raise ValueError(f"duplicate variable block {name!r}")
        sl = slice(self._n, self._n + count)
        self.blocks[name] = sl
        self._n += count
        self._free.extend([free] * count)
        if labels is None:
            labels = [f"{name}[{k}]" for k in range(count)] if count != 1 else [name]
        self._names.extend(labels)
        return sl

    def _resolve(self, terms) -> tuple[np.ndarray, np.ndarray]:
        idx, val = [], []
        for key, coeffs in terms.items():
            if isinstance(key, str):
                sl = self.blocks[key]
                ids = np.arange(sl.start, sl.stop)
            elif isinstance(key, slice):
                ids = np.arange(key.start, key.stop)
            else:
                ids = np.atleast_1d(np.asarray(key, dtype=int))
            coeffs = np.broadcast_to(np.asarray(coeffs, dtype=float), ids.shape)
            idx.append(ids)
            val.append(coeffs)
        if not idx:
            return np.zeros(0, dtype=int), np.zeros(0)
        return np.concatenate(idx), np.concatenate(val)

    def add_row(self, terms, sense: str, rhs: float, name: Optional[str] = None) -> None:
        if sense == ">=":
            idx, val = self._resolve(terms)
            self._rows["<="].append((idx, -val, -float(rhs), name))
            return
        if sense not in self._rows:
            raise ValueError(f"unknown row sense {sense!r}")
        idx, val = self._resolve(terms)
        self._rows[sense].append((idx, val, float(rhs), name))

    def add_dense_rows(self, matrix, sense: str, rhs, names: Optional[Sequence[str]] = None) -> None:
        """Append rows given as a dense ``(k, n)`` matrix over all current variables."""
        matrix = np.asarray(matrix, dtype=float)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (matrix.shape[0],))
        for i in range(matrix.shape[0]):
            nz = np.flatnonzero(matrix[i])
            self.add_row({tuple(nz.tolist()): matrix[i, nz]}, sense, rhs[i], None if names is None else names[i])

    def set_objective(self, terms) -> None:
        idx, val = self._resolve(terms)
        for i, v in zip(idx, val):
            self._c[int(i)] = self._c.get(int(i), 0.0) + float(v)

    def build(self) -> LinearProgram:
        n = self._n
        out = {}
        for sense, rows in self._rows.items():
            A = np.zeros((len(rows), n))
            b = np.zeros(len(rows))
            names = []
            for r, (idx, val, rhs, name) in enumerate(rows):
                np.add.at(A[r], idx, val)
                b[r] = rhs
                names.append(name or f"{'eq' if sense == '==' else 'le'}{r}")
            out[sense] = (A, b, tuple(names))
        c = None
        if self._c:
            c = np.zeros(n)
            for i, v in self._c.items():
                c[i] = v
        return LinearProgram(
            n, c, out["=="][0], out["=="][1], out["<="][0], out["<="][1], np.array(self._free, dtype=bool),
            tuple(self._names), out["=="][2], out["<="][2],
        )


@dataclass(frozen=True)
class LpOutcome:
    status: LpStatus
    x: Optional[np.ndarray] = None
    farkas: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    objective: Optional[float] = None
    iterations: int = 0
    message: str = ""
    stats: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status in (LpStatus.FEASIBLE, LpStatus.UNBOUNDED)

    def farkas_parts(self, p: LinearProgram) -> tuple[np.ndarray, np.ndarray]:
        """Split the Farkas vector into its equality and inequality parts."""
        if self.farkas is None:
            raise ValueError("outcome carries no Farkas vector")
        return self.farkas[: p.n_eq], self.farkas[p.n_eq:]


# -- validation by substitution ----------------------------------------------------------------------


def _scale(p: LinearProgram) -> float:
    parts = [p.A_eq, p.A_le, p.b_eq, p.b_le]
    return max([1.0] + [float(np.max(np.abs(a))) for a in parts if a.size])


def check_feasible(p: LinearProgram, x, tol: float = TOL_LP) -> bool:
    """True when ``x`` satisfies every row and sign constraint within ``tol``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,) or not np.all(np.isfinite(x)):
        return False
    if np.any(x[~p.free] < -tol):
        return False
    scale = max(1.0, float(np.max(np.abs(x), initial=0.0)))
    if p.n_eq and np.max(np.abs(p.A_eq @ x - p.b_eq)) > tol * scale:
        return False
    if p.n_le and np.max(p.A_le @ x - p.b_le) > tol * scale:
        return False
    return True


def check_farkas(p: LinearProgram, y, tol: float = TOL_LP) -> bool:
    """True when ``y`` proves that the rows of ``p`` admit no solution."""
    y = np.asarray(y, dtype=float)
    if y.shape != (p.n_eq + p.n_le,) or not np.all(np.isfinite(y)):
        return False
    top = float(np.max(np.abs(y), initial=0.0))
    if top == 0.0:
        return False
    y = y / top
    y_eq, y_le = y[: p.n_eq], y[p.n_eq:]
    if np.any(y_le < -tol):
        return False
    g = p.A_eq.T @ y_eq + p.A_le.T @ y_le
    if np.any(g[~p.free] < -tol) or np.any(np.abs(g[p.free]) > tol):
        return False
    return float(p.b_eq @ y_eq + p.b_le @ y_le) < -tol


def check_ray(p: LinearProgram, d, tol: float = TOL_LP) -> bool:
    """True when ``d`` is a recession direction along which the objective decreases."""
    d = np.asarray(d, dtype=float)
    if p.c is None or d.shape != (p.n,) or not np.all(np.isfinite(d)):
        return False
    top = float(np.max(np.abs(d), initial=0.0))
    if top == 0.0:
        return False
    d = d / top
    if np.any(d[~p.free] < -tol):
        return False
    if p.n_eq and np.max(np.abs(p.A_eq @ d)) > tol:
        return False
    if p.n_le and np.max(p.A_le @ d) > tol:
        return False
    return float(p.c @ d) < -tol


# -- simplex -----------------------------------------------------------------------------------------


class _Tableau:
    """Dense simplex tableau ``[B^-1 A | B^-1 b]`` with an explicit basis list."""

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: np.ndarray, tol: float):
        self.A = A
        self.b = b
        self.T = np.hstack([A, b[:, None]])
        self.basis = basis.copy()
        self.initial_basis = basis.copy()
        self.tol = tol
        self.pivots = 0
        self.refactor()

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.T = np.linalg.solve(B, np.hstack([self.A, self.b[:, None]]))
        except np.linalg.LinAlgError:
            return
        rhs = self.T[:, -1]
        rhs[np.abs(rhs) < 1e-13] = 0.0

    def pivot(self, r: int, q: int) -> None:
        T = self.T
        prow = T[r] / T[r, q]
        col = T[:, q].copy()
        col[r] = 0.0
        T -= np.outer(col, prow)
        T[r] = prow
        self.basis[r] = q
        self.pivots += 1
        if self.pivots % 100 == 0:
            self.refactor()

    def run(self, cost: np.ndarray, allowed: np.ndarray, max_iter: int) -> str:
        """Minimize ``cost @ x`` over the current basis; returns ``optimal``/``unbounded``/``limit``."""
        tol = self.tol
        degenerate = 0
        for _ in range(max_iter):
            cb = cost[self.basis]
            rc = cost - cb @ self.T[:, :-1]
            rc[~allowed] = 0.0
            rc[self.basis] = 0.0
            candidates = np.flatnonzero(rc < -tol)
            if candidates.size == 0:
                return "optimal"
            if degenerate > 50:
                q = int(candidates[0])
            else:
                q = int(candidates[np.argmin(rc[candidates])])
            col = self.T[:, q]
            rows = np.flatnonzero(col > tol)
            if rows.size == 0:
                self.unbounded_col = q
                return "unbounded"
            ratios = self.T[rows, -1] / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + tol * max(1.0, abs(best))]
            r = int(ties[np.argmin(self.basis[ties])])
            degenerate = degenerate + 1 if best <= tol else 0
            self.pivot(r, q)
        return "limit"

    def basic_solution(self, ncols: int) -> np.ndarray:
        x = np.zeros(ncols)
        B = self.A[:, self.basis]
        try:
            xb = np.linalg.solve(B, self.b)
        except np.linalg.LinAlgError:
            xb = self.T[:, -1]
        x[self.basis] = xb
        return x

    def duals(self, cost: np.ndarray) -> np.ndarray:
        B = self.A[:, self.basis]
        try:
            return np.linalg.solve(B.T, cost[self.basis])
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(B.T, cost[self.basis], rcond=None)[0]


def _standard_form(p: LinearProgram):
    """Map ``p`` to ``A x = b, x >= 0, b >= 0``; returns the pieces needed to map back."""
    cols = []
    col_of = []  # (original index, sign)
    A = np.vstack([p.A_eq, p.A_le]) if p.n else np.zeros((p.n_eq + p.n_le, 0))
    for j in range(p.n):
        cols.append(A[:, j])
        col_of.append((j, 1.0))
        if p.free[j]:
            cols.append(-A[:, j])
            col_of.append((j, -1.0))
    m = p.n_eq + p.n_le
    n_struct = len(cols)
    slack = np.zeros((m, p.n_le))
    slack[p.n_eq:, :] = np.eye(p.n_le)
    A_std = np.hstack([np.column_stack(cols) if cols else np.zeros((m, 0)), slack])
    b_std = np.concatenate([p.b_eq, p.b_le])
    flip = b_std < 0
    A_std[flip] *= -1.0
    b_std = np.abs(b_std)
    return A_std, b_std, flip, col_of, n_struct


def _to_original(p: LinearProgram, x_std: np.ndarray, col_of) -> np.ndarray:
    x = np.zeros(p.n)
    for k, (j, s) in enumerate(col_of):
        x[j] += s * x_std[k]
    return x


def solve(p: LinearProgram, tol: float = TOL_LP, max_iter: Optional[int] = None) -> LpOutcome:
    """
    Solve ``p`` and return a validated :class:`LpOutcome`.

    The pivoting rule is deterministic: most negative reduced cost, falling
    back to Bland's smallest-index rule after a run of degenerate pivots, with
    ties in the ratio test broken by the smallest basic index.
    """
    m = p.n_eq + p.n_le
    A_std, b_std, flip, col_of, n_struct = _standard_form(p)
    n_std = A_std.shape[1]
    if max_iter is None:
        max_iter = 50 * (m + n_std) + 1000

    # Slack columns of unflipped inequality rows form part of the starting basis;
    # every other row gets an artificial column.
    basis = np.empty(m, dtype=int)
    art_rows = []
    for i in range(m):
        if i >= p.n_eq and not flip[i]:
            basis[i] = n_struct + (i - p.n_eq)
        else:
            art_rows.append(i)
    n_art = len(art_rows)
    A_full = np.hstack([A_std, np.zeros((m, n_art))])
    for k, i in enumerate(art_rows):
        A_full[i, n_std + k] = 1.0
        basis[i] = n_std + k
    ncols = n_std + n_art
    stats = {"rows": m, "cols": p.n, "standard_cols": n_std, "artificials": n_art}

    if m == 0:
        x = np.zeros(p.n)
        return _phase_two_trivial(p, x, stats)

    tab = _Tableau(A_full, b_std, basis, tol)
    allowed = np.ones(ncols, dtype=bool)
    cost1 = np.zeros(ncols)
    cost1[n_std:] = 1.0
    if n_art:
        state = tab.run(cost1, allowed, max_iter)
        if state == "limit":
            return LpOutcome(LpStatus.ITERATION_LIMIT, iterations=tab.pivots, message="phase one", stats=stats)
        infeas = float(cost1[tab.basis] @ tab.basic_solution(ncols)[tab.basis])
        if infeas > tol * max(1.0, float(np.max(b_std))):
            return _infeasible(p, tab, cost1, flip, stats, tol)
        _drive_out_artificials(tab, n_std)
    allowed[n_std:] = False

    if p.c is None:
        x_std = tab.basic_solution(ncols)[:n_std]
        x = _polish_nonneg(p, _to_original(p, x_std, col_of))
        if check_feasible(p, x, tol):
            return LpOutcome(LpStatus.FEASIBLE, x=x, iterations=tab.pivots, stats=stats)
        return LpOutcome(LpStatus.NUMERICAL_FAILURE, iterations=tab.pivots, message="witness failed validation", stats=stats)

    cost2 = np.zeros(ncols)
    for k, (j, s) in enumerate(col_of):
        cost2[k] = s * p.c[j]
    state = tab.run(cost2, allowed, max_iter)
    x_std = tab.basic_solution(ncols)[:n_std]
    x = _polish_nonneg(p, _to_original(p, x_std, col_of))
    if state == "limit":
        return LpOutcome(LpStatus.ITERATION_LIMIT, x=x, iterations=tab.pivots, message="phase two", stats=stats)
    if not check_feasible(p, x, tol):
        return LpOutcome(LpStatus.NUMERICAL_FAILURE, iterations=tab.pivots, message="witness failed validation", stats=stats)
    if state == "unbounded":
        q = tab.unbounded_col
        d_std = np.zeros(ncols)
        d_std[q] = 1.0
        d_std[tab.basis] = -tab.T[:, q]
        d = _to_original(p, d_std[:n_std], col_of)
        d = np.where(np.abs(d) < 1e-14, 0.0, d)
        if check_ray(p, d, tol):
            return LpOutcome(LpStatus.UNBOUNDED, x=x, ray=d / np.max(np.abs(d)), iterations=tab.pivots, stats=stats)
        return LpOutcome(LpStatus.NUMERICAL_FAILURE, iterations=tab.pivots, message="ray failed validation", stats=stats)
    return LpOutcome(LpStatus.FEASIBLE, x=x, objective=float(p.c @ x), iterations=tab.pivots, stats=stats)


def _phase_two_trivial(p: LinearProgram, x: np.ndarray, stats: dict) -> LpOutcome:
    """No rows at all: the problem is ``min c @ x`` over sign constraints only."""
    if p.c is None:
        return LpOutcome(LpStatus.FEASIBLE, x=x, stats=stats)
    d = np.zeros(p.n)
    for j in range(p.n):
        if p.free[j] and p.c[j] != 0.0:
            d[j] = -np.sign(p.c[j])
            break
        if not p.free[j] and p.c[j] < 0.0:
            d[j] = 1.0
            break
    if np.any(d):
        return LpOutcome(LpStatus.UNBOUNDED, x=x, ray=d, stats=stats)
    return LpOutcome(LpStatus.FEASIBLE, x=x, objective=0.0, stats=stats)


def _polish_nonneg(p: LinearProgram, x: np.ndarray) -> np.ndarray:
    x = x.copy()
    tiny = (~p.free) & (x < 0) & (x > -1e-11)
    x[tiny] = 0.0
    return x


def _drive_out_artificials(tab: _Tableau, n_std: int) -> None:
    """Pivot zero-level artificial variables out of the basis where possible."""
    r = 0
    while r < tab.T.shape[0]:
        if tab.basis[r] >= n_std:
            row = tab.T[r, :n_std]
            cand = np.flatnonzero(np.abs(row) > tab.tol)
            if cand.size:
                tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
        r += 1


def _infeasible(p, tab, cost1, flip, stats, tol) -> LpOutcome:
    # Phase-one duals y solve B^T y = c_B; the Farkas vector is -y mapped back
    # through the row flips.  The tableau's own reduced costs on the starting
    # identity columns give a second estimate, used if the first fails.
    rc = cost1 - cost1[tab.basis] @ tab.T[:, :-1]
    candidates = [tab.duals(cost1), cost1[tab.initial_basis] - rc[tab.initial_basis]]
    for y in candidates:
        y = -np.where(flip, -y, y)
        y = np.where(np.abs(y) < 1e-14, 0.0, y)
        y_le = y[p.n_eq:]
        y_le[(y_le < 0) & (y_le > -1e-11)] = 0.0
        top = float(np.max(np.abs(y), initial=0.0))
        if top > 0 and check_farkas(p, y / top, tol):
            return LpOutcome(LpStatus.INFEASIBLE, farkas=y / top, iterations=tab.pivots, stats=stats)
    return LpOutcome(LpStatus.NUMERICAL_FAILURE, iterations=tab.pivots, message="Farkas vector failed validation", stats=stats)


# -- text dump ---------------------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17e")


def dump_lp(p: LinearProgram) -> str:
    """
    Serialize ``p`` in a self-describing line format.

    The header records the counts; each row lists ``name sense rhs`` followed
    by sparse ``index:coefficient`` pairs.  Numbers use 17 significant digits
    so that :func:`load_lp` reproduces the program bit for bit.
    """
    out = io.StringIO()
    out.write("# linear program: minimize c.x subject to rows; variables >= 0 unless marked free\n")
    out.write(f"variables {p.n}\n")
    out.write(f"equalities {p.n_eq}\n")
    out.write(f"inequalities {p.n_le}\n")
    for j in range(p.n):
        out.write(f"var {j} {p.var_names[j]} {'free' if p.free[j] else 'nonneg'}\n")
    if p.c is not None:
        nz = np.flatnonzero(p.c)
        out.write("objective " + " ".join(f"{j}:{_fmt(p.c[j])}" for j in nz) + "\n")
    for A, b, names, sense in ((p.A_eq, p.b_eq, p.eq_names, "=="), (p.A_le, p.b_le, p.le_names, "<=")):
        for i in range(A.shape[0]):
            nz = np.flatnonzero(A[i])
            terms = " ".join(f"{j}:{_fmt(A[i, j])}" for j in nz)
            out.write(f"row {names[i]} {sense} {_fmt(b[i])} {terms}".rstrip() + "\n")
    return out.getvalue()


def load_lp(text: str) -> LinearProgram:
    """Inverse of :func:`dump_lp`."""
    n = n_eq = n_le = None
    names, free = [], []
    c = None
    rows = {"==": [], "<=": []}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head, *rest = line.split()
        if head == "variables":
            n = int(rest[0])
        elif head == "equalities":
            n_eq = int(rest[0])
        elif head == "inequalities":
            n_le = int(rest[0])
        elif head == "var":
            names.append(rest[1])
            free.append(rest[2] == "free")
        elif head == "objective":
            c = np.zeros(n)
            for tok in rest:
                j, v = tok.split(":")
                c[int(j)] = float(v)
        elif head == "row":
            name, sense, rhs, *terms = rest
            row = np.zeros(n)
            for tok in terms:
                j, v = tok.split(":")
                row[int(j)] = float(v)
            rows[sense].append((name, row, float(rhs)))
        else:
            raise ValueError(f"line {lineno}: unknown record {head!r}")
    if n is None or len(rows["=="]) != n_eq or len(rows["<="]) != n_le:
        raise ValueError("dump header does not match its body")

    def stack(rs):
        if not rs:
            return np.zeros((0, n)), np.zeros(0), ()
        return np.array([r for _, r, _ in rs]), np.array([b for _, _, b in rs]), tuple(nm for nm, _, _ in rs)

    A_eq, b_eq, eq_names = stack(rows["=="])
    A_le, b_le, le_names = stack(rows["<="])
    return LinearProgram(n, c, A_eq, b_eq, A_le, b_le, np.array(free, dtype=bool), tuple(names), eq_names, le_names)
