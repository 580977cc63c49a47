"""
Polytopal codifferentials.

A codifferential of ``f`` at ``x`` is a pair ``[hypo, hyper]`` of convex
polytopes in ``R x R^n``.  Each is stored by its vertices ``(a, v)`` and
yields the DC model of the increment

    f(x + dx) - f(x)  ~  max_{(a, v) in hypo} (a + <v, dx>)  +  min_{(b, w) in hyper} (b + <w, dx>).

Normalization keeps ``max a = 0`` over the hypodifferential and ``min b = 0``
over the hyperdifferential, so both halves vanish at ``dx = 0``.  The faces
where the offsets vanish form the quasidifferential, which gives the
directional derivative.

All objects are immutable; operations return new values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import nnls

from . import lp

TOL_NORM = 1e-12
TOL_FACE = 1e-9
TOL_REDUCE = 1e-10

__all__ = [
    "TOL_FACE",
    "TOL_NORM",
    "AffinePiece",
    "Codifferential",
    "Polytope",
    "Quasidifferential",
    "compose_smooth",
    "directional_derivative",
    "hausdorff_distance",
    "linear_combine",
    "max_rule",
    "min_rule",
    "phi_eval",
    "precompose_affine",
    "psi_eval",
    "quasidiff_extract",
    "reduce",
    "zero_face",
]


class AffinePiece(NamedTuple):
    a: float
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class Polytope:
    """
    Convex hull of finitely many points ``(a_k, v_k)``.

    Attributes
    ----------
    a : numpy.ndarray, shape (k,)
        Free coefficients.
    v : numpy.ndarray, shape (k, n)
        Gradient parts.
    """

    a: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        v = np.array(self.v, dtype=float)
        if v.ndim == 1:
            v = v.reshape(len(a), -1) if len(a) else v.reshape(0, 0)
        if v.ndim != 2 or v.shape[0] != a.shape[0]:
            raise ValueError(f"vertex arrays disagree: a {a.shape}, v {v.shape}")
        if a.shape[0] == 0:
            raise ValueError("a polytope needs at least one vertex")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(v))):
            raise ValueError("polytope vertices must be finite")
        a.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_pieces(cls, pieces: Iterable[AffinePiece | tuple]) -> "Polytope":
        pieces = list(pieces)
        return cls([float(p[0]) for p in pieces], np.array([np.atleast_1d(np.asarray(p[1], float)) for p in pieces]))

    @classmethod
    def point(cls, a: float, v) -> "Polytope":
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return cls([a], v[None, :])

    @classmethod
    def zero(cls, dim: int) -> "Polytope":
        return cls([0.0], np.zeros((1, dim)))

    @property
    def dim(self) -> int:
        return self.v.shape[1]

    def __len__(self) -> int:
        return self.a.shape[0]

    @property
    def pieces(self) -> list[AffinePiece]:
        return [AffinePiece(float(a), v.copy()) for a, v in zip(self.a, self.v)]

    @property
    def points(self) -> np.ndarray:
        """Vertices as rows ``(a, v_1, ..., v_n)``."""
        return np.column_stack([self.a, self.v])

    def shift(self, da: float) -> "Polytope":
        return Polytope(self.a + da, self.v)

    def scale(self, lam: float) -> "Polytope":
        return Polytope(lam * self.a, lam * self.v)

    def __add__(self, other: "Polytope") -> "Polytope":
        return minkowski_sum(self, other)

    def __neg__(self) -> "Polytope":
        return self.scale(-1.0)

    def __repr__(self) -> str:
        return f"Polytope(dim={self.dim}, vertices={len(self)})"


@dataclass(frozen=True)
class Codifferential:
    """An ordered pair ``[hypo, hyper]`` of polytopes of the same dimension."""

    hypo: Polytope
    hyper: Polytope

    def __post_init__(self):
        if self.hypo.dim != self.hyper.dim:
            raise ValueError(f"hypo has dim {self.hypo.dim} but hyper has dim {self.hyper.dim}")

    @property
    def dim(self) -> int:
        return self.hypo.dim

    @classmethod
    def smooth(cls, grad) -> "Codifferential":
        """Codifferential ``[{(0, grad)}, {0}]`` of a differentiable function."""
        grad = np.atleast_1d(np.asarray(grad, dtype=float))
        return cls(Polytope.point(0.0, grad), Polytope.zero(grad.shape[0]))

    @classmethod
    def zero(cls, dim: int) -> "Codifferential":
        return cls(Polytope.zero(dim), Polytope.zero(dim))

    def is_normalized(self, tol: float = TOL_NORM) -> bool:
        return (
            abs(self.hypo.a.max()) <= tol
            and abs(self.hyper.a.min()) <= tol
            and bool(np.all(self.hypo.a <= tol))
            and bool(np.all(self.hyper.a >= -tol))
        )

    def model(self, dx) -> float:
        """DC model value ``Phi(dx) + Psi(dx)``."""
        return phi_eval(self.hypo, dx) + psi_eval(self.hyper, dx)


@dataclass(frozen=True, eq=False)
class Quasidifferential:
    """Pair of gradient polytopes, stored as vertex arrays of shape ``(k, n)``."""

    sub: np.ndarray
    sup: np.ndarray

    def __post_init__(self):
        sub = np.array(self.sub, dtype=float)
        sup = np.array(self.sup, dtype=float)
        if sub.ndim != 2 or sup.ndim != 2 or not len(sub) or not len(sup):
            raise ValueError("quasidifferential needs nonempty 2-D vertex arrays")
        object.__setattr__(self, "sub", sub)
        object.__setattr__(self, "sup", sup)


# -- evaluation ----------------------------------------------------------------------------------------


def _check_dx(p: Polytope, dx) -> np.ndarray:
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    if dx.shape[-1] != p.dim:
        raise ValueError(f"direction has dimension {dx.shape[-1]}, polytope has {p.dim}")
    return dx


def phi_eval(hypo: Polytope, dx) -> float:
    """``max`` over vertices of ``a + <v, dx>``; ``dx`` may be a batch of shape ``(k, n)``."""
    dx = _check_dx(hypo, dx)
    vals = hypo.a + dx @ hypo.v.T
    return vals.max(axis=-1)


def psi_eval(hyper: Polytope, dx) -> float:
    """``min`` over vertices of ``b + <w, dx>``."""
    dx = _check_dx(hyper, dx)
    vals = hyper.a + dx @ hyper.v.T
    return vals.min(axis=-1)


# -- polytope plumbing ---------------------------------------------------------------------------------


def minkowski_sum(p: Polytope, q: Polytope) -> Polytope:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    a = (p.a[:, None] + q.a[None, :]).reshape(-1)
    v = (p.v[:, None, :] + q.v[None, :, :]).reshape(-1, p.dim)
    return reduce(Polytope(a, v))


def _dedupe(points: np.ndarray, tol: float) -> np.ndarray:
    keep = []
    for i in range(points.shape[0]):
        if not any(np.max(np.abs(points[i] - points[j])) <= tol for j in keep):
            keep.append(i)
    return np.asarray(keep, dtype=int)


def _in_hull(point: np.ndarray, others: np.ndarray, tol: float) -> bool:
    """LP membership test: is ``point`` a convex combination of the rows of ``others``?"""
    k = others.shape[0]
    A = np.vstack([others.T, np.ones((1, k))])
    b = np.concatenate([point, [1.0]])
    out = lp.solve(lp.LinearProgram(k, None, A, b), tol=tol)
    return out.status is lp.LpStatus.FEASIBLE


def reduce(p: Polytope) -> Polytope:
    """Remove duplicate vertices and vertices lying in the hull of the others."""
    pts = p.points
    idx = _dedupe(pts, TOL_REDUCE)
    if len(idx) <= 2:
        return p if len(idx) == len(p) else Polytope(p.a[idx], p.v[idx])
    keep = list(idx)
    for i in list(idx):
        others = [j for j in keep if j != i]
        if _in_hull(pts[i], pts[others], TOL_REDUCE):
            keep = others
    keep = np.asarray(keep, dtype=int)
    if len(keep) == len(p):
        return p
    return Polytope(p.a[keep], p.v[keep])


def _normalize(cd: Codifferential) -> Codifferential:
    top = cd.hypo.a.max()
    low = cd.hyper.a.min()
    hypo = cd.hypo if top == 0.0 else cd.hypo.shift(-top)
    hyper = cd.hyper if low == 0.0 else cd.hyper.shift(-low)
    if len(hyper) == 1 and np.any(hyper.v[0] != 0.0):
        # A singleton hyperdifferential is a linear term; keep linear terms in the
        # hypodifferential so smooth functions always read [{(0, grad)}, {0}].
        hypo = Polytope(hypo.a, hypo.v + hyper.v[0])
        hyper = Polytope.zero(hyper.dim)
    return Codifferential(hypo, hyper)


# -- calculus rules ------------------------------------------------------------------------------------


def _sum_all(polys: Sequence[Polytope], dim: int) -> Polytope:
    out = Polytope.zero(dim)
    for q in polys:
        out = minkowski_sum(out, q)
    return out


def linear_combine(terms: Sequence[tuple[float, Codifferential]]) -> Codifferential:
    """
    Codifferential of ``sum lam_i f_i`` from codifferentials of the ``f_i``.

    A positive coefficient scales hypo into hypo and hyper into hyper; a
    negative one swaps the two roles.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("linear_combine needs at least one term")
    dim = terms[0][1].dim
    hypos, hypers = [], []
    for lam, cd in terms:
        if cd.dim != dim:
            raise ValueError(f"dimension mismatch: {cd.dim} vs {dim}")
        lam = float(lam)
        if lam >= 0:
            hypos.append(cd.hypo.scale(lam))
            hypers.append(cd.hyper.scale(lam))
        else:
            hypos.append(cd.hyper.scale(lam))
            hypers.append(cd.hypo.scale(lam))
    return _normalize(Codifferential(_sum_all(hypos, dim), _sum_all(hypers, dim)))


def _hull_of_union(polys: Sequence[Polytope]) -> Polytope:
    return reduce(Polytope(np.concatenate([q.a for q in polys]), np.vstack([q.v for q in polys])))


def max_rule(cds: Sequence[Codifferential], values: Sequence[float]) -> Codifferential:
    """Codifferential of ``max_i f_i`` given codifferentials and values of the ``f_i``."""
    cds = list(cds)
    values = np.asarray(values, dtype=float)
    if not cds:
        raise ValueError("max_rule needs at least one function")
    if len(cds) != len(values):
        raise ValueError("one value per codifferential is required")
    if len(cds) == 1:
        return cds[0]
    dim = cds[0].dim
    if any(cd.dim != dim for cd in cds):
        raise ValueError("dimension mismatch")
    top = values.max()
    pieces = []
    for i, cd in enumerate(cds):
        others = _sum_all([cds[j].hyper for j in range(len(cds)) if j != i], dim)
        pieces.append(minkowski_sum(cd.hypo.shift(values[i] - top), -others))
    hyper = _sum_all([cd.hyper for cd in cds], dim)
    return _normalize(Codifferential(_hull_of_union(pieces), hyper))


def min_rule(cds: Sequence[Codifferential], values: Sequence[float]) -> Codifferential:
    """Codifferential of ``min_i f_i``; the mirror image of :func:`max_rule`."""
    cds = list(cds)
    values = np.asarray(values, dtype=float)
    if not cds:
        raise ValueError("min_rule needs at least one function")
    if len(cds) != len(values):
        raise ValueError("one value per codifferential is required")
    if len(cds) == 1:
        return cds[0]
    dim = cds[0].dim
    if any(cd.dim != dim for cd in cds):
        raise ValueError("dimension mismatch")
    low = values.min()
    pieces = []
    for i, cd in enumerate(cds):
        others = _sum_all([cds[j].hypo for j in range(len(cds)) if j != i], dim)
        pieces.append(minkowski_sum(cd.hyper.shift(values[i] - low), -others))
    hypo = _sum_all([cd.hypo for cd in cds], dim)
    return _normalize(Codifferential(hypo, _hull_of_union(pieces)))


def compose_smooth(partials: Sequence[float], cds: Sequence[Codifferential]) -> Codifferential:
    """Codifferential of ``g(f_1, ..., f_k)`` for smooth ``g`` with the given partial derivatives."""
    partials = list(partials)
    cds = list(cds)
    if len(partials) != len(cds):
        raise ValueError(f"{len(partials)} partials for {len(cds)} codifferentials")
    return linear_combine(list(zip(partials, cds)))


def precompose_affine(cd: Codifferential, M) -> Codifferential:
    """Codifferential of ``f(A y)`` in the variable ``y``; each vertex ``(a, v)`` becomes ``(a, M^T v)``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != cd.dim:
        raise ValueError(f"map has {M.shape[0]} rows, codifferential has dim {cd.dim}")
    return Codifferential(
        reduce(Polytope(cd.hypo.a, cd.hypo.v @ M)),
        reduce(Polytope(cd.hyper.a, cd.hyper.v @ M)),
    )


# -- first-order information ---------------------------------------------------------------------------


def zero_face(p: Polytope, tol: float = TOL_FACE) -> np.ndarray:
    """Gradient parts of the vertices whose offset is zero within ``tol``."""
    mask = np.abs(p.a) <= tol
    return p.v[mask]


def quasidiff_extract(cd: Codifferential, tol: float = TOL_FACE) -> Quasidifferential:
    sub = zero_face(cd.hypo, tol)
    sup = zero_face(cd.hyper, tol)
    if not len(sub) or not len(sup):
        raise ValueError("codifferential is not normalized: an a = 0 face is empty")
    return Quasidifferential(sub, sup)


def directional_derivative(cd: Codifferential, v) -> float:
    q = quasidiff_extract(cd)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape[0] != cd.dim:
        raise ValueError(f"direction has dimension {v.shape[0]}, codifferential has {cd.dim}")
    return float(np.max(q.sub @ v) + np.min(q.sup @ v))


def point_distance(x, p: Polytope) -> float:
    """Euclidean distance from ``x`` (a point ``(a, v)``) to the polytope ``p``."""
    pts = p.points
    x = np.asarray(x, dtype=float)
    if len(pts) == 1:
        return float(np.linalg.norm(x - pts[0]))
    # Nonnegative least squares over convex weights; the affine constraint sum(w) = 1
    # is imposed as a heavily weighted extra row, then the active set is re-solved exactly.
    scale = 1e3 * max(1.0, float(np.abs(pts).max()), float(np.abs(x).max()))
    A = np.vstack([pts.T, np.full((1, len(pts)), scale)])
    b = np.concatenate([x, [scale]])
    w, _ = nnls(A, b, maxiter=50 * len(pts))
    best = float(np.linalg.norm(pts.T @ (w / w.sum()) - x)) if w.sum() > 0 else np.inf
    support = np.flatnonzero(w > 1e-14)
    if len(support):
        P = pts[support]
        k = len(support)
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = P @ P.T
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        rhs = np.concatenate([P @ x, [1.0]])
        try:
            sol = np.linalg.solve(K, rhs)
            ws = sol[:k]
            if np.all(ws >= -1e-12):
                best = min(best, float(np.linalg.norm(P.T @ np.clip(ws, 0, None) / np.clip(ws, 0, None).sum() - x)))
        except np.linalg.LinAlgError:
            pass
    return min(best, float(np.min(np.linalg.norm(pts - x, axis=1))))


def hausdorff_distance(p: Polytope, q: Polytope) -> float:
    """Hausdorff distance between two polytopes in ``R x R^n``."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    # The distance to a convex set is convex, so each one-sided supremum is attained at a vertex.
    d_pq = max(point_distance(x, q) for x in p.points)
    d_qp = max(point_distance(y, p) for y in q.points)
    return max(d_pq, d_qp)
