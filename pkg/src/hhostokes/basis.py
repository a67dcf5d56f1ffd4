"""Scaled monomial bases, polygon/segment quadrature and L2 projectors."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Cell, Face, Mesh


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) physical coordinates
    weights: np.ndarray  # (nq,)
    degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate ``values`` sampled at the points (leading axis)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def _reference_triangle(degree: int) -> tuple[np.ndarray, np.ndarray]:
    # Conical product (collapsed Gauss) rule on (0,0),(1,0),(0,1): positive
    # weights, exact up to ``degree``.
    n = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    s, ws = 0.5 * (1.0 + xj), wj / 4.0
    t, wt = 0.5 * (1.0 + xl), wl / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    w = np.outer(ws, wt).ravel()
    return pts, w


@lru_cache(maxsize=None)
def _reference_segment(degree: int) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    return 0.5 * (1.0 + x), 0.5 * w


def quad_triangle(a, b, c, degree: int) -> QuadratureRule:
    ref, w = _reference_triangle(degree)
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    J = np.column_stack([b - a, c - a])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return QuadratureRule(a + ref @ J.T, w * abs(det), degree)


def quad_polygon(pts: np.ndarray, center: np.ndarray, degree: int) -> QuadratureRule:
    """Fan sub-triangulation from ``center`` (the polygon must be star-shaped about it)."""
    ref, w = _reference_triangle(degree)
    a = np.asarray(center, dtype=float)
    nxt = np.roll(pts, -1, axis=0)
    e1, e2 = pts - a, nxt - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(det <= 0.0):
        raise ValueError("degenerate polygon: not star-shaped about its centroid")
    # (ntri, nref, 2)
    x = a + ref[None, :, 0:1] * e1[:, None, :] + ref[None, :, 1:2] * e2[:, None, :]
    return QuadratureRule(x.reshape(-1, 2), (det[:, None] * w[None, :]).ravel(), degree)


def quad_cell(mesh: Mesh, cell: Cell | int, degree: int) -> QuadratureRule:
    if isinstance(cell, (int, np.integer)):
        cell = mesh.cells[cell]
    return quad_polygon(mesh.vertices[list(cell.vertices)], cell.centroid, degree)


def quad_segment(a, b, degree: int) -> QuadratureRule:
    s, w = _reference_segment(degree)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    length = float(np.hypot(*(b - a)))
    return QuadratureRule(a + s[:, None] * (b - a), w * length, degree)


def quad_face(mesh: Mesh, face: Face | int, degree: int) -> QuadratureRule:
    if isinstance(face, (int, np.integer)):
        face = mesh.faces[face]
    a, b = mesh.vertices[list(face.vertices)]
    return quad_segment(a, b, degree)


def monomial_exponents(degree: int) -> np.ndarray:
    """Exponents (a, b) of x^a y^b ordered by total degree, then decreasing a."""
    return np.array([(d - j, j) for d in range(degree + 1) for j in range(d + 1)], dtype=int)


def dim_poly(degree: int, d: int = 2) -> int:
    if d == 1:
        return degree + 1
    return (degree + 1) * (degree + 2) // 2


class CellBasis:
    """Scaled monomials ((x - x_T)/h_T)^a ((y - y_T)/h_T)^b of total degree <= ``degree``."""

    def __init__(self, center, h: float, degree: int):
        self.center = np.asarray(center, dtype=float)
        self.h = float(h)
        self.degree = degree
        self.exponents = monomial_exponents(degree)
        self.size = len(self.exponents)

    @classmethod
    def for_cell(cls, cell: Cell, degree: int) -> CellBasis:
        return cls(cell.centroid, cell.diameter, degree)

    def _powers(self, x: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(x) - self.center) / self.h
        p = np.ones((z.shape[0], 2, self.degree + 1))
        for j in range(1, self.degree + 1):
            p[:, :, j] = p[:, :, j - 1] * z
        return p

    def values(self, x: np.ndarray) -> np.ndarray:
        """(npts, size)"""
        p = self._powers(x)
        a, b = self.exponents.T
        return p[:, 0, a] * p[:, 1, b]

    def gradients(self, x: np.ndarray) -> np.ndarray:
        """(npts, size, 2)"""
        p = self._powers(x)
        a, b = self.exponents.T
        am, bm = np.maximum(a - 1, 0), np.maximum(b - 1, 0)
        gx = a * p[:, 0, am] * p[:, 1, b] / self.h
        gy = b * p[:, 0, a] * p[:, 1, bm] / self.h
        return np.stack([gx, gy], axis=-1)


class FaceBasis:
    """1D scaled monomials ((s - s_F)/h_F)^j in the arclength coordinate."""

    def __init__(self, midpoint, tangent, h: float, degree: int):
        self.midpoint = np.asarray(midpoint, dtype=float)
        self.tangent = np.asarray(tangent, dtype=float)
        self.h = float(h)
        self.degree = degree
        self.size = degree + 1

    @classmethod
    def for_face(cls, face: Face, degree: int) -> FaceBasis:
        return cls(face.midpoint, face.tangent, face.length, degree)

    def values(self, x: np.ndarray) -> np.ndarray:
        s = (np.atleast_2d(x) - self.midpoint) @ self.tangent / self.h
        return s[:, None] ** np.arange(self.degree + 1)[None, :]


def gram(basis, quad: QuadratureRule) -> np.ndarray:
    phi = basis.values(quad.points)
    return phi.T @ (quad.weights[:, None] * phi)


def orthonormalizer(basis, quad: QuadratureRule) -> np.ndarray:
    """Matrix ``L`` such that ``phi @ L`` is L2-orthonormal (Gram-Cholesky)."""
    c = np.linalg.cholesky(gram(basis, quad))
    return np.linalg.inv(c).T


def _project(f: Callable, basis, quad: QuadratureRule) -> np.ndarray:
    phi = basis.values(quad.points)
    vals = np.asarray(f(quad.points), dtype=float)
    M = phi.T @ (quad.weights[:, None] * phi)
    rhs = phi.T @ (quad.weights[:, None] * vals.reshape(len(quad.weights), -1))
    try:
        fac = cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular Gram matrix (degenerate geometry)") from exc
    c = cho_solve(fac, rhs)
    return c[:, 0] if vals.ndim == 1 else c


def l2_project_cell(f: Callable, mesh: Mesh, cell: int, degree: int, quad_degree: int | None = None) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` on P^degree(T) in the scaled monomial basis.

    ``f`` maps an (npts, 2) array to (npts,) or (npts, m); vector fields are
    projected component-wise and returned as (size, m).
    """
    c = mesh.cells[cell]
    q = quad_cell(mesh, c, quad_degree if quad_degree is not None else 2 * degree + 6)
    return _project(f, CellBasis.for_cell(c, degree), q)


def l2_project_face(f: Callable, mesh: Mesh, face: int, degree: int, quad_degree: int | None = None) -> np.ndarray:
    fc = mesh.faces[face]
    q = quad_face(mesh, fc, quad_degree if quad_degree is not None else 2 * degree + 6)
    return _project(f, FaceBasis.for_face(fc, degree), q)
