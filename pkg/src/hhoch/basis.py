"""Orthonormal polynomial bases on polygons and faces, and L2 projectors.

Both bases start from monomials scaled by the carrier centroid and
diameter, ordered by total degree, and are orthonormalized through the
Cholesky factor of their Gram matrix. Because the ordering is graded, the
first ``dim(P^l)`` functions of a degree-``m`` basis span ``P^l`` for every
``l <= m``; in particular the first function is the normalized constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import QuadratureRule, polygon_rule, segment_rule


class BasisError(np.linalg.LinAlgError):
    pass


def dim_element(l: int) -> int:
    return (l + 1) * (l + 2) // 2


def dim_face(l: int) -> int:
    return l + 1


def monomial_exponents(l: int) -> np.ndarray:
    return np.array([(d - j, j) for d in range(l + 1) for j in range(d + 1)], dtype=int)


def _orthonormalize(gram: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise BasisError("Gram matrix is not positive definite (degenerate carrier)") from exc
    return np.linalg.inv(L)


@dataclass(frozen=True, eq=False)
class ElementBasis:
    """Orthonormal basis of P^l(T); rows of ``coef`` express it in scaled monomials."""

    center: np.ndarray
    scale: float
    degree: int
    exps: np.ndarray
    coef: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.exps)

    def _monomials(self, pts):
        z = (np.atleast_2d(pts) - self.center) / self.scale
        return z[:, 0:1] ** self.exps[:, 0] * z[:, 1:2] ** self.exps[:, 1]

    def values(self, pts) -> np.ndarray:
        """Basis values, shape (npts, dim)."""
        return self._monomials(pts) @ self.coef.T

    def gradients(self, pts) -> np.ndarray:
        """Basis gradients, shape (npts, dim, 2)."""
        z = (np.atleast_2d(pts) - self.center) / self.scale
        a, b = self.exps[:, 0], self.exps[:, 1]
        zx, zy = z[:, 0:1], z[:, 1:2]
        dx = np.where(a > 0, a * zx ** np.maximum(a - 1, 0), 0.0) * zy**b
        dy = np.where(b > 0, b * zy ** np.maximum(b - 1, 0), 0.0) * zx**a
        g = np.stack([dx @ self.coef.T, dy @ self.coef.T], axis=-1)
        return g / self.scale

    def evaluate(self, coeffs, pts) -> np.ndarray:
        return self.values(pts) @ coeffs


def element_basis(triangles, center, diameter: float, l: int, passes: int = 2) -> ElementBasis:
    """Build the orthonormal basis of P^l on the polygon covered by ``triangles``."""
    if l < 0:
        raise ValueError("degree must be nonnegative")
    exps = monomial_exponents(l)
    quad = polygon_rule(triangles, 2 * l)
    coef = np.eye(len(exps))
    basis = ElementBasis(np.asarray(center, float), float(diameter), l, exps, coef)
    # a second pass removes the loss of orthogonality of a single Cholesky sweep
    for _ in range(passes):
        V = basis.values(quad.points)
        gram = (V * quad.weights[:, None]).T @ V
        coef = _orthonormalize(gram) @ basis.coef
        basis = ElementBasis(basis.center, basis.scale, l, exps, coef)
    return basis


@dataclass(frozen=True, eq=False)
class FaceBasis:
    """Orthonormal basis of P^l(F) in the scaled arclength coordinate."""

    origin: np.ndarray
    tangent: np.ndarray
    scale: float
    degree: int
    coef: np.ndarray

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, pts) -> np.ndarray:
        s = ((np.atleast_2d(pts) - self.origin) @ self.tangent) / self.scale
        return (s[:, None] ** np.arange(self.degree + 1)) @ self.coef.T

    def evaluate(self, coeffs, pts) -> np.ndarray:
        return self.values(pts) @ coeffs


def face_basis(p0, p1, l: int) -> FaceBasis:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    length = float(np.linalg.norm(p1 - p0))
    t = (p1 - p0) / length
    mid = 0.5 * (p0 + p1)
    basis = FaceBasis(mid, t, length, l, np.eye(l + 1))
    quad = segment_rule(p0, p1, 2 * l)
    for _ in range(2):
        V = basis.values(quad.points)
        gram = (V * quad.weights[:, None]).T @ V
        basis = FaceBasis(mid, t, length, l, _orthonormalize(gram) @ basis.coef)
    return basis


def gram_matrix(values: np.ndarray, quad: QuadratureRule) -> np.ndarray:
    return (values * quad.weights[:, None]).T @ values


def l2_project(basis, quad: QuadratureRule, v) -> np.ndarray:
    """Coefficients of the L2-orthogonal projection of ``v`` onto span(basis).

    ``v`` is a callable of an (n, 2) point array or an array of values at
    the quadrature points. The Gram matrix is solved explicitly so the
    result stays exact for bases that are orthonormal only up to roundoff.
    """
    V = basis.values(quad.points)
    vals = v(quad.points) if callable(v) else np.asarray(v)
    rhs = V.T @ (quad.weights * vals)
    return np.linalg.solve(gram_matrix(V, quad), rhs)


def l2_project_element(v, triangles, basis: ElementBasis, degree: int | None = None) -> np.ndarray:
    """Project onto P^l(T); ``degree`` is the quadrature exactness (default 2l + 6)."""
    quad = polygon_rule(triangles, degree if degree is not None else 2 * basis.degree + 6)
    return l2_project(basis, quad, v)


def l2_project_face(v, p0, p1, basis: FaceBasis, degree: int | None = None) -> np.ndarray:
    quad = segment_rule(np.asarray(p0, float), np.asarray(p1, float), degree if degree is not None else 2 * basis.degree + 6)
    return l2_project(basis, quad, v)
