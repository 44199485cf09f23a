"""Quadrature rules on triangles, segments and polygons.

Triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre
rules. They have positive weights and are exact for any requested degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_DEGREE = 60


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


def _check(degree: int) -> None:
    if degree < 0 or degree > MAX_DEGREE:
        raise QuadratureError(f"exactness degree {degree} outside the implemented range [0, {MAX_DEGREE}]")


@lru_cache(maxsize=None)
def gauss_segment(degree: int):
    """Gauss-Legendre nodes/weights on [0, 1] exact up to ``degree``."""
    _check(degree)
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def reference_triangle(degree: int):
    """Nodes (barycentric-free, on the unit right triangle) and weights."""
    _check(degree)
    # the collapsed direction carries an extra factor (1 - s)
    xs, ws = gauss_segment(degree + 1)
    xt, wt = gauss_segment(degree)
    S, Tt = np.meshgrid(xs, xt, indexing="ij")
    W = np.outer(ws * (1.0 - xs), wt)
    pts = np.stack([S.ravel(), ((1.0 - S) * Tt).ravel()], axis=1)
    return pts, W.ravel()


def triangle_rule(tri: np.ndarray, degree: int) -> tuple:
    ref, w = reference_triangle(degree)
    a, b, c = tri
    J = np.stack([b - a, c - a], axis=1)
    det = abs(np.linalg.det(J))
    return a + ref @ J.T, w * det


def segment_rule(p0: np.ndarray, p1: np.ndarray, degree: int) -> QuadratureRule:
    s, w = gauss_segment(degree)
    length = float(np.linalg.norm(p1 - p0))
    return QuadratureRule(p0 + s[:, None] * (p1 - p0), w * length, degree)


def polygon_rule(triangles, degree: int) -> QuadratureRule:
    pts, wts = zip(*(triangle_rule(t, degree) for t in triangles))
    return QuadratureRule(np.concatenate(pts), np.concatenate(wts), degree)


def polygon_monomial_integral(pts: np.ndarray, a: int, b: int, center=(0.0, 0.0)) -> float:
    """Exact integral of (x-cx)^a (y-cy)^b over a simple CCW polygon.

    Green's theorem turns it into edge integrals of x^(a+1) y^b / (a+1) dy,
    each evaluated exactly with a Gauss rule on the edge.
    """
    p = np.asarray(pts, dtype=float) - np.asarray(center, dtype=float)
    s, w = gauss_segment(a + b + 1)
    total = 0.0
    for p0, p1 in zip(p, np.roll(p, -1, axis=0)):
        x = p0[0] + s * (p1[0] - p0[0])
        y = p0[1] + s * (p1[1] - p0[1])
        total += np.sum(w * x ** (a + 1) * y**b) * (p1[1] - p0[1])
    return total / (a + 1)
