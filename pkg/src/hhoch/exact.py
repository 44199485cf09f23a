"""Closed-form manufactured solutions on the unit square."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

PI = np.pi


def cosine_mode(x):
    return np.cos(PI * x[..., 0]) * np.cos(PI * x[..., 1])


def cosine_mode_grad_sq(x):
    sx, cx = np.sin(PI * x[..., 0]), np.cos(PI * x[..., 0])
    sy, cy = np.sin(PI * x[..., 1]), np.cos(PI * x[..., 1])
    return PI**2 * (sx**2 * cy**2 + cx**2 * sy**2)


@dataclass(frozen=True)
class ManufacturedSolution:
    """c(x, t) = g(t) cos(pi x1) cos(pi x2) with polynomial g.

    ``profile`` holds the coefficients of g in increasing powers of t; the
    default (0, 1) is g(t) = t. Both c and the derived chemical potential
    satisfy homogeneous Neumann conditions on the unit square.
    """

    gamma: float = 1.0
    profile: tuple = (0.0, 1.0)

    def g(self, t):
        return P.polyval(t, self.profile)

    def dg(self, t):
        return P.polyval(t, P.polyder(self.profile))

    def c(self, x, t):
        return self.g(t) * cosine_mode(x)

    def laplacian_c(self, x, t):
        return -2.0 * PI**2 * self.c(x, t)

    def w(self, x, t):
        c = self.c(x, t)
        return c**3 - c - self.gamma**2 * self.laplacian_c(x, t)

    def laplacian_w(self, x, t):
        g = self.g(t)
        u = cosine_mode(x)
        lap_u = -2.0 * PI**2 * u
        lap_c3 = g**3 * (3.0 * u**2 * lap_u + 6.0 * u * cosine_mode_grad_sq(x))
        return lap_c3 - g * lap_u + 2.0 * PI**2 * self.gamma**2 * g * lap_u

    def source(self, x, t):
        """f = dc/dt - laplacian(w), the right-hand side of the mass equation."""
        return self.dg(t) * cosine_mode(x) - self.laplacian_w(x, t)

    def at(self, t):
        """Callables of x alone for c, w at time t."""
        return (lambda x: self.c(x, t)), (lambda x: self.w(x, t))
