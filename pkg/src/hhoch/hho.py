"""Hybrid High-Order space: local operators, interpolation, norms.

Unknowns are polynomials of degree k+1 on elements and k on faces. A hybrid
vector is a flat array laid out as described by :class:`DofMap`: element
blocks first, then face blocks, each in the carrier's orthonormal basis.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .assembly import DofMap, Factorization, add_constraint, assemble
from .basis import ElementBasis, FaceBasis, dim_element, dim_face, element_basis, face_basis, l2_project
from .mesh import PolyMesh, subtriangulate
from .quadrature import polygon_rule, segment_rule


@dataclass(frozen=True, eq=False)
class LocalOperators:
    """Dense element matrices acting on the local hybrid DOFs (element block, then faces of T)."""

    dofs: np.ndarray
    R: np.ndarray  # reconstruction: local DOFs -> P^{k+1}(T) coefficients
    K: np.ndarray  # gradient Gram on P^{k+1}(T)
    M: np.ndarray  # mass on P^{k+1}(T)
    S: np.ndarray  # s_1 restricted to T
    S0: np.ndarray  # s_0 restricted to T
    A: np.ndarray  # R^T K R + S
    M0: np.ndarray  # hybrid L2 product restricted to T
    mean: np.ndarray  # (phi_i, 1)_T for the element basis


@dataclass(frozen=True, eq=False)
class QuadGroup:
    """Quadrature data of all elements sharing a node count, stacked for einsum."""

    elements: np.ndarray
    points: np.ndarray  # (ne, nq, 2)
    weights: np.ndarray  # (ne, nq)
    values: np.ndarray  # (ne, nq, nb)
    grads: np.ndarray  # (ne, nq, nb, 2)


class HHOSpace:
    """Discrete space U_h on a polygonal mesh for face degree ``k``.

    ``stab_sign`` flips the sign of the stabilization; it exists only for
    fault-injection checks of the verification suite.
    """

    def __init__(self, mesh: PolyMesh, k: int, workers: int = 1, stab_sign: float = 1.0):
        if k < 0:
            raise ValueError("k must be nonnegative")
        self.mesh = mesh
        self.k = k
        self.workers = max(1, int(workers))
        self.stab_sign = float(stab_sign)
        self.sub = subtriangulate(mesh)
        self.n_elem_basis = dim_element(k + 1)
        self.n_face_basis = dim_face(k)
        self.dofmap = DofMap(mesh.n_elements, mesh.n_faces, self.n_elem_basis, self.n_face_basis)
        self.ebases: list[ElementBasis] = self._map(self._element_basis, range(mesh.n_elements))
        self.fbases: list[FaceBasis] = [
            face_basis(mesh.vertices[a], mesh.vertices[b], k) for a, b in mesh.faces
        ]
        self.local_operators: list[LocalOperators] = self._map(self._local, range(mesh.n_elements))

    # ------------------------------------------------------------ construction

    def _map(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) < 2:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * self.workers))))

    def _element_basis(self, T: int) -> ElementBasis:
        m = self.mesh
        return element_basis(self.sub.of(T), m.centroids[T], m.diameters[T], self.k + 1)

    def _local(self, T: int) -> LocalOperators:
        m, k = self.mesh, self.k
        b = self.ebases[T]
        nT, nF = self.n_elem_basis, self.n_face_basis
        faces = m.element_faces[T]
        nloc = nT + len(faces) * nF
        q = polygon_rule(self.sub.of(T), 2 * (k + 1))
        V = b.values(q.points)
        G = b.gradients(q.points)
        M = (V * q.weights[:, None]).T @ V
        K = np.einsum("q,qia,qja->ij", q.weights, G, G)
        mean = V.T @ q.weights

        rhs = np.zeros((nT, nloc))
        rhs[:, :nT] = K
        S = np.zeros((nloc, nloc))
        S0 = np.zeros((nloc, nloc))
        for i, F in enumerate(faces):
            p0, p1 = m.vertices[m.faces[F, 0]], m.vertices[m.faces[F, 1]]
            qf = segment_rule(p0, p1, 2 * k + 2)
            n = m.outward_normal(T, i)
            Vt = b.values(qf.points)
            Gn = b.gradients(qf.points) @ n
            Vf = self.fbases[F].values(qf.points)
            w = qf.weights[:, None]
            off = nT + i * nF
            # (v_F - v_T, grad z . n_TF)_F
            rhs[:, off : off + nF] += (Gn * w).T @ Vf
            rhs[:, :nT] -= (Gn * w).T @ Vt
            MFF = (Vf * w).T @ Vf
            MFT = (Vf * w).T @ Vt
            D = np.zeros((nF, nloc))
            D[:, :nT] = -np.linalg.solve(MFF, MFT)
            D[:, off : off + nF] = np.eye(nF)
            DtMD = D.T @ MFF @ D
            hF = m.face_lengths[F]
            S += DtMD / hF
            S0 += hF * DtMD
        S *= self.stab_sign

        # gradients of the constant basis function vanish: solve on the complement
        R = np.zeros((nT, nloc))
        R[1:] = np.linalg.solve(K[1:, 1:], rhs[1:])
        R[0] = -(mean[1:] @ R[1:]) / mean[0]
        R[0, :nT] += mean / mean[0]
        A = R.T @ K @ R + S
        A = 0.5 * (A + A.T)
        M0 = S0.copy()
        M0[:nT, :nT] += M
        dofs = self.dofmap.local_dofs(T, faces)
        return LocalOperators(dofs, R, K, M, S, S0, A, M0, mean)

    # --------------------------------------------------------- global matrices

    @cached_property
    def A(self):
        return assemble(self, "a_h").matrix

    @cached_property
    def M0(self):
        return assemble(self, "hybrid_l2").matrix

    @cached_property
    def mass(self):
        """Broken L2 mass on element DOFs (zero on face DOFs)."""
        return assemble(self, "broken_mass").matrix

    @cached_property
    def S(self):
        return assemble(self, "stabilization").matrix

    @cached_property
    def S0(self):
        return assemble(self, "s0").matrix

    @cached_property
    def broken_stiffness(self):
        return assemble(self, "broken_stiffness").matrix

    @cached_property
    def mean_vector(self) -> np.ndarray:
        """Vector m with m . v = (v_h, 1)."""
        m = np.zeros(self.dofmap.n_dofs)
        for lo in self.local_operators:
            m[lo.dofs[: self.n_elem_basis]] = lo.mean
        return m

    @cached_property
    def _M0_solver(self):
        return Factorization(self.M0)

    @cached_property
    def _green_solver(self):
        return Factorization(add_constraint(self.A, self.mean_vector))

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    # ------------------------------------------------------------- quadrature

    def quad_groups(self, degree: int) -> list:
        cache = self.__dict__.setdefault("_quad_groups", {})
        if degree not in cache:
            rules = [polygon_rule(self.sub.of(T), degree) for T in range(self.mesh.n_elements)]
            by_n: dict = {}
            for T, r in enumerate(rules):
                by_n.setdefault(len(r.weights), []).append(T)
            groups = []
            for nq, Ts in sorted(by_n.items()):
                pts = np.stack([rules[T].points for T in Ts])
                wts = np.stack([rules[T].weights for T in Ts])
                vals = np.stack([self.ebases[T].values(rules[T].points) for T in Ts])
                grads = np.stack([self.ebases[T].gradients(rules[T].points) for T in Ts])
                groups.append(QuadGroup(np.array(Ts), pts, wts, vals, grads))
            cache[degree] = groups
        return cache[degree]

    def element_coefficients(self, v: np.ndarray) -> np.ndarray:
        """Element blocks of a hybrid vector, shape (n_elements, n_elem_basis)."""
        return np.asarray(v)[: self.dofmap.n_element_dofs].reshape(self.mesh.n_elements, self.n_elem_basis)

    def integrate(self, fn, degree: int | None = None) -> float:
        """Integral over the domain of fn(points) (points of shape (..., 2))."""
        degree = 2 * (self.k + 1) + 6 if degree is None else degree
        return float(sum(np.sum(g.weights * fn(g.points)) for g in self.quad_groups(degree)))

    def integrate_field(self, v: np.ndarray, fn, degree: int | None = None) -> float:
        """Integral of fn(v_h(x), x) where v_h is the broken element field."""
        degree = 4 * (self.k + 1) if degree is None else degree
        cv = self.element_coefficients(v)
        total = 0.0
        for g in self.quad_groups(degree):
            vals = np.einsum("eqi,ei->eq", g.values, cv[g.elements])
            total += float(np.sum(g.weights * fn(vals, g.points)))
        return total

    # ------------------------------------------------------------ interpolation

    def interpolate(self, v, degree: int | None = None) -> np.ndarray:
        """I_h v: L2 projections on every element (degree k+1) and face (degree k)."""
        degree = 2 * (self.k + 1) + 6 if degree is None else degree
        out = np.zeros(self.n_dofs)
        m = self.mesh
        for g in self.quad_groups(degree):
            vals = v(g.points)
            rhs = np.einsum("eqi,eq->ei", g.values, g.weights * vals)
            gram = np.einsum("eqi,eqj,eq->eij", g.values, g.values, g.weights)
            coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
            for T, c in zip(g.elements, coef):
                out[self.dofmap.element_dofs(T)] = c
        for F, (a, b) in enumerate(m.faces):
            q = segment_rule(m.vertices[a], m.vertices[b], degree)
            out[self.dofmap.face_dofs(F)] = l2_project(self.fbases[F], q, v)
        return out

    def project_elements(self, v, degree: int | None = None) -> np.ndarray:
        """Hybrid vector holding pi^{k+1}_h v in element blocks and zeros on faces."""
        degree = 2 * (self.k + 1) + 6 if degree is None else degree
        out = np.zeros(self.n_dofs)
        for g in self.quad_groups(degree):
            vals = v(g.points)
            rhs = np.einsum("eqi,eq->ei", g.values, g.weights * vals)
            gram = np.einsum("eqi,eqj,eq->eij", g.values, g.values, g.weights)
            coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
            out[: self.dofmap.n_element_dofs].reshape(-1, self.n_elem_basis)[g.elements] = coef
        return out

    def constant(self, value: float = 1.0) -> np.ndarray:
        return self.interpolate(lambda x: np.full(x.shape[:-1], float(value)))

    def faces_from_elements(self, v: np.ndarray) -> np.ndarray:
        """Fill face blocks with the projection of the average neighbouring element trace."""
        out = np.array(v, dtype=float)
        m = self.mesh
        cv = self.element_coefficients(v)
        for F, (a, b) in enumerate(m.faces):
            q = segment_rule(m.vertices[a], m.vertices[b], 2 * self.k + 2)
            trace = np.mean([self.ebases[T].values(q.points) @ cv[T] for T in m.face_elements[F]], axis=0)
            out[self.dofmap.face_dofs(F)] = l2_project(self.fbases[F], q, trace)
        return out

    # --------------------------------------------------------------- evaluation

    def evaluate(self, v: np.ndarray, T: int, pts) -> np.ndarray:
        return self.ebases[T].values(pts) @ self.element_coefficients(v)[T]

    def mean(self, v: np.ndarray) -> float:
        """(v_h, 1)."""
        return float(self.mean_vector @ v)

    def zero_mean(self, v: np.ndarray) -> np.ndarray:
        """Subtract the global average from element and face blocks alike."""
        return v - self.mean(v) / self.mesh.domain_area * self.constant()

    def lp_norm(self, v: np.ndarray, p: float, degree: int | None = None) -> float:
        if np.isinf(p):
            return self.sup_norm(v)
        degree = int(min(40, max(2 * (self.k + 1), np.ceil(p * (self.k + 1))) + 2)) if degree is None else degree
        return self.integrate_field(v, lambda c, x: np.abs(c) ** p, degree) ** (1.0 / p)

    def sup_norm(self, v: np.ndarray, degree: int = 8) -> float:
        """Max of |v_h| sampled at quadrature nodes and element vertices."""
        cv = self.element_coefficients(v)
        best = 0.0
        for g in self.quad_groups(degree):
            vals = np.einsum("eqi,ei->eq", g.values, cv[g.elements])
            best = max(best, float(np.abs(vals).max()))
        m = self.mesh
        for T, loop in enumerate(m.elements):
            best = max(best, float(np.abs(self.ebases[T].values(m.vertices[loop]) @ cv[T]).max()))
        return best

    def grad_lp_norm(self, v: np.ndarray, p: float, degree: int | None = None) -> float:
        """|| grad_h v_h ||_{L^p} with the Euclidean norm of the gradient."""
        degree = int(min(40, max(2 * self.k, np.ceil(p * self.k)) + 4)) if degree is None else degree
        cv = self.element_coefficients(v)
        total = 0.0
        for g in self.quad_groups(degree):
            grads = np.einsum("eqia,ei->eqa", g.grads, cv[g.elements])
            total += float(np.sum(g.weights * np.sqrt((grads**2).sum(-1)) ** p))
        return total ** (1.0 / p)

    # -------------------------------------------------------------------- norms

    def norm_1h(self, v: np.ndarray) -> float:
        val = v @ (self.broken_stiffness @ v) + v @ (self.S @ v)
        return float(np.sqrt(max(val, 0.0)))

    def norm_ah(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.A @ v), 0.0)))

    def norm_0h(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.M0 @ v), 0.0)))

    def seminorm_0h(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.S0 @ v), 0.0)))

    def l2_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.mass @ v), 0.0)))

    def a_h(self, u: np.ndarray, z: np.ndarray) -> float:
        return float(z @ (self.A @ u))

    # ---------------------------------------------------- Laplace and Green ops

    def discrete_laplacian(self, v: np.ndarray) -> np.ndarray:
        """L_h v such that -(L_h v, z)_{0,h} = a_h(v, z) for all z."""
        return self._M0_solver(-(self.A @ v))

    def discrete_green(self, phi: np.ndarray) -> np.ndarray:
        """G_h phi: zero-mean solution of a_h(G_h phi, z) = (phi, z)_{0,h} for zero-mean z."""
        rhs = np.concatenate([self.M0 @ phi, [0.0]])
        return self._green_solver(rhs)[:-1]
