"""Global sparse assembly, static condensation and direct solves.

Hybrid DOFs are numbered element blocks first, then face blocks. Every
element block has the same size, which lets condensation invert all element
blocks at once as a stacked dense array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class DofMap:
    """Layout of a (possibly multi-field) hybrid unknown vector.

    ``n_fields`` fields are interleaved per carrier: each element owns a
    contiguous block of ``n_fields * n_elem_basis`` DOFs, each face a block of
    ``n_fields * n_face_basis``. ``n_extra`` trailing scalar unknowns (the
    zero-mean multiplier) follow the face blocks.
    """

    n_elements: int
    n_faces: int
    n_elem_basis: int
    n_face_basis: int
    n_fields: int = 1
    n_extra: int = 0

    @property
    def element_block(self) -> int:
        return self.n_fields * self.n_elem_basis

    @property
    def face_block(self) -> int:
        return self.n_fields * self.n_face_basis

    @property
    def n_element_dofs(self) -> int:
        return self.n_elements * self.element_block

    @property
    def n_face_dofs(self) -> int:
        return self.n_faces * self.face_block

    @property
    def n_dofs(self) -> int:
        return self.n_element_dofs + self.n_face_dofs + self.n_extra

    def element_dofs(self, T: int, field: int = 0) -> np.ndarray:
        start = T * self.element_block + field * self.n_elem_basis
        return np.arange(start, start + self.n_elem_basis)

    def face_dofs(self, F: int, field: int = 0) -> np.ndarray:
        start = self.n_element_dofs + F * self.face_block + field * self.n_face_basis
        return np.arange(start, start + self.n_face_basis)

    def local_dofs(self, T: int, faces, field: int = 0) -> np.ndarray:
        return np.concatenate([self.element_dofs(T, field)] + [self.face_dofs(F, field) for F in faces])

    def field_indices(self, field: int) -> np.ndarray:
        """Positions of one field's single-field DOFs inside this layout."""
        ne = np.arange(self.n_elements)[:, None] * self.element_block + field * self.n_elem_basis + np.arange(self.n_elem_basis)
        nf = (
            self.n_element_dofs
            + np.arange(self.n_faces)[:, None] * self.face_block
            + field * self.n_face_basis
            + np.arange(self.n_face_basis)
        )
        return np.concatenate([ne.ravel(), nf.ravel()])

    def with_fields(self, n_fields: int, n_extra: int = 0) -> "DofMap":
        return DofMap(self.n_elements, self.n_faces, self.n_elem_basis, self.n_face_basis, n_fields, n_extra)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_constraints: int = 0


def assemble_local(mats, dofs, n: int) -> sp.csr_matrix:
    """Sum dense local matrices into an n-by-n CSR matrix.

    Duplicates are summed in the order the local matrices are given, so the
    result does not depend on how the local matrices were computed.
    """
    rows = np.concatenate([np.repeat(d, len(d)) for d in dofs])
    cols = np.concatenate([np.tile(d, len(d)) for d in dofs])
    vals = np.concatenate([np.asarray(m).ravel() for m in mats])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


FORMS = ("a_h", "hybrid_l2", "broken_mass", "stabilization", "broken_stiffness", "s0")


def assemble(space, form: str) -> SparseSystem:
    """Assemble one of the global bilinear forms of a hybrid space."""
    ops = space.local_operators
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
    nT = space.n_elem_basis
    mats = []
    for lo in ops:
        if form == "a_h":
            mats.append(lo.A)
        elif form == "hybrid_l2":
            mats.append(lo.M0)
        elif form == "stabilization":
            mats.append(lo.S)
        elif form == "s0":
            mats.append(lo.S0)
        else:
            m = np.zeros_like(lo.A)
            m[:nT, :nT] = lo.M if form == "broken_mass" else lo.K
            mats.append(m)
    dofs = [lo.dofs for lo in ops]
    for d, m in zip(dofs, mats):
        assert m.shape == (len(d), len(d)), "local matrix does not match its DOF list"
    A = assemble_local(mats, dofs, space.dofmap.n_dofs)
    return SparseSystem(A, np.zeros(A.shape[0]))


def add_constraint(matrix: sp.spmatrix, row: np.ndarray, col: np.ndarray | None = None) -> sp.csr_matrix:
    """Border a square matrix with one constraint row/column (zero corner)."""
    col = row if col is None else col
    n = matrix.shape[0]
    B = sp.bmat([[matrix, sp.csr_matrix(col.reshape(-1, 1))], [sp.csr_matrix(row.reshape(1, -1)), None]], format="csr")
    assert B.shape == (n + 1, n + 1)
    return B


# -------------------------------------------------------- static condensation


@dataclass
class CondensedSystem:
    """Skeleton (face + extra) system left after eliminating element blocks."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    inv_blocks: np.ndarray
    coupling: sp.csr_matrix
    rhs_elements: np.ndarray
    n_element_dofs: int
    inv_matrix: sp.bsr_matrix = field(repr=False, default=None)

    def recover(self, x_skeleton: np.ndarray) -> np.ndarray:
        x_e = self.inv_matrix @ (self.rhs_elements - self.coupling @ x_skeleton)
        return np.concatenate([x_e, x_skeleton])


def static_condense(system: SparseSystem, dofmap: DofMap) -> CondensedSystem:
    A = sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    ne, bs = dofmap.n_element_dofs, dofmap.element_block
    nb = dofmap.n_elements
    AEE = A[:ne, :ne]
    AES = A[:ne, ne:]
    ASE = A[ne:, :ne]
    ASS = A[ne:, ne:]

    coo = AEE.tocoo()
    off = (coo.row // bs != coo.col // bs) & (coo.data != 0)
    if off.any():
        raise SolverError("element unknowns couple across elements; element blocks are not block diagonal")
    blocks = np.zeros((nb, bs, bs))
    np.add.at(blocks, (coo.row // bs, coo.row % bs, coo.col % bs), coo.data)
    inv = np.empty_like(blocks)
    for lo in range(0, nb, 4096):
        chunk = blocks[lo : lo + 4096]
        try:
            inv[lo : lo + 4096] = np.linalg.inv(chunk)
        except np.linalg.LinAlgError:
            for j, blk in enumerate(chunk):
                try:
                    np.linalg.inv(blk)
                except np.linalg.LinAlgError:
                    raise SolverError(f"singular element block for element {lo + j}") from None
            raise
    bad = ~np.isfinite(inv).all(axis=(1, 2))
    if bad.any():
        raise SolverError(f"singular element block for element {int(np.flatnonzero(bad)[0])}")
    Ainv = sp.bsr_matrix((inv, np.arange(nb), np.arange(nb + 1)), shape=(ne, ne))
    S = (ASS - ASE @ (Ainv @ AES)).tocsr()
    S.sum_duplicates()
    S.eliminate_zeros()
    g = b[ne:] - ASE @ (Ainv @ b[:ne])
    return CondensedSystem(S, g, inv, sp.csr_matrix(AES), b[:ne].copy(), ne, Ainv)


# -------------------------------------------------------------------- solves


def _factorize(A: sp.spmatrix, robust: bool = False):
    """Sparse LU; by default with a symmetric fill-reducing ordering and diagonal pivots.

    HHO systems are structurally symmetric, for which the symmetric mode is
    much cheaper; ``robust`` switches to column ordering with partial
    pivoting.
    """
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise SolverError("matrix is not square")
    try:
        if robust:
            lu = spla.splu(A)
        else:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    d = np.abs(lu.U.diagonal())
    if d.size and not (np.isfinite(d).all() and d.min() > 1e-13 * d.max()):
        raise SolverError("factorization failed: matrix is numerically singular")
    return lu


def _refine(A, lu, x, b, steps=3):
    """Iterative refinement; recovers accuracy lost by the unpivoted factorization."""
    r = b - A @ x
    for _ in range(steps):
        dx = lu.solve(r)
        x = x + dx
        r_new = b - A @ x
        if np.linalg.norm(r_new) >= np.linalg.norm(r):
            x = x - dx
            break
        r = r_new
    return x


def solve_sparse(A: sp.spmatrix, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    for robust in (False, True):
        try:
            lu = _factorize(A, robust)
        except SolverError:
            if robust:
                raise
            continue
        x = lu.solve(b)
        if nb > 0:
            x = _refine(A, lu, x, b)
        r = np.linalg.norm(A @ x - b)
        if nb == 0 or r <= rtol * nb:
            return x
    raise SolverError(f"residual {r / nb:.3e} exceeds tolerance {rtol:.1e}")


def solve(system, rtol: float = 1e-10) -> np.ndarray:
    """Direct solve of a SparseSystem, or of a CondensedSystem followed by recovery."""
    if isinstance(system, CondensedSystem):
        xs = solve_sparse(system.matrix, system.rhs, rtol)
        return system.recover(xs)
    return solve_sparse(system.matrix, system.rhs, rtol)


class Factorization:
    """Reusable LU factorization of a fixed matrix."""

    def __init__(self, A: sp.spmatrix):
        self.A = sp.csr_matrix(A)
        try:
            self._lu = _factorize(A)
            b = np.random.default_rng(0).standard_normal(A.shape[0])
            if np.linalg.norm(self.A @ self._lu.solve(b) - b) > 1e-10 * np.linalg.norm(b):
                raise SolverError("inaccurate factorization")
        except SolverError:
            self._lu = _factorize(A, robust=True)

    def __call__(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return _refine(self.A, self._lu, self._lu.solve(b), b)


def write_matrix_market(path, A: sp.spmatrix) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
