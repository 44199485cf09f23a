"""Fully implicit HHO scheme for the mixed Cahn-Hilliard problem.

Each time step solves, for (c, w) in U_h x U_h and a scalar multiplier l,

    (delta_t c_h, phi_h) + a_h(w, phi) + l (1, phi_h) = (f, phi_h)
    (w_h, psi_h) - (Phi'(c_h), psi_h) - gamma^2 a_h(c, psi) = 0
    (c_h, 1) = initial mass

with Newton's method. Element unknowns of both fields are eliminated
element by element at every Newton iteration, so the linear systems only
involve face unknowns and the multiplier.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import SparseSystem, solve, solve_sparse, static_condense, add_constraint
from .hho import HHOSpace

log = logging.getLogger(__name__)

BDF = {
    # leading coefficient, coefficients of c^{n-1}, c^{n-2}, ...
    "BE": (1.0, (1.0,)),
    "BDF2": (1.5, (2.0, -0.5)),
}


class NewtonError(RuntimeError):
    pass


class FreeEnergy:
    """Double-well potential Phi(c) = (1 - c^2)^2 / 4 and its derivatives."""

    @staticmethod
    def phi(c):
        return 0.25 * (1.0 - c**2) ** 2

    @staticmethod
    def dphi(c):
        return c**3 - c

    @staticmethod
    def d2phi(c):
        return 3.0 * c**2 - 1.0


@dataclass
class NewtonOptions:
    atol: float = 1e-10
    rtol: float = 1e-10
    max_iter: int = 25
    max_damping: int = 5
    condense: bool = True


@dataclass
class ProblemConfig:
    gamma: float
    t_final: float
    tau: float
    k: int = 0
    scheme: str = "BE"
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    source: Callable | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.t_final < self.tau * (1 - 1e-12):
            raise ValueError("t_final must be at least tau")
        if self.scheme not in BDF:
            raise ValueError(f"unknown time scheme {self.scheme!r}; expected BE or BDF2")
        if abs(self.n_steps * self.tau - self.t_final) > 1e-9 * self.t_final:
            raise ValueError(f"t_final={self.t_final} is not a multiple of tau={self.tau}")
        if self.tau >= 2 * self.gamma**2:
            warnings.warn(
                f"tau={self.tau:g} >= 2 gamma^2={2 * self.gamma**2:g}: energy decay is not guaranteed",
                stacklevel=2,
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.tau))


# ------------------------------------------------------------ initial data


def ellipse_indicator(x):
    return 81.0 * (x[..., 0] - 0.5) ** 2 + 9.0 * (x[..., 1] - 0.5) ** 2 < 1.0


def cross_indicator(x):
    X, Y = x[..., 0] - 0.5, x[..., 1] - 0.5
    arm1 = 5.0 * (np.abs(Y - 0.4 * X) + np.abs(0.4 * X + Y)) < 1.0
    arm2 = 5.0 * (np.abs(X - 0.4 * Y) + np.abs(0.4 * Y + X)) < 1.0
    return arm1 | arm2


@dataclass
class InitialCondition:
    """Initial order parameter.

    kind "analytic": ``field`` (and optionally ``laplacian``) are callables;
    kind "piecewise": ``field`` is an indicator-based callable;
    kind "random": i.i.d. uniform values on a ``cells`` x ``cells`` partition.
    """

    kind: str
    field: Callable | None = None
    laplacian: Callable | None = None
    cells: int = 32
    low: float = -1.0
    high: float = 1.0
    seed: int = 0
    zero_mean: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("analytic", "piecewise", "random"):
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        if self.kind == "random":
            rng = np.random.default_rng(self.seed)
            self._values = rng.uniform(self.low, self.high, size=(self.cells, self.cells))

    def __call__(self, x):
        if self.kind == "random":
            i = np.clip((x[..., 0] * self.cells).astype(int), 0, self.cells - 1)
            j = np.clip((x[..., 1] * self.cells).astype(int), 0, self.cells - 1)
            return self._values[j, i]
        return self.field(x)

    @classmethod
    def ellipse(cls, zero_mean: bool = False):
        return cls("piecewise", lambda x: np.where(ellipse_indicator(x), 0.95, -0.95), zero_mean=zero_mean, name="ellipse")

    @classmethod
    def cross(cls, zero_mean: bool = False):
        return cls("piecewise", lambda x: np.where(cross_indicator(x), 0.95, -0.95), zero_mean=zero_mean, name="cross")

    @classmethod
    def random_partition(cls, cells: int = 32, seed: int = 0, low: float = -1.0, high: float = 1.0):
        return cls("random", cells=cells, seed=seed, low=low, high=high, zero_mean=True, name="random")

    @classmethod
    def analytic(cls, fn, laplacian=None, name: str = "analytic"):
        return cls("analytic", fn, laplacian, name=name)


def load_vector(space: HHOSpace, fn, degree: int | None = None) -> np.ndarray:
    """Vector of (fn, phi_i) over element basis functions; zero on faces."""
    degree = 2 * (space.k + 1) + 6 if degree is None else degree
    out = np.zeros(space.n_dofs)
    blocks = out[: space.dofmap.n_element_dofs].reshape(-1, space.n_elem_basis)
    for g in space.quad_groups(degree):
        blocks[g.elements] = np.einsum("eqi,eq->ei", g.values, g.weights * fn(g.points))
    return out


def elliptic_projection(space: HHOSpace, laplacian, mean: float = 0.0) -> np.ndarray:
    """c in U_h with a_h(c, phi) = -(laplacian, phi_h) for all phi and (c_h, 1) = mean."""
    rhs = np.concatenate([-load_vector(space, laplacian), [mean]])
    return solve_sparse(add_constraint(space.A, space.mean_vector), rhs)[:-1]


def project_initial(ic: InitialCondition, space: HHOSpace) -> np.ndarray:
    """Discrete initial order parameter.

    Smooth data with a known Laplacian go through the elliptic projection
    (keeping the mass of the datum); other data are interpolated. With
    ``ic.zero_mean`` the global average is removed afterwards.
    """
    if ic.kind == "analytic" and ic.laplacian is not None:
        c0 = elliptic_projection(space, ic.laplacian, space.integrate(ic))
    else:
        c0 = space.interpolate(ic)
    if ic.zero_mean:
        c0 = space.zero_mean(c0)
    return c0


# --------------------------------------------------------------------- state


@dataclass
class SimulationState:
    n: int
    t: float
    c: np.ndarray
    w: np.ndarray
    history: list  # previous order parameters, most recent first
    multiplier: float = 0.0
    dissipation: float = 0.0  # tau * sum ||w||_{a,h}^2 so far
    mass_target: float | None = None


class CahnHilliardSolver:
    def __init__(self, space: HHOSpace, config: ProblemConfig):
        if space.k != config.k:
            raise ValueError(f"space degree {space.k} does not match config k={config.k}")
        self.space = space
        self.config = config
        self.N = space.n_dofs
        self.dofmap = space.dofmap.with_fields(2, n_extra=1)
        self.idx_c = self.dofmap.field_indices(0)
        self.idx_w = self.dofmap.field_indices(1)
        self.perm = np.concatenate([self.idx_c, self.idx_w, [2 * self.N]])
        self.nl_degree = 4 * (space.k + 1)
        self.A = space.A
        self.Mb = space.mass
        self.m = space.mean_vector
        self._groups = space.quad_groups(self.nl_degree)

    # ------------------------------------------------------ nonlinear terms

    def _qp_values(self, c):
        cv = self.space.element_coefficients(c)
        return [np.einsum("eqi,ei->eq", g.values, cv[g.elements]) for g in self._groups]

    def nonlinear_vector(self, c: np.ndarray) -> np.ndarray:
        """(Phi'(c_h), phi_i) for every element basis function."""
        out = np.zeros(self.N)
        blocks = out[: self.space.dofmap.n_element_dofs].reshape(-1, self.space.n_elem_basis)
        for g, cq in zip(self._groups, self._qp_values(c)):
            blocks[g.elements] = np.einsum("eqi,eq->ei", g.values, g.weights * FreeEnergy.dphi(cq))
        return out

    def nonlinear_blocks(self, c: np.ndarray) -> np.ndarray:
        """Element mass matrices weighted by Phi''(c_h), shape (n_elements, nb, nb)."""
        nb = self.space.n_elem_basis
        out = np.zeros((self.space.mesh.n_elements, nb, nb))
        for g, cq in zip(self._groups, self._qp_values(c)):
            out[g.elements] = np.einsum("eqi,eqj,eq->eij", g.values, g.values, g.weights * FreeEnergy.d2phi(cq))
        return out

    def free_energy(self, c: np.ndarray) -> float:
        """(Phi(c_h), 1) with the same quadrature as the nonlinear term."""
        total = 0.0
        for g, cq in zip(self._groups, self._qp_values(c)):
            total += float(np.sum(g.weights * FreeEnergy.phi(cq)))
        return total

    def phase_area(self, c: np.ndarray) -> float:
        """Measure of {c_h > 0}, estimated on the nonlinear quadrature nodes."""
        return float(sum(np.sum(g.weights * (cq > 0)) for g, cq in zip(self._groups, self._qp_values(c))))

    def source_vector(self, t: float) -> np.ndarray:
        if self.config.source is None:
            return np.zeros(self.N)
        return load_vector(self.space, lambda x: self.config.source(x, t), 4 * (self.space.k + 1) + 4)

    # ------------------------------------------------------ residual/Jacobian

    def _time_coefficients(self, history):
        scheme = self.config.scheme
        if scheme == "BDF2" and len(history) < 2:
            scheme = "BE"
        a0, coefs = BDF[scheme]
        return a0, coefs

    def split(self, x: np.ndarray):
        """Interleaved two-field vector -> (c, w, multiplier)."""
        return x[self.idx_c], x[self.idx_w], float(x[-1])

    def join(self, c, w, lam) -> np.ndarray:
        x = np.zeros(2 * self.N + 1)
        x[self.idx_c] = c
        x[self.idx_w] = w
        x[-1] = lam
        return x

    def residual(self, x: np.ndarray, history, t: float, mass0: float, f=None) -> np.ndarray:
        """Two-field residual in the interleaved layout (multiplier row last)."""
        c, w, lam = self.split(x)
        tau, gamma2 = self.config.tau, self.config.gamma**2
        a0, coefs = self._time_coefficients(history)
        dc = a0 * c - sum(a * h for a, h in zip(coefs, history))
        f = self.source_vector(t) if f is None else f
        r1 = self.Mb @ dc / tau + self.A @ w + lam * self.m - f
        r2 = self.Mb @ w - self.nonlinear_vector(c) - gamma2 * (self.A @ c)
        r3 = self.m @ c - mass0
        return self.join(r1, r2, r3)

    def jacobian(self, x: np.ndarray, history) -> sp.csr_matrix:
        c, _, _ = self.split(x)
        tau, gamma2 = self.config.tau, self.config.gamma**2
        a0, _ = self._time_coefficients(history)
        ne = self.space.dofmap.n_element_dofs
        nT = self.space.mesh.n_elements
        blocks = self.nonlinear_blocks(c)
        Mphi = sp.bsr_matrix((blocks, np.arange(nT), np.arange(nT + 1)), shape=(ne, ne))
        Mphi = sp.block_diag([Mphi, sp.csr_matrix((self.N - ne, self.N - ne))], format="csr")
        mcol = sp.csr_matrix(self.m.reshape(-1, 1))
        J = sp.bmat(
            [
                [a0 / tau * self.Mb, self.A, mcol],
                [-Mphi - gamma2 * self.A, self.Mb, None],
                [mcol.T, None, None],
            ],
            format="coo",
        )
        J = sp.coo_matrix((J.data, (self.perm[J.row], self.perm[J.col])), shape=J.shape).tocsr()
        J.sum_duplicates()
        return J

    def linear_solve(self, J: sp.csr_matrix, rhs: np.ndarray, condense: bool | None = None) -> np.ndarray:
        condense = self.config.newton.condense if condense is None else condense
        system = SparseSystem(J, rhs, n_constraints=1)
        if condense:
            return solve(static_condense(system, self.dofmap))
        return solve(system)

    # ---------------------------------------------------------------- Newton

    def newton(self, x0: np.ndarray, history, t: float, mass0: float):
        opts = self.config.newton
        f = self.source_vector(t)
        x = x0.copy()
        R = self.residual(x, history, t, mass0, f)
        r0 = rn = float(np.linalg.norm(R))
        for it in range(opts.max_iter + 1):
            if rn <= opts.atol or (it > 0 and rn <= opts.rtol * r0):
                return x, it, rn
            if it == opts.max_iter:
                break
            dx = self.linear_solve(self.jacobian(x, history), -R)
            step = 1.0
            for d in range(opts.max_damping + 1):
                x_try = x + step * dx
                R_try = self.residual(x_try, history, t, mass0, f)
                r_try = float(np.linalg.norm(R_try))
                if r_try < rn or d == opts.max_damping:
                    break
                step *= 0.5
            x, R, rn = x_try, R_try, r_try
        raise NewtonError(
            f"Newton did not converge at t={t:g} after {opts.max_iter} iterations "
            f"(residual {rn:.3e}); try a smaller time step"
        )

    # ------------------------------------------------------------ time march

    def initial_state(self, c0: np.ndarray, laplacian_c0=None) -> SimulationState:
        """State at t = 0; w^0 is the projection of Phi'(c_h^0) - gamma^2 lap(c_0) when available."""
        space = self.space
        rhs = self.nonlinear_vector(c0)
        if laplacian_c0 is not None:
            rhs -= self.config.gamma**2 * load_vector(space, laplacian_c0)
        w0 = np.zeros(self.N)
        nb = space.n_elem_basis
        ne = space.dofmap.n_element_dofs
        Mblocks = np.stack([lo.M for lo in space.local_operators])
        w0[:ne] = np.linalg.solve(Mblocks, rhs[:ne].reshape(-1, nb)[..., None])[..., 0].ravel()
        w0 = space.faces_from_elements(w0)
        return SimulationState(0, 0.0, c0.copy(), w0, [], mass_target=float(self.m @ c0))

    def advance(self, state: SimulationState) -> tuple:
        """One time step; returns (new state, monitor record)."""
        cfg = self.config
        t = (state.n + 1) * cfg.tau
        history = [state.c] + state.history
        history = history[: len(BDF[cfg.scheme][1])]
        mass0 = float(self.m @ state.c) if state.mass_target is None else state.mass_target
        x0 = self.join(state.c, state.w, state.multiplier)
        x, iters, res = self.newton(x0, history, t, mass0)
        c, w, lam = self.split(x)
        new = SimulationState(
            state.n + 1, t, c, w, history, lam, state.dissipation + cfg.tau * self.space.norm_ah(w) ** 2, mass0
        )
        return new, self.monitor(new, iters, res)

    def monitor(self, state: SimulationState, iters: int = 0, residual: float = 0.0) -> dict:
        g2 = self.config.gamma**2
        ca = self.space.norm_ah(state.c)
        fe = self.free_energy(state.c)
        return {
            "step": state.n,
            "time": state.t,
            "mass": float(self.m @ state.c),
            "energy": 0.5 * g2 * ca**2 + fe,
            "lyapunov": g2 * ca**2 + 2.0 * fe,
            "dissipation": state.dissipation,
            "sup_c": self.space.sup_norm(state.c),
            "phase_area": self.phase_area(state.c),
            "newton_iterations": iters,
            "residual": residual,
        }


@dataclass
class SimulationResult:
    monitors: list
    final: SimulationState
    snapshots: dict


def run_simulation(
    space: HHOSpace,
    config: ProblemConfig,
    ic: InitialCondition,
    snapshot_times=(),
    on_snapshot=None,
    keep_snapshots: bool = False,
) -> SimulationResult:
    """March from t = 0 to t_final, recording monitors at every step.

    ``on_snapshot(state)`` is called at the steps closest to each requested
    snapshot time (including t = 0 if requested).
    """
    solver = CahnHilliardSolver(space, config)
    c0 = project_initial(ic, space)
    state = solver.initial_state(c0, ic.laplacian if ic.kind == "analytic" else None)
    snap_steps = {int(round(t / config.tau)) for t in snapshot_times if t <= config.t_final * (1 + 1e-12)}
    snapshots = {}

    def record(st):
        if st.n in snap_steps:
            if on_snapshot is not None:
                on_snapshot(st)
            if keep_snapshots:
                snapshots[st.n] = (st.c.copy(), st.w.copy())

    monitors = [solver.monitor(state)]
    record(state)
    for _ in range(config.n_steps):
        state, rec = solver.advance(state)
        monitors.append(rec)
        log.debug("step %d t=%.4g newton=%d res=%.2e", rec["step"], rec["time"], rec["newton_iterations"], rec["residual"])
        record(state)
    return SimulationResult(monitors, state, snapshots)
