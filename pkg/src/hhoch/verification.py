"""Error norms, convergence tables and the discrete functional-analysis checks."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cahn_hilliard import InitialCondition, ProblemConfig, run_simulation
from .exact import PI, ManufacturedSolution, cosine_mode
from .hho import HHOSpace
from .inequalities import inequality_suite

ERROR_NAMES = ("energy_c", "energy_w", "l2_c", "l2_w")


class InsufficientLevelsError(ValueError):
    pass


@dataclass
class ErrorReport:
    h: float
    tau: float
    k: int
    energy_c: float
    energy_w: float
    l2_c: float
    l2_w: float

    def errors(self) -> dict:
        return {name: getattr(self, name) for name in ERROR_NAMES}


def compute_errors(space: HHOSpace, c: np.ndarray, w: np.ndarray, c_exact, w_exact, tau: float = 0.0) -> ErrorReport:
    """Energy errors against I_h and broken L2 errors against pi^{k+1}.

    ``c_exact`` and ``w_exact`` are callables of an (..., 2) point array.
    """
    dc = c - space.interpolate(c_exact)
    dw = w - space.interpolate(w_exact)
    ec = c - space.project_elements(c_exact)
    ew = w - space.project_elements(w_exact)
    return ErrorReport(
        space.mesh.h, tau, space.k, space.norm_ah(dc), space.norm_ah(dw), space.l2_norm(ec), space.l2_norm(ew)
    )


def eoc_slope(h, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(h) < 3:
        raise InsufficientLevelsError(f"a convergence rate needs at least 3 levels, got {len(h)}")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and mesh sizes must be positive to compute a rate")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass
class EOCTable:
    name: str
    h: list
    errors: list
    slope: float = field(init=False)

    def __post_init__(self):
        self.slope = eoc_slope(self.h, self.errors)

    def pairwise(self) -> list:
        return [
            math.log(self.errors[i + 1] / self.errors[i]) / math.log(self.h[i + 1] / self.h[i])
            for i in range(len(self.h) - 1)
        ]


@dataclass
class ConvergenceReport:
    case: str
    k: int
    family: str
    levels: list  # ErrorReport per level
    tables: dict  # name -> EOCTable

    @property
    def slopes(self) -> dict:
        return {name: t.slope for name, t in self.tables.items()}

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "k": self.k,
            "family": self.family,
            "levels": [asdict(r) for r in self.levels],
            "slopes": self.slopes,
            "properties": [],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["h", *ERROR_NAMES])
            for r in self.levels:
                writer.writerow([r.h, *(getattr(r, n) for n in ERROR_NAMES)])

    def format_table(self) -> str:
        lines = [f"{'h':>10} " + " ".join(f"{n:>12}" for n in ERROR_NAMES)]
        for r in self.levels:
            lines.append(f"{r.h:10.4e} " + " ".join(f"{getattr(r, n):12.4e}" for n in ERROR_NAMES))
        lines.append(f"{'slope':>10} " + " ".join(f"{self.tables[n].slope:12.3f}" for n in ERROR_NAMES))
        return "\n".join(lines)


def manufactured_run(mesh, k: int, exact: ManufacturedSolution, t_final: float, tau: float, scheme: str = "BE", workers: int = 1, space=None):
    """Run the manufactured problem on one mesh; returns (space, final state)."""
    space = HHOSpace(mesh, k, workers=workers) if space is None else space
    cfg = ProblemConfig(gamma=exact.gamma, t_final=t_final, tau=tau, k=k, scheme=scheme, source=exact.source)
    ic = InitialCondition.analytic(lambda x: exact.c(x, 0.0), lambda x: exact.laplacian_c(x, 0.0), name="manufactured")
    result = run_simulation(space, cfg, ic)
    return space, result.final


def convergence_study(
    family,
    k: int,
    exact: ManufacturedSolution | None = None,
    t_final: float = 1.0,
    tau: float = 0.1,
    scheme: str = "BE",
    family_name: str = "",
    workers: int = 1,
) -> ConvergenceReport:
    """Errors at t_final on every mesh of ``family`` and their least-squares rates."""
    family = list(family)
    if len(family) < 3:
        raise InsufficientLevelsError(f"a convergence study needs at least 3 levels, got {len(family)}")
    exact = ManufacturedSolution() if exact is None else exact
    levels = []
    for mesh in family:
        space, state = manufactured_run(mesh, k, exact, t_final, tau, scheme, workers)
        c_ex, w_ex = exact.at(state.t)
        levels.append(compute_errors(space, state.c, state.w, c_ex, w_ex, tau))
    h = [r.h for r in levels]
    tables = {n: EOCTable(n, h, [getattr(r, n) for r in levels]) for n in ERROR_NAMES}
    return ConvergenceReport("manufactured", k, family_name, levels, tables)


def temporal_study(mesh, k: int, exact: ManufacturedSolution, t_final: float, taus, scheme: str) -> dict:
    """Time-refinement on a fixed mesh.

    Errors are the differences between solutions at successive step sizes,
    which cancel the (fixed) spatial error; they decay like tau^order.
    """
    taus = list(taus)
    space = HHOSpace(mesh, k)
    finals = [manufactured_run(mesh, k, exact, t_final, tau, scheme, space=space)[1] for tau in taus]
    diffs = [space.norm_ah(a.c - b.c) + space.l2_norm(a.c - b.c) for a, b in zip(finals[:-1], finals[1:])]
    return {"tau": taus[:-1], "differences": diffs, "slope": eoc_slope(taus[:-1], diffs)}


# ------------------------------------------------------------ property suite


def smooth_test_field(seed: int, modes: int = 3):
    """Fixed-seed random combination of Neumann cosine modes (zero mean on the unit square)."""
    rng = np.random.default_rng(seed)
    coef = rng.uniform(-1.0, 1.0, size=(modes + 1, modes + 1))
    coef[0, 0] = 0.0

    def fn(x):
        out = np.zeros(x.shape[:-1])
        for m in range(modes + 1):
            cx = np.cos(m * PI * x[..., 0])
            for n in range(modes + 1):
                if coef[m, n]:
                    out += coef[m, n] * cx * np.cos(n * PI * x[..., 1])
        return out

    return fn


def random_hybrid(space: HHOSpace, rng: np.random.Generator) -> np.ndarray:
    return space.zero_mean(rng.uniform(-1.0, 1.0, size=space.n_dofs))


def _div(a: float, b: float) -> float:
    return a / b if b > 0 and np.isfinite(a) else float("inf")


def _ratios(space: HHOSpace, v: np.ndarray) -> dict:
    n1 = space.norm_1h(v)
    Lv = space.norm_0h(space.discrete_laplacian(v))
    out = {}
    for r in (2, 4, 6):
        out[f"friedrichs_{r}"] = _div(space.lp_norm(v, r), n1)
    out["agmon"] = _div(space.sup_norm(v), math.sqrt(n1 * Lv))
    for p in (3, 4):
        alpha = 0.5 + (0.5 - 1.0 / p)
        out[f"gnp_{p}"] = _div(space.grad_lp_norm(v, p), n1 ** (1 - alpha) * Lv**alpha)
    out["laplacian_bound"] = _div(Lv, space.mesh.h**-1 * n1)
    out["norm_equivalence"] = _div(n1, space.norm_ah(v))
    return out


def _safe_slope(h, errors) -> float:
    try:
        return eoc_slope(h, errors)
    except ValueError:
        return float("nan")


def _bounded(seq, tol) -> bool:
    if not all(np.isfinite(seq)):
        return False
    return len(seq) < 2 or seq[-1] <= (1.0 + tol) * seq[-2]


def property_suite(
    family,
    k: int,
    seed: int = 0,
    n_random: int = 3,
    n_identity: int = 5,
    growth_tol: float = 0.10,
    identity_tol: float = 1e-9,
    green_rate: float = 2.0,
    family_name: str = "",
    stab_sign: float = 1.0,
    workers: int = 1,
    inequalities: bool = True,
) -> dict:
    """Measured ratios of the discrete inequalities plus exact identities, level by level.

    Ratios are maxima over a smooth random field and ``n_random`` random
    hybrid vectors (all zero-mean). A ratio passes when it does not grow by
    more than ``growth_tol`` between the last two levels.
    """
    family = list(family)
    if not family:
        raise ValueError("empty mesh family")
    rng = np.random.default_rng(seed)
    field_fn = smooth_test_field(seed)
    per_level = []
    green_err, green_energy = [], []
    for mesh in family:
        space = HHOSpace(mesh, k, workers=workers, stab_sign=stab_sign)
        vectors = [space.zero_mean(space.interpolate(field_fn))] + [random_hybrid(space, rng) for _ in range(n_random)]
        ratios: dict = {}
        for v in vectors:
            for name, val in _ratios(space, v).items():
                ratios[name] = max(ratios.get(name, 0.0), val)
        # exact identities
        ident = 0.0
        for _ in range(n_identity):
            v = random_hybrid(space, rng)
            ident = max(ident, space.norm_0h(v + space.discrete_green(space.discrete_laplacian(v))) / space.norm_0h(v))
        one = space.constant()
        kernel = float(np.abs(space.A @ one).max() / abs(space.A).sum(axis=1).max())
        coercive = min(v @ (space.A @ v) for v in vectors[1:]) if n_random else 1.0
        # green operator on a Laplace eigenfunction
        phi = space.zero_mean(space.interpolate(cosine_mode))
        g = space.discrete_green(phi)
        target = lambda x: cosine_mode(x) / (2 * PI**2)
        green_err.append(space.l2_norm(g - space.project_elements(target)))
        green_energy.append(space.norm_ah(g - space.interpolate(target)))
        per_level.append(
            {
                "h": mesh.h,
                "n_elements": mesh.n_elements,
                **ratios,
                "identity": ident,
                "kernel": kernel,
                "coercivity_min": float(coercive),
                "green_l2_error": green_err[-1],
                "green_energy_error": green_energy[-1],
            }
        )

    props = []
    ratio_names = [n for n in per_level[0] if n.startswith(("friedrichs", "agmon", "gnp", "laplacian", "norm_eq"))]
    for name in ratio_names:
        seq = [lv[name] for lv in per_level]
        props.append({"name": name, "per_level": seq, "verdict": "pass" if _bounded(seq, growth_tol) else "fail"})
    ident = [lv["identity"] for lv in per_level]
    props.append({"name": "green_laplacian_identity", "per_level": ident, "verdict": "pass" if max(ident) <= identity_tol else "fail"})
    kern = [lv["kernel"] for lv in per_level]
    coer = [lv["coercivity_min"] for lv in per_level]
    props.append({"name": "kernel_constants", "per_level": kern, "verdict": "pass" if max(kern) <= 1e-10 else "fail"})
    props.append({"name": "coercivity", "per_level": coer, "verdict": "pass" if min(coer) > 0 else "fail"})
    slopes = {}
    if len(family) >= 3:
        h = [lv["h"] for lv in per_level]
        slopes = {"green_l2": _safe_slope(h, green_err), "green_energy": _safe_slope(h, green_energy)}
        props.append(
            {
                "name": "green_approximation",
                "per_level": green_err,
                "slope": slopes["green_l2"],
                "verdict": "pass" if slopes["green_l2"] >= green_rate else "fail",
            }
        )
    report = {
        "case": "property_suite",
        "k": k,
        "family": family_name,
        "seed": seed,
        "levels": per_level,
        "slopes": slopes,
        "properties": props,
    }
    if inequalities:
        ineq = inequality_suite(family, k + 1, seed=seed, growth_tol=growth_tol)
        for name, ok in ineq["bounded"].items():
            props.append(
                {
                    "name": f"inequality_{name}",
                    "per_level": [lv[name] for lv in ineq["levels"]],
                    "verdict": "pass" if ok else "fail",
                }
            )
    report["passed"] = all(p["verdict"] == "pass" for p in props)
    return report


def failed_checks(report: dict) -> list:
    return [p["name"] for p in report["properties"] if p["verdict"] != "pass"]
