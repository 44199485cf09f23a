"""Measured constants of trace, inverse and Lebesgue-embedding inequalities.

The same fixed-seed set of random coefficient vectors (in the orthonormal
element basis) is used on every element, so on families of similar elements
the measured ratios coincide across levels, and any growth points to a real
dependence on the mesh.
"""

from __future__ import annotations

import json

import numpy as np

from .basis import dim_element, element_basis
from .mesh import PolyMesh, subtriangulate
from .quadrature import polygon_rule, segment_rule

LEBESGUE_PAIRS = ((2.0, 4.0), (2.0, np.inf), (4.0, 2.0))


def _lp(vals, weights, p):
    if np.isinf(p):
        return np.abs(vals).max(axis=0)
    return (weights @ np.abs(vals) ** p) ** (1.0 / p)


def _pair_name(p, q):
    fmt = lambda r: "inf" if np.isinf(r) else f"{r:g}"
    return f"{fmt(p)}_{fmt(q)}"


def measure_level(mesh: PolyMesh, l: int, samples: np.ndarray) -> dict:
    """Largest ratios over elements/faces and sample polynomials on one mesh.

    ``samples`` has shape (dim P^l, n_samples).
    """
    sub = subtriangulate(mesh)
    d = 2
    h = mesh.h
    out = {"h": h, "n_elements": mesh.n_elements, "trace": 0.0, "inverse": 0.0}
    for p, q in LEBESGUE_PAIRS:
        out[f"lebesgue_{_pair_name(p, q)}"] = 0.0
    out["global_inverse_2_inf"] = 0.0
    out["global_inverse_2_4"] = 0.0
    deg = max(2 * l, 1)
    for T in range(mesh.n_elements):
        tris = sub.of(T)
        basis = element_basis(tris, mesh.centroids[T], mesh.diameters[T], l)
        quad = polygon_rule(tris, 4 * l + 2)
        V = basis.values(quad.points) @ samples
        # sup sampled on a richer node set plus the vertices
        dense = polygon_rule(tris, deg + 8)
        pts = np.vstack([dense.points, mesh.vertices[mesh.elements[T]]])
        Vsup = basis.values(pts) @ samples
        G = np.einsum("qia,is->qsa", basis.gradients(quad.points), samples)
        l2 = _lp(V, quad.weights, 2.0)
        hT = mesh.diameters[T]
        grad = np.sqrt(quad.weights @ (G**2).sum(-1))
        out["inverse"] = max(out["inverse"], float(np.max(grad / (l2 / hT))))
        norms = {2.0: l2, 4.0: _lp(V, quad.weights, 4.0), np.inf: np.abs(Vsup).max(axis=0)}
        for p, q in LEBESGUE_PAIRS:
            r = norms[q] / (hT ** (d / q - d / p) * norms[p])
            key = f"lebesgue_{_pair_name(p, q)}"
            out[key] = max(out[key], float(r.max()))
        # a broken polynomial supported on T alone, measured against the global h
        out["global_inverse_2_inf"] = max(out["global_inverse_2_inf"], float((norms[np.inf] / (h**-1.0 * l2)).max()))
        out["global_inverse_2_4"] = max(out["global_inverse_2_4"], float((norms[4.0] / (h**-0.5 * l2)).max()))
        for F in mesh.element_faces[T]:
            a, b = mesh.faces[F]
            fq = segment_rule(mesh.vertices[a], mesh.vertices[b], 2 * l)
            Vf = basis.values(fq.points) @ samples
            hF = mesh.face_lengths[F]
            r = _lp(Vf, fq.weights, 2.0) / (hF**-0.5 * l2)
            out["trace"] = max(out["trace"], float(r.max()))
    return out


def inequality_suite(family, l: int, seed: int = 0, n_samples: int = 16, growth_tol: float = 0.10) -> dict:
    """Measure the constants on every mesh of ``family`` for degree-``l`` polynomials.

    A ratio is declared bounded when it does not grow by more than
    ``growth_tol`` between the last two levels.
    """
    family = list(family)
    if not family:
        raise ValueError("empty mesh family")
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-1.0, 1.0, size=(dim_element(l), n_samples))
    levels = [measure_level(m, l, samples) for m in family]
    names = [k for k in levels[0] if k not in ("h", "n_elements")]
    verdicts = {}
    for name in names:
        seq = [lv[name] for lv in levels]
        ok = all(np.isfinite(seq))
        if len(seq) >= 2 and seq[-2] > 0:
            ok = ok and seq[-1] <= (1.0 + growth_tol) * seq[-2]
        verdicts[name] = bool(ok)
    return {"degree": l, "seed": seed, "levels": levels, "bounded": verdicts}


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
