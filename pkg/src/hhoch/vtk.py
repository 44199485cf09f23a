"""Legacy ASCII VTK snapshots of hybrid fields.

Each sub-triangle gets its own three points, so point data sampled at the
triangle corners show the discontinuous element fields as piecewise-linear
surfaces.
"""

from __future__ import annotations

import numpy as np

from .hho import HHOSpace


def _sample(space: HHOSpace, v: np.ndarray):
    """Corner values per sub-triangle and element means."""
    cv = space.element_coefficients(v)
    corners = []
    for T in range(space.mesh.n_elements):
        tris = np.asarray(space.sub.of(T)).reshape(-1, 2)
        corners.append(space.ebases[T].values(tris) @ cv[T])
    means = cv[:, 0] * np.array([b.values(space.mesh.centroids[T])[0, 0] for T, b in enumerate(space.ebases)])
    return np.concatenate(corners), means


def write_vtk(path, space: HHOSpace, fields: dict, time: float | None = None, title: str = "hho snapshot") -> None:
    """Write ``fields`` (name -> hybrid vector) on the sub-triangulation.

    Point data hold the element fields at triangle corners; cell data hold
    the element means and the parent element id.
    """
    sub = space.sub
    pts = np.concatenate([np.asarray(sub.of(T)).reshape(-1, 2) for T in range(space.mesh.n_elements)])
    n_tri = len(pts) // 3
    parents = np.repeat(np.arange(space.mesh.n_elements), [len(sub.of(T)) for T in range(space.mesh.n_elements)])
    sampled = {name: _sample(space, v) for name, v in fields.items()}
    header = title if time is None else f"{title} t={time:.10g}"
    lines = ["# vtk DataFile Version 3.0", header.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(pts)} double")
    lines.extend(f"{x:.16g} {y:.16g} 0" for x, y in pts)
    lines.append(f"CELLS {n_tri} {4 * n_tri}")
    lines.extend(f"3 {3 * i} {3 * i + 1} {3 * i + 2}" for i in range(n_tri))
    lines.append(f"CELL_TYPES {n_tri}")
    lines.extend("5" for _ in range(n_tri))
    lines.append(f"POINT_DATA {len(pts)}")
    for name, (corner, _) in sampled.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines.extend(f"{val:.16g}" for val in corner)
    lines.append(f"CELL_DATA {n_tri}")
    for name, (_, means) in sampled.items():
        lines += [f"SCALARS {name}_mean double 1", "LOOKUP_TABLE default"]
        lines.extend(f"{val:.16g}" for val in means[parents])
    lines += ["SCALARS element_id int 1", "LOOKUP_TABLE default"]
    lines.extend(str(p) for p in parents)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_scalars(path) -> dict:
    """Minimal reader for the files written above (used to check round trips)."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    out, i = {}, 0
    section = None
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("POINT_DATA") or line.startswith("CELL_DATA"):
            section = int(line.split()[1])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            out[name] = np.array([float(t) for t in tokens[i + 2 : i + 2 + section]])
            i += 1 + section
        i += 1
    return out
