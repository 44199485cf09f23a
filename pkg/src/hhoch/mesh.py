"""Polygonal meshes: topology, generators, file I/O and quality metrics.

Elements are stored as counter-clockwise vertex loops. Faces are the
edges of these loops, numbered uniquely; a face is owned by the element of
smallest index touching it, and the stored face normal points out of that
element.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for malformed mesh files or inconsistent topology."""


@dataclass(frozen=True, eq=False)
class PolyMesh:
    vertices: np.ndarray
    elements: tuple
    faces: np.ndarray
    face_elements: tuple
    element_faces: tuple
    element_face_signs: tuple
    areas: np.ndarray
    centroids: np.ndarray
    diameters: np.ndarray
    face_lengths: np.ndarray
    face_midpoints: np.ndarray
    face_normals: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.array([F for F, Ts in enumerate(self.face_elements) if len(Ts) == 1], dtype=int)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.array([F for F, Ts in enumerate(self.face_elements) if len(Ts) == 2], dtype=int)

    @property
    def domain_area(self) -> float:
        return float(self.areas.sum())

    def outward_normal(self, T: int, i: int) -> np.ndarray:
        """Unit normal of the i-th face of element T, pointing out of T."""
        F = self.element_faces[T][i]
        return self.element_face_signs[T][i] * self.face_normals[F]

    def face_diameters(self) -> np.ndarray:
        return self.face_lengths

    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "elements": [loop.tolist() for loop in self.elements],
        }


def signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def polygon_diameter(pts: np.ndarray) -> float:
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def build_mesh(vertices, elements, provenance: dict | None = None) -> PolyMesh:
    """Derive faces, incidences and geometry from vertex loops.

    Loops may be given clockwise, as long as all of them are; mixed
    orientations are reported as inverted elements.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    loops = []
    for T, loop in enumerate(elements):
        loop = np.asarray(loop, dtype=int)
        if loop.ndim != 1 or len(loop) < 3:
            raise MeshError(f"element {T}: needs at least 3 vertices")
        if loop.min() < 0 or loop.max() >= len(vertices):
            raise MeshError(f"element {T}: vertex index out of range")
        if len(set(loop.tolist())) != len(loop):
            raise MeshError(f"element {T}: repeated vertex in loop")
        loops.append(loop)
    if not loops:
        raise MeshError("mesh has no elements")

    sa = np.array([signed_area(vertices[loop]) for loop in loops])
    if np.any(np.abs(sa) <= 1e-14 * max(1.0, np.abs(sa).max())):
        T = int(np.argmin(np.abs(sa)))
        raise MeshError(f"element {T}: degenerate (zero area)")
    if np.all(sa < 0):
        loops = [loop[::-1].copy() for loop in loops]
        sa = -sa
    elif np.any(sa < 0):
        T = int(np.flatnonzero(sa < 0)[0])
        raise MeshError(f"element {T}: inverted (orientation differs from the rest of the mesh)")

    face_index: dict = {}
    faces = []
    face_elements: list = []
    face_dirs: list = []
    element_faces = []
    for T, loop in enumerate(loops):
        flist = []
        for a, b in zip(loop, np.roll(loop, -1)):
            key = (min(a, b), max(a, b))
            F = face_index.get(key)
            if F is None:
                F = len(faces)
                face_index[key] = F
                faces.append((int(a), int(b)))
                face_elements.append([T])
                face_dirs.append([(int(a), int(b))])
            else:
                if len(face_elements[F]) >= 2:
                    raise MeshError(f"face {F} (vertices {key}): shared by more than two elements")
                if face_dirs[F][0] == (int(a), int(b)):
                    raise MeshError(f"element {T}: inverted across face {F} (same traversal direction as neighbour)")
                face_elements[F].append(T)
                face_dirs[F].append((int(a), int(b)))
            flist.append(F)
        element_faces.append(np.array(flist, dtype=int))

    faces_arr = np.array(faces, dtype=int)
    p0, p1 = vertices[faces_arr[:, 0]], vertices[faces_arr[:, 1]]
    tang = p1 - p0
    lengths = np.sqrt((tang**2).sum(1))
    # faces are stored with the orientation of their owner, so (dy, -dx) is outward for it
    normals = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / lengths[:, None]
    signs = []
    for T, flist in enumerate(element_faces):
        signs.append(np.array([1.0 if face_elements[F][0] == T else -1.0 for F in flist]))

    return PolyMesh(
        vertices=vertices,
        elements=tuple(loops),
        faces=faces_arr,
        face_elements=tuple(tuple(Ts) for Ts in face_elements),
        element_faces=tuple(element_faces),
        element_face_signs=tuple(signs),
        areas=sa,
        centroids=np.array([polygon_centroid(vertices[loop]) for loop in loops]),
        diameters=np.array([polygon_diameter(vertices[loop]) for loop in loops]),
        face_lengths=lengths,
        face_midpoints=0.5 * (p0 + p1),
        face_normals=normals,
        provenance=dict(provenance or {}),
    )


# ---------------------------------------------------------------- generators


def generate_cartesian(nx: int, ny: int, domain=((0.0, 1.0), (0.0, 1.0))) -> PolyMesh:
    """Uniform nx-by-ny grid of rectangles on an axis-aligned box."""
    if nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive, got ({nx}, {ny})")
    (x0, x1), (y0, y1) = domain
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (nx + 1) + i

    elems = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)] for j in range(ny) for i in range(nx)]
    return build_mesh(verts, elems, {"generator": "cartesian", "nx": nx, "ny": ny, "domain": [list(domain[0]), list(domain[1])]})


def generate_triangular(n: int) -> PolyMesh:
    """Criss-cross triangulation of the unit square with n cells per side.

    Each square cell is cut along a diagonal whose direction alternates in a
    checkerboard, which avoids a preferred direction.
    """
    if n < 1:
        raise MeshError("n must be positive")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (n + 1) + i

    elems = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                elems += [[a, b, c], [a, c, d]]
            else:
                elems += [[a, b, d], [b, c, d]]
    return build_mesh(verts, elems, {"generator": "triangular", "n": n})


def generate_hexagonal(n: int, amplitude: float = 0.2) -> PolyMesh:
    """Predominantly hexagonal mesh of the unit square.

    Built from n rows of staggered bricks whose horizontal interfaces are
    zigzag lines; interior bricks become convex hexagons, the staggered rows
    end with quadrilaterals and the first/last rows touch the flat boundary
    with a straight-angle vertex.
    """
    if n < 1:
        raise MeshError("n must be positive")
    h = 1.0 / n
    nxv = 2 * n + 1
    verts = np.zeros(((n + 1) * nxv, 2))
    for j in range(n + 1):
        for i in range(nxv):
            y = j * h
            if 0 < j < n:
                y += amplitude * h * (1.0 if (i + j) % 2 == 0 else -1.0)
            verts[j * nxv + i] = (i * h / 2.0, y)

    def vid(i, j):
        return j * nxv + i

    elems = []
    for j in range(n):
        if j % 2 == 0:
            spans = [(2 * a, 2 * a + 2) for a in range(n)]
        else:
            spans = [(0, 1)] + [(2 * a - 1, 2 * a + 1) for a in range(1, n)] + [(2 * n - 1, 2 * n)]
        for i0, i1 in spans:
            bottom = [vid(i, j) for i in range(i0, i1 + 1)]
            top = [vid(i, j + 1) for i in range(i1, i0 - 1, -1)]
            elems.append(bottom + top)
    return build_mesh(verts, elems, {"generator": "hexagonal", "n": n, "amplitude": amplitude})


def generate_family(kind: str, levels) -> list:
    gens = {
        "cartesian": lambda n: generate_cartesian(n, n),
        "triangular": generate_triangular,
        "hexagonal": generate_hexagonal,
    }
    if kind not in gens:
        raise MeshError(f"unknown mesh family {kind!r}")
    return [gens[kind](int(n)) for n in levels]


# ----------------------------------------------------------------------- I/O

# FVCA5 text grammar accepted by read_fvca5 (blank lines ignored):
#   <section name>            a line made of letters/spaces, e.g. "vertices"
#   <count>                   one integer
#   <count> records           whitespace separated numbers
# Sections:
#   vertices                  records "x y"
#   triangles|quadrangles|pentagons|hexagons
#                             records with 3|4|5|6 one-based vertex indices
#   cells|polygons            records "nv v1 ... vnv" (one-based)
# Any other section (e.g. "edges of the boundary", "all edges") is skipped
# using its count; its records may have any arity.

_FIXED_ARITY = {"triangles": 3, "quadrangles": 4, "pentagons": 5, "hexagons": 6}


def _is_header(line: str) -> bool:
    return any(ch.isalpha() for ch in line) and not _is_number_line(line)


def _is_number_line(line: str) -> bool:
    try:
        [float(t) for t in line.split()]
        return bool(line.split())
    except ValueError:
        return False


def read_fvca5(path) -> PolyMesh:
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    verts = None
    elems: list = []
    i = 0
    while i < len(lines):
        name = lines[i].lower()
        if not _is_header(lines[i]):
            raise MeshError(f"{path}:{i + 1}: expected a section name, got {lines[i]!r}")
        if i + 1 >= len(lines):
            raise MeshError(f"{path}: section {name!r} has no count")
        try:
            count = int(lines[i + 1].split()[0])
        except ValueError as exc:
            raise MeshError(f"{path}: bad count for section {name!r}") from exc
        records = lines[i + 2 : i + 2 + count]
        if len(records) != count or any(not _is_number_line(r) for r in records):
            raise MeshError(f"{path}: section {name!r} declares {count} records but they are missing or malformed")
        i += 2 + count
        if name == "vertices":
            try:
                verts = np.array([[float(t) for t in r.split()[:2]] for r in records])
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}: malformed vertex record") from exc
            if verts.shape != (count, 2) and count:
                raise MeshError(f"{path}: malformed vertex record")
        elif name in _FIXED_ARITY:
            m = _FIXED_ARITY[name]
            for r in records:
                idx = [int(t) for t in r.split()]
                if len(idx) < m:
                    raise MeshError(f"{path}: {name} record {r!r} has fewer than {m} indices")
                elems.append([v - 1 for v in idx[:m]])
        elif name in ("cells", "polygons"):
            for r in records:
                idx = [int(t) for t in r.split()]
                nv = idx[0]
                if len(idx) < nv + 1:
                    raise MeshError(f"{path}: cell record {r!r} is truncated")
                elems.append([v - 1 for v in idx[1 : nv + 1]])
    if verts is None:
        raise MeshError(f"{path}: no vertices section")
    return build_mesh(verts, elems, {"path": str(path), "format": "fvca5"})


def write_fvca5(mesh: PolyMesh, path) -> None:
    by_size: dict = {}
    for loop in mesh.elements:
        by_size.setdefault(len(loop), []).append(loop)
    out = ["vertices", f"{len(mesh.vertices)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    for name, m in _FIXED_ARITY.items():
        group = by_size.pop(m, [])
        out += [name, f"{len(group)}"] + [" ".join(str(v + 1) for v in loop) for loop in group]
    rest = [loop for m in sorted(by_size) for loop in by_size[m]]
    if rest:
        out += ["cells", f"{len(rest)}"] + [" ".join([str(len(loop))] + [str(v + 1) for v in loop]) for loop in rest]
    bnd = mesh.boundary_faces
    out += ["edges of the boundary", f"{len(bnd)}"] + [f"{mesh.faces[F, 0] + 1} {mesh.faces[F, 1] + 1}" for F in bnd]
    out += ["all edges", f"{mesh.n_faces}"] + [f"{a + 1} {b + 1}" for a, b in mesh.faces]
    Path(path).write_text("\n".join(out) + "\n")


def read_json_mesh(path) -> PolyMesh:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        verts, elems = data["vertices"], data["elements"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MeshError(f"{path}: not a JSON mesh ({exc})") from exc
    return build_mesh(verts, elems, {"path": str(path), "format": "json"})


def write_json_mesh(mesh: PolyMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_json()))


def load_mesh(path, format: str | None = None) -> PolyMesh:
    """Load a mesh from disk; ``format`` is "fvca5" or "json" (guessed from suffix if None)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "fvca5"
    if format == "json":
        return read_json_mesh(path)
    if format == "fvca5":
        return read_fvca5(path)
    raise MeshError(f"unknown mesh format {format!r}")


# --------------------------------------------------------- sub-triangulation


@dataclass(frozen=True, eq=False)
class SubTriangulation:
    """Triangles (as coordinate arrays, shape (3, 2)) covering each element."""

    triangles: tuple
    parents: np.ndarray

    def of(self, T: int) -> list:
        return self.triangles[T]

    @property
    def n_triangles(self) -> int:
        return len(self.parents)


def _turns(pts: np.ndarray) -> np.ndarray:
    prev = pts - np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0) - pts
    return prev[:, 0] * nxt[:, 1] - prev[:, 1] * nxt[:, 0]


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    return False


def is_simple(pts: np.ndarray) -> bool:
    n = len(pts)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                return False
    return True


def _ear_clip(pts: np.ndarray) -> list:
    idx = list(range(len(pts)))
    tris = []
    scale = polygon_diameter(pts) ** 2
    while len(idx) > 3:
        for m in range(len(idx)):
            a, b, c = idx[m - 1], idx[m], idx[(m + 1) % len(idx)]
            tri = pts[[a, b, c]]
            if signed_area(tri) <= 1e-14 * scale:
                continue
            others = [pts[v] for v in idx if v not in (a, b, c)]
            if any(_in_triangle(p, tri) for p in others):
                continue
            tris.append(tri)
            idx.pop(m)
            break
        else:
            raise MeshError("ear clipping failed (polygon not simple?)")
    tris.append(pts[idx])
    return tris


def _in_triangle(p, tri) -> bool:
    a, b, c = tri
    def cr(u, v, w):
        return (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])
    return cr(a, b, p) >= 0 and cr(b, c, p) >= 0 and cr(c, a, p) >= 0


def triangulate_polygon(pts: np.ndarray, centroid: np.ndarray | None = None) -> list:
    """Exact triangle cover of a simple counter-clockwise polygon.

    Strictly convex polygons are fanned from their first vertex; convex
    polygons with straight-angle vertices (hanging nodes) are fanned from the
    centroid; non-convex polygons are ear-clipped.
    """
    n = len(pts)
    if n == 3:
        return [pts.copy()]
    turns = _turns(pts)
    tol = 1e-12 * polygon_diameter(pts) ** 2
    if np.all(turns > tol):
        return [pts[[0, i, i + 1]] for i in range(1, n - 1)]
    if np.all(turns > -tol):
        c = polygon_centroid(pts) if centroid is None else centroid
        return [np.array([c, pts[i], pts[(i + 1) % n]]) for i in range(n)]
    if not is_simple(pts):
        raise MeshError("non-simple polygon")
    return _ear_clip(pts)


def subtriangulate(mesh: PolyMesh) -> SubTriangulation:
    tris = []
    parents = []
    for T, loop in enumerate(mesh.elements):
        pts = mesh.vertices[loop]
        if not is_simple(pts):
            raise MeshError(f"element {T}: self-intersecting vertex loop")
        tt = triangulate_polygon(pts, mesh.centroids[T])
        tris.append(tt)
        parents += [T] * len(tt)
    return SubTriangulation(triangles=tuple(tris), parents=np.array(parents, dtype=int))


# ------------------------------------------------------------------- quality


@dataclass
class MeshQualityReport:
    shape_regularity: float
    contact_regularity: float
    quasi_uniformity: float
    n_elements: int
    n_faces: int
    n_interior_faces: int
    n_boundary_faces: int
    h: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def triangle_inradius(tri: np.ndarray) -> float:
    a = np.linalg.norm(tri[1] - tri[2])
    b = np.linalg.norm(tri[0] - tri[2])
    c = np.linalg.norm(tri[0] - tri[1])
    return abs(signed_area(tri)) / (0.5 * (a + b + c))


def quality_metrics(mesh: PolyMesh, sub: SubTriangulation) -> MeshQualityReport:
    if len(sub.triangles) != mesh.n_elements:
        raise MeshError("sub-triangulation does not match the mesh")
    shape = math.inf
    contact = math.inf
    for T, tris in enumerate(sub.triangles):
        for tri in tris:
            hs = polygon_diameter(tri)
            shape = min(shape, triangle_inradius(tri) / hs)
            contact = min(contact, hs / mesh.diameters[T])
    return MeshQualityReport(
        shape_regularity=float(shape),
        contact_regularity=float(contact),
        quasi_uniformity=float(mesh.diameters.min() / mesh.h),
        n_elements=mesh.n_elements,
        n_faces=mesh.n_faces,
        n_interior_faces=len(mesh.interior_faces),
        n_boundary_faces=len(mesh.boundary_faces),
        h=mesh.h,
    )
