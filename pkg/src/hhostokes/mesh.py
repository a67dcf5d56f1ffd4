"""Polygonal meshes of the unit square and a small text mesh format.

Faces are straight segments derived from cell vertex loops by edge hashing.
Every face stores its vertices in increasing index order, which fixes its
tangent; outward normals are stored per (cell, local face) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class MeshError(ValueError):
    """Raised for malformed or degenerate mesh input."""


@dataclass(frozen=True)
class Face:
    vertices: tuple[int, int]
    length: float
    midpoint: np.ndarray
    tangent: np.ndarray
    cells: tuple[int, ...]

    @property
    def diameter(self) -> float:
        return self.length

    @property
    def is_boundary(self) -> bool:
        return len(self.cells) == 1


@dataclass(frozen=True)
class Cell:
    vertices: tuple[int, ...]
    faces: tuple[int, ...]
    centroid: np.ndarray
    area: float
    diameter: float
    # outward unit normals, one row per local face
    normals: np.ndarray

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class RegularityReport:
    min_inradius_ratio: float
    max_faces_per_cell: int
    min_face_cell_ratio: float
    max_face_cell_ratio: float


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    cells: tuple[Cell, ...]
    faces: tuple[Face, ...]
    dim: int = 2
    h: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h", max(c.diameter for c in self.cells))

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def boundary_faces(self) -> list[int]:
        return [i for i, f in enumerate(self.faces) if f.is_boundary]

    @property
    def interior_faces(self) -> list[int]:
        return [i for i, f in enumerate(self.faces) if not f.is_boundary]

    def cell_vertices(self, c: int) -> np.ndarray:
        return self.vertices[list(self.cells[c].vertices)]

    def face_vertices(self, f: int) -> np.ndarray:
        return self.vertices[list(self.faces[f].vertices)]


def _polygon_area_centroid(pts: np.ndarray) -> tuple[float, np.ndarray]:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def build_mesh(vertices: np.ndarray, cell_loops: Sequence[Sequence[int]]) -> Mesh:
    """Build connectivity and geometry from counter-clockwise vertex loops."""
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (N, 2) array")

    edge_ids: dict[tuple[int, int], int] = {}
    edge_cells: list[list[int]] = []
    cell_faces: list[list[int]] = []
    for c, loop in enumerate(cell_loops):
        loop = [int(v) for v in loop]
        if len(loop) < 3:
            raise MeshError(f"cell {c} has fewer than 3 vertices")
        if len(set(loop)) != len(loop):
            raise MeshError(f"cell {c} repeats a vertex")
        if min(loop) < 0 or max(loop) >= len(vertices):
            raise MeshError(f"cell {c} references a missing vertex")
        faces = []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            key = (min(a, b), max(a, b))
            if key not in edge_ids:
                edge_ids[key] = len(edge_cells)
                edge_cells.append([])
            fid = edge_ids[key]
            edge_cells[fid].append(c)
            faces.append(fid)
        cell_faces.append(faces)

    faces = []
    for (a, b), fid in sorted(edge_ids.items(), key=lambda kv: kv[1]):
        adj = edge_cells[fid]
        if len(adj) > 2:
            raise MeshError(f"non-manifold face ({a}, {b}) shared by {len(adj)} cells")
        if len(adj) == 2 and adj[0] == adj[1]:
            raise MeshError(f"face ({a}, {b}) appears twice in cell {adj[0]}")
        d = vertices[b] - vertices[a]
        length = float(np.hypot(*d))
        if length == 0.0:
            raise MeshError(f"zero-length face ({a}, {b})")
        faces.append(
            Face(
                vertices=(a, b),
                length=length,
                midpoint=0.5 * (vertices[a] + vertices[b]),
                tangent=d / length,
                cells=tuple(adj),
            )
        )

    cells = []
    for c, loop in enumerate(cell_loops):
        loop = [int(v) for v in loop]
        pts = vertices[loop]
        area, centroid = _polygon_area_centroid(pts)
        if area <= 0.0:
            raise MeshError(f"cell {c} has non-positive area {area:g} (check orientation)")
        diff = pts[:, None, :] - pts[None, :, :]
        diameter = float(np.sqrt((diff**2).sum(-1)).max())
        normals = np.empty((len(loop), 2))
        for i, (a, b) in enumerate(zip(loop, loop[1:] + loop[:1])):
            e = vertices[b] - vertices[a]
            normals[i] = np.array([e[1], -e[0]]) / np.hypot(*e)
        cells.append(
            Cell(
                vertices=tuple(loop),
                faces=tuple(cell_faces[c]),
                centroid=centroid,
                area=float(area),
                diameter=diameter,
                normals=normals,
            )
        )
    return Mesh(vertices=vertices, cells=tuple(cells), faces=tuple(faces))


def _check_n(n: int, minimum: int = 1) -> None:
    if int(n) != n or n < minimum:
        raise ValueError(f"number of cells per side must be an integer >= {minimum}, got {n}")


def _grid_vertices(n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def _distort(vertices: np.ndarray, n: int, amplitude: float) -> np.ndarray:
    if amplitude == 0.0:
        return vertices
    x, y = vertices[:, 0], vertices[:, 1]
    bump = amplitude / n * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    interior = (x > 0) & (x < 1) & (y > 0) & (y < 1)
    out = vertices.copy()
    out[interior, 0] += bump[interior]
    out[interior, 1] -= bump[interior]
    return out


def _quad_loops(n: int) -> list[list[int]]:
    loops = []
    for j in range(n):
        for i in range(n):
            v0 = j * (n + 1) + i
            loops.append([v0, v0 + 1, v0 + n + 2, v0 + n + 1])
    return loops


def generate_cartesian(n: int) -> Mesh:
    """Uniform ``n x n`` square grid on the unit square."""
    _check_n(n)
    return build_mesh(_grid_vertices(n), _quad_loops(n))


# above 1/3 the n = 3 triangular mesh folds: neighbouring vertices move in opposite directions
MAX_AMPLITUDE = 1.0 / 3.0


def _check_amplitude(amplitude: float) -> None:
    if not 0.0 <= amplitude < MAX_AMPLITUDE:
        raise ValueError(f"distortion amplitude must lie in [0, 1/3), got {amplitude}")


def generate_distorted_cartesian(n: int, amplitude: float = 0.15) -> Mesh:
    """Cartesian grid whose interior vertices are moved by a smooth sine bump."""
    _check_n(n, 2)
    _check_amplitude(amplitude)
    return build_mesh(_distort(_grid_vertices(n), n, amplitude), _quad_loops(n))


def generate_distorted_triangular(n: int, amplitude: float = 0.15) -> Mesh:
    """Each Cartesian square split along its (i, j)-(i+1, j+1) diagonal, then distorted.

    ``n = 1`` is accepted so that the single-square split can be built.
    """
    _check_n(n, 1)
    _check_amplitude(amplitude)
    loops = []
    for a, b, c, d in _quad_loops(n):
        loops.append([a, b, c])
        loops.append([a, c, d])
    return build_mesh(_distort(_grid_vertices(n), n, amplitude), loops)


FAMILIES = ("cartesian", "distorted_cartesian", "distorted_triangular")


def generate(family: str, n: int, amplitude: float = 0.15) -> Mesh:
    if family == "cartesian":
        return generate_cartesian(n)
    if family == "distorted_cartesian":
        return generate_distorted_cartesian(n, amplitude)
    if family == "distorted_triangular":
        return generate_distorted_triangular(n, amplitude)
    raise ValueError(f"unknown mesh family {family!r}; expected one of {FAMILIES}")


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_mesh(text: str, source: str = "<string>") -> Mesh:
    """Parse the ``polymesh 2d`` text format."""
    lines = [(i + 1, _strip(l)) for i, l in enumerate(text.splitlines())]
    lines = [(i, l) for i, l in lines if l]
    it = iter(lines)

    def take(what: str) -> tuple[int, list[str]]:
        try:
            lineno, l = next(it)
        except StopIteration:
            raise MeshError(f"{source}: unexpected end of file while reading {what}") from None
        return lineno, l.split()

    def count(keyword: str) -> int:
        lineno, tok = take(f"'{keyword}' header")
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshError(f"{source}:{lineno}: expected '{keyword} N'")
        try:
            value = int(tok[1])
        except ValueError:
            raise MeshError(f"{source}:{lineno}: bad count {tok[1]!r}") from None
        if value < 0:
            raise MeshError(f"{source}:{lineno}: negative count")
        return value

    lineno, tok = take("header")
    if tok != ["polymesh", "2d"]:
        raise MeshError(f"{source}:{lineno}: expected header 'polymesh 2d'")

    nv = count("vertices")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, tok = take("vertex")
        if len(tok) != 2:
            raise MeshError(f"{source}:{lineno}: vertex line needs 2 coordinates")
        try:
            verts[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshError(f"{source}:{lineno}: bad coordinate") from None

    nc = count("cells")
    loops = []
    for _ in range(nc):
        lineno, tok = take("cell")
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise MeshError(f"{source}:{lineno}: bad vertex index") from None
        if not vals or vals[0] != len(vals) - 1:
            raise MeshError(f"{source}:{lineno}: cell line must be 'c v0 ... v(c-1)'")
        loops.append(vals[1:])

    extra = next(it, None)
    if extra is not None:
        raise MeshError(f"{source}:{extra[0]}: trailing content")
    return build_mesh(verts, loops)


def load_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    return parse_mesh(path.read_text(), source=str(path))


def format_mesh(mesh: Mesh) -> str:
    out = ["polymesh 2d", f"vertices {len(mesh.vertices)}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"cells {mesh.n_cells}")
    out += [" ".join(map(str, (len(c.vertices),) + c.vertices)) for c in mesh.cells]
    return "\n".join(out) + "\n"


def mesh_stats(mesh: Mesh) -> RegularityReport:
    """Cheap shape-regularity diagnostics.

    The inradius is estimated by the distance from the centroid to the
    closest face line, which is exact for regular polygons and a lower bound
    for convex cells.
    """
    inr, ratios = [], []
    for cell in mesh.cells:
        dists = []
        for f, n in zip(cell.faces, cell.normals):
            face = mesh.faces[f]
            dists.append(abs(np.dot(face.midpoint - cell.centroid, n)))
            ratios.append(face.length / cell.diameter)
        inr.append(min(dists) / cell.diameter)
    return RegularityReport(
        min_inradius_ratio=float(min(inr)),
        max_faces_per_cell=max(c.n_faces for c in mesh.cells),
        min_face_cell_ratio=float(min(ratios)),
        max_face_cell_ratio=float(max(ratios)),
    )
