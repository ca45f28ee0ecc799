from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree


@dataclass(eq=False)
class TriMesh:
    """Triangle mesh with optional per-vertex semantic category ids."""

    vertices: np.ndarray
    faces: np.ndarray
    semantic: np.ndarray | None = None
    frame: str = "world"

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.semantic is not None:
            self.semantic = np.ascontiguousarray(self.semantic, dtype=np.int64).reshape(-1)
            if len(self.semantic) != len(self.vertices):
                raise ValueError(f"{len(self.semantic)} semantic labels for {len(self.vertices)} vertices")
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face (repeated vertex index)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.vertices, leafsize=32)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) array of triangle corner positions."""
        return self.vertices[self.faces]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, T: np.ndarray, frame: str | None = None) -> "TriMesh":
        T = np.asarray(T, dtype=np.float64)
        v = self.vertices @ T[:3, :3].T + T[:3, 3]
        return TriMesh(v, self.faces.copy(), None if self.semantic is None else self.semantic.copy(),
                       frame=frame or self.frame)

    def labels_or(self, default: int) -> np.ndarray:
        if self.semantic is None:
            return np.full(self.n_vertices, default, dtype=np.int64)
        return self.semantic


def concatenate(meshes: list[TriMesh], frame: str = "world") -> TriMesh:
    verts, faces, labels = [], [], []
    offset = 0
    labelled = all(m.semantic is not None for m in meshes)
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        if labelled:
            labels.append(m.semantic)
        offset += m.n_vertices
    return TriMesh(np.concatenate(verts) if verts else np.zeros((0, 3)),
                   np.concatenate(faces) if faces else np.zeros((0, 3), dtype=np.int64),
                   np.concatenate(labels) if labelled and labels else None, frame=frame)


def _split_pattern(n: int):
    ij = [(i, j) for i in range(n + 1) for j in range(n + 1 - i)]
    index = {key: k for k, key in enumerate(ij)}
    w = np.array([[(n - i - j) / n, i / n, j / n] for i, j in ij])
    tri = []
    for i in range(n):
        for j in range(n - i):
            tri.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j < n - 1:
                tri.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    return w, np.asarray(tri, dtype=np.int64), np.argmax(w, axis=1)


def subdivide(mesh: TriMesh, max_edge: float) -> TriMesh:
    """Split every triangle into n*n congruent pieces so all edges are <= max_edge.

    Labels follow the nearest original corner.  Vertices on shared edges are
    duplicated, which is harmless for nearest-vertex queries.
    """
    verts, faces, labels = [], [], []
    offset = 0
    src_labels = mesh.semantic
    patterns = {}
    for a, b, c in mesh.faces:
        corners = mesh.vertices[[a, b, c]]
        longest = np.linalg.norm(corners - corners[[1, 2, 0]], axis=1).max()
        n = max(1, int(np.ceil(longest / max_edge - 1e-9)))
        if n not in patterns:
            patterns[n] = _split_pattern(n)
        w, tri, corner = patterns[n]
        verts.append(w @ corners)
        if src_labels is not None:
            labels.append(src_labels[[a, b, c]][corner])
        faces.append(tri + offset)
        offset += len(w)
    return TriMesh(np.concatenate(verts), np.concatenate(faces),
                   np.concatenate(labels) if src_labels is not None else None, frame=mesh.frame)


def box_mesh(lo, hi, label: int, inward: bool = False) -> TriMesh:
    """Axis-aligned box as 6 quads (24 vertices, 12 triangles).

    Each face gets its own four vertices so per-vertex labels stay
    unambiguous.  ``inward`` flips winding so normals face the interior.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    # each quad listed counter-clockwise seen from outside
    quads = [
        [(x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)],  # bottom (-y)
        [(x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0)],  # top (+y)
        [(x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0)],  # back (-z)
        [(x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)],  # front (+z)
        [(x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0)],  # left (-x)
        [(x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)],  # right (+x)
    ]
    verts = np.array([p for q in quads for p in q], dtype=np.float64)
    faces = []
    for k in range(6):
        b = 4 * k
        if inward:
            faces += [(b, b + 2, b + 1), (b, b + 3, b + 2)]
        else:
            faces += [(b, b + 1, b + 2), (b, b + 2, b + 3)]
    return TriMesh(verts, np.array(faces), np.full(24, label, dtype=np.int64))
