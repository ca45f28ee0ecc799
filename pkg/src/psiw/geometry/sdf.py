"""Signed distance grids: brute-force construction and trilinear sampling.

Sign convention: free space is positive, the inside of solid geometry (and
everything beyond the room shell) is negative.  A node is free when rays
cast from it cross the surface an odd number of times, i.e. it sits inside
the closed room shell and outside every furniture solid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
import torch

from psiw._binary import FormatError, Reader, Writer
from psiw.geometry.mesh import TriMesh

SDF_MAGIC = b"PSDF"
SDF_VERSION = 1

# +X, +Y, +Z followed by slightly tilted fallbacks used when a ray grazes an
# edge, a vertex, or lies in a triangle's plane
_RAY_DIRS = np.array([
    [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
    [1.0, 0.0137, 0.0291], [0.0219, 1.0, 0.0113], [0.0173, 0.0241, 1.0],
    [1.0, -0.0311, 0.0157], [-0.0129, 1.0, 0.0337], [0.0283, -0.0199, 1.0],
    [1.0, 0.0419, -0.0233], [0.0371, 1.0, -0.0183], [-0.0311, 0.0157, 1.0],
])
_RAY_DIRS /= np.linalg.norm(_RAY_DIRS, axis=1, keepdims=True)
_N_PRIMARY = 3
_ALTERNATES = 3  # fallback directions per primary axis


@dataclass(eq=False)
class SdfGrid:
    origin: np.ndarray
    spacing: float
    values: np.ndarray  # (nx, ny, nz), index [i, j, k] at origin + spacing * (i, j, k)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("SDF values must be a 3D array with at least 2 nodes per axis")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        self.spacing = float(self.spacing)
        self._torch_cache = {}

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def node(self, i, j, k) -> np.ndarray:
        return self.origin + self.spacing * np.array([i, j, k], dtype=np.float64)

    def node_positions(self) -> np.ndarray:
        nx, ny, nz = self.dims
        ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        return self.origin + self.spacing * np.stack([ii, jj, kk], axis=-1).astype(np.float64)

    def torch_values(self, dtype=torch.float64) -> torch.Tensor:
        if dtype not in self._torch_cache:
            self._torch_cache[dtype] = torch.as_tensor(np.asarray(self.values, dtype=np.float64), dtype=dtype)
        return self._torch_cache[dtype]

    # -- file format: magic, u16 version, u32 dims[3], f32 origin[3], f32 spacing,
    #    f32 values x-fastest then y then z
    def to_bytes(self) -> bytes:
        w = Writer()
        w.raw(SDF_MAGIC)
        w.pack("H", SDF_VERSION)
        w.pack("3I", *self.dims)
        w.pack("3f", *self.origin)
        w.pack("f", self.spacing)
        w.raw(np.asarray(self.values, dtype="<f4").ravel(order="F").tobytes())
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SdfGrid":
        r = Reader(data, "PSDF signed distance grid")
        r.expect_magic(SDF_MAGIC)
        r.expect_version(SDF_VERSION)
        dims = r.unpack("3I")
        origin = np.array(r.unpack("3f"), dtype=np.float32).astype(np.float64)
        (spacing,) = r.unpack("f")
        vals = r.raw_array("<f4", int(np.prod(dims))).reshape(dims, order="F")
        r.finish()
        return cls(origin, float(np.float32(spacing)), vals)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SdfGrid":
        return cls.from_bytes(Path(path).read_bytes())

    def quantized(self) -> "SdfGrid":
        """The grid as it survives a round trip through the float32 file format."""
        return SdfGrid.from_bytes(self.to_bytes())


# ---------------------------------------------------------------------------
# distance kernels

@numba.njit(cache=True, inline="always")
def _dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@numba.njit(cache=True)
def _point_triangle_dist2(px, py, pz, t):
    # closest point on triangle by region classification (Ericson, RTCD 5.1.5)
    ax, ay, az = t[0, 0], t[0, 1], t[0, 2]
    abx, aby, abz = t[1, 0] - ax, t[1, 1] - ay, t[1, 2] - az
    acx, acy, acz = t[2, 0] - ax, t[2, 1] - ay, t[2, 2] - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = _dot(abx, aby, abz, apx, apy, apz)
    d2 = _dot(acx, acy, acz, apx, apy, apz)
    if d1 <= 0.0 and d2 <= 0.0:
        return _dot(apx, apy, apz, apx, apy, apz)
    bpx, bpy, bpz = px - t[1, 0], py - t[1, 1], pz - t[1, 2]
    d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
    d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
    if d3 >= 0.0 and d4 <= d3:
        return _dot(bpx, bpy, bpz, bpx, bpy, bpz)
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx, qy, qz = apx - v * abx, apy - v * aby, apz - v * abz
        return _dot(qx, qy, qz, qx, qy, qz)
    cpx, cpy, cpz = px - t[2, 0], py - t[2, 1], pz - t[2, 2]
    d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
    d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
    if d6 >= 0.0 and d5 <= d6:
        return _dot(cpx, cpy, cpz, cpx, cpy, cpz)
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = apx - w * acx, apy - w * acy, apz - w * acz
        return _dot(qx, qy, qz, qx, qy, qz)
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bpx - w * (t[2, 0] - t[1, 0])
        qy = bpy - w * (t[2, 1] - t[1, 1])
        qz = bpz - w * (t[2, 2] - t[1, 2])
        return _dot(qx, qy, qz, qx, qy, qz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = apx - abx * v - acx * w
    qy = apy - aby * v - acy * w
    qz = apz - abz * v - acz * w
    return _dot(qx, qy, qz, qx, qy, qz)


@numba.njit(cache=True)
def _ray_parity(px, py, pz, dx, dy, dz, tris, eps):
    """Crossing-count parity along the ray p + s*d (s > 0); -1 if the ray is degenerate.

    Degenerate: the ray grazes an edge or vertex, starts on a triangle, or
    runs inside the plane of a triangle it could meet.
    """
    count = 0
    for f in range(tris.shape[0]):
        ax, ay, az = tris[f, 0, 0], tris[f, 0, 1], tris[f, 0, 2]
        e1x, e1y, e1z = tris[f, 1, 0] - ax, tris[f, 1, 1] - ay, tris[f, 1, 2] - az
        e2x, e2y, e2z = tris[f, 2, 0] - ax, tris[f, 2, 1] - ay, tris[f, 2, 2] - az
        hx = dy * e2z - dz * e2y
        hy = dz * e2x - dx * e2z
        hz = dx * e2y - dy * e2x
        det = _dot(e1x, e1y, e1z, hx, hy, hz)
        sx, sy, sz = px - ax, py - ay, pz - az
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        nn = np.sqrt(nx * nx + ny * ny + nz * nz)
        if abs(det) < eps * nn:
            if nn > 0.0 and abs(_dot(sx, sy, sz, nx, ny, nz)) / nn < eps:
                return -1
            continue
        inv = 1.0 / det
        u = _dot(sx, sy, sz, hx, hy, hz) * inv
        if u < -eps or u > 1.0 + eps:
            continue
        qx = sy * e1z - sz * e1y
        qy = sz * e1x - sx * e1z
        qz = sx * e1y - sy * e1x
        v = _dot(dx, dy, dz, qx, qy, qz) * inv
        if v < -eps or u + v > 1.0 + eps:
            continue
        s = _dot(e2x, e2y, e2z, qx, qy, qz) * inv
        if s < -eps:
            continue
        if s <= eps or u <= eps or v <= eps or u + v >= 1.0 - eps:
            return -1
        count += 1
    return count & 1


@numba.njit(cache=True)
def _sdf_kernel(points, tris, dirs, n_primary, alternates, eps, surface_eps):
    n = points.shape[0]
    dist = np.empty(n)
    sign = np.empty(n)
    inconsistent = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        for f in range(tris.shape[0]):
            d2 = _point_triangle_dist2(px, py, pz, tris[f])
            if d2 < best:
                best = d2
        dist[i] = np.sqrt(best)
        if dist[i] <= surface_eps:
            sign[i] = 1.0
            continue
        votes_free = 0
        votes = 0
        for axis in range(n_primary):
            d = dirs[axis]
            par = _ray_parity(px, py, pz, d[0], d[1], d[2], tris, eps)
            k = 0
            while par < 0 and k < alternates:
                d = dirs[n_primary + axis * alternates + k]
                par = _ray_parity(px, py, pz, d[0], d[1], d[2], tris, eps)
                k += 1
            if par >= 0:
                votes += 1
                votes_free += par
        if votes == 0:
            sign[i] = 1.0
            inconsistent[i] = True
            continue
        if votes_free != 0 and votes_free != votes:
            inconsistent[i] = True
        sign[i] = 1.0 if 2 * votes_free > votes else -1.0
    return dist, sign, inconsistent


def unsigned_and_sign(mesh: TriMesh, points: np.ndarray, eps: float = 1e-9):
    """(unsigned distance, sign, inconsistent-vote flag) per query point."""
    tris = np.ascontiguousarray(mesh.triangles())
    scale = float(np.abs(mesh.vertices).max()) + 1.0
    return _sdf_kernel(np.ascontiguousarray(points, dtype=np.float64), tris, _RAY_DIRS, _N_PRIMARY,
                       _ALTERNATES, eps, 1e-12 * scale)


def grid_layout(lo, hi, dims, padding: float):
    """Origin, isotropic spacing and node counts covering the padded box [lo, hi]."""
    dims = np.broadcast_to(np.asarray(dims, dtype=np.int64), (3,)).copy()
    if (dims < 2).any():
        raise ValueError("need at least 2 nodes per axis")
    lo = np.asarray(lo, float) - padding
    hi = np.asarray(hi, float) + padding
    extent = hi - lo
    spacing = float(np.max(extent / (dims - 1)))
    span = spacing * (dims - 1)
    origin = lo - (span - extent) / 2.0
    return origin, spacing, tuple(int(d) for d in dims)


def compute_sdf(mesh: TriMesh, dims=64, padding: float = 0.3, max_inconsistent: float = 1e-3) -> SdfGrid:
    """Signed distance to ``mesh`` at the nodes of a uniform grid over its padded bounding box.

    ``dims`` is an int (cube) or a triple of node counts; spacing is isotropic
    and chosen so the grid covers the padded box along every axis.
    """
    if len(mesh.faces) == 0:
        raise ValueError("compute_sdf: mesh has no faces")
    lo, hi = mesh.bounds()
    origin, spacing, dims = grid_layout(lo, hi, dims, padding)
    grid = SdfGrid(origin, spacing, np.zeros(dims))
    pts = grid.node_positions().reshape(-1, 3)
    dist, sign, bad = unsigned_and_sign(mesh, pts)
    frac = bad.mean()
    if frac > max_inconsistent:
        raise ValueError(f"compute_sdf: ray parity disagrees on {frac:.2%} of nodes; "
                         "the mesh is probably not watertight")
    grid.values = (dist * sign).reshape(dims)
    return grid


# ---------------------------------------------------------------------------
# sampling

def sample_sdf(grid: SdfGrid, points, return_outside: bool = False):
    """Trilinear interpolation of the grid at ``points`` (..., 3).

    Torch inputs stay differentiable w.r.t. the point positions.  Points
    outside the grid are clamped to its boundary (zero positional gradient
    along clamped axes); ``return_outside`` also returns the boolean mask
    of clamped points.
    """
    as_numpy = not isinstance(points, torch.Tensor)
    pts = torch.as_tensor(np.asarray(points, dtype=np.float64)) if as_numpy else points
    vals = grid.torch_values(pts.dtype)
    dims = torch.tensor(grid.dims, dtype=pts.dtype)
    origin = torch.as_tensor(grid.origin, dtype=pts.dtype)
    idx = (pts - origin) / grid.spacing
    # queries that land on a node up to rounding snap onto it exactly; the
    # shift is detached so the positional gradient is untouched
    nearest = idx.detach().round()
    snap = (idx.detach() - nearest).abs() <= 1e-9 * torch.clamp(nearest.abs(), min=1.0)
    idx = idx + torch.where(snap, nearest - idx.detach(), torch.zeros_like(idx)).detach()
    outside = ((idx < 0) | (idx > dims - 1)).any(dim=-1)
    idx = torch.minimum(torch.clamp(idx, min=0.0), dims - 1)
    base = torch.minimum(idx.detach().floor(), dims - 2).long()
    frac = idx - base.to(pts.dtype)
    i, j, k = base[..., 0], base[..., 1], base[..., 2]
    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
    out = 0.0
    for di in (0, 1):
        wx = fx if di else 1.0 - fx
        for dj in (0, 1):
            wy = fy if dj else 1.0 - fy
            for dk in (0, 1):
                wz = fz if dk else 1.0 - fz
                out = out + wx * wy * wz * vals[i + di, j + dj, k + dk]
    if as_numpy:
        out = out.numpy()
        outside = outside.numpy()
    if return_outside:
        return out, outside
    return out


def sample_sdf_checked(grid: SdfGrid, points, context: str = "sample_sdf"):
    values, outside = sample_sdf(grid, points, return_outside=True)
    n_out = int(outside.sum())
    if n_out:
        warnings.warn(f"{context}: {n_out} points outside the SDF grid were clamped", stacklevel=2)
    return values
