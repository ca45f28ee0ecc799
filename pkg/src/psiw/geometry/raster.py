"""Software z-buffer rasterization of depth and semantics."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from psiw.geometry.camera import Camera
from psiw.geometry.mesh import TriMesh

BACKGROUND = 255
NEAR_PLANE = 1e-3


@dataclass
class SceneView:
    depth: np.ndarray  # (H, W) float, 0 where nothing was hit
    semantics: np.ndarray  # (H, W) uint8, BACKGROUND where nothing was hit
    camera: Camera

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.semantics = np.asarray(self.semantics, dtype=np.uint8)
        if self.depth.shape != self.semantics.shape:
            raise ValueError("depth and semantics maps differ in shape")
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise ValueError("map shape does not match camera resolution")
        if (self.depth < 0).any() or (self.depth > self.camera.max_depth * (1 + 1e-6)).any():
            raise ValueError("depth outside [0, max_depth]")


@numba.njit(cache=True)
def _clip_near(p, near):
    """Clip a camera-space triangle against z >= near. Returns (n, 4x3 polygon)."""
    out = np.zeros((4, 3))
    n = 0
    for i in range(3):
        a = p[i]
        b = p[(i + 1) % 3]
        a_in = a[2] >= near
        b_in = b[2] >= near
        if a_in:
            out[n] = a
            n += 1
        if a_in != b_in:
            t = (near - a[2]) / (b[2] - a[2])
            out[n] = a + t * (b - a)
            n += 1
    return n, out


@numba.njit(cache=True)
def _raster_tri(q, fid, fx, fy, cx, cy, skew, x0, y0, x1, y1, zbuf, fbuf):
    # q: 3x3 camera-space points, all z >= near
    us = np.empty(3)
    vs = np.empty(3)
    iz = np.empty(3)
    for k in range(3):
        z = q[k, 2]
        us[k] = (fx * q[k, 0] + skew * q[k, 1]) / z + cx
        vs[k] = fy * q[k, 1] / z + cy
        iz[k] = 1.0 / z
    area = (us[1] - us[0]) * (vs[2] - vs[0]) - (us[2] - us[0]) * (vs[1] - vs[0])
    if abs(area) < 1e-14:
        return
    umin = max(x0, int(np.ceil(min(us[0], min(us[1], us[2])))))
    umax = min(x1 - 1, int(np.floor(max(us[0], max(us[1], us[2])))))
    vmin = max(y0, int(np.ceil(min(vs[0], min(vs[1], vs[2])))))
    vmax = min(y1 - 1, int(np.floor(max(vs[0], max(vs[1], vs[2])))))
    for py in range(vmin, vmax + 1):
        for px in range(umin, umax + 1):
            w0 = ((us[1] - px) * (vs[2] - py) - (us[2] - px) * (vs[1] - py)) / area
            w1 = ((us[2] - px) * (vs[0] - py) - (us[0] - px) * (vs[2] - py)) / area
            w2 = 1.0 - w0 - w1
            if w0 < -1e-12 or w1 < -1e-12 or w2 < -1e-12:
                continue
            inv = w0 * iz[0] + w1 * iz[1] + w2 * iz[2]
            d = 1.0 / inv
            if d < zbuf[py - y0, px - x0]:
                zbuf[py - y0, px - x0] = d
                fbuf[py - y0, px - x0] = fid


@numba.njit(cache=True)
def _raster_kernel(verts, faces, fx, fy, cx, cy, skew, x0, y0, x1, y1, near):
    zbuf = np.full((y1 - y0, x1 - x0), np.inf)
    fbuf = np.full((y1 - y0, x1 - x0), -1, dtype=np.int64)
    p = np.empty((3, 3))
    tri = np.empty((3, 3))
    for f in range(faces.shape[0]):
        for k in range(3):
            p[k] = verts[faces[f, k]]
        if p[0, 2] < near and p[1, 2] < near and p[2, 2] < near:
            continue
        n, poly = _clip_near(p, near)
        for j in range(1, n - 1):
            tri[0] = poly[0]
            tri[1] = poly[j]
            tri[2] = poly[j + 1]
            _raster_tri(tri, f, fx, fy, cx, cy, skew, x0, y0, x1, y1, zbuf, fbuf)
    return zbuf, fbuf


@numba.njit(cache=True)
def _label_kernel(depth, fbuf, faces, verts, labels, fx, fy, cx, cy, skew, out):
    H, W = depth.shape
    for r in range(H):
        for c in range(W):
            d = depth[r, c]
            if d <= 0.0:
                continue
            y = (r - cy) * d / fy
            x = ((c - cx) * d - skew * y) / fx
            best = 1e300
            lab = 0
            for k in range(3):
                v = faces[fbuf[r, c], k]
                dx = verts[v, 0] - x
                dy = verts[v, 1] - y
                dz = verts[v, 2] - d
                dist = dx * dx + dy * dy + dz * dz
                if dist < best:
                    best = dist
                    lab = labels[v]
            out[r, c] = lab


def zbuffer(mesh_cam: TriMesh, camera: Camera, window=None) -> tuple[np.ndarray, np.ndarray]:
    """Raw z-buffer over ``window`` = (x0, y0, x1, y1) (default: full image).

    Returns (depth with inf where empty, winning face id or -1).
    Pixel (row i, col j) samples the image point u = j, v = i.
    """
    x0, y0, x1, y1 = window if window is not None else (0, 0, camera.width, camera.height)
    x0, y0 = max(0, int(x0)), max(0, int(y0))
    x1, y1 = min(camera.width, int(x1)), min(camera.height, int(y1))
    if x1 <= x0 or y1 <= y0:
        return np.zeros((0, 0)), np.zeros((0, 0), dtype=np.int64)
    K = camera.K
    return _raster_kernel(mesh_cam.vertices, mesh_cam.faces, K[0, 0], K[1, 1], K[0, 2], K[1, 2], K[0, 1],
                          x0, y0, x1, y1, NEAR_PLANE)


def rasterize(mesh: TriMesh, camera: Camera) -> SceneView:
    """Render depth (camera z) and per-pixel semantics of a world-frame mesh.

    A pixel's label is that of the winning triangle's corner nearest the
    surface point hit by the pixel ray.  Hits beyond max_depth are dropped.
    """
    if mesh.n_vertices == 0 or len(mesh.faces) == 0:
        raise ValueError("rasterize: empty mesh")
    cam_verts = camera.world_to_camera(mesh.vertices)
    mesh_cam = TriMesh(cam_verts, mesh.faces, mesh.semantic, frame="camera")
    zbuf, fbuf = zbuffer(mesh_cam, camera)
    hit = np.isfinite(zbuf) & (zbuf <= camera.max_depth)
    depth = np.where(hit, zbuf, 0.0)
    sem = np.full(zbuf.shape, BACKGROUND, dtype=np.uint8)
    if hit.any():
        K = camera.K
        _label_kernel(depth, fbuf, mesh_cam.faces, cam_verts, mesh.labels_or(0).astype(np.int64),
                      K[0, 0], K[1, 1], K[0, 2], K[1, 2], K[0, 1], sem)
    return SceneView(depth.astype(np.float32), sem, camera)
