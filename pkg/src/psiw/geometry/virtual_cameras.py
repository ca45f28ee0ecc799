"""Virtual camera placement around a body inside a room."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from psiw.geometry.camera import Camera, default_intrinsics, look_at, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_MAX_DEPTH
from psiw.geometry.mesh import TriMesh
from psiw.geometry.raster import zbuffer
from psiw.semantics import CEILING, FLOOR, WALL


class NoCameraError(RuntimeError):
    pass


@dataclass
class CameraConstraints:
    min_distance: float = 1.65
    max_distance: float = 6.5
    patch_radius: int = 10  # pixels around the projected pelvis
    occlusion_margin: float = 0.25  # scene surfaces this much in front of the pelvis count as occluders
    ceiling_margin: float = 0.1
    wall_margin: float = 0.25


@dataclass
class RoomExtent:
    floor: float
    ceiling: float
    lo: np.ndarray  # (x, z) of the free interior
    hi: np.ndarray

    @property
    def height(self) -> float:
        return self.ceiling - self.floor


def room_extent(scene: TriMesh) -> RoomExtent:
    """Floor/ceiling heights and horizontal interior from the semantic labels."""
    if scene.semantic is None:
        raise ValueError("scene mesh has no semantic labels")
    lab = scene.semantic
    floor, ceil, wall = lab == FLOOR, lab == CEILING, lab == WALL
    if not floor.any() or not ceil.any():
        raise ValueError("scene has no identifiable floor/ceiling (need floor and ceiling labels)")
    structure = scene.vertices[floor | ceil | wall]
    return RoomExtent(float(scene.vertices[floor, 1].min()), float(scene.vertices[ceil, 1].max()),
                      structure[:, [0, 2]].min(axis=0), structure[:, [0, 2]].max(axis=0))


def check_camera(camera: Camera, scene: TriMesh, pelvis, extent: RoomExtent | None = None,
                 constraints: CameraConstraints | None = None) -> dict[str, bool]:
    """Evaluate the placement constraints for one camera; keys map to pass/fail."""
    c = constraints or CameraConstraints()
    extent = extent or room_extent(scene)
    pelvis = np.asarray(pelvis, dtype=np.float64)
    pos = camera.position
    x_axis = camera.T_cw[:3, 0]
    out = {
        "height": bool(pos[1] > extent.floor + 0.5 * extent.height and pos[1] < extent.ceiling),
        "x_parallel_ground": bool(abs(x_axis[1]) < 1e-9),
        "distance": bool(c.min_distance <= np.linalg.norm(pos - pelvis) <= c.max_distance),
    }
    out["unoccluded"] = _pelvis_visible(camera, scene, pelvis, c)
    return out


def _pelvis_visible(camera: Camera, scene: TriMesh, pelvis, c: CameraConstraints) -> bool:
    p_cam = camera.world_to_camera(pelvis)
    if p_cam[2] <= 0:
        return False
    u, v = camera.pixel(p_cam)
    r = c.patch_radius
    cu, cv = int(round(u)), int(round(v))
    if cu - r < 0 or cv - r < 0 or cu + r >= camera.width or cv + r >= camera.height:
        return False
    scene_cam = TriMesh(camera.world_to_camera(scene.vertices), scene.faces, frame="camera")
    zbuf, _ = zbuffer(scene_cam, camera, (cu - r, cv - r, cu + r + 1, cv + r + 1))
    return bool((zbuf >= p_cam[2] - c.occlusion_margin).all())


def generate_virtual_cameras(scene: TriMesh, body_center, count: int | None = None, seed: int = 0,
                             grid_step: float = 0.75, height_levels: int = 3, noise_sigma: float = 0.15,
                             constraints: CameraConstraints | None = None,
                             width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                             max_depth: float = DEFAULT_MAX_DEPTH) -> list[Camera]:
    """Cameras on a room-spanning grid aimed at ``body_center`` (the pelvis).

    Candidates lie on a horizontal grid over the room interior at
    ``height_levels`` heights between max(pelvis, half room height) and the
    ceiling; each is aimed at the pelvis with its x axis level, then its
    translation is perturbed by isotropic Gaussian noise.  Survivors of
    :func:`check_camera` are returned in seeded random order, at most
    ``count`` of them if given.  Raises NoCameraError if none survive.
    """
    c = constraints or CameraConstraints()
    rng = np.random.default_rng(seed)
    extent = room_extent(scene)
    pelvis = np.asarray(body_center, dtype=np.float64)
    lo = extent.lo + c.wall_margin
    hi = extent.hi - c.wall_margin
    xs = _grid_axis(lo[0], hi[0], grid_step)
    zs = _grid_axis(lo[1], hi[1], grid_step)
    h_lo = max(pelvis[1], extent.floor + 0.5 * extent.height)
    h_hi = extent.ceiling - c.ceiling_margin
    if h_hi <= h_lo:
        raise NoCameraError("no room between the pelvis/half-height and the ceiling")
    hs = np.linspace(h_lo, h_hi, height_levels + 2)[1:-1]
    K = default_intrinsics() if (width, height) == (DEFAULT_WIDTH, DEFAULT_HEIGHT) else _scaled_intrinsics(width, height)

    grid = [np.array([x, h, z]) for x in xs for h in hs for z in zs]
    noise = rng.normal(0.0, noise_sigma, size=(len(grid), 3))
    survivors = []
    # candidates are visited in seeded random order so ``count`` can stop early
    for i in rng.permutation(len(grid)):
        pos = grid[i]
        if np.linalg.norm(pos[[0, 2]] - pelvis[[0, 2]]) < 1e-6:
            continue
        moved = pos + noise[i]
        # cheap rejections before building the camera
        if not (c.min_distance <= np.linalg.norm(moved - pelvis) <= c.max_distance):
            continue
        if not (extent.floor + 0.5 * extent.height < moved[1] < extent.ceiling):
            continue
        T = look_at(pos, pelvis)
        T[:3, 3] = moved
        cam = Camera(K, T, width, height, max_depth)
        if all(check_camera(cam, scene, pelvis, extent, c).values()):
            survivors.append(cam)
            if count is not None and len(survivors) >= count:
                break
    if not survivors:
        raise NoCameraError("no virtual camera satisfies the placement constraints")
    return survivors


def _grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(1, int(np.floor((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2])


def _scaled_intrinsics(width: int, height: int) -> np.ndarray:
    K = default_intrinsics()
    s = width / DEFAULT_WIDTH
    K[0, 0] *= s
    K[1, 1] *= s
    K[0, 2] = (width - 1) / 2.0
    K[1, 2] = (height - 1) / 2.0
    return K
