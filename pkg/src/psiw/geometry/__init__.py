from psiw.geometry.camera import (
    Camera, check_rigid, default_intrinsics, look_at, project, unproject,
    DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_MAX_DEPTH,
)
from psiw.geometry.mesh import TriMesh, box_mesh, concatenate, subdivide
from psiw.geometry.raster import BACKGROUND, SceneView, rasterize, zbuffer
from psiw.geometry.sdf import SdfGrid, compute_sdf, sample_sdf, sample_sdf_checked
from psiw.geometry.virtual_cameras import (
    CameraConstraints, NoCameraError, check_camera, generate_virtual_cameras, room_extent,
)

__all__ = [
    "Camera", "check_rigid", "default_intrinsics", "look_at", "project", "unproject",
    "DEFAULT_WIDTH", "DEFAULT_HEIGHT", "DEFAULT_MAX_DEPTH",
    "TriMesh", "box_mesh", "concatenate", "subdivide",
    "BACKGROUND", "SceneView", "rasterize", "zbuffer",
    "SdfGrid", "compute_sdf", "sample_sdf", "sample_sdf_checked",
    "CameraConstraints", "NoCameraError", "check_camera", "generate_virtual_cameras", "room_extent",
]
