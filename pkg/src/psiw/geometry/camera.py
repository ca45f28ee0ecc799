"""Pinhole cameras and the normalized 2.5D projection used for body translations.

Camera frame follows the OpenCV/Open3D convention: x right, y down, z along
the optical axis.  The world frame has gravity along -y and the floor at y=0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

DEFAULT_WIDTH = 480
DEFAULT_HEIGHT = 270
DEFAULT_FOCAL = 233.826
DEFAULT_MAX_DEPTH = 10.0
WORLD_UP = np.array([0.0, 1.0, 0.0])


def default_intrinsics() -> np.ndarray:
    """Open3D default K for a 480x270 image."""
    return np.array([
        [DEFAULT_FOCAL, 0.0, 239.5],
        [0.0, DEFAULT_FOCAL, 134.5],
        [0.0, 0.0, 1.0],
    ])


def check_rigid(T: np.ndarray, tol: float = 1e-9, what: str = "transform") -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise ValueError(f"{what} must be 4x4, got {T.shape}")
    R = T[:3, :3]
    if np.abs(R.T @ R - np.eye(3)).max() >= tol or np.linalg.det(R) <= 0:
        raise ValueError(f"{what} rotation block is not a proper orthonormal matrix")
    if np.abs(T[3] - [0, 0, 0, 1]).max() > tol:
        raise ValueError(f"{what} last row must be (0, 0, 0, 1)")
    return T


@dataclass
class Camera:
    K: np.ndarray
    T_cw: np.ndarray  # camera-to-world
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    max_depth: float = DEFAULT_MAX_DEPTH

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        if self.K.shape != (3, 3) or abs(self.K[1, 0]) + abs(self.K[2, 0]) + abs(self.K[2, 1]) > 0:
            raise ValueError("intrinsics must be an upper-triangular 3x3 matrix")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0 or self.K[2, 2] != 1.0:
            raise ValueError("intrinsics need positive focal lengths and K[2,2] = 1")
        self.T_cw = check_rigid(self.T_cw, what="camera extrinsics")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")
        self.width, self.height = int(self.width), int(self.height)

    @classmethod
    def default(cls, T_cw=None, max_depth: float = DEFAULT_MAX_DEPTH) -> "Camera":
        return cls(default_intrinsics(), np.eye(4) if T_cw is None else T_cw,
                   DEFAULT_WIDTH, DEFAULT_HEIGHT, max_depth)

    @property
    def T_wc(self) -> np.ndarray:
        R, t = self.T_cw[:3, :3], self.T_cw[:3, 3]
        out = np.eye(4)
        out[:3, :3] = R.T
        out[:3, 3] = -R.T @ t
        return out

    @property
    def position(self) -> np.ndarray:
        return self.T_cw[:3, 3].copy()

    def world_to_camera(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.T_cw[:3, 3]) @ self.T_cw[:3, :3]

    def camera_to_world(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.T_cw[:3, :3].T + self.T_cw[:3, 3]

    def pixel(self, points_cam) -> np.ndarray:
        """Pixel coordinates (u, v) of camera-frame points (pixel centers at integers)."""
        p = np.asarray(points_cam, dtype=np.float64)
        K = self.K
        z = p[..., 2]
        u = (K[0, 0] * p[..., 0] + K[0, 1] * p[..., 1]) / z + K[0, 2]
        v = K[1, 1] * p[..., 1] / z + K[1, 2]
        return np.stack([u, v], axis=-1)

    def to_json(self) -> dict:
        return {
            "K": self.K.reshape(-1).tolist(),
            "T_cw": self.T_cw.reshape(-1).tolist(),
            "width": self.width,
            "height": self.height,
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(np.array(d["K"], dtype=np.float64).reshape(3, 3),
                   np.array(d["T_cw"], dtype=np.float64).reshape(4, 4),
                   d["width"], d["height"], d["max_depth"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Camera":
        return cls.from_json(json.loads(Path(path).read_text()))


def look_at(position, target, up=WORLD_UP) -> np.ndarray:
    """Camera-to-world transform with +z toward ``target`` and x parallel to the ground."""
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    n = np.linalg.norm(x)
    if n < 1e-9:
        raise ValueError("viewing direction is parallel to the up axis")
    x /= n
    y = np.cross(z, x)
    T = np.eye(4)
    T[:3, :3] = np.stack([x, y, z], axis=1)
    T[:3, 3] = position
    return T


# ---------------------------------------------------------------------------
# normalized projection

def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def project(points, camera: Camera):
    """Camera-frame points -> normalized (u, v, d) in [-1, 1]^3.

    u, v: pixel coordinates mapped affinely from [0, W] x [0, H];
    d: depth divided by max_depth, mapped from [0, 1].  Accepts numpy
    arrays or torch tensors (differentiable) of shape (..., 3).
    """
    z = points[..., 2]
    zc = z.detach() if _is_torch(z) else np.asarray(z)
    bad = np.flatnonzero(np.asarray(zc).reshape(-1) <= 0)
    if bad.size:
        raise ValueError(f"project: point {int(bad[0])} has non-positive depth {float(np.asarray(zc).reshape(-1)[bad[0]])}")
    K = camera.K
    x, y = points[..., 0], points[..., 1]
    u = (K[0, 0] * x + K[0, 1] * y) / z + K[0, 2]
    v = K[1, 1] * y / z + K[1, 2]
    cols = [2.0 * u / camera.width - 1.0, 2.0 * v / camera.height - 1.0, 2.0 * z / camera.max_depth - 1.0]
    return torch.stack(cols, dim=-1) if _is_torch(points) else np.stack(cols, axis=-1)


def unproject(coords, camera: Camera):
    """Inverse of :func:`project`."""
    c = coords.detach() if _is_torch(coords) else np.asarray(coords)
    if np.any(np.abs(np.asarray(c)) > 1.0 + 1e-12):
        raise ValueError("unproject: coordinates outside [-1, 1]^3")
    K = camera.K
    u = (coords[..., 0] + 1.0) * camera.width / 2.0
    v = (coords[..., 1] + 1.0) * camera.height / 2.0
    z = (coords[..., 2] + 1.0) * camera.max_depth / 2.0
    y = (v - K[1, 2]) * z / K[1, 1]
    x = ((u - K[0, 2]) * z - K[0, 1] * y) / K[0, 0]
    cols = [x, y, z]
    return torch.stack(cols, dim=-1) if _is_torch(coords) else np.stack(cols, axis=-1)
