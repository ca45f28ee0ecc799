from __future__ import annotations

import numpy as np
import torch

_DEGENERATE = 1e-8


def rot6d_to_matrix(r6):
    """Gram-Schmidt a 6D vector (..., 6) into a rotation matrix (..., 3, 3).

    Columns are a = r[0:3]/|r[0:3]|, b = the normalized part of r[3:6]
    orthogonal to a, and a x b.  Works on numpy arrays or torch tensors.
    """
    is_np = not isinstance(r6, torch.Tensor)
    r = torch.as_tensor(np.asarray(r6, dtype=np.float64)) if is_np else r6
    a_raw, b_raw = r[..., 0:3], r[..., 3:6]
    na = a_raw.norm(dim=-1, keepdim=True)
    if (na.detach() < _DEGENERATE).any():
        raise ValueError("rot6d_to_matrix: first column is (near) zero")
    a = a_raw / na
    b_res = b_raw - (a * b_raw).sum(-1, keepdim=True) * a
    nb = b_res.norm(dim=-1, keepdim=True)
    if (nb.detach() < _DEGENERATE * torch.clamp(b_raw.detach().norm(dim=-1, keepdim=True), min=1.0)).any():
        raise ValueError("rot6d_to_matrix: second column is (near) parallel to the first")
    b = b_res / nb
    c = torch.cross(a, b, dim=-1)
    R = torch.stack([a, b, c], dim=-1)
    return R.numpy() if is_np else R


def matrix_to_rot6d(R):
    """First two columns of R, flattened to (..., 6)."""
    if isinstance(R, torch.Tensor):
        return torch.cat([R[..., :, 0], R[..., :, 1]], dim=-1)
    R = np.asarray(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def axis_angle_to_matrix(v: torch.Tensor) -> torch.Tensor:
    """Rodrigues' formula for (..., 3) axis-angle vectors, smooth at zero."""
    theta2 = (v * v).sum(-1, keepdim=True)[..., None]
    small = theta2 < 1e-12
    safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = safe.sqrt()
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zero = torch.zeros_like(x)
    K = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(*v.shape[:-1], 3, 3)
    eye = torch.eye(3, dtype=v.dtype).expand_as(K)
    return eye + a * K + b * (K @ K)


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return axis_angle_to_matrix(torch.as_tensor(axis * angle)).numpy()
