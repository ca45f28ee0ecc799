from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from psiw.body.rotation import axis_angle_to_matrix, rot6d_to_matrix
from psiw.body.template import (
    DEFAULT_CONTACT_PARTS, N_BETAS, N_BODY_JOINTS, N_HAND, N_POSE_LATENT, BodyTemplate,
)
from psiw.geometry.camera import check_rigid
from psiw.geometry.mesh import TriMesh

DIM = 75
T_SLICE = slice(0, 3)
R_SLICE = slice(3, 9)
BETA_SLICE = slice(9, 19)
THETA_B_SLICE = slice(19, 51)
THETA_H_SLICE = slice(51, 75)
LOCAL_SLICE = slice(3, 75)
POSE_SCALE = 1.0  # latent pre-scaling inside tanh


@dataclass
class BodyParams:
    """x_h = (t, R, beta, theta_b, theta_h); translation in meters, camera frame."""

    t: np.ndarray
    R: np.ndarray
    beta: np.ndarray
    theta_b: np.ndarray
    theta_h: np.ndarray

    def __post_init__(self):
        for name, n in (("t", 3), ("R", 6), ("beta", N_BETAS), ("theta_b", N_POSE_LATENT), ("theta_h", N_HAND)):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if v.shape != (n,):
                raise ValueError(f"BodyParams.{name} needs {n} entries, got {v.size}")
            if not np.isfinite(v).all():
                raise ValueError(f"BodyParams.{name} has non-finite entries")
            setattr(self, name, v)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.R, self.beta, self.theta_b, self.theta_h])

    @classmethod
    def from_vector(cls, x) -> "BodyParams":
        x = np.asarray(x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else x, dtype=np.float64).reshape(-1)
        if x.shape != (DIM,):
            raise ValueError(f"body feature vector must have {DIM} entries, got {x.size}")
        return cls(x[T_SLICE], x[R_SLICE], x[BETA_SLICE], x[THETA_B_SLICE], x[THETA_H_SLICE])

    @classmethod
    def identity(cls, t=(0.0, 0.0, 0.0)) -> "BodyParams":
        return cls(np.asarray(t, float), np.array([1.0, 0, 0, 0, 1.0, 0]), np.zeros(N_BETAS),
                   np.zeros(N_POSE_LATENT), np.zeros(N_HAND))


def pose_decode(theta_b, template: BodyTemplate):
    """Pose latent (..., 32) -> per-joint axis-angle rotations (..., 22, 3).

    rotations = A tanh(s * theta_b); row 0 (the pelvis) is always zero since
    global orientation is carried by R.  Odd in theta_b, bounded by the
    template's limit table.
    """
    is_np = not isinstance(theta_b, torch.Tensor)
    th = torch.as_tensor(np.asarray(theta_b, dtype=np.float64)) if is_np else theta_b
    A = template.torch("pose_matrix", th.dtype)
    out = (torch.tanh(POSE_SCALE * th) @ A.T).reshape(*th.shape[:-1], N_BODY_JOINTS, 3)
    return out.numpy() if is_np else out


def hand_rotations(theta_h: torch.Tensor, template: BodyTemplate) -> torch.Tensor:
    """(..., 24) -> (..., 2, 3) axis-angle of the two hand roots."""
    H = template.torch("hand_map", theta_h.dtype)
    q = theta_h.reshape(*theta_h.shape[:-1], 2, 12)
    return torch.einsum("hij,...hj->...hi", H, q)


@lru_cache(maxsize=8)
def _tree_levels(parents: tuple):
    """Joints grouped by depth, plus each joint's parent position in level order."""
    depth = [0] * len(parents)
    for j, p in enumerate(parents):
        depth[j] = 0 if p < 0 else depth[p] + 1
    levels = [np.array([j for j in range(len(parents)) if depth[j] == d]) for d in range(max(depth) + 1)]
    order = np.concatenate(levels)
    pos = {int(j): k for k, j in enumerate(order)}
    parent_pos = [None] + [np.array([pos[parents[j]] for j in lv]) for lv in levels[1:]]
    return order, levels, parent_pos


def skin(beta: torch.Tensor, local_rot: torch.Tensor, template: BodyTemplate) -> torch.Tensor:
    """Linear blend skinning in the body frame.

    beta (B, 10), local_rot (B, J, 3, 3) -> posed vertices (B, V, 3).
    """
    dt = beta.dtype
    v = template.torch("vertices", dt) + torch.einsum("bk,kvc->bvc", beta, template.torch("shape_dirs", dt))
    J = template.torch("rest_joints", dt) + torch.einsum("bk,kjc->bjc", beta, template.torch("joint_shape_dirs", dt))
    # walk the tree one depth level at a time; ``order`` lists joints in level order
    order, levels, parent_pos = _tree_levels(tuple(int(p) for p in template.parents))
    g_rot, g_t = local_rot[:, :1], J[:, :1]
    for idx, ppos in zip(levels[1:], parent_pos[1:]):
        pr = g_rot[:, ppos]
        g_t = torch.cat([g_t, (pr @ (J[:, idx] - J[:, template.parents[idx]])[..., None])[..., 0] + g_t[:, ppos]], 1)
        g_rot = torch.cat([g_rot, pr @ local_rot[:, idx]], 1)
    inv = np.argsort(order)
    G = g_rot[:, inv]  # (B, J, 3, 3)
    Gt = g_t[:, inv]  # (B, J, 3)
    A_t = Gt - (G @ J[..., None])[..., 0]
    W = template.torch("weights", dt)
    B, n_j = G.shape[:2]
    M = W @ torch.cat([G.reshape(B, n_j, 9), A_t], -1)  # per-vertex blended [R | t], (B, V, 12)
    return (M[..., :9].reshape(B, -1, 3, 3) @ v[..., None])[..., 0] + M[..., 9:]


def body_vertices(x_h, template: BodyTemplate) -> torch.Tensor:
    """Differentiable vertices (B, V, 3) for feature vectors x_h (B, 75) or (75,)."""
    x = torch.as_tensor(np.asarray(x_h, dtype=np.float64)) if not isinstance(x_h, torch.Tensor) else x_h
    single = x.dim() == 1
    if single:
        x = x[None]
    if x.shape[-1] != DIM:
        raise ValueError(f"expected {DIM}-dim body features, got {x.shape[-1]}")
    body_rot = axis_angle_to_matrix(pose_decode(x[:, THETA_B_SLICE], template))
    hand_rot = axis_angle_to_matrix(hand_rotations(x[:, THETA_H_SLICE], template))
    local = torch.cat([body_rot, hand_rot], dim=1)
    posed = skin(x[:, BETA_SLICE], local, template)
    R = rot6d_to_matrix(x[:, R_SLICE])
    out = posed @ R.transpose(-1, -2) + x[:, None, T_SLICE]
    return out[0] if single else out


def body_mesh(params: BodyParams, template: BodyTemplate) -> TriMesh:
    """Posed mesh in the camera frame (numpy); use body_vertices for gradients."""
    with torch.no_grad():
        v = body_vertices(torch.as_tensor(params.to_vector()), template).numpy()
    return TriMesh(v, template.faces, frame="camera")


def transform_to_world(vertices, T_cw):
    """Apply a rigid camera-to-world transform to (..., 3) points (numpy or torch)."""
    T = check_rigid(T_cw, what="T_cw")
    if isinstance(vertices, TriMesh):
        return vertices.transformed(T, frame="world")
    if isinstance(vertices, torch.Tensor):
        Tt = torch.as_tensor(T, dtype=vertices.dtype)
        return vertices @ Tt[:3, :3].T + Tt[:3, 3]
    return np.asarray(vertices) @ T[:3, :3].T + T[:3, 3]


def contact_vertices(template: BodyTemplate, parts=DEFAULT_CONTACT_PARTS) -> np.ndarray:
    """Indices of template vertices whose part label is in ``parts``."""
    return template.part_vertices(parts)
