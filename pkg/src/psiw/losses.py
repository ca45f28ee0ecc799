"""Training and fitting objectives.

All terms take torch tensors and stay differentiable; batched inputs
(leading batch dimension) are averaged over the batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from psiw.body.model import LOCAL_SLICE, T_SLICE, THETA_B_SLICE
from psiw.geometry.camera import Camera, project
from psiw.geometry.mesh import TriMesh
from psiw.geometry.sdf import SdfGrid, sample_sdf


@dataclass
class LossWeights:
    alpha_kl: float = 0.1
    alpha_vp: float = 0.001
    alpha_cont: float = 0.001
    alpha_coll: float = 0.01
    alpha_1: float = 0.1
    alpha_2: float = 0.5
    alpha_3: float = 0.01
    geman_sigma: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")
            setattr(self, f.name, v)
        if self.geman_sigma <= 0:
            raise ValueError("geman_sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _batch_mean(x: torch.Tensor) -> torch.Tensor:
    return x.mean() if x.dim() else x


def loss_reconstruction(x_h: torch.Tensor, x_h_rec: torch.Tensor, camera: Camera) -> torch.Tensor:
    """(|t - t'| + |pi(t) - pi(t')|) / 2 + |x_l - x_l'|, each |.| a mean absolute error."""
    if x_h.shape[-1] != 75 or x_h_rec.shape[-1] != 75:
        raise ValueError("reconstruction loss expects 75-dim body features")
    t, t_rec = x_h[..., T_SLICE], x_h_rec[..., T_SLICE]
    glob = (t - t_rec).abs().mean(-1)
    proj = (project(t, camera) - project(t_rec, camera)).abs().mean(-1)
    local = (x_h[..., LOCAL_SLICE] - x_h_rec[..., LOCAL_SLICE]).abs().mean(-1)
    return _batch_mean((glob + proj) / 2.0 + local)


def kl_divergence(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, exp(log_var)) || N(0, I)) summed over the last axis."""
    if mu.shape != log_var.shape:
        raise ValueError(f"mu {tuple(mu.shape)} and log_var {tuple(log_var.shape)} differ")
    return 0.5 * (log_var.exp() + mu * mu - 1.0 - log_var).sum(-1)


def loss_kl(mu, log_var) -> torch.Tensor:
    """KL term; pass lists of (mu, log_var) for the two-stage model to sum the branches."""
    if isinstance(mu, (list, tuple)):
        return sum(loss_kl(m, lv) for m, lv in zip(mu, log_var))
    return _batch_mean(kl_divergence(mu, log_var))


def loss_vposer(theta_b_rec: torch.Tensor) -> torch.Tensor:
    return _batch_mean((theta_b_rec * theta_b_rec).sum(-1))


def loss_collision(body_world: torch.Tensor, sdf: SdfGrid) -> torch.Tensor:
    """Mean over body vertices of |min(SDF, 0)|.  body_world: (..., V, 3)."""
    s = sample_sdf(sdf, body_world)
    return _batch_mean(torch.clamp(s, max=0.0).abs().mean(-1))


def geman_mcclure(e, sigma: float):
    s2 = sigma * sigma
    return e * e * s2 / (s2 + e * e)


def nearest_scene_points(points: np.ndarray, scene: TriMesh) -> np.ndarray:
    """Nearest scene vertex for each query point (KD-tree, no gradient)."""
    _, idx = scene.kdtree.query(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    return scene.vertices[idx].reshape(np.shape(points))


def loss_contact(body_world: torch.Tensor, scene: TriMesh, contact_idx, sigma: float = 0.2) -> torch.Tensor:
    """Sum over contact vertices of rho(distance to the nearest scene vertex).

    The nearest neighbour is re-associated on every call and treated as a
    constant; gradients reach the body vertices only.
    """
    if scene.n_vertices == 0:
        raise ValueError("loss_contact: empty scene")
    contact_idx = np.asarray(contact_idx)
    if contact_idx.size == 0:
        raise ValueError("loss_contact: empty contact vertex set")
    vc = body_world[..., contact_idx, :]
    target = torch.as_tensor(nearest_scene_points(vc.detach().cpu().numpy(), scene), dtype=vc.dtype)
    d = (vc - target).norm(dim=-1)
    return _batch_mean(geman_mcclure(d, sigma).sum(-1))


def loss_total(rec, kl, vposer, contact, collision, weights: LossWeights, hs_enabled: bool,
               alpha_kl: float | None = None):
    """L_rec + a_kl L_KL + a_vp L_VPoser [+ a_cont L_contact + a_coll L_collision]."""
    a_kl = weights.alpha_kl if alpha_kl is None else alpha_kl
    total = rec + a_kl * kl + weights.alpha_vp * vposer
    if hs_enabled:
        total = total + weights.alpha_cont * contact + weights.alpha_coll * collision
    return total


def loss_fitting(x_h: torch.Tensor, x_h_0: torch.Tensor, body_world: torch.Tensor, scene: TriMesh,
                 sdf: SdfGrid, weights: LossWeights, contact_idx, return_terms: bool = False):
    """|x_h - x_h0| + a1 L_contact + a2 L_collision + a3 L_VPoser (mean-abs deviation)."""
    dev = (x_h - x_h_0).abs().mean()
    zero = x_h.new_zeros(())
    contact = loss_contact(body_world, scene, contact_idx, weights.geman_sigma) if weights.alpha_1 else zero
    coll = loss_collision(body_world, sdf) if weights.alpha_2 else zero
    vp = loss_vposer(x_h[..., THETA_B_SLICE]) if weights.alpha_3 else zero
    total = dev + weights.alpha_1 * contact + weights.alpha_2 * coll + weights.alpha_3 * vp
    if return_terms:
        return total, {"deviation": dev, "contact": contact, "collision": coll, "vposer": vp}
    return total
