"""Scene geometry-aware refinement of a generated body.

Parameters stay in the camera frame; contact and collision are evaluated
on the body transformed to the world frame by T_cw.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from psiw.body.model import BodyParams, body_vertices, contact_vertices
from psiw.body.template import DEFAULT_CONTACT_PARTS, BodyTemplate
from psiw.diffcore import Adam, NonFiniteGradientError
from psiw.geometry.camera import check_rigid
from psiw.geometry.mesh import TriMesh
from psiw.geometry.sdf import SdfGrid
from psiw.losses import LossWeights, loss_fitting


@dataclass
class FitResult:
    x_h_refined: BodyParams
    loss_trace: list = field(default_factory=list)  # (iteration, L_f, L_contact, L_collision)
    converged: bool = False
    iterations_used: int = 0
    deviation: float = 0.0
    best_iteration: int = 0


def fit_body(x_h_0: BodyParams, scene: TriMesh, sdf: SdfGrid, T_cw, template: BodyTemplate,
             weights: LossWeights | None = None, max_iters: int = 300, lr: float = 0.01,
             contact_parts=DEFAULT_CONTACT_PARTS, rel_tol: float = 1e-5, window: int = 10,
             divergence_factor: float = 10.0, divergence_patience: int = 20) -> FitResult:
    """Minimize L_f over all 75 parameters with Adam, returning the best-seen iterate.

    Stops after ``max_iters`` updates, or once the best loss improved by less
    than ``rel_tol`` (relative) over the last ``window`` iterations; only the
    latter sets converged = True.  If the
    loss stays above ``divergence_factor`` x the initial value for
    ``divergence_patience`` consecutive iterations the run is abandoned with
    converged = False.  The trace has one entry per evaluated iterate; its
    last entry repeats the returned best iterate.
    """
    weights = weights or LossWeights()
    T = torch.as_tensor(check_rigid(T_cw, what="T_cw"))
    x0 = torch.as_tensor(x_h_0.to_vector())
    if not torch.isfinite(x0).all():
        raise ValueError("fit_body: initial parameters are not finite")
    idx = contact_vertices(template, contact_parts)
    x = x0.clone().requires_grad_(True)
    opt = Adam([x], lr=lr)

    def evaluate(xv):
        verts = body_vertices(xv, template) @ T[:3, :3].T + T[:3, 3]
        return loss_fitting(xv, x0, verts, scene, sdf, weights, idx, return_terms=True)

    trace, best_hist = [], []
    best_val, best_x, best_it = np.inf, x0.clone(), 0
    converged, over = False, 0
    initial = None
    it = 0
    for it in range(max_iters + 1):
        total, terms = evaluate(x)
        val = float(total.detach())
        if it == 0:
            if not np.isfinite(val):
                raise ValueError("fit_body: non-finite fitting loss at the initial parameters")
            initial = val
        trace.append((it, val, float(terms["contact"].detach()), float(terms["collision"].detach())))
        if np.isfinite(val) and val < best_val:
            best_val, best_x, best_it = val, x.detach().clone(), it
        best_hist.append(best_val)
        if len(best_hist) > window and best_hist[-window - 1] - best_val <= rel_tol * abs(best_hist[-window - 1]):
            converged = True
            break
        over = over + 1 if (not np.isfinite(val) or val > divergence_factor * initial) else 0
        if over >= divergence_patience:
            break
        if it == max_iters:
            break
        try:
            opt.step(total)
        except NonFiniteGradientError:
            break
    if best_it != trace[-1][0]:
        total, terms = evaluate(best_x)
        trace.append((best_it, float(total.detach()), float(terms["contact"].detach()),
                      float(terms["collision"].detach())))
    deviation = float((best_x - x0).abs().mean())
    return FitResult(BodyParams.from_vector(best_x), trace, converged, it, deviation, best_it)
