"""Diversity and physical plausibility metrics, and the scene-dependent pose prior."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
from sklearn.cluster import KMeans

from psiw.body.model import THETA_B_SLICE, BodyParams
from psiw.geometry.mesh import TriMesh
from psiw.geometry.sdf import SdfGrid, sample_sdf

PRIOR_WEIGHT_MULTIPLIER = 1.5


@dataclass
class EvalReport:
    cluster_entropy: float
    mean_cluster_size: float
    non_collision_score: float
    contact_ratio: float
    n_bodies: int
    seed: int
    occupied_clusters: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def table(self) -> str:
        rows = [("bodies", f"{self.n_bodies}"),
                ("cluster entropy (nats)", f"{self.cluster_entropy:.4f}"),
                ("mean cluster size", f"{self.mean_cluster_size:.4f}"),
                ("non-collision score", f"{self.non_collision_score:.4f}"),
                ("contact ratio", f"{self.contact_ratio:.4f}")]
        w = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def _as_matrix(bodies) -> np.ndarray:
    rows = [b.to_vector() if isinstance(b, BodyParams) else np.asarray(b, dtype=np.float64) for b in bodies]
    return np.stack(rows) if rows else np.zeros((0, 75))


def cluster_entropy(labels: np.ndarray, k: int) -> float:
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum()) + 0.0  # no -0.0 for a single cluster


def diversity_metric(bodies, k: int = 20, seed: int = 0, return_labels: bool = False):
    """K-means (k-means++, 5 restarts, 100 iterations) on the 75-D parameters.

    Returns (entropy of the cluster-id histogram in nats, mean over occupied
    clusters of the mean member-to-centroid distance).
    """
    X = _as_matrix(bodies)
    if len(X) < k:
        raise ValueError(f"diversity_metric needs at least k={k} bodies, got {len(X)}")
    n_distinct = len(np.unique(X, axis=0))
    if n_distinct < k:
        # k-means cannot place k distinct centroids; identical points share one cluster
        centres, labels = np.unique(X, axis=0, return_inverse=True)
        labels = labels.reshape(-1)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            km = KMeans(n_clusters=k, init="k-means++", n_init=5, max_iter=100, random_state=seed).fit(X)
        labels, centres = km.labels_, km.cluster_centers_
    dist = np.linalg.norm(X - centres[labels], axis=1)
    sizes = [dist[labels == c].mean() for c in np.unique(labels)]
    out = (cluster_entropy(labels, max(k, n_distinct)), float(np.mean(sizes)))
    return (*out, labels) if return_labels else out


def _vertex_arrays(bodies):
    for b in bodies:
        if isinstance(b, TriMesh):
            yield b.vertices
        elif isinstance(b, torch.Tensor):
            yield b.detach().cpu().numpy()
        else:
            yield np.asarray(b, dtype=np.float64)


def physical_metric(bodies, sdf: SdfGrid) -> tuple[float, float]:
    """(fraction of vertices with SDF > 0, fraction of bodies with a vertex at SDF <= 0).

    ``bodies`` are world-frame meshes or (V, 3) vertex arrays.
    """
    bodies = list(bodies)
    if not bodies:
        raise ValueError("physical_metric: no bodies")
    n_free = n_total = n_contact = 0
    n_out = 0
    for v in _vertex_arrays(bodies):
        s, outside = sample_sdf(sdf, v, return_outside=True)
        n_out += int(outside.sum())
        n_free += int((s > 0).sum())
        n_total += s.size
        n_contact += bool((s <= 0).any())
    if n_out:
        warnings.warn(f"physical_metric: {n_out} vertices outside the SDF grid were clamped", stacklevel=2)
    return n_free / n_total, n_contact / len(bodies)


def evaluate(bodies: list[BodyParams], world_vertices, sdf: SdfGrid, k: int = 20, seed: int = 0) -> EvalReport:
    entropy, size, labels = diversity_metric(bodies, k, seed, return_labels=True)
    non_coll, contact = physical_metric(world_vertices, sdf)
    return EvalReport(entropy, size, non_coll, contact, len(bodies), seed, int(len(np.unique(labels))))


# ---------------------------------------------------------------------------
# scene-dependent pose prior

def derive_pose_prior(model, scene, n: int = 100, seed: int = 0) -> np.ndarray:
    """Mean pose latent theta_b over n bodies sampled for ``scene``."""
    from psiw.cvae import sample

    if n < 1:
        raise ValueError("derive_pose_prior needs n >= 1")
    bodies = sample(model, scene, n, seed)
    return np.mean(np.stack([b.theta_b for b in bodies]), axis=0)


def prior_regularizer(theta_b, theta_b_s):
    """|theta_b - theta_b^s|^2 (numpy or torch)."""
    if isinstance(theta_b, torch.Tensor):
        d = theta_b - torch.as_tensor(theta_b_s, dtype=theta_b.dtype)
        return (d * d).sum(-1)
    d = np.asarray(theta_b, dtype=np.float64) - np.asarray(theta_b_s, dtype=np.float64)
    return float((d * d).sum())


def prior_weight_multiplier() -> float:
    """Factor applied to the pose-regularizer weight when the scene prior replaces the zero prior."""
    return PRIOR_WEIGHT_MULTIPLIER
