"""Procedural box rooms and synthetic human-scene interaction pairs.

World frame: y up, floor at y = 0, room interior spans [0, width] x
[0, height] x [0, depth].  Furniture is a list of labelled axis-aligned
boxes standing on the floor.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from psiw import semantics as sem
from psiw.body.model import BodyParams, body_vertices, contact_vertices
from psiw.body.rotation import matrix_to_rot6d, rotation_about
from psiw.body.template import N_BETAS, N_HAND, N_POSE_LATENT, BodyTemplate
from psiw.geometry.camera import Camera
from psiw.geometry.mesh import TriMesh, box_mesh, concatenate, subdivide
from psiw.geometry.raster import BACKGROUND, SceneView, rasterize
from psiw.geometry.sdf import SdfGrid, compute_sdf, sample_sdf
from psiw.geometry.virtual_cameras import NoCameraError, generate_virtual_cameras

SITTABLE = (sem.CHAIR, sem.SOFA, sem.BED)
OVERLAP_TOL = 1e-6
SINK = 0.01  # contact vertices are pushed this far into their support
# per-sample jitter (std) around the canonical shape, pose latent and hand pose
SHAPE_JITTER = 0.1
POSE_JITTER = 0.05
HAND_JITTER = 0.05


@dataclass
class Furniture:
    category: int
    lo: np.ndarray  # box corners in world coordinates
    hi: np.ndarray
    orientation: int = 0  # facing direction in quarter turns about +y; 0 faces +z

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        self.category = int(self.category)
        self.orientation = int(self.orientation) % 4
        if (self.hi <= self.lo).any():
            raise ValueError(f"furniture box has non-positive extent: lo={self.lo}, hi={self.hi}")

    @property
    def front(self) -> np.ndarray:
        """Unit horizontal vector the piece faces (x, z)."""
        a = self.orientation * np.pi / 2
        return np.array([np.sin(a), np.cos(a)])

    def to_json(self) -> dict:
        return {"category": self.category, "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "orientation": self.orientation}

    @classmethod
    def from_json(cls, d: dict) -> "Furniture":
        return cls(d["category"], d["lo"], d["hi"], d.get("orientation", 0))


@dataclass
class RoomSpec:
    width: float
    depth: float
    height: float
    furniture: list = field(default_factory=list)
    seed: int = 0

    def validate(self):
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("room dimensions must be positive")
        room_hi = np.array([self.width, self.height, self.depth])
        for i, f in enumerate(self.furniture):
            if (f.lo < -OVERLAP_TOL).any() or (f.hi > room_hi + OVERLAP_TOL).any():
                raise ValueError(f"furniture {i} ({sem.NAMES.get(f.category, f.category)}) is outside the room")
            for j in range(i):
                g = self.furniture[j]
                overlap = np.minimum(f.hi, g.hi) - np.maximum(f.lo, g.lo)
                if (overlap > OVERLAP_TOL).all():
                    raise ValueError(f"furniture {j} and {i} overlap by {overlap.min():.3g} m")
        return self

    def to_json(self) -> dict:
        return {"width": self.width, "depth": self.depth, "height": self.height, "seed": self.seed,
                "furniture": [f.to_json() for f in self.furniture]}

    @classmethod
    def from_json(cls, d: dict) -> "RoomSpec":
        return cls(d["width"], d["depth"], d["height"], [Furniture.from_json(f) for f in d["furniture"]],
                   d.get("seed", 0))


def room_shell(width: float, depth: float, height: float) -> TriMesh:
    """Floor, ceiling and four walls with normals facing the interior."""
    shell = box_mesh((0, 0, 0), (width, height, depth), sem.WALL, inward=True)
    labels = np.full(24, sem.WALL, dtype=np.int64)
    labels[0:4] = sem.FLOOR
    labels[4:8] = sem.CEILING
    return TriMesh(shell.vertices, shell.faces, labels)


def synth_room(spec: RoomSpec) -> TriMesh:
    spec.validate()
    parts = [room_shell(spec.width, spec.depth, spec.height)]
    parts += [box_mesh(f.lo, f.hi, f.category) for f in spec.furniture]
    return concatenate(parts)


# (category, footprint along the facing axis, footprint across, height) ranges
_CATALOG = {
    sem.BED: ((1.9, 2.1), (1.3, 1.6), (0.45, 0.5)),
    sem.SOFA: ((0.75, 0.9), (1.6, 2.0), (0.42, 0.47)),
    sem.CHAIR: ((0.45, 0.5), (0.45, 0.5), (0.44, 0.48)),
    sem.TABLE: ((0.7, 0.9), (1.0, 1.4), (0.72, 0.76)),
    sem.DESK: ((0.6, 0.7), (1.1, 1.4), (0.72, 0.76)),
    sem.CABINET: ((0.4, 0.5), (0.8, 1.2), (1.6, 2.0)),
}


def random_room_spec(seed: int, n_furniture: int | None = None, clearance: float = 0.9) -> RoomSpec:
    """Seeded room with a bed/sofa/chairs mix placed without overlap.

    Sittable pieces face into the room and keep ``clearance`` metres free in
    front so sitting legs and standing bodies fit.
    """
    rng = np.random.default_rng(seed)
    width, depth = rng.uniform(4.0, 5.0, size=2)
    height = rng.uniform(2.6, 2.9)
    if n_furniture is None:
        n_furniture = int(rng.integers(3, 6))
    wanted = [sem.BED, sem.SOFA, sem.CHAIR, sem.CHAIR, sem.TABLE, sem.CABINET, sem.DESK]
    rng.shuffle(wanted[1:])
    furniture: list[Furniture] = []
    keepout: list[tuple[np.ndarray, np.ndarray]] = []
    for cat in wanted[:n_furniture]:
        (l0, l1), (w0, w1), (h0, h1) = _CATALOG[cat]
        for _ in range(200):
            along, across, h = rng.uniform(l0, l1), rng.uniform(w0, w1), rng.uniform(h0, h1)
            orientation = int(rng.integers(0, 4))
            ext = np.array([across, along]) if orientation % 2 == 0 else np.array([along, across])
            lo2 = rng.uniform([0.05, 0.05], [width - ext[0] - 0.05, depth - ext[1] - 0.05])
            hi2 = lo2 + ext
            a = orientation * np.pi / 2
            front = np.array([np.sin(a), np.cos(a)])
            gap = clearance if cat in SITTABLE else 0.4
            k_lo = lo2 - 0.2 + np.minimum(front, 0) * gap
            k_hi = hi2 + 0.2 + np.maximum(front, 0) * gap
            if (k_lo < -0.2 - 1e-9).any() or k_hi[0] > width + 0.2 or k_hi[1] > depth + 0.2:
                continue
            if cat in SITTABLE and ((k_lo < 0).any() or k_hi[0] > width or k_hi[1] > depth):
                continue
            if any((np.minimum(k_hi, b_hi) > np.maximum(k_lo, b_lo)).all() for b_lo, b_hi in keepout):
                continue
            keepout.append((k_lo, k_hi))
            furniture.append(Furniture(cat, (lo2[0], 0.0, lo2[1]), (hi2[0], h, hi2[1]), orientation))
            break
    return RoomSpec(float(width), float(depth), float(height), furniture, seed).validate()


# ---------------------------------------------------------------------------
# interactions

@dataclass
class InteractionSample:
    """One (view, body) training pair.

    ``depth_small``/``semantics_small`` hold the aspect-preserving
    nearest-neighbour downsample used by the scene encoder, so the full-size
    view can be dropped and re-rendered from ``camera`` when needed.
    """

    camera: Camera
    body: BodyParams
    scene_id: str
    split: str
    depth_small: np.ndarray
    semantics_small: np.ndarray
    kind: str = "stand"
    view: SceneView | None = None

    def full_view(self, scene: TriMesh) -> SceneView:
        return self.view if self.view is not None else rasterize(scene, self.camera)


def downsample_view(view: SceneView, size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour resize keeping the aspect ratio (long side -> size)."""
    H, W = view.depth.shape
    scale = size / max(H, W)
    h, w = int(round(H * scale)), int(round(W * scale))
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(np.int64), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(np.int64), W - 1)
    return (view.depth[np.ix_(rows, cols)].astype(np.float32),
            view.semantics[np.ix_(rows, cols)].astype(np.uint8))


def world_to_camera_params(R_w: np.ndarray, t_w: np.ndarray, body: np.ndarray, T_cw: np.ndarray) -> np.ndarray:
    """Camera-frame feature vector for a body with world pose (R_w, t_w)."""
    R_cw, t_cw = T_cw[:3, :3], T_cw[:3, 3]
    x = np.array(body, dtype=np.float64)
    x[0:3] = R_cw.T @ (t_w - t_cw)
    x[3:9] = matrix_to_rot6d(R_cw.T @ R_w)
    return x


def _world_vertices(x_world: np.ndarray, template: BodyTemplate) -> np.ndarray:
    with torch.no_grad():
        return body_vertices(torch.as_tensor(x_world), template).numpy()


def _body_vector(R_w, t_w, beta, theta_b, theta_h) -> np.ndarray:
    return np.concatenate([t_w, matrix_to_rot6d(R_w), beta, theta_b, theta_h])


def physical_check(verts: np.ndarray, sdf: SdfGrid) -> tuple[float, bool]:
    """(fraction of vertices with SDF > 0, any vertex with SDF <= 0)."""
    s = sample_sdf(sdf, verts)
    return float((s > 0).mean()), bool((s <= 0).any())


def _free_floor_point(spec: RoomSpec, rng, margin: float = 0.45):
    for _ in range(200):
        p = rng.uniform([margin, margin], [spec.width - margin, spec.depth - margin])
        if all(not (f.lo[0] - margin < p[0] < f.hi[0] + margin and f.lo[2] - margin < p[1] < f.hi[2] + margin)
               for f in spec.furniture):
            return p
    return None


def _propose(kind: str, spec: RoomSpec, template: BodyTemplate, rng, support: Furniture | None):
    """Heuristic world pose for one interaction; returns (R_w, t_w, theta_b) or None."""
    beta = rng.normal(0.0, SHAPE_JITTER, size=N_BETAS)
    theta_h = rng.normal(0.0, HAND_JITTER, size=N_HAND)
    theta_b = rng.normal(0.0, POSE_JITTER, size=N_POSE_LATENT)
    if kind == "stand":
        p = _free_floor_point(spec, rng)
        if p is None:
            return None
        yaw = rng.uniform(-np.pi, np.pi)
        R_w = rotation_about((0, 1, 0), yaw)
        return R_w, np.array([p[0], 1.0, p[1]]), beta, theta_b, theta_h, "floor"
    assert support is not None
    if kind == "sit":
        theta_b[0] = template.sit_latent(rng.uniform(1.3, 1.6))[0]
        front = support.front
        yaw = np.arctan2(front[0], front[1]) + rng.normal(0.0, 0.12)
        R_w = rotation_about((0, 1, 0), yaw)
        centre = (support.lo[[0, 2]] + support.hi[[0, 2]]) / 2
        half = (support.hi[[0, 2]] - support.lo[[0, 2]]) / 2
        depth_half = abs(front @ half)
        side = np.array([front[1], -front[0]])
        side_half = abs(side @ half)
        along = rng.uniform(-0.6, 0.6) * max(side_half - 0.3, 0.0)
        p = centre + front * (depth_half - rng.uniform(0.2, 0.3)) + side * along
        return R_w, np.array([p[0], support.hi[1] + 0.5, p[1]]), beta, theta_b, theta_h, "top"
    if kind == "lie":
        long_axis = 0 if (support.hi[0] - support.lo[0]) > (support.hi[2] - support.lo[2]) else 2
        head = np.zeros(3)
        head[long_axis] = rng.choice([-1.0, 1.0])
        up_axis = np.array([0.0, 1.0, 0.0])
        # body up (+y) along the bed, body forward (+z) toward the ceiling (supine)
        x_axis = np.cross(head, up_axis)
        R_w = np.stack([x_axis, head, up_axis], axis=1)
        R_w = R_w @ rotation_about((0, 1, 0), rng.normal(0.0, 0.1))
        centre = (support.lo + support.hi) / 2
        jitter = rng.uniform(-0.15, 0.15, size=3)
        jitter[1] = 0.0
        t = centre + jitter
        t[1] = support.hi[1] + 0.5
        theta_b[0] = 0.0
        return R_w, t, beta, theta_b, theta_h, "top"
    raise ValueError(f"unknown interaction kind {kind!r}")


def _settle(x_world: np.ndarray, template: BodyTemplate, spec: RoomSpec, support: Furniture | None,
            contact_idx: np.ndarray) -> np.ndarray:
    """Drop the body vertically so its lowest contact vertex sinks SINK into the support."""
    verts = _world_vertices(x_world, template)
    target = 0.0 if support is None else support.hi[1]
    if support is not None:
        vc = verts[contact_idx]
        over = ((vc[:, 0] > support.lo[0]) & (vc[:, 0] < support.hi[0])
                & (vc[:, 2] > support.lo[2]) & (vc[:, 2] < support.hi[2]))
        if not over.any():
            return None
        low = vc[over, 1].min()
    else:
        low = verts[:, 1].min()
    x = x_world.copy()
    x[1] += target - SINK - low
    return x


def synth_interactions(spec: RoomSpec, scene: TriMesh, sdf: SdfGrid, template: BodyTemplate, n: int,
                       seed: int, scene_id: str = "room", split: str = "train",
                       min_non_collision: float = 0.98, keep_views: bool = False,
                       max_attempts_per_sample: int = 20) -> list[InteractionSample]:
    """Heuristically placed standing/sitting/lying bodies, each paired with a virtual camera.

    Every returned sample has non-collision >= ``min_non_collision`` and at
    least one vertex in contact (SDF <= 0) against ``sdf``.
    """
    if n <= 0:
        return []
    rng = np.random.default_rng(seed)
    contact_idx = contact_vertices(template)
    seatable = [f for f in spec.furniture if f.category in SITTABLE]
    beds = [f for f in spec.furniture if f.category == sem.BED]
    kinds = ["stand"] + (["sit"] * 2 if seatable else []) + (["lie"] if beds else [])
    out: list[InteractionSample] = []
    attempts = 0
    while len(out) < n and attempts < n * max_attempts_per_sample:
        attempts += 1
        kind = kinds[int(rng.integers(len(kinds)))]
        support = None
        if kind == "sit":
            support = seatable[int(rng.integers(len(seatable)))]
        elif kind == "lie":
            support = beds[int(rng.integers(len(beds)))]
        prop = _propose(kind, spec, template, rng, support)
        if prop is None:
            continue
        R_w, t_w, beta, theta_b, theta_h, _ = prop
        x_world = _body_vector(R_w, t_w, beta, theta_b, theta_h)
        x_world = _settle(x_world, template, spec, support, contact_idx)
        if x_world is None:
            continue
        verts = _world_vertices(x_world, template)
        non_coll, contact = physical_check(verts, sdf)
        if non_coll < min_non_collision or not contact:
            continue
        pelvis = x_world[0:3]
        try:
            cams = generate_virtual_cameras(scene, pelvis, count=1, seed=int(rng.integers(2**31)))
        except NoCameraError:
            continue
        cam = cams[0]
        x_cam = world_to_camera_params(R_w, x_world[0:3], x_world, cam.T_cw)
        view = rasterize(scene, cam)
        d_small, s_small = downsample_view(view)
        out.append(InteractionSample(cam, BodyParams.from_vector(x_cam), scene_id, split, d_small, s_small,
                                     kind, view if keep_views else None))
    if len(out) < n:
        warnings.warn(f"synth_interactions: only {len(out)} of {n} samples could be placed in {scene_id}",
                      stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# rooms and datasets

CONTACT_MAX_EDGE = 0.075


@dataclass(eq=False)
class Room:
    scene_id: str
    spec: RoomSpec
    mesh: TriMesh
    sdf: SdfGrid
    _contact_mesh: TriMesh | None = field(default=None, repr=False)

    @property
    def contact_mesh(self) -> TriMesh:
        """Densified copy of the mesh used as the nearest-vertex target of the contact loss."""
        if self._contact_mesh is None:
            self._contact_mesh = subdivide(self.mesh, CONTACT_MAX_EDGE)
        return self._contact_mesh


def build_room(scene_id: str, spec: RoomSpec, sdf_dims: int = 64, padding: float = 0.3) -> Room:
    mesh = synth_room(spec)
    # keep the float32 grid so that a room re-read from disk is identical
    return Room(scene_id, spec, mesh, compute_sdf(mesh, sdf_dims, padding).quantized())


@dataclass
class Dataset:
    rooms: dict
    samples: list

    def split(self, name: str) -> list[InteractionSample]:
        return [s for s in self.samples if s.split == name]

    def room_of(self, sample: InteractionSample) -> Room:
        return self.rooms[sample.scene_id]


def build_dataset(template: BodyTemplate, n_pairs: int = 2000, n_rooms: int = 8, splits=(6, 1, 1),
                  seed: int = 0, sdf_dims: int = 64) -> Dataset:
    """Seeded rooms split train/val/test by room, with ~n_pairs/n_rooms samples each."""
    if sum(splits) != n_rooms:
        raise ValueError(f"split sizes {splits} do not add up to {n_rooms} rooms")
    tags = ["train"] * splits[0] + ["val"] * splits[1] + ["test"] * splits[2]
    per_room = [n_pairs // n_rooms + (1 if i < n_pairs % n_rooms else 0) for i in range(n_rooms)]
    rooms, samples = {}, []
    for i in range(n_rooms):
        scene_id = f"room{i:02d}"
        room = build_room(scene_id, random_room_spec(seed * 1000 + i), sdf_dims)
        rooms[scene_id] = room
        samples += synth_interactions(room.spec, room.mesh, room.sdf, template, per_room[i],
                                      seed * 1000 + i, scene_id, tags[i])
    return Dataset(rooms, samples)
