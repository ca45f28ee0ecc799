"""Procedural capsule-limb body template standing in for SMPL-X.

Body frame: +x is the body's left, +y up, +z forward; the pelvis joint sits
at the origin.  The mesh is a set of closed tubes (one per part) skinned to a
24-joint tree: 22 body joints in SMPL order plus one root per hand.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import torch

from psiw._binary import FormatError, Reader, Writer

TEMPLATE_MAGIC = b"PSBT"
TEMPLATE_VERSION = 1

JOINT_NAMES = (
    "pelvis", "hip_l", "hip_r", "spine1", "knee_l", "knee_r", "spine2", "ankle_l", "ankle_r",
    "spine3", "foot_l", "foot_r", "neck", "collar_l", "collar_r", "head", "shoulder_l",
    "shoulder_r", "elbow_l", "elbow_r", "wrist_l", "wrist_r", "hand_l", "hand_r",
)
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)
N_JOINTS = len(JOINT_NAMES)
N_BODY_JOINTS = 22
HAND_JOINTS = (22, 23)

PART_LABELS = (
    "head", "torso-front", "torso-back", "gluteus", "thigh-L", "thigh-R", "calf-L", "calf-R",
    "foot-L", "foot-R", "upper-arm-L", "upper-arm-R", "forearm-L", "forearm-R", "hand-L", "hand-R",
)
DEFAULT_CONTACT_PARTS = ("gluteus", "thigh-L", "thigh-R", "foot-L", "foot-R", "hand-L", "hand-R", "torso-back")

N_BETAS = 10
N_POSE_LATENT = 32
N_HAND = 24

# per-joint angle limits (rad) about the body-frame x, y, z axes
JOINT_LIMITS = np.array([
    [0.0, 0.0, 0.0],    # pelvis: global orientation is a separate parameter
    [2.2, 0.7, 0.8], [2.2, 0.7, 0.8],      # hips
    [0.5, 0.4, 0.4],                       # spine1
    [2.3, 0.15, 0.15], [2.3, 0.15, 0.15],  # knees
    [0.5, 0.4, 0.4],                       # spine2
    [0.7, 0.4, 0.4], [0.7, 0.4, 0.4],      # ankles
    [0.5, 0.4, 0.4],                       # spine3
    [0.4, 0.2, 0.2], [0.4, 0.2, 0.2],      # feet
    [0.6, 0.7, 0.5],                       # neck
    [0.3, 0.4, 0.4], [0.3, 0.4, 0.4],      # collars
    [0.5, 0.6, 0.4],                       # head
    [1.6, 1.6, 1.6], [1.6, 1.6, 1.6],      # shoulders
    [0.3, 2.3, 2.3], [0.3, 2.3, 2.3],      # elbows
    [0.8, 0.8, 0.8], [0.8, 0.8, 0.8],      # wrists
])
LIMIT_FRACTION = 0.9
SIT_DIM = 0  # pose-latent dimension that flexes hips and knees together
SIT_SHARE = 0.85


def _rest_joints() -> np.ndarray:
    c = np.sqrt(0.5)
    arm = np.array([c, -c, 0.0])
    J = np.zeros((N_JOINTS, 3))
    J[1], J[2] = [0.09, -0.08, 0.0], [-0.09, -0.08, 0.0]
    J[3] = [0.0, 0.10, 0.0]
    J[4], J[5] = [0.10, -0.50, 0.0], [-0.10, -0.50, 0.0]
    J[6] = [0.0, 0.23, 0.0]
    J[7], J[8] = [0.10, -0.90, 0.0], [-0.10, -0.90, 0.0]
    J[9] = [0.0, 0.36, 0.0]
    J[10], J[11] = [0.10, -0.96, 0.12], [-0.10, -0.96, 0.12]
    J[12] = [0.0, 0.52, 0.0]
    J[13], J[14] = [0.07, 0.46, 0.0], [-0.07, 0.46, 0.0]
    J[15] = [0.0, 0.62, 0.0]
    J[16] = [0.18, 0.46, 0.0]
    J[18] = J[16] + 0.26 * arm
    J[20] = J[18] + 0.25 * arm
    J[22] = J[20] + 0.04 * arm
    mirror = np.array([-1.0, 1.0, 1.0])
    for l, r in ((16, 17), (18, 19), (20, 21), (22, 23)):
        J[r] = J[l] * mirror
    return J


@dataclass
class _Tube:
    vertices: np.ndarray
    faces: np.ndarray
    t: np.ndarray  # axial parameter in [0, 1] (caps slightly outside)
    axis_point: np.ndarray  # closest point on the tube axis, per vertex
    radial: np.ndarray  # vertex minus axis point


def _tube(p0, p1, rings, segs, r_side, r_front, ref, profile=None, cap=0.5) -> _Tube:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    a = axis / length
    ref = np.asarray(ref, float)
    e_front = ref - (ref @ a) * a
    e_front /= np.linalg.norm(e_front)
    e_side = np.cross(a, e_front)
    ts = np.linspace(0.0, 1.0, rings)
    phis = np.linspace(0.0, 2 * np.pi, segs, endpoint=False)
    verts, tpar, centers = [], [], []
    for t in ts:
        s = 1.0 if profile is None else profile(t)
        rs = r_side(t) if callable(r_side) else r_side
        rf = r_front(t) if callable(r_front) else r_front
        center = p0 + t * axis
        for phi in phis:
            verts.append(center + s * (rs * np.cos(phi) * e_side + rf * np.sin(phi) * e_front))
            tpar.append(t)
            centers.append(center)
    r0 = r_side(0.0) if callable(r_side) else r_side
    r1 = r_side(1.0) if callable(r_side) else r_side
    s0 = 1.0 if profile is None else profile(0.0)
    s1 = 1.0 if profile is None else profile(1.0)
    c0 = p0 - a * cap * r0 * s0
    c1 = p1 + a * cap * r1 * s1
    verts += [c0, c1]
    tpar += [-cap * r0 * s0 / length, 1.0 + cap * r1 * s1 / length]
    centers += [c0, c1]
    faces = []
    for i in range(rings - 1):
        for k in range(segs):
            a0, a1 = i * segs + k, i * segs + (k + 1) % segs
            b0, b1 = a0 + segs, a1 + segs
            faces += [(a0, b0, b1), (a0, b1, a1)]
    n = rings * segs
    last = (rings - 1) * segs
    for k in range(segs):
        faces.append((n, (k + 1) % segs, k))
        faces.append((n + 1, last + k, last + (k + 1) % segs))
    verts = np.array(verts)
    centers = np.array(centers)
    return _Tube(verts, np.array(faces), np.array(tpar), centers, verts - centers)


def _ramp(x, lo, hi):
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def _limb_weights(t, proximal, distal, parent=None, n=N_JOINTS, blend=0.2):
    W = np.zeros((len(t), n))
    wd = 0.5 * _ramp(t, 1.0 - blend, 1.0 + 1e-9)
    wp = 0.5 * _ramp(-t, -blend, 1e-9) if parent is not None else np.zeros_like(t)
    W[:, distal] += wd
    if parent is not None:
        W[:, parent] += wp
    W[:, proximal] += 1.0 - wd - wp
    return W


def _hat_weights(y, knots, joints, n=N_JOINTS):
    """Piecewise-linear interpolation weights along y between joint heights."""
    W = np.zeros((len(y), n))
    yc = np.clip(y, knots[0], knots[-1])
    idx = np.clip(np.searchsorted(knots, yc, side="right") - 1, 0, len(knots) - 2)
    f = (yc - np.asarray(knots)[idx]) / (np.asarray(knots)[idx + 1] - np.asarray(knots)[idx])
    rows = np.arange(len(y))
    W[rows, np.asarray(joints)[idx]] += 1.0 - f
    W[rows, np.asarray(joints)[idx + 1]] += f
    return W


def _pose_decoder(seed: int) -> np.ndarray:
    """Fixed sparse decoder matrix (22*3, 32); each row's l1 norm is 0.9 x limit."""
    rng = np.random.default_rng(seed)
    rows = N_BODY_JOINTS * 3
    A = np.zeros((rows, N_POSE_LATENT))
    for j in range(1, N_BODY_JOINTS):
        for ax in range(3):
            r = 3 * j + ax
            cols = rng.choice(np.arange(1, N_POSE_LATENT), size=3, replace=False)
            A[r, cols] = rng.normal(size=3)
            if ax == 0 and j in (1, 2, 4, 5):
                sign = -1.0 if j in (1, 2) else 1.0
                A[r] *= (1.0 - SIT_SHARE) / np.abs(A[r]).sum()
                A[r, SIT_DIM] = sign * SIT_SHARE
            A[r] *= LIMIT_FRACTION * JOINT_LIMITS[j, ax] / np.abs(A[r]).sum()
    return A


def _hand_map() -> np.ndarray:
    """(2, 3, 12): per-hand linear map from 12 pose coefficients to a hand-root rotation."""
    c = np.sqrt(0.5)
    H = np.zeros((2, 3, 12))
    for h, sx in enumerate((1.0, -1.0)):
        d = np.array([sx * c, -c, 0.0])  # along the forearm
        n = np.array([-sx * c, -c, 0.0])  # palm normal
        curl = np.cross(d, n)
        H[h] += np.outer(curl, np.r_[np.full(8, 0.1), np.zeros(4)])
        H[h] += np.outer(n, np.r_[np.zeros(8), 0.1, 0.1, 0.0, 0.0])
        H[h] += np.outer(d, np.r_[np.zeros(10), 0.1, 0.1])
    return H


@dataclass(eq=False)
class BodyTemplate:
    vertices: np.ndarray        # (V, 3) rest mesh
    faces: np.ndarray           # (F, 3)
    weights: np.ndarray         # (V, J) skinning weights, rows sum to 1
    shape_dirs: np.ndarray      # (10, V, 3)
    joint_shape_dirs: np.ndarray  # (10, J, 3)
    rest_joints: np.ndarray     # (J, 3)
    parents: np.ndarray         # (J,)
    limits: np.ndarray          # (22, 3)
    pose_matrix: np.ndarray     # (66, 32)
    hand_map: np.ndarray        # (2, 3, 12)
    part_labels: np.ndarray     # (V,) index into label_names
    label_names: tuple = PART_LABELS
    seed: int = 0
    _torch: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if np.abs(self.weights.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("skinning weight rows must sum to 1")
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if roots != [0] or any(p >= j for j, p in enumerate(self.parents) if p >= 0):
            raise ValueError("kinematic tree must be rooted at joint 0 with parents preceding children")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def torch(self, name: str, dtype=torch.float64) -> torch.Tensor:
        key = (name, dtype)
        if key not in self._torch:
            self._torch[key] = torch.as_tensor(np.asarray(getattr(self, name), dtype=np.float64), dtype=dtype)
        return self._torch[key]

    def part_vertices(self, parts) -> np.ndarray:
        parts = list(parts)
        unknown = [p for p in parts if p not in self.label_names]
        if unknown:
            raise ValueError(f"unknown body part label(s) {unknown}; vocabulary: {list(self.label_names)}")
        ids = [self.label_names.index(p) for p in parts]
        return np.flatnonzero(np.isin(self.part_labels, ids))

    def sit_latent(self, hip_angle: float = 1.45) -> np.ndarray:
        """Pose latent that bends hips and knees to roughly ``hip_angle`` (others zero)."""
        z = np.zeros(N_POSE_LATENT)
        full = -self.pose_matrix[3 * 1 + 0, SIT_DIM]
        z[SIT_DIM] = np.arctanh(min(hip_angle / full, 0.999))
        return z

    # -- PSBT file: magic, u16 version, u32 count, named arrays (same records as PSIW)
    def to_bytes(self) -> bytes:
        meta = json.dumps({"label_names": list(self.label_names), "joint_names": list(JOINT_NAMES),
                           "seed": self.seed}).encode()
        arrays = {
            "vertices": self.vertices, "faces": self.faces.astype(np.int32), "weights": self.weights,
            "shape_dirs": self.shape_dirs, "joint_shape_dirs": self.joint_shape_dirs,
            "rest_joints": self.rest_joints, "parents": self.parents.astype(np.int32),
            "limits": self.limits, "pose_matrix": self.pose_matrix, "hand_map": self.hand_map,
            "part_labels": self.part_labels.astype(np.int32),
            "meta": np.frombuffer(meta, dtype=np.uint8),
        }
        w = Writer()
        w.raw(TEMPLATE_MAGIC)
        w.pack("H", TEMPLATE_VERSION)
        w.pack("I", len(arrays))
        for k, v in arrays.items():
            w.string(k)
            w.array(np.asarray(v))
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BodyTemplate":
        r = Reader(data, "PSBT body template")
        r.expect_magic(TEMPLATE_MAGIC)
        r.expect_version(TEMPLATE_VERSION)
        (count,) = r.unpack("I")
        arrays = {}
        for _ in range(count):
            name = r.string()
            arrays[name] = r.array()
        r.finish()
        try:
            meta = json.loads(arrays.pop("meta").tobytes().decode())
            return cls(label_names=tuple(meta["label_names"]), seed=int(meta["seed"]),
                       faces=arrays.pop("faces").astype(np.int64), parents=arrays.pop("parents").astype(np.int64),
                       part_labels=arrays.pop("part_labels").astype(np.int64), **arrays)
        except (KeyError, TypeError) as exc:
            raise FormatError("PSBT body template", f"missing or malformed field: {exc}") from None

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "BodyTemplate":
        return cls.from_bytes(Path(path).read_bytes())


def build_template(seed: int = 0) -> BodyTemplate:
    """Deterministically construct the default 1024-vertex template."""
    J = _rest_joints()
    c = np.sqrt(0.5)
    lab = {name: i for i, name in enumerate(PART_LABELS)}
    fwd, up = np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])

    pieces = []  # (tube, weights, labels, kind, side)

    # torso: below the pelvis (gluteus) up to the neck, waist slightly narrower
    torso = _tube([0, -0.14, 0], [0, 0.54, 0], 10, 16,
                  lambda t: 0.16 - 0.025 * np.sin(np.pi * min(t / 0.7, 1.0)) + 0.015 * _ramp(t, 0.7, 1.0),
                  0.11, fwd, cap=0.3)
    y = torso.vertices[:, 1]
    Wt = _hat_weights(y, [0.0, 0.10, 0.23, 0.36, 0.52], [0, 3, 6, 9, 12])
    z = torso.vertices[:, 2]
    tl = np.where(z >= 0, lab["torso-front"], lab["torso-back"])
    tl = np.where((y < 0.05) & (z < 0), lab["gluteus"], tl)
    pieces.append((torso, Wt, tl, "torso", 0))

    head = _tube([0, 0.57, 0.01], [0, 0.83, 0.01], 7, 12, 0.085, 0.10, fwd,
                 profile=lambda t: np.sqrt(max(1.0 - (1.6 * t - 0.8) ** 2, 0.0)) + 0.05, cap=0.4)
    Wh = np.zeros((len(head.t), N_JOINTS))
    wn = 0.5 * _ramp(-head.t, -0.3, 0.0)
    Wh[:, 12] = wn
    Wh[:, 15] = 1.0 - wn
    pieces.append((head, Wh, np.full(len(head.t), lab["head"]), "head", 0))

    for side, sx, sfx in ((1, 1.0, "L"), (2, -1.0, "R")):
        li = 0 if sfx == "L" else 1
        sh, el, wr, hd = 16 + li, 18 + li, 20 + li, 22 + li
        hip, knee, ankle, foot = 1 + li, 4 + li, 7 + li, 10 + li
        arm = np.array([sx * c, -c, 0.0])
        ua = _tube(J[sh] - 0.03 * arm, J[el], 6, 10, lambda t: 0.055 - 0.012 * t, 0.05, fwd)
        pieces.append((ua, _limb_weights(ua.t, sh, el, parent=13 + li), np.full(len(ua.t), lab[f"upper-arm-{sfx}"]), "limb", sx))
        fa = _tube(J[el], J[wr], 6, 10, lambda t: 0.043 - 0.01 * t, 0.038, fwd)
        pieces.append((fa, _limb_weights(fa.t, el, wr), np.full(len(fa.t), lab[f"forearm-{sfx}"]), "limb", sx))
        hand = _tube(J[wr], J[wr] + 0.18 * arm, 5, 8, 0.045, 0.018, fwd)
        Wd = np.zeros((len(hand.t), N_JOINTS))
        wroot = _ramp(hand.t, 0.1, 0.3)
        Wd[:, hd] = wroot
        Wd[:, wr] = 1.0 - wroot
        pieces.append((hand, Wd, np.full(len(hand.t), lab[f"hand-{sfx}"]), "limb", sx))
        th = _tube(J[hip] + [0, 0.02, 0], J[knee], 8, 12, lambda t: 0.085 - 0.025 * t, lambda t: 0.085 - 0.025 * t, fwd)
        pieces.append((th, _limb_weights(th.t, hip, knee, parent=0), np.full(len(th.t), lab[f"thigh-{sfx}"]), "leg", sx))
        ca = _tube(J[knee], J[ankle], 8, 10, lambda t: 0.058 - 0.018 * t, lambda t: 0.062 - 0.02 * t, fwd)
        pieces.append((ca, _limb_weights(ca.t, knee, ankle), np.full(len(ca.t), lab[f"calf-{sfx}"]), "leg", sx))
        ft = _tube(J[ankle] + [0, -0.05, -0.06], J[ankle] + [0, -0.05, 0.17], 5, 8, 0.045, 0.035, up)
        Wf = np.zeros((len(ft.t), N_JOINTS))
        wtoe = _ramp(ft.t, 0.45, 0.75)
        Wf[:, foot] = wtoe
        Wf[:, ankle] = 1.0 - wtoe
        pieces.append((ft, Wf, np.full(len(ft.t), lab[f"foot-{sfx}"]), "leg", sx))

    verts, faces, weights, labels, kinds = [], [], [], [], []
    offset = 0
    for tube, W, L, kind, sx in pieces:
        verts.append(tube.vertices)
        faces.append(tube.faces + offset)
        weights.append(W)
        labels.append(L)
        kinds.append((kind, sx, offset, offset + len(tube.vertices), tube))
        offset += len(tube.vertices)
    V = np.concatenate(verts)
    F = np.concatenate(faces)
    W = np.concatenate(weights)
    W /= W.sum(axis=1, keepdims=True)
    labels = np.concatenate(labels).astype(np.int64)

    S, SJ = _blendshapes(V, J, labels, kinds)
    return BodyTemplate(V, F, W, S, SJ, J, np.array(PARENTS), JOINT_LIMITS.copy(), _pose_decoder(seed),
                        _hand_map(), labels, PART_LABELS, seed)


def _blendshapes(V, J, labels, kinds):
    """Ten linear shape directions (vertex and joint offsets per unit coefficient)."""
    S = np.zeros((N_BETAS, len(V), 3))
    SJ = np.zeros((N_BETAS, len(J), 3))
    lab = {name: i for i, name in enumerate(PART_LABELS)}
    is_torso = np.isin(labels, [lab["torso-front"], lab["torso-back"], lab["gluteus"]])
    is_head = labels == lab["head"]
    arm_ids = [lab[f"{p}-{s}"] for p in ("upper-arm", "forearm", "hand") for s in "LR"]
    leg_ids = [lab[f"{p}-{s}"] for p in ("thigh", "calf", "foot") for s in "LR"]
    is_arm, is_leg = np.isin(labels, arm_ids), np.isin(labels, leg_ids)
    left = V[:, 0] > 0
    arm_joints_l, arm_joints_r = [16, 18, 20, 22], [17, 19, 21, 23]
    leg_joints_l, leg_joints_r = [1, 4, 7, 10], [2, 5, 8, 11]

    # 0 stature
    S[0, :, 1] = 0.05 * V[:, 1]
    SJ[0, :, 1] = 0.05 * J[:, 1]
    # 1 torso width, 2 torso depth
    S[1, is_torso, 0] = 0.12 * V[is_torso, 0]
    S[2, is_torso, 2] = 0.15 * V[is_torso, 2]
    # 3 leg length (below the hips)
    hip_y = J[1, 1]
    S[3, is_leg, 1] = 0.06 * (V[is_leg, 1] - hip_y)
    for j in leg_joints_l[1:] + leg_joints_r[1:]:
        SJ[3, j, 1] = 0.06 * (J[j, 1] - hip_y)
    # 4 arm length (away from the shoulder)
    for sh, ids, sel in ((16, arm_joints_l, is_arm & left), (17, arm_joints_r, is_arm & ~left)):
        S[4, sel] = 0.06 * (V[sel] - J[sh])
        for j in ids[1:]:
            SJ[4, j] = 0.06 * (J[j] - J[sh])
    # 5 limb girth, 6 head size
    for kind, sx, a, b, tube in kinds:
        if kind in ("limb", "leg"):
            S[5, a:b] = 0.12 * tube.radial
        if kind == "head":
            S[6, a:b] = 0.08 * (tube.vertices - tube.vertices.mean(axis=0))
    # 7 shoulder width
    for sel, ids, sx in ((is_arm & left, arm_joints_l, 1.0), (is_arm & ~left, arm_joints_r, -1.0)):
        S[7, sel, 0] = 0.03 * sx
        SJ[7, ids, 0] = 0.03 * sx
    # 8 hip width
    for sel, ids, sx in ((is_leg & left, leg_joints_l, 1.0), (is_leg & ~left, leg_joints_r, -1.0)):
        S[8, sel, 0] = 0.02 * sx
        SJ[8, ids, 0] = 0.02 * sx
    glute = labels == lab["gluteus"]
    S[8, glute, 0] = 0.08 * V[glute, 0]
    # 9 belly
    front = labels == lab["torso-front"]
    bump = np.exp(-((V[:, 1] - 0.12) / 0.12) ** 2)
    S[9, front, 2] = 0.04 * bump[front]
    return S, SJ
