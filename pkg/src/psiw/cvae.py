"""Scene-conditioned body CVAEs: one-stage (S1) and two-stage (S2).

Both condition on a 128x128 scene tensor (normalized depth + one-hot
semantics) encoded by a 6-layer stride-2 conv stack.  Bodies are lifted,
encoded to a diagonal Gaussian, sampled with the reparameterization trick
and decoded together with the scene code.  Decoders work on standardized
features; the dataset statistics live in model buffers.
"""
from __future__ import annotations

import copy
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from psiw.body.model import DIM, LOCAL_SLICE, T_SLICE, THETA_B_SLICE, BodyParams, body_vertices, contact_vertices
from psiw.body.template import BodyTemplate
from psiw.diffcore import LEAKY_SLOPE, Adam, NonFiniteGradientError, load_checkpoint, save_checkpoint
from psiw.geometry.camera import Camera
from psiw.geometry.raster import SceneView
from psiw.losses import LossWeights, loss_collision, loss_contact, loss_kl, loss_reconstruction, loss_total, \
    loss_vposer
from psiw.semantics import SYNTH_CATEGORIES, channel_lookup

SCENE_SIZE = 128
CODE_DIM = 256
HIDDEN = 256
Z_FLOOR = 0.1  # decoded camera-frame depth never drops below this (m)


# ---------------------------------------------------------------------------
# scene tensors

@dataclass
class SceneTensor:
    data: np.ndarray  # (1 + C, 128, 128) float32: depth / max_depth, then one-hot semantics
    categories: tuple = SYNTH_CATEGORIES

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]


def _nearest_resize(depth: np.ndarray, semantics: np.ndarray, size: int):
    H, W = depth.shape
    scale = size / max(H, W)
    h, w = int(round(H * scale)), int(round(W * scale))
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(np.int64), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(np.int64), W - 1)
    return depth[np.ix_(rows, cols)], semantics[np.ix_(rows, cols)]


def scene_tensor_from_small(depth_small: np.ndarray, semantics_small: np.ndarray, max_depth: float,
                            categories=SYNTH_CATEGORIES, size: int = SCENE_SIZE) -> SceneTensor:
    """Pad already-resized maps (h <= size, w <= size) into a SceneTensor."""
    h, w = depth_small.shape
    if h > size or w > size:
        raise ValueError(f"resized maps {h}x{w} exceed {size}x{size}")
    lut = channel_lookup(categories)
    out = np.zeros((1 + len(categories), size, size), dtype=np.float32)
    out[0, :h, :w] = np.clip(depth_small / max_depth, 0.0, 1.0)
    ch = lut[semantics_small.astype(np.int64)]
    rr, cc = np.nonzero(ch >= 0)
    out[1 + ch[rr, cc], rr, cc] = 1.0
    return SceneTensor(out, tuple(categories))


def encode_scene(view: SceneView, categories=SYNTH_CATEGORIES, size: int = SCENE_SIZE) -> SceneTensor:
    """Aspect-preserving nearest-neighbour resize into size x size, zero padded below/right."""
    if not (view.depth > 0).any():
        warnings.warn("encode_scene: depth map is all zero", stacklevel=2)
    d, s = _nearest_resize(view.depth, view.semantics, size)
    return scene_tensor_from_small(d, s, view.camera.max_depth, categories, size)


def _batch_scenes(scenes) -> torch.Tensor:
    if isinstance(scenes, SceneTensor):
        scenes = [scenes]
    return torch.as_tensor(np.stack([s.data for s in scenes]))


# ---------------------------------------------------------------------------
# networks

class SceneEncoder(nn.Module):
    def __init__(self, in_channels: int, widths=(16, 32, 64, 64, 128, 128), code_dim: int = CODE_DIM,
                 size: int = SCENE_SIZE):
        super().__init__()
        layers, c = [], in_channels
        for w in widths:
            layers.append(nn.Conv2d(c, w, 3, stride=2, padding=1))
            c = w
        self.convs = nn.ModuleList(layers)
        spatial = size // 2 ** len(widths)
        self.fc = nn.Linear(c * spatial * spatial, code_dim)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
        return F.leaky_relu(self.fc(x.flatten(1)), LEAKY_SLOPE)


class ResBlock(nn.Module):
    def __init__(self, dim: int = HIDDEN):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, x):
        return F.leaky_relu(x + self.fc2(F.leaky_relu(self.fc1(x), LEAKY_SLOPE)), LEAKY_SLOPE)


class MLP(nn.Module):
    """Affine input layer, residual blocks, affine output."""

    def __init__(self, d_in: int, d_out: int, n_blocks: int = 2, hidden: int = HIDDEN):
        super().__init__()
        self.inp = nn.Linear(d_in, hidden)
        self.blocks = nn.Sequential(*[ResBlock(hidden) for _ in range(n_blocks)])
        self.out = nn.Linear(hidden, d_out)

    def forward(self, x):
        return self.out(self.blocks(F.leaky_relu(self.inp(x), LEAKY_SLOPE)))


class GaussianEncoder(nn.Module):
    def __init__(self, d_in: int, latent: int, n_blocks: int = 2):
        super().__init__()
        self.net = MLP(d_in, 2 * latent, n_blocks)
        self.latent = latent

    def forward(self, x):
        h = self.net(x)
        return h[..., :self.latent], h[..., self.latent:]


class _Base(nn.Module):
    kind = ""

    def __init__(self, in_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.register_buffer("x_mean", torch.zeros(DIM))
        self.register_buffer("x_std", torch.ones(DIM))

    def set_stats(self, mean, std):
        self.x_mean.copy_(torch.as_tensor(mean, dtype=self.x_mean.dtype))
        self.x_std.copy_(torch.as_tensor(np.maximum(std, 1e-3), dtype=self.x_std.dtype))

    def standardize(self, x, sl=slice(None)):
        return (x - self.x_mean[sl]) / self.x_std[sl]

    def destandardize(self, y, sl=slice(None)):
        x = y * self.x_std[sl] + self.x_mean[sl]
        if sl.start in (None, 0):  # block contains the translation: keep it in front of the camera
            x = torch.cat([x[..., :2], Z_FLOOR + F.softplus(x[..., 2:3] - Z_FLOOR, beta=5.0), x[..., 3:]], -1)
        return x

    @property
    def dtype(self):
        return self.x_mean.dtype

    def config(self) -> dict:
        raise NotImplementedError


class CvaeS1(_Base):
    """p(x_h | x_s) with a single latent of size ``latent``."""

    kind = "s1"

    def __init__(self, in_channels: int = 1 + len(SYNTH_CATEGORIES), latent: int = 32, n_blocks: int = 2):
        super().__init__(in_channels)
        self.latent = latent
        self.n_blocks = n_blocks
        self.scene_enc = SceneEncoder(in_channels)
        self.body_lift = nn.Linear(DIM, CODE_DIM)
        self.encoder = GaussianEncoder(2 * CODE_DIM, latent, n_blocks)
        self.decoder = MLP(latent + CODE_DIM, DIM, n_blocks)

    def config(self) -> dict:
        return {"kind": self.kind, "in_channels": self.in_channels, "latent": self.latent, "n_blocks": self.n_blocks}

    def encode(self, code, x_h):
        lifted = F.leaky_relu(self.body_lift(self.standardize(x_h)), LEAKY_SLOPE)
        return self.encoder(torch.cat([lifted, code], -1))

    def decode(self, z, code):
        return self.destandardize(self.decoder(torch.cat([z, code], -1)))


class CvaeS2(_Base):
    """p(x_l | x_g, x_s) p(x_g | x_s): global translation first, then the local features."""

    kind = "s2"

    def __init__(self, in_channels: int = 1 + len(SYNTH_CATEGORIES), latent_g: int = 8, latent_l: int = 32,
                 n_blocks: int = 2):
        super().__init__(in_channels)
        self.latent_g, self.latent_l, self.n_blocks = latent_g, latent_l, n_blocks
        self.latent = latent_l
        self.scene_enc_g = SceneEncoder(in_channels)
        self.scene_enc_l = SceneEncoder(in_channels)
        n_g = T_SLICE.stop - T_SLICE.start
        n_l = DIM - n_g
        self.lift_g = nn.Linear(n_g, CODE_DIM)
        self.enc_g = GaussianEncoder(2 * CODE_DIM, latent_g, n_blocks)
        self.dec_g = MLP(latent_g + CODE_DIM, n_g, n_blocks)
        self.cond_g = nn.Linear(n_g, CODE_DIM)  # encodes the stage-1 output for stage 2
        self.lift_l = nn.Linear(n_l, CODE_DIM)
        self.enc_l = GaussianEncoder(3 * CODE_DIM, latent_l, n_blocks)
        self.dec_l = MLP(latent_l + 2 * CODE_DIM, n_l, n_blocks)

    def config(self) -> dict:
        return {"kind": self.kind, "in_channels": self.in_channels, "latent_g": self.latent_g,
                "latent_l": self.latent_l, "n_blocks": self.n_blocks}

    def global_condition(self, x_g_rec):
        return F.leaky_relu(self.cond_g(self.standardize(x_g_rec, T_SLICE)), LEAKY_SLOPE)

    def decode_global(self, z_g, code_g):
        return self.destandardize(self.dec_g(torch.cat([z_g, code_g], -1)), T_SLICE)

    def decode_local(self, z_l, code_l, cond):
        return self.destandardize(self.dec_l(torch.cat([z_l, code_l, cond], -1)), LOCAL_SLICE)


CvaeModel = CvaeS1 | CvaeS2


def build_model(kind: str = "s1", seed: int = 0, **kwargs) -> CvaeModel:
    """Seeded construction; weights use torch's fan-in scaled uniform init."""
    torch.manual_seed(seed)
    if kind == "s1":
        return CvaeS1(**kwargs)
    if kind == "s2":
        return CvaeS2(**kwargs)
    raise ValueError(f"unknown model kind {kind!r} (expected 's1' or 's2')")


def _reparameterize(mu, log_var, generator=None, eps=None):
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * log_var) * eps


def _as_batch(model, scene, x_h):
    s = scene if isinstance(scene, torch.Tensor) else _batch_scenes(scene)
    x = torch.as_tensor(x_h) if not isinstance(x_h, torch.Tensor) else x_h
    single = x.dim() == 1
    if single:
        x = x[None]
    s = s.to(model.dtype)
    x = x.to(model.dtype)
    if s.dim() != 4 or s.shape[1] != model.in_channels or s.shape[2:] != (SCENE_SIZE, SCENE_SIZE):
        raise ValueError(f"scene batch must be (B, {model.in_channels}, {SCENE_SIZE}, {SCENE_SIZE}), "
                         f"got {tuple(s.shape)}")
    if x.shape[-1] != DIM or x.shape[0] != s.shape[0]:
        raise ValueError(f"body batch must be (B={s.shape[0]}, {DIM}), got {tuple(x.shape)}")
    return s, x, single


def s1_forward(model: CvaeS1, scene, x_h, generator=None, eps=None, use_mean: bool = False):
    """(x_h_rec, mu, log_var); z = mu + exp(log_var / 2) * eps."""
    if not isinstance(model, CvaeS1):
        raise TypeError("s1_forward needs an S1 model")
    s, x, single = _as_batch(model, scene, x_h)
    code = model.scene_enc(s)
    mu, log_var = model.encode(code, x)
    z = mu if use_mean else _reparameterize(mu, log_var, generator, eps)
    rec = model.decode(z, code)
    if single:
        return rec[0], mu[0], log_var[0]
    return rec, mu, log_var


def s2_forward(model: CvaeS2, scene, x_h, generator=None, eps=None, use_mean: bool = False):
    """(x_g_rec, x_l_rec, (mu_g, mu_l), (log_var_g, log_var_l))."""
    if not isinstance(model, CvaeS2):
        raise TypeError("s2_forward needs an S2 model")
    s, x, single = _as_batch(model, scene, x_h)
    eps_g, eps_l = (None, None) if eps is None else eps
    code_g = model.scene_enc_g(s)
    code_l = model.scene_enc_l(s)
    x_g, x_l = x[:, T_SLICE], x[:, LOCAL_SLICE]
    lifted_g = F.leaky_relu(model.lift_g(model.standardize(x_g, T_SLICE)), LEAKY_SLOPE)
    mu_g, lv_g = model.enc_g(torch.cat([lifted_g, code_g], -1))
    z_g = mu_g if use_mean else _reparameterize(mu_g, lv_g, generator, eps_g)
    x_g_rec = model.decode_global(z_g, code_g)
    cond = model.global_condition(x_g_rec)
    lifted_l = F.leaky_relu(model.lift_l(model.standardize(x_l, LOCAL_SLICE)), LEAKY_SLOPE)
    mu_l, lv_l = model.enc_l(torch.cat([lifted_l, code_l, cond], -1))
    z_l = mu_l if use_mean else _reparameterize(mu_l, lv_l, generator, eps_l)
    x_l_rec = model.decode_local(z_l, code_l, cond)
    if single:
        return x_g_rec[0], x_l_rec[0], (mu_g[0], mu_l[0]), (lv_g[0], lv_l[0])
    return x_g_rec, x_l_rec, (mu_g, mu_l), (lv_g, lv_l)


def forward_rec(model: CvaeModel, scene, x_h, generator=None, use_mean: bool = False):
    """Uniform interface: (x_h_rec, mus, log_vars) with mus/log_vars as lists for S2."""
    if isinstance(model, CvaeS2):
        g, l, mus, lvs = s2_forward(model, scene, x_h, generator, use_mean=use_mean)
        return torch.cat([g, l], -1), list(mus), list(lvs)
    rec, mu, lv = s1_forward(model, scene, x_h, generator, use_mean=use_mean)
    return rec, mu, lv


# ---------------------------------------------------------------------------
# generation

def _decode_latents(model: CvaeModel, scene: SceneTensor, z, z_g=None) -> torch.Tensor:
    s = _batch_scenes(scene).to(model.dtype).expand(z.shape[0], -1, -1, -1)
    if isinstance(model, CvaeS2):
        code_g, code_l = model.scene_enc_g(s), model.scene_enc_l(s)
        x_g = model.decode_global(z_g, code_g)
        return torch.cat([x_g, model.decode_local(z, code_l, model.global_condition(x_g))], -1)
    return model.decode(z, model.scene_enc(s))


def sample(model: CvaeModel, scene: SceneTensor, n: int, seed: int = 0) -> list[BodyParams]:
    """n bodies from z ~ N(0, I); for S2 the stage-1 draw conditions stage 2."""
    if n <= 0:
        return []
    g = torch.Generator().manual_seed(int(seed))
    was_training = model.training
    model.eval()
    with torch.no_grad():
        if isinstance(model, CvaeS2):
            z_g = torch.randn((n, model.latent_g), generator=g, dtype=model.dtype)
            z = torch.randn((n, model.latent_l), generator=g, dtype=model.dtype)
            x = _decode_latents(model, scene, z, z_g)
        else:
            z = torch.randn((n, model.latent), generator=g, dtype=model.dtype)
            x = _decode_latents(model, scene, z)
    model.train(was_training)
    return [BodyParams.from_vector(row.double()) for row in x]


def latent_traverse(model: CvaeModel, scene: SceneTensor, dims, value_range=(-3.0, 3.0),
                    steps: int = 7) -> list[BodyParams]:
    """Decode z moving linearly over ``value_range`` on ``dims`` with the rest held at 0.

    For S2 the local latent is traversed and the global latent stays at 0.
    """
    dims = list(dims)
    if any(d < 0 or d >= model.latent for d in dims):
        raise ValueError(f"traversal dims must lie in [0, {model.latent - 1}], got {dims}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    values = np.linspace(value_range[0], value_range[1], steps) if steps > 1 else np.array([value_range[0]])
    z = torch.zeros((steps, model.latent), dtype=model.dtype)
    for d in dims:
        z[:, d] = torch.as_tensor(values, dtype=model.dtype)
    z_g = torch.zeros((steps, model.latent_g), dtype=model.dtype) if isinstance(model, CvaeS2) else None
    with torch.no_grad():
        x = _decode_latents(model, scene, z, z_g)
    return [BodyParams.from_vector(row.double()) for row in x]


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainSchedule:
    epochs: int = 30
    learning_rate: float = 3e-4
    kl_ramp_epochs: int = 10
    hs_start_fraction: float = 0.75
    batch_size: int = 32
    max_batches_per_epoch: int | None = None  # None: full pass over the training split

    def __post_init__(self):
        if not 0 < self.hs_start_fraction < 1:
            raise ValueError("hs_start_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")

    @property
    def hs_start_epoch(self) -> int:
        """First 0-based epoch with the interaction losses on."""
        return math.ceil(self.hs_start_fraction * self.epochs)

    def alpha_kl(self, epoch: int, alpha_max: float) -> float:
        """Linear ramp from 0 at epoch 0 to alpha_max at kl_ramp_epochs, then flat."""
        if self.kl_ramp_epochs <= 0:
            return alpha_max
        return alpha_max * min(max(epoch, 0) / self.kl_ramp_epochs, 1.0)

    def hs_enabled(self, epoch: int) -> bool:
        return epoch >= self.hs_start_epoch


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass
class TrainResult:
    model: CvaeModel
    history: list = field(default_factory=list)  # one dict per epoch
    trace: list = field(default_factory=list)  # one dict per optimizer step


def feature_stats(samples) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([s.body.to_vector() for s in samples])
    return X.mean(axis=0), X.std(axis=0)


def _batch_inputs(samples, categories):
    scenes = np.stack([scene_tensor_from_small(s.depth_small, s.semantics_small, s.camera.max_depth,
                                               categories).data for s in samples])
    x = np.stack([s.body.to_vector() for s in samples])
    return torch.as_tensor(scenes), torch.as_tensor(x)


def interaction_losses(x_rec: torch.Tensor, samples, rooms, template: BodyTemplate, contact_idx,
                       sigma: float):
    """Batch-mean contact and collision of decoded bodies in their rooms' world frames."""
    verts = body_vertices(x_rec, template)
    contact, collision = 0.0, 0.0
    for b, s in enumerate(samples):
        room = rooms[s.scene_id]
        T = torch.as_tensor(s.camera.T_cw, dtype=verts.dtype)
        vw = verts[b] @ T[:3, :3].T + T[:3, 3]
        contact = contact + loss_contact(vw, room.contact_mesh, contact_idx, sigma)
        collision = collision + loss_collision(vw, room.sdf)
    n = len(samples)
    return contact / n, collision / n


def _validate(model, samples, camera, categories, batch_size):
    if not samples:
        return float("nan"), float("nan")
    rec_sum, kl_sum = 0.0, 0.0
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            s, x = _batch_inputs(chunk, categories)
            x = x.to(model.dtype)
            rec, mu, lv = forward_rec(model, s, x, use_mean=True)
            rec_sum += float(loss_reconstruction(x, rec, camera)) * len(chunk)
            kl_sum += float(loss_kl(mu, lv)) * len(chunk)
    return rec_sum / len(samples), kl_sum / len(samples)


def train(model: CvaeModel, dataset, schedule: TrainSchedule | None = None, weights: LossWeights | None = None,
          seed: int = 0, template: BodyTemplate | None = None, use_hs: bool = False, log_path=None,
          checkpoint_path=None, categories=SYNTH_CATEGORIES) -> TrainResult:
    """Adam on L_rec + a_kl L_KL + a_vp L_VPoser (+ L_HS from the hs start epoch when ``use_hs``).

    ``dataset`` is a :class:`psiw.synth.Dataset`.  Validation uses z = mu.
    Writes one JSON line per epoch to ``log_path`` if given.  A non-finite
    loss restores the last completed epoch's weights and raises
    :class:`TrainingDiverged`.
    """
    schedule = schedule or TrainSchedule()
    weights = weights or LossWeights()
    train_set, val_set = dataset.split("train"), dataset.split("val")
    if not train_set:
        raise ValueError("train: empty training split")
    if use_hs and template is None:
        raise ValueError("train: interaction losses need the body template")
    camera: Camera = train_set[0].camera
    mean, std = feature_stats(train_set)
    model.set_stats(mean, std)
    contact_idx = contact_vertices(template) if template is not None else None
    opt = Adam(model.parameters(), lr=schedule.learning_rate)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(int(seed))
    log = open(log_path, "w") if log_path is not None else None
    result = TrainResult(model)
    good_state = copy.deepcopy(model.state_dict())
    try:
        for epoch in range(schedule.epochs):
            a_kl = schedule.alpha_kl(epoch, weights.alpha_kl)
            hs_on = use_hs and schedule.hs_enabled(epoch)
            order = rng.permutation(len(train_set))
            batches = [order[i:i + schedule.batch_size] for i in range(0, len(order), schedule.batch_size)]
            if schedule.max_batches_per_epoch is not None:
                batches = batches[:schedule.max_batches_per_epoch]
            model.train()
            rec_acc, kl_acc, n_acc = 0.0, 0.0, 0
            for step, idx in enumerate(batches):
                chunk = [train_set[i] for i in idx]
                s, x = _batch_inputs(chunk, categories)
                s, x = s.to(model.dtype), x.to(model.dtype)
                x_rec, mu, lv = forward_rec(model, s, x, gen)
                rec = loss_reconstruction(x, x_rec, camera)
                kl = loss_kl(mu, lv)
                vp = loss_vposer(x_rec[:, THETA_B_SLICE])
                if hs_on:
                    contact, collision = interaction_losses(x_rec, chunk, dataset.rooms, template, contact_idx,
                                                            weights.geman_sigma)
                else:
                    contact = collision = torch.zeros((), dtype=model.dtype)
                total = loss_total(rec, kl, vp, contact, collision, weights, hs_on, alpha_kl=a_kl)
                if not torch.isfinite(total):
                    model.load_state_dict(good_state)
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}", result.history)
                try:
                    opt.step(total)
                except NonFiniteGradientError as err:
                    model.load_state_dict(good_state)
                    raise TrainingDiverged(f"epoch {epoch} step {step}: {err}", result.history) from err
                rec, kl, vp, contact, collision = (float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
                                                   for v in (rec, kl, vp, contact, collision))
                hs_part = weights.alpha_cont * contact + weights.alpha_coll * collision if hs_on else 0.0
                result.trace.append({"epoch": epoch, "step": step, "total": float(total.detach()), "rec": rec,
                                     "kl": kl, "vposer": vp, "contact": contact, "collision": collision,
                                     "hs_enabled": hs_on, "hs_term": hs_part, "alpha_kl": a_kl})
                rec_acc += rec * len(chunk)
                kl_acc += kl * len(chunk)
                n_acc += len(chunk)
            model.eval()
            val_rec, val_kl = _validate(model, val_set, camera, categories, 64)
            record = {"epoch": epoch, "train_rec": rec_acc / n_acc, "val_rec": val_rec,
                      "train_kl": kl_acc / n_acc, "val_kl": val_kl, "neg_elbo": val_rec + val_kl,
                      "alpha_kl": a_kl, "hs_enabled": hs_on}
            result.history.append(record)
            if log is not None:
                log.write(json.dumps(record) + "\n")
                log.flush()
            good_state = copy.deepcopy(model.state_dict())
            if checkpoint_path is not None:
                save_cvae(checkpoint_path, model)
    finally:
        if log is not None:
            log.close()
    model.eval()
    return result


# ---------------------------------------------------------------------------
# checkpoints

def save_cvae(path, model: CvaeModel, extra: dict | None = None) -> None:
    """diffcore checkpoint with the state dict plus a JSON ``__config__`` entry."""
    cfg = dict(model.config())
    cfg["dtype"] = "float64" if model.dtype == torch.float64 else "float32"
    if extra:
        cfg["extra"] = extra
    tensors = {k: v for k, v in model.state_dict().items()}
    tensors["__config__"] = np.frombuffer(json.dumps(cfg, sort_keys=True).encode(), dtype=np.uint8)
    save_checkpoint(path, tensors)


def load_cvae(path) -> CvaeModel:
    arrays = load_checkpoint(path)
    if "__config__" not in arrays:
        raise ValueError(f"{path}: checkpoint has no model config entry")
    cfg = json.loads(arrays.pop("__config__").tobytes().decode())
    kind = cfg.pop("kind")
    dtype = torch.float64 if cfg.pop("dtype", "float32") == "float64" else torch.float32
    cfg.pop("extra", None)
    model = build_model(kind, **cfg).to(dtype)
    model.load_state_dict({k: torch.as_tensor(np.array(v)) for k, v in arrays.items()})
    model.eval()
    return model


def checkpoint_config(path) -> dict:
    arrays = load_checkpoint(path)
    return json.loads(arrays["__config__"].tobytes().decode())
