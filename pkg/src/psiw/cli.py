"""Command-line entry point: ``psiw <subcommand> [--config FILE] [--set key=value ...] [flags]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger("psiw")

OUTPUT_ROOT_ENV = "PSIW_OUTPUT_ROOT"


def _f(default, doc: str):
    return field(default=default, metadata={"doc": doc})


@dataclass
class RunConfig:
    """Every setting a subcommand can read. Empty path strings mean "derive from ``out``"."""

    out: str = _f("psiw_out", f"output root (env {OUTPUT_ROOT_ENV} overrides the default)")
    template: str = _f("", "body template file (default <out>/template.psbt)")
    dataset: str = _f("", "dataset directory (default <out>/dataset)")
    checkpoint: str = _f("", "model checkpoint (default <out>/model.psiw)")
    bodies: str = _f("", "input body records, one JSON object per line (default <out>/samples.jsonl)")
    mesh: str = _f("", "input mesh (.ply or .obj) for sdf/views")
    output: str = _f("", "output file or directory of the subcommand (subcommand-specific default)")
    seed: int = _f(0, "random seed")
    template_seed: int = _f(0, "seed of the procedural body template")
    n_pairs: int = _f(2000, "number of synthesized interaction pairs")
    n_rooms: int = _f(8, "number of synthesized rooms")
    splits: str = _f("6,1,1", "train,val,test room counts")
    sdf_dims: int = _f(64, "SDF grid nodes per axis")
    sdf_padding: float = _f(0.3, "SDF grid padding around the mesh bounds (m)")
    center: str = _f("", "body center x,y,z in world coordinates for views")
    model: str = _f("s1", "CVAE variant: s1 (one stage) or s2 (two stage)")
    use_hs: bool = _f(False, "add the contact/collision losses late in training")
    epochs: int = _f(30, "training epochs")
    lr: float = _f(3e-4, "training learning rate")
    batch_size: int = _f(32, "training batch size")
    kl_ramp_epochs: int = _f(10, "epochs over which the KL weight ramps from 0")
    hs_start_fraction: float = _f(0.75, "fraction of training after which the interaction losses start")
    max_batches_per_epoch: int = _f(0, "cap on batches per epoch (0 = full pass)")
    alpha_kl: float = _f(0.1, "KL weight")
    alpha_vp: float = _f(0.001, "pose-prior weight during training")
    alpha_cont: float = _f(0.001, "training contact weight")
    alpha_coll: float = _f(0.01, "training collision weight")
    alpha_1: float = _f(0.1, "fitting contact weight")
    alpha_2: float = _f(0.5, "fitting collision weight")
    alpha_3: float = _f(0.01, "fitting pose-prior weight")
    geman_sigma: float = _f(0.2, "Geman-McClure scale of the contact loss (m)")
    room: str = _f("", "room id to condition on (default: first test room)")
    view_index: int = _f(0, "index of the conditioning view within the room")
    n: int = _f(10, "number of bodies to generate")
    fit_iters: int = _f(300, "maximum fitting iterations")
    fit_lr: float = _f(0.01, "fitting learning rate")
    k: int = _f(20, "k-means clusters for the diversity metric")
    dims: str = _f("0", "comma-separated latent dimensions to traverse")
    steps: int = _f(7, "traversal steps")
    value_min: float = _f(-3.0, "traversal start value")
    value_max: float = _f(3.0, "traversal end value")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def doc(cls, key: str) -> str:
        return next(f.metadata["doc"] for f in dataclasses.fields(cls) if f.name == key)

    def update(self, values: dict, source: str) -> None:
        types = {f.name: f.type for f in dataclasses.fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            setattr(self, key, _coerce(key, raw, types[key]))

    def path(self, key: str, default_name: str) -> Path:
        value = getattr(self, key)
        return Path(value) if value else Path(self.out) / default_name

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)


class ConfigError(ValueError):
    pass


class CliError(RuntimeError):
    pass


def _coerce(key: str, raw, typ: str):
    try:
        if typ == "bool":
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if typ == "float":
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {typ}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# shared loaders

def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(f"{what} not found: {path}")
    return path


def _template(cfg: RunConfig):
    from psiw.body.template import BodyTemplate

    return BodyTemplate.load(_need(cfg.path("template", "template.psbt"), "body template"))


def _dataset(cfg: RunConfig, keep_views: bool = False):
    from psiw.io import load_dataset

    root = _need(cfg.path("dataset", "dataset"), "dataset directory")
    return load_dataset(root, keep_views=keep_views)


def _weights(cfg: RunConfig):
    from psiw.losses import LossWeights

    return LossWeights(cfg.alpha_kl, cfg.alpha_vp, cfg.alpha_cont, cfg.alpha_coll,
                       cfg.alpha_1, cfg.alpha_2, cfg.alpha_3, cfg.geman_sigma)


def _conditioning(cfg: RunConfig):
    """(scene tensor, room id, view path) of the selected dataset view."""
    from psiw.cvae import encode_scene
    from psiw.io import read_view

    root = _need(cfg.path("dataset", "dataset"), "dataset directory")
    room = cfg.room
    if not room:
        index = _need(root / "samples.jsonl", "dataset index")
        rows = [json.loads(line) for line in index.read_text().splitlines() if line.strip()]
        test = [r["scene_id"] for r in rows if r["split"] == "test"]
        if not test:
            raise CliError("dataset has no test split; pass --room")
        room = test[0]
    rel = f"rooms/{room}/views/{cfg.view_index}"
    view = read_view(_need(root / rel, "conditioning view"))
    return encode_scene(view), room, rel


def _records(cfg: RunConfig):
    from psiw.io import read_bodies

    records = read_bodies(_need(cfg.path("bodies", "samples.jsonl"), "body file"))
    if not records:
        raise CliError("no bodies in the input body file")
    return records


def _world_meshes(records, template, root: Path):
    """World-frame meshes plus the room of each record (bodies must come from one room)."""
    from psiw.body.model import body_mesh
    from psiw.io import read_view

    rooms = {r.scene_id for r in records}
    if None in rooms or any(r.view is None for r in records):
        raise CliError("body records lack scene_id/view; cannot place them in a room")
    meshes = []
    for r in records:
        cam = read_view(root / r.view).camera
        meshes.append(body_mesh(r.body, template).transformed(cam.T_cw, frame="world"))
    return meshes, sorted(rooms)


# ---------------------------------------------------------------------------
# subcommands

def cmd_template(cfg: RunConfig) -> None:
    from psiw.body.template import build_template

    path = cfg.path("template", "template.psbt")
    path.parent.mkdir(parents=True, exist_ok=True)
    build_template(cfg.template_seed).save(path)
    print(path)


def cmd_synth(cfg: RunConfig) -> None:
    from psiw.io import save_dataset
    from psiw.synth import build_dataset

    splits = tuple(_int_list(cfg.splits))
    if len(splits) != 3:
        raise ConfigError("splits must list three room counts (train,val,test)")
    ds = build_dataset(_template(cfg), cfg.n_pairs, cfg.n_rooms, splits, cfg.seed, cfg.sdf_dims)
    root = cfg.path("dataset", "dataset")
    save_dataset(root, ds)
    print(f"{root}: {len(ds.rooms)} rooms, {len(ds.samples)} samples")


def cmd_sdf(cfg: RunConfig) -> None:
    from psiw.geometry.sdf import compute_sdf
    from psiw.io import read_mesh

    if not cfg.mesh:
        raise CliError("sdf needs --mesh")
    mesh_path = _need(Path(cfg.mesh), "mesh")
    out = cfg.path("output", mesh_path.stem + ".psdf")
    out.parent.mkdir(parents=True, exist_ok=True)
    grid = compute_sdf(read_mesh(mesh_path), cfg.sdf_dims, cfg.sdf_padding)
    grid.save(out)
    print(f"{out}: dims {grid.dims}, spacing {grid.spacing:.6f}")


def cmd_views(cfg: RunConfig) -> None:
    from psiw.geometry.raster import rasterize
    from psiw.geometry.virtual_cameras import generate_virtual_cameras
    from psiw.io import read_mesh, write_view

    if not cfg.mesh or not cfg.center:
        raise CliError("views needs --mesh and --center x,y,z")
    try:
        center = np.array([float(x) for x in cfg.center.split(",")])
    except ValueError:
        raise ConfigError(f"center must be x,y,z, got {cfg.center!r}") from None
    if center.shape != (3,):
        raise ConfigError(f"center must have 3 coordinates, got {cfg.center!r}")
    scene = read_mesh(_need(Path(cfg.mesh), "mesh"))
    cams = generate_virtual_cameras(scene, center, count=cfg.n, seed=cfg.seed)
    out = cfg.path("output", "views")
    for i, cam in enumerate(cams):
        write_view(out / str(i), rasterize(scene, cam))
    print(f"{out}: {len(cams)} views")


def cmd_train(cfg: RunConfig) -> None:
    from psiw.cvae import TrainSchedule, build_model, save_cvae, train

    ds = _dataset(cfg)
    template = _template(cfg) if cfg.use_hs else None
    schedule = TrainSchedule(cfg.epochs, cfg.lr, cfg.kl_ramp_epochs, cfg.hs_start_fraction, cfg.batch_size,
                             cfg.max_batches_per_epoch or None)
    model = build_model(cfg.model, seed=cfg.seed)
    ckpt = cfg.path("checkpoint", "model.psiw")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path = ckpt.with_suffix(".log.jsonl")
    result = train(model, ds, schedule, _weights(cfg), cfg.seed, template, cfg.use_hs, log_path)
    save_cvae(ckpt, result.model, extra={"epochs": cfg.epochs, "use_hs": cfg.use_hs, "seed": cfg.seed})
    last = result.history[-1]
    print(f"{ckpt}: epoch {last['epoch']} train_rec {last['train_rec']:.5f} val_rec {last['val_rec']:.5f}")


def _load_model(cfg: RunConfig):
    from psiw.cvae import load_cvae

    return load_cvae(_need(cfg.path("checkpoint", "model.psiw"), "checkpoint"))


def cmd_sample(cfg: RunConfig) -> None:
    from psiw.cvae import sample
    from psiw.io import BodyRecord, write_bodies

    model = _load_model(cfg)
    scene, room, rel = _conditioning(cfg)
    bodies = sample(model, scene, cfg.n, cfg.seed)
    out = cfg.path("output", "samples.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bodies(out, [BodyRecord(b, room, rel) for b in bodies])
    print(f"{out}: {len(bodies)} bodies for {rel}")


def cmd_fit(cfg: RunConfig) -> None:
    from psiw.body.model import body_mesh
    from psiw.fitting import fit_body
    from psiw.geometry.mesh import subdivide
    from psiw.io import BodyRecord, label_colors, read_view, write_bodies, write_ply
    from psiw.synth import CONTACT_MAX_EDGE

    records = _records(cfg)
    template = _template(cfg)
    ds_root = _need(cfg.path("dataset", "dataset"), "dataset directory")
    weights = _weights(cfg)
    out = cfg.path("output", "fitted")
    out.mkdir(parents=True, exist_ok=True)
    scenes = {}
    fitted, trace_lines = [], []
    for i, r in enumerate(records):
        if r.scene_id is None or r.view is None:
            raise CliError(f"body {i} lacks scene_id/view")
        if r.scene_id not in scenes:
            from psiw.geometry.sdf import SdfGrid
            from psiw.io import read_ply

            rdir = _need(ds_root / "rooms" / r.scene_id, "room")
            scenes[r.scene_id] = (subdivide(read_ply(rdir / "mesh.ply"), CONTACT_MAX_EDGE),
                                  SdfGrid.load(rdir / "sdf.psdf"))
        mesh, sdf = scenes[r.scene_id]
        cam = read_view(ds_root / r.view).camera
        res = fit_body(r.body, mesh, sdf, cam.T_cw, template, weights, cfg.fit_iters, cfg.fit_lr)
        fitted.append(BodyRecord(res.x_h_refined, r.scene_id, r.view))
        for it, total, cont, coll in res.loss_trace:
            trace_lines.append(json.dumps({"body": i, "iteration": it, "loss": total, "contact": cont,
                                           "collision": coll}))
        world = body_mesh(res.x_h_refined, template).transformed(cam.T_cw, frame="world")
        write_ply(out / f"body_{i:03d}.ply", world, label_colors(template.part_labels))
        log.info("body %d: %d iterations, converged %s, loss %.6f -> %.6f", i, res.iterations_used,
                 res.converged, res.loss_trace[0][1], res.loss_trace[-1][1])
    write_bodies(out / "bodies.jsonl", fitted)
    (out / "trace.jsonl").write_text("".join(line + "\n" for line in trace_lines))
    print(f"{out}: {len(fitted)} fitted bodies")


def cmd_eval(cfg: RunConfig) -> None:
    from psiw.evaluation import evaluate
    from psiw.geometry.sdf import SdfGrid
    from psiw.io import read_bodies

    path = _need(cfg.path("bodies", "samples.jsonl"), "body file")
    records = read_bodies(path)
    if not records:
        raise CliError(f"no bodies to evaluate in {path}")
    template = _template(cfg)
    ds_root = _need(cfg.path("dataset", "dataset"), "dataset directory")
    meshes, rooms = _world_meshes(records, template, ds_root)
    if len(rooms) != 1:
        raise CliError(f"eval expects bodies from a single room, got {rooms}")
    sdf = SdfGrid.load(_need(ds_root / "rooms" / rooms[0] / "sdf.psdf", "room SDF"))
    report = evaluate([r.body for r in records], meshes, sdf, cfg.k, cfg.seed)
    out = cfg.path("output", "eval.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    print(report.table())


def cmd_prior(cfg: RunConfig) -> None:
    from psiw.evaluation import derive_pose_prior

    model = _load_model(cfg)
    scene, room, rel = _conditioning(cfg)
    theta = derive_pose_prior(model, scene, cfg.n, cfg.seed)
    out = cfg.path("output", "prior.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"scene_id": room, "view": rel, "n": cfg.n, "seed": cfg.seed,
                               "theta_b_s": theta.tolist()}) + "\n")
    print(out)


def cmd_traverse(cfg: RunConfig) -> None:
    from psiw.cvae import latent_traverse
    from psiw.io import BodyRecord, write_bodies

    model = _load_model(cfg)
    scene, room, rel = _conditioning(cfg)
    dims = _int_list(cfg.dims)
    try:
        bodies = latent_traverse(model, scene, dims, (cfg.value_min, cfg.value_max), cfg.steps)
    except ValueError as e:
        raise CliError(str(e)) from None
    out = cfg.path("output", "traverse.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bodies(out, [BodyRecord(b, room, rel) for b in bodies])
    print(f"{out}: {len(bodies)} bodies along dims {dims}")


def cmd_export(cfg: RunConfig) -> None:
    from psiw.io import label_colors, read_ply, write_ply

    records = _records(cfg)
    template = _template(cfg)
    ds_root = _need(cfg.path("dataset", "dataset"), "dataset directory")
    meshes, rooms = _world_meshes(records, template, ds_root)
    out = cfg.path("output", "export")
    out.mkdir(parents=True, exist_ok=True)
    for sid in rooms:
        scene = read_ply(_need(ds_root / "rooms" / sid / "mesh.ply", "room mesh"))
        write_ply(out / f"scene_{sid}.ply", scene, label_colors(scene.labels_or(0)))
    body_colors = label_colors(template.part_labels)
    for i, m in enumerate(meshes):
        write_ply(out / f"body_{i:03d}.ply", m, body_colors)
    print(f"{out}: {len(rooms)} scene(s), {len(meshes)} bodies")


COMMANDS = {
    "template": (cmd_template, "build the procedural body template",
                 ["out", "template", "template_seed"]),
    "synth": (cmd_synth, "synthesize rooms and interaction pairs into a dataset directory",
              ["out", "template", "dataset", "seed", "n_pairs", "n_rooms", "splits", "sdf_dims"]),
    "sdf": (cmd_sdf, "compute a signed distance grid for a mesh",
            ["out", "mesh", "output", "sdf_dims", "sdf_padding"]),
    "views": (cmd_views, "render virtual-camera views of a mesh around a body center",
              ["out", "mesh", "center", "n", "seed", "output"]),
    "train": (cmd_train, "train a CVAE on a dataset",
              ["out", "dataset", "template", "checkpoint", "model", "use_hs", "seed", "epochs", "lr", "batch_size",
               "kl_ramp_epochs", "hs_start_fraction", "max_batches_per_epoch", "alpha_kl", "alpha_vp",
               "alpha_cont", "alpha_coll", "geman_sigma"]),
    "sample": (cmd_sample, "generate bodies for a dataset view",
               ["out", "dataset", "checkpoint", "room", "view_index", "n", "seed", "output"]),
    "fit": (cmd_fit, "refine bodies against the scene geometry",
            ["out", "dataset", "template", "bodies", "fit_iters", "fit_lr", "alpha_1", "alpha_2", "alpha_3",
             "geman_sigma", "output"]),
    "eval": (cmd_eval, "diversity and physical metrics of a body set",
             ["out", "dataset", "template", "bodies", "k", "seed", "output"]),
    "prior": (cmd_prior, "scene-dependent pose prior (mean pose latent)",
              ["out", "dataset", "checkpoint", "room", "view_index", "n", "seed", "output"]),
    "traverse": (cmd_traverse, "decode bodies along latent dimensions",
                 ["out", "dataset", "checkpoint", "room", "view_index", "dims", "steps", "value_min", "value_max",
                  "output"]),
    "export": (cmd_export, "write bodies and their room as colored PLY meshes",
               ["out", "dataset", "template", "bodies", "output"]),
}


def build_parser() -> argparse.ArgumentParser:
    defaults = RunConfig()
    parser = argparse.ArgumentParser(prog="psiw", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, (_, help_text, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="JSON file of config keys (default: none)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable (default: none)")
        for key in keys:
            default = getattr(defaults, key)
            if key == "out":
                default = os.environ.get(OUTPUT_ROOT_ENV, default)
            doc = RunConfig.doc(key)
            if not (default == "" and "(default" in doc):
                doc = f"{doc} (default: {default!r})"
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar=key.upper(), help=doc)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < environment < --config file < --set overrides < explicit flags."""
    cfg = RunConfig()
    if os.environ.get(OUTPUT_ROOT_ENV):
        cfg.out = os.environ[OUTPUT_ROOT_ENV]
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(values, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
        cfg.update(values, args.config)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value
    cfg.update(overrides, "--set")
    flags = {k: v for k, v in vars(args).items() if k in RunConfig.keys() and v is not None}
    cfg.update(flags, "command line")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command][0](cfg)
    except (ConfigError, CliError, FileNotFoundError, ValueError) as e:
        print(f"psiw {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
