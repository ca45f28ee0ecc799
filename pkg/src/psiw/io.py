"""Mesh, view-bundle and dataset file handling."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from psiw._binary import FormatError
from psiw.body.model import BodyParams
from psiw.geometry.camera import Camera
from psiw.geometry.mesh import TriMesh
from psiw.geometry.raster import SceneView
from psiw.geometry.sdf import SdfGrid

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# ---------------------------------------------------------------------------
# PLY

def write_ply(path, mesh: TriMesh, colors: np.ndarray | None = None, binary: bool = True) -> None:
    """Write a triangle mesh; vertices as doubles, optional int "semantic" and uchar colors."""
    V, F = mesh.vertices, mesh.faces
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape != (len(V), 3):
            raise ValueError(f"colors must be ({len(V)}, 3), got {colors.shape}")
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(V)}",
            "property double x", "property double y", "property double z"]
    vfields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if mesh.semantic is not None:
        head.append("property int semantic")
        vfields.append(("semantic", "<i4"))
    if colors is not None:
        head += ["property uchar red", "property uchar green", "property uchar blue"]
        vfields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    head += [f"element face {len(F)}", "property list uchar int vertex_indices", "end_header"]
    header = ("\n".join(head) + "\n").encode("ascii")

    vert = np.empty(len(V), dtype=vfields)
    vert["x"], vert["y"], vert["z"] = V[:, 0], V[:, 1], V[:, 2]
    if mesh.semantic is not None:
        vert["semantic"] = mesh.semantic
    if colors is not None:
        vert["red"], vert["green"], vert["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    face = np.empty(len(F), dtype=[("n", "u1"), ("i", "<i4", (3,))])
    face["n"] = 3
    face["i"] = F

    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(vert.tobytes())
            fh.write(face.tobytes())
        else:
            lines = []
            for row in vert:
                vals = [repr(float(row[n])) if n in "xyz" else str(int(row[n])) for n in vert.dtype.names]
                lines.append(" ".join(vals))
            lines += [f"3 {a} {b} {c}" for a, b, c in F]
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("PLY", "missing 'ply' magic or end_header")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt, elements = None, []
    for line in data[:end].decode("ascii", errors="replace").splitlines()[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise FormatError("PLY", "property before any element")
            if tok[1] == "list":
                elements[-1]["props"].append((tok[4], "list", _ply_type(tok[2]), _ply_type(tok[3])))
            else:
                elements[-1]["props"].append((tok[2], "scalar", _ply_type(tok[1]), None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise FormatError("PLY", f"unsupported format {fmt!r}")
    return fmt, elements, body_start


def _ply_type(name: str) -> str:
    try:
        return _PLY_TYPES[name]
    except KeyError:
        raise FormatError("PLY", f"unknown property type {name!r}") from None


def _fan(polys) -> np.ndarray:
    tris = [(p[0], p[i], p[i + 1]) for p in polys for i in range(1, len(p) - 1)]
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def _ascii_elements(elements, tokens) -> dict:
    values, t = {}, 0
    for el in elements:
        rows = []
        for _ in range(el["count"]):
            row = {}
            for name, kind, _, _ in el["props"]:
                if kind == "scalar":
                    row[name] = float(tokens[t])
                    t += 1
                else:
                    n = int(tokens[t])
                    if t + 1 + n > len(tokens):
                        raise IndexError
                    row[name] = [int(x) for x in tokens[t + 1:t + 1 + n]]
                    t += 1 + n
            rows.append(row)
        values[el["name"]] = rows
    return values


def read_ply(path) -> TriMesh:
    """Read ASCII or binary PLY; polygons are fan-triangulated, "semantic" is kept if present."""
    data = Path(path).read_bytes()
    fmt, elements, pos = _parse_ply_header(data)
    values = {}
    if fmt == "ascii":
        tokens = data[pos:].split()
        try:
            values = _ascii_elements(elements, tokens)
        except (IndexError, ValueError):
            raise FormatError("PLY", "truncated or malformed ascii body") from None
        verts = values.get("vertex", [])
        V = np.array([[r["x"], r["y"], r["z"]] for r in verts], dtype=np.float64).reshape(-1, 3)
        sem = (np.array([int(r["semantic"]) for r in verts], dtype=np.int64)
               if verts and "semantic" in verts[0] else None)
        faces = values.get("face", [])
        key = next((k for k in ("vertex_indices", "vertex_index") if faces and k in faces[0]), None)
        F = _fan([r[key] for r in faces]) if key else np.zeros((0, 3), dtype=np.int64)
        return TriMesh(V, F, sem)

    end = "<" if fmt == "binary_little_endian" else ">"
    vert_arr, F = None, np.zeros((0, 3), dtype=np.int64)
    for el in elements:
        props = el["props"]
        if all(kind == "scalar" for _, kind, _, _ in props):
            dt = np.dtype([(n, end + d) for n, _, d, _ in props])
            size = dt.itemsize * el["count"]
            if pos + size > len(data):
                raise FormatError("PLY", f"truncated binary body in element {el['name']!r}")
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=pos)
            pos += size
            if el["name"] == "vertex":
                vert_arr = arr
            continue
        if len(props) != 1:
            raise FormatError("PLY", f"element {el['name']!r} mixes list and scalar properties")
        name, _, ct, it = props[0]
        ct, it = np.dtype(end + ct), np.dtype(end + it)
        # fast path: every polygon is a triangle
        tri = np.dtype([("n", ct), ("i", it, (3,))])
        size = tri.itemsize * el["count"]
        polys = None
        if pos + size <= len(data):
            arr = np.frombuffer(data, dtype=tri, count=el["count"], offset=pos)
            if (arr["n"] == 3).all():
                polys = arr["i"].astype(np.int64)
                pos += size
        if polys is None:
            rows = []
            for _ in range(el["count"]):
                if pos + ct.itemsize > len(data):
                    raise FormatError("PLY", "truncated list property")
                n = int(np.frombuffer(data, dtype=ct, count=1, offset=pos)[0])
                pos += ct.itemsize
                if pos + n * it.itemsize > len(data):
                    raise FormatError("PLY", "truncated list property")
                rows.append(np.frombuffer(data, dtype=it, count=n, offset=pos).astype(np.int64))
                pos += n * it.itemsize
            polys = _fan(rows)
        if el["name"] == "face":
            F = polys
    if vert_arr is None:
        raise FormatError("PLY", "no vertex element")
    V = np.stack([vert_arr["x"], vert_arr["y"], vert_arr["z"]], axis=1).astype(np.float64)
    sem = vert_arr["semantic"].astype(np.int64) if "semantic" in vert_arr.dtype.names else None
    return TriMesh(V, F, sem)


# ---------------------------------------------------------------------------
# OBJ

def write_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    """Read vertices and faces (v/vt/vn and negative indices accepted); no semantics."""
    verts, polys = [], []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        try:
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                polys.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        except ValueError as e:
            raise FormatError("OBJ", f"line {ln}: {e}") from None
    return TriMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), _fan(polys))


def read_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".obj":
        return read_obj(path)
    raise FormatError("mesh", f"unsupported mesh extension {suffix!r} (expected .ply or .obj)")


def write_mesh(path, mesh: TriMesh, colors=None) -> None:
    if Path(path).suffix.lower() == ".obj":
        write_obj(path, mesh)
    else:
        write_ply(path, mesh, colors)


# ---------------------------------------------------------------------------
# view bundles

def write_view(directory, view: SceneView) -> None:
    """depth.raw (f32 row-major), semantics.raw (u8 row-major), camera.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "depth.raw").write_bytes(np.ascontiguousarray(view.depth, dtype="<f4").tobytes())
    (d / "semantics.raw").write_bytes(np.ascontiguousarray(view.semantics, dtype=np.uint8).tobytes())
    view.camera.save(d / "camera.json")


def read_view(directory) -> SceneView:
    d = Path(directory)
    try:
        cam = Camera.load(d / "camera.json")
    except (KeyError, json.JSONDecodeError) as e:
        raise FormatError("view bundle", f"bad camera.json in {d}: {e}") from None
    shape = (cam.height, cam.width)
    depth_b, sem_b = (d / "depth.raw").read_bytes(), (d / "semantics.raw").read_bytes()
    n = shape[0] * shape[1]
    if len(depth_b) != 4 * n or len(sem_b) != n:
        raise FormatError("view bundle", f"raw map sizes do not match {shape[1]}x{shape[0]} in {d}")
    depth = np.frombuffer(depth_b, dtype="<f4").reshape(shape).astype(np.float32)
    sem = np.frombuffer(sem_b, dtype=np.uint8).reshape(shape).copy()
    return SceneView(depth, sem, cam)


# ---------------------------------------------------------------------------
# datasets

def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def save_dataset(root, dataset) -> None:
    """Write rooms (mesh, SDF, spec, views) and samples.jsonl under ``root``.

    Views missing from memory are re-rendered from the stored camera.
    """
    root = Path(root)
    lines = []
    counters: dict[str, int] = {}
    for sid, room in dataset.rooms.items():
        rdir = root / "rooms" / sid
        rdir.mkdir(parents=True, exist_ok=True)
        write_ply(rdir / "mesh.ply", room.mesh)
        room.sdf.save(rdir / "sdf.psdf")
        (rdir / "spec.json").write_text(json.dumps(room.spec.to_json(), default=_json_default))
    for s in dataset.samples:
        k = counters.get(s.scene_id, 0)
        counters[s.scene_id] = k + 1
        rel = f"rooms/{s.scene_id}/views/{k}"
        view = s.view if s.view is not None else s.full_view(dataset.rooms[s.scene_id].mesh)
        write_view(root / rel, view)
        lines.append(json.dumps({"scene_id": s.scene_id, "split": s.split, "kind": s.kind, "view": rel,
                                 "body": s.body.to_vector().tolist()}))
    (root / "samples.jsonl").write_text("".join(line + "\n" for line in lines))


def load_dataset(root, keep_views: bool = False):
    """Inverse of :func:`save_dataset`; compact encoder views are recomputed from the stored maps."""
    from psiw.synth import Dataset, InteractionSample, Room, RoomSpec, downsample_view

    root = Path(root)
    index = root / "samples.jsonl"
    if not index.exists():
        raise FileNotFoundError(f"{index} not found (not a dataset directory?)")
    rooms = {}
    for rdir in sorted((root / "rooms").iterdir()):
        spec = RoomSpec.from_json(json.loads((rdir / "spec.json").read_text()))
        rooms[rdir.name] = Room(rdir.name, spec, read_ply(rdir / "mesh.ply"), SdfGrid.load(rdir / "sdf.psdf"))
    samples = []
    for ln, line in enumerate(index.read_text().splitlines(), 1):
        if not line.strip():
            continue
        d = json.loads(line)
        if len(d["body"]) != 75:
            raise FormatError("dataset", f"samples.jsonl line {ln}: body has {len(d['body'])} values, expected 75")
        view = read_view(root / d["view"])
        ds, ss = downsample_view(view)
        samples.append(InteractionSample(view.camera, BodyParams.from_vector(np.array(d["body"], dtype=np.float64)),
                                         d["scene_id"], d["split"], ds, ss, d.get("kind", "stand"),
                                         view if keep_views else None))
    return Dataset(rooms, samples)


# ---------------------------------------------------------------------------
# bodies

@dataclass
class BodyRecord:
    """A camera-frame body plus the dataset view it was generated for."""

    body: BodyParams
    scene_id: str | None = None
    view: str | None = None


def write_bodies(path, records) -> None:
    """One JSON object per line: {"body": 75 reals, "scene_id", "view"}."""
    lines = []
    for r in records:
        r = r if isinstance(r, BodyRecord) else BodyRecord(r)
        lines.append(json.dumps({"body": r.body.to_vector().tolist(), "scene_id": r.scene_id, "view": r.view}))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_bodies(path) -> list[BodyRecord]:
    out = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            vals = d["body"] if isinstance(d, dict) else d
            meta = d if isinstance(d, dict) else {}
        except json.JSONDecodeError as e:
            raise FormatError("bodies", f"line {ln}: {e}") from None
        if len(vals) != 75:
            raise FormatError("bodies", f"line {ln}: {len(vals)} values, expected 75")
        out.append(BodyRecord(BodyParams.from_vector(np.array(vals, dtype=np.float64)),
                              meta.get("scene_id"), meta.get("view")))
    return out


# ---------------------------------------------------------------------------
# colors for export

def palette(n: int, seed: int = 7) -> np.ndarray:
    """n distinct-ish uchar RGB colors (fixed golden-ratio hue walk)."""
    import colorsys

    h = (np.arange(n) * 0.618033988749895 + seed * 0.1) % 1.0
    rgb = [colorsys.hsv_to_rgb(x, 0.65, 0.95) for x in h]
    return np.round(np.asarray(rgb) * 255).astype(np.uint8).reshape(-1, 3)


def label_colors(labels: np.ndarray, n_labels: int = 256) -> np.ndarray:
    return palette(n_labels)[np.asarray(labels, dtype=np.int64) % n_labels]
