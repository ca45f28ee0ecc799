"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

The lines are repeated in an "acceptance criteria" section of the pytest
terminal summary.
"""
import json
import math
import os
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from psiw import io
from psiw._binary import FormatError
from psiw.body import BodyParams, BodyTemplate, body_vertices, contact_vertices, matrix_to_rot6d
from psiw.cvae import (
    TrainSchedule, build_model, encode_scene, load_cvae, s1_forward, s2_forward, sample, save_cvae, train,
)
from psiw.diffcore import backward, gradcheck, relative_error
from psiw.evaluation import derive_pose_prior, diversity_metric, physical_metric, prior_regularizer
from psiw.fitting import fit_body
from psiw.geometry import Camera, SdfGrid, compute_sdf, sample_sdf
from psiw.body.rotation import rotation_about
from psiw.losses import (
    LossWeights, loss_collision, loss_contact, loss_fitting, loss_kl, loss_reconstruction, loss_vposer,
)
from psiw.synth import Dataset, build_dataset, room_shell, synth_interactions

from oracles import brute_force_sdf

GRAD_TOL = 1e-4
N_POINTS = 20
# The scene losses and the networks are piecewise smooth (nearest-neighbour switching, trilinear cells,
# the clamp at SDF 0, leaky rectifiers).  The step must be small against the distance to the nearest
# kink at a random point; in 64-bit arithmetic 1e-7 keeps round-off near 1e-9.
FD_STEP = 1e-7
# Scene images are checked along unit directions spread over ~2e5 pixels, so each pixel moves by
# about step/460.  A 1e-7 step then leaves the difference quotient dominated by the round-off of the
# convolutions; 1e-5 moves each pixel by ~2e-8, which balances round-off against kink crossings.
SCENE_STEP = 1e-5


@contextmanager
def criterion(log, n, title):
    """Record one PASS/FAIL line for criterion ``n``; ``info`` collects details."""
    info = {}
    t0 = time.perf_counter()

    def line(status, extra=""):
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        text = f"criterion {n:2d} {title}: {status} ({detail}{'; ' if detail and extra else ''}{extra}; " \
               f"{time.perf_counter() - t0:.1f} s)"
        log[n] = text
        print(text)

    try:
        yield info
    except BaseException as e:
        line("FAIL", f"{type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}"[:300])
        raise
    line("PASS")


def _fmt(x):
    return f"{x:.3g}"


# ---------------------------------------------------------------------------
# shared, expensive fixtures

TIMINGS = {}


@pytest.fixture(scope="module")
def dataset2000(template):
    t0 = time.perf_counter()
    ds = build_dataset(template, n_pairs=2000, n_rooms=8, splits=(6, 1, 1), seed=0, sdf_dims=64)
    TIMINGS["dataset"] = time.perf_counter() - t0
    return ds


@pytest.fixture(scope="module")
def trained_s1(dataset2000):
    t0 = time.perf_counter()
    res = train(build_model("s1", seed=0), dataset2000, TrainSchedule(epochs=30), seed=0)
    TIMINGS["s1"] = time.perf_counter() - t0
    return res


@pytest.fixture(scope="module")
def trained_s1_hs(dataset2000, template):
    t0 = time.perf_counter()
    res = train(build_model("s1", seed=0), dataset2000, TrainSchedule(epochs=30), seed=0, template=template,
                use_hs=True)
    TIMINGS["s1_hs"] = time.perf_counter() - t0
    return res


def _test_scene(ds):
    s = ds.split("test")[0]
    return s, encode_scene(s.full_view(ds.room_of(s).mesh))


# ---------------------------------------------------------------------------
# 1. gradients

class _FixedCode(torch.nn.Module):
    """Stands in for a scene encoder whose input is held constant."""

    def __init__(self, code):
        super().__init__()
        self.code = code

    def forward(self, s):
        return self.code.expand(s.shape[0], -1)


@contextmanager
def _rectifier_inputs():
    """Collects the input of every leaky rectifier evaluated inside the block."""
    seen = []
    original = torch.nn.functional.leaky_relu

    def spy(t, *args, **kwargs):
        seen.append(t.detach())
        return original(t, *args, **kwargs)

    torch.nn.functional.leaky_relu = spy
    try:
        yield seen
    finally:
        torch.nn.functional.leaky_relu = original


def _directional_check(fn, x, n_dirs, rng, step=SCENE_STEP):
    """Central differences of scalar ``fn`` along random unit directions vs the reverse-mode gradient.

    Returns ``None`` when a difference stencil crosses a rectifier kink: the network is not
    differentiable across such a stencil, so the point carries no information about the gradient.
    """
    xg = x.detach().clone().requires_grad_(True)
    with _rectifier_inputs() as base:
        value = fn(xg)
    (g,) = backward(value, [xg])
    dirs = [torch.as_tensor(rng.normal(size=x.shape)) for _ in range(n_dirs)]
    dirs = [d / d.norm() for d in dirs]
    analytic = torch.stack([(g * d).sum() for d in dirs])
    numeric = []
    with torch.no_grad():
        for d in dirs:
            ends = []
            for sign in (1, -1):
                with _rectifier_inputs() as seen:
                    ends.append(fn(x + sign * step * d))
                if any(bool((torch.signbit(a) != torch.signbit(b)).any()) for a, b in zip(base, seen)):
                    return None
            numeric.append((ends[0] - ends[1]) / (2 * step))
    return relative_error(analytic, torch.stack(numeric))


def _central_differences(fn, x, step=FD_STEP):
    """(outputs, len(x)) matrix of central differences of the vector-valued ``fn``."""
    cols = []
    with torch.no_grad():
        for i in range(x.numel()):
            e = torch.zeros_like(x)
            e[i] = step
            cols.append((fn(x + e) - fn(x - e)) / (2 * step))
    return torch.stack(cols, -1)


def _network_errors(kind, rng):
    from test_cvae import _random_view
    errs_x, errs_s, redrawn = [], [], 0
    p = -1
    while len(errs_s) < N_POINTS:
        p += 1
        model = build_model(kind, seed=p).double()
        scene = torch.as_tensor(encode_scene(_random_view(rng)).data[None]).double()
        x = torch.as_tensor(rng.normal(size=(1, 75)) + np.r_[0, 0, 3, np.zeros(72)])
        w = torch.as_tensor(rng.normal(size=75))
        if kind == "s1":
            eps = torch.as_tensor(rng.normal(size=(1, 32)))

            def out(s, xv):
                return (s1_forward(model, s, xv, eps=eps)[0][0] * w).sum()

            encoders = ["scene_enc"]
        else:
            eps = (torch.as_tensor(rng.normal(size=(1, 8))), torch.as_tensor(rng.normal(size=(1, 32))))

            def out(s, xv):
                g, l, _, _ = s2_forward(model, s, xv, eps=eps)
                return (torch.cat([g, l], -1)[0] * w).sum()

            encoders = ["scene_enc_g", "scene_enc_l"]
        # scene input: all encoders live, checked along random directions
        err_s = _directional_check(lambda s: out(s, x), scene, 6, rng)
        if err_s is None:
            redrawn += 1
            continue
        errs_s.append(err_s)
        # body input: every coordinate; the scene codes are constant here, so they are evaluated once
        saved = {name: getattr(model, name) for name in encoders}
        with torch.no_grad():
            codes = {name: enc(scene) for name, enc in saved.items()}
        for name in encoders:
            setattr(model, name, _FixedCode(codes[name]))
        try:
            errs_x.append(gradcheck(lambda xv: out(scene, xv), x, step=FD_STEP))
        finally:
            for name, enc in saved.items():
                setattr(model, name, enc)
    return max(errs_x), max(errs_s), redrawn


def test_c01_gradient_suite(acceptance_log, template, small_room):
    with criterion(acceptance_log, 1, "gradient suite") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(101)
        cam = Camera.default()
        errors = {}

        pts = [rng.normal(size=150) + np.r_[0, 0, 3, np.zeros(72), 0, 0, 3, np.zeros(72)] for _ in range(N_POINTS)]
        errors["rec"] = max(gradcheck(lambda v: loss_reconstruction(v[:75], v[75:], cam), torch.as_tensor(p),
                                      step=FD_STEP) for p in pts)
        errors["kl"] = max(gradcheck(lambda v: loss_kl(v[:32], v[32:]), torch.as_tensor(rng.normal(size=64)),
                                     step=FD_STEP) for _ in range(N_POINTS))
        errors["vposer"] = max(gradcheck(loss_vposer, torch.as_tensor(rng.normal(size=32)), step=FD_STEP)
                               for _ in range(N_POINTS))

        # bodies resting in a furnished room, pushed 10 cm down so both scene terms are active
        placed = synth_interactions(small_room.spec, small_room.mesh, small_room.sdf, template, N_POINTS,
                                    seed=11, scene_id="small")
        assert len(placed) == N_POINTS
        idx = contact_vertices(template)
        weights = LossWeights()
        scene = small_room.contact_mesh
        e_coll, e_cont, e_fit = [], [], []
        for s in placed:
            T = torch.as_tensor(s.camera.T_cw)
            x0 = s.body.to_vector()
            x = x0.copy()
            x[0:3] += s.camera.T_cw[:3, :3].T @ np.array([0.0, -0.1, 0.0])
            x[9:] += rng.normal(0, 0.05, size=66)

            def world(v):
                return body_vertices(v, template) @ T[:3, :3].T + T[:3, 3]

            xt, x0t = torch.as_tensor(x), torch.as_tensor(x0)
            assert float(loss_collision(world(xt), small_room.sdf)) > 0

            def terms(v):
                vw = world(v)
                return torch.stack([loss_collision(vw, small_room.sdf),
                                    loss_contact(vw, scene, idx, weights.geman_sigma),
                                    loss_fitting(v, x0t, vw, scene, small_room.sdf, weights, idx)])

            # one set of probes serves all three losses
            numeric = _central_differences(terms, xt)
            for k, errs in enumerate((e_coll, e_cont, e_fit)):
                xg = xt.clone().requires_grad_(True)
                (g,) = backward(terms(xg)[k], [xg])
                errs.append(relative_error(g, numeric[k]))
        errors["collision"], errors["contact"], errors["L_f"] = max(e_coll), max(e_cont), max(e_fit)

        errors["S1_body"], errors["S1_scene"], redrawn_s1 = _network_errors("s1", rng)
        errors["S2_body"], errors["S2_scene"], redrawn_s2 = _network_errors("s2", rng)
        elapsed = time.perf_counter() - t0
        info.update({k: _fmt(v) for k, v in errors.items()})
        info["kink_redraws"] = (redrawn_s1, redrawn_s2)
        bad = {k: v for k, v in errors.items() if not v <= GRAD_TOL}
        assert not bad, f"relative error above {GRAD_TOL}: {bad}"
        assert elapsed < 120, f"gradient suite took {elapsed:.1f} s"


# ---------------------------------------------------------------------------
# 2. SDF oracle

def test_c02_sdf_oracle(acceptance_log):
    with criterion(acceptance_log, 2, "SDF oracle") as info:
        t0 = time.perf_counter()
        shell = room_shell(3.0, 3.0, 3.0)
        sdf = compute_sdf(shell, dims=17, padding=0.4)
        assert sdf.values.shape == (17, 17, 17)
        ii, jj, kk = np.meshgrid(*(np.arange(17),) * 3, indexing="ij")
        nodes = sdf.origin + sdf.spacing * np.stack([ii, jj, kk], -1).reshape(-1, 3)
        ref = brute_force_sdf(nodes, shell.vertices[shell.faces]).reshape(17, 17, 17)
        err = float(np.abs(sdf.values - ref).max())
        sampled = sample_sdf(sdf, nodes).reshape(17, 17, 17)
        elapsed = time.perf_counter() - t0
        info.update(max_abs_err=_fmt(err), nodes_exact=bool(np.array_equal(sampled, sdf.values)),
                    sign_positive_inside=int((ref > 0).sum()))
        assert err <= 1e-6
        assert np.array_equal(sampled, sdf.values)
        assert elapsed < 30


# ---------------------------------------------------------------------------
# 3. KL vs Monte Carlo

def test_c03_kl_monte_carlo(acceptance_log):
    with criterion(acceptance_log, 3, "KL vs Monte Carlo") as info:
        rng = np.random.default_rng(303)
        worst = 0.0
        for _ in range(10):
            mu = rng.normal(0, 1, size=32)
            lv = rng.uniform(-1.5, 1.0, size=32)
            closed = float(loss_kl(torch.as_tensor(mu), torch.as_tensor(lv)))
            total, n = 0.0, 0
            for _ in range(10):
                eps = rng.standard_normal(size=(100_000, 32))
                z = mu + np.exp(0.5 * lv) * eps
                # log q(z) - log p(z); the 2*pi terms cancel
                total += float((-0.5 * lv - 0.5 * eps ** 2 + 0.5 * z ** 2).sum(axis=1).sum())
                n += len(z)
            mc = total / n
            worst = max(worst, abs(mc - closed) / closed)
        info["max_rel_dev"] = _fmt(worst)
        assert worst <= 0.02


# ---------------------------------------------------------------------------
# 4. metric bounds

def test_c04_metric_bounds(acceptance_log, template, small_room):
    with criterion(acceptance_log, 4, "metric bounds") as info:
        h0, s0 = diversity_metric([np.full(75, 0.7)] * 40, k=20)
        rng = np.random.default_rng(404)
        centres = rng.normal(0, 100, size=(20, 75))
        bodies = np.repeat(centres, 10, axis=0) + rng.normal(0, 1e-2, size=(200, 75))
        h20, _ = diversity_metric(bodies, k=20)
        floating = []
        for i in range(10):
            R = rotation_about((0, 1, 0), rng.uniform(-np.pi, np.pi))
            x = np.concatenate([[2.2, 1.6, 1.5 + 0.1 * i], matrix_to_rot6d(R), rng.normal(0, 0.3, 66)])
            floating.append(body_vertices(x, template).numpy())
        non_coll, contact = physical_metric(floating, small_room.sdf)
        info.update(degenerate=(h0, s0), clusters20=f"{h20:.9f} (ln 20 = {math.log(20):.9f})", floating=(non_coll, contact))
        assert h0 == 0.0 and s0 == 0.0
        assert abs(h20 - math.log(20)) <= 1e-6
        assert non_coll == 1.0 and contact == 0.0


# ---------------------------------------------------------------------------
# 5. fitting efficacy

def _perturbed_initializations(ds, n=100, seed=505):
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(ds.samples), size=n, replace=False)
    out = []
    for i, j in enumerate(picks):
        s = ds.samples[j]
        dy = -rng.uniform(0.05, 0.2) if i % 2 == 0 else rng.uniform(0.05, 0.3)
        x = s.body.to_vector().copy()
        x[0:3] += s.camera.T_cw[:3, :3].T @ np.array([0.0, dy, 0.0])
        out.append((s, BodyParams.from_vector(x)))
    return out


def _world(x: BodyParams, T, template):
    return body_vertices(x.to_vector(), template).numpy() @ T[:3, :3].T + T[:3, 3]


def test_c05_fitting_efficacy(acceptance_log, dataset2000, template):
    with criterion(acceptance_log, 5, "fitting efficacy") as info:
        inits = _perturbed_initializations(dataset2000)
        t0 = time.perf_counter()
        weights = LossWeights(alpha_1=0.1, alpha_2=0.5, alpha_3=0.01)
        pre, post = {}, {}
        for k, (s, x0) in enumerate(inits):
            room = dataset2000.room_of(s)
            res = fit_body(x0, room.contact_mesh, room.sdf, s.camera.T_cw, template, weights=weights)
            pre.setdefault(s.scene_id, []).append(_world(x0, s.camera.T_cw, template))
            post.setdefault(s.scene_id, []).append(_world(res.x_h_refined, s.camera.T_cw, template))
        elapsed = time.perf_counter() - t0

        def aggregate(groups):
            # vertex-weighted non-collision and body-weighted contact, pooled over rooms
            nc = ct = n = 0
            for sid, verts in groups.items():
                a, b = physical_metric(verts, dataset2000.rooms[sid].sdf)
                nc += a * len(verts)
                ct += b * len(verts)
                n += len(verts)
            return nc / n, ct / n

        (pre_nc, pre_ct), (post_nc, post_ct) = aggregate(pre), aggregate(post)
        info.update(pre=(round(pre_nc, 4), round(pre_ct, 4)), post=(round(post_nc, 4), round(post_ct, 4)),
                    fit_seconds=round(elapsed, 1))
        failures = []
        if not post_nc >= 0.95:
            failures.append(f"non-collision {post_nc:.4f} < 0.95")
        if not post_ct >= 0.90:
            failures.append(f"contact ratio {post_ct:.4f} < 0.90")
        if not (post_nc > pre_nc and post_ct > pre_ct):
            failures.append("metrics did not both improve")
        if not elapsed < 300:
            failures.append(f"runtime {elapsed:.0f} s >= 300 s")
        assert not failures, "; ".join(failures)


# ---------------------------------------------------------------------------
# 6. training sanity

def test_c06_training_sanity(acceptance_log, dataset2000, trained_s1, trained_s1_hs):
    with criterion(acceptance_log, 6, "training sanity") as info:
        h = trained_s1.history
        assert [r["epoch"] for r in h] == list(range(30))
        first, last = h[0]["val_rec"], h[29]["val_rec"]
        ratio = last / first
        start = TrainSchedule(epochs=30).hs_start_epoch
        trace = trained_s1_hs.trace
        flags = {}
        for t in trace:
            flags.setdefault(t["epoch"], set()).add(t["hs_enabled"])
        audit = all(flags[e] == {e >= start} for e in range(30))
        hs_active = all((t["hs_term"] > 0) == t["hs_enabled"] for t in trace)
        total = TIMINGS["dataset"] + TIMINGS["s1"] + TIMINGS["s1_hs"]
        info.update(val_rec_first=_fmt(first), val_rec_last=_fmt(last), ratio=_fmt(ratio), hs_start_epoch=start,
                    hs_audit=audit, minutes=round(total / 60, 1))
        assert start == 23
        assert ratio <= 0.5
        assert audit and hs_active
        assert [r["hs_enabled"] for r in trained_s1_hs.history] == [e >= 23 for e in range(30)]
        assert total <= 30 * 60


# ---------------------------------------------------------------------------
# 7. generation non-collapse

def test_c07_generation_diversity(acceptance_log, dataset2000, trained_s1):
    with criterion(acceptance_log, 7, "generation non-collapse") as info:
        _, scene = _test_scene(dataset2000)
        bodies = sample(trained_s1.model, scene, 200, seed=0)
        h, size, labels = diversity_metric(bodies, k=20, seed=0, return_labels=True)
        occupied = len(np.unique(labels))
        info.update(entropy=_fmt(h), occupied=occupied, mean_cluster_size=_fmt(size))
        assert h > 1.5 and occupied >= 10


# ---------------------------------------------------------------------------
# 8. pose prior

def test_c08_pose_prior(acceptance_log, dataset2000, trained_s1):
    with criterion(acceptance_log, 8, "pose prior") as info:
        _, scene = _test_scene(dataset2000)
        prior = derive_pose_prior(trained_s1.model, scene, n=100, seed=0)
        thetas = [b.theta_b for b in sample(trained_s1.model, scene, 100, seed=0)]
        independent = np.array([math.fsum(t[i] for t in thetas) / 100 for i in range(32)])
        mean_err = float(np.abs(prior - independent).max())
        at_prior = prior_regularizer(prior, prior)
        rng = np.random.default_rng(808)
        grad_err = 0.0
        for _ in range(20):
            th = torch.as_tensor(prior + rng.normal(size=32), dtype=torch.float64).requires_grad_(True)
            prior_regularizer(th, prior).backward()
            grad_err = max(grad_err, float((th.grad - 2 * (th.detach() - torch.as_tensor(prior))).abs().max()))
        info.update(mean_err=_fmt(mean_err), value_at_prior=at_prior, grad_err=_fmt(grad_err))
        assert mean_err <= 1e-12
        assert at_prior == 0.0
        assert grad_err <= 1e-10


# ---------------------------------------------------------------------------
# 9. end-to-end determinism

PIPELINE = [
    ["template"],
    ["synth", "--n-pairs", "24", "--n-rooms", "3", "--splits", "1,1,1", "--sdf-dims", "24", "--seed", "3"],
    ["train", "--epochs", "2", "--batch-size", "8", "--max-batches-per-epoch", "2", "--seed", "3"],
    ["sample", "--n", "20", "--seed", "7"],
    ["fit", "--fit-iters", "20"],
    ["eval", "--bodies", "{out}/fitted/bodies.jsonl"],
]


def _run_pipeline(out):
    env = dict(os.environ)
    env.pop("PSIW_OUTPUT_ROOT", None)
    for step in PIPELINE:
        args = [a.format(out=out) for a in step]
        r = subprocess.run([sys.executable, "-m", "psiw.cli", *args, "--out", str(out)], capture_output=True,
                           text=True, env=env)
        assert r.returncode == 0, f"psiw {step[0]} failed: {r.stderr.strip()}"


def test_c09_end_to_end_determinism(acceptance_log, tmp_path):
    with criterion(acceptance_log, 9, "end-to-end determinism") as info:
        a, b = tmp_path / "run_a", tmp_path / "run_b"
        _run_pipeline(a)
        _run_pipeline(b)
        artifacts = ["samples.jsonl", "fitted/bodies.jsonl", "fitted/trace.jsonl", "eval.json", "model.psiw"]
        artifacts += sorted(str(p.relative_to(a)) for p in (a / "fitted").glob("body_*.ply"))
        differing = [p for p in artifacts if (a / p).read_bytes() != (b / p).read_bytes()]
        info.update(artifacts=len(artifacts), differing=len(differing))
        assert len(artifacts) > 5
        assert not differing, differing


# ---------------------------------------------------------------------------
# 10. format round trips

def test_c10_format_round_trips(acceptance_log, dataset2000, trained_s1, template, tmp_path):
    with criterion(acceptance_log, 10, "format round trips") as info:
        checks = {}
        room = dataset2000.rooms["room00"]
        room.sdf.save(tmp_path / "r.psdf")
        back = SdfGrid.load(tmp_path / "r.psdf")
        checks["sdf"] = (np.array_equal(back.values, room.sdf.values) and back.values.dtype == room.sdf.values.dtype
                         and np.array_equal(back.origin, room.sdf.origin) and back.spacing == room.sdf.spacing
                         and back.to_bytes() == room.sdf.to_bytes())

        save_cvae(tmp_path / "m.psiw", trained_s1.model)
        m2 = load_cvae(tmp_path / "m.psiw")
        sd1, sd2 = trained_s1.model.state_dict(), m2.state_dict()
        checks["checkpoint"] = sd1.keys() == sd2.keys() and all(
            torch.equal(sd1[k], sd2[k]) and sd1[k].dtype == sd2[k].dtype for k in sd1)

        template.save(tmp_path / "t.psbt")
        checks["template"] = BodyTemplate.load(tmp_path / "t.psbt").to_bytes() == template.to_bytes()

        # every room, a slice of samples from each (full-size views are re-rendered on save)
        subset = [s for sid in dataset2000.rooms for s in [x for x in dataset2000.samples if x.scene_id == sid][:15]]
        ds = Dataset(dataset2000.rooms, subset)
        io.save_dataset(tmp_path / "ds", ds)
        ds2 = io.load_dataset(tmp_path / "ds")
        same = len(ds2.samples) == len(subset)
        for s, t in zip(subset, ds2.samples):
            same &= (np.array_equal(s.body.to_vector(), t.body.to_vector()) and s.scene_id == t.scene_id
                     and s.split == t.split and s.kind == t.kind and np.array_equal(s.camera.T_cw, t.camera.T_cw)
                     and np.array_equal(s.depth_small, t.depth_small)
                     and np.array_equal(s.semantics_small, t.semantics_small))
        for sid, r in ds.rooms.items():
            r2 = ds2.rooms[sid]
            same &= (np.array_equal(r.mesh.vertices, r2.mesh.vertices) and np.array_equal(r.mesh.faces, r2.mesh.faces)
                     and np.array_equal(r.mesh.semantic, r2.mesh.semantic)
                     and r.sdf.to_bytes() == r2.sdf.to_bytes() and r.spec.to_json() == r2.spec.to_json())
        checks["dataset"] = bool(same)

        def corrupt(path):
            raw = bytearray(path.read_bytes())
            raw[0:4] = b"XXXX"
            path.write_bytes(bytes(raw))

        rejected = {}
        for name, path, loader, fmt in [
            ("sdf", tmp_path / "r.psdf", SdfGrid.load, "PSDF"),
            ("checkpoint", tmp_path / "m.psiw", load_cvae, "PSIW"),
            ("template", tmp_path / "t.psbt", BodyTemplate.load, "PSBT"),
            ("dataset", tmp_path / "ds" / "rooms" / "room00" / "sdf.psdf", lambda p: io.load_dataset(tmp_path / "ds"),
             "PSDF"),
            ("dataset mesh", tmp_path / "ds" / "rooms" / "room01" / "mesh.ply",
             lambda p: io.load_dataset(tmp_path / "ds"), "PLY"),
        ]:
            corrupt(path)
            try:
                loader(path)
                rejected[name] = False
            except FormatError as e:
                rejected[name] = fmt in str(e)
            if name == "dataset":
                room.sdf.save(path)  # restore so the mesh check below reaches the PLY reader
        info.update(round_trips=checks, corrupted_rejected=rejected)
        assert all(checks.values())
        assert all(rejected.values())
