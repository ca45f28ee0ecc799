import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from psiw import cvae
from psiw._binary import FormatError
from psiw.cvae import (
    CvaeS1, CvaeS2, SceneTensor, TrainSchedule, TrainingDiverged, build_model, encode_scene, forward_rec,
    latent_traverse, load_cvae, s1_forward, s2_forward, sample, save_cvae, scene_tensor_from_small, train,
)
from psiw.geometry import Camera, SceneView
from psiw.semantics import BACKGROUND, SYNTH_CATEGORIES


def _random_view(rng, h=270, w=480):
    depth = rng.uniform(0.5, 9.0, size=(h, w)).astype(np.float32)
    cats = np.array(list(SYNTH_CATEGORIES) + [BACKGROUND, 0, 20])
    sem = cats[rng.integers(len(cats), size=(h, w))].astype(np.uint8)
    depth[sem == BACKGROUND] = 0
    return SceneView(depth, sem, Camera.default())


def _scene(seed=0):
    return encode_scene(_random_view(np.random.default_rng(seed)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_scene_tensor_one_hot_and_padding(seed):
    view = _random_view(np.random.default_rng(seed))
    t = encode_scene(view).data
    assert t.shape == (13, 128, 128) and t.dtype == np.float32
    # 480x270 keeps its aspect ratio: 128 x 72 content, the rest is zero padding
    assert (t[:, 72:, :] == 0).all()
    onehot = t[1:, :72]
    assert set(np.unique(onehot.sum(axis=0))) <= {0.0, 1.0}
    assert ((t[0] >= 0) & (t[0] <= 1)).all()


def test_scene_tensor_channel_assignment():
    d = np.full((2, 2), 5.0, dtype=np.float32)
    s = np.array([[SYNTH_CATEGORIES[0], SYNTH_CATEGORIES[3]], [BACKGROUND, 20]], dtype=np.uint8)
    t = scene_tensor_from_small(d, s, 10.0).data
    assert t[1, 0, 0] == 1 and t[4, 0, 1] == 1
    assert t[1:, 1, 0].sum() == 0  # background: all-zero
    misc = 1 + list(SYNTH_CATEGORIES).index(39)
    assert t[misc, 1, 1] == 1  # unknown category folds into the misc channel
    assert t[0, 0, 0] == pytest.approx(0.5)


def test_encode_scene_warns_on_empty_depth():
    view = SceneView(np.zeros((270, 480), np.float32), np.full((270, 480), BACKGROUND, np.uint8),
                     Camera.default())
    with pytest.warns(UserWarning, match="all zero"):
        encode_scene(view)


def test_scene_encoder_output_size():
    m = CvaeS1()
    code = m.scene_enc(torch.as_tensor(_scene().data[None]))
    assert code.shape == (1, 256)


def test_s1_forward_shapes_and_reparameterization():
    m = build_model("s1", seed=0).double()
    x = torch.randn(3, 75, dtype=torch.float64)
    scenes = [_scene(i) for i in range(3)]
    eps = torch.randn(3, 32, dtype=torch.float64)
    rec, mu, lv = s1_forward(m, scenes, x, eps=eps)
    assert rec.shape == (3, 75) and mu.shape == (3, 32) and lv.shape == (3, 32)
    code = m.scene_enc(torch.as_tensor(np.stack([s.data for s in scenes])).double())
    ref = m.decode(mu + torch.exp(0.5 * lv) * eps, code)
    torch.testing.assert_close(rec, ref, rtol=0, atol=1e-12)
    a = s1_forward(m, scenes, x, use_mean=True)[0]
    b = s1_forward(m, scenes, x, use_mean=True)[0]
    assert torch.equal(a, b)


def test_s2_forward_shapes():
    m = build_model("s2", seed=0).double()
    x = torch.randn(2, 75, dtype=torch.float64)
    g, l, mus, lvs = s2_forward(m, [_scene(0), _scene(1)], x)
    assert g.shape == (2, 3) and l.shape == (2, 72)
    assert mus[0].shape == (2, 8) and mus[1].shape == (2, 32)
    rec, mus2, _ = forward_rec(m, [_scene(0), _scene(1)], x, use_mean=True)
    assert rec.shape == (2, 75) and isinstance(mus2, list)


def test_forward_rejects_bad_shapes():
    m = build_model("s1")
    with pytest.raises(ValueError, match="body batch"):
        s1_forward(m, [_scene()], torch.zeros(2, 75))
    with pytest.raises(TypeError):
        s2_forward(m, [_scene()], torch.zeros(75))
    with pytest.raises(ValueError, match="unknown model kind"):
        build_model("s3")


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50))
def test_decoded_depth_stays_in_front_of_camera(z):
    m = CvaeS1().double()
    y = torch.zeros(1, 75, dtype=torch.float64)
    y[0, 2] = z
    d = float(m.destandardize(y)[0, 2])
    # softplus underflows far below the floor, so equality is the numerical limit
    assert d >= cvae.Z_FLOOR
    y[0, 2] = z + 0.5
    assert float(m.destandardize(y)[0, 2]) >= d
    # closed form of the floor: 0.1 + log(1 + exp(5 (z - 0.1))) / 5; torch drops the
    # log term (< 1e-9) once its argument passes 20
    u = z - cvae.Z_FLOOR
    assert d == pytest.approx(cvae.Z_FLOOR + max(u, 0.0) + math.log1p(math.exp(-5.0 * abs(u))) / 5.0, abs=1e-9)
    if z > 2.0:
        assert d == pytest.approx(z, abs=1e-4)


def test_sampling_deterministic_and_seed_dependent():
    m = build_model("s1", seed=1)
    s = _scene()
    a = np.stack([b.to_vector() for b in sample(m, s, 5, seed=3)])
    b = np.stack([b.to_vector() for b in sample(m, s, 5, seed=3)])
    c = np.stack([b.to_vector() for b in sample(m, s, 5, seed=4)])
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert sample(m, s, 0) == []
    m2 = build_model("s2", seed=1)
    assert len(sample(m2, s, 4, seed=0)) == 4


def test_latent_traverse_centre_is_zero_code():
    m = build_model("s1", seed=2).double()
    s = _scene()
    bodies = latent_traverse(m, s, [0, 3], (-2.0, 2.0), steps=5)
    assert len(bodies) == 5
    centre = m.decode(torch.zeros(1, 32, dtype=torch.float64),
                      m.scene_enc(torch.as_tensor(s.data[None]).double()))
    np.testing.assert_allclose(bodies[2].to_vector(), centre[0].detach().numpy(), atol=1e-12)
    with pytest.raises(ValueError):
        latent_traverse(m, s, [40])


def test_schedule_ramp_and_hs_boundary():
    sch = TrainSchedule(epochs=30)
    assert sch.hs_start_epoch == 23
    assert [sch.hs_enabled(e) for e in (22, 23)] == [False, True]
    assert sch.alpha_kl(0, 0.1) == 0.0 and sch.alpha_kl(5, 0.1) == pytest.approx(0.05)
    assert sch.alpha_kl(10, 0.1) == 0.1 and sch.alpha_kl(29, 0.1) == 0.1
    with pytest.raises(ValueError):
        TrainSchedule(hs_start_fraction=1.0)


@pytest.mark.parametrize("kind", ["s1", "s2"])
def test_checkpoint_round_trip(kind, tmp_path):
    m = build_model(kind, seed=5)
    m.set_stats(np.arange(75.0), np.full(75, 2.0))
    save_cvae(tmp_path / "m.psiw", m)
    back = load_cvae(tmp_path / "m.psiw")
    assert type(back) is type(m)
    for k, v in m.state_dict().items():
        assert torch.equal(v, back.state_dict()[k]), k
    s = _scene()
    a = [b.to_vector() for b in sample(m, s, 3, 0)]
    b = [b.to_vector() for b in sample(back, s, 3, 0)]
    assert np.array_equal(a, b)


def test_checkpoint_corrupted_magic(tmp_path):
    save_cvae(tmp_path / "m.psiw", build_model("s1"))
    raw = bytearray((tmp_path / "m.psiw").read_bytes())
    raw[0] ^= 0xFF
    (tmp_path / "m.psiw").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="PSIW"):
        load_cvae(tmp_path / "m.psiw")


def test_short_training_run(tiny_dataset, tmp_path):
    m = build_model("s1", seed=0)
    sch = TrainSchedule(epochs=4, batch_size=6, kl_ramp_epochs=2)
    res = train(m, tiny_dataset, sch, seed=0, log_path=tmp_path / "log.jsonl")
    lines = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [0, 1, 2, 3]
    assert lines[-1]["train_rec"] < lines[0]["train_rec"]
    assert all(np.isfinite(r["val_rec"]) for r in lines)
    assert [r["alpha_kl"] for r in lines] == [0.0, 0.05, 0.1, 0.1]
    assert all(not t["hs_enabled"] for t in res.trace)


def test_training_is_deterministic(tiny_dataset):
    sch = TrainSchedule(epochs=2, batch_size=6, max_batches_per_epoch=2)
    a = train(build_model("s1", seed=0), tiny_dataset, sch, seed=0)
    b = train(build_model("s1", seed=0), tiny_dataset, sch, seed=0)
    assert a.trace == b.trace
    for k, v in a.model.state_dict().items():
        assert torch.equal(v, b.model.state_dict()[k])


def test_hs_losses_switch_on_at_boundary(tiny_dataset, template):
    sch = TrainSchedule(epochs=4, batch_size=6, max_batches_per_epoch=1, hs_start_fraction=0.5)
    res = train(build_model("s1", seed=0), tiny_dataset, sch, seed=0, template=template, use_hs=True)
    on = {t["epoch"]: t["hs_enabled"] for t in res.trace}
    assert on == {0: False, 1: False, 2: True, 3: True}
    assert all(t["hs_term"] > 0 for t in res.trace if t["hs_enabled"])


def test_divergence_restores_last_good_weights(tiny_dataset, monkeypatch):
    m = build_model("s1", seed=0)
    sch = TrainSchedule(epochs=3, batch_size=6, max_batches_per_epoch=2)
    real = cvae.loss_reconstruction
    calls = {"n": 0}

    def flaky(x, rec, cam):
        calls["n"] += 1
        out = real(x, rec, cam)
        return out * float("nan") if calls["n"] == 4 else out

    snapshots = []
    real_validate = cvae._validate

    def spy(model, *a, **k):
        snapshots.append({k2: v.clone() for k2, v in model.state_dict().items()})
        return real_validate(model, *a, **k)

    monkeypatch.setattr(cvae, "loss_reconstruction", flaky)
    monkeypatch.setattr(cvae, "_validate", spy)
    with pytest.raises(TrainingDiverged) as exc:
        train(m, tiny_dataset, sch, seed=0)
    assert len(exc.value.history) == 1
    for k, v in m.state_dict().items():
        assert torch.equal(v, snapshots[0][k])


def test_train_requires_template_for_hs(tiny_dataset):
    with pytest.raises(ValueError, match="template"):
        train(build_model("s1"), tiny_dataset, TrainSchedule(epochs=1), use_hs=True)
