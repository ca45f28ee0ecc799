import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from psiw.cvae import build_model, encode_scene, sample
from psiw.evaluation import (
    EvalReport, cluster_entropy, derive_pose_prior, diversity_metric, evaluate, physical_metric,
    prior_regularizer, prior_weight_multiplier,
)
from psiw.geometry import compute_sdf
from psiw.synth import room_shell


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 19), min_size=1, max_size=200))
def test_cluster_entropy_matches_histogram_formula(labels):
    labels = np.array(labels)
    counts = np.bincount(labels, minlength=20)
    p = counts[counts > 0] / len(labels)
    ref = -sum(pi * np.log(pi) for pi in p)
    h = cluster_entropy(labels, 20)
    assert h == pytest.approx(ref, abs=1e-12)
    assert -1e-12 <= h <= np.log(20) + 1e-12


def test_degenerate_set_has_zero_entropy_and_size():
    bodies = [np.full(75, 0.3)] * 25
    h, size = diversity_metric(bodies, k=20)
    assert h == 0.0 and size == 0.0


def test_twenty_separated_clusters_give_log_k():
    rng = np.random.default_rng(0)
    centres = rng.normal(0, 50, size=(20, 75))
    bodies = np.repeat(centres, 5, axis=0) + rng.normal(0, 1e-3, size=(100, 75))
    h, size, labels = diversity_metric(bodies, k=20, return_labels=True)
    assert h == pytest.approx(np.log(20), abs=1e-12)
    assert len(np.unique(labels)) == 20
    assert 0 < size < 0.02


def test_mean_cluster_size_definition():
    # two clusters: {0, 2} around 1 and {10} alone, along the first axis
    X = np.zeros((3, 75))
    X[:, 0] = [0.0, 2.0, 10.0]
    h, size = diversity_metric(X, k=2)
    assert size == pytest.approx((1.0 + 0.0) / 2)
    assert h == pytest.approx(-(2 / 3) * np.log(2 / 3) - (1 / 3) * np.log(1 / 3))


def test_diversity_is_seeded():
    X = np.random.default_rng(3).normal(size=(60, 75))
    assert diversity_metric(X, seed=4) == diversity_metric(X, seed=4)


def test_diversity_needs_k_bodies():
    with pytest.raises(ValueError, match="at least k=20"):
        diversity_metric(np.zeros((5, 75)))


@pytest.fixture(scope="module")
def cube_sdf():
    return compute_sdf(room_shell(2.0, 2.0, 2.0), dims=17, padding=0.3)


def test_physical_metric_toy(cube_sdf):
    floating = np.array([[1.0, 1.0, 1.0], [1.2, 0.8, 1.1]])
    touching = np.array([[1.0, 1.0, 1.0], [1.0, -0.1, 1.0], [1.0, 0.5, 1.0], [1.0, 2.2, 1.0]])
    non_coll, contact = physical_metric([floating, touching], cube_sdf)
    assert non_coll == pytest.approx(4 / 6)
    assert contact == 0.5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_physical_metric_bounds(seed):
    sdf = compute_sdf(room_shell(2.0, 2.0, 2.0), dims=9, padding=0.3)
    rng = np.random.default_rng(seed)
    bodies = [rng.uniform(-0.2, 2.2, size=(rng.integers(1, 30), 3)) for _ in range(rng.integers(1, 6))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # points past the padding are clamped, which is fine here
        a, b = physical_metric(bodies, sdf)
    assert 0 <= a <= 1 and 0 <= b <= 1


def test_physical_metric_accepts_tensors_and_warns_outside(cube_sdf):
    v = torch.tensor([[1.0, 1.0, 1.0], [9.0, 1.0, 1.0]], dtype=torch.float64)
    with pytest.warns(UserWarning, match="outside the SDF grid"):
        non_coll, _ = physical_metric([v], cube_sdf)
    assert non_coll == 0.5


def test_physical_metric_empty(cube_sdf):
    with pytest.raises(ValueError, match="no bodies"):
        physical_metric([], cube_sdf)


def test_report_round_trip_and_table(cube_sdf):
    X = np.random.default_rng(0).normal(size=(25, 75))
    verts = [np.array([[1.0, 1.0, 1.0]])] * 25
    r = evaluate(X, verts, cube_sdf, k=20, seed=2)
    assert EvalReport.from_json(r.to_json()) == r
    assert r.n_bodies == 25 and r.non_collision_score == 1.0 and r.contact_ratio == 0.0
    assert "cluster entropy" in r.table()


def _scene():
    from test_cvae import _random_view
    return encode_scene(_random_view(np.random.default_rng(0)))


def test_pose_prior_is_sample_mean():
    m = build_model("s1", seed=3)
    s = _scene()
    prior = derive_pose_prior(m, s, n=30, seed=9)
    ref = np.mean([b.theta_b for b in sample(m, s, 30, 9)], axis=0)
    np.testing.assert_allclose(prior, ref, atol=1e-12, rtol=0)
    with pytest.raises(ValueError):
        derive_pose_prior(m, s, n=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_prior_regularizer_value_and_gradient(seed):
    rng = np.random.default_rng(seed)
    th, ths = rng.normal(size=32), rng.normal(size=32)
    assert prior_regularizer(th, ths) == pytest.approx(((th - ths) ** 2).sum(), rel=1e-14)
    t = torch.as_tensor(th).requires_grad_(True)
    prior_regularizer(t, ths).backward()
    np.testing.assert_allclose(t.grad.numpy(), 2 * (th - ths), atol=1e-12)


def test_prior_weight_multiplier():
    assert prior_weight_multiplier() == 1.5
