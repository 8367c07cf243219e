import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from csci.data import Sample, Split
from csci.evaluation import (Meta, Protocol, cmc_map, dbscan, evaluate, export_embeddings, gallery_keep,
                             kmeans, pairwise_agreement, pairwise_distances)
from csci.gradcheck import tiny_model_config
from csci.io import read_csch
from csci.model import CsciModel
from oracles import average_precision, dbscan_reference, kmeans_loop, ranking_oracle


def random_instance(rng, m=None, n=None):
    m = m or int(rng.integers(1, 6))
    n = n or int(rng.integers(1, 11))
    q = Meta(rng.integers(0, 3, m), rng.integers(0, 3, m), rng.integers(0, 2, m))
    g = Meta(rng.integers(0, 3, n), rng.integers(0, 3, n), rng.integers(0, 2, n))
    # coarse values force ties so the stable order is exercised
    dist = rng.integers(0, 4, (m, n)) / 4.0 if rng.random() < 0.5 else rng.random((m, n))
    return dist, q, g


def test_distance_examples():
    v = np.array([[1.0, 2.0, 3.0]])
    assert abs(pairwise_distances(v, v, "cosine")[0, 0]) < 1e-15
    assert pairwise_distances(v, v, "euclidean")[0, 0] == 0.0
    assert abs(pairwise_distances([[1.0, 0.0]], [[0.0, 1.0]], "cosine")[0, 0] - 1.0) < 1e-15
    Q = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
    G = np.array([[2.0, 0.0], [1.0, 1.0]])
    for i in range(3):
        for j in range(2):
            eu = np.sqrt(sum((Q[i, k] - G[j, k]) ** 2 for k in range(2)))
            cos = 1 - sum(Q[i, k] * G[j, k] for k in range(2)) / (np.hypot(*Q[i]) * np.hypot(*G[j]))
            assert abs(pairwise_distances(Q, G, "euclidean")[i, j] - eu) < 1e-12
            assert abs(pairwise_distances(Q, G, "cosine")[i, j] - cos) < 1e-12
    with pytest.raises(ValueError):
        pairwise_distances([[0.0, 0.0]], G, "cosine")


def test_self_retrieval_perfect():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(6, 4))
    q = Meta(np.arange(6), np.zeros(6, int), np.zeros(6, int))
    g = Meta(np.arange(6), np.ones(6, int), np.zeros(6, int))
    r = evaluate(f, f, q, g, "general")
    assert r.rank(1) == 1.0 and r.map == 1.0 and r.valid_queries == 6


def test_crafted_instance_against_oracle():
    rng = np.random.default_rng(42)
    dist, q, g = random_instance(rng, 5, 10)
    for proto in ("general", "cc", "sc"):
        try:
            ref = ranking_oracle(dist.tolist(), *map(list, q), *map(list, g), proto, 10)
        except ZeroDivisionError:
            with pytest.raises(ValueError, match="empty evaluation"):
                cmc_map(dist, q, g, proto)
            continue
        r = cmc_map(dist, q, g, proto)
        np.testing.assert_allclose(r.cmc, ref[0], atol=1e-12)
        assert abs(r.map - ref[1]) < 1e-12 and r.valid_queries == ref[2]


def test_ap_by_definition():
    assert average_precision([True]) == 1.0
    assert average_precision([False, True, False, True]) == (1 / 2 + 2 / 4) / 2
    dist = np.array([[0.1, 0.2, 0.3, 0.4]])
    q = Meta(np.array([0]), np.array([9]), np.array([0]))
    g = Meta(np.array([1, 0, 2, 0]), np.zeros(4, int), np.zeros(4, int))
    r = cmc_map(dist, q, g)
    assert abs(r.map - 0.5) < 1e-15
    assert list(r.cmc) == [0.0, 1.0, 1.0, 1.0]


def test_cc_filter_excludes_same_clothes():
    q = Meta(np.array([0]), np.array([0]), np.array([1]))
    g = Meta(np.array([0, 0, 1]), np.array([1, 1, 1]), np.array([1, 2, 0]))
    keep = gallery_keep(0, q, g, "cc")
    assert list(keep) == [False, True, True]
    # the excluded same-clothes item is nearest, yet rank-1 is decided without it
    dist = np.array([[0.0, 0.5, 0.2]])
    r = cmc_map(dist, q, g, "cc")
    assert r.rank(1) == 0.0 and r.rank(2) == 1.0


def test_empty_evaluation():
    q = Meta(np.array([0]), np.array([0]), np.array([0]))
    g = Meta(np.array([0]), np.array([0]), np.array([0]))
    with pytest.raises(ValueError, match="empty evaluation"):
        cmc_map(np.zeros((1, 1)), q, g)


def test_dropped_queries_counted():
    q = Meta(np.array([0, 5]), np.array([0, 0]), np.array([0, 0]))
    g = Meta(np.array([0, 1]), np.array([1, 1]), np.array([0, 0]))
    r = cmc_map(np.array([[0.1, 0.2], [0.1, 0.2]]), q, g)
    assert r.valid_queries == 1 and r.num_queries == 2
    assert r.to_dict() == {"rank1": 1.0, "rank5": 1.0, "rank10": 1.0, "map": 1.0, "valid_queries": 1}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ranking_properties(seed):
    rng = np.random.default_rng(seed)
    dist, q, g = random_instance(rng)
    for proto in Protocol:
        general = gallery_keep(0, q, g, "general")
        assert np.all(gallery_keep(0, q, g, proto) <= general)
        try:
            r = cmc_map(dist, q, g, proto)
        except ValueError:
            continue
        assert np.all(np.diff(r.cmc) >= 0)
        assert 0 <= r.map <= 1 and 0 <= r.cmc[0] <= 1
        assert r.map <= r.cmc[-1] + 1e-15
        ref = ranking_oracle(dist.tolist(), *map(list, q), *map(list, g), proto.value, len(r.cmc))
        np.testing.assert_allclose(r.cmc, ref[0], atol=1e-12)
        assert abs(r.map - ref[1]) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    Q, G = rng.normal(size=(4, 5)), rng.normal(size=(8, 5))
    q = Meta(rng.integers(0, 3, 4), np.zeros(4, int), rng.integers(0, 2, 4))
    g = Meta(rng.integers(0, 3, 8), np.ones(8, int), rng.integers(0, 2, 8))
    try:
        a = evaluate(Q, G, q, g, "general")
    except ValueError:
        return
    # power-of-two scaling keeps every float operation exact
    s = 2.0 ** np.round(np.log2(c))
    b = evaluate(Q * s, G * s, q, g, "general")
    assert np.array_equal(a.cmc, b.cmc) and a.map == b.map


def test_kmeans_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 3))
    assert kmeans(x, 6).sse < 1e-20
    blobs = np.concatenate([rng.normal(0, 0.1, (10, 2)), rng.normal(10, 0.1, (10, 2))])
    labels = kmeans(blobs, 2, seed=3).labels
    assert len(set(labels[:10])) == 1 and len(set(labels[10:])) == 1 and labels[0] != labels[10]
    with pytest.raises(ValueError):
        kmeans(x, 7)


def test_kmeans_matches_oracle_with_same_init():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(15, 2))
    init = x[[0, 5, 10]]
    ours = kmeans(x, 3, init=init)
    labels, cent, sse = kmeans_loop(x, init, 300)
    np.testing.assert_array_equal(ours.labels, labels)
    np.testing.assert_allclose(ours.centroids, cent, atol=1e-12)
    assert abs(ours.sse - sse) < 1e-9


def test_kmeans_deterministic():
    x = np.random.default_rng(1).normal(size=(30, 4))
    a, b = kmeans(x, 4, seed=7), kmeans(x, 4, seed=7)
    assert np.array_equal(a.labels, b.labels)


def test_dbscan_examples():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
    assert list(dbscan(x, 0.5, 3)) == [0, 0, 0]
    y = np.vstack([x, [[5.0, 5.0]]])
    assert dbscan(y, 0.5, 2)[-1] == -1


def test_dbscan_crafted_layout():
    pts = np.array([
        [0, 0], [0.5, 0], [1.0, 0], [1.5, 0],        # chain of cores
        [1.5, 0.55],                                 # border of the chain
        [5, 5], [5.4, 5], [5, 5.4],                  # tight triangle
        [9, 0], [9.9, 0],                            # too sparse
        [5.2, 2.0], [20, 20],                        # isolated
    ])
    labels = dbscan(pts, 0.6, 3)
    cores, border, comp, noise = dbscan_reference(pts, 0.6, 3)
    assert {i for i in range(len(pts)) if labels[i] == -1} == noise
    ours = {frozenset(np.flatnonzero(labels == c)) for c in set(labels) - {-1}}
    assert len(ours) == len(cores)
    for cluster in ours:
        core_part = frozenset(i for i in cluster if i not in border)
        assert core_part in cores
    for i, opts in border.items():
        cid = labels[i]
        assert any(labels[j] == cid for j in range(len(pts)) if comp[j] in opts and j not in border)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 1.5), st.integers(1, 4))
def test_dbscan_reference_property(seed, eps, min_pts):
    pts = np.random.default_rng(seed).uniform(0, 4, (14, 2))
    labels = dbscan(pts, eps, min_pts)
    cores, border, comp, noise = dbscan_reference(pts, eps, min_pts)
    assert {i for i in range(len(pts)) if labels[i] == -1} == noise
    core_groups = {frozenset(i for i in np.flatnonzero(labels == c) if i not in border)
                   for c in set(labels) - {-1}}
    assert core_groups == cores


def test_pairwise_agreement():
    assert pairwise_agreement([0, 0, 1], [5, 5, 7]) == 1.0
    assert pairwise_agreement([0, 0, 0], [1, 2, 3]) == 0.0
    # noise never counts as co-membership
    assert pairwise_agreement([-1, -1], [0, 1]) == 1.0
    assert pairwise_agreement([-1, -1], [0, 0]) == 0.0


def test_export_embeddings(tmp_path):
    model = CsciModel(tiny_model_config())
    imgs = np.random.default_rng(0).integers(0, 256, (3, 28, 28, 3)).astype(np.uint8)
    samples = [Sample(f"{i}.png", i, 0, 0, split=Split.QUERY) for i in range(3)]
    paths = export_embeddings(model, samples, imgs, tmp_path / "e")
    reid, co = read_csch(paths["reid"]), read_csch(paths["co"])
    assert reid.shape == co.shape == (3, 16)
    with torch.no_grad():
        direct = model.forward_image(imgs)
    np.testing.assert_array_equal(co, direct.f_co.numpy())
    np.testing.assert_array_equal(reid, direct.f_reid.numpy())
    lines = [json.loads(x) for x in open(paths["labels"])]
    assert [x["identity"] for x in lines] == [0, 1, 2]
    first = open(paths["reid"], "rb").read()
    export_embeddings(model, samples, imgs, tmp_path / "e")
    assert open(paths["reid"], "rb").read() == first
