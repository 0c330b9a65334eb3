import math

import numpy as np
import pytest

import pairforge as pf


def test_cli_usage_and_help():
    code, out, err = pf.run([])
    assert code == 2
    code, out, _ = pf.run(["--help"])
    assert code == 0 and "annotate" in out


def test_synth_annotate_partition(tmp_path):
    n = pf.synth(str(tmp_path), scenes=2, seed=1)
    assert n == 32
    recon = (tmp_path / "recon.txt").read_text()
    covis = pf.covisibility(recon, threads=2)
    assert covis == pf.covisibility(recon, threads=1)
    assert all(a < b and c > 0 for (a, b), c in covis.items())
    assert "POSLIST" in pf.positive_lists(recon)
    clusters = pf.normalized_cut(recon, (tmp_path / "matches.txt").read_text(), max_size=8)
    assert len(clusters) == n
    sizes = np.bincount(list(clusters.values()))
    assert sizes.max() <= 8


def test_parse_error_is_typed():
    with pytest.raises(pf.ParseError):
        pf.covisibility("SCENE 0 a\nIMAGE 1 0 x 10 ten\n")
    assert issubclass(pf.ParseError, pf.Error)


def test_ranked_list_loss_values():
    q = np.array([1.0, 0.0])
    value, grads = pf.ranked_list_loss(q, np.array([[0.0, 1.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert value == pytest.approx(((math.sqrt(2) - 0.8) + 0.9) / 2)
    assert len(grads) == 4
    with pytest.raises(pf.NormalizationError):
        pf.ranked_list_loss(np.zeros(2), np.array([[1.0, 0.0]]), np.zeros((0, 2)))
    value, _ = pf.triplet_loss(q, np.array([0.0, 1.0]), np.array([2.0, 0.0]))
    assert value == pytest.approx(math.sqrt(2) + 0.1)


def test_pooling_limits():
    rng = np.random.default_rng(0)
    values = rng.uniform(0.1, 1.0, size=3 * 2 * 2)
    mean = values.reshape(3, 4).mean(axis=1)
    assert np.allclose(pf.gem(values, 3, 2, 2, p=1.0), mean / np.linalg.norm(mean))
    k, d = 2, 3
    out = pf.netvlad(values, 3, 2, 2, rng.normal(size=(k, d)), rng.normal(size=(k, d)), np.zeros(k))
    assert out.shape == (k * d,)
    assert np.linalg.norm(out) == pytest.approx(1.0)


def test_hnsw_matches_brute_force():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 8))
    names = [f"d{i}" for i in range(len(x))]
    exact = pf.brute_force_knn(names, x, 5)
    index = pf.HnswIndex.build(names, x)
    assert len(index) == 300
    approx = pf.HnswIndex.parse(index.serialize()).query(names, x, 5)
    hits = sum(len({n for n, _ in a[1]} & {n for n, _ in e[1]}) for a, e in zip(approx, exact))
    assert hits / (5 * len(x)) > 0.95
    assert all(q not in {n for n, _ in nb} for q, nb in approx)
