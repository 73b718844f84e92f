import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crosstriplet.data import PairedDataset, one_hot_matrix
from crosstriplet.evaluation import (
    average_precision,
    embed_dataset,
    export_embeddings,
    map_bidirectional,
    precision_scope,
    rank_gallery,
)
from crosstriplet.model import EncoderConfig, forward, init_params


def brute_rank(q, gallery):
    """Selection sort on (distance, index) pairs."""
    keyed = [(sum((q[t] - g[t]) ** 2 for t in range(len(q))), i) for i, g in enumerate(gallery)]
    out = []
    while keyed:
        best = min(keyed)
        keyed.remove(best)
        out.append(best[1])
    return out


def brute_ap(rel):
    hits, total = 0, 0.0
    for i, r in enumerate(rel, start=1):
        if r:
            hits += 1
            total += hits / i
    return total / hits if hits else 0.0


def test_rank_examples():
    g = np.array([[1.0, 1.0], [0.0, 0.0], [2.0, 0.0]])
    assert rank_gallery([0.0, 0.0], g)[0] == 1
    tie = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    assert rank_gallery([0.0, 0.0], tie).tolist() == [0, 1, 2]
    hand = np.array([[3.0, 0.0], [0.5, 0.5], [-1.0, 2.0], [0.0, -1.0]])
    q = np.array([0.2, -0.1])
    assert rank_gallery(q, hand).tolist() == brute_rank(q, hand)


def test_rank_cosine():
    g = np.array([[10.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert rank_gallery([1.0, 0.0], g, "cosine").tolist() == [0, 2, 1]
    with pytest.raises(ValueError):
        rank_gallery([1.0, 0.0], g, "manhattan")


def test_average_precision_examples():
    assert average_precision([1, 1, 1]) == 1.0
    assert average_precision([1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)
    assert average_precision([0, 0, 0]) == 0.0


def test_average_precision_cutoff():
    rel = [0, 1, 0, 1, 1, 1, 1]
    assert average_precision(rel, k=5) == pytest.approx((1 / 2 + 2 / 4 + 3 / 5) / 3, abs=1e-15)
    assert average_precision([0, 0, 1], k=2) == 0.0
    # three hits in the top five at the best possible positions
    assert average_precision([1, 1, 1, 0, 0], k=5) == 1.0


@given(st.lists(st.booleans(), min_size=1, max_size=20))
def test_average_precision_matches_brute(rel):
    assert average_precision(rel) == pytest.approx(brute_ap(rel), abs=1e-12)


def test_map_perfect_embeddings():
    labels = np.repeat(np.arange(4), 5)
    y = one_hot_matrix(labels, 4)
    rep = map_bidirectional(y, y.copy(), labels, labels)
    assert rep.map_a2v == rep.map_v2a == rep.map_avg == 1.0


def test_map_hand_case():
    a = np.array([[0.0, 0.0], [1.0, 1.0], [0.2, 0.9], [2.0, 0.0]])
    v = np.array([[0.1, 0.0], [0.9, 1.2], [0.0, 0.5], [1.5, 0.3]])
    la = np.array([0, 1, 0, 1])
    lv = np.array([0, 1, 1, 0])
    rep = map_bidirectional(a, v, la, lv)
    a2v = [brute_ap([lv[j] == la[i] for j in brute_rank(a[i], v)]) for i in range(4)]
    v2a = [brute_ap([la[j] == lv[i] for j in brute_rank(v[i], a)]) for i in range(4)]
    assert rep.map_a2v == pytest.approx(sum(a2v) / 4, abs=1e-12)
    assert rep.map_v2a == pytest.approx(sum(v2a) / 4, abs=1e-12)
    np.testing.assert_allclose(rep.per_query_ap_a2v, a2v, atol=1e-12)
    assert rep.map_avg == pytest.approx((rep.map_a2v + rep.map_v2a) / 2, abs=1e-12)


def test_map_empty_gallery():
    with pytest.raises(ValueError, match="empty"):
        map_bidirectional(np.zeros((0, 2)), np.zeros((3, 2)), [], [0, 0, 0])


def test_map_invariant_under_rigid_motion():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, size=40)
    a, v = rng.normal(size=(2, 40, 4))
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    shift = rng.normal(size=4) * 5
    base = map_bidirectional(a, v, labels)
    moved = map_bidirectional(a @ q + shift, v @ q + shift, labels)
    assert abs(base.map_a2v - moved.map_a2v) < 1e-9
    assert abs(base.map_v2a - moved.map_v2a) < 1e-9


def test_precision_scope_examples():
    labels = np.repeat(np.arange(3), 4)
    y = one_hot_matrix(labels, 3)
    ps = precision_scope(y, y, labels, [1, 2, 4])
    assert all(v == (1.0, 1.0) for v in ps.values())
    full = precision_scope(np.random.default_rng(0).normal(size=(12, 3)), y, labels, [12])
    assert full[12] == (pytest.approx(1 / 3), pytest.approx(1 / 3))
    with pytest.raises(ValueError, match="K=13"):
        precision_scope(y, y, labels, [13])


def test_precision_scope_toy_hand_count():
    # 6-item gallery on a line; audio queries at 0 and 10.
    v = np.array([[0.0], [1.0], [2.0], [9.0], [10.5], [11.0]])
    lv = np.array([0, 1, 0, 1, 1, 0])
    a = np.array([[0.4], [10.0]])
    la = np.array([0, 1])
    ps = precision_scope(a, v, la, [2], labels_v=lv)
    # query 0 -> items 0, 1 (labels 0, 1): 1/2 ; query 1 -> items 4, 3 (labels 1, 1): 2/2
    assert ps[2][0] == pytest.approx(0.75)


def test_precision_at_one_is_top1_accuracy():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 3, size=30)
    a, v = rng.normal(size=(2, 30, 3))
    rep = map_bidirectional(a, v, labels, ks=[1])
    d = ((a[:, None] - v[None]) ** 2).sum(-1)
    top1 = (labels[d.argmin(1)] == labels).mean()
    assert rep.precision_scope[1][0] == pytest.approx(top1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_map_random_against_brute(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 9, size=2)
    la, lv = rng.integers(0, 3, size=n), rng.integers(0, 3, size=m)
    # small integer grid so that distance ties actually occur
    a, v = rng.integers(-2, 3, size=(n, 2)).astype(float), rng.integers(-2, 3, size=(m, 2)).astype(float)
    rep = map_bidirectional(a, v, la, lv)
    a2v = np.mean([brute_ap([lv[j] == la[i] for j in brute_rank(a[i], v)]) for i in range(n)])
    assert rep.map_a2v == pytest.approx(a2v, abs=1e-12)


def _tiny_model_and_data():
    cfg = EncoderConfig(label_dim=2, audio_dim=3, visual_dim=4, hidden=(5,), init_seed=1)
    params = init_params(cfg)
    rng = np.random.default_rng(0)
    ds = PairedDataset(rng.normal(size=(4, 3)), rng.normal(size=(4, 4)), [0, 1, 0, 1])
    return params, ds


def test_export_embeddings(tmp_path):
    params, ds = _tiny_model_and_data()
    p1 = export_embeddings(params, ds, tmp_path / "e1.csv")
    p2 = export_embeddings(params, ds, tmp_path / "e2.csv")
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "modality,label,e_1,e_2"
    assert len(lines) == 1 + 2 * len(ds)
    rows = [line.split(",") for line in lines[1:]]
    assert [r[0] for r in rows] == ["audio"] * 4 + ["visual"] * 4
    exported = np.array([[float(x) for x in r[2:]] for r in rows])
    ea, _ = forward(params.audio, ds.audio)
    ev, _ = forward(params.visual, ds.visual)
    assert np.array_equal(exported, np.vstack([ea, ev]))


def test_export_unwritable(tmp_path):
    params, ds = _tiny_model_and_data()
    with pytest.raises(OSError):
        export_embeddings(params, ds, tmp_path / "missing" / "dir" / "e.csv")


def test_embed_dataset_dim_mismatch():
    params, ds = _tiny_model_and_data()
    bad = PairedDataset(ds.audio[:, :2], ds.visual, ds.labels)
    with pytest.raises(ValueError, match="3, 4"):
        embed_dataset(params, bad)


def test_report_json_and_csv(tmp_path):
    labels = np.repeat(np.arange(2), 3)
    y = one_hot_matrix(labels, 2)
    rep = map_bidirectional(y, y, labels, ks=[1, 3])
    rep.write_json(tmp_path / "r.json")
    rep.write_curve_csv(tmp_path / "c.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert set(doc) == {"map_a2v", "map_v2a", "map_avg", "precision_scope", "distance", "dataset", "checkpoint"}
    assert doc["precision_scope"] == [{"k": 1, "a2v": 1.0, "v2a": 1.0}, {"k": 3, "a2v": 1.0, "v2a": 1.0}]
    assert (tmp_path / "c.csv").read_text().splitlines() == ["k,a2v,v2a", "1,1.0,1.0", "3,1.0,1.0"]
