"""Cross-modal retrieval metrics: ranking, AP, bidirectional MAP, precision-scope@K."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import PairedDataset
from .model import DualParams, embed
from .numkit import as_matrix, pairwise_sq_dist

RANK_DISTANCES = ("sqeuclidean", "cosine")


def distance_matrix(queries, gallery, distance: str = "sqeuclidean") -> np.ndarray:
    q = as_matrix(queries, "queries")
    g = as_matrix(gallery, "gallery")
    if q.shape[1] != g.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    if distance == "sqeuclidean":
        return pairwise_sq_dist(q, g)
    if distance == "cosine":
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        qn[qn == 0] = 1.0
        gn[gn == 0] = 1.0
        return 1.0 - (q / qn) @ (g / gn).T
    raise ValueError(f"unknown ranking distance {distance!r}; expected one of {RANK_DISTANCES}")


def rank_gallery(query_emb, gallery_emb, distance: str = "sqeuclidean") -> np.ndarray:
    """Gallery indices by ascending distance; ties keep ascending index order."""
    d = distance_matrix(query_emb, gallery_emb, distance)[0]
    return np.argsort(d, kind="stable")


def rank_all(queries, gallery, distance: str = "sqeuclidean") -> np.ndarray:
    """One ranking row per query (stable argsort of the distance matrix)."""
    return np.argsort(distance_matrix(queries, gallery, distance), axis=1, kind="stable")


def average_precision(relevance, k: int | None = None) -> float:
    """Mean of precision@i over relevant positions i, within the first ``k`` ranks.

    The denominator is the number of relevant items inside the cutoff; zero
    relevant items give an AP of 0.
    """
    rel = np.asarray(relevance, dtype=bool)
    if k is not None:
        rel = rel[:k]
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    precisions = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precisions.sum() / hits.size)


def _ap_rows(rel: np.ndarray) -> np.ndarray:
    """Full-list AP for each row of a boolean relevance matrix."""
    ranks = np.arange(1, rel.shape[1] + 1)
    cum = np.cumsum(rel, axis=1)
    n_rel = cum[:, -1]
    prec_sum = np.where(rel, cum / ranks, 0.0).sum(axis=1)
    out = np.zeros(rel.shape[0])
    nz = n_rel > 0
    out[nz] = prec_sum[nz] / n_rel[nz]
    return out


@dataclass
class EvalReport:
    map_a2v: float
    map_v2a: float
    map_avg: float
    per_query_ap_a2v: np.ndarray
    per_query_ap_v2a: np.ndarray
    precision_scope: dict[int, tuple[float, float]] = field(default_factory=dict)
    distance: str = "sqeuclidean"
    dataset: str = ""
    checkpoint: str = ""

    def to_json_dict(self) -> dict:
        return {
            "map_a2v": self.map_a2v,
            "map_v2a": self.map_v2a,
            "map_avg": self.map_avg,
            "precision_scope": [{"k": k, "a2v": a, "v2a": v}
                                for k, (a, v) in sorted(self.precision_scope.items())],
            "distance": self.distance,
            "dataset": self.dataset,
            "checkpoint": self.checkpoint,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    def write_curve_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "a2v", "v2a"])
            for k, (a, v) in sorted(self.precision_scope.items()):
                w.writerow([k, repr(a), repr(v)])


def _relevance(queries, gallery, q_labels, g_labels, distance):
    order = rank_all(queries, gallery, distance)
    return np.asarray(g_labels)[order] == np.asarray(q_labels)[:, None]


def _check_inputs(audio_emb, visual_emb, labels_a, labels_v):
    a = as_matrix(audio_emb, "audio_emb")
    v = as_matrix(visual_emb, "visual_emb")
    la, lv = np.asarray(labels_a), np.asarray(labels_v)
    if a.shape[0] == 0 or v.shape[0] == 0:
        raise ValueError("empty gallery")
    if la.shape != (a.shape[0],) or lv.shape != (v.shape[0],):
        raise ValueError("label arrays must match embedding row counts")
    return a, v, la, lv


def precision_at_ks(rel: np.ndarray, ks) -> dict[int, float]:
    cum = np.cumsum(rel, axis=1)
    return {int(k): float(np.mean(cum[:, k - 1] / k)) for k in ks}


def _check_ks(ks, gallery_sizes):
    ks = [int(k) for k in ks]
    for k in ks:
        if k < 1 or k > min(gallery_sizes):
            raise ValueError(f"K={k} outside [1, {min(gallery_sizes)}] (gallery size)")
    return ks


def map_bidirectional(audio_emb, visual_emb, labels_a, labels_v=None,
                      distance: str = "sqeuclidean", ks=()) -> EvalReport:
    """Audio queries against the whole visual gallery and vice versa.

    Relevance is an exact label match; AP runs over the complete ranked list.
    Precision-scope values for ``ks`` reuse the same rankings.
    """
    labels_v = labels_a if labels_v is None else labels_v
    a, v, la, lv = _check_inputs(audio_emb, visual_emb, labels_a, labels_v)
    ks = _check_ks(ks, (a.shape[0], v.shape[0]))
    rel_a2v = _relevance(a, v, la, lv, distance)
    rel_v2a = _relevance(v, a, lv, la, distance)
    ap_a2v = _ap_rows(rel_a2v)
    ap_v2a = _ap_rows(rel_v2a)
    map_a2v = float(ap_a2v.mean())
    map_v2a = float(ap_v2a.mean())
    pa = precision_at_ks(rel_a2v, ks)
    pv = precision_at_ks(rel_v2a, ks)
    return EvalReport(map_a2v, map_v2a, (map_a2v + map_v2a) / 2, ap_a2v, ap_v2a,
                      {k: (pa[k], pv[k]) for k in ks}, distance)


def precision_scope(audio_emb, visual_emb, labels, ks, distance: str = "sqeuclidean",
                    labels_v=None) -> dict[int, tuple[float, float]]:
    """Mean fraction of relevant items in the top K, per direction: ``{K: (a2v, v2a)}``."""
    labels_v = labels if labels_v is None else labels_v
    a, v, la, lv = _check_inputs(audio_emb, visual_emb, labels, labels_v)
    ks = _check_ks(ks, (a.shape[0], v.shape[0]))
    pa = precision_at_ks(_relevance(a, v, la, lv, distance), ks)
    pv = precision_at_ks(_relevance(v, a, lv, la, distance), ks)
    return {k: (pa[k], pv[k]) for k in ks}


def embed_dataset(params: DualParams, ds: PairedDataset, activation: str = "relu",
                  chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    if ds.audio_dim != params.audio.input_dim or ds.visual_dim != params.visual.input_dim:
        raise ValueError(
            f"checkpoint expects inputs ({params.audio.input_dim}, {params.visual.input_dim}), "
            f"dataset has ({ds.audio_dim}, {ds.visual_dim})"
        )
    if ds.num_classes != params.label_dim:
        raise ValueError(f"checkpoint label dim {params.label_dim} != dataset classes {ds.num_classes}")
    return embed(params.audio, ds.audio, activation, chunk), embed(params.visual, ds.visual, activation, chunk)


def evaluate(params: DualParams, ds: PairedDataset, activation: str = "relu",
             distance: str = "sqeuclidean", ks=(), checkpoint: str = "") -> EvalReport:
    emb_a, emb_v = embed_dataset(params, ds, activation)
    report = map_bidirectional(emb_a, emb_v, ds.labels, ds.labels, distance, ks)
    report.dataset = ds.name
    report.checkpoint = checkpoint
    return report


def export_embeddings(params: DualParams, ds: PairedDataset, out_path,
                      activation: str = "relu") -> Path:
    """CSV ``modality,label,e_1..e_c``: audio rows, then visual rows, in dataset order."""
    emb_a, emb_v = embed_dataset(params, ds, activation)
    out = Path(out_path)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["modality", "label"] + [f"e_{j + 1}" for j in range(emb_a.shape[1])])
        for modality, emb in (("audio", emb_a), ("visual", emb_v)):
            for label, row in zip(ds.labels, emb):
                w.writerow([modality, int(label)] + [f"{x:.17g}" for x in row])
    return out
