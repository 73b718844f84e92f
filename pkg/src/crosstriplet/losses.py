"""Label-space regression loss, triplet hinges and their combined objective.

Every loss has a ``*_and_grad`` form returning gradients with respect to the
audio and visual embeddings; the model's ``backward`` carries them to the
branch parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import as_matrix, pairwise_sq_dist
from .triplets import ALL, Modality, Sampled, enumerate_triplets, parse_strategy, resolve_combos

DISTANCES = ("sqeuclidean", "euclidean")
REDUCTIONS = ("mean", "sum")

# Upper bound on hinge-tensor elements materialised at once.
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class LossBreakdown:
    label_loss: float
    cross_triplet_loss: float
    total: float
    active_triplet_count: int
    triplet_count: int = 0
    degenerate: bool = False


@dataclass
class CrossTripletResult:
    value: float
    active_count: int
    triplet_count: int
    degenerate: bool
    grad_audio: np.ndarray | None = None
    grad_visual: np.ndarray | None = None


def _check_pair(audio_emb, visual_emb):
    a = as_matrix(audio_emb, "audio_emb")
    v = as_matrix(visual_emb, "visual_emb")
    if a.shape != v.shape:
        raise ValueError(f"embedding shapes differ: audio {a.shape} vs visual {v.shape}")
    return a, v


# -- label loss --------------------------------------------------------------


def label_loss_and_grad(audio_emb, visual_emb, onehot):
    """Per-modality Frobenius residual to the one-hot targets, divided by n.

    The norm is taken over the whole n x c residual (not squared). At a zero
    residual the gradient is defined as zero.
    """
    a, v = _check_pair(audio_emb, visual_emb)
    y = as_matrix(onehot, "onehot")
    if y.shape != a.shape:
        raise ValueError(f"onehot shape {y.shape} does not match embeddings {a.shape}")
    n = a.shape[0]
    value = 0.0
    grads = []
    for emb in (a, v):
        r = emb - y
        norm = float(np.sqrt(np.sum(r * r)))
        value += norm / n
        grads.append(r / (n * norm) if norm > 0.0 else np.zeros_like(r))
    return value, grads[0], grads[1]


def label_loss(audio_emb, visual_emb, onehot) -> float:
    return label_loss_and_grad(audio_emb, visual_emb, onehot)[0]


# -- triplet hinge -----------------------------------------------------------


def triplet_hinge(d_ap: float, d_an: float, margin: float) -> float:
    return max(0.0, d_ap - d_an + margin)


def _distance(x, y, distance):
    sq = pairwise_sq_dist(x, y)
    if distance == "sqeuclidean":
        return sq
    if distance == "euclidean":
        return np.sqrt(sq)
    raise ValueError(f"unknown distance {distance!r}; expected one of {DISTANCES}")


def _dist_grad(coef, x, y, dist, distance):
    """Push d(x_i, y_j) coefficients back onto x and y.

    For squared distance d = |x_i - y_j|^2 the derivative is 2(x_i - y_j).
    The plain Euclidean derivative divides by 2d and is taken as zero at d = 0.
    """
    if distance == "euclidean":
        scale = np.zeros_like(dist)
        nz = dist > 0.0
        scale[nz] = 0.5 / dist[nz]
        coef = coef * scale
    gx = 2.0 * (coef.sum(axis=1)[:, None] * x - coef @ y)
    gy = 2.0 * (coef.sum(axis=0)[:, None] * y - coef.T @ x)
    return gx, gy


def _pattern_all(labels, d_ap, d_an, same_modality, margin, literal):
    """Batch-all hinge statistics for one pattern.

    Works one class block at a time, in anchor chunks to bound memory.
    Returns (hinge_sum, raw_sum, active, count, coef_ap, coef_an); the coef
    matrices count how many contributing triplets use each pairwise distance.
    """
    n = labels.shape[0]
    coef_ap = np.zeros((n, n))
    coef_an = np.zeros((n, n))
    hinge_sum = raw_sum = 0.0
    active = count = 0
    for cls in np.unique(labels):
        inside = np.flatnonzero(labels == cls)
        outside = np.flatnonzero(labels != cls)
        if outside.size == 0:
            continue
        step = max(1, _CHUNK_ELEMS // (inside.size * outside.size))
        for lo in range(0, inside.size, step):
            anchors = inside[lo:lo + step]
            ap = d_ap[np.ix_(anchors, inside)]
            an = d_an[np.ix_(anchors, outside)]
            valid = np.ones(ap.shape, dtype=bool)
            if same_modality:
                valid[np.arange(anchors.size), np.arange(lo, lo + anchors.size)] = False
            raw = np.where(valid[:, :, None], ap[:, :, None] - an[:, None, :] + margin, 0.0)
            count += int(valid.sum()) * outside.size
            raw_sum += float(raw.sum())
            pos = raw > 0.0
            hinge_sum += float(raw[pos].sum())
            active += int(pos.sum())
            if literal:
                use = np.broadcast_to(valid[:, :, None], raw.shape).astype(np.float64)
            else:
                use = pos.astype(np.float64)
            coef_ap[np.ix_(anchors, inside)] += use.sum(axis=2)
            coef_an[np.ix_(anchors, outside)] += use.sum(axis=1)
    return hinge_sum, raw_sum, active, count, coef_ap, coef_an


def _pattern_indexed(triples, d_ap, d_an, margin, literal):
    n = d_ap.shape[0]
    coef_ap = np.zeros((n, n))
    coef_an = np.zeros((n, n))
    if triples.shape[0] == 0:
        return 0.0, 0.0, 0, 0, coef_ap, coef_an
    a, p, q = triples[:, 0], triples[:, 1], triples[:, 2]
    raw = d_ap[a, p] - d_an[a, q] + margin
    pos = raw > 0.0
    use = np.ones_like(raw) if literal else pos.astype(np.float64)
    np.add.at(coef_ap, (a, p), use)
    np.add.at(coef_an, (a, q), use)
    return float(raw[pos].sum()), float(raw.sum()), int(pos.sum()), raw.size, coef_ap, coef_an


def cross_triplet_loss_and_grad(
    audio_emb,
    visual_emb,
    labels,
    combos="full",
    margin: float = 1.0,
    reduction: str = "mean",
    distance: str = "sqeuclidean",
    strategy=ALL,
    eq3_literal: bool = False,
    compute_grad: bool = True,
) -> CrossTripletResult:
    """Triplet hinge loss over every pattern of a combination set.

    Default reading: each admissible (anchor, positive, negative) triple gets
    its own hinge, and the hinges are averaged (or summed) over all triples of
    all patterns. With ``eq3_literal`` the raw ``d_ap - d_an + margin`` terms
    are reduced first and a single hinge is applied to the result.

    Batches without any admissible triple (one class only, or no positives)
    give a zero loss with ``degenerate=True`` rather than raising.
    """
    a, v = _check_pair(audio_emb, visual_emb)
    labels = np.asarray(labels)
    if labels.shape != (a.shape[0],):
        raise ValueError(f"labels length {labels.shape} does not match batch size {a.shape[0]}")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if reduction not in REDUCTIONS:
        raise ValueError(f"unknown reduction {reduction!r}; expected one of {REDUCTIONS}")
    combos = resolve_combos(combos)
    strategy = parse_strategy(strategy)
    emb = {Modality.AUDIO: a, Modality.VISUAL: v}

    dist_cache = {}

    def dist(m1, m2):
        if (m1, m2) not in dist_cache:
            dist_cache[(m1, m2)] = _distance(emb[m1], emb[m2], distance)
        return dist_cache[(m1, m2)]

    per_pattern = []
    hinge_total = raw_total = 0.0
    active = count = 0
    for pat in combos:
        d_ap = dist(pat.anchor, pat.positive)
        d_an = dist(pat.anchor, pat.negative)
        if isinstance(strategy, Sampled):
            triples = enumerate_triplets(labels, pat, strategy)
            stats = _pattern_indexed(triples, d_ap, d_an, margin, eq3_literal)
        else:
            stats = _pattern_all(labels, d_ap, d_an, pat.anchor == pat.positive, margin, eq3_literal)
        h, r, act, cnt, c_ap, c_an = stats
        hinge_total += h
        raw_total += r
        active += act
        count += cnt
        per_pattern.append((pat, c_ap, c_an))

    if count == 0:
        zero = np.zeros_like(a) if compute_grad else None
        return CrossTripletResult(0.0, 0, 0, True, zero, None if zero is None else zero.copy())

    scale = 1.0 / count if reduction == "mean" else 1.0
    if eq3_literal:
        inner = raw_total * scale
        value = max(0.0, inner)
        live = inner > 0.0
        active = count if live else 0
    else:
        value = hinge_total * scale
        live = active > 0

    result = CrossTripletResult(value, active, count, False)
    if not compute_grad:
        return result
    grads = {Modality.AUDIO: np.zeros_like(a), Modality.VISUAL: np.zeros_like(v)}
    if live:
        for pat, c_ap, c_an in per_pattern:
            gx, gy = _dist_grad(c_ap * scale, emb[pat.anchor], emb[pat.positive],
                                dist(pat.anchor, pat.positive), distance)
            grads[pat.anchor] += gx
            grads[pat.positive] += gy
            gx, gy = _dist_grad(-c_an * scale, emb[pat.anchor], emb[pat.negative],
                                dist(pat.anchor, pat.negative), distance)
            grads[pat.anchor] += gx
            grads[pat.negative] += gy
    result.grad_audio = grads[Modality.AUDIO]
    result.grad_visual = grads[Modality.VISUAL]
    return result


def cross_triplet_loss(audio_emb, visual_emb, labels, combos="full", margin=1.0,
                       reduction="mean", **kwargs) -> tuple[float, int]:
    """Value and number of strictly positive hinges; see ``cross_triplet_loss_and_grad``."""
    res = cross_triplet_loss_and_grad(audio_emb, visual_emb, labels, combos, margin,
                                      reduction, compute_grad=False, **kwargs)
    return res.value, res.active_count


def total_loss_and_grad(
    audio_emb,
    visual_emb,
    labels,
    onehot,
    combos="full",
    margin: float = 1.0,
    reduction: str = "mean",
    distance: str = "sqeuclidean",
    strategy=ALL,
    eq3_literal: bool = False,
    label_weight: float = 1.0,
    cross_weight: float = 1.0,
):
    """Weighted sum of the label loss and the cross-triplet loss.

    Returns ``(LossBreakdown, grad_audio, grad_visual)``. The breakdown holds
    the weighted components so that ``total`` is exactly their sum.
    """
    lab, ga, gv = label_loss_and_grad(audio_emb, visual_emb, onehot)
    if cross_weight != 0.0:
        cross = cross_triplet_loss_and_grad(audio_emb, visual_emb, labels, combos, margin,
                                            reduction, distance, strategy, eq3_literal)
    else:
        cross = CrossTripletResult(0.0, 0, 0, False, np.zeros_like(ga), np.zeros_like(gv))
    lab_w = label_weight * lab
    cross_w = cross_weight * cross.value
    breakdown = LossBreakdown(
        label_loss=lab_w,
        cross_triplet_loss=cross_w,
        total=lab_w + cross_w,
        active_triplet_count=cross.active_count,
        triplet_count=cross.triplet_count,
        degenerate=cross.degenerate,
    )
    grad_a = label_weight * ga + cross_weight * cross.grad_audio
    grad_v = label_weight * gv + cross_weight * cross.grad_visual
    return breakdown, grad_a, grad_v


def total_loss(audio_emb, visual_emb, labels, onehot, **kwargs) -> LossBreakdown:
    return total_loss_and_grad(audio_emb, visual_emb, labels, onehot, **kwargs)[0]
