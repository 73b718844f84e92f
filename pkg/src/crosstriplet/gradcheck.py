"""Finite-difference verification of the analytic parameter gradients.

Each loss component is composed with both branches at reduced widths and
its backpropagated gradient is compared, coordinate by coordinate, with
central differences. Evaluation points where a ReLU input or a triplet
hinge sits too close to its kink are rejected and redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import one_hot_matrix
from .losses import cross_triplet_loss_and_grad, label_loss_and_grad, total_loss_and_grad
from .model import DualParams, EncoderConfig, backward, forward, init_params
from .numkit import finite_diff_gradient, pairwise_sq_dist

TOLERANCE = 1e-4
EXEMPT_BELOW = 1e-8
KINK_GAP = 1e-4
FD_STEP = 1e-6


@dataclass
class GradcheckRow:
    component: str
    seed: int
    max_rel_error: float
    worst_index: int
    worst_param: str
    n_params: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _components(combos: str):
    """name -> loss(emb_a, emb_v, labels, onehot) returning (value, grad_a, grad_v)."""

    def lab(a, v, y, oh):
        return label_loss_and_grad(a, v, oh)

    def cross(literal):
        def f(a, v, y, oh):
            r = cross_triplet_loss_and_grad(a, v, y, combos, 1.0, eq3_literal=literal)
            return r.value, r.grad_audio, r.grad_visual
        return f

    def tot(a, v, y, oh):
        b, ga, gv = total_loss_and_grad(a, v, y, oh, combos=combos, margin=1.0)
        return b.total, ga, gv

    return {
        "label_loss": lab,
        f"cross_triplet({combos})": cross(False),
        f"cross_triplet({combos},eq3_literal)": cross(True),
        "total": tot,
    }


def _param_names(params: DualParams) -> list[str]:
    names = []
    for branch_name, branch in (("audio", params.audio), ("visual", params.visual)):
        for k, (w, b) in enumerate(zip(branch.weights, branch.biases)):
            names += [f"{branch_name}.W{k}[{i},{j}]" for i in range(w.shape[0]) for j in range(w.shape[1])]
            names += [f"{branch_name}.b{k}[{j}]" for j in range(b.shape[0])]
    return names


def _near_kinks(params, audio, visual, labels, margin=1.0) -> bool:
    ea, ca = forward(params.audio, audio)
    ev, cv = forward(params.visual, visual)
    for z in ca.preacts[:-1] + cv.preacts[:-1]:
        if np.min(np.abs(z)) < KINK_GAP:
            return True
    emb = {"A": ea, "V": ev}
    same = labels[:, None] == labels[None, :]
    for m1 in "AV":
        for m2 in "AV":
            for m3 in "AV":
                d_ap = pairwise_sq_dist(emb[m1], emb[m2])
                d_an = pairwise_sq_dist(emb[m1], emb[m3])
                raw = d_ap[:, :, None] - d_an[:, None, :] + margin
                mask = same[:, :, None] & ~same[:, None, :]
                if np.any(np.abs(raw[mask]) < KINK_GAP):
                    return True
    return False


def draw_problem(seed: int, widths=(8, 8, 8), n: int = 6, classes: int = 3,
                 audio_dim: int = 5, visual_dim: int = 7, max_tries: int = 200):
    """A small random network and batch whose evaluation point avoids every kink."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    for _ in range(max_tries):
        cfg = EncoderConfig(label_dim=classes, audio_dim=audio_dim, visual_dim=visual_dim,
                            hidden=tuple(widths), init_seed=int(rng.integers(2**63)))
        params = init_params(cfg)
        # Non-zero biases so that bias gradients are exercised away from zero.
        params = params.with_arrays([x + rng.normal(0, 0.1, x.shape) if x.ndim == 1 else x
                                     for x in params.arrays()])
        audio = rng.normal(size=(n, audio_dim))
        visual = rng.normal(size=(n, visual_dim))
        if not _near_kinks(params, audio, visual, labels):
            return cfg, params, audio, visual, labels
    raise RuntimeError(f"no kink-free evaluation point found for seed {seed}")


def check_component(loss_fn, params: DualParams, audio, visual, labels, corrupt: bool = False):
    """Return (max relative error, worst flat index, n_params)."""
    onehot = one_hot_matrix(labels, params.label_dim)
    arrays = params.arrays()
    sizes = [x.size for x in arrays]
    theta0 = np.concatenate([x.ravel() for x in arrays])

    def unpack(theta):
        out, pos = [], 0
        for x, s in zip(arrays, sizes):
            out.append(theta[pos:pos + s].reshape(x.shape))
            pos += s
        return params.with_arrays(out)

    def value(theta):
        p = unpack(theta)
        ea, _ = forward(p.audio, audio)
        ev, _ = forward(p.visual, visual)
        return loss_fn(ea, ev, labels, onehot)[0]

    ea, ca = forward(params.audio, audio)
    ev, cv = forward(params.visual, visual)
    _, ga, gv = loss_fn(ea, ev, labels, onehot)
    analytic = np.concatenate(
        [g.ravel() for g in backward(params.audio, ca, ga).arrays() + backward(params.visual, cv, gv).arrays()]
    )
    if corrupt:
        analytic = analytic.copy()
        analytic[np.argmax(np.abs(analytic))] *= 1.5
    numeric = finite_diff_gradient(value, theta0, FD_STEP)
    denom = np.abs(analytic) + np.abs(numeric)
    rel = np.where(denom < EXEMPT_BELOW, 0.0, np.abs(analytic - numeric) / np.where(denom == 0, 1.0, denom))
    worst = int(np.argmax(rel))
    return float(rel[worst]), worst, theta0.size


def run_gradcheck(seed: int = 0, widths=(8, 8, 8), combos: str = "full",
                  corrupt: bool = False) -> list[GradcheckRow]:
    cfg, params, audio, visual, labels = draw_problem(seed, widths)
    names = _param_names(params)
    rows = []
    for name, fn in _components(combos).items():
        err, worst, count = check_component(fn, params, audio, visual, labels, corrupt)
        rows.append(GradcheckRow(name, seed, err, worst, names[worst], count))
    return rows
