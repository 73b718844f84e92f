"""Paired audio/visual datasets: validation, file I/O, splitting, synthetic generation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BINARY_FILES = ("meta.json", "audio.f32", "visual.f32", "labels.u32")


@dataclass
class PairedDataset:
    """Row i of ``audio`` and row i of ``visual`` are two views of one clip with label ``labels[i]``."""

    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)
    name: str = "dataset"

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.visual = np.asarray(self.visual, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.audio.ndim != 2 or self.visual.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("audio/visual must be 2-D and labels 1-D")
        n = self.labels.shape[0]
        if self.audio.shape[0] != n or self.visual.shape[0] != n:
            raise ValueError(
                f"unpaired rows: audio {self.audio.shape[0]}, visual {self.visual.shape[0]}, labels {n}"
            )
        if not self.class_names:
            c = int(self.labels.max()) + 1 if n else 0
            self.class_names = [f"class_{k}" for k in range(c)]
        self.class_names = [str(s) for s in self.class_names]
        c = len(self.class_names)
        if n and (self.labels.min() < 0 or self.labels.max() >= c):
            bad = self.labels[(self.labels < 0) | (self.labels >= c)][0]
            raise ValueError(f"label {bad} out of range for {c} classes")
        missing = sorted(set(range(c)) - set(np.unique(self.labels).tolist()))
        if missing:
            raise ValueError(f"classes without samples: {missing}")
        if not (np.isfinite(self.audio).all() and np.isfinite(self.visual).all()):
            raise ValueError("features contain NaN or Inf")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def audio_dim(self) -> int:
        return self.audio.shape[1]

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]

    def subset(self, indices, name: str | None = None) -> "PairedDataset":
        """Rows ``indices``; keeps the full class vocabulary even if a class drops out."""
        idx = np.asarray(indices, dtype=np.int64)
        sub = object.__new__(PairedDataset)
        sub.audio = self.audio[idx]
        sub.visual = self.visual[idx]
        sub.labels = self.labels[idx]
        sub.class_names = list(self.class_names)
        sub.name = name or self.name
        return sub


def one_hot(label: int, c: int) -> np.ndarray:
    if not 0 <= label < c:
        raise ValueError(f"label {label} out of range [0, {c})")
    row = np.zeros(c)
    row[label] = 1.0
    return row


def one_hot_matrix(labels, c: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels out of range [0, {c})")
    out = np.zeros((labels.shape[0], c))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def split_indices(labels, train_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified shuffle split; each class contributes round(fraction * count) training rows.

    Every class keeps at least one row on each side. Both index arrays are sorted.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < 2:
            raise ValueError(f"class {cls} has {members.size} sample(s); need at least 2 to split")
        members = rng.permutation(members)
        k = int(np.floor(train_fraction * members.size + 0.5))
        k = min(max(k, 1), members.size - 1)
        train.append(members[:k])
        test.append(members[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(ds: PairedDataset, train_fraction: float = 0.8, seed: int = 0):
    tr, te = split_indices(ds.labels, train_fraction, seed)
    return ds.subset(tr, f"{ds.name}-train"), ds.subset(te, f"{ds.name}-test")


# -- binary directory format -------------------------------------------------


def save_binary(ds: PairedDataset, dir_path) -> Path:
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": ds.name,
        "n": len(ds),
        "audio_dim": ds.audio_dim,
        "visual_dim": ds.visual_dim,
        "num_classes": ds.num_classes,
        "class_names": ds.class_names,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    (out / "audio.f32").write_bytes(ds.audio.astype("<f4").tobytes())
    (out / "visual.f32").write_bytes(ds.visual.astype("<f4").tobytes())
    (out / "labels.u32").write_bytes(ds.labels.astype("<u4").tobytes())
    return out


def _read_array(path: Path, dtype: str, expected: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"missing dataset file {path}")
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != expected * itemsize:
        raise ValueError(
            f"{path.name}: size mismatch, {len(raw)} bytes on disk vs {expected * itemsize} expected from meta.json"
        )
    return np.frombuffer(raw, dtype=dtype)


def load_binary(dir_path) -> PairedDataset:
    root = Path(dir_path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing dataset file {meta_path}")
    meta = json.loads(meta_path.read_text())
    for key in ("name", "n", "audio_dim", "visual_dim", "num_classes", "class_names"):
        if key not in meta:
            raise ValueError(f"meta.json lacks field {key!r}")
    n, da, dv, c = (int(meta[k]) for k in ("n", "audio_dim", "visual_dim", "num_classes"))
    if len(meta["class_names"]) != c:
        raise ValueError(f"meta.json lists {len(meta['class_names'])} class names for {c} classes")
    audio = _read_array(root / "audio.f32", "<f4", n * da).reshape(n, da)
    visual = _read_array(root / "visual.f32", "<f4", n * dv).reshape(n, dv)
    labels = _read_array(root / "labels.u32", "<u4", n)
    if n and labels.max() >= c:
        raise ValueError(f"labels.u32 holds label {int(labels.max())} but meta.json declares {c} classes")
    return PairedDataset(audio, visual, labels, list(meta["class_names"]), meta["name"])


# -- CSV ----------------------------------------------------------------------


def _read_csv_rows(path, what: str) -> list[list[float]]:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                raise ValueError(f"{what} row {lineno}: non-numeric cell in {row!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(f"{what} row {lineno}: {len(vals)} columns, expected {width}")
            rows.append(vals)
    return rows


def load_csv(audio_csv, visual_csv, labels_csv, class_names=None, name: str | None = None) -> PairedDataset:
    audio = _read_csv_rows(audio_csv, "audio")
    visual = _read_csv_rows(visual_csv, "visual")
    label_rows = _read_csv_rows(labels_csv, "labels")
    for lineno, row in enumerate(label_rows, start=1):
        if len(row) != 1 or row[0] != int(row[0]) or row[0] < 0:
            raise ValueError(f"labels row {lineno}: expected one non-negative integer, got {row}")
    if not (len(audio) == len(visual) == len(label_rows)):
        raise ValueError(
            f"pairing error: audio has {len(audio)} rows, visual {len(visual)}, labels {len(label_rows)}"
        )
    labels = np.array([int(r[0]) for r in label_rows], dtype=np.int64)
    return PairedDataset(np.array(audio), np.array(visual), labels,
                         list(class_names) if class_names else [], name or Path(audio_csv).stem)


def save_csv(ds: PairedDataset, audio_csv, visual_csv, labels_csv) -> None:
    np.savetxt(audio_csv, ds.audio, delimiter=",", fmt="%.17g")
    np.savetxt(visual_csv, ds.visual, delimiter=",", fmt="%.17g")
    np.savetxt(labels_csv, ds.labels, fmt="%d")


# -- synthetic pairs -----------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 200
    classes: int = 10
    latent_dim: int = 16
    audio_dim: int = 128
    visual_dim: int = 1024
    noise_sigma: float = 1.0
    class_sep: float = 3.0
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_per_class, self.classes, self.latent_dim, self.audio_dim, self.visual_dim)
        if min(counts) < 1:
            raise ValueError("all synthetic counts must be >= 1")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.noise_sigma <= 0 or self.class_sep <= 0:
            raise ValueError("noise_sigma and class_sep must be positive")


def project_latents(z, proj, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``z @ proj`` plus isotropic Gaussian noise (``noise_sigma`` may be 0 here)."""
    out = z @ proj
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return out


def synth_generate(cfg: SynthConfig) -> PairedDataset:
    """Class-clustered latent codes viewed through two fixed random projections.

    Each pair shares one latent z ~ N(mu_k, I); class centres are drawn as
    N(0, class_sep^2 I), so centres sit about class_sep * sqrt(2 * latent_dim)
    apart. Projection entries are N(0, 1 / (latent_dim * (1 + class_sep^2))),
    which gives every feature unit signal variance; ``noise_sigma`` is thus a
    per-feature noise-to-signal ratio.
    """
    rng = np.random.default_rng(cfg.seed)
    centers = rng.normal(0.0, cfg.class_sep, size=(cfg.classes, cfg.latent_dim))
    scale = 1.0 / np.sqrt(cfg.latent_dim * (1.0 + cfg.class_sep**2))
    proj_a = rng.normal(0.0, scale, size=(cfg.latent_dim, cfg.audio_dim))
    proj_v = rng.normal(0.0, scale, size=(cfg.latent_dim, cfg.visual_dim))
    labels = np.repeat(np.arange(cfg.classes), cfg.n_per_class)
    z = centers[labels] + rng.normal(size=(labels.size, cfg.latent_dim))
    # Rounded through float32 so the on-disk format stores them losslessly.
    audio = project_latents(z, proj_a, cfg.noise_sigma, rng).astype(np.float32)
    visual = project_latents(z, proj_v, cfg.noise_sigma, rng).astype(np.float32)
    return PairedDataset(audio, visual, labels, [f"class_{k}" for k in range(cfg.classes)],
                         f"synth-c{cfg.classes}-s{cfg.seed}")
