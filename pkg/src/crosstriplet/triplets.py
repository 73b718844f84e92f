"""Modality patterns, named combination presets and batch triplet enumeration."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Modality(str, enum.Enum):
    AUDIO = "A"
    VISUAL = "V"


A = Modality.AUDIO
V = Modality.VISUAL


@dataclass(frozen=True)
class TripletPattern:
    """Which modality fills the anchor, positive and negative slot."""

    anchor: Modality
    positive: Modality
    negative: Modality

    @classmethod
    def parse(cls, text: str) -> "TripletPattern":
        """Parse ``"AAV"`` or ``"(A,A,V)"`` style strings."""
        letters = [ch for ch in text.upper() if ch in "AV"]
        if len(letters) != 3:
            raise ValueError(f"cannot parse triplet pattern {text!r}")
        return cls(*(Modality(ch) for ch in letters))

    @property
    def is_cross(self) -> bool:
        return len({self.anchor, self.positive, self.negative}) > 1

    def __str__(self) -> str:
        return f"({self.anchor.value},{self.positive.value},{self.negative.value})"


@dataclass(frozen=True)
class CombinationSet:
    name: str
    patterns: tuple[TripletPattern, ...]

    def __post_init__(self):
        if not self.patterns:
            raise ValueError(f"combination set {self.name!r} has no patterns")
        if len(set(self.patterns)) != len(self.patterns):
            raise ValueError(f"combination set {self.name!r} has duplicate patterns")

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    def describe(self) -> str:
        return ",".join(str(p) for p in self.patterns)


def _p(text: str) -> TripletPattern:
    return TripletPattern.parse(text)


_SAME = (_p("AAA"), _p("VVV"))
_B2 = (_p("AAV"), _p("VVA"))
_B3 = (_p("AVV"), _p("VAA"))
_MIXED_NEG = (_p("AVA"), _p("VAV"))

PRESETS: dict[str, tuple[TripletPattern, ...]] = {
    "baseline1": _SAME,
    "baseline2": _B2,
    "baseline3": _B3,
    "baseline4": _B2 + _B3,
    "baseline5": _SAME + _B2 + _B3 + _MIXED_NEG,
    "full": _B2 + _B3 + _MIXED_NEG,
}

PRESET_NAMES = tuple(PRESETS)


def preset(name: str) -> CombinationSet:
    try:
        return CombinationSet(name, PRESETS[name])
    except KeyError:
        raise ValueError(
            f"unknown combination preset {name!r}; expected one of {', '.join(PRESETS)}"
        ) from None


def resolve_combos(combos) -> CombinationSet:
    """Accept a preset name, a CombinationSet, or an iterable of patterns."""
    if isinstance(combos, CombinationSet):
        return combos
    if isinstance(combos, str):
        return preset(combos)
    pats = tuple(p if isinstance(p, TripletPattern) else TripletPattern.parse(p) for p in combos)
    return CombinationSet("custom", pats)


@dataclass(frozen=True)
class Sampled:
    """Draw at most ``k`` admissible triplets per anchor, without replacement."""

    k: int
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("sampled strategy needs k >= 1")


ALL = "all"


def parse_strategy(text) -> str | Sampled:
    """``"all"``, ``"sampled:K"`` or ``"sampled:K:SEED"`` (or a Sampled instance)."""
    if isinstance(text, Sampled) or text == ALL:
        return text
    if isinstance(text, str) and text.startswith("sampled"):
        parts = text.split(":")
        if len(parts) in (2, 3):
            seed = int(parts[2]) if len(parts) == 3 else 0
            return Sampled(int(parts[1]), seed)
    raise ValueError(f"unknown triplet strategy {text!r}")


def strategy_name(strategy) -> str:
    if isinstance(strategy, Sampled):
        return f"sampled:{strategy.k}:{strategy.seed}"
    return ALL


def enumerate_triplets(labels: Sequence[int], pattern: TripletPattern, strategy=ALL) -> np.ndarray:
    """Admissible (anchor, positive, negative) index triples for one pattern.

    Indices refer to batch rows; the modality of each slot comes from
    ``pattern``. Positives share the anchor's label, negatives do not. The
    anchor may be its own positive only when the two slots are drawn from
    different modalities (the clip's paired audio/visual view).

    With ``strategy="all"`` the result is in lexicographic order. With a
    :class:`Sampled` strategy, each anchor keeps a seeded random subset of its
    admissible triples, still in lexicographic order.

    Returns an int64 array of shape (T, 3).
    """
    labels = np.asarray(labels)
    strategy = parse_strategy(strategy)
    n = labels.shape[0]
    allow_self = pattern.anchor != pattern.positive
    idx = np.arange(n)
    rng = np.random.default_rng(strategy.seed) if isinstance(strategy, Sampled) else None

    blocks = []
    for a in range(n):
        pos = idx[labels == labels[a]]
        if not allow_self:
            pos = pos[pos != a]
        neg = idx[labels != labels[a]]
        if pos.size == 0 or neg.size == 0:
            continue
        pp, nn = np.meshgrid(pos, neg, indexing="ij")
        block = np.column_stack([np.full(pp.size, a), pp.ravel(), nn.ravel()])
        if rng is not None and block.shape[0] > strategy.k:
            keep = np.sort(rng.choice(block.shape[0], size=strategy.k, replace=False))
            block = block[keep]
        blocks.append(block)
    if not blocks:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(blocks).astype(np.int64)
