"""Availability masks, the training-time drop sampler, and feature infill.

A mask records which modalities (1-based indices) are absent. At least one
modality is always available. Reports serialize masks as a bit-string over
modality indices with 1 = available, e.g. "1001" for modalities {1, 4} of 4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class AvailabilityMask:
    n_modalities: int
    missing: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "missing", frozenset(self.missing))
        if self.n_modalities < 1:
            raise ValueError("need at least one modality")
        bad = [i for i in self.missing if not 1 <= i <= self.n_modalities]
        if bad:
            raise ValueError(f"missing indices out of range 1..{self.n_modalities}: {sorted(bad)}")
        if len(self.missing) > self.n_modalities - 1:
            raise ValueError("at least one modality must remain available")

    @property
    def available(self) -> tuple[int, ...]:
        return tuple(i for i in range(1, self.n_modalities + 1) if i not in self.missing)

    def to_bitstring(self) -> str:
        return "".join("0" if i in self.missing else "1" for i in range(1, self.n_modalities + 1))

    @classmethod
    def from_bitstring(cls, bits: str) -> "AvailabilityMask":
        if not bits or any(b not in "01" for b in bits):
            raise ValueError(f"malformed availability bit-string: {bits!r}")
        missing = frozenset(i for i, b in enumerate(bits, start=1) if b == "0")
        return cls(n_modalities=len(bits), missing=missing)

    @classmethod
    def none_missing(cls, n_modalities: int) -> "AvailabilityMask":
        return cls(n_modalities=n_modalities, missing=frozenset())

    @classmethod
    def only(cls, n_modalities: int, modality: int) -> "AvailabilityMask":
        """Mask with a single modality available (used by teacher validation)."""
        missing = frozenset(i for i in range(1, n_modalities + 1) if i != modality)
        return cls(n_modalities=n_modalities, missing=missing)


def sample_mask(n_modalities: int, rng: np.random.Generator) -> AvailabilityMask:
    """Drop-count-uniform sampler: count c ~ U{0..N-1}, then c distinct modalities."""
    if n_modalities < 2:
        raise ValueError("need at least two modalities")
    c = int(rng.integers(0, n_modalities))
    dropped = rng.choice(n_modalities, size=c, replace=False) + 1
    return AvailabilityMask(n_modalities=n_modalities, missing=frozenset(int(i) for i in dropped))


def all_combinations(n_modalities: int) -> list[AvailabilityMask]:
    """All 2^N - 1 non-empty availability combinations, smallest subsets first."""
    import itertools

    masks = []
    for size in range(1, n_modalities + 1):
        for avail in itertools.combinations(range(1, n_modalities + 1), size):
            missing = frozenset(range(1, n_modalities + 1)) - set(avail)
            masks.append(AvailabilityMask(n_modalities=n_modalities, missing=missing))
    return masks


def generate_missing(bundle, mask: AvailabilityMask):
    """Fill each missing feature slot with the mean of the available slots.

    Applied at the bottleneck and at every skip stage. Available slots are
    passed through untouched (same tensor objects), so repeated application
    is exact. Gradients flow from the generated slots back into the available
    features through the mean.
    """
    from .backbone import FeatureBundle

    n = bundle.n_modalities
    if mask.n_modalities != n:
        raise ValueError("mask arity does not match feature bundle")
    if not mask.missing:
        return bundle
    avail = [i for i in mask.available if bundle.bottleneck[i - 1] is not None]
    if len(avail) != len(mask.available):
        raise ValueError("an available feature slot is unfilled")
    if not avail:
        raise ValueError("no available features to generate from")

    def fill(slots):
        scale = 1.0 / len(avail)
        total = slots[avail[0] - 1]
        for i in avail[1:]:
            total = ad.add(total, slots[i - 1])
        generated = ad.mul(total, scale) if len(avail) > 1 else slots[avail[0] - 1]
        return [slots[i - 1] if i not in mask.missing else generated for i in range(1, n + 1)]

    return FeatureBundle(
        n_modalities=n,
        bottleneck=fill(bundle.bottleneck),
        skips=[fill(stage) for stage in bundle.skips],
    )
