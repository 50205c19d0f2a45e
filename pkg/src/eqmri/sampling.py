"""Cartesian k-space line sampling: masks and equispaced mask families.

A mask selects whole k_y lines, i.e. columns of the (h, w) image grid; it is
stored as a boolean vector of length w. A family is the finite set of masks
the sampling distribution draws from, uniformly.

The ``full`` variant has R members; member r keeps the lines congruent to r
modulo R plus a centered block of auto-calibration (ACS) lines, so the union
of all members covers every line. The ``deficient`` variant keeps only the
even-offset members, leaving half of the non-ACS lines never sampled; it
exists to demonstrate what full-rank coverage buys.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SamplingMask:
    """Boolean selection of k_y lines, with the ACS block noted if present."""

    lines: np.ndarray
    acs_range: tuple[int, int] | None = None

    def __post_init__(self):
        lines = np.asarray(self.lines, dtype=bool)
        object.__setattr__(self, "lines", lines)
        if lines.ndim != 1:
            raise ValueError(f"mask lines must be a 1-d vector, got shape {lines.shape}")
        if self.acs_range is not None:
            lo, hi = self.acs_range
            # half-open [lo, hi)
            if not (0 <= lo < hi <= lines.size):
                raise ValueError(f"acs_range {self.acs_range} out of bounds for {lines.size} lines")

    @property
    def width(self) -> int:
        return self.lines.size

    @property
    def n_sampled(self) -> int:
        return int(self.lines.sum())


@dataclass(frozen=True)
class MaskFamily:
    """Finite set of masks sharing one geometry, drawn from uniformly."""

    members: tuple[SamplingMask, ...]
    width: int
    accel: int
    acs: int
    variant: str = "full"

    def __len__(self) -> int:
        return len(self.members)

    def line_frequency(self) -> np.ndarray:
        """Per-line sampling probability under the uniform family distribution."""
        stacked = np.stack([m.lines for m in self.members]).astype(np.float64)
        return stacked.mean(axis=0)


def _acs_block(w: int, acs: int) -> tuple[int, int] | None:
    if acs == 0:
        return None
    start = (w - acs) // 2
    return (start, start + acs)


def make_family(w: int, accel: int, acs: int = 0, variant: str = "full") -> MaskFamily:
    """Build the equispaced mask family for width w and acceleration R.

    Parameters
    ----------
    w : number of k_y lines.
    accel : acceleration factor R; member r keeps lines congruent to r mod R.
    acs : number of centered auto-calibration lines included in every member.
    variant : "full" keeps all R offsets; "deficient" keeps only the even
        offsets, so the union of members misses half of the non-ACS lines.
    """
    if accel < 2:
        raise ValueError(f"acceleration must be at least 2, got {accel}")
    if accel > w:
        raise ValueError(f"acceleration {accel} exceeds line count {w}")
    if w % accel != 0:
        raise ValueError(f"line count {w} is not divisible by acceleration {accel}")
    if acs < 0 or acs >= w:
        raise ValueError(f"acs lines must satisfy 0 <= acs < w, got acs={acs}, w={w}")
    if variant not in ("full", "deficient"):
        raise ValueError(f"variant must be 'full' or 'deficient', got {variant!r}")
    if variant == "deficient":
        # Even offsets cover exactly the even lines, so the never-sampled set
        # is half of the non-ACS lines only when both R and acs are even.
        if accel % 2 != 0:
            raise ValueError(f"deficient variant requires even acceleration, got {accel}")
        if acs % 2 != 0:
            raise ValueError(f"deficient variant requires an even acs count, got {acs}")
        offsets = range(0, accel, 2)
    else:
        offsets = range(accel)

    block = _acs_block(w, acs)
    idx = np.arange(w)
    members = []
    for r in offsets:
        lines = idx % accel == r
        if block is not None:
            lines = lines | ((idx >= block[0]) & (idx < block[1]))
        members.append(SamplingMask(lines, acs_range=block))
    return MaskFamily(tuple(members), width=w, accel=accel, acs=acs, variant=variant)


def draw_mask(family: MaskFamily, rng: np.random.Generator) -> SamplingMask:
    """Draw one member uniformly at random."""
    return family.members[int(rng.integers(len(family.members)))]
