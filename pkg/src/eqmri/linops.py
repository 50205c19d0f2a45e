"""Multi-coil Cartesian MRI operators and the self-supervision weighting.

Shape conventions used throughout the package:

- images are complex arrays of shape (h, w);
- coil sensitivity maps are complex arrays of shape (coils, h, w),
  normalized so that sum_c |S_c|^2 == 1 at every pixel;
- k-space is a complex array of shape (coils, h, w) whose last axis indexes
  k_y lines; unsampled lines are stored as exact zeros.

The per-coil operator is A_c x = F (S_c * x) with F the unitary 2-d DFT, and
the measurement operator applies the line mask M on top. With normalized
maps, sum_c A_c^H A_c is the identity, which the adjoint and gradient code
below relies on.
"""

from dataclasses import dataclass

import numpy as np

from .sampling import MaskFamily, SamplingMask


def _check_smaps(smaps: np.ndarray):
    if smaps.ndim != 3:
        raise ValueError(f"coil maps must have shape (coils, h, w), got {smaps.shape}")


def _check_image(x: np.ndarray, smaps: np.ndarray):
    _check_smaps(smaps)
    if x.shape != smaps.shape[1:]:
        raise ValueError(f"image shape {x.shape} does not match coil maps {smaps.shape[1:]}")


def _check_kspace(y: np.ndarray, smaps: np.ndarray, mask: SamplingMask):
    _check_smaps(smaps)
    if y.shape != smaps.shape:
        raise ValueError(f"k-space shape {y.shape} does not match coil maps {smaps.shape}")
    if mask.width != y.shape[2]:
        raise ValueError(f"mask has {mask.width} lines but k-space has {y.shape[2]}")


def forward_op(x: np.ndarray, smaps: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Masked multi-coil measurement M A x, zero on unsampled lines."""
    _check_image(x, smaps)
    if mask.width != x.shape[1]:
        raise ValueError(f"mask has {mask.width} lines but image has {x.shape[1]}")
    y = np.fft.fft2(smaps * x[None, :, :], norm="ortho")
    y[:, :, ~mask.lines] = 0.0
    return y


def adjoint_op(y: np.ndarray, smaps: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Adjoint A^H M^T y: coil-combined inverse DFT of the masked data."""
    _check_kspace(y, smaps, mask)
    masked = y * mask.lines
    return np.sum(np.conj(smaps) * np.fft.ifft2(masked, norm="ortho"), axis=0)


def data_fidelity_grad(
    x: np.ndarray, y: np.ndarray, smaps: np.ndarray, mask: SamplingMask
) -> np.ndarray:
    """Gradient of g(x) = 0.5 ||y - M A x||^2, i.e. A^H M^T (M A x - y)."""
    return adjoint_op(forward_op(x, smaps, mask) - y, smaps, mask)


@dataclass(frozen=True)
class WeightVector:
    """Per-line weights w_bar of length w; the loss uses the squares."""

    wbar: np.ndarray
    mode: str = "exact"

    def __post_init__(self):
        wbar = np.asarray(self.wbar, dtype=np.float64)
        object.__setattr__(self, "wbar", wbar)
        if wbar.ndim != 1:
            raise ValueError(f"weights must be a 1-d vector, got shape {wbar.shape}")
        if np.any(wbar < 0):
            raise ValueError("weights must be non-negative")


def identity_weight(w: int) -> WeightVector:
    """Unweighted control: w_bar identically one."""
    return WeightVector(np.ones(w), mode="identity")


def build_weight(
    family: MaskFamily | None,
    mode: str = "exact",
    draws: list[SamplingMask] | None = None,
) -> WeightVector:
    """Inverse-square-root line-frequency weights.

    w_bar_k = 1 / sqrt(d_k) where d_k is the probability that line k is
    sampled, and 0 where d_k is 0. In "exact" mode d_k is computed from the
    family (uniform over members); in "empirical" mode it is the observed
    frequency over the given mask draws.
    """
    if mode == "exact":
        if family is None:
            raise ValueError("exact mode requires a mask family")
        freq = family.line_frequency()
    elif mode == "empirical":
        if not draws:
            raise ValueError("empirical mode requires at least one mask draw")
        widths = {m.width for m in draws}
        if len(widths) != 1:
            raise ValueError(f"mask draws disagree on line count: {sorted(widths)}")
        freq = np.stack([m.lines for m in draws]).astype(np.float64).mean(axis=0)
    else:
        raise ValueError(f"mode must be 'exact' or 'empirical', got {mode!r}")
    wbar = np.zeros_like(freq)
    nz = freq > 0
    wbar[nz] = 1.0 / np.sqrt(freq[nz])
    return WeightVector(wbar, mode=mode)


def subsample_weight(wbar: WeightVector, mask: SamplingMask) -> np.ndarray:
    """Diagonal of W for this mask: w_bar_k^2 on sampled lines, 0 elsewhere."""
    if wbar.wbar.size != mask.width:
        raise ValueError(f"weight length {wbar.wbar.size} does not match mask width {mask.width}")
    return np.where(mask.lines, wbar.wbar**2, 0.0)
