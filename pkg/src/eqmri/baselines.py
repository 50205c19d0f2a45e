"""Untrained reconstruction baselines: zero-filled adjoint and TV.

The TV solver is forward-backward splitting on

    0.5 ||y - M A x||^2 + tau * TV(x)

with anisotropic total variation (complex modulus of circular forward
differences). The data term has unit Lipschitz constant because A is unitary
per coil and the coil maps are normalized, so the default step is 1. The
proximal map of TV has no closed form; it is solved by projected gradient
ascent on its dual, warm-started across outer iterations.
"""

from dataclasses import dataclass

import numpy as np

from .linops import adjoint_op, data_fidelity_grad, forward_op
from .metrics import psnr
from .sampling import SamplingMask


def zero_filled(y: np.ndarray, smaps: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Coil-combined adjoint of the masked measurement: A^H M^T y."""
    return adjoint_op(np.asarray(y, np.complex128), np.asarray(smaps, np.complex128), mask)


@dataclass(frozen=True)
class TvConfig:
    tau: float = 1e-3
    iters: int = 100
    step: float = 1.0
    prox_iters: int = 80


@dataclass
class TvResult:
    x: np.ndarray
    objective: np.ndarray


def _grad_image(u: np.ndarray) -> np.ndarray:
    return np.stack([np.roll(u, -1, axis=0) - u, np.roll(u, -1, axis=1) - u])


def _grad_adjoint(p: np.ndarray) -> np.ndarray:
    return (np.roll(p[0], 1, axis=0) - p[0]) + (np.roll(p[1], 1, axis=1) - p[1])


def tv_norm(x: np.ndarray) -> float:
    """Anisotropic TV: sum of moduli of circular forward differences."""
    return float(np.sum(np.abs(_grad_image(np.asarray(x, np.complex128)))))


def _tv_prox(v: np.ndarray, lam: float, iters: int, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Dual projected gradient for 0.5||u - v||^2 + lam TV(u); ||D^H D|| <= 8.
    for _ in range(iters):
        u = v - _grad_adjoint(p)
        p = p + 0.125 * _grad_image(u)
        mag = np.abs(p)
        over = mag > lam
        p[over] *= lam / mag[over]
    return v - _grad_adjoint(p), p


def tv_reconstruct(
    y: np.ndarray, smaps: np.ndarray, mask: SamplingMask, cfg: TvConfig
) -> TvResult:
    """Forward-backward TV reconstruction from the zero-filled start."""
    if cfg.tau < 0:
        raise ValueError(f"tau must be non-negative, got {cfg.tau}")
    if not 0 < cfg.step <= 1:
        raise ValueError(f"step must be in (0, 1] for a unit-Lipschitz data term, got {cfg.step}")
    y = np.asarray(y, np.complex128)
    smaps = np.asarray(smaps, np.complex128)
    x = zero_filled(y, smaps, mask)
    p = np.zeros((2,) + x.shape, dtype=np.complex128)

    def objective(u):
        resid = forward_op(u, smaps, mask) - y
        return 0.5 * float(np.sum(np.abs(resid) ** 2)) + cfg.tau * tv_norm(u)

    obj = [objective(x)]
    for _ in range(cfg.iters):
        z = x - cfg.step * data_fidelity_grad(x, y, smaps, mask)
        x, p = _tv_prox(z, cfg.tau * cfg.step, cfg.prox_iters, p)
        obj.append(objective(x))
    return TvResult(x=x, objective=np.array(obj))


def tv_grid_search(
    ys: list[np.ndarray],
    masks: list[SamplingMask],
    smaps: np.ndarray,
    refs: list[np.ndarray],
    taus: list[float],
    cfg: TvConfig,
) -> tuple[float, float]:
    """Pick tau maximizing mean PSNR over the given instances.

    Returns (best_tau, best_mean_psnr). Ties keep the first (smallest) tau.
    """
    if not taus:
        raise ValueError("need at least one tau candidate")
    best = None
    for tau in taus:
        run = TvConfig(tau=tau, iters=cfg.iters, step=cfg.step, prox_iters=cfg.prox_iters)
        scores = [
            psnr(np.abs(tv_reconstruct(y, smaps, m, run).x), np.abs(ref))
            for y, m, ref in zip(ys, masks, refs)
        ]
        mean = float(np.mean(scores))
        if best is None or mean > best[1]:
            best = (tau, mean)
    return best
