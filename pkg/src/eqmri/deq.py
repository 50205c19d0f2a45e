"""Deep equilibrium forward pass and Jacobian-free parameter updates.

The reconstruction is the fixed point of

    T(x) = alpha * f(s(x)) + (1 - alpha) * s(x),
    s(x) = x - gamma * grad g(x),  g(x) = 0.5 ||y - M A x||^2,

iterated from the zero-filled adjoint until the relative update falls below
a tolerance.

Parameter updates are Jacobian-free: they differentiate exactly one
application of T at the converged iterate x_bar, treating x_bar itself as a
constant. Since the parameters enter T only through f, the update for a loss
l(x_bar) is

    alpha * param_vjp(theta, s(x_bar), dl/dx_bar),

with no backsolve through the iteration. Everything here is pure: callers
get new arrays, never mutated inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from .datagen import TrainingPair
from .denoiser import DenoiserParams, denoise, param_vjp
from .linops import (
    WeightVector,
    adjoint_op,
    data_fidelity_grad,
    forward_op,
    subsample_weight,
)
from .sampling import SamplingMask


class DivergenceError(RuntimeError):
    """Raised when an iterate goes non-finite."""

    def __init__(self, iteration: int):
        super().__init__(f"fixed-point iterate became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class AndersonConfig:
    """Anderson acceleration with two safeguards against unstable mixing.

    ``max_step_ratio`` caps the accelerated step length at that multiple of
    the plain update ``||T(x) - x||`` (the least-squares mix can extrapolate
    arbitrarily far when the residual history is nearly collinear); a capped
    step falls back to the plain update and restarts the history.
    ``restart_growth`` restarts the history whenever the plain residual grows
    by more than that factor between iterations, so one bad extrapolation
    cannot contaminate the following mixes.
    """

    depth: int = 5
    mixing: float = 1.0
    ridge: float = 1e-8
    max_step_ratio: float = 25.0
    restart_growth: float = 2.0


@dataclass(frozen=True)
class DeqConfig:
    alpha: float = 0.5
    gamma: float = 1.0
    max_iters: int = 100
    tol: float = 1e-3
    anderson: AndersonConfig | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")


@dataclass
class FixedPointResult:
    x: np.ndarray
    iters: int
    residuals: np.ndarray
    converged: bool


def denoiser_input(
    x: np.ndarray, y: np.ndarray, smaps: np.ndarray, mask: SamplingMask, cfg: DeqConfig
) -> np.ndarray:
    """The gradient-step image s(x) fed to the denoiser."""
    return x - cfg.gamma * data_fidelity_grad(x, y, smaps, mask)


def t_operator(
    params: DenoiserParams,
    x: np.ndarray,
    y: np.ndarray,
    smaps: np.ndarray,
    mask: SamplingMask,
    cfg: DeqConfig,
) -> np.ndarray:
    """One application of the equilibrium operator T."""
    s = denoiser_input(x, y, smaps, mask, cfg)
    return cfg.alpha * denoise(params, s) + (1.0 - cfg.alpha) * s


def _anderson_combine(xs, gs, acfg: AndersonConfig) -> np.ndarray:
    # Least-squares mixing over the residual history, with a relative ridge so
    # the solve stays well posed as the residuals shrink.
    G = np.stack(gs, axis=1)
    A = G.T @ G
    lam = acfg.ridge * (np.trace(A) + 1e-30)
    A = A + lam * np.eye(A.shape[0])
    try:
        coef = np.linalg.solve(A, np.ones(A.shape[0]))
    except np.linalg.LinAlgError:
        return xs[-1] + acfg.mixing * gs[-1]
    total = coef.sum()
    if total == 0.0 or not np.all(np.isfinite(coef)):
        return xs[-1] + acfg.mixing * gs[-1]
    alphas = coef / total
    return (np.stack(xs, axis=1) + acfg.mixing * G) @ alphas


def forward_fixed_point(
    params: DenoiserParams,
    y: np.ndarray,
    smaps: np.ndarray,
    mask: SamplingMask,
    cfg: DeqConfig,
) -> FixedPointResult:
    """Iterate T from the zero-filled adjoint until the update stalls.

    The residual recorded at step k is ||x_k - x_{k-1}|| / ||x_{k-1}||
    (absolute when the previous iterate is zero), so ``residuals`` has
    exactly ``iters`` entries.
    """
    y = np.asarray(y, dtype=np.complex128)
    smaps = np.asarray(smaps, dtype=np.complex128)
    x = adjoint_op(y, smaps, mask)
    use_aa = cfg.anderson is not None
    hist_x: list[np.ndarray] = []
    hist_g: list[np.ndarray] = []
    residuals = []
    converged = False
    iters = 0
    prev_gnorm = None
    for k in range(1, cfg.max_iters + 1):
        # overflow on a diverging trajectory is detected explicitly below
        with np.errstate(over="ignore", invalid="ignore"):
            tx = t_operator(params, x, y, smaps, mask, cfg)
        if use_aa:
            flat_x = np.concatenate([x.real.ravel(), x.imag.ravel()])
            flat_t = np.concatenate([tx.real.ravel(), tx.imag.ravel()])
            flat_g = flat_t - flat_x
            with np.errstate(over="ignore", invalid="ignore"):
                gnorm = float(np.linalg.norm(flat_g))
            if (
                prev_gnorm is not None
                and np.isfinite(gnorm)
                and gnorm > cfg.anderson.restart_growth * prev_gnorm
            ):
                # the last mix made the map residual worse; drop the
                # contaminated history and rebuild from the current iterate
                hist_x.clear()
                hist_g.clear()
            if np.isfinite(gnorm):
                prev_gnorm = gnorm
            hist_x.append(flat_x)
            hist_g.append(flat_g)
            if len(hist_x) > cfg.anderson.depth:
                hist_x.pop(0)
                hist_g.pop(0)
            x_new = tx
            if len(hist_x) > 1:
                mixed = _anderson_combine(hist_x, hist_g, cfg.anderson)
                with np.errstate(over="ignore", invalid="ignore"):
                    step = float(np.linalg.norm(mixed - flat_x))
                if np.isfinite(step) and step <= cfg.anderson.max_step_ratio * gnorm:
                    half = mixed.size // 2
                    x_new = (mixed[:half] + 1j * mixed[half:]).reshape(x.shape)
                else:
                    # runaway extrapolation: take the plain update and keep
                    # only the current pair so the next mix starts fresh
                    del hist_x[:-1]
                    del hist_g[:-1]
        else:
            x_new = tx
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(k)
        with np.errstate(over="ignore", invalid="ignore"):
            prev_norm = np.linalg.norm(x)
            step = np.linalg.norm(x_new - x)
            res = step / prev_norm if prev_norm > 0 else step
        residuals.append(res)
        x = x_new
        iters = k
        if res <= cfg.tol:
            converged = True
            break
    return FixedPointResult(x=x, iters=iters, residuals=np.array(residuals), converged=converged)


def jfb_from_cotangent(
    params: DenoiserParams, s: np.ndarray, v: np.ndarray, cfg: DeqConfig
) -> np.ndarray:
    """The Jacobian-free update alpha * d/dtheta Re <f(s), v>."""
    return cfg.alpha * param_vjp(params, s, v)


def self_cotangent(
    x_bar: np.ndarray,
    y_prime: np.ndarray,
    mask_prime: SamplingMask,
    smaps: np.ndarray,
    wbar: WeightVector,
) -> tuple[np.ndarray, float]:
    """Loss gradient in x_bar of the weighted measurement-consistency loss.

    l = 0.5 * sum_k w2_k |(M' A x_bar - y')_k|^2 with per-line weights
    w2 = wbar^2 on the sampled lines; returns (dl/dx_bar, l).
    """
    y_prime = np.asarray(y_prime, dtype=np.complex128)
    w2 = subsample_weight(wbar, mask_prime)
    resid = forward_op(x_bar, smaps, mask_prime) - y_prime * mask_prime.lines
    loss = 0.5 * float(np.sum(w2 * np.abs(resid) ** 2))
    v = adjoint_op(w2 * resid, smaps, mask_prime)
    return v, loss


def sup_cotangent(x_bar: np.ndarray, x_true: np.ndarray) -> tuple[np.ndarray, float]:
    """Loss gradient in x_bar of l = 0.5 ||x_bar - x_true||^2."""
    x_true = np.asarray(x_true, dtype=np.complex128)
    v = x_bar - x_true
    loss = 0.5 * float(np.sum(np.abs(v) ** 2))
    return v, loss


def jfb_self(
    params: DenoiserParams,
    pair: TrainingPair,
    smaps: np.ndarray,
    wbar: WeightVector,
    cfg: DeqConfig,
) -> np.ndarray:
    """Self-supervised parameter update for one measurement pair."""
    smaps = np.asarray(smaps, dtype=np.complex128)
    fp = forward_fixed_point(params, pair.y, smaps, pair.mask, cfg)
    s = denoiser_input(fp.x, np.asarray(pair.y, np.complex128), smaps, pair.mask, cfg)
    v, _ = self_cotangent(fp.x, pair.y_prime, pair.mask_prime, smaps, wbar)
    return jfb_from_cotangent(params, s, v, cfg)


def jfb_sup(
    params: DenoiserParams,
    y: np.ndarray,
    smaps: np.ndarray,
    mask: SamplingMask,
    x_true: np.ndarray,
    cfg: DeqConfig,
) -> np.ndarray:
    """Supervised parameter update for one measurement."""
    smaps = np.asarray(smaps, dtype=np.complex128)
    fp = forward_fixed_point(params, y, smaps, mask, cfg)
    s = denoiser_input(fp.x, np.asarray(y, np.complex128), smaps, mask, cfg)
    v, _ = sup_cotangent(fp.x, x_true)
    return jfb_from_cotangent(params, s, v, cfg)
