"""Training loop: Adam on Jacobian-free updates, one arm per run.

Arms
----
supervised       0.5 ||x_bar - x||^2 against the stored groundtruth
self_weighted    weighted measurement consistency on the second mask draw
self_unweighted  same loss with all line weights equal to one

The two self-supervised arms run on a groundtruth-locked view of the
training set, so any attempt to read labels raises. Parameters are
re-normalized (spectral) after every optimizer step. With a fixed seed the
whole loop is deterministic: batch order, initialization and all reductions
are seeded or order-fixed.
"""

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import deq
from .deq import DeqConfig
from .datagen import Dataset
from .denoiser import ConvArch, DenoiserParams, init_params, save_params, spectral_normalize
from .linops import WeightVector, build_weight, identity_weight
from .metrics import psnr, ssim

ARMS = ("supervised", "self_weighted", "self_unweighted")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(
    state: AdamState,
    theta: np.ndarray,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam step; returns new (state, theta)."""
    if grad.shape != theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match theta {theta.shape}")
    bad = ~np.isfinite(grad)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise ValueError(f"non-finite gradient at coordinate {idx}")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m=m, v=v, step=t), new_theta


@dataclass
class EpochLog:
    epoch: int
    arm: str
    train_loss: float
    val_psnr: float | None
    val_ssim: float | None
    wallclock_s: float


@dataclass(frozen=True)
class TrainConfig:
    arm: str = "self_weighted"
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    weight_mode: str = "exact"
    sn_iters: int = 5
    checkpoint_every: int = 0
    arch: ConvArch = field(default_factory=ConvArch)
    deq: DeqConfig = field(default_factory=DeqConfig)

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")
        if self.weight_mode not in ("exact", "empirical"):
            raise ValueError(f"weight_mode must be 'exact' or 'empirical', got {self.weight_mode!r}")


def _training_weight(cfg: TrainConfig, ds: Dataset) -> WeightVector | None:
    if cfg.arm == "supervised":
        return None
    if cfg.arm == "self_unweighted":
        return identity_weight(ds.meta.w)
    if cfg.weight_mode == "empirical":
        draws = [ds.pair(i).mask_prime for i in range(len(ds))]
        return build_weight(None, mode="empirical", draws=draws)
    return build_weight(ds.family(), mode="exact")


def _sample_update(params, ds, i, smaps, wbar, cfg) -> tuple[np.ndarray, float]:
    pair = ds.pair(i)
    fp = deq.forward_fixed_point(params, pair.y, smaps, pair.mask, cfg.deq)
    s = deq.denoiser_input(fp.x, np.asarray(pair.y, np.complex128), smaps, pair.mask, cfg.deq)
    if cfg.arm == "supervised":
        v, loss = deq.sup_cotangent(fp.x, ds.groundtruth(i))
    else:
        v, loss = deq.self_cotangent(fp.x, pair.y_prime, pair.mask_prime, smaps, wbar)
    return deq.jfb_from_cotangent(params, s, v, cfg.deq), loss


def evaluate(
    params: DenoiserParams, ds: Dataset, cfg: deq.DeqConfig
) -> tuple[list[tuple[float, float]], float, float]:
    """Reconstruct every pair and score |x_bar| against |groundtruth|.

    Returns (per-image (psnr, ssim) list, mean psnr, mean ssim). Raises if
    the dataset has groundtruth locked.
    """
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    smaps = ds.coil_maps()
    scores = []
    for i in range(len(ds)):
        pair = ds.pair(i)
        ref = np.abs(ds.groundtruth(i).astype(np.complex128))
        fp = deq.forward_fixed_point(params, pair.y, smaps, pair.mask, cfg)
        rec = np.abs(fp.x)
        scores.append((psnr(rec, ref), ssim(rec, ref)))
    arr = np.array(scores)
    return scores, float(arr[:, 0].mean()), float(arr[:, 1].mean())


def train(
    cfg: TrainConfig,
    train_ds: Dataset,
    val_ds: Dataset | None = None,
    run_dir: str | Path | None = None,
) -> tuple[DenoiserParams, list[EpochLog]]:
    """Train one arm; returns final parameters and per-epoch logs.

    ``cfg.lr`` is the peak step size; it follows a cosine decay over the
    epochs down to 5% of the peak. When ``run_dir`` is given, writes
    ``metrics.csv``, ``final.ckpt`` and (if ``checkpoint_every`` > 0)
    periodic checkpoints under ``checkpoints/``.
    """
    if len(train_ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    ds = train_ds if cfg.arm == "supervised" else train_ds.with_groundtruth_locked()
    smaps = ds.coil_maps()
    wbar = _training_weight(cfg, ds)
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init_params(
        cfg.arch, ds.meta.h, ds.meta.w, int(init_seq.generate_state(1, np.uint64)[0])
    )
    params = spectral_normalize(params, cfg.sn_iters)
    state = AdamState.zeros(params.theta.size)
    rng = np.random.default_rng(shuffle_seq)

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        if cfg.checkpoint_every > 0:
            (run_dir / "checkpoints").mkdir(exist_ok=True)

    logs: list[EpochLog] = []
    n = len(ds)
    for epoch in range(1, cfg.epochs + 1):
        started = time.monotonic()
        # cosine decay to 5% of the base rate: large steps early for fast
        # progress, small steps late so the run settles instead of cycling
        frac = (epoch - 1) / max(cfg.epochs - 1, 1)
        lr_epoch = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * frac)))
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            grad_sum = np.zeros_like(params.theta)
            for i in batch:
                g, loss = _sample_update(params, ds, int(i), smaps, wbar, cfg)
                grad_sum += g
                epoch_loss += loss
            state, theta = adam_step(
                state, params.theta, grad_sum / len(batch), lr_epoch, cfg.beta1, cfg.beta2, cfg.adam_eps
            )
            params = replace(params, theta=theta)
            params = spectral_normalize(params, cfg.sn_iters)
        val_psnr = val_ssim = None
        if val_ds is not None:
            _, val_psnr, val_ssim = evaluate(params, val_ds, cfg.deq)
        logs.append(
            EpochLog(epoch, cfg.arm, epoch_loss / n, val_psnr, val_ssim, time.monotonic() - started)
        )
        if run_dir is not None and cfg.checkpoint_every > 0 and epoch % cfg.checkpoint_every == 0:
            save_params(run_dir / "checkpoints" / f"epoch_{epoch:04d}.ckpt", params)
    if run_dir is not None:
        save_params(run_dir / "final.ckpt", params)
        save_metrics(run_dir / "metrics.csv", logs)
    return params, logs


def save_metrics(path: str | Path, logs: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "arm", "train_loss", "val_psnr", "val_ssim", "wallclock_s"])
        for log in logs:
            writer.writerow(
                [
                    log.epoch,
                    log.arm,
                    repr(log.train_loss),
                    "" if log.val_psnr is None else repr(log.val_psnr),
                    "" if log.val_ssim is None else repr(log.val_ssim),
                    f"{log.wallclock_s:.3f}",
                ]
            )
