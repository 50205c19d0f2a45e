"""Command-line interface.

Subcommands: gen-data, train, reconstruct, eval, verify, baseline. Every
option can also come from a flat ``key: value`` config file passed with
--config; explicit flags win over config values, config values win over
defaults. Config keys are the flag names with dashes replaced by
underscores (e.g. ``batch_size``).
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import baselines, deq, verify
from .datagen import (
    Dataset,
    DatasetFormatError,
    make_dataset,
    read_dataset,
    read_manifest,
    write_dataset,
    write_manifest,
    _sha256,
)
from .denoiser import ConvArch, init_params, load_params, spectral_normalize
from .linops import build_weight, identity_weight
from .metrics import psnr, ssim
from .sampling import make_family
from .trainer import ARMS, TrainConfig, evaluate, train


class CliError(Exception):
    pass


def _load_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        return read_manifest(p)
    except DatasetFormatError as exc:
        raise CliError(str(exc)) from None


class Options:
    """Flag > config > default resolution with typed conversion."""

    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        self._config = _load_config(self._args.get("config"))

    def get(self, name: str, typ=str, default=None, required: bool = False):
        key = name.replace("-", "_")
        val = self._args.get(key)
        if val is None and key in self._config:
            raw = self._config[key]
            try:
                val = typ(raw) if typ is not bool else raw.lower() in ("1", "true", "yes")
            except ValueError:
                raise CliError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None
        if val is None:
            if required:
                raise CliError(f"missing required option --{name} (config key {key!r})")
            return default
        return val

    def resolved(self, spec: list[tuple]) -> dict:
        out = {}
        for entry in spec:
            out[entry[0].replace("-", "_")] = self.get(*entry)
        return out


def _deq_config(opts: Options) -> deq.DeqConfig:
    return deq.DeqConfig(
        alpha=opts.get("alpha", float, 0.5),
        gamma=opts.get("gamma", float, 1.0),
        max_iters=opts.get("max-iters", int, 100),
        tol=opts.get("tol", float, 1e-3),
    )


def _read_dataset(path: str) -> Dataset:
    try:
        return read_dataset(path)
    except DatasetFormatError as exc:
        raise CliError(f"cannot read dataset: {exc}") from None


def _load_checkpoint(path: str, ds: Dataset):
    try:
        params = load_params(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}") from None
    if (params.height, params.width) != (ds.meta.h, ds.meta.w):
        raise CliError(
            f"checkpoint grid {params.height}x{params.width} does not match "
            f"dataset {ds.meta.h}x{ds.meta.w}"
        )
    return params


def _cmd_gen_data(args) -> int:
    opts = Options(args)
    out = opts.get("out", str, required=True)
    ds = make_dataset(
        n_pairs=opts.get("n-pairs", int, 10),
        h=opts.get("height", int, 32),
        w=opts.get("width", int, 32),
        coils=opts.get("coils", int, 4),
        accel=opts.get("accel", int, 4),
        acs=opts.get("acs", int, 4),
        sigma=opts.get("sigma", float, 0.01),
        master_seed=opts.get("seed", int, 0),
        variant=opts.get("variant", str, "full"),
    )
    write_dataset(out, ds)
    m = ds.meta
    print(
        f"wrote dataset {out}: n_pairs={m.n_pairs} grid={m.h}x{m.w} coils={m.coils} "
        f"R={m.accel} acs={m.acs} variant={m.variant} sigma={m.sigma}"
    )
    return 0


_TRAIN_SPEC = [
    ("arm", str, "self_weighted"),
    ("epochs", int, 30),
    ("batch-size", int, 8),
    ("lr", float, 1e-4),
    ("seed", int, 0),
    ("weight-mode", str, "exact"),
    ("sn-iters", int, 5),
    ("checkpoint-every", int, 0),
    ("channels", str, "2,16,16,2"),
    ("ksize", int, 3),
    ("alpha", float, 0.5),
    ("gamma", float, 1.0),
    ("max-iters", int, 100),
    ("tol", float, 1e-3),
]


def _cmd_train(args) -> int:
    opts = Options(args)
    data = opts.get("data", str, required=True)
    run = Path(opts.get("run", str, required=True))
    val_path = opts.get("val-data", str)
    r = opts.resolved(_TRAIN_SPEC)
    if r["arm"] not in ARMS:
        raise CliError(f"--arm must be one of {', '.join(ARMS)}, got {r['arm']!r}")
    try:
        arch = ConvArch(tuple(int(c) for c in r["channels"].split(",")), ksize=r["ksize"])
    except ValueError as exc:
        raise CliError(f"bad --channels/--ksize: {exc}") from None
    cfg = TrainConfig(
        arm=r["arm"],
        epochs=r["epochs"],
        batch_size=r["batch_size"],
        lr=r["lr"],
        seed=r["seed"],
        weight_mode=r["weight_mode"],
        sn_iters=r["sn_iters"],
        checkpoint_every=r["checkpoint_every"],
        arch=arch,
        deq=deq.DeqConfig(
            alpha=r["alpha"], gamma=r["gamma"], max_iters=r["max_iters"], tol=r["tol"]
        ),
    )
    train_ds = _read_dataset(data)
    val_ds = _read_dataset(val_path) if val_path else None
    run.mkdir(parents=True, exist_ok=True)
    echo = [("data", data), ("run", str(run)), ("val_data", val_path or "")]
    echo += sorted((k, repr(v) if isinstance(v, float) else str(v)) for k, v in r.items())
    write_manifest(run / "config.txt", echo)
    _, logs = train(cfg, train_ds, val_ds, run_dir=run)
    tail = ""
    if logs and logs[-1].val_psnr is not None:
        tail = f" val_psnr={logs[-1].val_psnr:.2f} val_ssim={logs[-1].val_ssim:.4f}"
    print(f"trained arm={cfg.arm} epochs={cfg.epochs} -> {run / 'final.ckpt'}{tail}")
    return 0


def _cmd_reconstruct(args) -> int:
    opts = Options(args)
    ds = _read_dataset(opts.get("data", str, required=True))
    params = _load_checkpoint(opts.get("checkpoint", str, required=True), ds)
    out = Path(opts.get("out", str, required=True))
    cfg = _deq_config(opts)
    smaps = ds.coil_maps()
    recons = np.zeros((len(ds), ds.meta.h, ds.meta.w), dtype=np.complex64)
    for i in range(len(ds)):
        pair = ds.pair(i)
        recons[i] = deq.forward_fixed_point(params, pair.y, smaps, pair.mask, cfg).x.astype(
            np.complex64
        )
    out.mkdir(parents=True, exist_ok=True)
    raw = recons.astype("<c8").tobytes()
    (out / "recon.bin").write_bytes(raw)
    write_manifest(
        out / "manifest.txt",
        [
            ("format", "eqmri-recon"),
            ("version", "1"),
            ("n", str(len(ds))),
            ("h", str(ds.meta.h)),
            ("w", str(ds.meta.w)),
            ("sha256.recon.bin", _sha256(raw)),
        ],
    )
    print(f"wrote {len(ds)} reconstructions to {out}")
    return 0


def _cmd_eval(args) -> int:
    opts = Options(args)
    ds = _read_dataset(opts.get("data", str, required=True))
    params = _load_checkpoint(opts.get("checkpoint", str, required=True), ds)
    out = opts.get("out", str)
    scores, mean_psnr, mean_ssim = evaluate(params, ds, _deq_config(opts))
    if out:
        _write_scores_csv(out, scores, mean_psnr, mean_ssim)
    print(f"eval: n={len(scores)} mean_psnr={mean_psnr:.3f} mean_ssim={mean_ssim:.4f}")
    return 0


def _write_scores_csv(path, scores, mean_psnr, mean_ssim):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "psnr", "ssim"])
        for i, (p, s) in enumerate(scores):
            writer.writerow([i, repr(p), repr(s)])
        writer.writerow(["mean", repr(mean_psnr), repr(mean_ssim)])


def _cmd_baseline(args) -> int:
    opts = Options(args)
    method = opts.get("method", str, required=True)
    if method not in ("zero-filled", "tv"):
        raise CliError(f"--method must be zero-filled or tv, got {method!r}")
    ds = _read_dataset(opts.get("data", str, required=True))
    out = opts.get("out", str)
    smaps = ds.coil_maps()
    pairs = [ds.pair(i) for i in range(len(ds))]
    refs = [np.abs(ds.groundtruth(i).astype(np.complex128)) for i in range(len(ds))]
    chosen_tau = None
    if method == "tv":
        cfg = baselines.TvConfig(iters=opts.get("iters", int, 100))
        grid = opts.get("tau-grid", str)
        if grid:
            taus = [float(t) for t in grid.split(",")]
            tune_n = min(4, len(ds))
            chosen_tau, _ = baselines.tv_grid_search(
                [pairs[i].y for i in range(tune_n)],
                [pairs[i].mask for i in range(tune_n)],
                smaps,
                refs[:tune_n],
                taus,
                cfg,
            )
        else:
            chosen_tau = opts.get("tau", float, 1e-3)
        cfg = baselines.TvConfig(tau=chosen_tau, iters=cfg.iters)
        recs = [np.abs(baselines.tv_reconstruct(p.y, smaps, p.mask, cfg).x) for p in pairs]
    else:
        recs = [np.abs(baselines.zero_filled(p.y, smaps, p.mask)) for p in pairs]
    scores = [(psnr(r, ref), ssim(r, ref)) for r, ref in zip(recs, refs)]
    arr = np.array(scores)
    mean_psnr, mean_ssim = float(arr[:, 0].mean()), float(arr[:, 1].mean())
    if out:
        _write_scores_csv(out, scores, mean_psnr, mean_ssim)
    tau_note = f" tau={chosen_tau:g}" if chosen_tau is not None else ""
    print(f"baseline {method}:{tau_note} n={len(scores)} mean_psnr={mean_psnr:.3f} mean_ssim={mean_ssim:.4f}")
    return 0


def _cmd_verify(args) -> int:
    opts = Options(args)
    suite = opts.get("suite", str, "all")
    if suite not in ("prop1", "theorem1", "all"):
        raise CliError(f"--suite must be prop1, theorem1 or all, got {suite!r}")
    variant = opts.get("variant", str, "full")
    h = opts.get("height", int, 16)
    w = opts.get("width", int, 16)
    coils = opts.get("coils", int, 2)
    accel = opts.get("accel", int, 4)
    acs = opts.get("acs", int, 4)
    seed = opts.get("seed", int, 0)
    samples = opts.get("samples", int, 3)
    family = make_family(w, accel, acs, variant)
    wbar = build_weight(family, mode="exact")
    reports = []
    if suite in ("prop1", "all"):
        reports.append(verify.verify_prop1(family, wbar, h, w, coils))
        # Informational: the unweighted expectation is not the identity, so
        # this control reports its distance with no pass criterion.
        control = verify.verify_prop1(family, identity_weight(w), h, w, coils, tol=np.inf)
        control.name = f"prop1-unweighted-control[R={accel},acs={acs}]"
        reports.append(control)
    if suite in ("theorem1", "all"):
        mode = opts.get("mode", str, "exact")
        sigma = opts.get("sigma", float, 0.0 if mode == "exact" else 0.01)
        ds = make_dataset(samples, h, w, coils, accel, acs, sigma, seed, variant)
        params = spectral_normalize(init_params(ConvArch(), h, w, seed + 1))
        cfg = _deq_config(opts)
        if mode == "exact":
            reports.append(
                verify.verify_theorem1_exact(params, ds, family, wbar, cfg, n_samples=samples)
            )
        elif mode == "mc":
            draws = tuple(int(d) for d in opts.get("draws", str, "100,1000").split(","))
            reports.append(
                verify.verify_theorem1_mc(
                    params, ds, family, wbar, cfg, sigma=sigma,
                    draw_counts=draws, n_samples=samples, seed=seed,
                )
            )
        else:
            raise CliError(f"--mode must be exact or mc, got {mode!r}")
    for rep in reports:
        print(rep.line())
    out = opts.get("out", str)
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "passed", "discrepancy", "tolerance"])
            for rep in reports:
                writer.writerow([rep.name, int(rep.passed), repr(rep.discrepancy), repr(rep.tolerance)])
    return 0 if all(r.passed for r in reports) else 1


def _add_common(p):
    p.add_argument("--config", help="flat key: value config file")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqmri",
        description="Self-supervised deep equilibrium reconstruction for Cartesian parallel MRI",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--out")
    for flag, typ in [
        ("--n-pairs", int), ("--height", int), ("--width", int), ("--coils", int),
        ("--accel", int), ("--acs", int), ("--sigma", float), ("--seed", int),
    ]:
        p.add_argument(flag, type=typ)
    p.add_argument("--variant", choices=["full", "deficient"])
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one arm on a dataset")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--val-data")
    p.add_argument("--run")
    p.add_argument("--arm", choices=list(ARMS))
    for flag, typ in [
        ("--epochs", int), ("--batch-size", int), ("--lr", float), ("--seed", int),
        ("--sn-iters", int), ("--checkpoint-every", int), ("--ksize", int),
        ("--alpha", float), ("--gamma", float), ("--max-iters", int), ("--tol", float),
    ]:
        p.add_argument(flag, type=typ)
    p.add_argument("--weight-mode", choices=["exact", "empirical"])
    p.add_argument("--channels")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct a dataset with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    for flag, typ in [("--alpha", float), ("--gamma", float), ("--max-iters", int), ("--tol", float)]:
        p.add_argument(flag, type=typ)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("eval", help="evaluate a checkpoint against groundtruth")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    for flag, typ in [("--alpha", float), ("--gamma", float), ("--max-iters", int), ("--tol", float)]:
        p.add_argument(flag, type=typ)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify", help="run the structural verification suites")
    _add_common(p)
    p.add_argument("--suite", choices=["prop1", "theorem1", "all"])
    p.add_argument("--variant", choices=["full", "deficient"])
    p.add_argument("--mode", choices=["exact", "mc"])
    for flag, typ in [
        ("--height", int), ("--width", int), ("--coils", int), ("--accel", int),
        ("--acs", int), ("--seed", int), ("--samples", int), ("--sigma", float),
        ("--alpha", float), ("--gamma", float), ("--max-iters", int), ("--tol", float),
    ]:
        p.add_argument(flag, type=typ)
    p.add_argument("--draws")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("baseline", help="run an untrained baseline over a dataset")
    _add_common(p)
    p.add_argument("--method", choices=["zero-filled", "tv"])
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-grid")
    p.add_argument("--iters", type=int)
    p.set_defaults(func=_cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
