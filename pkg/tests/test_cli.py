"""End-to-end command-line tests, all through cli.main(argv)."""

import csv
import filecmp
import hashlib

import numpy as np
import pytest

from eqmri.cli import main
from eqmri.datagen import read_dataset, read_manifest

TINY = ["--n-pairs", "3", "--height", "12", "--width", "12", "--coils", "1",
        "--accel", "2", "--acs", "2", "--sigma", "0.01", "--seed", "5"]
FAST = ["--max-iters", "20", "--tol", "1e-3"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny dataset plus a one-epoch training run, shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    assert main(["gen-data", "--out", str(data)] + TINY) == 0
    assert main(["train", "--data", str(data), "--run", str(run),
                 "--arm", "self_weighted", "--epochs", "1", "--batch-size", "3",
                 "--channels", "2,3,2", "--seed", "1"] + FAST) == 0
    return root


def test_gen_data_writes_readable_dataset(workspace):
    ds = read_dataset(workspace / "data")
    assert len(ds) == 3
    assert ds.meta.coils == 1


def test_gen_data_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--out", str(a)] + TINY) == 0
    assert main(["gen-data", "--out", str(b)] + TINY) == 0
    files = sorted(p.name for p in a.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert mismatch == [] and errors == []
    assert "y.bin" in match and "manifest.txt" in match


def test_train_run_layout(workspace):
    run = workspace / "run"
    assert (run / "final.ckpt").is_file()
    assert (run / "metrics.csv").is_file()
    echoed = read_manifest(run / "config.txt")
    assert echoed["arm"] == "self_weighted"
    assert echoed["channels"] == "2,3,2"


def test_eval_writes_scores_csv(workspace, tmp_path):
    out = tmp_path / "scores.csv"
    code = main(["eval", "--data", str(workspace / "data"),
                 "--checkpoint", str(workspace / "run" / "final.ckpt"),
                 "--out", str(out)] + FAST)
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["index", "psnr", "ssim"]
    assert len(rows) == 5 and rows[-1][0] == "mean"
    per_image = [float(r[1]) for r in rows[1:4]]
    assert float(rows[-1][1]) == pytest.approx(np.mean(per_image))


def test_reconstruct_manifest_and_checksum(workspace, tmp_path):
    out = tmp_path / "recon"
    code = main(["reconstruct", "--data", str(workspace / "data"),
                 "--checkpoint", str(workspace / "run" / "final.ckpt"),
                 "--out", str(out)] + FAST)
    assert code == 0
    fields = read_manifest(out / "manifest.txt")
    raw = (out / "recon.bin").read_bytes()
    assert fields["format"] == "eqmri-recon"
    assert (int(fields["n"]), int(fields["h"]), int(fields["w"])) == (3, 12, 12)
    assert fields["sha256.recon.bin"] == hashlib.sha256(raw).hexdigest()
    recs = np.frombuffer(raw, "<c8").reshape(3, 12, 12)
    assert np.all(np.isfinite(recs))


def test_baseline_zero_filled(workspace, tmp_path):
    out = tmp_path / "zf.csv"
    code = main(["baseline", "--method", "zero-filled",
                 "--data", str(workspace / "data"), "--out", str(out)])
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[-1][0] == "mean"


def test_baseline_tv_with_grid(workspace, capsys):
    code = main(["baseline", "--method", "tv", "--data", str(workspace / "data"),
                 "--tau-grid", "1e-3,1e-2", "--iters", "30"])
    assert code == 0
    assert "tau=" in capsys.readouterr().out


def test_verify_prop1_passes(tmp_path, capsys):
    out = tmp_path / "verify.csv"
    code = main(["verify", "--suite", "prop1", "--width", "8", "--height", "8",
                 "--coils", "1", "--accel", "2", "--acs", "2", "--out", str(out)])
    assert code == 0
    assert "PASS prop1" in capsys.readouterr().out
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["name", "passed", "discrepancy", "tolerance"]
    assert rows[1][1] == "1"


def test_verify_theorem1_exact_passes(capsys):
    code = main(["verify", "--suite", "theorem1", "--mode", "exact",
                 "--width", "8", "--height", "8", "--coils", "1",
                 "--accel", "2", "--acs", "2", "--samples", "2"] + FAST)
    assert code == 0
    assert "PASS" in capsys.readouterr().out


def test_missing_required_option_exits_2(capsys):
    assert main(["gen-data"] + TINY) == 2
    assert "--out" in capsys.readouterr().err


def test_unreadable_dataset_exits_2(tmp_path, capsys):
    bad = tmp_path / "empty"
    bad.mkdir()
    code = main(["eval", "--data", str(bad), "--checkpoint", "nope.ckpt"])
    assert code == 2
    assert "cannot read dataset" in capsys.readouterr().err


def test_invalid_geometry_exits_1(tmp_path, capsys):
    code = main(["gen-data", "--out", str(tmp_path / "x"), "--width", "8",
                 "--accel", "3"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_checkpoint_grid_mismatch_exits_2(workspace, tmp_path, capsys):
    other = tmp_path / "data16"
    assert main(["gen-data", "--out", str(other), "--n-pairs", "1", "--height", "16",
                 "--width", "16", "--coils", "1", "--accel", "2", "--acs", "2"]) == 0
    code = main(["eval", "--data", str(other),
                 "--checkpoint", str(workspace / "run" / "final.ckpt")])
    assert code == 2
    assert "does not match" in capsys.readouterr().err


def test_config_file_supplies_and_flags_override(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("out: {}\nn_pairs: 4\nheight: 8\nwidth: 8\ncoils: 1\n"
                   "accel: 2\nacs: 2\nsigma: 0.0\nseed: 9\n".format(tmp_path / "d1"))
    assert main(["gen-data", "--config", str(cfg)]) == 0
    ds = read_dataset(tmp_path / "d1")
    assert len(ds) == 4 and ds.meta.sigma == 0.0

    # an explicit flag beats the config value for the same key
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d2"),
                 "--n-pairs", "2"]) == 0
    assert read_dataset(tmp_path / "d2").meta.n_pairs == 2


def test_config_file_bad_value_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n_pairs: many\n")
    code = main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")])
    assert code == 2
    assert "cannot parse" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "absent.cfg"),
                 "--out", str(tmp_path / "d")]) == 2
