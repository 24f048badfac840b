import csv
import subprocess
import sys
import time

import numpy as np
import pytest
from PIL import Image as PILImage

from sparsect.cli import main, parse_window, UsageError
from sparsect.config import load_config
from sparsect.fbp import default_pad_len, fbp_reconstruct, make_filter
from sparsect.phantoms import load_split, read_manifest
from sparsect.projector import forward_project
from sparsect.tensorio import read_tensor, write_tensor
from sparsect.training import load_checkpoint

TINY = """[run]
seed = 7
[geometry]
size = 16
detectors = 24
views = 4
[dataset]
n_train = 2
n_val = 1
n_test = 2
[train]
jump_epochs = 1
joint_epochs = 1
batch_size = 2
[network]
base_channels = 4
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ini = root / "tiny.ini"
    ini.write_text(TINY)
    assert main(["synth", "--config", str(ini), "--out", str(root / "ds")]) == 0
    assert main(["train", "--data", str(root / "ds"), "--out", str(root / "ck.wnck")]) == 0
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_help_lists_every_command():
    out = subprocess.run([sys.executable, "-m", "sparsect.cli", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for cmd in ("synth", "fbp", "enhance", "train", "infer", "wls-tv", "eval",
                "plot-filter", "export-png"):
        assert cmd in out


def test_console_script_errors_are_nonzero(tmp_path):
    res = subprocess.run(["sparsect", "fbp", str(tmp_path / "missing.sct"), "--out", "x.sct"],
                         capture_output=True, text=True)
    assert res.returncode == 2
    assert "sparsect fbp: error:" in res.stderr


def test_synth_writes_dataset_and_config(run):
    rows = read_manifest(run / "ds")
    assert len(rows) == (8 + 4 + 2) * 4
    cfg = load_config(run / "ds" / "run.ini")
    assert cfg.seed == 7 and cfg.desk.image == 16


def test_train_log_and_checkpoint(run):
    rows = read_csv(run / "ck.wnck.csv")
    assert [r["phase"] for r in rows] == ["sdm", "rem", "idm", "joint"]
    assert all(np.isfinite(float(r["mean_loss"])) for r in rows)
    state, tcfg, desk = load_checkpoint(run / "ck.wnck")
    assert state.epochs_done == {"sdm": 1, "rem": 1, "idm": 1, "joint": 1}
    assert desk.image == 16 and tcfg.wnet.sdm.base_channels == 4


def test_fbp_of_full_view_reproduces_reference(run, tmp_path):
    g_k, g_K, g_full = load_config(run / "ds" / "run.ini").desk.geometries()
    for s in load_split(run / "ds", "test"):
        write_tensor(tmp_path / "y.sct", forward_project(s.phantom, g_full))
        assert main(["fbp", "--config", str(run / "ds" / "run.ini"), str(tmp_path / "y.sct"),
                     "--out", str(tmp_path / "x.sct")]) == 0
        assert read_tensor(tmp_path / "x.sct").tobytes() == s.x_full.tobytes()


@pytest.mark.parametrize("name", ["ramlak", "cosine", "shepp-logan"])
def test_fbp_dataset_mode(run, tmp_path, name):
    ini = str(run / "ds" / "run.ini")
    assert main(["fbp", "--config", ini, "--data", str(run / "ds"), "--filter", name,
                 "--out", str(tmp_path)]) == 0
    g_k = load_config(ini).desk.geometries()[0]
    for s in load_split(run / "ds", "test"):
        want = fbp_reconstruct(s.y_k, g_k, make_filter(name.replace("-", "_"), default_pad_len(g_k.n_detectors)))
        np.testing.assert_array_equal(read_tensor(tmp_path / f"{s.sample_id}.sct"), want)


def test_learned_filter_needs_checkpoint(run, tmp_path):
    ini = str(run / "ds" / "run.ini")
    args = ["fbp", "--config", ini, "--data", str(run / "ds"), "--out", str(tmp_path)]
    assert main(args + ["--filter", "learned"]) == 2
    assert main(args + ["--filter", "learned", "--checkpoint", str(run / "ck.wnck")]) == 0
    assert main(args + ["--checkpoint", str(run / "ck.wnck")]) == 2


def test_enhance_infer_wls_tv_and_eval(run, tmp_path):
    ini = str(run / "ds" / "run.ini")
    ds = str(run / "ds")
    assert main(["enhance", "--config", ini, "--data", ds, "--out", str(tmp_path / "enh")]) == 0
    assert main(["infer", "--checkpoint", str(run / "ck.wnck"), "--data", ds,
                 "--out", str(tmp_path / "wnet")]) == 0
    assert main(["wls-tv", "--config", ini, "--data", ds, "--iters", "20",
                 "--out", str(tmp_path / "tv")]) == 0
    ids = [s.sample_id for s in load_split(run / "ds", "test")]
    assert read_tensor(tmp_path / "enh" / f"{ids[0]}.sct").shape == (16, 24)
    assert read_tensor(tmp_path / "wnet" / f"{ids[0]}.sct").shape == (16, 16)
    assert main(["eval", "--data", ds, "--method", f"wnet={tmp_path / 'wnet'}",
                 "--method", f"tv={tmp_path / 'tv'}", "--out", str(tmp_path / "m.csv")]) == 0
    rows = read_csv(tmp_path / "m.csv")
    assert [(r["method"], r["slice_id"]) for r in rows] == [(m, i) for m in ("wnet", "tv") for i in ids]
    assert all(0 < float(r["ssim"]) <= 1 for r in rows)


def test_eval_identical_pair(tmp_path):
    x = np.random.default_rng(0).random((16, 16))
    write_tensor(tmp_path / "a.sct", x)
    assert main(["eval", "--pair", f"{tmp_path / 'a.sct'}:{tmp_path / 'a.sct'}",
                 "--out", str(tmp_path / "m.csv")]) == 0
    (row,) = read_csv(tmp_path / "m.csv")
    assert float(row["ssim"]) == 1.0 and float(row["psnr"]) == float("inf")


def test_eval_errors(tmp_path):
    assert main(["eval", "--out", str(tmp_path / "m.csv")]) == 2
    assert main(["eval", "--method", "x=y", "--out", str(tmp_path / "m.csv")]) == 2
    assert main(["eval", "--pair", "nocolon", "--out", str(tmp_path / "m.csv")]) == 2


def test_plot_filter(run, tmp_path):
    assert main(["plot-filter", "--out", str(tmp_path / "a.csv")]) == 0
    rows = read_csv(tmp_path / "a.csv")
    assert len(rows) == 65 and set(rows[0]) == {"bin", "frequency", "weight", "cosine", "shepp_logan"}
    assert main(["plot-filter", "--checkpoint", str(run / "ck.wnck"),
                 "--out", str(tmp_path / "b.csv")]) == 0
    assert "ramlak" in read_csv(tmp_path / "b.csv")[0]


def test_export_png(tmp_path):
    x = np.linspace(-1, 2, 64).reshape(8, 8)
    write_tensor(tmp_path / "x.sct", x)
    assert main(["export-png", str(tmp_path / "x.sct"), "--window", "0:1",
                 "--out", str(tmp_path / "x.png")]) == 0
    img = np.asarray(PILImage.open(tmp_path / "x.png"))
    assert img.dtype == np.uint8 and img.shape == (8, 8)
    np.testing.assert_array_equal(img, np.round(np.clip(x, 0, 1) * 255).astype(np.uint8))
    assert main(["export-png", str(tmp_path / "x.sct"), "--window", "1:0",
                 "--out", str(tmp_path / "y.png")]) == 2


def test_parse_window():
    assert parse_window("-0.5:1.5") == (-0.5, 1.5)
    for bad in ("1", "a:b", "2:2"):
        with pytest.raises(UsageError):
            parse_window(bad)


def test_geometry_mismatch_reported(tmp_path):
    write_tensor(tmp_path / "y.sct", np.zeros((16, 50)))
    assert main(["fbp", str(tmp_path / "y.sct"), "--out", str(tmp_path / "x.sct")]) == 2
    assert main(["enhance", str(tmp_path / "y.sct"), "--out", str(tmp_path / "x.sct")]) == 2


def test_thread_limit_env(tmp_path, monkeypatch):
    write_tensor(tmp_path / "x.sct", np.zeros((4, 4)))
    args = ["export-png", str(tmp_path / "x.sct"), "--out", str(tmp_path / "x.png")]
    monkeypatch.setenv("SPARSECT_THREADS", "1")
    assert main(args) == 0
    monkeypatch.setenv("SPARSECT_THREADS", "zero")
    assert main(args) == 2


@pytest.mark.slow
def test_desk_scale_smoke_pipeline(tmp_path):
    t0 = time.perf_counter()
    ds, ck = str(tmp_path / "ds"), str(tmp_path / "ck.wnck")
    assert main(["synth", "--out", ds]) == 0
    assert main(["train", "--data", ds, "--out", ck, "--jump-epochs", "1", "--joint-epochs", "1"]) == 0
    assert main(["infer", "--checkpoint", ck, "--data", ds, "--out", str(tmp_path / "rec")]) == 0
    assert main(["eval", "--data", ds, "--method", f"wnet={tmp_path / 'rec'}",
                 "--out", str(tmp_path / "m.csv")]) == 0
    assert len(read_csv(tmp_path / "m.csv")) == 40
    assert time.perf_counter() - t0 < 600.0
