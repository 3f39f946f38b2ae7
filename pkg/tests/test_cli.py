import json
import os
import subprocess
import sys

import numpy as np
import pytest

from spinecarve import cli, imageio
from spinecarve.model import load_model


def make_dataset(root, n=3, dims=(32, 32), seed=0, overlap=0.3):
    spec = root / "spec.json"
    spec.write_text(json.dumps({"dims": list(dims), "n_shapes": n, "overlap": overlap, "seed": seed}))
    out = root / "data"
    assert cli.main(["phantom", str(spec), "-o", str(out)]) == 0
    return out


def tree(path):
    out = {}
    for dirpath, _, files in os.walk(path):
        for f in files:
            full = os.path.join(dirpath, f)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, path)] = fh.read()
    return out


def test_phantom_layout_and_determinism(tmp_path):
    (tmp_path / "1").mkdir()
    (tmp_path / "2").mkdir()
    a = make_dataset(tmp_path / "1")
    b = make_dataset(tmp_path / "2")
    assert tree(a) == tree(b)
    names = sorted(os.listdir(a / "images"))
    assert names == ["phantom_000.pgm", "phantom_001.pgm", "phantom_002.pgm"]
    assert sorted(os.listdir(a / "masks"))[0] == "phantom_000_mask.pgm"
    assert json.loads((a / "config.json").read_text())["seed"] == 0


def test_phantom_3d_and_seed_override(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"dims": [12, 12, 12], "n_shapes": 2}))
    assert cli.main(["phantom", str(spec), "-o", str(tmp_path / "o"), "--seed", "4"]) == 0
    assert (tmp_path / "o" / "images" / "phantom_001.mhd").exists()
    assert json.loads((tmp_path / "o" / "spec.json").read_text())["seed"] == 4


def test_phantom_invalid_spec(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"dims": [16, 16], "overlap": 3}))
    assert cli.main(["phantom", str(spec), "-o", str(tmp_path / "o")]) == 5
    spec.write_text(json.dumps({"dims": [16, 16], "unknown": 1}))
    assert cli.main(["phantom", str(spec), "-o", str(tmp_path / "o")]) == 5
    assert cli.main(["phantom", str(tmp_path / "missing.json"), "-o", str(tmp_path / "o")]) == 2


def test_train_counts_and_determinism(tmp_path, capsys):
    data = make_dataset(tmp_path)
    assert cli.main(["train", str(data), "-o", str(tmp_path / "m1.spm")]) == 0
    printed = capsys.readouterr().out
    assert "shape bandwidth" in printed
    model = load_model(tmp_path / "m1.spm")
    assert model.intensity_fg.n_samples + model.intensity_bg.n_samples == 3 * 32 * 32
    assert cli.main(["train", str(data / "images"), str(data / "masks"), "-o", str(tmp_path / "m2.spm")]) == 0
    assert (tmp_path / "m1.spm").read_bytes() == (tmp_path / "m2.spm").read_bytes()
    assert (tmp_path / "m1.spm.config.json").exists()


def test_train_mismatched_files(tmp_path, capsys):
    data = make_dataset(tmp_path)
    os.remove(data / "masks" / "phantom_001_mask.pgm")
    assert cli.main(["train", str(data), "-o", str(tmp_path / "m.spm")]) == 2
    assert "phantom_001.pgm" in capsys.readouterr().err


def test_segment_outputs_and_errors(tmp_path, capsys):
    data = make_dataset(tmp_path)
    model = tmp_path / "m.spm"
    assert cli.main(["train", str(data), "-o", str(model)]) == 0
    out = tmp_path / "seg"
    img = data / "images" / "phantom_000.pgm"
    gt = data / "masks" / "phantom_000_mask.pgm"
    code = cli.main(["segment", str(img), str(model), "-o", str(out), "--ground-truth", str(gt),
                     "--method", "data+context"])
    assert code == 0
    text = capsys.readouterr().out
    assert "dice:" in text and "final energy" in text
    for name in ("mask.pgm", "phi.mhd", "phi.raw", "energy.csv", "overlay.pgm", "config.json"):
        assert (out / name).exists()
    assert json.loads((out / "config.json").read_text())["method"] == "data+context"
    assert (out / "energy.csv").read_text().splitlines()[0] == "stage,iteration,energy"
    phi = imageio.read_mhd(str(out / "phi.mhd"))
    np.testing.assert_array_equal(phi < 0, imageio.load_mask(str(out / "mask.pgm")))

    imageio.save_image(str(tmp_path / "small.pgm"), np.zeros((10, 10)))
    assert cli.main(["segment", str(tmp_path / "small.pgm"), str(model), "-o", str(tmp_path / "x")]) == 3
    assert cli.main(["segment", str(img), str(tmp_path / "nope.spm"), "-o", str(tmp_path / "x")]) == 2
    (tmp_path / "bad.spm").write_bytes(model.read_bytes()[:100])
    assert cli.main(["segment", str(img), str(tmp_path / "bad.spm"), "-o", str(tmp_path / "x")]) == 2
    code = cli.main(["segment", str(img), str(model), "-o", str(tmp_path / "y"), "--max-iters", "1"])
    assert code == 4
    assert (tmp_path / "y" / "mask.pgm").exists()


def test_loo_and_evaluate(tmp_path, capsys):
    data = make_dataset(tmp_path)
    out = tmp_path / "loo"
    assert cli.main(["loo", str(data), "-o", str(out), "--methods", "full,data-only", "--threads", "1"]) == 0
    lines = (out / "dice.csv").read_text().splitlines()
    assert len(lines) == 7
    assert (out / "summary.txt").exists() and (out / "overlays").is_dir()
    assert json.loads((out / "config.json").read_text())["methods"] == ["full", "data-only"]
    capsys.readouterr()
    m = data / "masks"
    assert cli.main(["evaluate", str(m / "phantom_000_mask.pgm"), str(m / "phantom_000_mask.pgm")]) == 0
    assert capsys.readouterr().out.strip() == "1.000000"
    assert cli.main(["loo", str(data), "-o", str(out), "--methods", "bogus"]) == 2


def test_config_file_and_env(tmp_path, monkeypatch):
    data = make_dataset(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"evolution": {"w_shape": 0.5}, "methods": ["data-only", "full"]}))
    monkeypatch.setenv("SPINECARVE_THREADS", "1")
    out = tmp_path / "loo"
    assert cli.main(["loo", str(data), "-o", str(out), "--config", str(cfg), "--w-context", "2",
                     "--no-overlays"]) == 0
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["evolution"]["w_shape"] == 0.5 and echoed["evolution"]["w_context"] == 2.0
    assert echoed["threads"] == 1
    assert not (out / "overlays").exists()
    cfg.write_text('{"colour": 1}')
    assert cli.main(["loo", str(data), "-o", str(out), "--config", str(cfg)]) == 2
    monkeypatch.setenv("SPINECARVE_THREADS", "many")
    assert cli.main(["loo", str(data), "-o", str(out)]) == 2


@pytest.mark.parametrize("sub", ["train", "segment", "phantom", "loo", "evaluate"])
def test_help_lists_flags(sub):
    proc = subprocess.run([sys.executable, "-m", "spinecarve.cli", sub, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    if sub != "evaluate":
        for flag in ("--config", "--seed", "--threads", "--w-shape", "--spatial-bandwidth"):
            assert flag in proc.stdout
        assert "default" in proc.stdout
