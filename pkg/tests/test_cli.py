import csv
import json
import os
import subprocess
import sys

import pytest

from stylestroke.cli import embed_command, run_command
from stylestroke.encoders import ToyEncoder, save_text_embedding
from stylestroke.io import encode_png
from stylestroke.scene import Drawing

from .synthetic import style_image, target_image, text_embedding

SMALL = ["--strokes", "6", "--iters", "4", "--canvas", "32", "32", "--encoder-size", "32", "--candidates", "2",
         "--n-aug", "2", "--features", "64"]


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("inputs")
    encode_png(style_image(48), root / "style.png")
    save_text_embedding(root / "text.json", text_embedding(ToyEncoder(0, 32), 32), model="toy")
    return root


def argv(inputs, out, *extra):
    return ["--style", str(inputs / "style.png"), "--text-embedding", str(inputs / "text.json"),
            "--out", str(out), "--encoder", "toy", "--seed", "7", *SMALL, *extra]


def test_outputs_written(inputs, tmp_path):
    out = tmp_path / "run"
    assert run_command(argv(inputs, out, "--save-every", "2")) == 0
    for name in ("final.png", "final.svg", "drawing.json", "losses.csv", "timing.json", "config.json",
                 "summary.json"):
        assert (out / name).is_file(), name
    assert sorted(os.listdir(out / "frames")) == ["frame_00002.png", "frame_00004.png"]
    assert len(Drawing.from_json((out / "drawing.json").read_text())) == 6
    assert not [f for f in os.listdir(out) if f.startswith(".tmp")]


def test_losses_csv_rows_and_combined(inputs, tmp_path):
    out = tmp_path / "run"
    assert run_command(argv(inputs, out, "--lambda-content", "2", "--lambda-style", "0.5")) == 0
    rows = list(csv.reader((out / "losses.csv").open()))
    assert rows[0] == ["iter", "content", "style", "combined", "phase"]
    assert len(rows) - 1 == 4
    for i, (it, c, s, comb, phase) in enumerate(rows[1:]):
        assert int(it) == i and phase == "joint"
        assert float(comb) == 2 * float(c) + 0.5 * float(s)


def test_alternated_csv_leaves_unevaluated_terms_blank(inputs, tmp_path):
    out = tmp_path / "run"
    assert run_command(argv(inputs, out, "--schedule", "alternated:1:1", "--candidates", "1")) == 0
    rows = list(csv.DictReader((out / "losses.csv").open()))
    assert [r["phase"] for r in rows] == ["content", "style"] * 2
    assert all(r["style"] == "" for r in rows if r["phase"] == "content")
    assert all(float(r["combined"]) == float(r["style"]) for r in rows if r["phase"] == "style")


def test_defaults_recorded_in_config(inputs, tmp_path):
    out = tmp_path / "run"
    assert run_command(argv(inputs, out)) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["lambda_content"] == 1.0 and cfg["lambda_style"] == 1.0
    assert cfg["seed"] == 7 and cfg["num_strokes"] == 6 and cfg["canvas"] == [32, 32]


def test_identical_invocations_byte_identical(inputs, tmp_path):
    for name in ("a", "b"):
        assert run_command(argv(inputs, tmp_path / name)) == 0
    for f in ("drawing.json", "losses.csv", "final.svg", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_config_file_precedence(inputs, tmp_path):
    out = tmp_path / "run"
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"num_strokes": 3, "iterations": 2, "style": str(inputs / "style.png"),
                                "text_embedding": str(inputs / "text.json"), "out": str(out),
                                "canvas": [24, 24], "encoder_size": 32, "candidates": 1}))
    assert run_command(["--config", str(conf), "--strokes", "5"]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert (cfg["num_strokes"], cfg["iterations"], cfg["canvas"]) == (5, 2, [24, 24])
    # the written config reproduces the run
    assert run_command(["--config", str(out / "config.json"), "--out", str(tmp_path / "again")]) == 0
    assert (out / "drawing.json").read_bytes() == (tmp_path / "again" / "drawing.json").read_bytes()


@pytest.mark.parametrize("extra", [
    ["--iters", "abc"],
    ["--schedule", "zigzag"],
    ["--seed", "-3"],
    ["--lambda-content", "0", "--lambda-style", "0"],
    ["--no-such-flag"],
])
def test_usage_errors_exit_2(inputs, tmp_path, extra):
    assert run_command(argv(inputs, tmp_path / "o", *extra)) == 2


def test_missing_required_flag_exit_2(inputs, tmp_path):
    assert run_command(["--style", str(inputs / "style.png"), "--out", str(tmp_path)]) == 2


def test_missing_file_exit_1_names_path(inputs, tmp_path, capsys):
    missing = tmp_path / "nope.png"
    args = argv(inputs, tmp_path / "o")
    args[1] = str(missing)
    assert run_command(args) == 1
    assert str(missing) in capsys.readouterr().err


def test_missing_onnx_model_exit_1(inputs, tmp_path, capsys):
    assert run_command(argv(inputs, tmp_path / "o", "--encoder", f"onnx:{tmp_path}/m.onnx")) == 1
    assert "m.onnx" in capsys.readouterr().err


def test_dimension_mismatch_exit_1(inputs, tmp_path, capsys):
    save_text_embedding(tmp_path / "t.json", [1.0, 2.0, 3.0])
    args = argv(inputs, tmp_path / "o")
    args[3] = str(tmp_path / "t.json")
    assert run_command(args) == 1
    assert "dimension" in capsys.readouterr().err


def test_embed_command(tmp_path):
    encode_png(target_image(32), tmp_path / "t.png")
    assert embed_command([str(tmp_path / "t.png"), "--encoder", "toy", "--encoder-size", "32",
                          "--out", str(tmp_path / "e.json")]) == 0
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["dim"] == 64 and doc["model"] == "toy"
    assert embed_command([str(tmp_path / "missing.png"), "--out", str(tmp_path / "x.json")]) == 1


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "stylestroke.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--style", "--text-embedding", "--encoder", "--out", "--lambda-content", "--lambda-style",
                 "--strokes", "--iters", "--schedule", "--candidates", "--seed", "--n-aug", "--canvas",
                 "--save-every", "--config"):
        assert flag in res.stdout
