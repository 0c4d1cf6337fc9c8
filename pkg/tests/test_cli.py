import csv
import json

import pytest
import torch

from boxguide.cli import main, parse_seeds
from boxguide.imageio import read_ppm
from boxguide.toy_model import DEFAULT_VOCAB, NoiseSchedule, make_manifest, scene_from_spec_line
from boxguide.toy_model.checkpoint import save_checkpoint
from boxguide.toy_model.denoiser import DenoiserConfig, ToyDenoiser

TINY = DenoiserConfig(base=8, embed_dim=8, attn_dim=8, time_dim=16, groups=4)
FAST = ["--total-steps", "4", "--optim-steps", "2", "--max-inner-iters", "2"]


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    model = ToyDenoiser(TINY)
    with torch.no_grad():
        model.conv_out.weight.normal_(std=0.1)
    path = tmp_path_factory.mktemp("ckpt") / "model.npz"
    save_checkpoint(path, model, NoiseSchedule.linear(), DEFAULT_VOCAB)
    return path


@pytest.fixture(scope="module")
def layouts(tmp_path_factory):
    root = tmp_path_factory.mktemp("layouts")
    paths = []
    for i, line in enumerate(make_manifest(3, seed=8)):
        p = root / f"layout_{i}.txt"
        p.write_text(scene_from_spec_line(line).layout.to_text())
        paths.append(p)
    return paths


@pytest.fixture
def manifest(tmp_path):
    p = tmp_path / "manifest.txt"
    p.write_text("\n".join(make_manifest(10, seed=0)) + "\n")
    return p


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_seeds():
    assert parse_seeds("0,2,5-7") == [0, 2, 5, 6, 7]


def test_scenes_writes_layouts(tmp_path):
    assert main(["scenes", "--n", "3", "--layouts", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "manifest.txt").read_text().splitlines()) == 3
    assert len(list((tmp_path / "layouts").iterdir())) == 3


def test_train_smoke(tmp_path, manifest):
    out = tmp_path / "run"
    assert main(["train", "--manifest", str(manifest), "--epochs", "1", "--out", str(out)]) == 0
    assert (out / "model.npz").is_file()
    rows = read_rows(out / "loss.csv")
    assert len(rows) == 1 and list(rows[0]) == ["step", "loss"]


def test_train_missing_manifest(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert main(["train", "--manifest", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_train_same_seed_same_curve(tmp_path, manifest):
    for name in ("a", "b"):
        main(["train", "--manifest", str(manifest), "--epochs", "2", "--batch-size", "4",
              "--log-every", "1", "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "loss.csv").read_text() == (tmp_path / "b" / "loss.csv").read_text()


def test_refuses_overwrite(tmp_path):
    args = ["scenes", "--n", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    assert main(args) == 2
    assert main(args + ["--force"]) == 0


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BOXGUIDE_OUT", str(tmp_path))
    assert main(["scenes", "--n", "2"]) == 0
    assert (tmp_path / "scenes" / "manifest.txt").is_file()


def test_generate_disable_paths_match(tmp_path, checkpoint, layouts):
    base = ["generate", "--checkpoint", str(checkpoint), "--layout", str(layouts[0]), "--seeds", "3", *FAST]
    assert main(base + ["--no-guidance", "--out", str(tmp_path / "off")]) == 0
    assert main(base + ["--eta", "0", "--out", str(tmp_path / "eta0")]) == 0
    assert main(base + ["--eta", "500", "--out", str(tmp_path / "on")]) == 0
    off = (tmp_path / "off" / "seed3.ppm").read_bytes()
    assert (tmp_path / "eta0" / "seed3.ppm").read_bytes() == off
    assert (tmp_path / "on" / "seed3.ppm").read_bytes() != off
    assert not (tmp_path / "off" / "trace_seed3.csv").exists()


def test_generate_ablation_r_trace(tmp_path, checkpoint, layouts):
    out = tmp_path / "r"
    assert main(["generate", "--checkpoint", str(checkpoint), "--layout", str(layouts[0]), "--ablation", "R",
                 "--early-stop-threshold", "0", "--out", str(out), *FAST]) == 0
    rows = read_rows(out / "trace_seed0.csv")
    assert list(rows[0]) == ["step", "iteration", "L_r", "L_m", "L_reg", "L_mac"]
    assert len(rows) == 4
    for row in rows:
        assert float(row["L_mac"]) == float(row["L_r"])
    assert "ablation=r" in (out / "config.txt").read_text()
    assert any(p.name.startswith("attn_t0_p") for p in (out / "attn_seed0").iterdir())


def test_generate_five_seeds(tmp_path, checkpoint, layouts):
    out = tmp_path / "five"
    assert main(["generate", "--checkpoint", str(checkpoint), "--layout", str(layouts[1]), "--seeds", "0-4",
                 "--no-dump", "--png", "--out", str(out), *FAST]) == 0
    assert sorted(p.name for p in out.glob("seed*.ppm")) == [f"seed{i}.ppm" for i in range(5)]
    assert len(list(out.glob("seed*.png"))) == 5
    assert read_ppm(out / "seed0.ppm").shape == (3, 32, 32)


def test_config_precedence(tmp_path, checkpoint, layouts):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("eta=3\nlambda=0.1\n")
    out = tmp_path / "p"
    assert main(["generate", "--checkpoint", str(checkpoint), "--layout", str(layouts[0]), "--config", str(cfg),
                 "--eta", "4", "--no-dump", "--out", str(out), *FAST]) == 0
    text = (out / "config.txt").read_text()
    assert "eta=4.0" in text and "lambda=0.1" in text


def test_generate_bad_inputs(tmp_path, checkpoint, layouts):
    bad = tmp_path / "bad.txt"
    bad.write_text("<sot> one red square\nphrase 9 0 0 1 1\n")
    assert main(["generate", "--checkpoint", str(checkpoint), "--layout", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["generate", "--checkpoint", str(tmp_path / "none.npz"), "--layout", str(layouts[0]),
                 "--out", str(tmp_path)]) == 2
    assert main(["generate", "--checkpoint", str(checkpoint), "--layout", str(layouts[0]), "--eta", "-1",
                 "--out", str(tmp_path)]) == 2


def perfect_detections(tmp_path, layouts):
    from boxguide.layout import load_layout

    path = tmp_path / "dets.csv"
    with open(path, "w") as fh:
        fh.write("image_id,phrase_index,label,x1,y1,x2,y2,color,confidence\n")
        for i, p in enumerate(layouts):
            layout = load_layout(p)
            for idx, boxes in layout.phrases.items():
                color = layout.prompt_tokens[idx - 1]
                for b in boxes:
                    fh.write(f"{i},{idx},{layout.prompt_tokens[idx]},{b.x1},{b.y1},{b.x2},{b.y2},{color},1.0\n")
    return path


def test_eval_perfect_detections(tmp_path, layouts):
    dets = perfect_detections(tmp_path, layouts)
    out = tmp_path / "e"
    assert main(["eval", "--layouts", *map(str, layouts), "--detections", str(dets), "--out", str(out)]) == 0
    report = json.loads((out / "metrics.json").read_text())
    assert report["precision"] == report["recall"] == report["f1"] == report["color_acc"] == 100.0


def test_eval_empty_detections(tmp_path, layouts):
    dets = tmp_path / "empty.csv"
    dets.write_text("image_id,phrase_index,label,x1,y1,x2,y2,color,confidence\n")
    assert main(["eval", "--layouts", *map(str, layouts), "--detections", str(dets), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["precision"] == report["recall"] == report["f1"] == 0.0
    assert report["flags"]


def test_eval_twice_identical(tmp_path, layouts):
    dets = perfect_detections(tmp_path, layouts)
    for name in ("a", "b"):
        main(["eval", "--layouts", *map(str, layouts), "--detections", str(dets), "--out", str(tmp_path / name)])
    for f in ("metrics.json", "metrics.csv"):
        assert (tmp_path / "a" / f).read_text() == (tmp_path / "b" / f).read_text()


def test_eval_images_count_mismatch(tmp_path, layouts, checkpoint):
    main(["generate", "--checkpoint", str(checkpoint), "--layout", str(layouts[0]), "--no-guidance",
          "--out", str(tmp_path / "g"), *FAST])
    img = str(tmp_path / "g" / "seed0.ppm")
    assert main(["eval", "--layouts", *map(str, layouts), "--images", img, "--out", str(tmp_path / "e")]) == 2
    assert main(["eval", "--layouts", str(layouts[0]), "--images", img, "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "detections.csv").is_file()


def test_ablate_table(tmp_path, checkpoint, layouts):
    out = tmp_path / "ab"
    assert main(["ablate", "--checkpoint", str(checkpoint), "--layouts", *map(str, layouts[:2]),
                 "--seeds", "0", "--out", str(out), *FAST]) == 0
    modes = [r["mode"] for r in read_rows(out / "ablation.csv")]
    assert modes == ["unguided", "R", "R+M", "R+M+Reg"]
    assert set(json.loads((out / "ablation.json").read_text())) == set(modes)


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "boxguide", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "generate" in res.stdout
