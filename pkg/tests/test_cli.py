import csv
import json

import numpy as np
import pytest
from PIL import Image

from mesa.cli import main
from mesa.damage import render_inscription
from mesa.image_core import load_image, save_image, save_mask
from mesa.weights import write_box_table


@pytest.fixture
def work(tmp_path):
    img = render_inscription((32, 32), seed=0)
    mask = np.zeros((32, 32), bool)
    mask[8:20, 10:22] = True
    damaged = img.copy()
    damaged[mask] = 0.5
    save_image(tmp_path / "clean.png", img)
    save_image(tmp_path / "in.png", damaged)
    save_mask(tmp_path / "mask.png", mask)
    ex = tmp_path / "ex"
    ex.mkdir()
    save_image(ex / "e0.png", render_inscription((40, 40), seed=1))
    save_image(ex / "e1.png", render_inscription((36, 36), seed=2))
    return tmp_path


def restore_args(w, *extra):
    return ["restore", "--input", str(w / "in.png"), "--mask", str(w / "mask.png"),
            "--exemplars", str(w / "ex"), "--out", str(w / "out"), "--max-iters", "3", *extra]


def test_restore_writes_artifacts(work, capsys):
    rc = main(restore_args(work, "--reference", str(work / "clean.png"), "--save-progress", "--log-every", "2"))
    assert rc == 0
    out = work / "out"
    for name in ("restored.png", "loss_trace.jsonl", "loss_report.json", "weights.json",
                 "loss_trace.png", "manifest.json", "timings.json"):
        assert (out / name).is_file(), name
    assert list((out / "progress").glob("iter_*.png"))
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["result"]["stop_reason"] in ("max_iter", "converged", "line_search_failure")
    assert manifest["inputs"]["masked_pixels"] == 144
    assert "psnr" in manifest["metrics"]
    lines = (out / "loss_trace.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["iteration"] == 0
    restored, damaged = load_image(out / "restored.png"), load_image(work / "in.png")
    mask = np.zeros((32, 32), bool)
    mask[8:20, 10:22] = True
    assert np.array_equal(restored[~mask], damaged[~mask])


def test_restore_manifest_is_deterministic(work):
    assert main(restore_args(work)) == 0
    first = (work / "out" / "manifest.json").read_bytes()
    assert main(restore_args(work)) == 0
    assert (work / "out" / "manifest.json").read_bytes() == first


def test_missing_flag_exits_2_naming_it(work, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["restore", "--input", str(work / "in.png"), "--exemplars", str(work / "ex"), "--out", str(work / "o")])
    assert exc.value.code == 2
    assert "--mask" in capsys.readouterr().err


def test_missing_file_exits_2(work, capsys):
    rc = main(["restore", "--input", str(work / "nope.png"), "--mask", str(work / "mask.png"),
               "--exemplars", str(work / "ex"), "--out", str(work / "o")])
    assert rc == 2 and "--input" in capsys.readouterr().err


def test_mask_size_mismatch_exits_2(work, capsys):
    save_mask(work / "small.png", np.ones((10, 10), bool))
    rc = main(["restore", "--input", str(work / "in.png"), "--mask", str(work / "small.png"),
               "--exemplars", str(work / "ex"), "--out", str(work / "o")])
    assert rc == 2 and "--mask" in capsys.readouterr().err


def test_weights_file_must_sum_to_one(work, capsys):
    (work / "w.json").write_text(json.dumps({"layer1": 0.3, "AvgPool1": 0.3}))
    assert main(restore_args(work, "--weights-file", str(work / "w.json"))) == 2
    assert "--weights-file" in capsys.readouterr().err
    (work / "w.json").write_text(json.dumps({"layer1": 0.5, "AvgPool1": 0.5}))
    assert main(restore_args(work, "--weights-file", str(work / "w.json"))) == 0
    manifest = json.loads((work / "out" / "manifest.json").read_text())
    assert manifest["config"]["layers"] == ["layer1", "AvgPool1"]


def _boxes(path, widths):
    write_box_table(path, [{"image_id": "i", "box_id": str(k), "left": 0, "top": 0,
                            "width": f"{w:.3f}", "height": 20, "text": "AB"} for k, w in enumerate(widths)])


def test_weights_command_small_sample_falls_back(work, capsys):
    _boxes(work / "b.tsv", [30, 40, 50])
    assert main(["weights", "--boxes", str(work / "b.tsv"), "--out", str(work / "w")]) == 0
    err = capsys.readouterr().err
    assert "uniform" in err
    doc = json.loads((work / "w" / "weights.json").read_text())
    assert doc["distribution"] is None and doc["weighting"]["scheme"] == "uniform"


def test_weights_command_sigma_intervals(work):
    _boxes(work / "b.tsv", np.random.default_rng(0).normal(36, 6, 40))
    assert main(["weights", "--boxes", str(work / "b.tsv"), "--scheme", "sigma-intervals", "--out", str(work / "w")]) == 0
    doc = json.loads((work / "w" / "weights.json").read_text())
    assert doc["weighting"]["scheme"] == "sigma-intervals"
    assert abs(sum(r["normalized"] for r in doc["weighting"]["layers"]) - 1) <= 1e-9
    for png in ("width_distribution.png", "layer_weights.png"):
        with Image.open(work / "w" / png) as im:
            assert im.format == "PNG"


def test_eval_text(work, capsys):
    (work / "o.txt").write_text("HELLO WORLD\n", encoding="utf-8")
    (work / "r.txt").write_text("HELLO\n", encoding="utf-8")
    assert main(["eval-text", "--original", str(work / "o.txt"), "--recovered", str(work / "r.txt")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["ld"] == 6 and doc["trs"] == pytest.approx(0.94)
    assert main(["eval-text", "--original", str(work / "o.txt"), "--recovered", str(work / "r.txt"), "--s", "0"]) == 2


def test_eval_image(work, capsys):
    assert main(["eval-image", "--ref", str(work / "clean.png"), "--test", str(work / "clean.png")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == {"psnr": "inf", "ssim": 1.0, "perceptual_status": "unavailable"}


def test_eval_table_and_average(work):
    save_image(work / "t2.png", np.clip(load_image(work / "clean.png") + 0.1, 0, 1))
    (work / "a.txt").write_text("CAT", encoding="utf-8")
    (work / "b.txt").write_text("CUT", encoding="utf-8")
    rc = main(["eval", "--ref", str(work / "clean.png"), str(work / "clean.png"),
               "--test", str(work / "in.png"), str(work / "t2.png"),
               "--ref-text", str(work / "a.txt"), str(work / "a.txt"),
               "--test-text", str(work / "b.txt"), str(work / "a.txt"), "--out", str(work / "ev")])
    assert rc == 0
    raw = (work / "ev" / "metrics.csv").read_bytes()
    assert b"\r\n" in raw
    with open(work / "ev" / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["id"] for r in rows] == ["in", "t2", "average"]
    assert float(rows[2]["psnr"]) == pytest.approx((float(rows[0]["psnr"]) + float(rows[1]["psnr"])) / 2)
    assert float(rows[2]["ld"]) == 0.5
    doc = json.loads((work / "ev" / "metrics.json").read_text())
    assert doc["average"]["trs"] == pytest.approx(0.995)
    assert (work / "ev" / "psnr.png").is_file()


def test_damage_command(work):
    src = work / "cl"
    src.mkdir()
    for i in range(3):
        save_image(src / f"c{i}.png", render_inscription((40, 40), seed=i))
    args = ["damage", "--in", str(src), "--kind", "scratch", "--seed", "5", "--variants", "2"]
    assert main(args + ["--out", str(work / "d1")]) == 0
    assert main(args + ["--out", str(work / "d2")]) == 0
    m1 = (work / "d1" / "manifest.json").read_bytes()
    assert m1 == (work / "d2" / "manifest.json").read_bytes()
    assert len(json.loads(m1)["pairs"]) == 6
    assert main(["damage", "--in", str(work / "none"), "--out", str(work / "d3"), "--kind", "noise", "--seed", "1"]) == 2


def test_eval_from_damage_manifest(work):
    src = work / "cl"
    src.mkdir()
    save_image(src / "c0.png", render_inscription((40, 40), seed=0))
    assert main(["damage", "--in", str(src), "--out", str(work / "d"), "--kind", "noise", "--seed", "1"]) == 0
    assert main(["eval", "--manifest", str(work / "d" / "manifest.json"), "--out", str(work / "ev")]) == 0
    doc = json.loads((work / "ev" / "metrics.json").read_text())
    assert len(doc["pairs"]) == 1 and doc["pairs"][0]["ld"] is None


def test_ablate_grid_and_contact_sheet(work):
    rc = main(["ablate", "--input", str(work / "in.png"), "--mask", str(work / "mask.png"),
               "--exemplars", str(work / "ex"), "--out", str(work / "ab"), "--aggs", "min,avg",
               "--layer-counts", "2,3", "--inits", "input", "--max-iters", "2", "--tile", "64", "--jobs", "2"])
    assert rc == 0
    with open(work / "ab" / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {(r["aggregation"], r["n_layers"]) for r in rows} == {("min", "2"), ("min", "3"), ("average", "2"), ("average", "3")}
    with Image.open(work / "ab" / "contact_sheet.png") as im:
        assert im.size == (128, 128)
    assert len(list((work / "ab").glob("cell_*.png"))) == 4


def test_ablate_budget(work, capsys):
    rc = main(["ablate", "--input", str(work / "in.png"), "--mask", str(work / "mask.png"),
               "--exemplars", str(work / "ex"), "--out", str(work / "ab"), "--budget", "3"])
    assert rc == 2 and "--budget" in capsys.readouterr().err


def test_ablate_with_weights_file_renormalizes_subsets(work):
    (work / "w.json").write_text(json.dumps({"layer1": 0.1, "AvgPool1": 0.2, "AvgPool2": 0.3, "AvgPool3": 0.4}))
    rc = main(["ablate", "--input", str(work / "in.png"), "--mask", str(work / "mask.png"),
               "--exemplars", str(work / "ex"), "--out", str(work / "ab"), "--aggs", "min",
               "--layer-counts", "2", "--inits", "input", "--max-iters", "1",
               "--weights-file", str(work / "w.json")])
    assert rc == 0
