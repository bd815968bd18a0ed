import json
import os
import shutil
import subprocess

import numpy as np
from PIL import Image

from embdistill.cli import main
from embdistill.rng import make_rng
from embdistill.store import read_embedding_set


def write_csv(path, data, labels=None, bag_ids=None, centers=None, tissues=None):
    n, d = data.shape
    header = "sample_id,bag_id,label,center_id,tissue_class," + ",".join(f"v{j}" for j in range(d))
    lines = [header]
    for i in range(n):
        label = "" if labels is None else str(labels[i])
        bag = f"bag{i:04d}" if bag_ids is None else bag_ids[i]
        center = "" if centers is None else centers[i]
        tissue = "" if tissues is None else str(tissues[i])
        values = ",".join(repr(float(v)) for v in data[i])
        lines.append(f"s{i:04d},{bag},{label},{center},{tissue},{values}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def blob_csv(path, n=40, d=4, seed=300):
    rng = make_rng(seed)
    half = n // 2
    data = np.vstack(
        [rng.normal(size=(half, d)) + 10.0, rng.normal(size=(n - half, d)) - 10.0]
    )
    labels = [0] * half + [1] * (n - half)
    write_csv(path, data, labels=labels)


def ingest(tmp_path, csv_name, set_name, n=40, seed=300):
    csv_path = tmp_path / csv_name
    set_dir = tmp_path / set_name
    blob_csv(csv_path, n=n, seed=seed)
    rc = main(["ingest", "--csv", str(csv_path), "--out", str(set_dir), "--class-names", "neg,pos"])
    assert rc == 0
    return set_dir


# ---------------------------------------------------------------------------
# exit codes and argument handling


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "ingest" in capsys.readouterr().out


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "embdistill" in capsys.readouterr().out


def test_unknown_flag_exits_one(capsys):
    assert main(["eval-knn", "--bogus", "1"]) == 1
    capsys.readouterr()


def test_missing_input_exits_two(tmp_path, capsys):
    missing = tmp_path / "does-not-exist"
    rc = main(["eval-knn", "--set", str(missing), "--out", str(tmp_path / "r.json")])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_required_setting_exits_one(capsys):
    rc = main(["eval-knn", "--out", "r.json"])
    assert rc == 1
    assert "--set" in capsys.readouterr().err


def test_unknown_config_key_exits_one(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus_key": 1}))
    rc = main(["eval-knn", "--config", str(cfg), "--set", "x", "--out", "y"])
    assert rc == 1
    assert "bogus_key" in capsys.readouterr().err


def test_malformed_config_exits_one(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    rc = main(["eval-knn", "--config", str(cfg), "--set", "x", "--out", "y"])
    assert rc == 1
    capsys.readouterr()


def test_invalid_value_exits_one(tmp_path, capsys):
    set_dir = ingest(tmp_path, "a.csv", "set")
    rc = main(["eval-knn", "--set", str(set_dir), "--out", str(tmp_path / "r.json"), "--train-fraction", "1.5"])
    assert rc == 1
    capsys.readouterr()


def test_overflow_exits_three(tmp_path, capsys):
    # residuals near 1e38 raised to the 10th power overflow float64
    rng = make_rng(301)
    csv_s = tmp_path / "s.csv"
    csv_t = tmp_path / "t.csv"
    write_csv(csv_s, rng.normal(size=(8, 3)))
    write_csv(csv_t, np.full((8, 3), 1e38))
    assert main(["ingest", "--csv", str(csv_s), "--out", str(tmp_path / "s")]) == 0
    assert main(["ingest", "--csv", str(csv_t), "--out", str(tmp_path / "t")]) == 0
    rc = main(
        [
            "distill",
            "--student", str(tmp_path / "s"),
            "--teacher", str(tmp_path / "t"),
            "--out", str(tmp_path / "d"),
            "--alpha", "10",
            "--total-steps", "5",
            "--batch-size", "8",
        ]
    )
    assert rc == 3
    assert "numerical" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# happy paths


def test_ingest_then_eval_knn(tmp_path, capsys):
    set_dir = ingest(tmp_path, "a.csv", "set")
    es = read_embedding_set(set_dir)
    assert es.n == 40 and es.d == 4 and es.class_names == ["neg", "pos"]

    report_path = tmp_path / "knn.json"
    rc = main(["eval-knn", "--set", str(set_dir), "--out", str(report_path), "--k", "5", "--n-repeats", "4"])
    assert rc == 0
    report = json.loads(report_path.read_text())
    assert report["mean"] == 1.0  # well-separated blobs
    assert report["config"]["k"] == 5
    assert len(report["per_repeat_accuracy"]) == 4
    capsys.readouterr()


def test_config_file_precedence(tmp_path, capsys):
    set_dir = ingest(tmp_path, "a.csv", "set")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 1, "n_repeats": 2}))
    report_path = tmp_path / "knn.json"
    rc = main(
        ["eval-knn", "--set", str(set_dir), "--out", str(report_path), "--config", str(cfg), "--n-repeats", "3"]
    )
    assert rc == 0
    report = json.loads(report_path.read_text())
    assert report["config"]["k"] == 1  # from the file
    assert report["config"]["n_repeats"] == 3  # flag wins over the file
    assert report["config"]["train_fraction"] == 0.8  # untouched default
    capsys.readouterr()


def test_report_doubles_as_config(tmp_path, capsys):
    # a report written by one run can seed the next via its "config" block
    set_dir = ingest(tmp_path, "a.csv", "set")
    first = tmp_path / "knn1.json"
    assert main(["eval-knn", "--set", str(set_dir), "--out", str(first), "--k", "3", "--n-repeats", "2"]) == 0
    second = tmp_path / "knn2.json"
    rc = main(["eval-knn", "--config", str(first), "--out", str(second)])
    assert rc == 0
    a = json.loads(first.read_text())
    b = json.loads(second.read_text())
    assert b["config"]["k"] == 3
    assert a["per_repeat_accuracy"] == b["per_repeat_accuracy"]
    capsys.readouterr()


def test_tile_names_and_coords(tmp_path, capsys):
    img = np.zeros((512, 512, 3), dtype=np.uint8)
    img[:] = (200, 40, 40)
    img_path = tmp_path / "slide.png"
    Image.fromarray(img).save(img_path)
    out = tmp_path / "tiles"
    rc = main(["tile", "--image", str(img_path), "--out", str(out), "--tile", "256"])
    assert rc == 0
    names = sorted(p.name for p in out.glob("*.png"))
    assert names == [
        "000_slide_x0_y0.png",
        "000_slide_x0_y256.png",
        "000_slide_x256_y0.png",
        "000_slide_x256_y256.png",
    ]
    with Image.open(out / "000_slide_x256_y0.png") as im:
        back = np.asarray(im)
    assert np.array_equal(back, img[0:256, 256:512])
    coords = json.loads((out / "coords.json").read_text())
    assert {(p["x"], p["y"]) for p in coords["patches"]} == {(0, 0), (256, 0), (0, 256), (256, 256)}
    assert coords["augmented"] is False
    capsys.readouterr()


def test_tile_augmented_crops(tmp_path, capsys):
    rng = make_rng(302)
    img = rng.integers(0, 256, size=(256, 256, 3)).astype(np.uint8)
    img[..., 0] = 220  # keep saturation high enough to pass the foreground test
    img_path = tmp_path / "slide.png"
    Image.fromarray(img).save(img_path)
    out = tmp_path / "tiles"
    rc = main(
        ["tile", "--image", str(img_path), "--out", str(out), "--tile", "256", "--crop", "128", "--augment", "--seed", "5"]
    )
    assert rc == 0
    (patch,) = list(out.glob("*.png"))
    with Image.open(patch) as im:
        assert im.size == (128, 128)
    capsys.readouterr()


def test_distill_outputs_and_rerun_identical(tmp_path, capsys):
    student_dir = ingest(tmp_path, "s.csv", "student", seed=303)
    teacher_dir = ingest(tmp_path, "t.csv", "teacher", seed=304)
    out = tmp_path / "distilled"
    proj = tmp_path / "projected"
    argv = [
        "distill",
        "--student", str(student_dir),
        "--teacher", str(teacher_dir),
        "--out", str(out),
        "--emit-projected", str(proj),
        "--total-steps", "40",
        "--batch-size", "16",
        "--seed", "11",
    ]
    assert main(argv) == 0
    for name in ("head.json", "student.json", "trace.jsonl", "report.json", "run.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["steps"] == 40 and report["n_pairs"] == 40

    first = {p.name: p.read_bytes() for p in out.iterdir()}
    first_proj = {p.name: p.read_bytes() for p in proj.iterdir()}
    assert main(argv) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    second_proj = {p.name: p.read_bytes() for p in proj.iterdir()}

    assert first_proj == second_proj
    assert set(first) == set(second)
    for name in first:
        if name == "run.json":
            a = json.loads(first[name]); b = json.loads(second[name])
            a.pop("duration_seconds"); b.pop("duration_seconds")
            assert a == b
        else:
            assert first[name] == second[name], name
    capsys.readouterr()


def test_manifest_checksum_chain(tmp_path, capsys):
    student_dir = ingest(tmp_path, "s.csv", "student", seed=305)
    teacher_dir = ingest(tmp_path, "t.csv", "teacher", seed=306)
    out = tmp_path / "distilled"
    proj = tmp_path / "projected"
    assert main(
        [
            "distill",
            "--student", str(student_dir),
            "--teacher", str(teacher_dir),
            "--out", str(out),
            "--emit-projected", str(proj),
            "--total-steps", "30",
            "--batch-size", "16",
        ]
    ) == 0
    cka_out = tmp_path / "cka.json"
    assert main(["cka", "--first", str(proj), "--second", str(teacher_dir), "--out", str(cka_out)]) == 0

    ingest_manifest = json.loads((student_dir / "run.json").read_text())
    distill_manifest = json.loads((out / "run.json").read_text())
    cka_manifest = json.loads((tmp_path / "run.json").read_text())

    # each stage's recorded output checksum matches the next stage's input checksum
    assert (
        ingest_manifest["output_checksums"][str(student_dir / "emb.bin")]
        == distill_manifest["input_checksums"][str(student_dir)]
    )
    assert (
        distill_manifest["output_checksums"][str(proj / "emb.bin")]
        == cka_manifest["input_checksums"][str(proj)]
    )
    cka_report = json.loads(cka_out.read_text())
    assert 0.0 <= cka_report["mean"] <= 1.0
    capsys.readouterr()


def test_robustness_report_serializes_infinity(tmp_path, capsys):
    # every sample in its own center: no neighbor can share one
    rng = make_rng(307)
    data = rng.normal(size=(8, 3))
    csv_path = tmp_path / "r.csv"
    write_csv(
        csv_path,
        data,
        labels=[0] * 8,
        centers=[f"c{i}" for i in range(8)],
        tissues=[0, 0, 0, 0, 1, 1, 1, 1],
    )
    set_dir = tmp_path / "set"
    assert main(["ingest", "--csv", str(csv_path), "--out", str(set_dir)]) == 0
    report_path = tmp_path / "rob.json"
    rc = main(
        [
            "robustness",
            "--set", str(set_dir),
            "--out", str(report_path),
            "--per-class", "3",
            "--k-neighbors", "2",
            "--n-folds", "2",
        ]
    )
    assert rc == 0
    report = json.loads(report_path.read_text())
    assert report["mean"] == "Infinity"
    assert all(v == "Infinity" for v in report["per_fold_index"])
    capsys.readouterr()


def test_console_script_installed():
    exe = shutil.which("embdistill")
    assert exe, "console script not on PATH"
    proc = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "embdistill" in proc.stdout
