import csv

import numpy as np
import pytest

from nestseg import harness
from nestseg.config import parse_config_text
from nestseg.data import generate_dataset, validate_nesting
from nestseg.harness import (
    check_report_consistency,
    learning_rate,
    load_model,
    run_benchmark,
    run_predict,
    run_train,
    train_model,
    with_seed,
)
from nestseg.pgm import read_pgm, write_pgm

from conftest import TINY


def test_warmup_schedule(tiny_cfg):
    cfg = parse_config_text(TINY.format(loss="mce") + "warmup = 4\nlearning_rate = 0.01\n")
    assert [learning_rate(cfg, it) for it in (1, 2, 4, 100)] == [0.0025, 0.005, 0.01, 0.01]
    cfg0 = parse_config_text(TINY.format(loss="mce") + "warmup = 0\n")
    assert learning_rate(cfg0, 1) == cfg0.learning_rate


def test_with_seed_reseeds_everything(tiny_cfg):
    cfg = with_seed(tiny_cfg, 5)
    assert cfg.master_seed == cfg.scene.seed == cfg.network.seed == 5


def test_train_records_curve(tiny_cfg):
    samples = generate_dataset(tiny_cfg.scene, 4)
    res = train_model(tiny_cfg, "sse", samples[:3], samples[3:], seed=1)
    assert res.eval_iterations == [10, 20]
    assert all(len(d) == 1 and 0.0 <= d[0] <= 1.0 for d in res.eval_dice)
    again = train_model(tiny_cfg, "sse", samples[:3], samples[3:], seed=1)
    assert all(np.array_equal(a.values, b.values) for (_, a), (_, b) in zip(res.net.params, again.net.params))


def test_weighted_method_uses_class_weights(tiny_cfg):
    samples = generate_dataset(tiny_cfg.scene, 3)
    res = train_model(tiny_cfg, "mce", samples, seed=0)
    assert res.weights is not None and res.weights[2] > res.weights[1] > res.weights[0]
    assert train_model(tiny_cfg, "mce-unweighted", samples, seed=0).weights is None


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    cfg = parse_config_text(TINY.format(loss="mce"))
    out = tmp_path_factory.mktemp("bench")
    report = run_benchmark(cfg, out)
    return cfg, out, report


def test_benchmark_outputs(bench_dir):
    cfg, out, report = bench_dir
    for name in ("report.csv", "curves.csv", "summary.csv", "wilcoxon.csv", "convergence.png", "test_dice.png"):
        assert (out / name).exists(), name
    assert not (out / "report.partial.csv").exists()
    rows = read(out / "report.csv")
    methods = {r["method"] for r in rows}
    assert methods == {"softmax-ce", "mce", "mce@preset"}
    # one row per (triple, method, class)
    assert len(rows) == 8 * 3 * 3
    assert all(r["theta2"] == "" for r in rows if r["method"] == "softmax-ce")
    assert all(float(r["theta2"]) == pytest.approx(4 / 3) for r in rows if r["method"] == "mce@preset")
    assert all(1.0 < float(r["theta2"]) < 2.0 for r in rows if r["method"] == "mce")
    check_report_consistency(out)


def test_summary_means_match_rows(bench_dir):
    cfg, out, report = bench_dir
    for s in report.summary:
        d = report.test_dice(s["method"], s["class"])
        assert s["mean_dice"] == pytest.approx(float(np.mean(d)), abs=1e-12)
        assert s["n"] == 8


def test_consistency_check_catches_tampering(bench_dir, tmp_path):
    cfg, out, report = bench_dir
    for name in ("report.csv", "summary.csv"):
        (tmp_path / name).write_text((out / name).read_text())
    rows = read(tmp_path / "summary.csv")
    rows[0]["mean_dice"] = "0.123"
    with open(tmp_path / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    with pytest.raises(RuntimeError, match="disagrees"):
        check_report_consistency(tmp_path)


def test_benchmark_is_deterministic(bench_dir, tmp_path):
    cfg, out, report = bench_dir
    run_benchmark(cfg, tmp_path)
    for name in ("report.csv", "curves.csv", "summary.csv", "wilcoxon.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


def test_iterations_to_threshold(bench_dir):
    cfg, out, report = bench_dir
    its, curve = report.mean_curve("mce")
    assert its == [10, 20]
    hit = report.iterations_to("mce", level=-1.0)
    assert hit == 10
    assert report.iterations_to("mce", level=2.0) is None


def test_train_then_predict(tmp_path, tiny_cfg):
    run_train(tiny_cfg, tmp_path / "run")
    assert (tmp_path / "run" / "model.nseg").exists() and (tmp_path / "run" / "model.cfg").exists()
    net, cfg = load_model(tmp_path / "run" / "model.nseg")
    assert cfg.network == net.cfg and cfg.loss == "mce"
    img = generate_dataset(tiny_cfg.scene, 1)[0].image[0]
    write_pgm(tmp_path / "img.pgm", np.rint(img * 65535).astype(np.uint16), maxval=65535)
    labels, counts, viol = run_predict(tmp_path / "run" / "model.nseg", tmp_path / "img.pgm", tmp_path / "pred")
    back, maxval = read_pgm(tmp_path / "pred" / "img_label.pgm")
    assert maxval == 255 and np.array_equal(back, labels)
    act, amax = read_pgm(tmp_path / "pred" / "img_activation.pgm")
    assert amax == 65535 and act.shape == (32, 32)
    assert counts.sum() == 32 * 32 and viol == validate_nesting(labels)
    # default thresholds for MCE are (0.5, 4/3)
    same, _, _ = run_predict(tmp_path / "run" / "model.nseg", tmp_path / "img.pgm", tmp_path / "p2", thresholds=(0.5, 4 / 3))
    assert np.array_equal(same, labels)


def test_predict_errors(tmp_path, tiny_cfg):
    run_train(tiny_cfg, tmp_path)
    write_pgm(tmp_path / "odd.pgm", np.zeros((31, 32), dtype=np.uint8))
    with pytest.raises(ValueError, match="divisible"):
        run_predict(tmp_path / "model.nseg", tmp_path / "odd.pgm", tmp_path)
    with pytest.raises(FileNotFoundError):
        run_predict(tmp_path / "missing.nseg", tmp_path / "odd.pgm", tmp_path)
    (tmp_path / "model.cfg").unlink()
    with pytest.raises(FileNotFoundError, match="sidecar"):
        load_model(tmp_path / "model.nseg")


def test_export_dataset(tmp_path, tiny_cfg):
    samples = harness.export_dataset(tiny_cfg, tmp_path)
    lab, lmax = read_pgm(tmp_path / "label_003.pgm")
    img, imax = read_pgm(tmp_path / "image_003.pgm")
    assert lmax == 255 and np.array_equal(lab, samples[3].label)
    assert imax == 65535 and np.array_equal(img, np.rint(samples[3].image[0] * 65535).astype(np.uint16))
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "image_007.pgm label_007.pgm" in manifest and "noise_sigma" in manifest
