"""Training loop, cross-validated benchmark and prediction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .activation import activation_array, preset_thresholds
from .config import METHODS, dump_config, parse_config
from .data import augment, derive_seed, generate_dataset, make_folds, validate_nesting
from .errors import ConfigError
from .losses import class_weights, compute_loss
from .metrics import (
    REPORT_HEADER,
    baseline_predict,
    dice,
    sweep_thresholds,
    threshold_map,
    wilcoxon_signed_rank,
    write_report_csv,
)
from .optim import adam_step, load_checkpoint, save_checkpoint
from .pgm import read_pgm, write_pgm
from .segnet import SegNet

log = logging.getLogger(__name__)

BASELINE = "softmax-ce"
CONVERGENCE_DICE = 0.8
PRESET_SUFFIX = "@preset"


def with_seed(cfg, seed):
    return replace(
        cfg,
        master_seed=seed,
        scene=replace(cfg.scene, seed=seed),
        network=replace(cfg.network, seed=seed),
    )


def method_for_loss(cfg):
    if cfg.loss == "mce":
        return "mce" if cfg.mce_weighting else "mce-unweighted"
    return cfg.loss


def is_multilevel(method):
    return METHODS[method][0] != "softmax-ce"


def method_thresholds(cfg, method):
    return preset_thresholds(METHODS[method][0], cfg.m)


@dataclass
class TrainResult:
    net: SegNet
    method: str
    eval_iterations: list = field(default_factory=list)
    # per evaluation step: innermost-class Dice of each eval image
    eval_dice: list = field(default_factory=list)
    weights: np.ndarray | None = None


def _stack(samples):
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.label for s in samples]).astype(np.int64)
    return images, labels


def raw_outputs(net, images):
    """Forward pass returning the raw map as a numpy array."""
    return net.forward(T.Tensor(images)).values


def output_to_labels(cfg, method, out, thresholds=None):
    if is_multilevel(method):
        a = activation_array(out[:, 0], cfg.activation)
        return threshold_map(a, thresholds or method_thresholds(cfg, method))
    return baseline_predict(out)


def learning_rate(cfg, it):
    """Linear warmup to ``cfg.learning_rate`` over ``cfg.warmup`` steps, then constant."""
    if cfg.warmup and it < cfg.warmup:
        return cfg.learning_rate * it / cfg.warmup
    return cfg.learning_rate


def train_model(cfg, method, train_samples, eval_samples=(), seed=0):
    """Train one network with online augmentation.

    Every ``eval_every`` steps the innermost-class Dice of each eval sample is
    recorded using the preset thresholds.
    """
    loss_name, weighted = METHODS[method]
    net = SegNet(replace(cfg.method_network(method), seed=derive_seed(seed, 0)))
    weights = class_weights([s.label for s in train_samples], cfg.m) if weighted else None
    result = TrainResult(net, method, weights=weights)
    rng = np.random.default_rng(derive_seed(seed, 1))
    eval_images, eval_labels = _stack(eval_samples) if eval_samples else (None, None)
    m = cfg.m
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(len(train_samples), size=cfg.batch_size)
        aug_seeds = rng.integers(2**63 - 1, size=cfg.batch_size)
        batch = [augment(train_samples[i], int(s), cfg.augment) for i, s in zip(idx, aug_seeds)]
        images, labels = _stack(batch)
        loss = compute_loss(loss_name, net.forward(T.Tensor(images)), labels, cfg.activation, weights)
        loss.backward()
        adam_step(net.params, lr=learning_rate(cfg, it))
        if it % cfg.eval_every == 0 and eval_images is not None:
            pred = output_to_labels(cfg, method, raw_outputs(net, eval_images))
            result.eval_iterations.append(it)
            result.eval_dice.append([dice(p, g, m) for p, g in zip(pred, eval_labels)])
            log.debug("%s it=%d loss=%.5f val_dice=%.4f", method, it, loss.item(), np.mean(result.eval_dice[-1]))
    return result


# -- benchmark ---------------------------------------------------------------


@dataclass
class ExperimentReport:
    rows: list  # dicts keyed by REPORT_HEADER
    curves: list  # (triple, method, iteration, val_dice)
    summary: list
    wilcoxon: list
    m: int = 2

    def methods(self):
        return sorted({r["method"] for r in self.rows})

    def test_dice(self, method, c=None):
        c = self.m if c is None else c
        rows = sorted((r for r in self.rows if r["method"] == method and r["class"] == c), key=lambda r: r["fold"])
        return np.array([r["dice"] for r in rows])

    def violations(self, method):
        rows = sorted((r for r in self.rows if r["method"] == method and r["class"] == self.m), key=lambda r: r["fold"])
        return np.array([r["violations"] for r in rows])

    def mean_curve(self, method):
        its = sorted({it for _, meth, it, _ in self.curves if meth == method})
        return its, [float(np.mean([d for _, meth, i, d in self.curves if meth == method and i == it])) for it in its]

    def iterations_to(self, method, level=CONVERGENCE_DICE):
        """First evaluated iteration where the mean validation curve reaches ``level``; None if never."""
        for it, d in zip(*self.mean_curve(method)):
            if d >= level:
                return it
        return None


def _summarise(rows, m):
    out = []
    for method in sorted({r["method"] for r in rows}):
        for c in range(m + 1):
            sel = [r for r in rows if r["method"] == method and r["class"] == c]
            d = np.array([r["dice"] for r in sel])
            th = [r["theta2"] for r in sel if r["theta2"] is not None]
            out.append({
                "method": method,
                "class": c,
                "n": len(sel),
                "mean_dice": float(d.mean()),
                "sd_dice": float(d.std(ddof=1)) if len(d) > 1 else 0.0,
                "mean_theta2": float(np.mean(th)) if th else None,
                "mean_violations": float(np.mean([r["violations"] for r in sel])),
            })
    return out


def _wilcoxon_rows(rows, m):
    out = []
    base = sorted((r for r in rows if r["method"] == BASELINE and r["class"] == m), key=lambda r: r["fold"])
    if not base:
        return out
    for method in sorted({r["method"] for r in rows} - {BASELINE}):
        other = sorted((r for r in rows if r["method"] == method and r["class"] == m), key=lambda r: r["fold"])
        x = [r["dice"] for r in other]
        y = [r["dice"] for r in base]
        try:
            res = wilcoxon_signed_rank(x, y)
            stat, p, n = res.statistic, res.pvalue, res.n
        except ValueError:
            stat, p, n = None, None, sum(a != b for a, b in zip(x, y))
        out.append({"method": method, "baseline": BASELINE, "statistic": stat, "pvalue": p, "n": n,
                    "mean_diff": float(np.mean(np.subtract(x, y)))})
    return out


def run_benchmark(cfg, out_dir=None, progress=None):
    """Cross-validated comparison of every method in ``cfg.methods``.

    Triples of the same fold share their training set, so one network per
    (fold, method) is trained and then evaluated for each of the fold's
    triples; the curve of a triple is the mean over its validation images.
    """
    m = cfg.m
    samples = generate_dataset(cfg.scene, cfg.n_images, base_seed=cfg.master_seed)
    triples = make_folds(cfg.n_images, cfg.k_folds, seed=cfg.master_seed)
    triple_ids = {t: i for i, t in enumerate(triples)}
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        partial = out_dir / "report.partial.csv"
        partial.write_text(",".join(REPORT_HEADER) + "\n")
    rows, curves = [], []
    grid = cfg.grid()
    for fold in range(cfg.k_folds):
        fold_triples = [t for t in triples if t.fold == fold]
        members = sorted(t.test for t in fold_triples)
        pos = {img: j for j, img in enumerate(members)}
        train = [samples[i] for i in fold_triples[0].train]
        evals = [samples[i] for i in members]
        eval_images, eval_labels = _stack(evals)
        for method in cfg.methods:
            res = train_model(cfg, method, train, evals, seed=derive_seed(cfg.master_seed, fold))
            out = raw_outputs(res.net, eval_images)
            new_rows = []
            for t in fold_triples:
                tid = triple_ids[t]
                vpos = [pos[i] for i in t.val]
                tpos = pos[t.test]
                for it, dices in zip(res.eval_iterations, res.eval_dice):
                    curves.append((tid, method, it, float(np.mean([dices[j] for j in vpos]))))
                gt = eval_labels[tpos]
                variants = []
                if is_multilevel(method):
                    a = activation_array(out[:, 0], cfg.activation)
                    theta = sweep_thresholds([a[j] for j in vpos], [eval_labels[j] for j in vpos], m, grid, m=m)
                    variants.append((method, theta))
                    variants.append((method + PRESET_SUFFIX, method_thresholds(cfg, method)))
                    preds = [(name, threshold_map(a[tpos], th), th[-1]) for name, th in variants]
                else:
                    preds = [(method, baseline_predict(out[tpos]), None)]
                for name, pred, theta2 in preds:
                    viol = validate_nesting(pred)
                    for c in range(m + 1):
                        new_rows.append({"fold": tid, "method": name, "class": c, "dice": dice(pred, gt, c),
                                         "theta2": theta2, "violations": viol, "iterations": cfg.iterations})
            rows.extend(new_rows)
            if out_dir is not None:
                with open(partial, "a", newline="") as fh:
                    w = csv.DictWriter(fh, fieldnames=REPORT_HEADER, lineterminator="\n")
                    for r in new_rows:
                        w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])) for k in REPORT_HEADER})
            if progress:
                progress(fold, method)
    rows.sort(key=lambda r: (r["fold"], r["method"], r["class"]))
    curves.sort()
    report = ExperimentReport(rows, curves, _summarise(rows, m), _wilcoxon_rows(rows, m), m)
    if out_dir is not None:
        write_report(report, out_dir)
        partial.unlink()
    return report


def _write_dicts(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])) for k in header})


def write_report(report, out_dir):
    out_dir = Path(out_dir)
    write_report_csv(out_dir / "report.csv", report.rows)
    with open(out_dir / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "method", "iteration", "val_dice"])
        for tid, meth, it, d in report.curves:
            w.writerow([tid, meth, it, repr(d)])
    _write_dicts(out_dir / "summary.csv", report.summary,
                 ["method", "class", "n", "mean_dice", "sd_dice", "mean_theta2", "mean_violations"])
    _write_dicts(out_dir / "wilcoxon.csv", report.wilcoxon,
                 ["method", "baseline", "statistic", "pvalue", "n", "mean_diff"])
    check_report_consistency(out_dir)
    from .plotting import plot_convergence, plot_test_dice

    plot_convergence(report, out_dir / "convergence.png")
    plot_test_dice(report, out_dir / "test_dice.png")


def check_report_consistency(out_dir):
    """Recompute the summary means from ``report.csv`` and compare with ``summary.csv``."""
    out_dir = Path(out_dir)
    with open(out_dir / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(out_dir / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    for s in summary:
        vals = [float(r["dice"]) for r in rows if r["method"] == s["method"] and r["class"] == s["class"]]
        if len(vals) != int(s["n"]) or not math.isclose(float(np.mean(vals)), float(s["mean_dice"]), rel_tol=0, abs_tol=1e-12):
            raise RuntimeError(f"summary for {s['method']} class {s['class']} disagrees with report rows")


# -- train / predict ---------------------------------------------------------


def run_train(cfg, out_dir):
    """Train on the first cross-validation triple; write checkpoint, sidecar config and curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    method = method_for_loss(cfg)
    samples = generate_dataset(cfg.scene, cfg.n_images, base_seed=cfg.master_seed)
    triple = make_folds(cfg.n_images, cfg.k_folds, seed=cfg.master_seed)[0]
    res = train_model(cfg, method, [samples[i] for i in triple.train], [samples[i] for i in triple.val],
                      seed=derive_seed(cfg.master_seed, triple.fold))
    save_model(res.net, cfg, out_dir / "model.nseg")
    with open(out_dir / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "val_dice"])
        for it, d in zip(res.eval_iterations, res.eval_dice):
            w.writerow([it, repr(float(np.mean(d)))])
    return res


def save_model(net, cfg, path):
    path = Path(path)
    save_checkpoint(path, net.params.state_dict())
    sidecar = replace(cfg, network=net.cfg)
    path.with_suffix(".cfg").write_text(dump_config(sidecar))


def load_model(path):
    path = Path(path)
    side = path.with_suffix(".cfg")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    if not side.exists():
        raise FileNotFoundError(f"config sidecar {side} not found next to the checkpoint")
    cfg = parse_config(side)
    net = SegNet(cfg.network)
    net.params.load_state_dict(load_checkpoint(path))
    return net, cfg


def read_image(path):
    arr, maxval = read_pgm(path)
    return arr.astype(np.float64) / maxval


def run_predict(checkpoint, image_path, out_dir, thresholds=None):
    """Label and activation PGMs for one image; returns (labels, counts, violations)."""
    net, cfg = load_model(checkpoint)
    img = read_image(image_path)
    try:
        net.check_input((1, 1) + img.shape)
    except T.ShapeError as exc:
        raise ValueError(f"{image_path}: {exc}") from exc
    method = method_for_loss(cfg)
    out = raw_outputs(net, img[None, None])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    if is_multilevel(method):
        th = tuple(thresholds) if thresholds else method_thresholds(cfg, method)
        if len(th) != cfg.m:
            raise ConfigError(f"expected {cfg.m} thresholds, got {len(th)}")
        a = activation_array(out[0, 0], cfg.activation)
        labels = threshold_map(a, th)
        scaled = np.rint(np.clip(a / cfg.m, 0, 1) * 65535).astype(np.uint16)
    else:
        labels = baseline_predict(out[0])
        z = out[0] - out[0].max(axis=0)
        prob = np.exp(z[cfg.m]) / np.exp(z).sum(axis=0)
        scaled = np.rint(prob * 65535).astype(np.uint16)
    write_pgm(out_dir / f"{stem}_label.pgm", labels, maxval=255)
    write_pgm(out_dir / f"{stem}_activation.pgm", scaled, maxval=65535)
    counts = np.bincount(labels.ravel(), minlength=cfg.m + 1)
    return labels, counts, validate_nesting(labels)


def export_dataset(cfg, out_dir):
    """Write each sample as a 16-bit image PGM plus an 8-bit label PGM, and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(cfg.scene, cfg.n_images, base_seed=cfg.master_seed)
    lines = ["# image label"]
    for i, s in enumerate(samples):
        img_name, lab_name = f"image_{i:03d}.pgm", f"label_{i:03d}.pgm"
        write_pgm(out_dir / img_name, np.rint(s.image[0] * 65535).astype(np.uint16), maxval=65535)
        write_pgm(out_dir / lab_name, s.label, maxval=255)
        lines.append(f"{img_name} {lab_name}")
    lines.append("")
    lines.append("# scene")
    for k, v in cfg.scene.to_dict().items():
        lines.append(f"# {k} = {v}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")
    return samples
