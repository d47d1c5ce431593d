"""Flat INI experiment configuration.

Sections ``[scene]``, ``[network]``, ``[train]`` and ``[activation]``
hold ``key = value`` lines; ``#`` starts a comment.  Unknown keys are
rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .activation import ActivationConfig
from .data import AugmentConfig, SceneSpec
from .errors import ConfigError
from .losses import LOSS_NAMES
from .segnet import NetworkConfig

SECTIONS = ("scene", "network", "train", "activation")
METHODS = {
    # name: (loss, inverse-frequency class weights)
    "softmax-ce": ("softmax-ce", False),
    "sse": ("sse", False),
    "mce": ("mce", True),
    "mce-unweighted": ("mce", False),
    "nce": ("nce", False),
    "nce-weighted": ("nce", True),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    activation: ActivationConfig = field(default_factory=ActivationConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: str = "sse"
    mce_weighting: bool = True
    iterations: int = 3000
    batch_size: int = 4
    eval_every: int = 100
    learning_rate: float = 1e-3
    warmup: int = 100  # linear learning-rate ramp, in iterations
    k_folds: int = 4
    n_images: int = 16
    threshold_grid: tuple = (1.01, 2.0, 0.01)  # start, stop (exclusive), step
    methods: tuple = ("softmax-ce", "sse", "mce", "nce")
    output_dir: str = "runs"
    master_seed: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def m(self):
        return self.activation.m

    def grid(self):
        start, stop, step = self.threshold_grid
        return np.round(np.arange(start, stop - 1e-12, step), 10)

    def method_network(self, method):
        loss, _ = METHODS[method]
        head = "softmax" if loss == "softmax-ce" else "multilevel"
        return replace(self.network, head=head, m=self.m)


def validate(cfg):
    if cfg.iterations < 0:
        raise ConfigError(f"iterations = {cfg.iterations}: requires iterations >= 0")
    if cfg.eval_every < 1 or cfg.iterations % cfg.eval_every:
        raise ConfigError(f"eval_every = {cfg.eval_every} must be >= 1 and divide iterations = {cfg.iterations}")
    if cfg.loss not in LOSS_NAMES:
        raise ConfigError(f"loss = {cfg.loss!r}: must be one of {', '.join(LOSS_NAMES)}")
    want = "softmax" if cfg.loss == "softmax-ce" else "multilevel"
    if cfg.network.head != want:
        raise ConfigError(
            f"loss = {cfg.loss} with head = {cfg.network.head}: loss=softmax-ce requires head=softmax and every other loss requires head=multilevel"
        )
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size = {cfg.batch_size}: requires batch_size >= 1")
    if cfg.warmup < 0:
        raise ConfigError(f"warmup = {cfg.warmup}: requires warmup >= 0")
    if not cfg.learning_rate > 0:
        raise ConfigError(f"learning_rate = {cfg.learning_rate}: requires learning_rate > 0")
    if cfg.k_folds < 1 or cfg.n_images % cfg.k_folds:
        raise ConfigError(f"k_folds = {cfg.k_folds} must divide n_images = {cfg.n_images}")
    if cfg.n_images // cfg.k_folds < 2:
        raise ConfigError("n_images / k_folds must be >= 2 so every validation set is non-empty")
    if not (cfg.scene.m == cfg.network.m == cfg.activation.m):
        raise ConfigError(f"nesting depth disagrees: scene m={cfg.scene.m}, network m={cfg.network.m}, activation m={cfg.activation.m}")
    k = 2**cfg.network.depth
    H, W = cfg.scene.image_size
    if H % k or W % k:
        raise ConfigError(f"image size {H}x{W} must be divisible by 2**depth = {k}")
    for meth in cfg.methods:
        if meth not in METHODS:
            raise ConfigError(f"unknown method {meth!r}; choose from {', '.join(METHODS)}")
    start, stop, step = cfg.threshold_grid
    if not (step > 0 and start < stop):
        raise ConfigError("threshold_grid must be 'start:stop:step' with start < stop and step > 0")


# -- parsing -----------------------------------------------------------------


def _range(text, conv=float):
    parts = re.split(r"\s*[-:,]\s*", text.strip())
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"expected 'lo-hi', got {text!r}")
    return tuple(conv(p) for p in parts)


def _floats(text):
    return tuple(float(p) for p in re.split(r"[\s,]+", text.strip()) if p)


def _size(text):
    parts = re.split(r"\s*[x,]\s*", text.strip().lower())
    if len(parts) == 1:
        parts = parts * 2
    return tuple(int(p) for p in parts)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _grid(text):
    parts = [float(p) for p in text.split(":")]
    if len(parts) != 3:
        raise ValueError("expected 'start:stop:step'")
    return tuple(parts)


def _methods(text):
    return tuple(p for p in re.split(r"[\s,]+", text.strip()) if p)


# key -> (target, field, converter)
KEYS = {
    "scene": {
        "image_size": ("scene", "image_size", _size),
        "blobs_per_image": ("scene", "blobs_per_image", lambda s: _range(s, int)),
        "children_per_blob": ("scene", "children_per_blob", lambda s: _range(s, int)),
        "radius_ranges": ("scene", "radius_ranges", lambda s: tuple(_range(p) for p in s.split(";"))),
        "intensity_means": ("scene", "intensity_means", _floats),
        "noise_sigma": ("scene", "noise_sigma", float),
        "jitter": ("scene", "jitter", float),
        "margin": ("scene", "margin", int),
        "border": ("scene", "border", int),
    },
    "network": {
        "depth": ("network", "depth", int),
        "base_channels": ("network", "base_channels", int),
        "input_channels": ("network", "input_channels", int),
        "head": ("network", "head", str),
    },
    "activation": {
        "m": ("activation", "m", int),
        "h": ("activation", "h", float),
        "kappa": ("activation", "kappa", float),
        "t": ("activation", "t", float),
    },
    "train": {
        "loss": ("top", "loss", str),
        "mce_weighting": ("top", "mce_weighting", _bool),
        "iterations": ("top", "iterations", int),
        "batch_size": ("top", "batch_size", int),
        "eval_every": ("top", "eval_every", int),
        "learning_rate": ("top", "learning_rate", float),
        "warmup": ("top", "warmup", int),
        "k_folds": ("top", "k_folds", int),
        "n_images": ("top", "n_images", int),
        "threshold_grid": ("top", "threshold_grid", _grid),
        "methods": ("top", "methods", _methods),
        "output_dir": ("top", "output_dir", str),
        "master_seed": ("top", "master_seed", int),
        "augment": ("augment", "enabled", _bool),
        "flip_prob": ("augment", "flip_prob", float),
        "rotate": ("augment", "rotate", _bool),
        "max_shift": ("augment", "max_shift", float),
        "scale_range": ("augment", "scale_range", _range),
    },
}


def parse_config_text(text, source="<config>"):
    values = {"scene": {}, "network": {}, "activation": {}, "augment": {}, "top": {}}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            section = m.group(1)
            if section not in SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]; expected one of {', '.join(SECTIONS)}")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of a section")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in KEYS[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        target, name, conv = KEYS[section][key]
        try:
            values[target][name] = conv(val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return build_config(values)


def build_config(values):
    top = dict(values["top"])
    act = ActivationConfig(**values["activation"])
    scene_kw = dict(values["scene"])
    scene_kw["m"] = act.m
    if act.m != 2:
        # the default radii/intensities describe three classes
        for key in ("radius_ranges", "intensity_means"):
            if key not in scene_kw:
                raise ConfigError(f"m = {act.m} requires an explicit [scene] {key}")
    scene = SceneSpec(seed=top.get("master_seed", 0), **scene_kw)
    loss = top.get("loss", "sse")
    net_kw = dict(values["network"])
    net_kw.setdefault("head", "softmax" if loss == "softmax-ce" else "multilevel")
    network = NetworkConfig(m=act.m, seed=top.get("master_seed", 0), **net_kw)
    augment = AugmentConfig(**values["augment"])
    if "threshold_grid" not in top:
        top["threshold_grid"] = (act.m - 1 + 0.01, float(act.m), 0.01)
    return ExperimentConfig(scene=scene, network=network, activation=act, augment=augment, **top)


def parse_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), str(path))


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return "; ".join(_render(p) for p in v)
    if isinstance(v, tuple):
        return ", ".join(str(p) for p in v)
    return str(v)


def dump_config(cfg):
    """Render ``cfg`` in the INI format accepted by :func:`parse_config_text`."""
    lines = []
    objs = {"scene": cfg.scene, "network": cfg.network, "activation": cfg.activation, "augment": cfg.augment, "top": cfg}
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, (target, name, conv) in KEYS[section].items():
            v = getattr(objs[target], name)
            if conv is _grid:
                text = ":".join(repr(float(p)) for p in v)
            elif conv is _size:
                text = f"{v[0]}x{v[1]}"
            elif name in ("blobs_per_image", "children_per_blob", "scale_range"):
                text = f"{v[0]}-{v[1]}"
            elif name == "radius_ranges":
                text = "; ".join(f"{lo}-{hi}" for lo, hi in v)
            else:
                text = _render(v)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)
