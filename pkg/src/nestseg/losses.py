"""Losses for the multi-level head, plus the softmax cross-entropy baseline.

All losses are means over pixels (and batch), so they do not grow with
image size.  Label maps are integer arrays with values in ``0..m``.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .activation import ActivationConfig, multi_level_activation, pseudo_prob_P, pseudo_prob_Q

LOG_EPS = 1e-7
LOSS_NAMES = ("sse", "mce", "nce", "softmax-ce")


def check_labels(labels, m):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > m):
        raise ValueError(f"label values must lie in 0..{m}, found {labels.min()}..{labels.max()}")
    return labels


def one_hot(labels, m):
    """``y[c]`` is 1 where the label equals ``c``; class axis first."""
    labels = np.asarray(labels)
    return np.stack([(labels == c).astype(np.float64) for c in range(m + 1)])


def class_weights(label_maps, m):
    """Inverse-frequency weights ``N_tot / N_c`` pooled over every map."""
    counts = np.zeros(m + 1, dtype=np.int64)
    for lab in label_maps:
        lab = check_labels(lab, m)
        counts += np.bincount(lab.ravel(), minlength=m + 1)[: m + 1]
    absent = [c for c in range(m + 1) if counts[c] == 0]
    if absent:
        raise ValueError(f"class {absent[0]} never occurs in the training labels; its weight would be infinite")
    return counts.sum() / counts.astype(np.float64)


def _as_pixels(a, labels):
    """Reshape a ``[B,1,H,W]`` activation to the label shape."""
    labels = np.asarray(labels)
    if a.shape == labels.shape:
        return a
    if a.values.ndim == labels.ndim + 1 and a.shape[1] == 1 and a.shape[:1] + a.shape[2:] == labels.shape:
        return T.reshape(a, labels.shape)
    raise T.ShapeError(f"activation shape {a.shape} does not match label shape {labels.shape}")


def sse_loss(a, target):
    """Mean squared distance between activation and integer class level.

    Minimised, i.e. the positive form of the squared-error objective.
    """
    a = _as_pixels(a, target)
    return T.mean(T.square(T.sub(a, np.asarray(target, dtype=np.float64))))


def _weighted_log_loss(scores, target, weights):
    n = np.asarray(target).size
    total = None
    for c, score in enumerate(scores):
        w = 1.0 if weights is None else float(weights[c])
        mask = (np.asarray(target) == c) * w
        if not mask.any():
            continue
        term = T.tensor_sum(T.mul(T.log(T.clamp_min(score, LOG_EPS)), mask))
        total = term if total is None else T.add(total, term)
    return T.scale(total, -1.0 / n)


def mce_loss(a, target, weights=None, m=2):
    """Class-weighted cross-entropy on the ``P`` scores, normalised by pixel count only."""
    a = _as_pixels(a, target)
    check_labels(target, m)
    if weights is not None and len(weights) != m + 1:
        raise ValueError(f"expected {m + 1} class weights, got {len(weights)}")
    scores = [pseudo_prob_P(a, c, m) for c in range(m + 1)]
    return _weighted_log_loss(scores, target, weights)


def nce_loss(a, target, m=2, t=10.0, weights=None):
    """Cross-entropy on the ``Q`` scores.

    ``Q`` can exceed 1 slightly (by at most ``ln 2 / t``), so the loss can be
    marginally negative near a perfect fit.
    """
    a = _as_pixels(a, target)
    check_labels(target, m)
    scores = [pseudo_prob_Q(a, c, m, t) for c in range(m + 1)]
    return _weighted_log_loss(scores, target, weights)


def softmax_ce_loss(logits, target, m=2):
    """Mean ``-log softmax(logits)[gt]`` with the class axis at position 1 (or 0 if unbatched)."""
    target = check_labels(target, m)
    if logits.values.ndim != target.ndim + 1:
        raise T.ShapeError(f"logits {logits.shape} need one more axis than labels {target.shape}")
    axis = 1 if logits.values.ndim == 4 else 0
    C = logits.shape[axis]
    if C != m + 1:
        raise ValueError(f"softmax head has {C} channels but m + 1 = {m + 1} classes")
    y = np.moveaxis(one_hot(target, m), 0, axis)
    if y.shape != logits.shape:
        raise T.ShapeError(f"logits {logits.shape} do not match labels {target.shape}")
    logp = T.log_softmax(logits, axis=axis)
    return T.scale(T.tensor_sum(T.mul(logp, y)), -1.0 / target.size)


def compute_loss(name, output, target, act_cfg=None, weights=None):
    """Dispatch by loss name.  ``output`` is the raw network map ``x``; the
    multi-level losses apply the activation themselves."""
    act_cfg = act_cfg or ActivationConfig()
    m = act_cfg.m
    if name == "softmax-ce":
        return softmax_ce_loss(output, target, m)
    a = multi_level_activation(output, act_cfg)
    if name == "sse":
        return sse_loss(a, target)
    if name == "mce":
        return mce_loss(a, target, weights, m)
    if name == "nce":
        return nce_loss(a, target, m, act_cfg.t, weights)
    raise ValueError(f"unknown loss {name!r}; choose from {', '.join(LOSS_NAMES)}")
