"""Multi-level activation and the pseudo-probability mappings built on it.

For ``m`` nested levels the activation is a staircase of ``m`` sigmoids
with steepness ``kappa`` and spacing ``h``, centred on zero, so a single
output channel covers the ``m + 1`` classes with plateaus at 0, 1, ..., m.

Two families of class scores map an activation ``a`` in (0, m) onto
[0, 1]-like values that peak at the target ``a = c``:

* ``P``: linear ramps ``1 - a/m`` and ``a/m`` at the two ends and tent
  functions ``max(1 - |c - a|, 0)`` for interior classes.
* ``Q``: the same interior tents, with softplus ramps ``s(1 - a)`` and
  ``s(a - (m - 1))`` at the ends.

For ``m = 2`` these are the standard three-class mappings.  The
``m > 2`` variants are an extension that keeps the peak-at-target and
equal-slope properties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError


@dataclass(frozen=True)
class ActivationConfig:
    m: int = 2
    h: float = 1.0
    kappa: float = 10.0
    t: float = 10.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"m = {self.m}: requires m >= 1 (integer)")
        if not self.h > 0:
            raise ConfigError(f"h = {self.h}: requires h > 0")
        if not self.kappa > 0:
            raise ConfigError(f"kappa = {self.kappa}: requires kappa > 0")
        if not self.t > 0:
            raise ConfigError(f"t = {self.t}: requires t > 0")

    @property
    def offsets(self):
        """Sigmoid centres are at ``-offsets``; symmetric about zero."""
        m = self.m
        return [self.h * (n - (m + 1) / 2) for n in range(1, m + 1)]


def _tanh_terms(x, cfg):
    # sigma(z) = 0.5 + 0.5 tanh(z/2); tanh is exactly odd, which makes
    # a(0) = m/2 and a(x) + a(-x) = m hold to rounding.
    m = cfg.m
    offs = cfg.offsets
    half = 0.5 * cfg.kappa
    terms = [np.tanh(half * (x + o)) for o in offs]
    total = np.zeros_like(x)
    # sum mirrored pairs first so the cancellation at x = 0 is exact
    for n in range(m // 2):
        total = total + (terms[n] + terms[m - 1 - n])
    if m % 2:
        total = total + terms[m // 2]
    return terms, total


def activation_array(x, cfg):
    """Plain numpy evaluation of the multi-level activation."""
    x = np.asarray(x, dtype=np.float64)
    _, total = _tanh_terms(x, cfg)
    return 0.5 * cfg.m + 0.5 * total


def activation_slope_array(x, cfg):
    x = np.asarray(x, dtype=np.float64)
    terms, _ = _tanh_terms(x, cfg)
    return sum(0.25 * cfg.kappa * (1.0 - th * th) for th in terms)


def multi_level_activation(x, cfg):
    """Apply the ``m``-level staircase elementwise to the tensor ``x``."""
    terms, total = _tanh_terms(x.values, cfg)
    out = T._make(0.5 * cfg.m + 0.5 * total, (x,), "multi_level")

    def _bw(g):
        slope = sum(1.0 - th * th for th in terms)
        return (g * (0.25 * cfg.kappa) * slope,)

    out._backward = _bw
    return out


def softplus_array(x, t):
    return np.logaddexp(0.0, t * np.asarray(x, dtype=np.float64)) / t


def softplus(x, t):
    """``(1/t) log(1 + exp(t x))`` without overflow; derivative ``sigmoid(t x)``."""
    tx = t * x.values
    out = T._make(np.logaddexp(0.0, tx) / t, (x,), "softplus")
    out._backward = lambda g: (g * T.sigmoid_array(tx),)
    return out


def _check_class(c, m):
    if int(c) != c or not 0 <= c <= m:
        raise ValueError(f"class index {c} outside 0..{m}")


def _tent(a, c):
    # max(1 - |c - a|, 0)
    return T.clamp_min(T.add(T.scale(T.absolute(T.add(a, -float(c))), -1.0), 1.0), 0.0)


def pseudo_prob_P(a, c, m):
    _check_class(c, m)
    if c == 0:
        return T.add(T.scale(a, -1.0 / m), 1.0)
    if c == m:
        return T.scale(a, 1.0 / m)
    return _tent(a, c)


def pseudo_prob_Q(a, c, m, t):
    _check_class(c, m)
    if c == 0:
        return softplus(T.add(T.scale(a, -1.0), 1.0), t)
    if c == m:
        return softplus(T.add(a, -float(m - 1)), t)
    return _tent(a, c)


def P_array(a, c, m):
    return pseudo_prob_P(T.Tensor(a), c, m).values


def Q_array(a, c, m, t):
    return pseudo_prob_Q(T.Tensor(a), c, m, t).values


def apriori_top_threshold(loss, m=2):
    """Activation value where the two highest classes' scores cross.

    MCE uses the ``P`` crossing ``m**2 / (m + 1)`` (4/3 for ``m = 2``); the
    others use the large-``t`` ``Q`` crossing, i.e. the plateau midpoint
    ``m - 1/2``.
    """
    if loss == "mce":
        return m * m / (m + 1)
    return m - 0.5


def preset_thresholds(loss, m=2):
    """Lower thresholds at the plateau midpoints, top one at the class-score crossing."""
    th = [n - 0.5 for n in range(1, m)]
    th.append(apriori_top_threshold(loss, m))
    return tuple(th)
