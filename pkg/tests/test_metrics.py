import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nestseg.metrics import (
    DiceReport,
    baseline_predict,
    check_thresholds,
    default_grid,
    dice,
    read_report_csv,
    sweep_thresholds,
    threshold_map,
    wilcoxon_signed_rank,
    write_report_csv,
)


def brute_dice(pred, gt, c):
    inter = p = g = 0
    for a, b in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        p += a == c
        g += b == c
        inter += a == c and b == c
    return 1.0 if p + g == 0 else 2 * inter / (p + g)


def brute_wilcoxon(x, y):
    """Enumerate all 2^n sign flips of the non-zero differences."""
    d = [a - b for a, b in zip(x, y) if a != b]
    absd = [abs(v) for v in d]
    ranks = [(sum(1 for u in absd if u < v) + 1 + sum(1 for u in absd if u <= v)) / 2 for v in absd]
    w_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    w_minus = sum(r for r, v in zip(ranks, d) if v < 0)
    w = min(w_plus, w_minus)
    n = len(d)
    hits = sum(1 for signs in itertools.product((0, 1), repeat=n) if sum(r for r, s in zip(ranks, signs) if s) <= w + 1e-9)
    return w, min(1.0, 2 * hits / 2**n)


def test_threshold_assignment():
    theta = (0.5, 1.5)
    np.testing.assert_array_equal(threshold_map(np.array([0.3, 1.0, 1.7]), theta), [0, 1, 2])


def test_threshold_ties_go_up():
    np.testing.assert_array_equal(threshold_map(np.array([0.5, 4 / 3, 1.3]), (0.5, 4 / 3)), [1, 2, 1])


def test_threshold_must_increase():
    with pytest.raises(ValueError, match="increasing"):
        threshold_map(np.zeros(2), (1.5, 0.5))
    with pytest.raises(ValueError, match="expected 2"):
        check_thresholds((0.5,), m=2)


@settings(max_examples=50, deadline=None)
@given(a=st.lists(st.floats(0, 3), min_size=1, max_size=20), raw=st.lists(st.floats(0.01, 2.99), min_size=1, max_size=4, unique=True))
def test_threshold_map_counts_passed_thresholds(a, raw):
    theta = tuple(sorted(raw))
    got = threshold_map(np.array(a), theta)
    assert list(got) == [sum(t <= v for t in theta) for v in a]


def test_dice_matches_brute_force():
    r = np.random.default_rng(0)
    for _ in range(200):
        shape = tuple(r.integers(1, 9, size=2))
        pred = r.integers(0, 3, size=shape)
        gt = r.integers(0, 3, size=shape)
        c = int(r.integers(0, 3))
        assert abs(dice(pred, gt, c) - brute_dice(pred, gt, c)) <= 1e-12


def test_dice_special_cases():
    assert dice(np.zeros((2, 2)), np.zeros((2, 2)), 2) == 1.0
    assert dice(np.full((2, 2), 2), np.zeros((2, 2)), 2) == 0.0
    with pytest.raises(ValueError, match="shape"):
        dice(np.zeros(3), np.zeros(4), 1)


def test_dice_report():
    pred = np.array([[0, 1], [2, 0]])
    gt = np.array([[0, 1], [1, 1]])
    rep = DiceReport.evaluate(pred, gt, 2)
    assert rep.dice[2] == 0.0 and rep.dice[1] == pytest.approx(2 / 4)
    assert rep.pixel_counts == {0: 2, 1: 1, 2: 1}
    assert rep.violations == 2


def test_baseline_argmax_brute_force():
    r = np.random.default_rng(1)
    logits = r.normal(size=(3, 4, 4))
    got = baseline_predict(logits)
    for i, j in np.ndindex(4, 4):
        assert got[i, j] == max(range(3), key=lambda c: (logits[c, i, j], -c))
    np.testing.assert_array_equal(baseline_predict(logits[None])[0], got)


def test_sweep_recovers_exact_threshold():
    r = np.random.default_rng(2)
    a = [r.uniform(1.0, 2.0, size=(6, 6)) for _ in range(3)]
    gts = [np.where(x >= 1.4, 2, 1) for x in a]
    assert sweep_thresholds(a, gts, 2, [1.3, 1.4, 1.5]) == (0.5, 1.4)


def test_sweep_matches_exhaustive_grid():
    r = np.random.default_rng(3)
    grid = default_grid(2)
    for trial in range(10):
        a = [r.uniform(0, 2, size=(8, 8)) for _ in range(3)]
        gts = [r.integers(0, 3, size=(8, 8)) for _ in range(3)]
        scores = {g: np.mean([brute_dice(threshold_map(x, (0.5, g)), y, 2) for x, y in zip(a, gts)]) for g in grid}
        best = max(scores.values())
        want = min(g for g, s in scores.items() if s == best)
        assert sweep_thresholds(a, gts, 2, grid) == (0.5, want)


def test_sweep_errors():
    with pytest.raises(ValueError, match="non-empty"):
        sweep_thresholds([], [], 2, [1.5])


def test_default_grid():
    g = default_grid(2)
    assert g[0] == 1.01 and g[-1] == 1.99 and len(g) == 99


def test_wilcoxon_five_positive():
    res = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert res.statistic == 0 and res.exact
    assert res.pvalue == 2 / 32 == 0.0625


@pytest.mark.parametrize("n", range(5, 11))
def test_wilcoxon_matches_enumeration(n):
    r = np.random.default_rng(n)
    for trial in range(5):
        x = r.normal(size=n).round(1)
        y = r.normal(size=n).round(1)
        if trial == 0:
            y = x - np.round(r.choice([-1, 1], size=n) * r.integers(1, 3, size=n) * 0.5, 1)  # many tied magnitudes
        if np.count_nonzero(x - y) < 5:
            continue
        w, p = brute_wilcoxon(list(x), list(y))
        res = wilcoxon_signed_rank(x, y)
        assert res.statistic == w
        assert abs(res.pvalue - p) <= 1e-12


def test_wilcoxon_agrees_with_scipy_exact():
    r = np.random.default_rng(4)
    for n in (6, 9, 12):
        x, y = r.normal(size=n), r.normal(size=n)
        ref = stats.wilcoxon(x, y, method="exact")
        res = wilcoxon_signed_rank(x, y)
        assert res.statistic == ref.statistic
        assert res.pvalue == pytest.approx(ref.pvalue, abs=1e-12)


def test_wilcoxon_large_n_close_to_enumeration():
    r = np.random.default_rng(5)
    x = r.normal(loc=0.6, size=16)
    y = np.zeros(16)
    _, p_exact = brute_wilcoxon(list(x), list(y))
    res = wilcoxon_signed_rank(x, y)
    assert not res.exact
    assert abs(res.pvalue - p_exact) <= 0.02


def test_wilcoxon_degenerate():
    res = wilcoxon_signed_rank([1.0] * 6, [1.0] * 6)
    assert (res.statistic, res.pvalue, res.n) == (0.0, 1.0, 0)
    with pytest.raises(ValueError, match="at least 5"):
        wilcoxon_signed_rank([1, 2, 3], [0, 0, 0])
    with pytest.raises(ValueError, match="length"):
        wilcoxon_signed_rank([1, 2], [1])


def test_report_csv_round_trip(tmp_path):
    rows = [{"fold": 0, "method": "mce", "class": 2, "dice": 0.1 + 0.2, "theta2": 4 / 3, "violations": 0, "iterations": 10},
            {"fold": 1, "method": "softmax-ce", "class": 2, "dice": 1 / 3, "theta2": None, "violations": 5, "iterations": 10}]
    write_report_csv(tmp_path / "r.csv", rows)
    back = read_report_csv(tmp_path / "r.csv")
    assert float(back[0]["dice"]) == 0.1 + 0.2
    assert float(back[0]["theta2"]) == 4 / 3
    assert back[1]["theta2"] == ""
    assert not math.isnan(float(back[1]["dice"]))


def test_sweep_single_point_grid():
    a = [np.full((2, 2), 1.7)]
    assert sweep_thresholds(a, [np.full((2, 2), 2)], 2, [1.25]) == (0.5, 1.25)
