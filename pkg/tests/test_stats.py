import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prlgqa.stats import (
    ConfusionCounts,
    UndefinedCorrelationError,
    confusion_counts,
    format_report,
    krcc,
    l_test,
    plcc,
    ranking_accuracy,
    srcc,
)


def kendall_oracle(y, h):
    n = len(y)
    nc = nd = 0
    for i in range(n):
        for j in range(i + 1, n):
            p = (y[i] - y[j]) * (h[i] - h[j])
            nc += p > 0
            nd += p < 0
    return 2 * (nc - nd) / (n * (n - 1))


def average_ranks(v):
    return [1 + sum(x < a for x in v) + (sum(x == a for x in v) - 1) / 2 for a in v]


def spearman_oracle(y, h):
    n = len(y)
    d2 = sum((a - b) ** 2 for a, b in zip(average_ranks(y), average_ranks(h)))
    return 1 - 6 * d2 / (n * (n * n - 1))


def test_plcc_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert plcc(y, 2 * y + 1) == 1.0
    assert plcc(y, -y) == -1.0
    assert math.isclose(plcc(y, [1, 3, 2]), 0.5, abs_tol=1e-15)
    with pytest.raises(UndefinedCorrelationError):
        plcc(y, [2, 2, 2])
    with pytest.raises(ValueError):
        plcc(y, [1, 2])


def test_krcc_examples():
    assert krcc([1, 2, 3], [1, 2, 3]) == 1.0
    assert krcc([1, 2, 3], [3, 2, 1]) == -1.0
    assert math.isclose(krcc([1, 2, 3], [1, 3, 2]), 1 / 3)


def test_srcc_examples():
    y = np.array([0.5, 1.0, 2.0, 3.0])
    assert srcc(y, y**3) == 1.0
    assert srcc(y, -y) == -1.0
    assert srcc([1, 2, 3, 4], [1, 2, 4, 3]) == 0.8


def test_oracles_on_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 51))
        # small integer ranges force ties
        y = rng.integers(0, 8, size=n).astype(float)
        h = rng.integers(0, 8, size=n).astype(float)
        assert krcc(y, h) == kendall_oracle(y.tolist(), h.tolist())
        assert srcc(y, h) == spearman_oracle(y.tolist(), h.tolist())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_invariance_under_monotone_maps(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    y, h = rng.normal(size=n), rng.normal(size=n)
    a, b = rng.uniform(0.1, 10), rng.normal() * 5
    assert abs(plcc(y, a * h + b) - plcc(y, h)) < 1e-12
    assert srcc(y, np.exp(h)) == srcc(y, h)
    assert krcc(np.tanh(y), h) == krcc(y, h)


def test_accuracy():
    assert ConfusionCounts(3, 2, 1, 0).accuracy() == 5 / 6
    decisions = [(True, True)] * 3 + [(False, False)] * 2 + [(True, False)]
    assert confusion_counts(decisions) == ConfusionCounts(3, 2, 1, 0)
    assert ranking_accuracy([(True, True), (False, False)]) == 1.0
    with pytest.raises(ValueError):
        ranking_accuracy([])


def test_random_predictor_accuracy():
    rng = np.random.default_rng(1)
    truth = np.arange(10_000) % 2 == 0
    pred = rng.random(10_000) < 0.5
    assert abs(ranking_accuracy(zip(pred, truth)) - 0.5) <= 0.02


def test_l_test_examples():
    levels = [1, 2, 3, 4, 5]
    good = [0.9, 0.7, 0.5, 0.3, 0.1]
    cells = {(c, k): (levels, good) for c in "ab" for k in ("GN", "UN")}
    assert l_test(cells) == 1.0
    cells[("a", "GN")] = (levels, good[::-1])
    assert l_test(cells) == 0.5
    all_rev = {key: (levels, good[::-1]) for key in cells}
    assert l_test(all_rev) == -1.0
    errors = {("a", "GN"): (levels, [0.0, 0.1, 0.2, 0.3, 0.4])}
    assert l_test(errors, higher_is_better=False) == 1.0


def test_l_test_missing_cell():
    cells = {("a", "GN"): ([1, 2], [2, 1])}
    with pytest.raises(KeyError, match="UN"):
        l_test(cells, contents=["a"], kinds=["GN", "UN"])
    with pytest.raises(ValueError):
        l_test({("a", "GN"): ([1], [1])})


def test_format_report():
    text = format_report({"m": {"GN": 1.0, "UN": 0.5}, "n": {"GN": 0.25}}, ["GN", "UN"], title="t")
    lines = text.splitlines()
    assert lines[0] == "# t"
    assert lines[1] == "method\tGN\tUN\tmean"
    assert lines[2] == "m\t1.000\t0.500\t0.750"
    assert lines[3] == "n\t0.250\t-\t0.250"
