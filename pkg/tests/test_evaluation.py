import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats

from qars.errors import UndefinedCorrelationError
from qars.evaluation import pearson, report, spearman

vals = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=30)


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert abs(pearson([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12


def test_pearson_rejects_degenerate():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


def _varied(x):
    return np.ptp(x) > 1e-3


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=30))
def test_pearson_matches_scipy(pairs):
    x, y = [p[0] for p in pairs], [p[1] for p in pairs]
    assume(_varied(x) and _varied(y))
    assert pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-9)


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=30),
       st.floats(0.1, 10), st.floats(-10, 10))
def test_pearson_affine_invariance(pairs, a, b):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    assume(_varied(x) and _varied(y))
    r = pearson(x, y)
    assert abs(pearson(a * x + b, y) - r) < 1e-12
    assert abs(pearson(-a * x + b, y) + r) < 1e-12


@given(vals, vals)
def test_pearson_symmetry_and_bound(x, y):
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    assume(_varied(x) and _varied(y))
    r = pearson(x, y)
    assert r == pearson(y, x)
    assert abs(r) <= 1 + 1e-12


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    x = np.array([0.5, 1.0, 2.0, 7.0, 9.0])
    assert spearman(x, np.exp(x)) == pytest.approx(1.0)
    assert abs(spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12


def test_spearman_ties_average_ranks():
    assert spearman([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(stats.spearmanr([1, 2, 2, 3], [1, 2, 3, 4])[0])


def test_report_flags_best():
    gold = [1.0, 2.0, 3.0, 4.0]
    rep = report([("A", gold, gold), ("B", gold[::-1], gold)])
    assert [r.r_times_100 for r in rep.rows] == ["100.00", "-100.00"]
    assert [r.best for r in rep.rows] == [True, False]
    assert rep.to_tsv() == "A\t100.00\nB\t-100.00\n"


def test_report_single_and_undefined_rows():
    gold = [1.0, 2.0, 3.0]
    rep = report([("const", [2.0, 2.0, 2.0], gold), ("only", [1.0, 3.0, 2.0], gold)])
    assert rep.rows[0].r_times_100 == "n/a" and not rep.rows[0].best
    assert rep.rows[1].best
    assert "n/a" in rep.render()


def test_report_ties_go_to_first_and_render_shape():
    gold = [3.0, 2.58, 4.1, 4.9, 3.7]
    preds = {
        "COMET (HerBERT)": [3.1, 2.7, 4.0, 4.8, 3.9],
        "COMET (XLM-R)": [3.5, 3.0, 3.9, 4.1, 3.6],
        "BLEURT": [3.1, 2.7, 4.0, 4.8, 3.9],
        "TransQuest": [4.0, 2.0, 3.9, 4.7, 3.0],
        "BERTScore": [3.9, 3.2, 3.6, 4.4, 3.1],
    }
    rep = report([(k, v, gold) for k, v in preds.items()])
    assert [r.best for r in rep.rows] == [True, False, False, False, False]
    lines = rep.render().splitlines()
    assert len(lines) == 2 + 5
    assert lines[2].endswith(" *") and lines[2].startswith("COMET (HerBERT)")
