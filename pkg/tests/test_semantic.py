import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qars.encoder import SegmentEmbeddings
from qars.errors import DimensionError
from qars.semantic import bertscore
from qars.tensor import Tensor

finite = st.floats(-10, 10, allow_nan=False)


def matrices(d):
    return st.integers(1, 5).flatmap(lambda n: arrays(np.float64, (n, d), elements=finite))


def test_self_match_is_one():
    m = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    res = bertscore(m, m)
    assert res.precision == pytest.approx(1.0) and res.recall == pytest.approx(1.0)
    assert res.f1 == pytest.approx(1.0)


def test_orthogonal_is_zero():
    res = bertscore(np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]))
    assert (res.precision, res.recall, res.f1) == (0.0, 0.0, 0.0)


def test_hand_computed_greedy_match():
    res = bertscore(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert res.precision == 1.0
    assert res.recall == 0.5
    assert res.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_accepts_segment_embeddings_and_zero_vectors():
    h = SegmentEmbeddings(Tensor([[0.0, 0.0], [1.0, 1.0]]), Tensor([0.5, 0.5]))
    res = bertscore(h, np.array([[2.0, 2.0]]))
    assert res.precision == pytest.approx(0.5)
    assert res.recall == pytest.approx(1.0)


def test_errors():
    with pytest.raises(DimensionError):
        bertscore(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(DimensionError):
        bertscore(np.ones((0, 3)), np.ones((2, 3)))


@settings(max_examples=200)
@given(matrices(3), matrices(3))
def test_duality_exact(h, r):
    assert bertscore(h, r).precision == bertscore(r, h).recall


@given(matrices(3), matrices(3), st.floats(0.01, 100))
def test_scale_invariance(h, r, c):
    a, b = bertscore(h, r), bertscore(c * h, c * r)
    assert abs(a.precision - b.precision) < 1e-12
    assert abs(a.recall - b.recall) < 1e-12
    assert abs(a.f1 - b.f1) < 1e-12


@given(matrices(3), matrices(3), st.data())
def test_appending_matching_vector_never_lowers_precision(h, r, data):
    i = data.draw(st.integers(0, h.shape[0] - 1))
    extended = np.vstack([r, h[i:i + 1]])
    assert bertscore(h, extended).precision >= bertscore(h, r).precision
