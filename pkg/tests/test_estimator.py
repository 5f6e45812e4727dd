import numpy as np
import pytest

from qars import tensor as T
from qars.data import QERecord
from qars.errors import ConfigError, DataError, DimensionError
from qars.estimator import (EstimatorMode, EstimatorModel, RegressorHead, build_estimator, combine_features,
                            cross_encode_predict, feature_width, load_estimator, normalize_score, predict,
                            predict_many, save_estimator, to_likert)
from qars.tensor import Tensor, grad_check

RECORDS = [
    QERecord("kot siedzi na macie", 4.5, source="the cat sits on the mat", reference="kot siedzi na macie"),
    QERecord("pies biega", 2.0, source="the dog runs", reference="pies biegnie szybko"),
    QERecord("dom", 3.0, source="a house", reference="dom"),
]


def model(mode="reference", **kw):
    kw.setdefault("dim", 8)
    kw.setdefault("layers", 1)
    return build_estimator(mode, RECORDS, hidden=(6, 4), seed=5, **kw)


def test_combine_reference_free_example():
    out = combine_features(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), mode="reference-free")
    np.testing.assert_array_equal(out.data, [1, 2, 3, 4, 3, 8, 2, 2])


def test_combine_reference_layout():
    h, s, r = Tensor([1.0, -1.0]), Tensor([2.0, 0.0]), Tensor([0.5, 3.0])
    out = combine_features(h, s, r, "reference")
    np.testing.assert_array_equal(out.data, [1, -1, 0.5, 3, 2, 0, 0.5, -3, 1, 1, 0.5, 4])


def test_feature_widths():
    assert feature_width(EstimatorMode.REFERENCE, 4) == 24
    assert feature_width(EstimatorMode.REFERENCE_FREE, 4) == 16
    assert feature_width(EstimatorMode.CROSS, 4) == 4
    h = Tensor(np.ones((3, 4)))
    assert combine_features(h, h, h, "reference").shape == (3, 24)


def test_combine_errors():
    with pytest.raises(DataError):
        combine_features(Tensor([1.0]), None, mode="reference-free")
    with pytest.raises(DataError):
        combine_features(Tensor([1.0]), Tensor([1.0]), None, mode="reference")
    with pytest.raises(DimensionError):
        combine_features(Tensor([1.0, 2.0]), Tensor([1.0]), mode="reference-free")


def test_head_width_must_match_mode():
    m = model()
    with pytest.raises(ConfigError, match="32 features but the head takes 48"):
        EstimatorModel("reference-free", m.encoder, m.vocab, head=RegressorHead(48, (6, 4)))
    with pytest.raises(ConfigError):
        RegressorHead(8, (6,))


def test_zero_head_outputs_zero():
    for mode in EstimatorMode:
        m = model(mode)
        m.head.zero_()
        assert predict(m, RECORDS[1]) == 0.0


def test_predict_deterministic_and_batched_agree():
    m = model()
    assert predict(m, RECORDS[0]) == predict(m, RECORDS[0])
    batched = predict_many(m, RECORDS, batch_size=2)
    single = [predict(m, r) for r in RECORDS]
    np.testing.assert_allclose(batched, single, rtol=1e-5, atol=1e-6)


def test_mode_requirements():
    no_ref = QERecord("dom", 3.0, source="a house")
    predict(model("reference-free"), no_ref)
    with pytest.raises(DataError):
        predict(model("reference"), no_ref)
    with pytest.raises(DataError):
        predict(model("reference-free"), QERecord("dom", 3.0))


def test_cross_mode_swap_and_overlength():
    m = model("cross", max_seq_len=12)
    ids = m.token_ids
    a = cross_encode_predict(m, ids("the dog runs"), ids("pies biega"))
    b = cross_encode_predict(m, ids("pies biega"), ids("the dog runs"))
    assert a != b
    assert a == pytest.approx(predict(m, RECORDS[1]), rel=1e-5)
    with pytest.raises(DimensionError, match="max_seq_len"):
        cross_encode_predict(m, [4] * 8, [5] * 8)


def test_score_scale():
    assert normalize_score(1.0) == 0.0 and normalize_score(5.0) == 1.0
    assert to_likert(normalize_score(4.3)) == pytest.approx(4.3)
    assert to_likert(1.2) == pytest.approx(5.8)
    assert to_likert(1.2, clamp=True) == 5.0


def test_artifact_roundtrip(tmp_path):
    m = model("reference-free", positional="learned")
    save_estimator(m, tmp_path / "m")
    back = load_estimator(tmp_path / "m")
    assert back.mode is m.mode and back.head.hidden == (6, 4)
    assert back.vocab.itos == m.vocab.itos
    for k, v in m.params.items():
        assert back.params[k].data.tobytes() == v.data.tobytes()
    assert predict(back, RECORDS[2]) == predict(m, RECORDS[2])


def estimator_grad_error(seed: int, mode="reference", max_coords=None) -> float:
    """loss = mse(predictions, targets) through encoder and head, d=8, L=1, 64-bit."""
    rng = np.random.default_rng(seed)
    m = build_estimator(mode, RECORDS, hidden=(5, 3), seed=seed, dim=8, layers=1, heads=2,
                        positional="learned").astype(np.float64)
    batch = [RECORDS[i] for i in rng.choice(len(RECORDS), size=2, replace=False)]
    target = Tensor(rng.random(2))
    names = list(m.params)

    def f(xs):
        for name, x in zip(names, xs):
            if name.startswith("encoder."):
                m.encoder.params[name[len("encoder."):]] = x
            else:
                m.head.params[name] = x
        return T.mse_loss(m.forward(batch), target)

    return grad_check(f, [m.params[n] for n in names], max_coords=max_coords, seed=seed)


@pytest.mark.parametrize("mode", list(EstimatorMode))
def test_end_to_end_gradient_check_full(mode):
    assert estimator_grad_error(0, mode) < 1e-3


def test_end_to_end_gradient_check_seeds():
    assert max(estimator_grad_error(s, max_coords=30) for s in range(1, 21)) < 1e-3
