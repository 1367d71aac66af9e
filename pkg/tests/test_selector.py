from types import SimpleNamespace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hopc.features import FeatureVector
from hopc.selector import (EngineChoice, FingerprintMismatch, LabeledDesign, SelectorError, SelectorModel,
                           TrainConfig, TrainingDiverged, auc_pairwise_loss, bbl_bias, label_designs,
                           label_from_mse, phi, predict_engine, train_selector, training_accuracy)

FP = "planted:d=5"


def planted(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    X[:, 0] = np.where(np.abs(X[:, 0]) < 0.2, np.sign(X[:, 0] + 1e-9) * 0.2, X[:, 0])
    return [LabeledDesign(f"p{i}", FeatureVector(x, "planted", FP),
                          EngineChoice.ILT if x[0] > 0 else EngineChoice.MB_OPC, 1.0, 1.0) for i, x in enumerate(X)]


# the default l2 is tuned for thousands of DCT features; on five planted ones it
# shrinks the margin enough to misplace a couple of points near the boundary
SHARP = dict(epochs=200, learning_rate=0.5, l2=1e-3)


def zero_model(bias, d=3):
    return SelectorModel(np.zeros(d), bias, np.zeros(d), np.ones(d), FP)


def fv(values):
    return FeatureVector(np.asarray(values, dtype=float), "planted", FP)


# ---------------------------------------------------------------- labels

def test_label_examples():
    assert label_from_mse(53816, 49893) == EngineChoice.ILT
    assert label_from_mse(41382, 50369) == EngineChoice.MB_OPC
    assert label_from_mse(100.0, 100.0) == EngineChoice.MB_OPC


def test_label_designs_pairs():
    res = {
        "d1": (SimpleNamespace(engine="ILT", mse=49893.0), SimpleNamespace(engine="MB-OPC", mse=53816.0)),
        "d2": (SimpleNamespace(engine="MB-OPC", mse=41382.0), SimpleNamespace(engine="ILT", mse=50369.0)),
    }
    out = label_designs(res)
    assert [ld.label for ld in out] == [EngineChoice.ILT, EngineChoice.MB_OPC]
    assert out[0].mse_mb == 53816.0 and out[0].mse_ilt == 49893.0


def test_label_designs_missing_engine():
    with pytest.raises(SelectorError, match="MB_OPC"):
        label_designs({"d": (SimpleNamespace(engine="ILT", mse=1.0), None)})
    with pytest.raises(SelectorError):
        label_designs({"d": (SimpleNamespace(engine="FOO", mse=1.0), SimpleNamespace(engine="ILT", mse=1.0))})


def test_engine_choice_parse():
    assert EngineChoice.parse("ilt") == EngineChoice.ILT
    assert EngineChoice.parse("MB-OPC") == EngineChoice.MB_OPC
    assert str(EngineChoice.MB_OPC) == "MB_OPC"
    with pytest.raises(ValueError):
        EngineChoice.parse("dual")


# ---------------------------------------------------------------- losses

@pytest.mark.parametrize("beta", [0.0, 1.0, 8.0, 1e6])
def test_bbl_zero_loss(beta):
    assert bbl_bias(0.0, beta) == 0.5


def test_bbl_cutoff():
    assert bbl_bias(0.31, 10) == 0.0
    assert bbl_bias(5.0, 0.1) == 0.0


def test_bbl_high_precision():
    mpmath.mp.dps = 30
    ref = 1 / (1 + mpmath.e ** 3)
    assert bbl_bias(0.3, 10) == pytest.approx(float(ref), rel=1e-14)
    assert float(ref) == pytest.approx(0.04743, abs=1e-5)


def test_bbl_negative_loss():
    with pytest.raises(ValueError):
        bbl_bias(-0.1, 1.0)


def test_auc_squared_hinge():
    assert auc_pairwise_loss([0.4], [0.4], "squared-hinge") == 1.0
    assert auc_pairwise_loss([1.5], [0.5], "squared-hinge") == 0.0


def test_auc_logistic_example():
    mpmath.mp.dps = 30

    def lphi(t):
        return mpmath.log(1 + mpmath.e ** (-mpmath.mpf(t)))
    ref = (lphi("-0.3") + lphi("0.3")) / 2
    got = auc_pairwise_loss([0.2, 0.8], [0.5])
    assert got == pytest.approx(float(ref), rel=1e-14)
    assert got == pytest.approx(0.7044, abs=1e-4)


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.lists(st.floats(-5, 5), min_size=1, max_size=6),
       st.floats(-100, 100), st.sampled_from(["logistic", "squared-hinge"]))
def test_auc_shift_invariance(pos, neg, c, kind):
    base = auc_pairwise_loss(pos, neg, kind)
    moved = auc_pairwise_loss(np.array(pos) + c, np.array(neg) + c, kind)
    assert moved == pytest.approx(base, abs=1e-12)


def test_phi_errors():
    with pytest.raises(ValueError):
        phi(0.0, "hinge")
    with pytest.raises(ValueError):
        auc_pairwise_loss([], [1.0])


# ---------------------------------------------------------------- model

def test_predict_constant_models():
    assert predict_engine(fv([1, 2, 3]), zero_model(1.0)) == EngineChoice.ILT
    assert predict_engine(fv([1, 2, 3]), zero_model(0.0)) == EngineChoice.MB_OPC


def test_fingerprint_mismatch():
    with pytest.raises(FingerprintMismatch):
        predict_engine(FeatureVector(np.ones(3), "dct", "other"), zero_model(0.0))


@pytest.mark.parametrize("loss", ["plain-logistic", "auc-pairwise"])
def test_planted_training_accuracy(loss):
    data = planted(60, 0)
    model = train_selector(data, TrainConfig(loss=loss, **SHARP))
    assert training_accuracy(model, data) == 1.0


def test_bbl_softening_trades_positives():
    # softened positive targets pull the boundary toward the positive class
    data = planted(60, 0)
    plain = train_selector(data, TrainConfig(epochs=200))
    bbl = train_selector(data, TrainConfig(epochs=200, loss="bbl-logistic"))
    assert training_accuracy(bbl, data) >= 0.9
    assert bbl.bias < plain.bias


def test_auc_training_ranks_held_out():
    model = train_selector(planted(60, 0), TrainConfig(loss="auc-pairwise", **SHARP))
    test = planted(80, 1)
    pos = [model.score(ld.features) for ld in test if ld.label == EngineChoice.ILT]
    neg = [model.score(ld.features) for ld in test if ld.label == EngineChoice.MB_OPC]
    auc = np.mean([p > n for p in pos for n in neg])
    assert auc == 1.0


def test_held_out_probe_matches_plant():
    model = train_selector(planted(60, 0), TrainConfig(epochs=200))
    assert predict_engine(fv([2.0, 0, 0, 0, 0]), model) == EngineChoice.ILT
    assert predict_engine(fv([-2.0, 0, 0, 0, 0]), model) == EngineChoice.MB_OPC


def test_zero_epochs_is_tie_class():
    data = planted(20, 3)
    model = train_selector(data, TrainConfig(epochs=0))
    assert not model.weights.any() and model.bias == 0.0
    assert {predict_engine(ld.features, model) for ld in data} == {EngineChoice.MB_OPC}


def test_training_loss_decreases():
    model = train_selector(planted(40, 2), TrainConfig(epochs=100))
    assert model.trace[-1] < model.trace[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_trace():
    with pytest.raises(TrainingDiverged) as exc:
        train_selector(planted(20, 0), TrainConfig(epochs=50, learning_rate=1e300))
    assert exc.value.trace and not np.isfinite(exc.value.trace[-1])


def test_training_input_errors():
    data = planted(10, 0)
    with pytest.raises(SelectorError):
        train_selector([])
    with pytest.raises(SelectorError):
        train_selector([ld for ld in data if ld.label == EngineChoice.ILT])
    odd = LabeledDesign("x", FeatureVector(np.ones(5), "dct", "other"), EngineChoice.ILT, 1, 1)
    with pytest.raises(SelectorError):
        train_selector(data + [odd])


@pytest.mark.parametrize("bad", [dict(epochs=-1), dict(learning_rate=0), dict(loss="hinge"),
                                 dict(phi="exp"), dict(l2=-1)])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_save_load_exact(tmp_path):
    model = train_selector(planted(30, 5), TrainConfig(epochs=50, seed=9))
    path = tmp_path / "m.txt"
    model.save(path)
    back = SelectorModel.load(path)
    np.testing.assert_array_equal(back.weights, model.weights)
    np.testing.assert_array_equal(back.mean, model.mean)
    np.testing.assert_array_equal(back.std, model.std)
    assert back.bias == model.bias and back.fingerprint == FP and back.seed == 9
    probe = fv([0.3, -1, 2, 0.5, 0])
    assert back.score(probe) == model.score(probe)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("hello\n")
    with pytest.raises(SelectorError):
        SelectorModel.load(p)
    zero_model(0.0).save(p)
    p.write_text(p.read_text().replace("dimension 3", "dimension 4"))
    with pytest.raises(SelectorError):
        SelectorModel.load(p)
