import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from glunilm import Seq2SeqDisaggregator
from glunilm.data import synth_household
from glunilm.exceptions import DataError
from glunilm.network import load_checkpoint

SMALL = dict(l_out=8, conv_channels=4, n_res_blocks=1, res_hidden=8, step=4, train_step=8,
             epochs=2, max_steps=15)


@pytest.fixture(scope="module")
def house():
    hh = synth_household(1, 6 * 3600)
    return hh.aggregate.watts, hh.channels["fridge"].watts


@pytest.fixture(scope="module")
def fitted(house):
    return Seq2SeqDisaggregator(**SMALL).fit(*house)


def test_get_params_round_trip():
    est = Seq2SeqDisaggregator(conv_channels=16, learning_rate=0.01)
    params = est.get_params()
    assert params["conv_channels"] == 16 and params["learning_rate"] == 0.01
    assert clone(est).get_params() == params
    est.set_params(epochs=3)
    assert est.epochs == 3


def test_predict_before_fit(house):
    with pytest.raises(NotFittedError):
        Seq2SeqDisaggregator(**SMALL).predict(house[0])


def test_fit_predict(fitted, house):
    agg, _ = house
    pred = fitted.predict(agg)
    assert pred.shape == agg.shape and np.all(pred >= 0)
    assert fitted.n_steps_ == 15 and fitted.history_


def test_segment_lists(fitted, house):
    agg, target = house
    preds = fitted.predict([agg[:900], agg[900:2000]])
    assert [len(p) for p in preds] == [900, 1100]
    est = Seq2SeqDisaggregator(**SMALL).fit([agg[:900], agg[900:]], [target[:900], target[900:]])
    assert est.n_train_windows_ == len(range(0, 893, 8)) + len(range(0, len(agg) - 907, 8))


def test_column_vector_accepted(fitted, house):
    agg, _ = house
    np.testing.assert_array_equal(fitted.predict(agg[:, None]), fitted.predict(agg))


@pytest.mark.parametrize("X, y", [
    (np.zeros(100), np.zeros(99)),
    (np.zeros((100, 2)), np.zeros(100)),
    (np.full(100, np.nan), np.zeros(100)),
])
def test_invalid_inputs(X, y):
    with pytest.raises((DataError, ValueError)):
        Seq2SeqDisaggregator(**SMALL).fit(X, y)


def test_score_is_r2(fitted, house):
    agg, target = house
    assert fitted.score(agg, target) <= 1.0


def test_checkpoint_round_trip(fitted, house, tmp_path):
    path = tmp_path / "est.ckpt"
    fitted.to_checkpoint().save(path)
    restored = Seq2SeqDisaggregator.from_checkpoint(load_checkpoint(path), step=4)
    agg, _ = house
    np.testing.assert_array_equal(restored.predict(agg), fitted.predict(agg))
    assert restored.appliance_divisor == 500.0


def test_fit_is_deterministic(house):
    a = Seq2SeqDisaggregator(**SMALL).fit(*house)
    b = Seq2SeqDisaggregator(**SMALL).fit(*house)
    assert all(np.array_equal(a.network_.params[k], b.network_.params[k]) for k in a.network_.params)


def test_rebalance_option(house):
    agg, target = house
    est = Seq2SeqDisaggregator(**{**SMALL, "appliance": "lighting"}, rebalance_p_target=0.9)
    assert len(est.make_pairs(agg, target)) < len(Seq2SeqDisaggregator(**SMALL).make_pairs(agg, target))


def test_custom_appliance_needs_both_overrides():
    with pytest.raises(DataError):
        Seq2SeqDisaggregator(appliance="kettle").appliance_spec()
    spec = Seq2SeqDisaggregator(appliance="kettle", appliance_divisor=2000.0, on_threshold=30.0).appliance_spec()
    assert (spec.divisor, spec.on_threshold) == (2000.0, 30.0)
