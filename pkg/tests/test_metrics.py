import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsedepth.exceptions import UndefinedMetricError
from sparsedepth.metrics import MetricConfig, align_scores_to_depth, delta_acc, rmse, si_rmse, whdr
from sparsedepth.pairs import OrdinalPair

from oracles import delta_naive, rmse_naive, si_rmse_naive, whdr_naive


def _pairs4():
    return [
        OrdinalPair((0, 0), (0, 1), 1),
        OrdinalPair((0, 1), (1, 1), 1),
        OrdinalPair((1, 0), (1, 1), 1),
        OrdinalPair((0, 0), (1, 0), -1),
    ]


def test_whdr_perfect_and_inverted():
    pred = np.array([[3.0, 2.0], [4.0, 1.0]])
    pairs = _pairs4()
    assert whdr(pred, pairs) == 0.0
    assert whdr(-pred, pairs) == 1.0


def test_whdr_weighted_hand_case():
    pred = np.array([[2.0, 1.0, 0.0]])
    pairs = [
        OrdinalPair((0, 0), (0, 1), 1, 1.0),
        OrdinalPair((0, 1), (0, 2), 1, 1.0),
        OrdinalPair((0, 0), (0, 2), -1, 2.0),
    ]
    assert whdr(pred, pairs) == pytest.approx(0.5, abs=1e-12)


def test_whdr_empty_is_undefined():
    with pytest.raises(UndefinedMetricError):
        whdr(np.zeros((2, 2)), [])


def test_whdr_equality_tolerance():
    pred = np.array([[1.0, 1.05]])
    pairs = [OrdinalPair((0, 0), (0, 1), 0)]
    assert whdr(pred, pairs) == 1.0
    assert whdr(pred, pairs, MetricConfig(whdr_equality_tolerance=0.1)) == 0.0


def test_whdr_rejects_bad_relation_and_bounds():
    with pytest.raises(ValueError):
        whdr(np.zeros((2, 2)), [OrdinalPair((0, 0), (0, 1), 2)])
    with pytest.raises(IndexError):
        whdr(np.zeros((2, 2)), [OrdinalPair((0, 0), (0, 5), 1)])


def test_rmse_examples():
    gt = np.arange(6.0).reshape(2, 3)
    assert rmse(gt, gt) == 0.0
    assert rmse(gt + 1, gt) == pytest.approx(1.0)
    assert rmse([0.0, 2.0], [1.0, 1.0]) == pytest.approx(1.0, abs=1e-12)


def test_delta_examples():
    gt = np.array([1.0, 2.0, 5.0])
    assert delta_acc(gt, gt) == 1.0
    assert delta_acc(1.3 * gt, gt, 1.25) == 0.0
    assert delta_acc([1.0, 2.0], [1.0, 3.0], 1.25) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        delta_acc([0.0], [1.0])


def test_si_rmse_examples():
    gt = np.array([1.0, 2.0, 4.0])
    assert si_rmse(gt, gt) == pytest.approx(0.0, abs=1e-12)
    assert si_rmse(7.5 * gt, gt) == pytest.approx(0.0, abs=1e-7)
    assert si_rmse([1.0, math.e ** 2], [1.0, 1.0]) == pytest.approx(1.0, abs=1e-7)


def test_metric_config_validation():
    with pytest.raises(ValueError):
        MetricConfig(delta_threshold=1.0)
    with pytest.raises(ValueError):
        MetricConfig(log_epsilon=-1)


def test_align_scores_recovers_exact_log_linear_map():
    scores = np.linspace(-1, 1, 20).reshape(4, 5)
    gt = np.exp(-0.7 * scores + 1.2)
    np.testing.assert_allclose(align_scores_to_depth(scores, gt), gt, rtol=1e-10)


@st.composite
def instance(draw):
    h, w = draw(st.integers(2, 32)), draw(st.integers(2, 32))
    seed = draw(st.integers(0, 2**31 - 1))
    n = draw(st.integers(1, 50))
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(h, w))
    # quantise some values so ties occur
    pred[rng.random((h, w)) < 0.3] = 0.5
    gt = rng.uniform(0.5, 10, size=(h, w))
    pairs = [
        OrdinalPair((int(rng.integers(h)), int(rng.integers(w))), (int(rng.integers(h)), int(rng.integers(w))),
                    int(rng.choice([-1, 0, 1])), float(rng.uniform(0.1, 3)))
        for _ in range(n)
    ]
    return pred, gt, pairs


@settings(max_examples=60, deadline=None)
@given(instance(), st.sampled_from([0.0, 0.3]))
def test_metrics_match_naive(inst, tol):
    pred, gt, pairs = inst
    assert abs(whdr(pred, pairs, MetricConfig(whdr_equality_tolerance=tol)) - whdr_naive(pred, pairs, tol)) <= 1e-9
    pos = np.abs(pred) + 0.1
    assert abs(rmse(pred, gt) - rmse_naive(pred, gt)) <= 1e-9
    assert abs(delta_acc(pos, gt) - delta_naive(pos, gt)) <= 1e-9
    assert abs(si_rmse(pos, gt) - si_rmse_naive(pos, gt)) <= 1e-9
