"""Linear fits, evaluation metrics and feature assembly."""

import math

import numpy as np
import pytest
from conftest import make_node, offline, online
from hypothesis import given
from hypothesis import strategies as st

from icosched.errors import DegenerateFit, IncompleteSnapshot, ShapeError
from icosched.prediction import (
    FEATURE_NAMES,
    LinearModel,
    build_feature_vector,
    evaluate,
    fit_linear,
    predict_resources,
)
from icosched.prediction.features import HW_EVENTS, HW_SLICE, N_FEATURES, PERF_METRICS, PERF_SLICE, RUNQLAT_SLICE

# ---------------------------------------------------------------- fit_linear


def test_fit_exact_line():
    m = fit_linear([(0, 1), (1, 3), (2, 5)])
    assert m.slope == pytest.approx(2.0) and m.intercept == pytest.approx(1.0)


def test_fit_constant():
    m = fit_linear([(1, 4), (2, 4), (3, 4)])
    assert m.slope == 0.0 and m.intercept == pytest.approx(4.0)


def test_fit_hand_computed_ols():
    m = fit_linear([(0, 0), (1, 1), (2, 3)])
    assert m.slope == pytest.approx(1.5, abs=1e-12)
    assert m.intercept == pytest.approx(-1 / 6, abs=1e-12)


def test_fit_degenerate_inputs():
    with pytest.raises(DegenerateFit):
        fit_linear([(1, 2)])
    with pytest.raises(DegenerateFit):
        fit_linear([])
    with pytest.raises(DegenerateFit):
        fit_linear([(3, 1), (3, 2), (3, 5)])


@given(
    st.floats(-100, 100), st.floats(-1000, 1000),
    st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=50, unique=True),
)
def test_fit_recovers_noise_free_line(slope, intercept, xs):
    if max(xs) - min(xs) < 1e-3:
        return
    m = fit_linear([(x, slope * x + intercept) for x in xs])
    scale = max(1.0, abs(slope))
    assert abs(m.slope - slope) <= 1e-9 * scale
    assert abs(m.intercept - intercept) <= 1e-9 * max(1.0, abs(intercept), abs(slope) * max(abs(x) for x in xs))


def test_linear_model_roundtrip_and_validation():
    m = LinearModel(0.01, 0.5, "qps", "cpu")
    assert LinearModel.from_dict(m.to_dict()) == m
    with pytest.raises(ValueError):
        LinearModel(math.nan, 0.0)


# ---------------------------------------------------------------- predict_resources


def test_predict_resources_intercept_only():
    cpu, _ = predict_resources(LinearModel(0.01, 0.1), LinearModel(0.0, 1.0), 0)
    assert cpu == pytest.approx(0.1)


def test_predict_resources_direct():
    cpu, mem = predict_resources(LinearModel(0.01, 0.5), LinearModel(0.002, 1.0), 300)
    assert cpu == pytest.approx(3.5)
    assert mem == pytest.approx(1.6)


def test_predict_resources_clamps():
    assert predict_resources(LinearModel(-1.0, 0.0), LinearModel(-2.0, -1.0), 10) == (0.0, 0.0)


def test_predict_resources_rejects_negative_qps():
    with pytest.raises(ValueError):
        predict_resources(LinearModel(1, 0), LinearModel(1, 0), -1)


# ---------------------------------------------------------------- evaluate


def test_evaluate_perfect():
    m = evaluate([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (m.mae, m.mse, m.mape, m.r2) == (0.0, 0.0, 0.0, 1.0)


def test_evaluate_mean_predictor_has_zero_r2():
    t = [1.0, 2.0, 6.0]
    assert evaluate([3.0] * 3, t).r2 == pytest.approx(0.0, abs=1e-15)


def test_evaluate_hand_example():
    m = evaluate([2, 4], [1, 5])
    assert m.mae == 1.0 and m.mse == 1.0
    assert m.mape == pytest.approx(0.6)
    assert m.r2 == pytest.approx(0.75)


def test_evaluate_constant_truth_gives_undefined_r2():
    assert evaluate([1.0, 2.0], [4.0, 4.0]).r2 is None


def test_evaluate_skips_zero_truths_in_mape():
    assert evaluate([1.0, 2.0], [0.0, 1.0]).mape == pytest.approx(1.0)


def test_evaluate_shape_errors():
    with pytest.raises(ShapeError):
        evaluate([1.0], [1.0, 2.0])
    with pytest.raises(ShapeError):
        evaluate([], [])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
def test_evaluate_self_is_perfect(t):
    m = evaluate(t, t)
    assert m.mae == 0.0 and m.mse == 0.0 and m.mape == 0.0
    assert m.r2 in (1.0, None)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3, allow_subnormal=False)), min_size=1, max_size=40))
def test_evaluate_invariants(pairs):
    p, t = zip(*pairs)
    m = evaluate(p, t)
    assert m.mae >= 0 and m.mse >= 0 and m.mape >= 0
    assert m.r2 is None or m.r2 <= 1.0


# ---------------------------------------------------------------- features


def test_feature_layout():
    assert N_FEATURES == 246 == len(FEATURE_NAMES) == len(set(FEATURE_NAMES))
    assert FEATURE_NAMES[0] == "qps"
    assert FEATURE_NAMES[PERF_SLICE] == PERF_METRICS and len(PERF_METRICS) == 13
    assert FEATURE_NAMES[HW_SLICE] == HW_EVENTS and len(HW_EVENTS) == 32
    assert HW_EVENTS[0] == "branch-instructions" and HW_EVENTS[-1] == "node-load-misses"
    assert FEATURE_NAMES[RUNQLAT_SLICE][0] == "runqlat_0" and FEATURE_NAMES[-1] == "runqlat_199"


def test_idle_node_vector():
    v = build_feature_vector(make_node(), 100.0)
    assert v.shape == (246,)
    assert v[0] == 100.0
    assert not v[1:].any()


def test_single_service_histogram_passes_through():
    v = build_feature_vector(make_node(services=[online(10, {3: 2})]), 1.0)
    assert v[RUNQLAT_SLICE][3] == 2 and v[RUNQLAT_SLICE].sum() == 2


def test_histograms_are_merged():
    v = build_feature_vector(make_node(services=[online(10, {5: 1}), offline({5: 1})]), 1.0)
    assert v[RUNQLAT_SLICE][5] == 2


def test_perf_and_hw_values_follow_frozen_order():
    perf = {name: float(i) for i, name in enumerate(PERF_METRICS)}
    hw = {name: 100.0 + i for i, name in enumerate(HW_EVENTS)}
    v = build_feature_vector(make_node(perf_metrics=perf, hw_events=hw), 0.0)
    assert list(v[PERF_SLICE]) == [float(i) for i in range(13)]
    assert list(v[HW_SLICE]) == [100.0 + i for i in range(32)]


def test_missing_field_is_named():
    perf = dict.fromkeys(PERF_METRICS, 0.0)
    del perf["mem_cache"]
    with pytest.raises(IncompleteSnapshot) as exc:
        build_feature_vector(make_node(perf_metrics=perf), 1.0)
    assert exc.value.field == "perf_metrics.mem_cache"
    with pytest.raises(IncompleteSnapshot) as exc:
        build_feature_vector(make_node(hw_events=None), 1.0)
    assert exc.value.field == "hw_events"


def test_feature_vector_is_deterministic():
    node = make_node(services=[online(10, {3: 2}), offline({40: 7})])
    assert np.array_equal(build_feature_vector(node, 5.0), build_feature_vector(node, 5.0))
