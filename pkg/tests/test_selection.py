import json
import math

import numpy as np
import pytest

from terracarbon.dataset import SampleTable
from terracarbon.selection import ZeroVarianceError, eliminate_collinear, max_abs_r, pearson_r, vif_scores


def test_pearson_basic():
    x = np.arange(10.0)
    assert pearson_r(x, 2 * x + 1) == pytest.approx(1.0)
    assert pearson_r(x, -x) == pytest.approx(-1.0)
    with pytest.raises(ZeroVarianceError, match="zero variance"):
        pearson_r(x, np.ones(10))


def test_pearson_matches_numpy():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=50), rng.normal(size=50)
    assert pearson_r(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


def test_vif_two_correlated_columns():
    # With two regressors, VIF = 1 / (1 - r^2) for both.
    rng = np.random.default_rng(1)
    a = rng.normal(size=200)
    b = a + 0.5 * rng.normal(size=200)
    r = np.corrcoef(a, b)[0, 1]
    scores = vif_scores(np.column_stack([a, b]), ["a", "b"])
    assert scores["a"] == pytest.approx(1 / (1 - r**2), rel=1e-9)
    assert scores["b"] == pytest.approx(1 / (1 - r**2), rel=1e-9)


def test_vif_exact_duplicate_is_infinite():
    rng = np.random.default_rng(2)
    a = rng.normal(size=50)
    scores = vif_scores(np.column_stack([a, a, rng.normal(size=50)]), ["a", "a2", "c"])
    assert math.isinf(scores["a"]) and math.isinf(scores["a2"])


def test_max_abs_r():
    x = np.arange(10.0)
    out = max_abs_r(np.column_stack([x, -x, np.sin(x)]), ["a", "b", "c"])
    assert out["a"] == pytest.approx(1.0) and out["b"] == pytest.approx(1.0)


def test_elimination_trace_and_stop():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(200, 3))
    X = np.column_stack([base, base[:, 0] + 1e-3 * rng.normal(size=200), base[:, 1] * 2])
    table = SampleTable.from_arrays(X, rng.normal(size=200), ["a", "b", "c", "a_near", "b_double"])
    trace = eliminate_collinear(table)
    assert len(trace.removed) == 2
    assert {"c"} <= set(trace.surviving)
    for step in trace.steps:
        assert step.vif_at_removal >= 10
    d = json.loads(trace.to_json())
    assert d["surviving"] == trace.surviving
    assert d["steps"][0]["vif_at_removal"] == "inf"


def test_elimination_keeps_one_feature():
    x = np.arange(20.0)
    table = SampleTable.from_arrays(np.column_stack([x, x, x]), x)
    trace = eliminate_collinear(table)
    assert len(trace.surviving) == 1
