import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslgm.cohort import CohortSpec, generate_cohort, reference_model
from sslgm.errors import MetricUndefinedError
from sslgm.evaluation import (LogisticBaseline, macro_pr_auc, metrics_report, operating_point, pr_auc,
                              summarize, summary_features, timeliness)
from sslgm.inference import score_episode

from oracles import brute_pr_auc


def test_hand_example():
    assert pr_auc([0.9, 0.8, 0.1], [1, 0, 1]) == 0.5 * (1 / 1 + 2 / 3)
    assert pr_auc([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(0.8333, abs=5e-5)


def test_separating_and_tied():
    assert pr_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert pr_auc([0.5] * 7, [1, 0, 0, 1, 0, 0, 1]) == pytest.approx(3 / 7)


def test_single_class_undefined():
    with pytest.raises(MetricUndefinedError):
        pr_auc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricUndefinedError):
        pr_auc([0.1, 0.2], [0, 0])


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        # coarse grid so ties are common
        s = np.round(rng.random(n), int(rng.integers(1, 3)))
        assert pr_auc(s, y) == brute_pr_auc(s, y)


@settings(max_examples=100, deadline=None)
@given(data=st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=2, max_size=40))
def test_rank_invariance(data):
    # integer scores keep the transform exact so no distinct scores collide
    s = np.array([d[0] for d in data], dtype=float)
    y = np.array([d[1] for d in data])
    if y.min() == y.max():
        return
    assert pr_auc(3 * s ** 3 + 7, y) == pr_auc(s, y)


def test_macro_average():
    s, y = [0.9, 0.8, 0.1], [1, 0, 1]
    assert macro_pr_auc(s, y) == pytest.approx(0.5 * (pr_auc(s, y) + pr_auc([-0.9, -0.8, -0.1], [0, 1, 0])))


def test_operating_points():
    assert operating_point([0.9, 0.7, 0.3, 0.1], [1, 1, 0, 0], "tpr", 0.5) == 0.9
    assert operating_point([0.9, 0.2, 0.6, 0.4], [1, 0, 1, 1], "tpr", 1.0) == 0.4
    with pytest.raises(MetricUndefinedError, match="achievable range"):
        operating_point([0.5, 0.5, 0.5], [1, 0, 0], "ppv", 0.5)


def test_timeliness_thresholds():
    series = [[0.1, 0.2, 0.9], [0.3, 0.3], [0.05]]
    events = [3, 2, 1]
    labels = [1, 0, 1]
    t0 = timeliness(series, 0.0, events, labels)
    assert t0.n_alerts == 3 and t0.tpr == 1.0
    assert t0.lead_hours == [8.0, 0.0]
    t1 = timeliness(series, 1.0 + 1e-9, events, labels)
    assert t1.n_alerts == 0 and t1.tpr == 0.0


def test_timeliness_ignores_post_event_alerts():
    t = timeliness([[0.1, 0.1, 0.9]], 0.5, [2], [1])
    assert t.n_alerts == 0 and t.lead_hours == []


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), thr=st.floats(0, 1))
def test_lead_times_nonnegative(seed, thr):
    rng = np.random.default_rng(seed)
    series = [rng.random(int(rng.integers(1, 10))) for _ in range(8)]
    events = [int(rng.integers(1, len(s) + 1)) for s in series]
    t = timeliness(series, thr, events, rng.integers(0, 2, 8))
    assert all(h >= 0 for h in t.lead_hours)


def test_deteriorating_cohort_gets_early_warning():
    model = reference_model(2.0, p0=(0.2, 0.3, 0.3, 0.15, 0.05), p_down=0.5, duration=(2.0, 0.5))
    c = generate_cohort(CohortSpec(200, model, seed=7))
    series = [score_episode(model, r).R[1:] for r in c.records]
    y = [r.F for r in c.records]
    thr = operating_point([s.max() for s in series], y, "tpr", 0.5)
    t = timeliness(series, thr, [r.J for r in c.records], y)
    assert t.tpr == pytest.approx(0.5, abs=0.05)
    assert t.mean_hours > 0


def test_summaries():
    assert summarize([0.1, 0.5, 0.2]) == 0.5
    assert summarize([0.1, 0.5, 0.2], "last") == 0.2
    assert summarize([0.1, 0.5, 0.2], "horizon", 1) == 0.1
    f = summary_features(np.array([[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]]))
    np.testing.assert_allclose(f, [1, 1, 2, 1, 1, 0])


def test_baseline_separable():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 200)
    X = rng.standard_normal((200, 4))
    X[:, 0] += 4 * (2 * y - 1)
    pred = LogisticBaseline.fit(X, y).predict(X)
    assert pr_auc(pred, y) >= 0.95


def test_report_handles_single_class():
    rep = metrics_report([0.1, 0.2], [0, 0])
    assert rep["pr_auc_icu"] is None and "undefined" in rep
