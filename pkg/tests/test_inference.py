import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslgm.cohort import CohortSpec, PatientRecord, generate_cohort, reference_model
from sslgm.errors import ConfigurationError, DataError
from sslgm.inference import (ComponentFilter, ScoringSession, episode_loglik, score_episode, session_start, session_update,
                             smooth_states)
from sslgm.lgm_core import StateDynamics, kalman_filter, sample_path
from sslgm.model import MixtureModel, SslgmParams
from sslgm.semi_markov import ChainParams

from oracles import chain_marginals


def uninformative(chain, M=2):
    d = StateDynamics(0.5 * np.eye(1), np.ones(1), np.zeros((M, 1)), np.ones(M), np.eye(1))
    return MixtureModel([SslgmParams([d] * chain.N, chain)], np.zeros((1, 2)))


def reference_chain():
    return ChainParams.gamblers_ruin((0.44, 0.54, 0.02), 0.94, 1.4541, 0.839)


def test_initial_state():
    model = reference_model()
    s = session_start(model, [0.3])
    np.testing.assert_allclose(s.state_posterior, (0.44, 0.54, 0.02))
    np.testing.assert_array_equal(s.component_posterior, [1.0])
    assert s.risk == pytest.approx(0.0524, abs=1e-12)


@pytest.mark.parametrize("chain", [
    reference_chain(),
    ChainParams.gamblers_ruin((0.1, 0.3, 0.3, 0.2, 0.1), (0.3, 0.6, 0.45), (1.0, 2.5, 0.7), (0.4, 0.6, 0.3)),
])
def test_uninformative_emissions_follow_chain(chain):
    model = uninformative(chain)
    Y = np.random.default_rng(0).standard_normal((25, 2)) * 5
    tr = score_episode(model, PatientRecord("x", [0.0], Y, 0))
    occ = chain_marginals(chain, 25)
    np.testing.assert_allclose(tr.state_posterior[1:], occ, atol=1e-6)
    h = ComponentFilter(model.components[0]).h
    np.testing.assert_allclose(tr.R[1:], occ @ h, atol=1e-6)


def test_risk_ignores_durations():
    a = ComponentFilter(SslgmParams(reference_model().components[0].dynamics, reference_chain()))
    other = ChainParams.gamblers_ruin((0.44, 0.54, 0.02), 0.94, 5.0, 0.2)
    b = ComponentFilter(SslgmParams(reference_model().components[0].dynamics, other))
    np.testing.assert_array_equal(a.h, b.h)


def separated_model(sep):
    return reference_model(separation=sep)


def test_absorbing_state_recognised_quickly():
    model = separated_model(10.0)
    comp = model.components[0]
    Y = sample_path([comp.dynamics[2]] * 5, 5, 0)[1]
    s = session_start(model, [0.0])
    for y in Y[:3]:
        s.update(y)
    assert s.risk > 0.99


def test_discharge_state_gives_zero_risk():
    model = separated_model(10.0)
    Y = sample_path([model.components[0].dynamics[0]] * 5, 5, 1)[1]
    s = session_start(model, [0.0])
    for y in Y[:3]:
        s.update(y)
    assert s.risk < 0.01


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 30.0))
def test_posteriors_normalised_and_risk_bounded(seed, scale):
    model = reference_model()
    s = session_start(model, [0.0])
    for y in np.random.default_rng(seed).standard_normal((8, 3)) * scale:
        R = s.update(y)
        p = s.state_posterior
        assert 0.0 <= R <= 1.0
        assert abs(p.sum() - 1.0) < 1e-9
        assert abs(s.component_posterior.sum() - 1.0) < 1e-9
        # h = (0, 0.06, 1) for the reference chain
        assert R == pytest.approx(0.06 * p[1] + p[2], abs=1e-12)


def test_rejects_bad_observations_without_mutation():
    s = session_start(reference_model(), [0.0])
    s.update(np.zeros(3))
    before = (s.risk, s.state_posterior.copy(), len(s.history))
    with pytest.raises(DataError):
        s.update([0.0, np.inf, 1.0])
    with pytest.raises(ConfigurationError):
        s.update([0.0, 1.0])
    assert (s.risk, len(s.history)) == (before[0], before[2])
    np.testing.assert_array_equal(s.state_posterior, before[1])


def test_session_update_functional_form():
    s = session_start(reference_model(), [0.0])
    R, s2 = session_update(s, np.ones(3))
    assert s2 is s and R == s.history[-1]


def test_empty_and_identical_episodes():
    model = reference_model()
    empty = PatientRecord("e", [0.0], np.zeros((0, 3)), 0)
    assert len(score_episode(model, empty)) == 1
    Y = np.random.default_rng(2).standard_normal((10, 3))
    a = score_episode(model, PatientRecord("a", [0.0], Y, 0))
    b = score_episode(model, PatientRecord("b", [0.0], Y.copy(), 0))
    assert a.to_csv() == b.to_csv()
    assert len(a) == 11


def test_gpb2_close_to_imm():
    model = reference_model()
    c = generate_cohort(CohortSpec(10, model, seed=4))
    for r in c.records:
        a = score_episode(model, r, mode="imm").R
        b = score_episode(model, r, mode="gpb2").R
        np.testing.assert_allclose(a, b, atol=0.02)


def test_deteriorating_patients_rise_before_absorption():
    # five states, so deterioration passes through intermediate states before ICU transfer
    model = reference_model(2.0, p0=(0.2, 0.3, 0.3, 0.15, 0.05), p_down=0.5, duration=(2.0, 0.5))
    c = generate_cohort(CohortSpec(1000, model, seed=11))
    trials = [r for r in c.records if r.F == 1 and r.J >= 2][:200]
    assert len(trials) == 200
    rises = 0
    for r in trials:
        R = score_episode(model, r).R
        # R[J - 1] is the risk after the last observation preceding the absorbing step
        rises += R[r.J - 1] > R[0]
    assert rises / 200 >= 0.8


def test_smoothing_single_state():
    chain = ChainParams.gamblers_ruin((1.0, 0.0, 0.0), 0.5, 1.0, 0.5)
    model = MixtureModel([SslgmParams(reference_model().components[0].dynamics, chain)], np.zeros((1, 2)))
    out = smooth_states(model, [0.0], np.random.default_rng(0).standard_normal((6, 3)))
    np.testing.assert_array_equal(out.states, 1)


def test_smoothing_accuracy_and_endpoint():
    # dwell times of several steps; single-step states are not identifiable from scale alone
    model = reference_model(3.0, duration=(4.0, 0.4))
    c = generate_cohort(CohortSpec(100, model, seed=5))
    hit = total = 0
    for r, gt in zip(c.records, c.truth):
        if r.J < 2:
            continue
        out = smooth_states(model, r.q, r.Y)
        np.testing.assert_allclose(out.posterior[-1], out.filtered[-1], atol=1e-9)
        hit += np.sum(out.states == gt.step_labels())
        total += r.J
    assert hit / total >= 0.9


def test_trajectory_csv_columns():
    tr = score_episode(reference_model(), PatientRecord("a", [0.0], np.ones((2, 3)), 0))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,R,argmax_state,p_state_1,p_state_2,p_state_3,p_component_1"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == tr.R[0]


def test_hard_rule_uses_most_probable_state():
    model = reference_model()
    Y = np.random.default_rng(3).standard_normal((8, 3)) * 3
    soft = session_start(model, [0.0])
    hard = session_start(model, [0.0], rule="hard")
    h = ComponentFilter(model.components[0]).h
    for y in Y:
        soft.update(y)
        assert hard.update(y) == h[np.argmax(hard.state_posterior)]
    np.testing.assert_array_equal(soft.state_posterior, hard.state_posterior)
    with pytest.raises(ConfigurationError):
        session_start(model, [0.0], rule="viterbi")


def test_episode_loglik_reduces_to_kalman_when_states_share_dynamics():
    d = reference_model().components[0].dynamics[1]
    model = MixtureModel([SslgmParams([d] * 3, reference_chain())], np.zeros((1, 2)))
    Y = np.random.default_rng(5).standard_normal((12, 3))
    rec = PatientRecord("x", [0.0], Y, 0)
    assert episode_loglik(model, rec) == pytest.approx(kalman_filter(d, Y).loglik, abs=1e-9)
    assert episode_loglik(model, PatientRecord("e", [0.0], np.zeros((0, 3)), 0)) == 0.0
