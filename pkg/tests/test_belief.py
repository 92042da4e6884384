import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mergeplan.belief import (
    Belief, BeliefError, ZeroLikelihoodError, belief_reward, entropy, info_gain,
    observation_dist, observation_prob, predict_belief, transition_prob,
    update_belief,
)
from mergeplan.game import RewardWeights
from mergeplan.config import FEATURE_NAMES
from stubs import StubModel, two_type_chain


def latent(*ps):
    return np.array(ps, dtype=float)


# -- Belief type ---------------------------------------------------------------

def test_belief_validates_mass():
    with pytest.raises(BeliefError):
        Belief(np.array([0, 1]), np.array([[0.5, 0.2]]))
    with pytest.raises(BeliefError):
        Belief.at_state(0, latent(0.7, -0.1, 0.4))


def test_root_form_properties():
    b = Belief.at_state(5, latent(0.3, 0.7))
    assert b.is_root
    assert np.allclose(b.latent_marginal(), [0.3, 0.7])
    ids, phys = b.physical_marginal()
    assert list(ids) == [5]
    assert phys[0] == pytest.approx(1.0)


def test_belief_arrays_immutable():
    b = Belief.at_state(0, latent(0.5, 0.5))
    with pytest.raises(ValueError):
        b.weights[0, 0] = 1.0


# -- transition probabilities -----------------------------------------------------

def test_transition_prob_static_latents():
    model = two_type_chain()
    assert transition_prob(model, 0, 0, 0, 1, 1) == 0.0


def test_transition_prob_point_mass_policy():
    model = two_type_chain()
    # type A at state 1 always picks action 0 -> successor 1
    assert transition_prob(model, 1, 0, 0, 1, 0) == 1.0
    assert transition_prob(model, 1, 0, 0, 2, 0) == 0.0


def test_transition_prob_splits_over_actions():
    model = StubModel(
        succ=[[[1, 2]]],
        pol=[[[0.6, 0.4]]],
    )
    assert transition_prob(model, 0, 0, 0, 1, 0) == pytest.approx(0.6)
    assert transition_prob(model, 0, 0, 0, 2, 0) == pytest.approx(0.4)


def test_transition_prob_merges_duplicate_successors():
    model = StubModel(succ=[[[1, 1]]], pol=[[[0.6, 0.4]]])
    assert transition_prob(model, 0, 0, 0, 1, 0) == pytest.approx(1.0)


# -- prediction ---------------------------------------------------------------------

def test_predict_point_mass_chain():
    model = StubModel(succ=[[[1, 1], [1, 1], [2, 2]]], pol=[[[1, 0], [1, 0], [1, 0]]])
    b = Belief.at_state(0, latent(1.0))
    pred = predict_belief(model, b, 0)
    assert list(pred.state_ids) == [1]
    assert pred.weights[0, 0] == pytest.approx(1.0)


def test_predict_two_type_enumeration():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.5, 0.5))
    pred = predict_belief(model, b, 0)
    assert list(pred.state_ids) == [1, 2]
    # joint masses 0.4 / 0.1 (type A) and 0.1 / 0.4 (type B)
    assert np.allclose(pred.weights, [[0.4, 0.1], [0.1, 0.4]])
    ids, phys = pred.physical_marginal()
    assert np.allclose(phys, [0.5, 0.5])
    assert np.allclose(pred.latent_marginal(), b.latent_marginal())


def test_predict_conserves_mass_from_predicted_form():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.5, 0.5))
    pred = predict_belief(model, b, 0)
    pred2 = predict_belief(model, pred, 0)
    assert pred2.weights.sum() == pytest.approx(1.0, abs=1e-12)


# -- observations -----------------------------------------------------------------

def test_observation_prob_outside_support_is_zero():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.5, 0.5))
    assert observation_prob(model, b, 0, 77) == 0.0


def test_observation_dist_sums_to_one():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.25, 0.75))
    _, probs = observation_dist(model, b, 0)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_observation_prob_from_enumeration():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.5, 0.5))
    assert observation_prob(model, b, 0, 1) == pytest.approx(0.5)


# -- Bayes updates -----------------------------------------------------------------

def test_update_bayes_posterior():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.5, 0.5))
    post = update_belief(model, b, 0, 1)
    assert post.is_root
    assert int(post.state_ids[0]) == 1
    assert np.allclose(post.latent_marginal(), [0.8, 0.2])


def test_update_point_mass_prior_unchanged():
    model = two_type_chain()
    b = Belief.at_state(0, latent(1.0, 0.0))
    post = update_belief(model, b, 0, 1)
    assert np.allclose(post.latent_marginal(), [1.0, 0.0])


def test_update_uninformative_likelihood_keeps_prior():
    model = StubModel(
        succ=[[[1, 2], [1, 1], [2, 2]]],
        pol=[
            [[0.7, 0.3], [1, 0], [1, 0]],
            [[0.7, 0.3], [1, 0], [1, 0]],
        ],
    )
    b = Belief.at_state(0, latent(0.35, 0.65))
    post = update_belief(model, b, 0, 1)
    assert np.allclose(post.latent_marginal(), [0.35, 0.65])


def test_update_zero_likelihood_raises_with_payload():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.5, 0.5))
    with pytest.raises(ZeroLikelihoodError) as err:
        update_belief(model, b, 0, 99)
    assert err.value.observation == 99
    assert err.value.action == 0


# -- belief-space reward ---------------------------------------------------------

def test_belief_reward_deterministic_successor():
    model = StubModel(
        succ=[[[1, 1], [1, 1], [2, 2]]],
        pol=[[[1, 0], [1, 0], [1, 0]]],
        reward_state=[0.0, 7.5, -1.0],
    )
    b = Belief.at_state(0, latent(1.0))
    assert belief_reward(model, b, 0) == pytest.approx(7.5)


def test_belief_reward_weighted_sum():
    model = StubModel(
        succ=[[[1, 2]]],
        pol=[[[0.5, 0.5]]],
        reward_state=[0.0, 2.0, 4.0],
    )
    b = Belief.at_state(0, latent(1.0))
    assert belief_reward(model, b, 0) == pytest.approx(3.0)


def test_belief_reward_zero_weights(mini_bundle):
    model = mini_bundle.model
    b = model.prior_belief(10)
    w = RewardWeights((0.0,) * len(FEATURE_NAMES))
    assert belief_reward(model, b, 0, weights=w) == 0.0


def test_belief_reward_matches_slow_path(mini_bundle):
    # the fast table path and the per-state recompute agree on the planner
    # weights (safety deactivated)
    model = mini_bundle.model
    game = mini_bundle.game
    w = RewardWeights(game.weights["R"].omega, deactivate_safety_feature=True)
    b = model.prior_belief(33)
    fast = belief_reward(model, b, 1)
    slow = belief_reward(model, b, 1, weights=w)
    assert fast == pytest.approx(slow, abs=1e-9)


# -- entropy and information gain ---------------------------------------------------

def test_entropy_point_mass_zero():
    assert entropy(Belief.at_state(0, latent(1.0, 0.0))) == 0.0


def test_entropy_uniform_six_types():
    b = Belief.at_state(0, np.full(6, 1 / 6))
    assert entropy(b) == pytest.approx(math.log(6), abs=1e-12)


def test_entropy_two_point_distribution():
    b = Belief.at_state(0, latent(0.8, 0.2))
    expected = -(0.8 * math.log(0.8) + 0.2 * math.log(0.2))
    assert entropy(b) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.5004, abs=1e-4)


def test_info_gain_point_mass_zero():
    model = two_type_chain()
    b = Belief.at_state(0, latent(1.0, 0.0))
    assert info_gain(model, b, 0) == pytest.approx(0.0, abs=1e-12)


def test_info_gain_identical_types_zero():
    model = StubModel(
        succ=[[[1, 2], [1, 1], [2, 2]]],
        pol=[
            [[0.7, 0.3], [1, 0], [1, 0]],
            [[0.7, 0.3], [1, 0], [1, 0]],
        ],
    )
    b = Belief.at_state(0, latent(0.5, 0.5))
    assert info_gain(model, b, 0) == pytest.approx(0.0, abs=1e-12)


def test_info_gain_two_type_enumeration():
    model = two_type_chain()
    b = Belief.at_state(0, latent(0.5, 0.5))
    h_prior = math.log(2)
    h_post = -(0.8 * math.log(0.8) + 0.2 * math.log(0.2))
    expected = h_prior - h_post
    assert info_gain(model, b, 0) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(0.1927, abs=1e-4)


# -- property suites (production model) -----------------------------------------------

@st.composite
def mini_beliefs(draw):
    raw = draw(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=2))
    state = draw(st.integers(min_value=0, max_value=127))
    p = np.array(raw)
    return state, p / p.sum()


@given(mini_beliefs(), st.integers(min_value=0, max_value=3))
@settings(max_examples=60, deadline=None)
def test_normalization_preserved(params, a_r):
    from mergeplan.runtime import RuntimeBundle
    from mergeplan.config import mini_profile
    from conftest import CACHE

    bundle = RuntimeBundle.build(mini_profile(), cache_dir=CACHE)
    state, p = params
    b = Belief.at_state(state, p)
    pred = predict_belief(bundle.model, b, a_r)
    assert abs(pred.weights.sum() - 1.0) <= 1e-9
    ids, probs = observation_dist(bundle.model, b, a_r)
    for o, q in zip(ids, probs):
        if q > 0:
            post = update_belief(bundle.model, b, a_r, int(o))
            assert abs(post.weights.sum() - 1.0) <= 1e-9


@given(mini_beliefs(), st.integers(min_value=0, max_value=3))
@settings(max_examples=60, deadline=None)
def test_info_gain_non_negative(params, a_r):
    from mergeplan.runtime import RuntimeBundle
    from mergeplan.config import mini_profile
    from conftest import CACHE

    bundle = RuntimeBundle.build(mini_profile(), cache_dir=CACHE)
    state, p = params
    b = Belief.at_state(state, p)
    assert info_gain(bundle.model, b, a_r) >= -1e-9


@given(mini_beliefs(), st.integers(min_value=0, max_value=3))
@settings(max_examples=40, deadline=None)
def test_update_consistency_identity(params, a_r):
    """Mixing posteriors by observation probability reproduces the predicted
    belief as a measure over (state, type)."""
    from mergeplan.runtime import RuntimeBundle
    from mergeplan.config import mini_profile
    from conftest import CACHE

    bundle = RuntimeBundle.build(mini_profile(), cache_dir=CACHE)
    state, p = params
    b = Belief.at_state(state, p)
    pred = predict_belief(bundle.model, b, a_r)
    mixed = {}
    ids, probs = observation_dist(bundle.model, b, a_r)
    for o, q in zip(ids, probs):
        if q <= 0:
            continue
        post = update_belief(bundle.model, b, a_r, int(o))
        for t in range(post.n_theta):
            key = (int(o), t)
            mixed[key] = mixed.get(key, 0.0) + q * post.weights[t, 0]
    for j, o in enumerate(pred.state_ids):
        for t in range(pred.n_theta):
            assert pred.weights[t, j] == pytest.approx(
                mixed.get((int(o), t), 0.0), abs=1e-9)


@given(mini_beliefs(), st.integers(min_value=0, max_value=3))
@settings(max_examples=60, deadline=None)
def test_static_latent_marginal_preserved(params, a_r):
    from mergeplan.runtime import RuntimeBundle
    from mergeplan.config import mini_profile
    from conftest import CACHE

    bundle = RuntimeBundle.build(mini_profile(), cache_dir=CACHE)
    state, p = params
    b = Belief.at_state(state, p)
    pred = predict_belief(bundle.model, b, a_r)
    assert np.allclose(pred.latent_marginal(), b.latent_marginal(), atol=1e-12)


@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
@settings(max_examples=60, deadline=None)
def test_entropy_maximal_at_uniform(raw):
    p = np.array(raw)
    p = p / p.sum()
    b = Belief.at_state(0, p)
    uniform = Belief.at_state(0, np.full(4, 0.25))
    assert entropy(b) <= entropy(uniform) + 1e-12


# -- serialization -------------------------------------------------------------------

def test_belief_json_round_trip(mini_bundle):
    b = Belief.at_state(7, np.array([0.7, 0.3]))
    doc = b.to_json(mini_bundle.game.grid, mini_bundle.space)
    assert set(doc) == {"state", "latent"}
    assert sum(e["p"] for e in doc["latent"]) == pytest.approx(1.0)
    back = Belief.from_json(doc, mini_bundle.game.grid, mini_bundle.space)
    assert int(back.state_ids[0]) == 7
    assert np.allclose(back.latent_marginal(), [0.7, 0.3])


def test_predicted_belief_refuses_snapshot_schema(mini_bundle):
    model = mini_bundle.model
    b = model.prior_belief(3)
    pred = predict_belief(model, b, 0)
    if not pred.is_root:
        with pytest.raises(BeliefError):
            pred.to_json(mini_bundle.game.grid, mini_bundle.space)
