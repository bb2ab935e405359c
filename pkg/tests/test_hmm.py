"""HMM engine tests against brute-force and straight-from-formula oracles."""

import itertools
import math

import numpy as np
import pytest

from inkrecog.errors import (
    EmissionMismatchError,
    InvariantError,
    NotGaussianError,
    ZeroProbabilityError,
)
from inkrecog.hmm import (
    TOPOLOGY_ERGODIC,
    TOPOLOGY_LTR,
    DiscreteEmission,
    GaussianMixtureEmission,
    HmmModel,
    TrainConfig,
    backward,
    forward,
    model_from_json,
    model_to_json,
    posteriors,
    reestimate,
    sample,
    split_mixtures,
    train,
    training_posteriors,
    viterbi,
)

from oracles import (
    enumerate_likelihood,
    enumerate_viterbi,
    random_discrete_model,
    random_gmm_model,
    unscaled_baum_welch_discrete,
)


# ---------------------------------------------------------------------------
# hand-worked 2-state fixture: the four paths for O=(sym0, sym1) have
# probabilities 0.0378, 0.1296, 0.0032, 0.0384 summing to 0.2090.

def two_state_model():
    return HmmModel(
        pi=np.array([0.6, 0.4]),
        trans=np.array([[0.7, 0.3], [0.4, 0.6]]),
        emission=DiscreteEmission(np.array([[0.9, 0.1], [0.2, 0.8]])),
    )


def test_forward_hand_value():
    res = forward(two_state_model(), np.array([0, 1]))
    assert math.exp(res.log_likelihood) == pytest.approx(0.2090, abs=1e-12)


def test_viterbi_hand_value():
    res = viterbi(two_state_model(), np.array([0, 1]))
    assert list(res.path) == [0, 1]
    assert math.exp(res.log_prob) == pytest.approx(0.1296, abs=1e-12)


def test_gamma_hand_value():
    post = posteriors(two_state_model(), np.array([0, 1]))
    assert post.gamma[0] == pytest.approx([0.8010, 0.1990], abs=5e-5)


def test_forward_matches_enumeration_hand_case():
    model = two_state_model()
    res = forward(model, np.array([0, 1]))
    assert res.log_likelihood == pytest.approx(
        math.log(enumerate_likelihood(model, np.array([0, 1]))), rel=1e-12)


# ---------------------------------------------------------------------------
# oracle equivalence on random models

@pytest.mark.parametrize("seed", range(25))
def test_forward_matches_path_enumeration(seed):
    rng = np.random.default_rng([seed, 11])
    model = random_discrete_model(rng, n=int(rng.integers(2, 5)),
                                  m=int(rng.integers(2, 5)))
    T = int(rng.integers(1, 8))
    obs = rng.integers(0, model.emission.n_symbols, size=T)
    res = forward(model, obs)
    truth = enumerate_likelihood(model, obs)
    assert res.log_likelihood == pytest.approx(math.log(truth), rel=1e-10)


@pytest.mark.parametrize("seed", range(25))
def test_viterbi_matches_path_enumeration(seed):
    rng = np.random.default_rng([seed, 13])
    model = random_discrete_model(rng, n=int(rng.integers(2, 5)),
                                  m=int(rng.integers(2, 5)))
    T = int(rng.integers(1, 8))
    obs = rng.integers(0, model.emission.n_symbols, size=T)
    res = viterbi(model, obs)
    best_path, best_p = enumerate_viterbi(model, obs)
    assert list(res.path) == best_path
    assert res.log_prob == pytest.approx(math.log(best_p), rel=1e-10)


def test_viterbi_tie_takes_lowest_state_index():
    # both states identical => every path has equal probability
    model = HmmModel(
        pi=np.array([0.5, 0.5]),
        trans=np.full((2, 2), 0.5),
        emission=DiscreteEmission(np.array([[0.5, 0.5], [0.5, 0.5]])),
    )
    res = viterbi(model, np.array([0, 1, 0]))
    assert list(res.path) == [0, 0, 0]


@pytest.mark.parametrize("seed", range(10))
def test_forward_backward_identity(seed):
    rng = np.random.default_rng([seed, 17])
    model = random_discrete_model(rng, n=3, m=3)
    obs = rng.integers(0, 3, size=12)
    fwd = forward(model, obs)
    beta = backward(model, obs)
    # sum_i alpha_t(i) * beta_t(i) reconstructs P(O) at every t; with the
    # scaled quantities the product collapses to exactly 1 at every frame
    prod = (fwd.alpha * beta).sum(axis=1)
    assert prod == pytest.approx(np.ones(len(obs)), rel=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_posterior_sums(seed):
    rng = np.random.default_rng([seed, 19])
    model = random_discrete_model(rng, n=4, m=3)
    obs = rng.integers(0, 3, size=10)
    post = posteriors(model, obs)
    assert post.gamma.sum(axis=1) == pytest.approx(np.ones(10), abs=1e-9)
    assert post.xi.sum(axis=2) == pytest.approx(post.gamma[:-1], abs=1e-9)


# ---------------------------------------------------------------------------
# re-estimation against the unscaled straight-from-formula oracle

@pytest.mark.parametrize("seed", range(10))
def test_reestimate_matches_unscaled_oracle(seed):
    rng = np.random.default_rng([seed, 23])
    model = random_discrete_model(rng, n=int(rng.integers(2, 4)), m=3)
    batch = [rng.integers(0, 3, size=int(rng.integers(2, 9)))
             for _ in range(3)]
    got, _ = reestimate(model, batch)
    pi_o, a_o, b_o = unscaled_baum_welch_discrete(model, batch)
    assert got.pi == pytest.approx(pi_o, abs=1e-8)
    assert got.trans == pytest.approx(a_o, abs=1e-8)
    assert got.emission.probs == pytest.approx(b_o, abs=1e-8)


@pytest.mark.parametrize("seed", range(8))
def test_baum_welch_monotone_discrete(seed):
    rng = np.random.default_rng([seed, 29])
    model = random_discrete_model(rng, n=3, m=3)
    batch = [rng.integers(0, 3, size=15) for _ in range(4)]
    cur = model
    prev = -np.inf
    for _ in range(10):
        cur, ll = reestimate(cur, batch)
        assert ll >= prev - 1e-9
        prev = ll


def test_train_stops_on_small_gain():
    rng = np.random.default_rng(31)
    model = random_discrete_model(rng, n=2, m=2)
    batch = [rng.integers(0, 2, size=20) for _ in range(3)]
    _, history = train(model, batch, TrainConfig(theta=1e-4, max_iterations=48))
    assert 1 <= len(history) <= 48
    # gains strictly below theta only at the final step
    for a, b in zip(history, history[1:-1]):
        assert b - a >= 1e-4 or b == history[-1]


def test_gmm_training_monotone():
    rng = np.random.default_rng(37)
    model = random_gmm_model(rng, n=2, k=1, d=2)
    batch = [rng.normal(size=(20, 2)) for _ in range(3)]
    cur, prev = model, -np.inf
    for _ in range(6):
        cur, ll = reestimate(cur, batch)
        assert ll >= prev - 1e-9
        prev = ll


def test_parameter_recovery_two_state_gaussian():
    truth = HmmModel(
        pi=np.array([1.0, 0.0]),
        trans=np.array([[0.9, 0.1], [0.0, 1.0]]),
        emission=GaussianMixtureEmission(
            weights=np.ones((2, 1)),
            means=np.array([[[-2.0, 0.0]], [[2.0, 1.0]]]),
            variances=np.full((2, 1, 2), 0.25),
        ),
        topology=TOPOLOGY_LTR,
    )
    batch = [sample(truth, 100, seed=s)[1] for s in range(50)]
    start = HmmModel(
        pi=np.array([1.0, 0.0]),
        trans=np.array([[0.5, 0.5], [0.0, 1.0]]),
        emission=GaussianMixtureEmission(
            weights=np.ones((2, 1)),
            means=np.array([[[-0.5, 0.0]], [[0.5, 0.5]]]),
            variances=np.ones((2, 1, 2)),
        ),
        topology=TOPOLOGY_LTR,
    )
    trained, _ = train(start, batch, TrainConfig(max_iterations=30))
    err = np.linalg.norm(trained.emission.means - truth.emission.means,
                         axis=-1)
    assert err.max() < 0.1


# ---------------------------------------------------------------------------
# structure, invariants, serialization

def test_validate_rejects_bad_rows():
    with pytest.raises(InvariantError):
        HmmModel(pi=np.array([0.5, 0.5]),
                 trans=np.array([[0.9, 0.3], [0.4, 0.6]]),
                 emission=DiscreteEmission(np.array([[1.0], [1.0]]))).validate()


def test_validate_rejects_skip_transition_in_ltr():
    with pytest.raises(InvariantError):
        HmmModel(pi=np.array([1.0, 0.0, 0.0]),
                 trans=np.array([[0.5, 0.0, 0.5],
                                 [0.0, 0.5, 0.5],
                                 [0.0, 0.0, 1.0]]),
                 emission=DiscreteEmission(np.full((3, 2), 0.5)),
                 topology=TOPOLOGY_LTR).validate()


def test_validate_accepts_exit_mass():
    HmmModel(pi=np.array([1.0, 0.0]),
             trans=np.array([[0.5, 0.5], [0.0, 0.7]]),
             emission=DiscreteEmission(np.full((2, 2), 0.5)),
             topology=TOPOLOGY_LTR,
             exit=np.array([0.0, 0.3])).validate()


def test_emission_mismatch_raises():
    model = two_state_model()
    with pytest.raises(EmissionMismatchError):
        forward(model, np.array([[0.1, 0.2]]))  # floats into discrete model
    with pytest.raises(EmissionMismatchError):
        forward(model, np.array([0, 5]))  # symbol out of range
    with pytest.raises(EmissionMismatchError):
        forward(model, np.array([], dtype=int))


def test_discrete_impossible_observation_raises():
    model = HmmModel(pi=np.array([1.0, 0.0]),
                     trans=np.array([[0.5, 0.5], [0.0, 1.0]]),
                     emission=DiscreteEmission(np.array([[1.0, 0.0],
                                                         [1.0, 0.0]])))
    with pytest.raises(ZeroProbabilityError):
        forward(model, np.array([1]))


def test_split_mixtures_grows_and_preserves_mass():
    rng = np.random.default_rng(41)
    model = random_gmm_model(rng, n=2, k=1, d=3)
    grown = split_mixtures(model, target_components=2)
    em = grown.emission
    assert em.n_components == 2
    assert em.weights.sum(axis=1) == pytest.approx(np.ones(2), abs=1e-12)
    grown.validate()
    # already at target -> unchanged
    assert split_mixtures(grown, target_components=2) is grown


def test_split_mixtures_rejects_discrete():
    with pytest.raises(NotGaussianError):
        split_mixtures(two_state_model(), target_components=2)


def test_sample_deterministic():
    rng = np.random.default_rng(43)
    model = random_gmm_model(rng, n=2, k=1, d=2)
    s1, o1 = sample(model, 30, seed=5)
    s2, o2 = sample(model, 30, seed=5)
    assert np.array_equal(s1, s2)
    assert np.array_equal(o1.frames, o2.frames)


@pytest.mark.parametrize("kind", ["discrete", "gmm"])
def test_model_json_round_trip(kind):
    rng = np.random.default_rng(47)
    if kind == "discrete":
        model = random_discrete_model(rng, n=3, m=4)
    else:
        model = random_gmm_model(rng, n=2, k=2, d=3)
    model = HmmModel(pi=model.pi, trans=model.trans * 0.9,
                     emission=model.emission, topology=model.topology,
                     exit=np.full(model.n_states, 0.1 * model.trans.sum(1)[0]))
    back = model_from_json(model_to_json(model))
    assert np.allclose(back.pi, model.pi)
    assert np.allclose(back.trans, model.trans)
    assert np.allclose(back.exit, model.exit)
    assert back.topology == model.topology
    if kind == "discrete":
        assert np.allclose(back.emission.probs, model.emission.probs)
    else:
        assert np.allclose(back.emission.means, model.emission.means)


def test_model_json_rejects_unknown_version():
    with pytest.raises(InvariantError):
        model_from_json('{"version": 2}')


def test_long_sequence_stays_finite():
    # 2000 frames would underflow an unscaled forward pass
    rng = np.random.default_rng(53)
    model = random_discrete_model(rng, n=3, m=3)
    obs = rng.integers(0, 3, size=2000)
    res = forward(model, obs)
    assert np.isfinite(res.log_likelihood)
    assert res.log_likelihood < 0


@pytest.mark.parametrize("seed", range(6))
def test_training_posteriors_matches_full_posteriors(seed):
    rng = np.random.default_rng(seed)
    model = (random_discrete_model(rng, 4, 3)
             if seed % 2 else random_gmm_model(rng, 3, 2, 2))
    if seed % 2:
        obs = rng.integers(0, 3, size=12)
    else:
        obs = rng.normal(size=(12, 2))
    full = posteriors(model, obs)
    ll, gamma, xi_sum = training_posteriors(model, obs)
    assert ll == pytest.approx(full.log_likelihood, rel=1e-12)
    np.testing.assert_allclose(gamma, full.gamma, atol=1e-12)
    np.testing.assert_allclose(xi_sum, full.xi.sum(axis=0), atol=1e-12)


def test_training_posteriors_terminal_weighting():
    rng = np.random.default_rng(11)
    model = random_gmm_model(rng, 3, 2, 2)
    obs = rng.normal(size=(9, 2))
    terminal = np.array([0.0, 0.0, 1.0])
    full = posteriors(model, obs, terminal=terminal)
    ll, gamma, xi_sum = training_posteriors(model, obs, terminal=terminal)
    assert ll == pytest.approx(full.log_likelihood, rel=1e-12)
    np.testing.assert_allclose(gamma, full.gamma, atol=1e-12)
    np.testing.assert_allclose(xi_sum, full.xi.sum(axis=0), atol=1e-12)
