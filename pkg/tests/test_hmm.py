import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multilevel_readout.hmm import (
    CorruptInputError, HiddenMarkovModel, LogicalOutcome, brute_force_posterior, build_emission,
    build_transition, classify_mle, emission_from_flip_probs, forward_backward, generator,
    majority_prefix_labels, majority_vote, mle_prefix_labels,
)
from multilevel_readout.params import SystemParams, get_code


def series_expm(G, tau, terms=20):
    out = np.eye(G.shape[0])
    term = np.eye(G.shape[0])
    for k in range(1, terms + 1):
        term = term @ G * tau / k
        out = out + term
    return out


def test_no_dynamics_is_identity():
    np.testing.assert_array_equal(build_transition(6, 0.0, 0.0, 1e-3), np.eye(7))


def test_two_level_decay():
    T = build_transition(1, 4.8e-3, 0.0, 1.0)
    assert T[0, 1] == pytest.approx(-math.expm1(-4.8e-3), abs=1e-12)
    assert T[0, 1] == pytest.approx(4.7885e-3, abs=5e-8)


def test_series_oracle():
    G = generator(5, 4.8e-3, 2.7e-4)
    T = build_transition(5, 4.8e-3, 2.7e-4, 1.0)
    np.testing.assert_allclose(T, series_expm(G, 1.0), atol=1e-12)
    assert T[1, 2] == pytest.approx(series_expm(G, 1.0)[1, 2], abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(nmax=st.integers(1, 12), kd=st.floats(0, 5e3), ku=st.floats(0, 5e3), tau=st.floats(0, 1e-3))
def test_transition_column_stochastic(nmax, kd, ku, tau):
    T = build_transition(nmax, kd, ku, tau)
    assert np.all(T >= 0) and np.all(T <= 1)
    np.testing.assert_allclose(T.sum(axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("args", [(3, -1.0, 0.0, 1.0), (3, 1.0, -1.0, 1.0), (3, 1.0, 1.0, -1.0)])
def test_transition_rejects_negative(args):
    with pytest.raises(ValueError):
        build_transition(*args)


def test_emission_examples():
    c = get_code("fock-0-5")
    E = build_emission(c, 5.2e-2, 1.5e-3, 10)
    assert E[0, 1] == pytest.approx(0.948)
    assert E[5, 0] == pytest.approx(0.9985)
    np.testing.assert_allclose(E.sum(axis=1), 1.0, atol=1e-12)
    E0 = build_emission(c, 0.0, 0.0, 10)
    assert set(np.unique(E0)) == {0.0, 1.0}
    with pytest.raises(ValueError):
        build_emission(c, 0.5, 0.01, 10)


def test_perfect_emission_single_flip():
    c = get_code("fock-0-5")
    post = forward_backward([1], [1e-6], c.prior_vector(10), lambda d: np.eye(11),
                            build_emission(c, 0, 0, 10))
    assert post[0] == 1.0


def _random_instance(rng, nmax, N):
    kd, ku = rng.uniform(0, 0.3, size=2)
    durations = rng.uniform(0.2, 2.0, size=N)
    prior = rng.dirichlet(np.ones(nmax + 1))
    E = emission_from_flip_probs(rng.uniform(0.02, 0.98, size=nmax + 1))
    y = rng.integers(0, 2, size=N)
    return y, durations, prior, (lambda d: build_transition(nmax, kd, ku, d)), E


def test_forward_backward_matches_enumeration(rng):
    for _ in range(100):
        nmax = int(rng.integers(1, 4))
        N = int(rng.integers(0, 6))
        inst = _random_instance(rng, nmax, N)
        np.testing.assert_allclose(forward_backward(*inst), brute_force_posterior(*inst), atol=1e-10)


def test_enumeration_of_empty_sequence_returns_prior():
    prior = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(brute_force_posterior([], [], prior, lambda d: np.eye(3), np.ones((3, 2)) / 2),
                                  prior)


def test_enumeration_limit():
    with pytest.raises(ValueError):
        brute_force_posterior([0] * 10, [1.0] * 10, np.ones(11), lambda d: np.eye(11), np.ones((11, 2)) / 2)


def test_zero_likelihood_is_corrupt():
    c = get_code("fock-0-3")
    E = build_emission(c, 0, 0, 3)
    prior = np.array([0, 0, 0, 1.0])          # only n=3, never flips
    for f in (forward_backward, brute_force_posterior):
        with pytest.raises(CorruptInputError):
            f([1], [1.0], prior, lambda d: np.eye(4), E)


def test_length_mismatch():
    with pytest.raises(ValueError):
        forward_backward([0, 1], [1.0], np.ones(3), lambda d: np.eye(3), np.ones((3, 2)) / 2)


@pytest.mark.parametrize("delta", [0.05, 0.2])
def test_iid_bayes_update(delta):
    c = get_code("fock-0-3")
    E = build_emission(c, delta, delta, 3)
    prior = np.array([0.3, 0.0, 0.0, 0.7])
    y = [1, 0, 1, 1, 1, 0, 1]
    post = forward_backward(y, [1.0] * len(y), prior, lambda d: np.eye(4), E)
    agree = sum(y)  # votes pointing at n=0
    odds = prior[0] / prior[3] * ((1 - delta) / delta) ** (agree - (len(y) - agree))
    assert post[0] / post[3] == pytest.approx(odds, rel=1e-12)


def test_permutation_invariance(rng):
    c = get_code("binomial-1")
    E = build_emission(c, 0.1, 0.05, 6)
    y = rng.integers(0, 2, size=9)
    prior = c.prior_vector(6)
    a = forward_backward(y, [1.0] * 9, prior, lambda d: np.eye(7), E)
    b = forward_backward(rng.permutation(y), [1.0] * 9, prior, lambda d: np.eye(7), E)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_long_sequence_stays_normalized(params, rng):
    c = get_code("fock-0-5")
    m = HiddenMarkovModel.from_params(params, c)
    y = rng.integers(0, 2, size=50)
    post, ll = forward_backward(y, [params.cycle_time] * 50, c.prior_vector(10), m, m.emission,
                                return_loglik=True)
    assert post.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.isfinite(ll)


def test_monotone_information():
    """Bayes error of the MLE classifier cannot grow with more independent votes."""
    c = get_code("fock-0-3")
    E = build_emission(c, 0.12, 0.08, 3)
    prior = c.prior_vector(3)
    errs = []
    for N in range(1, 11):
        err = 0.0
        for y in itertools.product((0, 1), repeat=N):
            like = np.prod([E[:, v] for v in y], axis=0)
            joint = prior * like
            lbl = classify_mle(joint / joint.sum(), c)
            err += joint[3] if lbl == 0 else joint[0]
        errs.append(err)
    assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))


def test_classify_examples():
    b1 = get_code("binomial-1")
    post = np.zeros(11)
    post[[0, 4, 2]] = [0.3, 0.3, 0.3]
    post[2] = 0.3
    post[0], post[4] = 0.4, 0.2
    assert classify_mle(post, b1) == b1_label_of_superposition(b1)
    f5 = get_code("fock-0-5")
    p5 = np.zeros(11)
    p5[5] = 1
    assert classify_mle(p5, f5) == LogicalOutcome.ONE
    tie = np.zeros(11)
    tie[0] = tie[5] = 0.5
    assert classify_mle(tie, f5) == LogicalOutcome.ZERO


def b1_label_of_superposition(code):
    return LogicalOutcome.ONE if 0 in code.support(1) else LogicalOutcome.ZERO


def test_majority_examples():
    assert majority_vote([1, 1, 0]) == LogicalOutcome.ZERO
    assert majority_vote([0]) == LogicalOutcome.ONE
    assert majority_vote([1, 1, 0, 0]) == LogicalOutcome.ZERO


def test_prefix_labels_match_scalar(rng, params):
    c = get_code("binomial-2")
    m = HiddenMarkovModel.from_params(params, c)
    out = rng.integers(0, 2, size=(30, 7)).astype(np.uint8)
    its = rng.integers(1, 3, size=(30, 7)).astype(np.uint16)
    first = params.t_readout_reset + params.t_map
    maj = majority_prefix_labels(out)
    mle = mle_prefix_labels(out, its, c, m, first, params.t_map, params.t_readout_reset)
    for i in range(30):
        durs = [first] + [params.t_map + k * params.t_readout_reset for k in its[i, :-1]]
        for N in range(1, 8):
            assert maj[i, N - 1] == majority_vote(out[i, :N])
            post = forward_backward(out[i, :N], durs[:N], c.prior_vector(params.n_max), m, m.emission)
            assert mle[i, N - 1] == classify_mle(post, c)
