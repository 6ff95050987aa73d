"""Hidden Markov model of repeated photon-number-parity-style readout.

The hidden state is the storage photon number ``n`` in ``0..n_max``. Between
readouts it evolves under a truncated birth-death generator; each readout
emits a binary vote (1 = ancilla flipped, i.e. ``n`` in the flip set).

Transition matrices are column-stochastic: ``T[m, n] = P(n -> m)``.
Emission matrices have shape ``(n_max + 1, 2)`` with ``E[n, y] = P(y | n)``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from . import _backend
from .params import CodeSpec, SystemParams

NO_FLIP = 0
FLIP = 1

#: largest path count brute_force_posterior will enumerate
ENUMERATION_LIMIT = 10**7


class LogicalOutcome(IntEnum):
    ZERO = 0
    ONE = 1


class CorruptInputError(ValueError):
    """The outcome sequence has zero likelihood under the model."""


def generator(n_max: int, kappa_down: float, kappa_up: float) -> np.ndarray:
    """Birth-death rate matrix with gain out of ``n_max`` removed."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if kappa_down < 0 or kappa_up < 0:
        raise ValueError("rates must be non-negative")
    dim = n_max + 1
    G = np.zeros((dim, dim))
    for n in range(dim):
        if n > 0:
            G[n - 1, n] += n * kappa_down
        if n < n_max:
            G[n + 1, n] += (n + 1) * kappa_up
        G[n, n] = -G[:, n].sum()
    return G


def build_transition(n_max: int, kappa_down: float, kappa_up: float, duration: float) -> np.ndarray:
    """Photon-number transition matrix ``exp(G * duration)``.

    Parameters
    ----------
    n_max : int
        Fock truncation.
    kappa_down, kappa_up : float
        Single-photon loss rate and gain rate, 1/s.
    duration : float
        Evolution time in seconds.

    Returns
    -------
    ndarray, shape (n_max+1, n_max+1)
        Column-stochastic matrix, ``T[m, n] = P(n -> m)``.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    G = generator(n_max, kappa_down, kappa_up)
    T = expm(G * duration)
    # expm leaves O(eps) negative entries and column-sum drift; both are
    # repaired so that downstream probabilities stay in [0, 1].
    np.clip(T, 0.0, 1.0, out=T)
    T /= T.sum(axis=0, keepdims=True)
    return T


def build_emission(code: CodeSpec, delta_in: float, delta_out: float, n_max: int) -> np.ndarray:
    """Binary emission matrix for a code's flip set.

    ``delta_in`` is the vote error for ``n`` in the flip set (a missing flip),
    ``delta_out`` the error for ``n`` outside it (a spurious flip).
    """
    for name, d in (("delta_in", delta_in), ("delta_out", delta_out)):
        if not (0.0 <= d < 0.5):
            raise ValueError(f"{name} must lie in [0, 0.5), got {d}")
    dim = n_max + 1
    E = np.empty((dim, 2))
    for n in range(dim):
        if n in code.flip_set:
            E[n] = (delta_in, 1.0 - delta_in)
        else:
            E[n] = (1.0 - delta_out, delta_out)
    return E


def emission_from_flip_probs(p_flip: Sequence[float]) -> np.ndarray:
    """Emission matrix from an arbitrary per-``n`` flip probability."""
    p = np.asarray(p_flip, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("flip probabilities must lie in [0, 1]")
    return np.column_stack([1.0 - p, p])


@dataclass
class HiddenMarkovModel:
    """Rates plus emission; transition matrices are built lazily per duration."""

    n_max: int
    kappa_down: float
    kappa_up: float
    emission: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_params(cls, params: SystemParams, code: CodeSpec,
                    delta_in: float | None = None, delta_out: float | None = None) -> "HiddenMarkovModel":
        """Model at the effective loss rate that folds in one demolition per cycle."""
        E = build_emission(
            code,
            params.delta_0 if delta_in is None else delta_in,
            params.delta_1 if delta_out is None else delta_out,
            params.n_max,
        )
        return cls(params.n_max, params.kappa_down_effective, params.storage_kappa_up, E)

    @property
    def dim(self) -> int:
        return self.n_max + 1

    def transition(self, duration: float) -> np.ndarray:
        key = float(duration)
        T = self._cache.get(key)
        if T is None:
            T = build_transition(self.n_max, self.kappa_down, self.kappa_up, key)
            self._cache[key] = T
        return T


TransitionSource = Callable[[float], np.ndarray] | HiddenMarkovModel


def _transition_fn(source: TransitionSource) -> Callable[[float], np.ndarray]:
    return source.transition if isinstance(source, HiddenMarkovModel) else source


def _check_inputs(readouts, durations, prior):
    readouts = [int(y) for y in readouts]
    if len(readouts) != len(durations):
        raise ValueError(f"{len(readouts)} readouts but {len(durations)} durations")
    if any(y not in (0, 1) for y in readouts):
        raise ValueError("readouts must be 0 (no flip) or 1 (flip)")
    prior = np.asarray(prior, dtype=float)
    if prior.ndim != 1 or np.any(prior < 0) or prior.sum() <= 0:
        raise ValueError("prior must be a non-negative vector with positive mass")
    return readouts, prior / prior.sum()


def forward_backward(readouts: Sequence[int], durations: Sequence[float], prior,
                     transitions: TransitionSource, emission: np.ndarray,
                     return_loglik: bool = False):
    """Posterior over the initial photon number given a full outcome sequence.

    The i-th readout is preceded by storage evolution over ``durations[i]``.
    Messages are renormalized every step so arbitrarily long sequences stay
    finite; the discarded scale factors are accumulated into the
    log-likelihood.

    Parameters
    ----------
    readouts : sequence of {0, 1}
    durations : sequence of float
    prior : array_like, shape (n_max+1,)
    transitions : HiddenMarkovModel or callable
        Maps a duration to a column-stochastic transition matrix.
    emission : ndarray, shape (n_max+1, 2)
    return_loglik : bool
        Also return ``log P(readouts)``.

    Returns
    -------
    ndarray or (ndarray, float)
    """
    readouts, prior = _check_inputs(readouts, durations, prior)
    trans = _transition_fn(transitions)
    emission = np.asarray(emission, dtype=float)
    N = len(readouts)

    # forward pass: alpha_i(m) = P(n_i = m | y_1..y_i) with scale c_i
    alpha = prior.copy()
    alphas = [alpha]
    loglik = 0.0
    Ts = []
    for i in range(N):
        T = trans(durations[i])
        Ts.append(T)
        alpha = (T @ alpha) * emission[:, readouts[i]]
        c = alpha.sum()
        if not c > 0.0:
            raise CorruptInputError(f"outcome sequence has zero likelihood at readout {i}")
        alpha = alpha / c
        loglik += np.log(c)
        alphas.append(alpha)

    # backward pass down to the initial state
    beta = np.ones_like(prior)
    for i in range(N - 1, -1, -1):
        beta = Ts[i].T @ (emission[:, readouts[i]] * beta)
        beta /= beta.max()

    post = alphas[0] * beta
    post /= post.sum()
    return (post, loglik) if return_loglik else post


def brute_force_posterior(readouts: Sequence[int], durations: Sequence[float], prior,
                          transitions: TransitionSource, emission: np.ndarray) -> np.ndarray:
    """Initial-state posterior by explicit enumeration of every hidden path.

    Verification oracle for :func:`forward_backward`; exponential cost.
    """
    readouts, prior = _check_inputs(readouts, durations, prior)
    trans = _transition_fn(transitions)
    emission = np.asarray(emission, dtype=float)
    dim = prior.shape[0]
    N = len(readouts)
    if dim ** (N + 1) > ENUMERATION_LIMIT:
        raise ValueError(f"{dim}^{N + 1} paths exceed the enumeration limit {ENUMERATION_LIMIT}")
    if N == 0:
        return prior.copy()
    Ts = [trans(d) for d in durations]
    post = np.zeros(dim)
    for path in itertools.product(range(dim), repeat=N + 1):
        p = prior[path[0]]
        for i in range(N):
            p *= Ts[i][path[i + 1], path[i]] * emission[path[i + 1], readouts[i]]
            if p == 0.0:
                break
        post[path[0]] += p
    total = post.sum()
    if not total > 0.0:
        raise CorruptInputError("outcome sequence has zero likelihood")
    return post / total


def classify_mle(posterior, code: CodeSpec) -> LogicalOutcome:
    """Logical label with more posterior mass; exact ties go to ``0_L``."""
    posterior = np.asarray(posterior)
    m0 = sum(posterior[n] for n in code.support(0) if n < posterior.shape[0])
    m1 = sum(posterior[n] for n in code.support(1) if n < posterior.shape[0])
    return LogicalOutcome.ONE if m1 > m0 else LogicalOutcome.ZERO


def majority_vote(readouts: Sequence[int]) -> LogicalOutcome:
    """``0_L`` when flips are at least half of the votes, else ``1_L``."""
    if len(readouts) == 0:
        raise ValueError("need at least one readout")
    flips = sum(int(y) for y in readouts)
    return LogicalOutcome.ZERO if 2 * flips >= len(readouts) else LogicalOutcome.ONE


def majority_prefix_labels(outcomes: np.ndarray) -> np.ndarray:
    """Majority label after each prefix length, for a (trials, N) outcome array."""
    flips = np.cumsum(outcomes, axis=1, dtype=np.int64)
    counts = np.arange(1, outcomes.shape[1] + 1)
    return np.where(2 * flips >= counts, 0, 1).astype(np.uint8)


def mle_prefix_labels(outcomes: np.ndarray, iterations: np.ndarray, code: CodeSpec,
                      model: HiddenMarkovModel, first_interval: float, t_map: float,
                      t_reset: float) -> np.ndarray:
    """MLE label after every prefix length for a batch of protocol trials.

    Equivalent to running :func:`forward_backward` and :func:`classify_mle` on
    each prefix, but computed in one forward sweep per trial by tracking the
    likelihood of the observed prefix conditioned on every codeword component.

    Parameters
    ----------
    outcomes : uint8 array (trials, N)
    iterations : uint16 array (trials, N)
        Reset iterations per cycle; cycle ``c`` lasts ``t_map + k * t_reset``.
    first_interval : float
        Storage evolution before the first readout.
    """
    outcomes = np.ascontiguousarray(outcomes, dtype=np.uint8)
    iterations = np.ascontiguousarray(iterations, dtype=np.uint16)
    k_max = int(iterations.max()) if iterations.size else 1
    trans = np.empty((k_max + 1, model.dim, model.dim))
    trans[0] = model.transition(first_interval)
    for k in range(1, k_max + 1):
        trans[k] = model.transition(t_map + k * t_reset)
    rows, weights, logical = [], [], []
    for lab in (0, 1):
        for n in sorted(code.support(lab)):
            rows.append(n)
            weights.append(code.prior[n])
            logical.append(lab)
    labels = np.zeros(outcomes.shape, dtype=np.uint8)
    _backend.kernels.mle_labels(
        outcomes, iterations, trans, np.ascontiguousarray(model.emission),
        np.asarray(rows, dtype=np.int64), np.asarray(weights, dtype=float),
        np.asarray(logical, dtype=np.uint8), labels,
    )
    return labels


def write_posterior_csv(path, rows: Sequence[tuple]) -> None:
    """Rows of ``(trial_id, posterior_vector)`` -> CSV with one line per (trial, n_0)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "n_0", "probability"])
        for trial_id, post in rows:
            for n, p in enumerate(post):
                w.writerow([trial_id, n, repr(float(p))])
