"""Closed-form infidelity of Fock-code readout under majority voting.

For a Fock code ``|0_L> = |0>``, ``|1_L> = |L>`` read out ``N`` times with
per-round vote errors ``delta0`` / ``delta1`` and per-cycle loss/gain
probabilities ``kdt`` / ``kut``, the leading-order infidelity is the sum of

* relaxation   ``L * (ceil(N/2) * kdt) ** (L - 1)``
* excitation   ``(ceil(N/2) * kut) ** 2``
* vote errors  ``C(N, ceil(N/2)) * delta_i ** ceil(N/2)``, i = 0, 1

The expansion is first order in each mechanism. :func:`majority_error_exact`
evaluates the same voting model exactly for comparison.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, astuple, fields

import numpy as np
from scipy.linalg import expm

from .hmm import generator


class EvenVoteWarning(UserWarning):
    """The closed form assumes an odd number of votes."""


class EvenVoteError(ValueError):
    """Even ``N`` requested without ``allow_even=True``."""


@dataclass(frozen=True)
class InfidelityBreakdown:
    relaxation_term: float
    excitation_term: float
    vote_error_0: float
    vote_error_1: float

    @property
    def total(self) -> float:
        return self.relaxation_term + self.excitation_term + self.vote_error_0 + self.vote_error_1

    def as_row(self) -> tuple:
        return astuple(self) + (self.total,)


CSV_COLUMNS = ("N",) + tuple(f.name for f in fields(InfidelityBreakdown)) + ("total",)


def log_binomial(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _vote_term(N: int, half: int, delta: float) -> float:
    if delta == 0.0:
        return 0.0
    return math.exp(log_binomial(N, half) + half * math.log(delta))


def fock_infidelity(L: int, N: int, kdt: float, kut: float, delta0: float, delta1: float,
                    allow_even: bool = False) -> InfidelityBreakdown:
    """Leading-order majority-vote infidelity of the Fock code of distance ``L``.

    Parameters
    ----------
    L : int
        Code distance, >= 2.
    N : int
        Number of votes. Even values raise :class:`EvenVoteError` unless
        ``allow_even`` is set, in which case an :class:`EvenVoteWarning` is
        emitted and ``ceil(N/2)`` is used as for odd ``N``.
    kdt, kut : float
        Per-cycle loss and gain probabilities, in [0, 1).
    delta0, delta1 : float
        Per-round vote errors for ``|0_L>`` and ``|1_L>``, in [0, 0.5).

    Returns
    -------
    InfidelityBreakdown
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    if N < 1:
        raise ValueError("N must be >= 1")
    if N % 2 == 0:
        if not allow_even:
            raise EvenVoteError(f"N={N} is even; the closed form assumes odd N (pass allow_even=True)")
        warnings.warn(f"closed form evaluated at even N={N}", EvenVoteWarning, stacklevel=2)
    for name, v in (("kdt", kdt), ("kut", kut)):
        if not (0.0 <= v < 1.0):
            raise ValueError(f"{name} must lie in [0, 1), got {v}")
    for name, v in (("delta0", delta0), ("delta1", delta1)):
        if not (0.0 <= v < 0.5):
            raise ValueError(f"{name} must lie in [0, 0.5), got {v}")
    half = (N + 1) // 2
    return InfidelityBreakdown(
        relaxation_term=L * (half * kdt) ** (L - 1),
        excitation_term=(half * kut) ** 2,
        vote_error_0=_vote_term(N, half, delta0),
        vote_error_1=_vote_term(N, half, delta1),
    )


def theory_curves(L: int, N_max: int, kdt: float, kut: float, delta0: float, delta1: float,
                  include_even: bool = False) -> list:
    """``[(N, breakdown), ...]`` for odd ``N`` (optionally all ``N``) up to ``N_max``."""
    if N_max < 1:
        raise ValueError("N_max must be >= 1")
    step = 1 if include_even else 2
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EvenVoteWarning)
        for N in range(1, N_max + 1, step):
            out.append((N, fock_infidelity(L, N, kdt, kut, delta0, delta1, allow_even=include_even)))
    return out


def write_theory_csv(fh, curves) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for N, b in curves:
        w.writerow([N] + [repr(float(x)) for x in b.as_row()])


def step_matrix(n_max: int, kdt: float, kut: float) -> np.ndarray:
    """Per-cycle transition matrix for dimensionless per-cycle rates."""
    T = expm(generator(n_max, kdt, kut))
    np.clip(T, 0.0, 1.0, out=T)
    return T / T.sum(axis=0, keepdims=True)


def majority_error_exact(n0: int, N: int, step: np.ndarray, p_flip) -> float:
    """Exact probability that majority voting mislabels a Fock state.

    The storage evolves by ``step`` (column-stochastic) before every readout;
    readout of ``n`` flips with probability ``p_flip[n]``. Exact ties count
    as ``0_L``. Returns the error for a state whose correct label is flip
    (``p_flip[n0] > 0.5``) or no-flip otherwise.

    Dynamic programming over (photon number, flips so far); cost O(N^2 n_max^2).
    """
    p_flip = np.asarray(p_flip, dtype=float)
    dim = step.shape[0]
    P = np.zeros((dim, N + 1))
    P[n0, 0] = 1.0
    stay = 1.0 - p_flip
    for _ in range(N):
        P = step @ P
        Q = P * stay[:, None]
        Q[:, 1:] += P[:, :-1] * p_flip[:, None]
        P = Q
    flips = P.sum(axis=0)
    label_zero = 2 * np.arange(N + 1) >= N
    if p_flip[n0] > 0.5:
        return float(flips[~label_zero].sum())
    return float(flips[label_zero].sum())


def fock_majority_exact(L: int, N: int, kdt: float, kut: float, delta0: float, delta1: float,
                        n_max: int = 12, step: np.ndarray | None = None) -> float:
    """Exact infidelity of the model the closed form approximates."""
    if step is None:
        step = step_matrix(n_max, kdt, kut)
    dim = step.shape[0]
    p_flip = np.array([1.0 - delta0 if n in (0, 1) else delta1 for n in range(dim)])
    return majority_error_exact(0, N, step, p_flip) + majority_error_exact(L, N, step, p_flip)
