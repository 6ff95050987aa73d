"""Monte Carlo of the repeated ancilla-assisted readout of a bosonic code.

Each cycle the storage photon number evolves under loss and gain, an
``S``-controlled mapping flips the ancilla when ``n`` is in the flip set
(failing with probability ``eps_map(n)``), and the ancilla is read out and
reset by a feedforward loop: read the four-level ancilla, apply the
conditional pulse ladder for the observed level, and repeat until ``g`` is
observed. The first readout of each cycle is the vote. Every ancilla readout
removes each storage photon with probability ``P_D``.

``fixed`` mode replaces mapping, readout and reset by an ideal one-shot vote
with per-round errors ``delta_0`` / ``delta_1`` and a fixed cycle time; it
is the model behind the closed-form majority-vote theory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from ._layout import (
    OK, P_DELTA0, P_DELTA1, P_DEMOL, P_FIXED, P_G_EF, P_G_FH, P_G_GE, P_G_LEAK,
    P_G_UP, P_KD, P_KU, P_LEAD, P_LEAK, P_MAX_ITER, P_NMAX, P_SIZE, P_T_MAP, P_T_R,
)
from .ancilla import AncillaConfusion, decay_rates, level_index, thermal_rate
from .hmm import HiddenMarkovModel, build_transition, majority_prefix_labels, mle_prefix_labels
from .parallel import run_chunked
from .params import CodeSpec, RandomStream, SystemParams, stream_id
from .records import STUCK_THRESHOLD, ReadoutSequence

CLASSIFIERS = ("majority", "mle")
MAX_RESET_ITERATIONS = 1000


class ResetRunawayError(RuntimeError):
    """The reset loop hit its iteration cap (mis-configured confusion or rates)."""


# --------------------------------------------------------------------------- error model


def lumped_map_errors(code: CodeSpec, params: SystemParams, confusion: AncillaConfusion) -> np.ndarray:
    """Mapping-error probabilities per ``n`` that make per-round vote errors equal ``delta_0``/``delta_1``.

    Assumes the ancilla starts the cycle in ``g``. For ``n`` in the flip set a
    missed flip happens when the mapping fails and ``g`` is read correctly or
    the mapping succeeds and ``e`` is misread as ``g``; symmetrically outside.
    Values are clipped at zero when the readout alone already exceeds the
    target error.
    """
    c_gg = confusion.matrix[0, 0]
    c_eg = confusion.matrix[1, 0]
    denom = c_gg - c_eg
    eps = np.empty(params.n_max + 1)
    for n in range(params.n_max + 1):
        if n in code.flip_set:
            eps[n] = (params.delta_0 - c_eg) / denom
        else:
            eps[n] = (params.delta_1 - (1.0 - c_gg)) / denom
    return np.clip(eps, 0.0, 1.0)


@dataclass(frozen=True)
class ErrorModel:
    """Readout, mapping and reset imperfections layered on :class:`SystemParams`.

    Parameters
    ----------
    confusion : AncillaConfusion
        Single-readout assignment probabilities.
    map_errors : sequence of float, optional
        ``eps_map(n)``; default lumps the readout confusion with
        ``delta_0``/``delta_1`` (see :func:`lumped_map_errors`).
    fixed : bool
        Ideal one-shot votes with errors ``delta_0``/``delta_1`` and one reset
        iteration per cycle.
    lead_time : float, optional
        Storage evolution (after one demolition) before the first cycle,
        representing the final heralding check; defaults to ``t_readout_reset``.
    """

    confusion: AncillaConfusion = field(default_factory=AncillaConfusion.default)
    map_errors: tuple | None = None
    fixed: bool = False
    lead_time: float | None = None
    max_iterations: int = MAX_RESET_ITERATIONS

    @classmethod
    def ideal(cls) -> "ErrorModel":
        return cls(AncillaConfusion.perfect(), map_errors=None)

    def eps_map(self, code: CodeSpec, params: SystemParams) -> np.ndarray:
        if self.map_errors is not None:
            eps = np.asarray(self.map_errors, dtype=float)
            if eps.shape != (params.n_max + 1,):
                raise ValueError("map_errors needs one entry per photon number")
            return eps
        return lumped_map_errors(code, params, self.confusion)

    def lead(self, params: SystemParams) -> float:
        return params.t_readout_reset if self.lead_time is None else float(self.lead_time)

    def kernel_config(self, params: SystemParams) -> np.ndarray:
        cfg = np.zeros(P_SIZE)
        down = decay_rates(params)
        cfg[P_KD] = 1.0 / params.storage_T1
        cfg[P_KU] = params.storage_kappa_up
        cfg[P_T_MAP] = params.t_map
        cfg[P_T_R] = params.t_readout_reset
        cfg[P_LEAD] = self.lead(params)
        cfg[P_DEMOL] = params.demolition_prob
        cfg[P_G_GE], cfg[P_G_EF], cfg[P_G_FH] = down[1], down[2], down[3]
        cfg[P_G_UP] = thermal_rate(params)
        cfg[P_G_LEAK] = 1.0 / params.ancilla_leak_T1
        cfg[P_LEAK] = params.ancilla_leak_prob
        cfg[P_FIXED] = 1.0 if self.fixed else 0.0
        cfg[P_DELTA0] = params.delta_0
        cfg[P_DELTA1] = params.delta_1
        cfg[P_NMAX] = params.n_max
        cfg[P_MAX_ITER] = self.max_iterations
        return cfg


def noiseless_params(params: SystemParams) -> SystemParams:
    """Copy of ``params`` with every error mechanism switched off."""
    return params.replace(
        storage_T1=1e300, storage_kappa_up=0.0, ancilla_thermal_pop=0.0, demolition_prob=0.0,
        delta_0=0.0, delta_1=0.0, ancilla_leak_prob=0.0,
        ancilla_T1_ge=1e300, ancilla_T1_ef=1e300, ancilla_T1_fh=1e300,
        ancilla_T2_ge=1e300, ancilla_T2_gf=1e300,
    )


# --------------------------------------------------------------------------- heralded preparation


@dataclass
class PreparationBelief:
    """Photon-number belief after a run of passed heralding checks."""

    belief: np.ndarray
    acceptance_probability: float
    history: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.belief < 0):
            raise ValueError("belief must be non-negative")


def initial_distribution(target_n: int, initial_error: float, transition: np.ndarray) -> np.ndarray:
    """``1 - initial_error`` on the target, the rest on its neighbours weighted by loss/gain."""
    dim = transition.shape[0]
    p = np.zeros(dim)
    p[target_n] = 1.0 - initial_error
    if initial_error == 0.0:
        return p
    w = {}
    if target_n > 0:
        w[target_n - 1] = transition[target_n - 1, target_n]
    if target_n < dim - 1:
        w[target_n + 1] = transition[target_n + 1, target_n]
    total = sum(w.values())
    for n in w:
        p[n] += initial_error * (w[n] / total if total > 0 else 1.0 / len(w))
    return p


def check_pass_probabilities(target_n: int, params: SystemParams) -> np.ndarray:
    """Per-``n`` probability that a number-selective check on ``target_n`` passes."""
    E = np.full(params.n_max + 1, params.delta_1)
    E[target_n] = 1.0 - params.delta_0
    return E


def herald_preparation(target_n: int, num_checks: int, check_pass_prob: Sequence[float],
                       transition: np.ndarray, initial_error: float = 0.1) -> PreparationBelief:
    """Condition the photon-number distribution on ``num_checks`` passed checks.

    Applies ``P_{t+1}(n') = sum_n P_t(n) E_n T[n', n]`` starting from
    :func:`initial_distribution`.

    Returns
    -------
    PreparationBelief
        Normalized belief and the unnormalized acceptance probability.
    """
    transition = np.asarray(transition, dtype=float)
    E = np.asarray(check_pass_prob, dtype=float)
    dim = transition.shape[0]
    if not 0 <= target_n < dim:
        raise ValueError(f"target_n={target_n} outside 0..{dim - 1}")
    if num_checks < 0:
        raise ValueError("num_checks must be >= 0")
    if not 0.0 <= initial_error < 1.0:
        raise ValueError("initial_error must lie in [0, 1)")
    p = initial_distribution(target_n, initial_error, transition)
    history = [p.copy()]
    for _ in range(num_checks):
        p = transition @ (E * p)
        history.append(p.copy())
    acc = float(p.sum())
    if acc <= 0.0:
        raise ValueError("no state passes the checks")
    return PreparationBelief(p / acc, acc, history)


def default_herald(target_n: int, params: SystemParams, num_checks: int = 3,
                   initial_error: float = 0.1) -> PreparationBelief:
    T = build_transition(params.n_max, params.kappa_down_effective, params.storage_kappa_up,
                         params.cycle_time)
    return herald_preparation(target_n, num_checks, check_pass_probabilities(target_n, params),
                              T, initial_error)


# --------------------------------------------------------------------------- reset


@dataclass(frozen=True)
class ResetOutcome:
    iterations: int
    duration: float
    stuck: bool
    final_level: int


def _check_status(status, start):
    if status != OK:
        raise ResetRunawayError(f"trial {start + status}: reset did not terminate within the iteration cap")


def reset_statistics(true_level, trials: int, params: SystemParams,
                     confusion: AncillaConfusion | None = None, seed: int = 0,
                     stream: int | None = None, threads: int | None = 1,
                     max_iterations: int = MAX_RESET_ITERATIONS) -> tuple[np.ndarray, np.ndarray]:
    """Iteration counts and final levels of ``trials`` independent resets."""
    confusion = confusion or AncillaConfusion.default()
    level = level_index(true_level)
    model = ErrorModel(confusion, max_iterations=max_iterations)
    cfg = model.kernel_config(params)
    cdf = confusion.cdf()
    stream = stream_id("reset", level) if stream is None else stream

    def chunk(start, count):
        it = np.zeros(count, dtype=np.int64)
        fin = np.zeros(count, dtype=np.int64)
        _check_status(_backend.kernels.reset_batch(seed, stream, start, count, level, cfg, cdf, it, fin), start)
        return it, fin

    parts = run_chunked(chunk, trials, threads)
    if not parts:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def reset_ancilla(true_level, confusion: AncillaConfusion, params: SystemParams,
                  rng: RandomStream, trial: int = 0) -> ResetOutcome:
    """Run one feedforward reset starting from ``true_level`` (0..3 or 4 = leaked)."""
    cfg = ErrorModel(confusion).kernel_config(params)
    it = np.zeros(1, dtype=np.int64)
    fin = np.zeros(1, dtype=np.int64)
    status = _backend.kernels.reset_batch(rng.seed, rng.stream_index, trial, 1, level_index(true_level),
                                          cfg, confusion.cdf(), it, fin)
    _check_status(status, trial)
    k = int(it[0])
    return ResetOutcome(k, k * params.t_readout_reset, k >= STUCK_THRESHOLD, int(fin[0]))


# --------------------------------------------------------------------------- trials


@dataclass
class TrialBatch:
    """Raw kernel output for a block of trials from one initial photon number."""

    outcomes: np.ndarray      # uint8 (trials, N)
    raw: np.ndarray           # uint8 (trials, N)
    iterations: np.ndarray    # uint16 (trials, N)
    total_time: np.ndarray    # float64 (trials,)


def simulate_block(code: CodeSpec, initial_n: int, n_cycles: int, params: SystemParams,
                   model: ErrorModel, seed: int, stream: int, start: int, count: int) -> TrialBatch:
    if not 0 <= initial_n <= params.n_max:
        raise ValueError(f"initial_n={initial_n} outside 0..{params.n_max}")
    cfg = model.kernel_config(params)
    in_s = code.in_flip_set(params.n_max)
    eps = np.ascontiguousarray(model.eps_map(code, params))
    cdf = model.confusion.cdf()
    out = np.zeros((count, n_cycles), dtype=np.uint8)
    raw = np.zeros((count, n_cycles), dtype=np.uint8)
    its = np.zeros((count, n_cycles), dtype=np.uint16)
    tot = np.zeros(count)
    status = _backend.kernels.protocol_batch(seed, stream, start, count, n_cycles, initial_n, cfg,
                                             in_s, eps, cdf, out, raw, its, tot)
    _check_status(status, start)
    return TrialBatch(out, raw, its, tot)


def trial_stream(code: CodeSpec, initial_n: int, label: str = "protocol") -> int:
    return stream_id(label, code.name, initial_n)


def simulate_trial(code: CodeSpec, initial_n: int, N: int, params: SystemParams,
                   model: ErrorModel | None = None, rng: RandomStream | None = None,
                   trial: int = 0) -> ReadoutSequence:
    """Simulate one ``N``-cycle trial from Fock state ``initial_n``.

    The stream of trial ``trial`` is the same one :func:`run_experiment` uses
    for that trial index, so single trials can be replayed.
    """
    model = model or ErrorModel()
    seed = 0 if rng is None else rng.seed
    stream = trial_stream(code, initial_n) if rng is None else rng.stream_index
    b = simulate_block(code, initial_n, N, params, model, seed, stream, trial, 1)
    return to_sequence(b, 0, code, initial_n, params, model, trial)


def to_sequence(batch: TrialBatch, i: int, code: CodeSpec, initial_n: int,
                params: SystemParams, model: ErrorModel, trial_id: int) -> ReadoutSequence:
    its = batch.iterations[i].astype(int).tolist()
    cycle = [params.t_map + k * params.t_readout_reset for k in its]
    durations = [model.lead(params) + params.t_map] + cycle[:-1]
    return ReadoutSequence(
        outcomes=batch.outcomes[i].tolist(), durations=durations, trial_id=trial_id,
        true_initial_n=initial_n, raw_ancilla_outcomes=batch.raw[i].tolist(),
        cycle_durations=cycle, reset_iterations=its, code=code.name,
    )


def iter_sequences(code: CodeSpec, initial_n: int, N: int, trials: int, params: SystemParams,
                   model: ErrorModel | None = None, seed: int = 0) -> Iterable[ReadoutSequence]:
    model = model or ErrorModel()
    stream = trial_stream(code, initial_n)
    for start, count in _chunks(trials):
        b = simulate_block(code, initial_n, N, params, model, seed, stream, start, count)
        for i in range(count):
            yield to_sequence(b, i, code, initial_n, params, model, start + i)


def _chunks(trials, chunk=65536):
    from .parallel import chunk_bounds

    return chunk_bounds(trials, chunk)


# --------------------------------------------------------------------------- experiments


def allocate_trials(weights: dict, trials: int) -> dict:
    """Split ``trials`` across codeword components in proportion to their weights."""
    items = sorted(weights.items())
    out = {}
    left = trials
    for k, (n, w) in enumerate(items):
        m = left if k == len(items) - 1 else int(round(trials * w))
        out[n] = m
        left -= m
    return out


@dataclass
class ExperimentTable:
    """Assignment-error tallies for every prefix length and classifier."""

    code: str
    n_max_cycles: int
    trials: int
    errors: dict          # (classifier, logical, postselected) -> int64 array over N
    kept: dict            # (logical, postselected) -> int
    stuck_trials: dict    # logical -> int

    def counts(self, classifier: str, postselect: bool = False):
        e0 = self.errors[(classifier, 0, postselect)]
        e1 = self.errors[(classifier, 1, postselect)]
        return e0, e1, self.kept[(0, postselect)], self.kept[(1, postselect)]

    def infidelity(self, classifier: str, postselect: bool = False) -> np.ndarray:
        e0, e1, n0, n1 = self.counts(classifier, postselect)
        return e0 / max(n0, 1) + e1 / max(n1, 1)

    def stderr(self, classifier: str, postselect: bool = False) -> np.ndarray:
        e0, e1, n0, n1 = self.counts(classifier, postselect)
        p0, p1 = e0 / max(n0, 1), e1 / max(n1, 1)
        return np.sqrt(p0 * (1 - p0) / max(n0, 1) + p1 * (1 - p1) / max(n1, 1))

    def confidence_interval(self, classifier: str, postselect: bool = False, z: float = 1.96):
        """Sum of per-input Wilson intervals."""
        e0, e1, n0, n1 = self.counts(classifier, postselect)
        lo0, hi0 = wilson(e0, n0, z)
        lo1, hi1 = wilson(e1, n1, z)
        return lo0 + lo1, hi0 + hi1

    def minimum(self, classifier: str = "mle", postselect: bool = False) -> tuple[int, float, float]:
        """``(N, infidelity, stderr)`` at the smallest infidelity."""
        inf = self.infidelity(classifier, postselect)
        k = int(np.argmin(inf))
        return k + 1, float(inf[k]), float(self.stderr(classifier, postselect)[k])

    def rows(self, postselect: bool = False):
        for clf in CLASSIFIERS:
            if (clf, 0, postselect) not in self.errors:
                continue
            e0, e1, n0, n1 = self.counts(clf, postselect)
            inf = self.infidelity(clf, postselect)
            se = self.stderr(clf, postselect)
            lo, hi = self.confidence_interval(clf, postselect)
            for k in range(self.n_max_cycles):
                yield (self.code, clf, k + 1, int(e0[k]), int(e1[k]), self.trials, float(inf[k]),
                       float(se[k]), float(lo[k]), float(hi[k]), int(n0), int(n1))

    CSV_COLUMNS = ("code", "classifier", "N", "errors_0to1", "errors_1to0", "trials", "infidelity",
                   "stderr", "ci_low", "ci_high", "kept_0", "kept_1")

    def write_csv(self, fh, postselect: bool = False, header: bool = True) -> None:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(self.CSV_COLUMNS)
        for row in self.rows(postselect):
            w.writerow([x if not isinstance(x, float) else repr(x) for x in row])


def wilson(k, n, z=1.96):
    k = np.asarray(k, dtype=float)
    if n <= 0:
        return np.zeros_like(k), np.ones_like(k)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.maximum(centre - half, 0.0), np.minimum(centre + half, 1.0)


def run_experiment(code: CodeSpec, trials: int, N_max: int, params: SystemParams,
                   classifiers: Sequence[str] = CLASSIFIERS, model: ErrorModel | None = None,
                   seed: int = 0, threads: int | None = 1, progress: bool = False) -> ExperimentTable:
    """Assignment infidelity vs number of readouts for both logical inputs.

    ``trials`` trials are simulated per logical input, split over the Fock
    components of the codeword in proportion to their weights. Each tally is
    kept with and without dropping trials that contain a stuck reset.

    Parameters
    ----------
    code : CodeSpec
    trials : int
        Trials per logical input.
    N_max : int
        Longest readout sequence; every prefix length ``1..N_max`` is scored.
    classifiers : sequence of {"majority", "mle"}
    model : ErrorModel, optional
    seed : int
    threads : int or None
        Worker threads; results do not depend on this.
    """
    if trials < 1 or N_max < 1:
        raise ValueError("trials and N_max must be >= 1")
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {c!r}")
    model = model or ErrorModel()
    hmm_model = HiddenMarkovModel.from_params(params, code) if "mle" in classifiers else None
    first = model.lead(params) + params.t_map
    errors = {}
    kept = {}
    stuck = {}
    for logical in (0, 1):
        alloc = allocate_trials(code.weights(logical), trials)
        tot = {(c, p): np.zeros(N_max, dtype=np.int64) for c in classifiers for p in (False, True)}
        n_stuck = 0
        for n0, count in alloc.items():
            stream = trial_stream(code, n0)

            def chunk(start, cnt, n0=n0, stream=stream):
                b = simulate_block(code, n0, N_max, params, model, seed, stream, start, cnt)
                is_stuck = np.any(b.iterations >= STUCK_THRESHOLD, axis=1)
                res = {"stuck": int(is_stuck.sum())}
                for clf in classifiers:
                    if clf == "majority":
                        labels = majority_prefix_labels(b.outcomes)
                    else:
                        labels = mle_prefix_labels(b.outcomes, b.iterations, code, hmm_model, first,
                                                   params.t_map, params.t_readout_reset)
                    wrong = labels != logical
                    res[(clf, False)] = wrong.sum(axis=0, dtype=np.int64)
                    res[(clf, True)] = wrong[~is_stuck].sum(axis=0, dtype=np.int64)
                return res

            label = f"{code.name} n0={n0}" if progress else None
            for res in run_chunked(chunk, count, threads, progress=label):
                n_stuck += res["stuck"]
                for key in tot:
                    tot[key] += res[key]
        for (clf, post), arr in tot.items():
            errors[(clf, logical, post)] = arr
        kept[(logical, False)] = trials
        kept[(logical, True)] = trials - n_stuck
        stuck[logical] = n_stuck
    return ExperimentTable(code.name, N_max, trials, errors, kept, stuck)


def stuck_fraction(code: CodeSpec, N: int, trials: int, params: SystemParams,
                   model: ErrorModel | None = None, seed: int = 0, threads: int | None = 1) -> float:
    """Fraction of ``N``-cycle trials (both logical inputs) containing a stuck reset."""
    model = model or ErrorModel()
    total = 0
    stuck = 0
    for logical in (0, 1):
        for n0, count in allocate_trials(code.weights(logical), trials).items():
            stream = trial_stream(code, n0, "stuck")

            def chunk(start, cnt, n0=n0, stream=stream):
                b = simulate_block(code, n0, N, params, model, seed, stream, start, cnt)
                return int(np.any(b.iterations >= STUCK_THRESHOLD, axis=1).sum())

            stuck += sum(run_chunked(chunk, count, threads))
            total += count
    return stuck / total


# --------------------------------------------------------------------------- QND-ness


@dataclass
class QndPoint:
    interval: float
    lifetime: float
    lifetime_err: float
    trials: int


def fit_lifetime(times, survivors, trials: int) -> tuple[float, float]:
    """Weighted log-linear fit ``S(t) = A exp(-t / tau)`` with binomial weights."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(survivors, dtype=float) / trials
    ok = (s > 0) & (s < 1)
    t, s = t[ok], s[ok]
    if t.size < 2:
        raise ValueError("need at least two informative delay points")
    var = (1 - s) / (trials * s)
    w = 1.0 / var
    A = np.column_stack([np.ones_like(t), -t])
    Aw = A * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(Aw, np.log(s) * np.sqrt(w), rcond=None)
    cov = np.linalg.inv(Aw.T @ Aw)
    rate = coef[1]
    return 1.0 / rate, math.sqrt(cov[1, 1]) / rate ** 2


def qnd_experiment(params: SystemParams, readout_intervals: Sequence[float], trials: int,
                   seed: int = 0, n_points: int = 20, span_lifetimes: float = 2.0) -> list[QndPoint]:
    """Single-photon lifetime measured with an ancilla readout every ``interval``.

    Photon loss is the continuous decay ``1/storage_T1`` plus demolition with
    probability ``P_D`` at each readout; photon gain is neglected. Survival is
    recorded right after each readout and fitted with :func:`fit_lifetime`.
    """
    out = []
    for tau in readout_intervals:
        if not tau > 0:
            raise ValueError("readout intervals must be positive")
        rng = RandomStream(seed, stream_id("qnd", repr(float(tau)))).numpy()
        t_cont = rng.exponential(params.storage_T1, size=trials)
        if params.demolition_prob > 0:
            k_demol = rng.geometric(params.demolition_prob, size=trials)
        else:
            k_demol = np.full(trials, np.iinfo(np.int64).max)
        # readout index at which the photon is found missing
        k_cont = np.floor(t_cont / tau).astype(np.int64) + 1
        k_loss = np.minimum(k_cont, k_demol)
        q = math.exp(-tau / params.storage_T1) * (1 - params.demolition_prob)
        tau_tot = -tau / math.log(q)
        k_max = max(2, int(math.ceil(span_lifetimes * tau_tot / tau)))
        ks = np.unique(np.linspace(1, k_max, n_points).round().astype(np.int64))
        survivors = np.array([(k_loss > k).sum() for k in ks])
        lt, err = fit_lifetime(ks * tau, survivors, trials)
        out.append(QndPoint(float(tau), lt, err, trials))
    return out
