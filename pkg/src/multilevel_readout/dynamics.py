"""Driven transmon master equation, pulse calibration and QND-ness fits.

The transmon is truncated to ``K`` levels (3 by default) and written in a
frame rotating at the g-e frequency, where level ``k`` sits at
``(alpha / 2) k (k - 1)``. A drive at angular frequency ``nu`` relative to
that frame enters as ``(Omega f(t) / 2) (exp(-i nu t) a^dag + h.c.)`` with a
truncated Gaussian envelope ``f``. Relaxation and pure dephasing act through
the jump operators

    sqrt(1/T1_ge) |g><e|,  sqrt(1/T1_ef) |e><f|,
    sqrt(2 gamma_e) |e><e|, sqrt(2 gamma_f) |f><f|,

with ``gamma_e = 1/T2_ge - 1/(2 T1_ge)`` and ``gamma_f = 1/T2_gf - 1/(2 T1_ef)``.
For ``K = 4`` the h level additionally decays as ``sqrt(1/T1_fh) |f><h|``.

The density matrix is propagated as a row-major vector with a fixed-step
classical Runge-Kutta scheme, batched over drive amplitudes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import erf

from .params import TWO_PI, SystemParams

#: fixed RK4 step; halving it moves final pulse populations by < 1e-9
DEFAULT_DT = 1e-11

TRACE_TOL = 1e-8
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-8


class IntegratorError(RuntimeError):
    """A density-matrix invariant was violated during integration."""


class MultipleMaximaError(ValueError):
    """The amplitude scan found more than one local maximum."""

    def __init__(self, amplitudes):
        self.amplitudes = list(amplitudes)
        super().__init__("objective is not unimodal; local maxima at amplitudes "
                         + ", ".join(f"{a:.6g}" for a in self.amplitudes))


@dataclass(frozen=True)
class PulseParams:
    """Gaussian pulse on the transition ``lower -> upper``.

    ``amplitude`` is the peak Rabi frequency scale ``Omega`` in rad/s; the
    matrix element of transition ``k -> k+1`` carries an extra ``sqrt(k+1)``.
    ``detuning`` is measured from that transition (positive = blue).
    """

    sigma: float
    length_in_sigmas: int
    detuning: float
    amplitude: float
    transition: tuple = (0, 1)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.length_in_sigmas < 1:
            raise ValueError("length_in_sigmas must be >= 1")
        lo, hi = self.transition
        if hi != lo + 1 or lo < 0:
            raise ValueError("transition must be (k, k+1)")

    @property
    def duration(self) -> float:
        return self.length_in_sigmas * self.sigma

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        c = 0.5 * self.duration
        f = np.exp(-0.5 * ((t - c) / self.sigma) ** 2)
        return np.where((t >= 0) & (t <= self.duration), f, 0.0)

    @property
    def envelope_area(self) -> float:
        half = 0.5 * self.length_in_sigmas
        return self.sigma * math.sqrt(2.0 * math.pi) * erf(half / math.sqrt(2.0))

    @property
    def pi_amplitude(self) -> float:
        """Amplitude whose pulse area is pi on its own transition."""
        return math.pi / (math.sqrt(self.transition[1]) * self.envelope_area)

    def with_amplitude(self, amplitude: float) -> "PulseParams":
        return replace(self, amplitude=float(amplitude))


def ge_pulse(amplitude: float | None = None) -> PulseParams:
    """g-e pulse: sigma 5 ns, 8 sigma long, 3.899 MHz blue detuning."""
    p = PulseParams(5e-9, 8, TWO_PI * 3.899e6, 0.0, (0, 1))
    return p.with_amplitude(p.pi_amplitude if amplitude is None else amplitude)


def ef_pulse(amplitude: float | None = None) -> PulseParams:
    """e-f pulse: sigma 6 ns, 6 sigma long, 2.67 MHz blue detuning."""
    p = PulseParams(6e-9, 6, TWO_PI * 2.67e6, 0.0, (1, 2))
    return p.with_amplitude(p.pi_amplitude if amplitude is None else amplitude)


# --------------------------------------------------------------------------- operators


def frame_energies(params: SystemParams, K: int) -> np.ndarray:
    k = np.arange(K)
    return 0.5 * params.anharmonicity * k * (k - 1)


def drive_frequency(pulse: PulseParams, params: SystemParams, K: int = 3) -> float:
    E = frame_energies(params, max(K, pulse.transition[1] + 1))
    lo, hi = pulse.transition
    return float(E[hi] - E[lo] + pulse.detuning)


def raising(K: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, K)), -1).astype(complex)


def jump_operators(params: SystemParams, K: int = 3) -> list:
    if K < 3:
        raise ValueError("K must be at least 3")
    gamma_e = 1.0 / params.ancilla_T2_ge - 0.5 / params.ancilla_T1_ge
    gamma_f = 1.0 / params.ancilla_T2_gf - 0.5 / params.ancilla_T1_ef

    def ket_bra(i, j, rate):
        L = np.zeros((K, K), dtype=complex)
        L[i, j] = math.sqrt(rate)
        return L

    ops = [
        ket_bra(0, 1, 1.0 / params.ancilla_T1_ge),
        ket_bra(1, 2, 1.0 / params.ancilla_T1_ef),
        ket_bra(1, 1, 2.0 * gamma_e),
        ket_bra(2, 2, 2.0 * gamma_f),
    ]
    if K >= 4:
        ops.append(ket_bra(2, 3, 1.0 / params.ancilla_T1_fh))
    return ops


def _commutator_super(H):
    K = H.shape[0]
    I = np.eye(K)
    return -1j * (np.kron(H, I) - np.kron(I, H.T))


def _dissipator_super(L):
    K = L.shape[0]
    I = np.eye(K)
    LdL = L.conj().T @ L
    return np.kron(L, L.conj()) - 0.5 * np.kron(LdL, I) - 0.5 * np.kron(I, LdL.T)


def liouvillian(params: SystemParams, K: int = 3) -> np.ndarray:
    """Drive-free generator acting on row-major vectorized density matrices."""
    H0 = np.diag(frame_energies(params, K)).astype(complex)
    Lv = _commutator_super(H0)
    for L in jump_operators(params, K):
        Lv = Lv + _dissipator_super(L)
    return Lv


# --------------------------------------------------------------------------- integration


def density(level: int, K: int = 3) -> np.ndarray:
    rho = np.zeros((K, K), dtype=complex)
    rho[level, level] = 1.0
    return rho


def check_state(rho: np.ndarray, where: str = "") -> None:
    """Raise :class:`IntegratorError` if any density matrix in ``rho`` is unphysical."""
    rho = np.asarray(rho)
    batch = rho.reshape((-1,) + rho.shape[-2:])
    tr = np.abs(np.trace(batch, axis1=1, axis2=2) - 1.0).max()
    if tr > TRACE_TOL:
        raise IntegratorError(f"trace drift {tr:.3e} {where}")
    herm = np.abs(batch - batch.conj().transpose(0, 2, 1)).max()
    if herm > HERMITIAN_TOL:
        raise IntegratorError(f"hermiticity violation {herm:.3e} {where}")
    ev = np.linalg.eigvalsh(batch).min()
    if ev < -POSITIVITY_TOL:
        raise IntegratorError(f"negative eigenvalue {ev:.3e} {where}")


@dataclass
class Evolution:
    """Integration output: sampled times, populations and final states."""

    times: np.ndarray
    populations: np.ndarray   # (n_times, batch, K)
    coherences: np.ndarray    # (n_times, batch, K, K) magnitudes
    final: np.ndarray         # (batch, K, K)

    def final_populations(self) -> np.ndarray:
        return np.real(np.einsum("bii->bi", self.final))

    def write_csv(self, fh, member: int = 0) -> None:
        K = self.populations.shape[-1]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"P{k}" for k in range(K)]
                   + [f"|rho{i}{j}|" for i in range(K) for j in range(i + 1, K)])
        for n, t in enumerate(self.times):
            row = [repr(float(t))] + [repr(float(p)) for p in self.populations[n, member]]
            row += [repr(float(self.coherences[n, member, i, j])) for i in range(K) for j in range(i + 1, K)]
            w.writerow(row)


def fastest_rate(params: SystemParams, K: int, pulse: PulseParams | None = None,
                 amplitudes=None) -> float:
    E = frame_energies(params, K)
    rate = float(E.max() - E.min())
    rate = max(rate, 1.0 / min(params.ancilla_T1_ge, params.ancilla_T1_ef, params.ancilla_T2_gf))
    if pulse is not None:
        amps = np.abs(np.atleast_1d(pulse.amplitude if amplitudes is None else amplitudes))
        rate = max(rate, abs(drive_frequency(pulse, params, K)), float(amps.max()) * math.sqrt(K - 1))
    return rate


def evolve_batch(rho0, pulse: PulseParams | None, params: SystemParams, duration: float | None = None,
                 dt: float = DEFAULT_DT, K: int = 3, amplitudes=None, record_every: int = 0,
                 check: bool = True) -> Evolution:
    """Integrate a batch of density matrices, one drive amplitude per member.

    Parameters
    ----------
    rho0 : ndarray, shape (K, K) or (B, K, K)
    pulse : PulseParams or None
        Drive; ``None`` integrates free decay for ``duration``.
    duration : float, optional
        Defaults to the pulse length.
    amplitudes : array_like, optional
        Per-member drive amplitudes overriding ``pulse.amplitude``.
    record_every : int
        Store populations every that many steps (0: only start and end).
    check : bool
        Verify trace, hermiticity and positivity after every step.
    """
    if duration is None:
        if pulse is None:
            raise ValueError("duration is required without a pulse")
        duration = pulse.duration
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if pulse is not None and pulse.transition[1] >= K:
        raise ValueError("pulse addresses a level outside the truncation")
    if amplitudes is not None:
        amps = np.atleast_1d(np.asarray(amplitudes, dtype=float))
    elif pulse is not None:
        amps = np.array([pulse.amplitude])
    else:
        amps = np.zeros(1)
    fast = fastest_rate(params, K, pulse, amps)
    if dt * fast * 20.0 > 1.0:
        raise ValueError(f"dt={dt:.3g} s is too coarse for the fastest rate {fast:.3g} 1/s "
                         f"(need dt <= {1.0 / (20.0 * fast):.3g} s)")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 2:
        rho0 = np.broadcast_to(rho0, (amps.shape[0], K, K))
    if rho0.shape[1:] != (K, K):
        raise ValueError("rho0 has the wrong dimension")
    if amps.shape[0] == 1 and rho0.shape[0] > 1:
        amps = np.full(rho0.shape[0], amps[0])
    if amps.shape[0] != rho0.shape[0]:
        raise ValueError("amplitude and state batch sizes differ")
    check_state(rho0, "in the initial state")

    B = rho0.shape[0]
    steps = int(round(duration / dt))
    if abs(steps * dt - duration) > 1e-9 * max(duration, dt):
        raise ValueError("duration must be an integer number of steps")
    L0T = liouvillian(params, K).T.copy()
    if pulse is not None:
        A = raising(K)
        SpT = (0.5 * _commutator_super(A)).T.copy()
        SmT = (0.5 * _commutator_super(A.conj().T)).T.copy()
        nu = drive_frequency(pulse, params, K)

    # drive coefficient f(t) exp(-i nu t) on the half-step grid
    if pulse is not None:
        half_t = 0.5 * dt * np.arange(2 * steps + 1)
        drive = pulse.envelope(half_t) * np.exp(-1j * nu * half_t)

    def rhs(j, v):
        out = v @ L0T
        if pulse is not None and drive[j] != 0.0:
            c = amps * drive[j]
            out = out + c[:, None] * (v @ SpT) + np.conj(c)[:, None] * (v @ SmT)
        return out

    v = rho0.reshape(B, K * K).copy()
    times = [0.0]
    rec_pops = [np.real(np.einsum("bii->bi", rho0))]
    rec_coh = [np.abs(rho0)]
    for n in range(steps):
        k1 = rhs(2 * n, v)
        k2 = rhs(2 * n + 1, v + 0.5 * dt * k1)
        k3 = rhs(2 * n + 1, v + 0.5 * dt * k2)
        k4 = rhs(2 * n + 2, v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if check:
            check_state(v.reshape(B, K, K), f"at t={(n + 1) * dt:.4g} s")
        if (record_every and (n + 1) % record_every == 0) or n == steps - 1:
            rho = v.reshape(B, K, K)
            times.append((n + 1) * dt)
            rec_pops.append(np.real(np.einsum("bii->bi", rho)))
            rec_coh.append(np.abs(rho))
    final = v.reshape(B, K, K)
    return Evolution(np.array(times), np.array(rec_pops), np.array(rec_coh), final)


def evolve(rho0, pulse: PulseParams | None, params: SystemParams, t_span: float | None = None,
           dt: float = DEFAULT_DT, K: int = 3, record_every: int = 0) -> Evolution:
    """Integrate a single density matrix; see :func:`evolve_batch`."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (K, K):
        raise ValueError(f"rho0 must be {K}x{K}")
    return evolve_batch(rho0[None], pulse, params, t_span, dt, K, record_every=record_every)


def pulse_populations(amplitudes, pulse: PulseParams, params: SystemParams, rho0=None,
                      dt: float = DEFAULT_DT, K: int = 3) -> np.ndarray:
    """Final populations ``(len(amplitudes), K)`` after the pulse for each amplitude."""
    if rho0 is None:
        rho0 = density(pulse.transition[0], K)
    return evolve_batch(rho0, pulse, params, dt=dt, K=K, amplitudes=amplitudes).final_populations()


# --------------------------------------------------------------------------- amplitude optimisation


@dataclass
class AmplitudeScan:
    amplitudes: np.ndarray
    populations: np.ndarray   # (n, K)
    target: int

    def write_csv(self, fh) -> None:
        K = self.populations.shape[1]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["amplitude"] + ["P_" + "gefh"[k] for k in range(K)])
        for a, p in zip(self.amplitudes, self.populations):
            w.writerow([repr(float(a))] + [repr(float(x)) for x in p])


def scan_amplitude(pulse: PulseParams, params: SystemParams, rho0=None, points: int = 41,
                   span: float = 0.10, dt: float = DEFAULT_DT, K: int = 3) -> AmplitudeScan:
    """Populations over ``points`` amplitudes within ``+-span`` of the pi-area amplitude."""
    a0 = pulse.pi_amplitude
    amps = a0 * np.linspace(1.0 - span, 1.0 + span, points)
    pops = pulse_populations(amps, pulse, params, rho0, dt, K)
    return AmplitudeScan(amps, pops, pulse.transition[1])


def _local_maxima(y) -> list:
    idx = []
    n = len(y)
    for i in range(n):
        left = y[i - 1] if i > 0 else -np.inf
        right = y[i + 1] if i < n - 1 else -np.inf
        if y[i] > left and y[i] >= right:
            idx.append(i)
    return idx


def optimize_amplitude(pulse: PulseParams, params: SystemParams, rho0=None, points: int = 41,
                       span: float = 0.10, dt: float = DEFAULT_DT, K: int = 3,
                       xtol: float = 1e-6) -> PulseParams:
    """Amplitude maximizing the population of the pulse's upper level.

    A ``points``-point scan over ``+-span`` of the pi-area amplitude locates
    the maximum, which is then refined by golden-section search on the
    bracketing interval to relative tolerance ``xtol``.

    Raises
    ------
    MultipleMaximaError
        The scan shows more than one local maximum.
    """
    if points < 41:
        raise ValueError("use at least 41 scan points")
    scan = scan_amplitude(pulse, params, rho0, points, span, dt, K)
    y = scan.populations[:, scan.target]
    peaks = _local_maxima(y)
    if len(peaks) != 1:
        raise MultipleMaximaError(scan.amplitudes[peaks])
    i = peaks[0]
    lo = scan.amplitudes[max(i - 1, 0)]
    hi = scan.amplitudes[min(i + 1, points - 1)]

    def objective(a):
        return pulse_populations([a], pulse, params, rho0, dt, K)[0, scan.target]

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    while (b - a) > xtol * abs(scan.amplitudes[i]):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    best = 0.5 * (a + b)
    if y[i] > objective(best):
        best = float(scan.amplitudes[i])
    return pulse.with_amplitude(best)


# --------------------------------------------------------------------------- shelving chain


@dataclass
class ShelvingResult:
    ge: PulseParams
    ef: PulseParams
    after_ge: np.ndarray          # populations (g, e, f)
    after_ef: np.ndarray
    at_measurement: np.ndarray
    measurement_time: float

    @property
    def p_g(self) -> float:
        return float(self.after_ge[0])

    @property
    def p_g_shelved(self) -> float:
        return float(self.after_ef[0])

    @property
    def p_g_meas(self) -> float:
        return float(self.at_measurement[0])


def shelving_chain(params: SystemParams, measurement_time: float, dt: float = DEFAULT_DT) -> ShelvingResult:
    """Optimized g-e pi-pulse, then optimized e-f shelving pulse, then decay for half the measurement."""
    ge = optimize_amplitude(ge_pulse(), params, dt=dt)
    after_ge_state = evolve(density(0), ge, params, dt=dt).final[0]
    ef = optimize_amplitude(ef_pulse(), params, rho0=after_ge_state, dt=dt)
    after_ef_state = evolve(after_ge_state, ef, params, dt=dt).final[0]
    p_ge = np.real(np.diag(after_ge_state))
    p_ef = np.real(np.diag(after_ef_state))
    p_meas = rate_equation(p_ef / p_ef.sum(), 0.5 * measurement_time, params)
    return ShelvingResult(ge, ef, p_ge, p_ef, p_meas, measurement_time)


def rabi_populations(amplitudes, shelved: bool, params: SystemParams, ef: PulseParams | None = None,
                     dt: float = DEFAULT_DT) -> np.ndarray:
    """Populations (g, e, f) after a g-e pulse of each amplitude, optionally followed by an e-f pulse."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    after = evolve_batch(density(0), ge_pulse(), params, dt=dt, amplitudes=amplitudes).final
    if shelved:
        if ef is None:
            ge = optimize_amplitude(ge_pulse(), params, dt=dt)
            ef = optimize_amplitude(ef_pulse(), params, rho0=evolve(density(0), ge, params, dt=dt).final[0], dt=dt)
        after = evolve_batch(after, ef, params, dt=dt).final
    return np.real(np.einsum("bii->bi", after))


# --------------------------------------------------------------------------- rate equation


def cascade_matrix(params: SystemParams) -> np.ndarray:
    a = 1.0 / params.ancilla_T1_ge
    b = 1.0 / params.ancilla_T1_ef
    return np.array([[0.0, a, 0.0], [0.0, -a, b], [0.0, 0.0, -b]])


def rate_equation(p0: Sequence[float], t: float, params: SystemParams | None = None,
                  gamma_ge: float | None = None, gamma_ef: float | None = None) -> np.ndarray:
    """Closed-form populations (g, e, f) of the relaxation cascade after time ``t``.

    Rates default to ``1/T1_ge`` and ``1/T1_ef``. Written with a divided
    difference so that equal rates reduce continuously to the ``t exp(-a t)``
    limit.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (3,) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-9:
        raise ValueError("p0 must be three non-negative populations summing to 1")
    if gamma_ge is None or gamma_ef is None:
        if params is None:
            raise ValueError("need params or explicit rates")
        gamma_ge = 1.0 / params.ancilla_T1_ge if gamma_ge is None else gamma_ge
        gamma_ef = 1.0 / params.ancilla_T1_ef if gamma_ef is None else gamma_ef
    a, b = float(gamma_ge), float(gamma_ef)
    pg0, pe0, pf0 = p0
    ea = math.exp(-a * t)
    eb = math.exp(-b * t)
    # (e^{-bt} - e^{-at}) / (a - b), which tends to t e^{-at} as b -> a
    if a == b:
        divided = t * ea
    elif a > b:
        divided = -eb * math.expm1(-(a - b) * t) / (a - b)
    else:
        divided = ea * math.expm1(-(b - a) * t) / (a - b)
    pf = pf0 * eb
    pe = pe0 * ea + pf0 * b * divided
    # ground population assembled from decayed mass to avoid 1 - (pe + pf)
    pg = pg0 + pe0 * -math.expm1(-a * t) + pf0 * (-math.expm1(-b * t) - b * divided)
    return np.array([pg, pe, pf])


# --------------------------------------------------------------------------- QND fit


@dataclass(frozen=True)
class QndFit:
    tau0: float
    p_d: float
    tau0_err: float
    p_d_err: float
    covariance: np.ndarray

    @property
    def inverse_tau0(self) -> float:
        return 1.0 / self.tau0


def fit_qnd(intervals: Sequence[float], lifetimes: Sequence[float],
            lifetime_errors: Sequence[float] | None = None) -> QndFit:
    """Fit ``1/tau_tot = 1/tau0 + P_D / tau_i`` by (weighted) linear least squares.

    Parameters
    ----------
    intervals : sequence of float
        Readout intervals ``tau_i``.
    lifetimes : sequence of float
        Measured lifetimes ``tau_tot``.
    lifetime_errors : sequence of float, optional
        One-sigma errors of ``lifetimes``; used as absolute weights. Without
        them the parameter errors are scaled by the residual variance.
    """
    x = 1.0 / np.asarray(intervals, dtype=float)
    y = 1.0 / np.asarray(lifetimes, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("intervals and lifetimes must be equal-length 1-d sequences")
    if np.unique(x).size < 2:
        raise ValueError("need at least two distinct readout intervals")
    if lifetime_errors is not None:
        sy = np.asarray(lifetime_errors, dtype=float) * y ** 2
        w = 1.0 / sy
    else:
        w = np.ones_like(x)
    A = np.column_stack([np.ones_like(x), x])
    Aw = A * w[:, None]
    coef, *_ = np.linalg.lstsq(Aw, y * w, rcond=None)
    cov = np.linalg.inv(Aw.T @ Aw)
    if lifetime_errors is None:
        dof = x.size - 2
        resid = (y - A @ coef) * w
        cov = cov * ((resid @ resid) / dof if dof > 0 else 0.0)
    inv_tau0, p_d = coef
    tau0 = 1.0 / inv_tau0
    tau0_err = math.sqrt(max(cov[0, 0], 0.0)) * tau0 ** 2
    return QndFit(float(tau0), float(p_d), float(tau0_err), float(math.sqrt(max(cov[1, 1], 0.0))), cov)
