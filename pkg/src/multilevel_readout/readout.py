"""Continuous dispersive readout of a four-level transmon.

A record is the sampled two-quadrature signal ``z(t_j) = c_s(t_j) r(t_j) +
noise`` where ``s(t)`` follows the relaxation cascade h -> f -> e -> g plus
thermal g -> e, ``c_s`` is the steady-state (I, Q) point of level ``s`` and
``r(t) = 1 - exp(-t / t_rise)`` the resonator ring-up. Records are classified
by the nearest average trajectory in summed squared distance.

Large Monte Carlo runs never materialize records: the summed distance to each
template depends on the record only through ``sum_j r_j z_j`` whose noise
part is a Gaussian random walk in ``R_n = sum_{j<n} r_j^2``, so the kernels
sample that walk directly at every requested acquisition time.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import _backend
from ._layout import OK, R_DT, R_G_EF, R_G_FH, R_G_GE, R_G_UP, R_NOISE, R_SIZE
from .ancilla import LEVELS, AncillaConfusion, decay_rates, level_index, thermal_rate
from .parallel import run_chunked
from .params import RandomStream, SystemParams, stream_id

DEFAULT_DT = 20e-9
DEFAULT_T_RISE = 200e-9

#: per-quadrature, per-sample noise standard deviation (template radius 1)
#: for which the noise-only g/e two-template error at 1 us is 1e-3;
#: equals ``noise_for_pair_error(1e-3, 1e-6)``
DEFAULT_NOISE_STD = 1.3467633224962814

#: acquisition time minimizing P(g|h) + P(not g|g) at the default noise;
#: regenerate with ``misassignment_curves(...).best_index()``
DEFAULT_T_M = 1.84e-6

_UNIT_CIRCLE = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


@dataclass(frozen=True)
class ResponseTemplates:
    """Average readout trajectories ``z_s(t) = centers[s] * (1 - exp(-t/t_rise))``."""

    centers: np.ndarray = field(default_factory=lambda: _UNIT_CIRCLE.copy())
    noise_std: float = DEFAULT_NOISE_STD
    t_rise: float = DEFAULT_T_RISE

    def __post_init__(self):
        c = np.array(self.centers, dtype=float)
        if c.shape != (4, 2):
            raise ValueError("centers must have shape (4, 2)")
        for i in range(4):
            for j in range(i):
                if np.array_equal(c[i], c[j]):
                    raise ValueError(f"levels {LEVELS[j]} and {LEVELS[i]} share a steady-state point")
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be non-negative")
        if not self.t_rise > 0:
            raise ValueError("t_rise must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @classmethod
    def circle(cls, radius: float = 1.0, noise_std: float = DEFAULT_NOISE_STD,
               t_rise: float = DEFAULT_T_RISE) -> "ResponseTemplates":
        """Levels g, e, f, h at phases 0, 90, 180, 270 degrees."""
        return cls(radius * _UNIT_CIRCLE, noise_std, t_rise)

    def with_noise(self, noise_std: float) -> "ResponseTemplates":
        return ResponseTemplates(self.centers, noise_std, self.t_rise)

    def ring(self, times) -> np.ndarray:
        return -np.expm1(-np.asarray(times, dtype=float) / self.t_rise)

    def mean(self, level, times) -> np.ndarray:
        """Template trajectory of ``level`` sampled at ``times``; shape (n, 2)."""
        return self.ring(times)[:, None] * self.centers[level_index(level)][None, :]

    def cumulative_weight(self, n_samples: int, dt: float) -> np.ndarray:
        """``R[i] = sum_{j<i} r(j dt)^2`` for ``i = 0..n_samples``."""
        r = self.ring(np.arange(n_samples) * dt)
        out = np.zeros(n_samples + 1)
        # sequential summation keeps both kernel backends on identical inputs
        out[1:] = np.cumsum(r * r)
        return out


@dataclass
class TrajectoryRecord:
    samples: np.ndarray
    dt: float
    true_initial_level: int
    jump_history: list = field(default_factory=list)

    @property
    def t_m(self) -> float:
        return self.samples.shape[0] * self.dt

    def level_at(self, t: float) -> int:
        level = self.true_initial_level
        for tj, _, to in self.jump_history:
            if tj <= t:
                level = to
        return level


def noise_for_pair_error(error: float, t_m: float, dt: float = DEFAULT_DT,
                         t_rise: float = DEFAULT_T_RISE, separation: float = math.sqrt(2.0)) -> float:
    """Noise std giving a noise-only two-template assignment error ``error`` at ``t_m``.

    For two fixed templates a distance ``d * r(t)`` apart the summed-distance
    classifier errs with probability ``Q(d sqrt(R) / (2 sigma))``, where
    ``R = sum_j r_j^2``.
    """
    R = ResponseTemplates(noise_std=1.0, t_rise=t_rise).cumulative_weight(n_samples(t_m, dt), dt)[-1]
    return separation * math.sqrt(R) / (2.0 * -ndtri(error))


def pair_error(noise_std: float, t_m: float, dt: float = DEFAULT_DT, t_rise: float = DEFAULT_T_RISE,
               separation: float = math.sqrt(2.0)) -> float:
    """Inverse of :func:`noise_for_pair_error`."""
    R = ResponseTemplates(noise_std=1.0, t_rise=t_rise).cumulative_weight(n_samples(t_m, dt), dt)[-1]
    return float(ndtr(-separation * math.sqrt(R) / (2.0 * noise_std)))


def n_samples(t_m: float, dt: float) -> int:
    """Integer sample count of an acquisition window; rejects non-integral ratios."""
    if not (t_m > 0 and dt > 0):
        raise ValueError("t_m and dt must be positive")
    n = round(t_m / dt)
    if n < 1 or abs(n * dt - t_m) > 1e-9 * t_m:
        raise ValueError(f"t_m={t_m} is not an integer multiple of dt={dt}")
    return int(n)


def sample_jumps(initial_level: int, params: SystemParams, horizon: float,
                 rng: np.random.Generator) -> list:
    """Level-jump history ``[(time, from, to), ...]`` up to ``horizon``."""
    down = decay_rates(params)
    up = thermal_rate(params)
    level = level_index(initial_level)
    t = 0.0
    jumps = []
    while True:
        rate = up if level == 0 else down[level]
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        new = 1 if level == 0 else level - 1
        jumps.append((t, level, new))
        level = new
    return jumps


def simulate_record(initial_level, params: SystemParams, templates: ResponseTemplates,
                    t_m: float, dt: float = DEFAULT_DT, rng=None) -> TrajectoryRecord:
    """Sample one record of length ``t_m``.

    Parameters
    ----------
    initial_level : int or str
    rng : RandomStream, numpy Generator or None
        ``None`` gives a fixed default stream.
    """
    n = n_samples(t_m, dt)
    gen = _generator(rng)
    level0 = level_index(initial_level)
    jumps = sample_jumps(level0, params, t_m, gen)
    times = np.arange(n) * dt
    levels = np.full(n, level0)
    for tj, _, to in jumps:
        levels[times >= tj] = to
    clean = templates.ring(times)[:, None] * templates.centers[levels]
    noise = gen.normal(0.0, templates.noise_std, size=(n, 2))
    return TrajectoryRecord(clean + noise, dt, level0, jumps)


def _generator(rng) -> np.random.Generator:
    if rng is None:
        return RandomStream(0, 0).numpy()
    if isinstance(rng, RandomStream):
        return rng.numpy()
    return rng


def template_distances(record: TrajectoryRecord, templates: ResponseTemplates,
                       t_m: float | None = None) -> np.ndarray:
    """Summed squared distance of the record to each of the four templates."""
    n = record.samples.shape[0] if t_m is None else n_samples(t_m, record.dt)
    if n > record.samples.shape[0]:
        raise ValueError("t_m exceeds the record length")
    z = record.samples[:n]
    times = np.arange(n) * record.dt
    r = templates.ring(times)
    return np.array([np.sum((z - r[:, None] * c[None, :]) ** 2) for c in templates.centers])


def classify_record(record: TrajectoryRecord, templates: ResponseTemplates,
                    t_m: float | None = None, candidates: Sequence[int] = (0, 1, 2, 3)) -> int:
    """Level whose template is nearest to the first ``t_m`` of the record.

    Exact ties resolve to the lower level.
    """
    d = template_distances(record, templates, t_m)
    cands = sorted(level_index(c) for c in candidates)
    return min(cands, key=lambda s: (d[s], s))


# --------------------------------------------------------------------------- Monte Carlo curves


def readout_config(params: SystemParams, templates: ResponseTemplates, dt: float) -> np.ndarray:
    cfg = np.zeros(R_SIZE)
    down = decay_rates(params)
    cfg[R_DT] = dt
    cfg[R_NOISE] = templates.noise_std
    cfg[R_G_GE], cfg[R_G_EF], cfg[R_G_FH] = down[1], down[2], down[3]
    cfg[R_G_UP] = thermal_rate(params)
    return cfg


@dataclass
class AssignmentCounts:
    """Assignment tallies ``counts[level][k, s]`` at acquisition times ``t_m[k]``."""

    t_m: np.ndarray
    counts: dict
    trials: int

    def probabilities(self, level) -> np.ndarray:
        return self.counts[level_index(level)] / self.trials

    def misassignment(self, level) -> np.ndarray:
        """P(assigned outside {g}) for g; P(assigned g) for excited levels."""
        p = self.probabilities(level)
        return 1.0 - p[:, 0] if level_index(level) == 0 else p[:, 0]

    def stderr(self, level) -> np.ndarray:
        p = self.misassignment(level)
        return np.sqrt(p * (1.0 - p) / self.trials)

    def aggregate(self) -> np.ndarray:
        """P(g | h) + P(not g | g) per acquisition time."""
        return self.misassignment(3) + self.misassignment(0)

    def best_index(self) -> int:
        return int(np.argmin(self.aggregate()))

    def confusion(self, index: int | None = None) -> AncillaConfusion:
        k = self.best_index() if index is None else index
        return AncillaConfusion.from_counts(np.array([self.counts[s][k] for s in range(4)]))

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_m", "level", "misassignment", "stderr"])
        for s in sorted(self.counts):
            p, e = self.misassignment(s), self.stderr(s)
            for k, t in enumerate(self.t_m):
                w.writerow([repr(float(t)), LEVELS[s], repr(float(p[k])), repr(float(e[k]))])


def misassignment_curves(levels: Sequence, t_m_grid: Sequence[float], trials: int,
                         params: SystemParams, templates: ResponseTemplates | None = None,
                         seed: int = 0, dt: float = DEFAULT_DT, threads: int | None = 1,
                         stream_label: str = "trajectory") -> AssignmentCounts:
    """Assignment statistics vs acquisition time for each requested initial level.

    Every trial of level ``s`` uses stream ``(seed, stream_id(label, s))``, so
    curves for different levels are independent and reproducible.
    """
    templates = templates or ResponseTemplates()
    grid = np.array([n_samples(t, dt) for t in t_m_grid], dtype=np.int64)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("t_m grid must be strictly increasing")
    rcum = templates.cumulative_weight(int(grid[-1]), dt)
    cfg = readout_config(params, templates, dt)
    centers = np.ascontiguousarray(templates.centers)
    out = {}
    for level in levels:
        s = level_index(level)
        if s > 3:
            raise ValueError("readout curves are defined for g, e, f, h")
        stream = stream_id(stream_label, s)

        def chunk(start, count, s=s, stream=stream):
            counts = np.zeros((grid.shape[0], 4), dtype=np.int64)
            status = _backend.kernels.readout_batch(seed, stream, start, count, s, cfg, centers,
                                                    rcum, grid, counts)
            if status != OK:
                raise RuntimeError(f"trial {start + status}: jump history overflow")
            return counts

        parts = run_chunked(chunk, trials, threads)
        out[s] = np.sum(parts, axis=0) if parts else np.zeros((grid.shape[0], 4), dtype=np.int64)
    return AssignmentCounts(grid * dt, out, trials)


def default_t_m_grid(t_max: float = 4e-6, dt: float = DEFAULT_DT) -> np.ndarray:
    return np.arange(1, n_samples(t_max, dt) + 1) * dt


def calibrate_noise(target: float, params: SystemParams, trials: int = 200_000,
                    t_m_grid: Sequence[float] | None = None, seed: int = 12345,
                    dt: float = DEFAULT_DT, bracket=(0.5, 4.0), tol: float = 1e-3,
                    t_rise: float = DEFAULT_T_RISE) -> tuple[float, float]:
    """Noise level whose minimum g/h aggregate misassignment equals ``target``.

    Uses common random numbers across bisection steps so the objective is
    monotone in the noise level. Returns ``(noise_std, optimal_t_m)``.
    """
    grid = default_t_m_grid(dt=dt) if t_m_grid is None else t_m_grid

    def evaluate(sigma):
        tab = misassignment_curves((0, 3), grid, trials, params,
                                   ResponseTemplates.circle(noise_std=sigma, t_rise=t_rise),
                                   seed=seed, dt=dt)
        agg = tab.aggregate()
        k = int(np.argmin(agg))
        return agg[k], tab.t_m[k]

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    if evaluate(math.exp(lo))[0] > target or evaluate(math.exp(hi))[0] < target:
        raise ValueError("target aggregate not bracketed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if evaluate(math.exp(mid))[0] < target:
            lo = mid
        else:
            hi = mid
    sigma = math.exp(0.5 * (lo + hi))
    return sigma, float(evaluate(sigma)[1])


def fit_loglog_slope(t, p, weights=None) -> tuple[float, float]:
    """Least-squares slope of log p vs log t and its standard error."""
    x = np.log(np.asarray(t, dtype=float))
    y = np.log(np.asarray(p, dtype=float))
    if weights is None:
        weights = np.ones_like(x)
    w = np.asarray(weights, dtype=float)
    A = np.column_stack([np.ones_like(x), x]) * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(A, y * np.sqrt(w), rcond=None)
    resid = y * np.sqrt(w) - A @ coef
    dof = max(1, len(x) - 2)
    cov = np.linalg.inv(A.T @ A) * (resid @ resid) / dof
    return float(coef[1]), float(math.sqrt(cov[1, 1]))


# --------------------------------------------------------------------------- shelving


def ideal_rabi(amplitudes, shelved: bool = False, pi_amplitude: float = 1.0) -> np.ndarray:
    """Populations (g, e, f) after a lossless g-e rotation, optionally followed by a perfect e-f swap."""
    theta = 0.5 * math.pi * np.asarray(amplitudes, dtype=float) / pi_amplitude
    pg, pe = np.cos(theta) ** 2, np.sin(theta) ** 2
    pf = np.zeros_like(pg)
    if shelved:
        pe, pf = pf, pe
    return np.column_stack([pg, pe, pf])


@dataclass
class ShelvingCurve:
    amplitudes: np.ndarray
    populations: np.ndarray
    p_g: np.ndarray
    shelved: bool

    @property
    def p_not_g(self) -> np.ndarray:
        return 1.0 - self.p_g

    @property
    def minimum_p_g(self) -> float:
        """Smallest probability of assigning g, reached near the pi-pulse."""
        return float(self.p_g.min())

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["amplitude", "shelved", "P_g", "P_e", "P_f", "P_assign_g", "P_assign_not_g"])
        for a, pop, pg in zip(self.amplitudes, self.populations, self.p_g):
            w.writerow([repr(float(a)), int(self.shelved)] + [repr(float(x)) for x in pop]
                       + [repr(float(pg)), repr(float(1.0 - pg))])


def shelving_rabi(amplitudes, shelved: bool, populations: Callable | None = None,
                  confusion: AncillaConfusion | None = None) -> ShelvingCurve:
    """Rabi curve as seen through the readout, with or without e-f shelving.

    Parameters
    ----------
    amplitudes : array_like
        g-e drive amplitudes.
    shelved : bool
        Insert the e-f pi-pulse between the Rabi pulse and the readout.
    populations : callable, optional
        ``populations(amplitudes, shelved) -> (n, 3)`` level populations at
        readout start; defaults to :func:`ideal_rabi`.
    confusion : AncillaConfusion, optional
        Defaults to perfect readout.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    populations = populations or ideal_rabi
    confusion = confusion or AncillaConfusion.perfect()
    pops = np.asarray(populations(amplitudes, shelved), dtype=float)
    if pops.shape != (amplitudes.shape[0], 3):
        raise ValueError("populations source must return an (n, 3) array")
    p_g = pops @ confusion.matrix[:3, 0]
    return ShelvingCurve(amplitudes, pops, p_g, shelved)


# --------------------------------------------------------------------------- raw dumps


def dump_record(record: TrajectoryRecord, path) -> tuple[Path, Path]:
    """Write samples as little-endian float64 (I, Q) pairs plus a JSON header."""
    path = Path(path)
    record.samples.astype("<f8").tofile(path)
    header = path.with_suffix(path.suffix + ".json")
    header.write_text(json.dumps({
        "dt": record.dt, "t_m": record.t_m, "level": LEVELS[record.true_initial_level],
        "n_samples": int(record.samples.shape[0]), "dtype": "<f8", "layout": "IQ interleaved",
        "jumps": [[t, LEVELS[a], LEVELS[b]] for t, a, b in record.jump_history],
    }))
    return path, header


def load_record(path) -> TrajectoryRecord:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    samples = np.fromfile(path, dtype="<f8").reshape(-1, 2)
    jumps = [(t, LEVELS.index(a), LEVELS.index(b)) for t, a, b in meta["jumps"]]
    return TrajectoryRecord(samples, meta["dt"], LEVELS.index(meta["level"]), jumps)
