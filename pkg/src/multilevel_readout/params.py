"""Device parameters, bosonic code definitions and random streams.

All quantities are SI: seconds, rad/s for angular frequencies, plain fractions
for probabilities and thermal populations.
"""

from __future__ import annotations

import dataclasses
import math
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from ._rng import SplitMix, trial_key

TWO_PI = 2.0 * math.pi

#: cycle time used to convert the fitted per-cycle gain probability to a rate
_DEFAULT_CYCLE = 2.4e-6 + 2.16e-6


class ConfigError(ValueError):
    """Invalid parameter file or parameter value."""


@dataclass(frozen=True)
class SystemParams:
    """Measured cQED parameters plus the effective error-model knobs.

    Frequencies ``storage_freq``, ``ancilla_freq``, ``readout_freq`` and the
    storage Kerr ``storage_kerr`` are kept for documentation only.
    """

    storage_T1: float = 0.99e-3
    storage_thermal_pop: float = 0.021
    storage_kappa_up: float = 2.7e-4 / _DEFAULT_CYCLE
    ancilla_T1_ge: float = 51e-6
    ancilla_T1_ef: float = 47e-6
    ancilla_T1_fh: float = 40e-6
    ancilla_T2_ge: float = 74e-6
    ancilla_T2_gf: float = 57e-6
    ancilla_thermal_pop: float = 0.004
    anharmonicity: float = TWO_PI * -137e6
    dispersive_shift_chi_st: float = TWO_PI * -900e3
    storage_kerr: float = TWO_PI * -2.2e3
    storage_freq: float = TWO_PI * 4.5e9
    ancilla_freq: float = TWO_PI * 4.2e9
    readout_freq: float = TWO_PI * 9.33e9
    t_map: float = 2.4e-6
    t_readout_reset: float = 2.16e-6
    demolition_prob: float = 2e-4
    delta_0: float = 5.2e-2
    delta_1: float = 1.5e-3
    ancilla_leak_prob: float = 5.7e-5
    ancilla_leak_T1: float = 30e-6
    n_max: int = 10

    def __post_init__(self):
        _validate(self)

    @property
    def cycle_time(self) -> float:
        """Duration of one map + single readout/reset attempt."""
        return self.t_map + self.t_readout_reset

    @property
    def kappa_down_effective(self) -> float:
        """Loss rate with the per-readout demolition folded in at one readout per cycle."""
        return 1.0 / self.storage_T1 + self.demolition_prob / self.cycle_time

    @property
    def kdt(self) -> float:
        return self.cycle_time / self.storage_T1 + self.demolition_prob

    @property
    def kut(self) -> float:
        return self.storage_kappa_up * self.cycle_time

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TIMES = (
    "storage_T1", "ancilla_T1_ge", "ancilla_T1_ef", "ancilla_T1_fh",
    "ancilla_T2_ge", "ancilla_T2_gf", "t_map", "t_readout_reset", "ancilla_leak_T1",
)
_POPULATIONS = (
    "storage_thermal_pop", "ancilla_thermal_pop", "demolition_prob", "ancilla_leak_prob",
)


def _validate(p: SystemParams) -> None:
    for name in _TIMES:
        v = getattr(p, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ConfigError(f"{name} must be a positive time, got {v!r}")
    for name in _POPULATIONS:
        v = getattr(p, name)
        if not (0.0 <= v < 1.0):
            raise ConfigError(f"{name} must lie in [0, 1), got {v!r}")
    for name in ("delta_0", "delta_1"):
        v = getattr(p, name)
        if not (0.0 <= v < 0.5):
            raise ConfigError(f"{name} must lie in [0, 0.5), got {v!r}")
    if not (p.storage_kappa_up >= 0.0 and math.isfinite(p.storage_kappa_up)):
        raise ConfigError("storage_kappa_up must be a non-negative rate")
    if p.ancilla_T2_ge > 2 * p.ancilla_T1_ge:
        raise ConfigError("ancilla_T2_ge exceeds 2*ancilla_T1_ge")
    if p.ancilla_T2_gf > 2 * p.ancilla_T1_ef:
        raise ConfigError("ancilla_T2_gf exceeds 2*ancilla_T1_ef")
    if not (isinstance(p.n_max, int) and p.n_max >= 1):
        raise ConfigError(f"n_max must be an integer >= 1, got {p.n_max!r}")


_FIELDS = {f.name: f for f in dataclasses.fields(SystemParams)}

CONFIG_ENV = "MLREADOUT_CONFIG"


def load_params(config_source: str | os.PathLike | Mapping | None = None) -> SystemParams:
    """Return defaults overridden by the keys of a flat YAML file or mapping.

    ``None`` falls back to the file named by ``$MLREADOUT_CONFIG`` if set.
    """
    if config_source is None:
        env = os.environ.get(CONFIG_ENV)
        config_source = env if env else {}
    if isinstance(config_source, Mapping):
        data = dict(config_source)
    else:
        path = Path(config_source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a flat key-value mapping")
    kwargs = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "n_max":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("n_max must be an integer")
        else:
            if isinstance(value, str):
                # YAML 1.1 reads exponent floats without a dot ("4e-05") as strings
                try:
                    value = float(value)
                except ValueError:
                    raise ConfigError(f"{key} must be numeric, got {value!r}") from None
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be numeric, got {value!r}")
            value = float(value)
        kwargs[key] = value
    return SystemParams(**kwargs)


def dump_params(params: SystemParams, path: str | os.PathLike | None = None) -> str:
    """Serialize to the flat YAML schema; floats use shortest round-trip repr."""
    lines = []
    for name in _FIELDS:
        v = getattr(params, name)
        lines.append(f"{name}: {v!r}" if name != "n_max" else f"{name}: {int(v)}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# --------------------------------------------------------------------------- codes


@dataclass(frozen=True)
class CodeSpec:
    """A bosonic code read out through membership of its photon number in ``flip_set``.

    Codewords are tuples of ``(photon_number, amplitude)``. ``|0_L>`` lives in
    the flip set, ``|1_L>`` outside it.
    """

    name: str
    zero_codeword: tuple
    one_codeword: tuple
    flip_set: frozenset
    distance: int
    prior: dict = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "zero_codeword", tuple((int(n), complex(a)) for n, a in self.zero_codeword))
        object.__setattr__(self, "one_codeword", tuple((int(n), complex(a)) for n, a in self.one_codeword))
        object.__setattr__(self, "flip_set", frozenset(int(n) for n in self.flip_set))
        for word in (self.zero_codeword, self.one_codeword):
            norm = sum(abs(a) ** 2 for _, a in word)
            if abs(norm - 1.0) > 1e-12:
                raise ValueError(f"{self.name}: codeword not normalized ({norm})")
        s0, s1 = self.support(0), self.support(1)
        if s0 & s1:
            raise ValueError(f"{self.name}: photon numbers {sorted(s0 & s1)} appear in both codewords")
        if not s0 <= self.flip_set or s1 & self.flip_set:
            raise ValueError(f"{self.name}: flip set must contain |0_L> and exclude |1_L>")
        gap = min(abs(a - b) for a in s0 for b in s1)
        if gap != self.distance:
            raise ValueError(f"{self.name}: distance {self.distance} != support gap {gap}")
        prior = {}
        for word in (self.zero_codeword, self.one_codeword):
            for n, _ in word:
                prior[n] = 0.5 / len(word)
        object.__setattr__(self, "prior", prior)

    def support(self, logical: int) -> frozenset:
        word = self.zero_codeword if logical == 0 else self.one_codeword
        return frozenset(n for n, _ in word)

    def weights(self, logical: int) -> dict:
        """|amplitude|^2 per Fock component of a codeword."""
        word = self.zero_codeword if logical == 0 else self.one_codeword
        return {n: abs(a) ** 2 for n, a in word}

    @property
    def max_photon(self) -> int:
        return max(self.support(0) | self.support(1))

    def prior_vector(self, n_max: int) -> np.ndarray:
        p = np.zeros(n_max + 1)
        for n, w in self.prior.items():
            p[n] = w
        return p

    def in_flip_set(self, n_max: int) -> np.ndarray:
        mask = np.zeros(n_max + 1, dtype=np.uint8)
        for n in self.flip_set:
            if n <= n_max:
                mask[n] = 1
        return mask


_SQRT_HALF = math.sqrt(0.5)


def builtin_codes() -> list[CodeSpec]:
    """The four Fock codes and two binomial codes of the experiment."""
    codes = [
        CodeSpec(f"fock-0-{L}", ((0, 1.0),), ((L, 1.0),), {0, 1}, L) for L in (2, 3, 4, 5)
    ]
    codes.append(CodeSpec("binomial-1", ((2, 1.0),), ((0, _SQRT_HALF), (4, _SQRT_HALF)), {1, 2}, 2))
    codes.append(CodeSpec("binomial-2", ((3, 1.0),), ((0, _SQRT_HALF), (6, _SQRT_HALF)), {1, 2, 3}, 3))
    return codes


def get_code(name: str) -> CodeSpec:
    for code in builtin_codes():
        if code.name == name:
            return code
    raise KeyError(f"unknown code {name!r}; known: {[c.name for c in builtin_codes()]}")


# --------------------------------------------------------------------------- streams


def stream_id(*labels) -> int:
    """Stable stream index from a tuple of labels (code name, input state, purpose...)."""
    return zlib.crc32(":".join(str(x) for x in labels).encode())


class RandomStream:
    """Reproducible random source identified by ``(seed, stream_index)``.

    Owned by one worker; not thread-safe. ``key(trial)`` gives the per-trial
    key used by the Monte Carlo kernels, ``numpy()`` a Generator for
    vectorized draws.
    """

    def __init__(self, seed: int, stream_index: int = 0):
        if not (0 <= seed < 2**64) or stream_index < 0:
            raise ValueError("seed must be a 64-bit unsigned integer and stream_index >= 0")
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        self._counter = SplitMix(trial_key(self.seed, self.stream_index, 2**63))

    def key(self, trial: int) -> int:
        return trial_key(self.seed, self.stream_index, trial)

    def next_u64(self) -> int:
        return self._counter.next_u64()

    def random(self) -> float:
        return self._counter.next_double()

    def numpy(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *labels) -> "RandomStream":
        return RandomStream(self.seed, stream_id(self.stream_index, *labels))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_index={self.stream_index})"
