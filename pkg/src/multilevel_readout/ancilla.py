"""Four-level ancilla: level labels, relaxation rates and readout confusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import SystemParams

LEVELS = ("g", "e", "f", "h")
G, E, F, H = range(4)
HIGHER = 4

#: readout row of the leaked level above h, which no ladder pulse addresses
DEFAULT_HIGHER_ROW = (0.0, 0.05, 0.15, 0.80)

#: single-readout assignment probabilities (rows: prepared g, e, f, h) from
#: 2e6 simulated records per level at the default noise and the acquisition
#: time minimizing P(g|h) + P(not g|g); regenerate with
#: ``misassignment_curves(...).confusion()``
DEFAULT_CONFUSION = (
    (0.999916, 8.2e-05, 0.0, 2e-06),
    (0.0206475, 0.9793495, 2.5e-06, 5e-07),
    (0.0002405, 0.022256, 0.977495, 8.5e-06),
    (1.05e-05, 0.000291, 0.0259555, 0.973743),
)


def level_index(level) -> int:
    if isinstance(level, str):
        if level == "higher":
            return HIGHER
        return LEVELS.index(level)
    level = int(level)
    if not 0 <= level <= HIGHER:
        raise ValueError(f"level must be 0..4, got {level}")
    return level


def decay_rates(params: SystemParams) -> tuple:
    """``(0, e->g, f->e, h->f)`` relaxation rates, 1/s."""
    return (0.0, 1.0 / params.ancilla_T1_ge, 1.0 / params.ancilla_T1_ef, 1.0 / params.ancilla_T1_fh)


def thermal_rate(params: SystemParams) -> float:
    """Thermal ``g -> e`` excitation rate, 1/s."""
    return params.ancilla_thermal_pop / params.ancilla_T1_ge


@dataclass(frozen=True)
class AncillaConfusion:
    """``matrix[true, assigned]`` for a single ancilla readout over g, e, f, h.

    ``higher_row`` gives the assignment probabilities of the leaked level.
    """

    matrix: np.ndarray
    higher_row: tuple = DEFAULT_HIGHER_ROW

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("confusion matrix must be 4x4")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("confusion rows must be probability vectors")
        if np.any(np.diag(m) <= 0.5):
            raise ValueError("confusion diagonal must exceed 0.5")
        h = np.array(self.higher_row, dtype=float)
        if h.shape != (4,) or np.any(h < 0) or abs(h.sum() - 1.0) > 1e-12:
            raise ValueError("higher_row must be a probability vector of length 4")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "higher_row", tuple(float(x) for x in h))

    @classmethod
    def default(cls) -> "AncillaConfusion":
        return cls(np.array(DEFAULT_CONFUSION))

    @classmethod
    def perfect(cls) -> "AncillaConfusion":
        return cls(np.eye(4))

    @classmethod
    def from_counts(cls, counts, higher_row=DEFAULT_HIGHER_ROW) -> "AncillaConfusion":
        counts = np.asarray(counts, dtype=float)
        m = counts / counts.sum(axis=1, keepdims=True)
        # renormalize once more so rows sum to one to the last ulp
        m = m / m.sum(axis=1, keepdims=True)
        return cls(m, higher_row)

    def full(self) -> np.ndarray:
        """5x4 matrix including the leaked level."""
        return np.vstack([self.matrix, self.higher_row])

    def cdf(self) -> np.ndarray:
        """Per-row cumulative thresholds (5x3) used by the kernels."""
        return np.ascontiguousarray(np.cumsum(self.full(), axis=1)[:, :3])

    def p_assign_g(self, level) -> float:
        return float(self.full()[level_index(level), G])
