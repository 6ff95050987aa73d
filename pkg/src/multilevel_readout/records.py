"""Per-trial readout sequences and their line-oriented JSON representation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

ANCILLA_LABELS = ("g", "e", "f", "h")
STUCK_THRESHOLD = 5

#: schema tag written into every JSONL line and run manifest
SEQUENCE_SCHEMA = "readout-sequence/1"


@dataclass
class ReadoutSequence:
    """One trial of the repeated-readout protocol.

    ``outcomes`` use 1 for "ancilla flipped" (photon number in the flip set)
    and 0 for "no flip". ``durations`` are the storage-evolution intervals that
    precede each readout and are what the inference model consumes; the first
    one covers the final herald check and the first mapping.
    """

    outcomes: list
    durations: list
    trial_id: int = 0
    true_initial_n: int | None = None
    raw_ancilla_outcomes: list = field(default_factory=list)
    cycle_durations: list = field(default_factory=list)
    reset_iterations: list = field(default_factory=list)
    code: str | None = None

    def __post_init__(self):
        self.outcomes = [int(o) for o in self.outcomes]
        self.durations = [float(d) for d in self.durations]
        if len(self.outcomes) != len(self.durations):
            raise ValueError(
                f"trial {self.trial_id}: {len(self.outcomes)} outcomes but {len(self.durations)} durations"
            )
        if any(o not in (0, 1) for o in self.outcomes):
            raise ValueError(f"trial {self.trial_id}: outcomes must be 0 (no flip) or 1 (flip)")
        if any(d < 0 for d in self.durations):
            raise ValueError(f"trial {self.trial_id}: negative duration")
        for name in ("raw_ancilla_outcomes", "cycle_durations", "reset_iterations"):
            seq = getattr(self, name)
            if seq and len(seq) != len(self.outcomes):
                raise ValueError(f"trial {self.trial_id}: {name} has wrong length")

    def __len__(self):
        return len(self.outcomes)

    @property
    def stuck_flags(self) -> list:
        return [k >= STUCK_THRESHOLD for k in self.reset_iterations]

    @property
    def stuck(self) -> bool:
        return any(self.stuck_flags)

    def to_json(self) -> str:
        doc = {
            "schema": SEQUENCE_SCHEMA,
            "trial_id": self.trial_id,
            "code": self.code,
            "true_initial_n": self.true_initial_n,
            "outcomes": self.outcomes,
            "durations": self.durations,
        }
        if self.raw_ancilla_outcomes:
            doc["raw"] = [ANCILLA_LABELS[r] for r in self.raw_ancilla_outcomes]
            doc["cycle_durations"] = self.cycle_durations
            doc["iterations"] = self.reset_iterations
            doc["stuck"] = self.stuck_flags
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ReadoutSequence":
        doc = json.loads(line)
        if not isinstance(doc, dict) or "outcomes" not in doc or "durations" not in doc:
            raise ValueError("each line needs at least 'outcomes' and 'durations'")
        raw = doc.get("raw") or []
        return cls(
            outcomes=doc["outcomes"],
            durations=doc["durations"],
            trial_id=int(doc.get("trial_id", 0)),
            true_initial_n=doc.get("true_initial_n"),
            raw_ancilla_outcomes=[ANCILLA_LABELS.index(r) for r in raw],
            cycle_durations=doc.get("cycle_durations") or [],
            reset_iterations=doc.get("iterations") or [],
            code=doc.get("code"),
        )


def read_sequences(path: str | os.PathLike) -> Iterator[ReadoutSequence]:
    """Yield sequences from a JSONL file, skipping blank lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield ReadoutSequence.from_json(line)
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc


def write_sequences(path: str | os.PathLike, sequences: Iterable[ReadoutSequence]) -> int:
    count = 0
    with open(Path(path), "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(seq.to_json())
            fh.write("\n")
            count += 1
    return count
