"""Gate-set calibration syndromes.

A syndrome sequence is a tuple of gate indices; index 0 acts first in time.
Its ideal outcome is the probability of returning to |0> after applying the
ideal gates to |0>. The loss is the mean ``|R - R0|**exponent`` over all
sequences.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .qsim import ControlPulse, HoldSpec, QubitConfig, measure_batch
from .qsim.gates import IDEAL_GATES

GATE_LABELS = ("X", "Y")


def enumerate_sequences(gate_count: int = 2, max_len: int = 4) -> list[tuple[int, ...]]:
    """All gate-index tuples of length 1..max_len, shortest first, lexicographic within a length."""
    if max_len < 1 or gate_count < 1:
        raise ValueError("need max_len >= 1 and at least one gate")
    return [s for k in range(1, max_len + 1) for s in itertools.product(range(gate_count), repeat=k)]


def sequence_label(seq: Sequence[int], labels=GATE_LABELS) -> str:
    return "".join(labels[i] for i in seq)


def sequence_unitary(unitaries: Sequence[np.ndarray], seq: Sequence[int]) -> np.ndarray:
    U = np.eye(2, dtype=complex)
    for i in seq:
        U = unitaries[i] @ U
    return U


def return_probability(U: np.ndarray) -> float:
    return float(abs(U[0, 0]) ** 2)


def syndrome_outcomes(unitaries: Sequence[np.ndarray], sequences) -> np.ndarray:
    """Return probabilities of every sequence for the given gate unitaries."""
    return np.array([return_probability(sequence_unitary(unitaries, s)) for s in sequences])


def ideal_outcomes(sequences, labels=GATE_LABELS) -> np.ndarray:
    return syndrome_outcomes([IDEAL_GATES[l] for l in labels], sequences)


@dataclass(frozen=True)
class SyndromeSet:
    sequences: tuple
    ideal: np.ndarray
    labels: tuple = GATE_LABELS

    @classmethod
    def build(cls, max_len: int = 4, labels=GATE_LABELS) -> "SyndromeSet":
        seqs = tuple(enumerate_sequences(len(labels), max_len))
        return cls(seqs, ideal_outcomes(seqs, labels), tuple(labels))

    @property
    def n_seq(self) -> int:
        return len(self.sequences)

    def subset(self, max_len: int) -> "SyndromeSet":
        keep = [i for i, s in enumerate(self.sequences) if len(s) <= max_len]
        return SyndromeSet(tuple(self.sequences[i] for i in keep), self.ideal[keep], self.labels)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "R0"])
            for s, r in zip(self.sequences, self.ideal):
                w.writerow([sequence_label(s, self.labels), repr(float(r))])
        return path


@dataclass(frozen=True)
class GateSet:
    """One pulse per gate label, all sharing ``dbz``.

    With a hold protocol each pulse already ends with its fixed hold segments.
    """

    pulses: tuple

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if len({p.dbz for p in self.pulses}) > 1:
            raise ValueError("gate pulses must share dbz")

    def __getitem__(self, i) -> ControlPulse:
        return self.pulses[i]

    def __len__(self):
        return len(self.pulses)


def with_hold(free: np.ndarray, dbz: float, hold: HoldSpec | None) -> ControlPulse:
    """Gate pulse from its free voltages, followed by the hold segments if any."""
    free = np.asarray(free, dtype=float)
    if hold is None:
        return ControlPulse(free, dbz)
    return ControlPulse(np.concatenate([free, np.full(hold.gate_segments, hold.eps)]), dbz)


def concat_pulses(gate_set: GateSet, seq: Sequence[int], hold: HoldSpec | None = None,
                  L_max: int | None = None) -> ControlPulse:
    """Segment-wise concatenation of the sequence's gate pulses.

    With a hold protocol, ``hold.tail_segments`` extra segments at the hold
    voltage close the sequence.
    """
    if len(seq) == 0:
        raise ValueError("empty sequence")
    parts = [gate_set[i].epsilons for i in seq]
    if hold is not None and hold.tail_segments:
        parts.append(np.full(hold.tail_segments, hold.eps))
    eps = np.concatenate(parts)
    if L_max is not None and eps.size > L_max:
        raise ValueError(f"sequence needs {eps.size} segments, surrogate capacity is {L_max}")
    return ControlPulse(eps, gate_set[0].dbz)


def gsc_loss(predictions, ideal, exponent: int = 2) -> float:
    predictions = np.asarray(predictions, dtype=float)
    ideal = np.asarray(ideal, dtype=float)
    if predictions.shape != ideal.shape:
        raise ValueError(f"{predictions.shape[0] if predictions.ndim else 1} predictions for "
                         f"{ideal.shape[0] if ideal.ndim else 1} sequences")
    if exponent not in (2, 4):
        raise ValueError("exponent must be 2 or 4")
    return float(np.mean(np.abs(predictions - ideal) ** exponent))


def gsc_loss_grad(predictions, ideal, exponent: int = 2) -> np.ndarray:
    """Derivative of :func:`gsc_loss` with respect to each prediction."""
    r = np.asarray(predictions, dtype=float) - np.asarray(ideal, dtype=float)
    return exponent * r ** (exponent - 1) / r.size


def measured_syndromes(gate_set: GateSet, syndromes: SyndromeSet, cfg: QubitConfig,
                       hold: HoldSpec | None = None, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth ``(p_mean, p_stderr)`` of every syndrome sequence."""
    pulses = [concat_pulses(gate_set, s, hold) for s in syndromes.sequences]
    rngs = [np.random.default_rng([seed, i]) for i in range(len(pulses))]
    return measure_batch(pulses, cfg, rngs)
