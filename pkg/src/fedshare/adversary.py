"""Passive honest-but-curious attacker at the aggregation server.

The attacker sees every uploaded local model and holds a labeled evaluation
pool. For each update it measures per-class accuracy on fixed per-class probe
sets and guesses that the sender's overrepresented class is the class the
model predicts best. The attack touches nothing but the received parameters
and the probe: it has no access path to any participant's data.
"""
from __future__ import annotations

import io
from csv import writer as csv_writer
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .model import ModelParameters, evaluate_accuracy

__all__ = [
    "AttackProbe",
    "AttackVerdict",
    "AttackSummary",
    "build_probe",
    "infer_overrepresented",
    "score_verdicts",
    "attack_round",
    "summarize_attack",
    "is_secure",
    "verdict_csv",
]


@dataclass(frozen=True)
class AttackProbe:
    """Per-class evaluation sets S_0..S_{n_c-1}, all the same size."""

    class_sets: tuple[LabeledDataset, ...]
    per_class_size: int

    @property
    def n_classes(self) -> int:
        return len(self.class_sets)


@dataclass(frozen=True)
class AttackVerdict:
    """One inference: the evidence vector and the class it points at."""

    participant: int
    round: int
    inferred_class: int
    evidence: np.ndarray
    true_class: int

    @property
    def correct(self) -> bool:
        return self.inferred_class == self.true_class


@dataclass(frozen=True)
class AttackSummary:
    """Per-run attack digest: mean R over the trailing rounds, and the max."""

    mean_tail_R: float
    max_R: float
    rounds: int


def build_probe(
    pool: LabeledDataset, per_class_size: int, rng: np.random.Generator
) -> AttackProbe:
    """Seeded per-class draws from the pool; size 0 means use every sample."""
    if per_class_size < 0:
        raise ValueError("per_class_size must be >= 0")
    sets = []
    size = per_class_size
    for c, positions in enumerate(pool.class_index):
        if per_class_size == 0:
            chosen = positions
            size = positions.size
        else:
            if positions.size < per_class_size:
                raise ValueError(
                    f"class {c} has {positions.size} samples, probe wants {per_class_size}"
                )
            chosen = rng.choice(positions, size=per_class_size, replace=False)
        sets.append(pool.subset(chosen))
    if len({len(s) for s in sets}) > 1:
        raise ValueError("probe sets must all be the same size (pool is unbalanced)")
    return AttackProbe(tuple(sets), size)


def infer_overrepresented(
    m: ModelParameters, probe: AttackProbe
) -> tuple[int, np.ndarray]:
    """Evidence vector (accuracy on each S_i) and its argmax (ties: lowest)."""
    evidence = np.array([evaluate_accuracy(m, s) for s in probe.class_sets])
    return int(np.argmax(evidence)), evidence


def score_verdicts(verdicts: list[AttackVerdict]) -> float:
    """R: how many participants' overrepresented classes were identified."""
    return float(sum(v.correct for v in verdicts))


def attack_round(
    updates: list[tuple[int, ModelParameters]],
    probe: AttackProbe,
    truth: dict[int, int],
    round_index: int = 0,
) -> tuple[list[AttackVerdict], float]:
    """Run the inference on every uploaded update and score the round."""
    verdicts = []
    for pid, m in updates:
        if pid not in truth:
            raise ValueError(f"no ground truth for participant {pid}")
        inferred, evidence = infer_overrepresented(m, probe)
        verdicts.append(AttackVerdict(pid, round_index, inferred, evidence, truth[pid]))
    return verdicts, score_verdicts(verdicts)


def summarize_attack(r_trace: list[float], tail_fraction: float = 0.1) -> AttackSummary:
    """Digest a per-round R trace: mean over the last `tail_fraction` of rounds."""
    if not r_trace:
        raise ValueError("empty attack trace")
    tail = max(1, int(round(tail_fraction * len(r_trace))))
    return AttackSummary(
        mean_tail_R=float(np.mean(r_trace[-tail:])),
        max_R=float(max(r_trace)),
        rounds=len(r_trace),
    )


def is_secure(mean_R: float, n_p: int, n_c: int, tie_inflation: float = 0.5) -> bool:
    """Not more successful than random guessing, up to tie artifacts.

    Random guessing scores n_p/n_c in expectation; deterministic tie-breaking
    can add up to about one extra hit, covered by the inflation allowance.
    """
    return mean_R <= n_p / n_c + tie_inflation


def verdict_csv(verdicts: list[AttackVerdict]) -> str:
    """Verdict trace as CSV: round, participant, guess, truth, correctness, evidence."""
    if not verdicts:
        raise ValueError("no verdicts")
    n_c = verdicts[0].evidence.size
    buf = io.StringIO()
    w = csv_writer(buf, lineterminator="\n")
    w.writerow(
        ["round", "participant", "inferred_class", "true_class", "correct"]
        + [f"evidence_{c}" for c in range(n_c)]
    )
    for v in verdicts:
        w.writerow(
            [v.round, v.participant, v.inferred_class, v.true_class, int(v.correct)]
            + [f"{e:.6f}" for e in v.evidence]
        )
    return buf.getvalue()
