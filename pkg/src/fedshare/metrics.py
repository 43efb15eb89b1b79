"""Learning-performance metrics and the cross-case comparison report.

Convergence speed (CS) is the first round whose accuracy reaches 95% of the
baseline's best accuracy; maximal accuracy (MA) is the ratio of trace maxima.
Both are relative to the same-architecture centralized baseline, which factors
the model's intrinsic fit out of the comparison.
"""
from __future__ import annotations

import io
import json
from csv import writer as csv_writer
from dataclasses import dataclass, field

import numpy as np

from .adversary import AttackSummary, is_secure

__all__ = [
    "AccuracyTrace",
    "CaseRun",
    "CaseSummary",
    "ComparisonReport",
    "CONVERGENCE_FRACTION",
    "convergence_speed",
    "maximal_accuracy_ratio",
    "aggregate_report",
]

CONVERGENCE_FRACTION = 0.95


@dataclass(frozen=True)
class AccuracyTrace:
    """Per-round accuracies a_1..a_T of one training process."""

    values: np.ndarray
    eval_set: str = ""

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("trace must be 1-D")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("accuracies must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


def convergence_speed(trace: AccuracyTrace, baseline: AccuracyTrace) -> int | None:
    """First round (1-based) whose accuracy reaches 95% of the baseline max.

    Returns None when the trace never gets there (non-convergent).
    """
    if len(baseline) == 0:
        raise ValueError("baseline trace is empty")
    if len(trace) == 0:
        raise ValueError("trace is empty")
    threshold = CONVERGENCE_FRACTION * float(baseline.values.max())
    reached = np.flatnonzero(trace.values >= threshold)
    return int(reached[0]) + 1 if reached.size else None


def maximal_accuracy_ratio(trace: AccuracyTrace, baseline: AccuracyTrace) -> float:
    """Best accuracy of the trace relative to the baseline's best; may exceed 1."""
    if len(baseline) == 0:
        raise ValueError("baseline trace is empty")
    if len(trace) == 0:
        raise ValueError("trace is empty")
    base_max = float(baseline.values.max())
    if base_max <= 0.0:
        raise ValueError("baseline max accuracy is zero")
    return float(trace.values.max()) / base_max


@dataclass(frozen=True)
class CaseRun:
    """One repetition of one measurement case."""

    trace: AccuracyTrace
    attack: AttackSummary | None = None
    seed: int | None = None


@dataclass
class CaseSummary:
    cs_mean: float | None
    cs_values: list[int | None]
    nonconvergent: int
    ma_mean: float
    ma_values: list[float]
    attack_mean_R: float | None
    secure: bool | None


@dataclass
class ComparisonReport:
    """Per-case CS/MA/R summary over repetitions, Table-style."""

    cases: dict[str, CaseSummary]
    repetitions: dict[str, int]
    seeds: dict[str, list[int]] = field(default_factory=dict)
    baseline_case: str = "baseline"
    config_digest: str = ""

    def to_json(self) -> str:
        payload = {
            "baseline_case": self.baseline_case,
            "config_digest": self.config_digest,
            "repetitions": self.repetitions,
            "seeds": self.seeds,
            "cases": {
                name: {
                    "cs_mean": s.cs_mean,
                    "cs_values": s.cs_values,
                    "nonconvergent": s.nonconvergent,
                    "ma_mean": s.ma_mean,
                    "ma_values": s.ma_values,
                    "attack_mean_R": s.attack_mean_R,
                    "secure": s.secure,
                }
                for name, s in self.cases.items()
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv_writer(buf, lineterminator="\n")
        w.writerow(["method", "CS", "MA", "R", "secure", "repetitions"])
        for name in sorted(self.cases):
            s = self.cases[name]
            w.writerow(
                [
                    name,
                    "" if s.cs_mean is None else f"{s.cs_mean:.1f}",
                    f"{s.ma_mean:.4f}",
                    "" if s.attack_mean_R is None else f"{s.attack_mean_R:.2f}",
                    "" if s.secure is None else int(s.secure),
                    self.repetitions[name],
                ]
            )
        return buf.getvalue()


def aggregate_report(
    runs: dict[str, list[CaseRun]],
    baseline_case: str = "baseline",
    n_p: int | None = None,
    n_c: int | None = None,
    tie_inflation: float = 0.5,
    config_digest: str = "",
) -> ComparisonReport:
    """Average CS, MA and R per case against the baseline case's runs.

    When a case has as many repetitions as the baseline, repetition i is
    compared against baseline repetition i; otherwise every run is compared
    against the pooled baseline (all baseline traces concatenated, which
    preserves the max that CS and MA depend on). Non-convergent runs are
    excluded from the CS mean and counted separately. The security flag is
    computed when n_p and n_c are given.
    """
    if baseline_case not in runs or not runs[baseline_case]:
        raise ValueError(f"baseline case {baseline_case!r} is missing")
    for name, case_runs in runs.items():
        if not case_runs:
            raise ValueError(f"case {name!r} has no runs")

    baselines = [r.trace for r in runs[baseline_case]]
    pooled = AccuracyTrace(np.concatenate([t.values for t in baselines]))

    cases: dict[str, CaseSummary] = {}
    for name, case_runs in runs.items():
        paired = len(case_runs) == len(baselines)
        cs_values: list[int | None] = []
        ma_values: list[float] = []
        r_values: list[float] = []
        for i, run in enumerate(case_runs):
            ref = baselines[i] if paired else pooled
            cs_values.append(convergence_speed(run.trace, ref))
            ma_values.append(maximal_accuracy_ratio(run.trace, ref))
            if run.attack is not None:
                r_values.append(run.attack.mean_tail_R)
        converged = [c for c in cs_values if c is not None]
        mean_R = float(np.mean(r_values)) if r_values else None
        secure = None
        if mean_R is not None and n_p is not None and n_c is not None:
            secure = is_secure(mean_R, n_p, n_c, tie_inflation)
        cases[name] = CaseSummary(
            cs_mean=float(np.mean(converged)) if converged else None,
            cs_values=cs_values,
            nonconvergent=len(cs_values) - len(converged),
            ma_mean=float(np.mean(ma_values)),
            ma_values=ma_values,
            attack_mean_R=mean_R,
            secure=secure,
        )

    return ComparisonReport(
        cases=cases,
        repetitions={name: len(case_runs) for name, case_runs in runs.items()},
        seeds={
            name: [r.seed for r in case_runs if r.seed is not None]
            for name, case_runs in runs.items()
        },
        baseline_case=baseline_case,
        config_digest=config_digest,
    )
