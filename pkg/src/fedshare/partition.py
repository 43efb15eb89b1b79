"""Per-participant data splits and the sharing-quota arithmetic.

The non-IID split gives participant i a fraction p of class i (its
overrepresented class) and scatters the rest of that class uniformly over the
other participants. The quota solver answers how many samples of each class a
participant must receive per peer per round for its underrepresented classes
to reach the uniform per-class target.
"""
from __future__ import annotations

import io
import math
from csv import writer as csv_writer
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dataset import LabeledDataset

__all__ = [
    "PartitionConfig",
    "ParticipantDataset",
    "UnsupportedConfigError",
    "InfeasibleConfigError",
    "partition_noniid",
    "partition_iid",
    "overrepresentation_rate",
    "sharing_quota",
    "summary_csv",
]


class UnsupportedConfigError(ValueError):
    """A partition layout the one-class-per-participant design cannot express."""


class InfeasibleConfigError(ValueError):
    """Quota has no solution (a participant owns samples of one class only)."""


def _snap(p: float) -> Fraction:
    # Exact rational arithmetic keeps ceil() honest at break-even points such
    # as p == 1/n_c, where float dust would otherwise bump the quota to 1.
    return Fraction(p).limit_denominator(10**9)


@dataclass(frozen=True)
class PartitionConfig:
    """Participant count, class count, overrepresentation rate, pool size per class."""

    n_p: int
    n_c: int
    p: float
    n_s: int

    def __post_init__(self):
        if self.n_p < 2:
            raise ValueError("n_p must be >= 2")
        if self.n_c < 2:
            raise ValueError("n_c must be >= 2")
        if not (1.0 / self.n_c <= self.p <= 1.0):
            raise ValueError(f"p must lie in [1/n_c, 1], got {self.p}")
        if self.n_s < self.n_c:
            raise ValueError("n_s must be >= n_c")


@dataclass(frozen=True)
class ParticipantDataset:
    """One participant's slice of the pool; overrepresented_class is None for IID."""

    owner: int
    data: LabeledDataset
    overrepresented_class: int | None = None


def _check_balanced(pool: LabeledDataset, n_s: int | None = None) -> int:
    counts = pool.class_counts()
    if counts.size == 0 or counts.min() != counts.max():
        raise ValueError(f"pool is not class-balanced: counts {counts.tolist()}")
    if n_s is not None and counts[0] != n_s:
        raise ValueError(f"pool holds {counts[0]} samples per class, config says {n_s}")
    return int(counts[0])


def partition_noniid(
    pool: LabeledDataset, cfg: PartitionConfig, rng: np.random.Generator
) -> list[ParticipantDataset]:
    """Split a balanced pool so participant i overrepresents class i at rate p.

    Participant i gets floor(p * n_s) samples of class i; the leftover samples
    of class i go to the other participants in near-equal shares, the
    remainder landing on uniformly chosen peers. Every pool sample is assigned
    to exactly one participant.
    """
    if cfg.n_p != cfg.n_c:
        raise UnsupportedConfigError(
            f"one overrepresented class per participant needs n_p == n_c, "
            f"got n_p={cfg.n_p}, n_c={cfg.n_c}"
        )
    if pool.n_c != cfg.n_c:
        raise ValueError(f"pool has {pool.n_c} classes, config says {cfg.n_c}")
    _check_balanced(pool, cfg.n_s)

    own = int(_snap(cfg.p) * cfg.n_s)  # floor: Fraction * int truncates via int()
    assigned: list[list[np.ndarray]] = [[] for _ in range(cfg.n_p)]
    for c in range(cfg.n_c):
        positions = rng.permutation(pool.class_index[c])
        assigned[c].append(positions[:own])
        rest = positions[own:]
        peers = np.array([i for i in range(cfg.n_p) if i != c])
        base, extra = divmod(rest.size, peers.size)
        lucky = rng.choice(peers, size=extra, replace=False)
        shares = np.full(peers.size, base)
        shares[np.isin(peers, lucky)] += 1
        start = 0
        for peer, share in zip(peers, shares):
            assigned[peer].append(rest[start : start + share])
            start += share

    return [
        ParticipantDataset(i, pool.subset(np.concatenate(parts)), overrepresented_class=i)
        for i, parts in enumerate(assigned)
    ]


def partition_iid(
    pool: LabeledDataset, n_p: int, rng: np.random.Generator
) -> list[ParticipantDataset]:
    """Split a balanced pool into n_p disjoint near-uniform slices.

    Each participant's count of every class is within +-1 of count/n_p, and so
    are the totals: per-class remainders are dealt around one shuffled
    participant cycle, so no participant collects extras twice before everyone
    has one.
    """
    if n_p < 1:
        raise ValueError("n_p must be >= 1")
    _check_balanced(pool)
    assigned: list[list[np.ndarray]] = [[] for _ in range(n_p)]
    cycle = rng.permutation(n_p)
    cursor = 0
    for c in range(pool.n_c):
        positions = rng.permutation(pool.class_index[c])
        base, extra = divmod(positions.size, n_p)
        shares = np.full(n_p, base)
        for k in range(extra):
            shares[cycle[(cursor + k) % n_p]] += 1
        cursor = (cursor + extra) % n_p
        start = 0
        for i in range(n_p):
            assigned[i].append(positions[start : start + shares[i]])
            start += shares[i]
    return [
        ParticipantDataset(i, pool.subset(np.concatenate(parts)))
        for i, parts in enumerate(assigned)
    ]


def overrepresentation_rate(d: ParticipantDataset | LabeledDataset) -> tuple[float, int]:
    """Largest class share of a dataset and the class achieving it.

    Realizes p = n_{s,o} / sum_i n_{s,i}; ties resolve to the lowest class.
    """
    data = d.data if isinstance(d, ParticipantDataset) else d
    counts = data.class_counts()
    total = counts.sum()
    if total == 0:
        raise ValueError("dataset is empty")
    o = int(np.argmax(counts))
    return float(counts[o] / total), o


def sharing_quota(cfg: PartitionConfig) -> int:
    """Samples of each class a participant must receive from every peer, per round.

    Solves, for the smallest integer x >= 0,
        n_s*(1-p)/(n_c-1) + (n_p-1)*x >= n_s/n_c
    i.e. receiving x samples per class per peer lifts each underrepresented
    class to the uniform per-class target. Infeasible at p = 1: a participant
    holding a single class has nothing to send for the other classes.
    """
    if cfg.p >= 1.0:
        raise InfeasibleConfigError("p = 1 leaves nothing to share for other classes")
    p = _snap(cfg.p)
    deficit = Fraction(cfg.n_s, cfg.n_c) - Fraction(cfg.n_s) * (1 - p) / (cfg.n_c - 1)
    per_peer = deficit / (cfg.n_p - 1)
    return max(0, math.ceil(per_peer))


def summary_csv(participants: list[ParticipantDataset]) -> str:
    """Per-participant class counts plus the realized overrepresentation rate."""
    if not participants:
        raise ValueError("no participants")
    n_c = participants[0].data.n_c
    buf = io.StringIO()
    w = csv_writer(buf, lineterminator="\n")
    w.writerow(
        ["participant", "overrepresented_class", "rate"] + [f"class_{c}" for c in range(n_c)]
    )
    for part in participants:
        rate, _ = overrepresentation_rate(part)
        oc = "" if part.overrepresented_class is None else part.overrepresented_class
        w.writerow([part.owner, oc, f"{rate:.6f}"] + part.data.class_counts().tolist())
    return buf.getvalue()
