"""Round orchestration: exchange, local epochs, upload, FedAvg, redistribution.

A round runs five barriered steps: (1) optional peer-to-peer data exchange and
mixture building, (2) every selected participant trains the current global
model for `local_epochs` on its mixture, (3) updates and their training-set
sizes are collected, (4) the server aggregates them with a sample-count
weighted mean, (5) everyone receives the new global model. All randomness is
keyed by (experiment seed, purpose, participant, round), so replays are exact
and independent of execution order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import LabeledDataset
from .exchange import ExchangePacket, MixturePolicy, build_training_mixture, run_exchange
from .model import (
    ModelParameters,
    ModelSpec,
    OptimizerState,
    TrainingDivergenceError,
    evaluate_accuracy,
    init_model,
    init_optimizer,
    train_epoch,
)
from .partition import (
    ParticipantDataset,
    PartitionConfig,
    partition_iid,
    partition_noniid,
    sharing_quota,
)
from .seeding import derive_rng, derive_seed

__all__ = [
    "AggregationError",
    "RoundAbortedError",
    "FederationConfig",
    "ParticipantState",
    "ServerState",
    "RoundRecord",
    "ExperimentReport",
    "AttackFn",
    "fedavg",
    "setup_participants",
    "run_round",
    "run_experiment",
    "run_centralized",
]

# Attack callable: (updates [(participant, model)], round index) -> (verdicts, R).
# Kept as a callable so the adversary stays decoupled from the orchestration.
AttackFn = Callable[[list[tuple[int, ModelParameters]], int], tuple[list, float]]


class AggregationError(ValueError):
    """Updates cannot be averaged (shape mismatch, bad weights)."""


class RoundAbortedError(RuntimeError):
    """A participant's local training diverged; carries who and when."""

    def __init__(self, participant: int, round_index: int, cause: TrainingDivergenceError):
        super().__init__(
            f"participant {participant} diverged in round {round_index} "
            f"(batch {cause.batch_index})"
        )
        self.participant = participant
        self.round_index = round_index


@dataclass(frozen=True)
class FederationConfig:
    """Everything a federated run needs besides the data itself."""

    rounds: int
    model: ModelSpec
    partition: PartitionConfig
    partition_kind: str = "noniid"
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    local_epochs: int = 1
    participation: float = 1.0
    exchange_enabled: bool = False
    mixture_policy: MixturePolicy = MixturePolicy()
    uniform_weighting: bool = False
    seed: int = 0
    keep_updates: bool = False

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not (0.0 < self.participation <= 1.0):
            raise ValueError("participation must lie in (0, 1]")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.partition_kind not in ("iid", "noniid"):
            raise ValueError(f"unknown partition_kind {self.partition_kind!r}")


@dataclass
class ParticipantState:
    """One vehicle: its slice of data, current model, and rng stream root."""

    id: int
    dataset: ParticipantDataset
    model: ModelParameters
    optimizer: OptimizerState
    rng_seed: int
    inbox: list[ExchangePacket] = field(default_factory=list)


@dataclass
class ServerState:
    global_model: ModelParameters
    round: int = 0
    received_updates: list[tuple[int, ModelParameters, int]] = field(default_factory=list)


@dataclass
class RoundRecord:
    """What one round produced: accuracy, training sizes, optional attack data."""

    round: int
    accuracy: float
    sizes: dict[int, int]
    attack_R: float | None = None
    verdicts: list | None = None
    updates: list[tuple[int, ModelParameters, int]] | None = None


@dataclass
class ExperimentReport:
    """Full per-round trace of one training process."""

    case: str
    seed: int
    eval_set: str
    initial_accuracy: float
    records: list[RoundRecord]
    truth: dict[int, int] | None = None

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.records]

    @property
    def attack_trace(self) -> list[float]:
        return [r.attack_R for r in self.records if r.attack_R is not None]

    def to_json(self) -> str:
        payload = {
            "case": self.case,
            "seed": self.seed,
            "eval_set": self.eval_set,
            "initial_accuracy": self.initial_accuracy,
            "truth": None if self.truth is None else {str(k): v for k, v in self.truth.items()},
            "rounds": [
                {
                    "round": r.round,
                    "accuracy": r.accuracy,
                    "sizes": {str(k): v for k, v in sorted(r.sizes.items())},
                    "attack_R": r.attack_R,
                }
                for r in self.records
            ],
        }
        return json.dumps(payload, sort_keys=True)


def fedavg(updates: Sequence[tuple[ModelParameters, int]]) -> ModelParameters:
    """Sample-count weighted coordinate-wise mean of parameter vectors.

    Weights are count/total; the mean is computed anchored on the first update
    so averaging identical vectors returns them bit-exactly.
    """
    if not updates:
        raise AggregationError("no updates to aggregate")
    first, _ = updates[0]
    total = 0
    for m, count in updates:
        if m.layer_dims != first.layer_dims:
            raise AggregationError(
                f"shape mismatch: {m.layer_dims} vs {first.layer_dims}"
            )
        if count <= 0:
            raise AggregationError(f"sample count must be positive, got {count}")
        total += count
    out = first.values.copy()
    for m, count in updates[1:]:
        out += (count / total) * (m.values - first.values)
    return ModelParameters(out, first.layer_dims)


def setup_participants(
    pool: LabeledDataset, cfg: FederationConfig
) -> tuple[ServerState, list[ParticipantState], dict[int, int] | None]:
    """Partition the pool, initialize the global model, and seed the streams.

    Returns the server, the participants, and the truth map (owner ->
    overrepresented class; None for IID partitions, which have none).
    """
    rng = derive_rng(cfg.seed, "partition")
    if cfg.partition_kind == "noniid":
        parts = partition_noniid(pool, cfg.partition, rng)
        truth = {p.owner: p.overrepresented_class for p in parts}
    else:
        parts = partition_iid(pool, cfg.partition.n_p, rng)
        truth = None
    global0 = init_model(cfg.model, pool.dim, pool.n_c, derive_rng(cfg.seed, "init"))
    participants = [
        ParticipantState(
            id=p.owner,
            dataset=p,
            model=global0,
            optimizer=init_optimizer(global0, cfg.learning_rate, cfg.momentum),
            rng_seed=derive_seed(cfg.seed, "participant", p.owner),
        )
        for p in parts
    ]
    return ServerState(global0), participants, truth


def run_round(
    server: ServerState,
    participants: list[ParticipantState],
    cfg: FederationConfig,
    eval_set: LabeledDataset | None = None,
    attack: AttackFn | None = None,
) -> tuple[ServerState, RoundRecord]:
    """Execute one five-step communication round."""
    r = server.round + 1
    n = len(participants)

    mixtures: dict[int, LabeledDataset] = {}
    if cfg.exchange_enabled:
        quota = sharing_quota(cfg.partition)
        packets = run_exchange(
            [p.dataset for p in participants], quota, r, derive_rng(cfg.seed, "exchange", r)
        )
        by_receiver: dict[int, list[ExchangePacket]] = {p.id: [] for p in participants}
        for packet in packets:
            by_receiver[packet.receiver].append(packet)
        for p in participants:
            if cfg.mixture_policy.accumulate:
                p.inbox.extend(by_receiver[p.id])
                inbox = p.inbox
            else:
                inbox = by_receiver[p.id]
            mixtures[p.id] = build_training_mixture(
                p.dataset, inbox, cfg.mixture_policy, derive_rng(cfg.seed, "mixture", p.id, r)
            )
    else:
        for p in participants:
            mixtures[p.id] = p.dataset.data

    k = math.ceil(cfg.participation * n)
    if k < n:
        chosen = derive_rng(cfg.seed, "select", r).choice(n, size=k, replace=False)
        selected = [participants[i] for i in sorted(chosen)]
    else:
        selected = participants

    updates: list[tuple[int, ModelParameters, int]] = []
    for p in selected:
        model = server.global_model
        opt = init_optimizer(model, cfg.learning_rate, cfg.momentum)
        train_rng = derive_rng(cfg.seed, "train", p.id, r)
        try:
            for _ in range(cfg.local_epochs):
                model, opt = train_epoch(model, opt, mixtures[p.id], cfg.batch_size, train_rng)
        except TrainingDivergenceError as e:
            raise RoundAbortedError(p.id, r, e) from e
        p.optimizer = opt
        count = 1 if cfg.uniform_weighting else len(mixtures[p.id])
        updates.append((p.id, model, count))

    new_global = fedavg([(m, c) for _, m, c in updates])
    for p in participants:
        p.model = new_global

    record = RoundRecord(
        round=r,
        accuracy=evaluate_accuracy(new_global, eval_set) if eval_set is not None else math.nan,
        sizes={pid: c for pid, _, c in updates},
        updates=updates if cfg.keep_updates else None,
    )
    if attack is not None:
        record.verdicts, record.attack_R = attack([(pid, m) for pid, m, _ in updates], r)
    return ServerState(new_global, r, updates), record


def run_experiment(
    cfg: FederationConfig,
    pool: LabeledDataset,
    eval_set: LabeledDataset,
    attack: AttackFn | None = None,
    case: str = "experiment",
) -> ExperimentReport:
    """Partition, train for cfg.rounds rounds, and record the full trace."""
    server, participants, truth = setup_participants(pool, cfg)
    records: list[RoundRecord] = []
    initial = evaluate_accuracy(server.global_model, eval_set)
    for _ in range(cfg.rounds):
        server, record = run_round(server, participants, cfg, eval_set, attack)
        records.append(record)
    return ExperimentReport(
        case=case,
        seed=cfg.seed,
        eval_set="eval",
        initial_accuracy=initial,
        records=records,
        truth=truth,
    )


def run_centralized(
    model_spec: ModelSpec,
    pool: LabeledDataset,
    epochs: int,
    eval_set: LabeledDataset,
    seed: int,
    learning_rate: float = 0.01,
    momentum: float = 0.9,
    batch_size: int = 32,
    case: str = "baseline",
) -> ExperimentReport:
    """Train one model on the whole pool; same report format as federated runs.

    Optimizer state persists across epochs (continuous training, no resets).
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    model = init_model(model_spec, pool.dim, pool.n_c, derive_rng(seed, "init"))
    opt = init_optimizer(model, learning_rate, momentum)
    records: list[RoundRecord] = []
    initial = evaluate_accuracy(model, eval_set)
    for e in range(1, epochs + 1):
        model, opt = train_epoch(model, opt, pool, batch_size, derive_rng(seed, "train", 0, e))
        records.append(
            RoundRecord(round=e, accuracy=evaluate_accuracy(model, eval_set), sizes={0: len(pool)})
        )
    return ExperimentReport(
        case=case,
        seed=seed,
        eval_set="eval",
        initial_accuracy=initial,
        records=records,
        truth=None,
    )
