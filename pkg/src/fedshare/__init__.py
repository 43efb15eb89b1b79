"""Federated averaging with peer-to-peer raw-data exchange.

A deterministic simulator of a fleet of measuring vehicles that balance
non-IID training data by sharing raw samples over trusted direct links before
each federated averaging round, plus the passive eavesdropper at the
aggregation server and the metrics (convergence speed, maximal accuracy,
attack success rate) that quantify what the scheme buys.
"""

from .dataset import (
    LabeledDataset,
    Sample,
    balanced_subset,
    concat,
    load_idx,
    synthesize,
)
from .partition import (
    ParticipantDataset,
    PartitionConfig,
    overrepresentation_rate,
    partition_iid,
    partition_noniid,
    sharing_quota,
)
from .model import (
    ModelParameters,
    ModelSpec,
    OptimizerState,
    evaluate_accuracy,
    forward,
    init_model,
    init_optimizer,
    per_class_accuracy,
    train_epoch,
)
from .exchange import (
    ExchangePacket,
    MixturePolicy,
    build_training_mixture,
    run_exchange,
    select_to_send,
)
from .federation import (
    ExperimentReport,
    FederationConfig,
    ParticipantState,
    RoundRecord,
    ServerState,
    fedavg,
    run_centralized,
    run_experiment,
    run_round,
)
from .adversary import (
    AttackProbe,
    AttackVerdict,
    attack_round,
    build_probe,
    infer_overrepresented,
)
from .metrics import (
    AccuracyTrace,
    CaseRun,
    ComparisonReport,
    aggregate_report,
    convergence_speed,
    maximal_accuracy_ratio,
)
from .seeding import derive_rng, derive_seed

__version__ = "0.1.0"
