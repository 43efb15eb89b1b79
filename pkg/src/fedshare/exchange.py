"""Peer-to-peer raw-data sharing between rounds.

Each round every participant draws a fresh to-be-sent set (up to the quota x
samples per class) and broadcasts the same set to every peer; receivers train
on a mixture of their own partition and the round's inbox. Owned partitions
are never mutated: mixtures are derived values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset, concat
from .partition import ParticipantDataset, overrepresentation_rate

__all__ = [
    "ExchangePacket",
    "MixturePolicy",
    "RoutingError",
    "PAPER_MIXTURE",
    "CAPPED_IID",
    "select_to_send",
    "run_exchange",
    "build_training_mixture",
    "packet_log_line",
]

PAPER_MIXTURE = "paper-mixture"
CAPPED_IID = "capped-iid"


class RoutingError(ValueError):
    """A packet was delivered to a participant it does not address."""


@dataclass(frozen=True)
class MixturePolicy:
    """How received data joins a participant's training set.

    `paper-mixture` concatenates the round's inbox onto the own partition,
    which lifts every underrepresented class to the uniform target but leaves
    the overrepresented class above it. `capped-iid` additionally subsamples
    the overrepresented class down to the per-class median of the mixture.
    With `accumulate`, inboxes from earlier rounds are retained and
    deduplicated by sample content instead of being discarded each round.
    """

    mode: str = PAPER_MIXTURE
    accumulate: bool = False

    def __post_init__(self):
        if self.mode not in (PAPER_MIXTURE, CAPPED_IID):
            raise ValueError(f"unknown mixture mode {self.mode!r}")


@dataclass(frozen=True)
class ExchangePacket:
    """One sender's to-be-sent set addressed to one peer for one round."""

    sender: int
    receiver: int
    round: int
    samples: LabeledDataset

    def __post_init__(self):
        if self.sender == self.receiver:
            raise ValueError("a participant does not send to itself")


def select_to_send(
    d: ParticipantDataset, x: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Per-class positions (into d.data) of this round's to-be-sent samples.

    min(x, available) positions per class, drawn uniformly without
    replacement. A class poorer than x simply sends everything it has.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    picks = []
    for positions in d.data.class_index:
        k = min(x, positions.size)
        picks.append(rng.choice(positions, size=k, replace=False) if k else np.empty(0, np.int64))
    return picks


def run_exchange(
    participants: list[ParticipantDataset], x: int, round_index: int, rng: np.random.Generator
) -> list[ExchangePacket]:
    """All-pairs broadcast: n_p*(n_p-1) packets, one selection per sender.

    Senders draw in list order from `rng`; each sender's selection is shared
    verbatim with every peer, so all packets from one sender in one round
    carry the same samples.
    """
    if len(participants) < 2:
        raise ValueError("exchange needs at least two participants")
    packets = []
    for sender in participants:
        picks = select_to_send(sender, x, rng)
        selection = sender.data.subset(np.concatenate(picks))
        for receiver in participants:
            if receiver.owner == sender.owner:
                continue
            packets.append(
                ExchangePacket(sender.owner, receiver.owner, round_index, selection)
            )
    return packets


def _dedup(samples: LabeledDataset) -> LabeledDataset:
    seen: set[bytes] = set()
    keep = []
    for i in range(len(samples)):
        key = samples.labels[i].tobytes() + samples.features[i].tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(i)
    return samples.subset(np.array(keep, dtype=np.int64))


def build_training_mixture(
    d: ParticipantDataset,
    inbox: list[ExchangePacket],
    policy: MixturePolicy,
    rng: np.random.Generator | None = None,
) -> LabeledDataset:
    """The dataset a participant actually trains on this round.

    Own partition plus everything in the inbox; under capped-iid the
    overrepresented class is then subsampled (seeded via `rng`) down to the
    per-class median. Callers control the inbox horizon: with
    policy.accumulate the inbox may span rounds and received samples are
    deduplicated by content before joining.
    """
    for packet in inbox:
        if packet.receiver != d.owner:
            raise RoutingError(
                f"packet {packet.sender}->{packet.receiver} delivered to {d.owner}"
            )
    if not inbox:
        mixture = d.data
    else:
        received = concat([p.samples for p in inbox])
        if policy.accumulate:
            received = _dedup(received)
        mixture = concat([d.data, received])

    if policy.mode == CAPPED_IID:
        counts = mixture.class_counts()
        target = int(np.median(counts))
        over = int(np.argmax(counts))
        if counts[over] > target:
            if rng is None:
                raise ValueError("capped-iid subsampling needs a generator")
            keep_over = rng.choice(mixture.class_index[over], size=target, replace=False)
            others = [mixture.class_index[c] for c in range(mixture.n_c) if c != over]
            keep = np.sort(np.concatenate(others + [keep_over]))
            mixture = mixture.subset(keep)
    return mixture


def packet_log_line(packet: ExchangePacket, quota: int | None = None) -> str:
    """One JSON line per packet: routing plus per-class counts (and shortfall)."""
    counts = packet.samples.class_counts().tolist()
    entry: dict = {
        "round": packet.round,
        "sender": packet.sender,
        "receiver": packet.receiver,
        "per_class": counts,
    }
    if quota is not None:
        entry["shortfall"] = [max(0, quota - c) for c in counts]
    return json.dumps(entry, sort_keys=True)
