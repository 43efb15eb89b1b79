import numpy as np
import pytest

from fedshare.dataset import synthesize
from fedshare.partition import PartitionConfig, partition_noniid
from fedshare.seeding import derive_rng

# Table-style reference parameters: 10 classes, 5421 samples per class, half of
# a participant's data in its own class, 10 participants.
PAPER = dict(n_p=10, n_c=10, p=0.5, n_s=5421)


@pytest.fixture(scope="session")
def paper_cfg():
    return PartitionConfig(**PAPER)


@pytest.fixture(scope="session")
def paper_pool():
    # full-size pool with tiny feature vectors: partition arithmetic at real
    # scale without real-image cost
    return synthesize(PAPER["n_c"], PAPER["n_s"], 4, 0.1, derive_rng("paper-pool"))


@pytest.fixture(scope="session")
def paper_partitions(paper_pool, paper_cfg):
    return partition_noniid(paper_pool, paper_cfg, derive_rng("paper-partition"))


@pytest.fixture
def small_pool():
    return synthesize(4, 25, 8, 0.1, derive_rng("small-pool"))


def label_census(dataset):
    """Independent full-scan class counter (never touches class_index)."""
    counts = {}
    for i in range(len(dataset)):
        label = int(dataset.labels[i])
        counts[label] = counts.get(label, 0) + 1
    return counts


def as_multiset(dataset):
    """Dataset contents as a sortable multiset of (label, feature-bytes)."""
    return sorted(
        (int(dataset.labels[i]), dataset.features[i].tobytes()) for i in range(len(dataset))
    )
