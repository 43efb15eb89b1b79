import math
from fractions import Fraction

import numpy as np
import pytest

from fedshare.dataset import synthesize
from fedshare.partition import (
    InfeasibleConfigError,
    PartitionConfig,
    UnsupportedConfigError,
    overrepresentation_rate,
    partition_iid,
    partition_noniid,
    sharing_quota,
    summary_csv,
)
from fedshare.seeding import derive_rng

from conftest import as_multiset, label_census


class TestPartitionNoniid:
    def test_reference_structure(self, paper_pool, paper_cfg, paper_partitions):
        # owner holds floor(0.5 * 5421) = 2710 of its class; the 2711 leftovers
        # of each class split over 9 peers as 301 x7 and 302 x2
        assert len(paper_partitions) == 10
        for part in paper_partitions:
            census = label_census(part.data)
            assert census[part.owner] == 2710
            others = [census.get(c, 0) for c in range(10) if c != part.owner]
            assert all(v in (301, 302) for v in others)
            assert 5419 <= len(part.data) <= 5430  # about 5421 each
            rate, argmax = overrepresentation_rate(part)
            assert 0.49 <= rate <= 0.51
            assert argmax == part.owner

    def test_exact_cover_of_pool(self, paper_pool, paper_partitions):
        total = sum(len(p.data) for p in paper_partitions)
        assert total == len(paper_pool)
        combined = []
        for p in paper_partitions:
            combined.extend(as_multiset(p.data))
        assert sorted(combined) == as_multiset(paper_pool)

    def test_p_at_uniform_rate_is_iid_like(self):
        pool = synthesize(10, 5421, 2, 0.1, derive_rng("unif-pool"))
        cfg = PartitionConfig(n_p=10, n_c=10, p=0.1, n_s=5421)
        parts = partition_noniid(pool, cfg, derive_rng("unif"))
        target = 5421 / 10
        for part in parts:
            for count in label_census(part.data).values():
                assert abs(count - target) <= 1

    def test_small_partition_of_set(self):
        pool = synthesize(4, 8, 3, 0.1, derive_rng("p4"))
        cfg = PartitionConfig(n_p=4, n_c=4, p=0.5, n_s=8)
        parts = partition_noniid(pool, cfg, derive_rng("p4-split"))
        combined = []
        for part in parts:
            census = label_census(part.data)
            assert census[part.owner] == 4
            peers = sorted(census.get(c, 0) for c in range(4) if c != part.owner)
            assert sum(peers) + 4 - 4 >= 0  # peers hold the re-scattered rest
            combined.extend(as_multiset(part.data))
        assert sorted(combined) == as_multiset(pool)
        # each class's leftover 4 samples split 2/1/1 over three peers
        for c in range(4):
            held = sorted(label_census(p.data).get(c, 0) for p in parts if p.owner != c)
            assert sum(held) == 4
            assert max(held) - min(held) <= 1

    def test_rejects_mismatched_counts(self, small_pool):
        with pytest.raises(UnsupportedConfigError):
            partition_noniid(
                small_pool, PartitionConfig(n_p=5, n_c=4, p=0.5, n_s=25), derive_rng(0)
            )

    def test_rejects_unbalanced_pool(self, small_pool):
        lopsided = small_pool.subset(np.arange(len(small_pool) - 3))
        with pytest.raises(ValueError):
            partition_noniid(
                lopsided, PartitionConfig(n_p=4, n_c=4, p=0.5, n_s=25), derive_rng(0)
            )

    def test_deterministic_per_seed(self, small_pool):
        cfg = PartitionConfig(n_p=4, n_c=4, p=0.5, n_s=25)
        a = partition_noniid(small_pool, cfg, derive_rng("det"))
        b = partition_noniid(small_pool, cfg, derive_rng("det"))
        assert all(x.data == y.data for x, y in zip(a, b))


class TestPartitionIid:
    def test_reference_scale(self, paper_pool):
        parts = partition_iid(paper_pool, 10, derive_rng("iid"))
        for part in parts:
            assert part.overrepresented_class is None
            for count in label_census(part.data).values():
                assert count in (542, 543)  # 5421/10 within rounding

    def test_single_participant_gets_pool(self, small_pool):
        (part,) = partition_iid(small_pool, 1, derive_rng("iid1"))
        assert as_multiset(part.data) == as_multiset(small_pool)

    def test_tiny_pool_split(self):
        pool = synthesize(2, 10, 3, 0.1, derive_rng("iid-tiny"))
        parts = partition_iid(pool, 4, derive_rng("iid-tiny-split"))
        combined = []
        for part in parts:
            assert len(part.data) == 5
            assert sorted(label_census(part.data).values()) == [2, 3]
            combined.extend(as_multiset(part.data))
        assert sorted(combined) == as_multiset(pool)

    def test_disjoint_cover(self, small_pool):
        parts = partition_iid(small_pool, 3, derive_rng("iid-cover"))
        combined = []
        for part in parts:
            combined.extend(as_multiset(part.data))
        assert sorted(combined) == as_multiset(small_pool)


class TestOverrepresentationRate:
    def test_uniform_counts(self):
        d = synthesize(5, 8, 3, 0.1, derive_rng("rate-u"))
        rate, _ = overrepresentation_rate(d)
        assert rate == pytest.approx(1 / 5)

    def test_single_class(self):
        d = synthesize(3, 4, 2, 0.1, derive_rng("rate-s"))
        only = d.subset(d.class_index[2])
        rate, argmax = overrepresentation_rate(only)
        assert rate == 1.0
        assert argmax == 2

    def test_empty_dataset_rejected(self, small_pool):
        with pytest.raises(ValueError):
            overrepresentation_rate(small_pool.subset([]))


class TestSharingQuota:
    def test_reference_parameters_give_27(self, paper_cfg):
        assert sharing_quota(paper_cfg) == 27

    @pytest.mark.parametrize("n_c", [2, 4, 5, 10])
    def test_uniform_rate_gives_zero(self, n_c):
        cfg = PartitionConfig(n_p=n_c, n_c=n_c, p=1.0 / n_c, n_s=n_c * 11)
        assert sharing_quota(cfg) == 0

    def test_small_case_against_arithmetic_oracle(self):
        cfg = PartitionConfig(n_p=5, n_c=5, p=0.6, n_s=100)
        # direct evaluation with exact rationals, independently of the module
        deficit = Fraction(100, 5) - Fraction(100) * (1 - Fraction(3, 5)) / 4
        expected = math.ceil(deficit / 4)
        assert expected == 3
        assert sharing_quota(cfg) == expected

    def test_p_equal_one_is_infeasible(self):
        with pytest.raises(InfeasibleConfigError):
            sharing_quota(PartitionConfig(n_p=4, n_c=4, p=1.0, n_s=20))

    @pytest.mark.parametrize("n_c,n_s", [(3, 30), (5, 100), (10, 5421)])
    def test_monotone_in_p(self, n_c, n_s):
        rng = derive_rng(("mono-p", n_c, n_s))
        grid = np.sort(rng.uniform(1.0 / n_c, 0.999, size=25))
        for n_p in (2, 5, 10):
            quotas = [
                sharing_quota(PartitionConfig(n_p=n_p, n_c=n_c, p=float(p), n_s=n_s))
                for p in grid
            ]
            assert all(a <= b for a, b in zip(quotas, quotas[1:]))

    @pytest.mark.parametrize("p", [0.2, 0.5, 0.9])
    def test_non_increasing_in_participants(self, p):
        quotas = [
            sharing_quota(PartitionConfig(n_p=n_p, n_c=5, p=p, n_s=200))
            for n_p in (2, 3, 5, 9, 17, 33)
        ]
        assert all(a >= b for a, b in zip(quotas, quotas[1:]))


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_p=1, n_c=4, p=0.5, n_s=10),
            dict(n_p=4, n_c=1, p=0.5, n_s=10),
            dict(n_p=4, n_c=4, p=0.1, n_s=10),   # p below 1/n_c
            dict(n_p=4, n_c=4, p=1.2, n_s=10),
            dict(n_p=4, n_c=4, p=0.5, n_s=3),    # n_s below n_c
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            PartitionConfig(**kwargs)


def test_summary_csv_shape(paper_partitions):
    text = summary_csv(paper_partitions)
    lines = text.strip().splitlines()
    assert lines[0].startswith("participant,overrepresented_class,rate,class_0")
    assert len(lines) == 11
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "0"
    assert 0.49 <= float(first[2]) <= 0.51
