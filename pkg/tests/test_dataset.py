import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from fedshare.dataset import (
    IdxConsistencyError,
    IdxFormatError,
    IdxLengthError,
    InsufficientDataError,
    LabeledDataset,
    balanced_subset,
    concat,
    load_idx,
    synthesize,
)
from fedshare.seeding import derive_rng

from conftest import label_census


def write_idx_pair(tmp_path, pixels: bytes, labels: bytes, rows=2, cols=2):
    """Hand-build an IDX image/label file pair with the given payload bytes."""
    n = len(labels)
    images = struct.pack(">IIII", 0x803, n, rows, cols) + pixels
    lbls = struct.pack(">II", 0x801, n) + labels
    ipath = tmp_path / "images.idx"
    lpath = tmp_path / "labels.idx"
    ipath.write_bytes(images)
    lpath.write_bytes(lbls)
    return ipath, lpath


class TestLoadIdx:
    def test_two_image_fixture_exact_bytes(self, tmp_path):
        pixels = bytes([0, 51, 102, 255, 10, 20, 30, 40])
        ipath, lpath = write_idx_pair(tmp_path, pixels, bytes([3, 7]))
        d = load_idx(ipath, lpath)
        assert len(d) == 2
        assert d.dim == 4
        assert d.n_c == 10
        expected0 = np.array([0, 51, 102, 255]) / 255.0
        expected1 = np.array([10, 20, 30, 40]) / 255.0
        assert np.array_equal(d.features[0], expected0)
        assert np.array_equal(d.features[1], expected1)
        assert d.labels.tolist() == [3, 7]

    def test_zero_records_is_fine(self, tmp_path):
        ipath, lpath = write_idx_pair(tmp_path, b"", b"", rows=28, cols=28)
        d = load_idx(ipath, lpath)
        assert len(d) == 0
        assert d.dim == 784

    def test_bad_magic_raises_format_error(self, tmp_path):
        ipath, lpath = write_idx_pair(tmp_path, bytes(4), bytes([1]))
        ipath.write_bytes(struct.pack(">IIII", 0x9999, 1, 2, 2) + bytes(4))
        with pytest.raises(IdxFormatError):
            load_idx(ipath, lpath)
        lpath.write_bytes(struct.pack(">II", 0x42, 1) + bytes([1]))
        with pytest.raises(IdxFormatError):
            load_idx(tmp_path / "images.idx", lpath)

    def test_truncated_file_raises_length_error(self, tmp_path):
        ipath, lpath = write_idx_pair(tmp_path, bytes(8), bytes([1, 2]))
        ipath.write_bytes(ipath.read_bytes()[:-3])
        with pytest.raises(IdxLengthError):
            load_idx(ipath, lpath)

    def test_count_mismatch_raises_consistency_error(self, tmp_path):
        ipath, _ = write_idx_pair(tmp_path, bytes(8), bytes([1, 2]))
        lpath = tmp_path / "labels3.idx"
        lpath.write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 2, 3]))
        with pytest.raises(IdxConsistencyError):
            load_idx(ipath, lpath)

    def test_label_out_of_range_raises_consistency_error(self, tmp_path):
        ipath, lpath = write_idx_pair(tmp_path, bytes(8), bytes([1, 12]))
        with pytest.raises(IdxConsistencyError):
            load_idx(ipath, lpath)

    def test_gzip_paths_and_purity(self, tmp_path):
        pixels = bytes(range(8))
        ipath, lpath = write_idx_pair(tmp_path, pixels, bytes([0, 9]))
        gz_i = tmp_path / "images.idx.gz"
        gz_l = tmp_path / "labels.idx.gz"
        gz_i.write_bytes(gzip.compress(ipath.read_bytes()))
        gz_l.write_bytes(gzip.compress(lpath.read_bytes()))
        a = load_idx(ipath, lpath)
        b = load_idx(gz_i, gz_l)
        c = load_idx(ipath, lpath)
        assert a == b == c


@pytest.mark.skipif("MNIST_DIR" not in os.environ, reason="set MNIST_DIR to run")
class TestRealMnist:
    def test_training_split_shape(self):
        root = Path(os.environ["MNIST_DIR"])
        d = load_idx(root / "train-images-idx3-ubyte.gz", root / "train-labels-idx1-ubyte.gz")
        assert len(d) == 60000
        assert d.dim == 784
        assert d.n_c == 10

    def test_balanced_subset_at_5421(self):
        root = Path(os.environ["MNIST_DIR"])
        d = load_idx(root / "train-images-idx3-ubyte.gz", root / "train-labels-idx1-ubyte.gz")
        sub = balanced_subset(d, 5421, derive_rng("mnist"))
        assert len(sub) == 54210
        assert all(v == 5421 for v in label_census(sub).values())


class TestBalancedSubset:
    def test_counts_match_full_scan(self):
        d = synthesize(10, 100, 6, 0.1, derive_rng("bs"))
        sub = balanced_subset(d, 10, derive_rng("bs-draw"))
        assert len(sub) == 100
        census = label_census(sub)
        assert census == {c: 10 for c in range(10)}

    def test_zero_per_class(self):
        d = synthesize(3, 5, 4, 0.1, derive_rng("bs0"))
        sub = balanced_subset(d, 0, derive_rng("x"))
        assert len(sub) == 0

    def test_shortage_names_the_class(self):
        d = synthesize(3, 5, 4, 0.1, derive_rng("bs-short"))
        with pytest.raises(InsufficientDataError, match="class 0"):
            balanced_subset(d, 6, derive_rng("x"))

    def test_deterministic_per_seed(self):
        d = synthesize(5, 20, 4, 0.1, derive_rng("bs-det"))
        a = balanced_subset(d, 7, derive_rng("draw"))
        b = balanced_subset(d, 7, derive_rng("draw"))
        assert a == b

    def test_draw_without_replacement(self):
        d = synthesize(4, 10, 4, 0.1, derive_rng("bs-uniq"))
        sub = balanced_subset(d, 10, derive_rng("draw"))
        rows = {sub.features[i].tobytes() for i in range(len(sub))}
        assert len(rows) == len(sub)


class TestSynthesize:
    def test_counts(self):
        d = synthesize(10, 100, 16, 0.1, derive_rng(42))
        assert len(d) == 1000
        assert label_census(d) == {c: 100 for c in range(10)}
        assert d.dim == 16

    def test_degenerate_two_scalar_samples(self):
        d = synthesize(2, 1, 1, 0.01, derive_rng(7))
        assert len(d) == 2
        # centroids sit at 0.25 and 0.75 on a line; 0.01 noise cannot close that
        assert abs(d.features[0, 0] - d.features[1, 0]) > 0.3

    def test_same_seed_identical_bytes(self):
        a = synthesize(5, 30, 8, 0.2, derive_rng(11))
        b = synthesize(5, 30, 8, 0.2, derive_rng(11))
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_feature_range(self):
        d = synthesize(6, 50, 3, 0.5, derive_rng("range"))
        assert d.features.min() >= 0.0
        assert d.features.max() <= 1.0

    @pytest.mark.parametrize(
        "bad",
        [dict(n_c=1), dict(dim=0), dict(spread=0.0), dict(spread=-1.0), dict(per_class=-1)],
    )
    def test_invalid_arguments(self, bad):
        args = dict(n_c=3, per_class=5, dim=4, spread=0.1)
        args.update(bad)
        with pytest.raises(ValueError):
            synthesize(args["n_c"], args["per_class"], args["dim"], args["spread"], derive_rng(0))

    def test_centroids_distinct_both_layouts(self):
        for n_c, dim in [(4, 8), (4, 2)]:  # axis-aligned and diagonal layouts
            d = synthesize(n_c, 200, dim, 0.01, derive_rng(("c", n_c, dim)))
            means = np.stack([d.features[d.class_index[c]].mean(axis=0) for c in range(n_c)])
            for i in range(n_c):
                for j in range(i + 1, n_c):
                    assert np.linalg.norm(means[i] - means[j]) > 0.05


class TestDatasetInvariants:
    @pytest.mark.parametrize("seed", range(5))
    def test_class_index_partitions_positions(self, seed):
        d = synthesize(4 + seed, 13, 3, 0.2, derive_rng(("inv", seed)))
        joined = np.sort(np.concatenate(d.class_index))
        assert np.array_equal(joined, np.arange(len(d)))
        assert int(d.class_counts().sum()) == len(d)

    def test_subset_copies_do_not_alias(self, small_pool):
        sub = small_pool.subset([0, 1, 2])
        assert sub.features.base is None or not np.shares_memory(
            sub.features, small_pool.features
        )

    def test_arrays_are_write_locked(self, small_pool):
        with pytest.raises(ValueError):
            small_pool.features[0, 0] = 0.5
        with pytest.raises(ValueError):
            small_pool.labels[0] = 1

    def test_concat_preserves_counts(self, small_pool):
        both = concat([small_pool, small_pool])
        assert len(both) == 2 * len(small_pool)
        assert np.array_equal(both.class_counts(), 2 * small_pool.class_counts())

    def test_bad_labels_rejected(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 3)), np.array([0, 5]), n_c=4)
