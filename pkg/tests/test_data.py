import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairfed.data import (DEFAULT_SPEC, LabeledPool, ShardSpec, gen_synthetic,
                          inject_label_noise, load_idx, merge_pools, partition_shards,
                          synthetic_for_spec)
from fairfed.errors import ConfigError, DomainError, FormatError
from fairfed.idx import encode_record, parse_record, read_records, write_records


def _write_pair(tmp_path, images, labels, image_magic=0x00000803, label_magic=0x00000801):
    ipath, lpath = tmp_path / "img.idx", tmp_path / "lbl.idx"
    n, r, c = images.shape
    ipath.write_bytes(struct.pack(">IIII", image_magic, n, r, c) + images.astype(np.uint8).tobytes())
    lpath.write_bytes(struct.pack(">II", label_magic, len(labels)) + np.asarray(labels, np.uint8).tobytes())
    return ipath, lpath


class TestIdx:
    def test_handcrafted_pair(self, tmp_path):
        images = np.array([[[0, 255], [128, 1]], [[255, 255], [0, 0]]])
        ipath, lpath = _write_pair(tmp_path, images, [3, 7])
        pool = load_idx(ipath, lpath)
        assert pool.features.shape == (2, 4)
        np.testing.assert_array_equal(pool.labels, [3, 7])
        assert pool.features[0, 1] == 1.0 and pool.features[0, 0] == 0.0
        assert pool.features[0, 2] == 128 / 255
        assert not pool.ambiguous_mask.any()

    def test_gzip_transparent(self, tmp_path):
        ipath, lpath = _write_pair(tmp_path, np.zeros((1, 2, 2)), [1])
        gz = tmp_path / "img.idx.gz"
        gz.write_bytes(gzip.compress(ipath.read_bytes()))
        assert load_idx(gz, lpath).features.shape == (1, 4)

    def test_wrong_image_magic(self, tmp_path):
        ipath, lpath = _write_pair(tmp_path, np.zeros((1, 2, 2)), [1])
        ipath.write_bytes(struct.pack(">II", 0x00000801, 1) + b"\x00")
        with pytest.raises(FormatError):
            load_idx(ipath, lpath)

    def test_bad_magic_bytes(self, tmp_path):
        ipath, lpath = _write_pair(tmp_path, np.zeros((1, 2, 2)), [1], image_magic=0x01000803)
        with pytest.raises(FormatError):
            load_idx(ipath, lpath)

    def test_count_mismatch(self, tmp_path):
        ipath, lpath = _write_pair(tmp_path, np.zeros((2, 2, 2)), [1])
        with pytest.raises(FormatError):
            load_idx(ipath, lpath)

    def test_truncated(self, tmp_path):
        ipath, lpath = _write_pair(tmp_path, np.zeros((2, 2, 2)), [1, 2])
        ipath.write_bytes(ipath.read_bytes()[:-1])
        with pytest.raises(FormatError):
            load_idx(ipath, lpath)
        lpath.write_bytes(b"\x00\x00")
        with pytest.raises(FormatError):
            parse_record(lpath.read_bytes())

    def test_trailing_bytes(self, tmp_path):
        ipath, lpath = _write_pair(tmp_path, np.zeros((1, 2, 2)), [1])
        lpath.write_bytes(lpath.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_idx(ipath, lpath)

    def test_record_roundtrip(self, tmp_path):
        arrays = [np.arange(6, dtype=np.uint8).reshape(2, 3), np.array([1.5, -2.0]),
                  np.array([-7, 9], dtype=np.int32), np.array([True, False])]
        path = tmp_path / "r.idx"
        write_records(path, arrays)
        back = read_records(path)
        assert len(back) == 4
        for a, b in zip(arrays, back):
            np.testing.assert_array_equal(np.asarray(a, dtype=b.dtype), b)

    def test_encode_magic(self):
        buf = encode_record(np.zeros((2, 2, 2), np.uint8))
        assert buf[:4] == b"\x00\x00\x08\x03"

    def test_unsupported_dtype(self):
        with pytest.raises(FormatError):
            encode_record(np.zeros(2, np.complex128))


class TestGenerator:
    def test_same_seed_same_pool(self):
        a = gen_synthetic(20, 4, 0.3, 0.1, 5)
        b = gen_synthetic(20, 4, 0.3, 0.1, 5)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_zero_noise_clean_rows(self):
        pool = gen_synthetic(30, 5, 0.0, 0.1, 0)
        clean = ~pool.ambiguous_mask
        assert clean.sum() == 150
        np.testing.assert_array_equal(pool.labels, pool.source_labels)

    def test_every_class_in_both_subsets(self):
        pool = gen_synthetic(10, 6, 0.5, 0.1, 0)
        for mask in (pool.ambiguous_mask, ~pool.ambiguous_mask):
            assert set(pool.source_labels[mask]) == set(range(6))

    def test_flips_go_to_next_class(self):
        pool = gen_synthetic(200, 4, 0.5, 0.1, 1)
        amb = pool.ambiguous_mask
        flipped = pool.labels[amb] != pool.source_labels[amb]
        np.testing.assert_array_equal(pool.labels[amb][flipped],
                                      (pool.source_labels[amb][flipped] + 1) % 4)
        assert 0.4 < flipped.mean() < 0.6
        assert np.all(pool.labels[~amb] == pool.source_labels[~amb])

    def test_extra_features(self):
        assert gen_synthetic(5, 3, 0.1, 0.1, 0, num_features=7).num_features == 7

    @pytest.mark.parametrize("kw", [dict(noise_rate=1.5), dict(num_classes=1), dict(spread=-1.0)])
    def test_bad_settings(self, kw):
        args = dict(n_per_class=5, num_classes=3, noise_rate=0.1, spread=0.1, seed=0)
        args.update(kw)
        with pytest.raises(ConfigError):
            gen_synthetic(**args)

    def test_pool_validation(self):
        with pytest.raises(DomainError):
            LabeledPool(np.zeros((2, 2)), np.array([0, 3]), np.zeros(2, bool), 3)
        with pytest.raises(DomainError):
            LabeledPool(np.zeros((2, 2)), np.array([0, 1]), np.zeros(3, bool), 3)


class TestPoolHelpers:
    def test_merge(self):
        a = gen_synthetic(3, 2, 0.0, 0.1, 0, ambiguous_per_class=0)
        b = inject_label_noise(gen_synthetic(2, 3, 0.0, 0.1, 1, ambiguous_per_class=0), 1.0, 0.0, 0)
        m = merge_pools(a, b)
        assert len(m) == 12 and m.num_classes == 3
        np.testing.assert_array_equal(m.ambiguous_mask, [False] * 6 + [True] * 6)

    def test_inject_keeps_source(self):
        pool = gen_synthetic(50, 3, 0.0, 0.1, 0, ambiguous_per_class=0)
        noisy = inject_label_noise(pool, 0.5, 1.0, 0)
        assert noisy.ambiguous_mask.sum() == 75
        np.testing.assert_array_equal(noisy.source_labels, pool.labels)
        amb = noisy.ambiguous_mask
        np.testing.assert_array_equal(noisy.labels[amb], (pool.labels[amb] + 1) % 3)


class TestShardSpec:
    def test_default(self):
        assert DEFAULT_SPEC.clean == (19, 15, 10, 5, 1)
        assert DEFAULT_SPEC.ambiguous == (1, 5, 10, 15, 19)
        assert all(DEFAULT_SPEC.client_shards(i) == 20 for i in range(5))

    @pytest.mark.parametrize("clean,amb,size", [((1,), (1, 2), 60), ((-1,), (2,), 60),
                                                ((1,), (1,), 0), ((0,), (0,), 60), ((), (), 60)])
    def test_invalid(self, clean, amb, size):
        with pytest.raises(ConfigError):
            ShardSpec(clean, amb, size)


def _default_partition(seed=0, **kw):
    pool = synthetic_for_spec(DEFAULT_SPEC, 10, 0.3, 0.12, seed, overlap=0.5)
    return pool, partition_shards(pool, DEFAULT_SPEC, seed, **kw)


class TestPartition:
    def test_conservation_and_disjointness(self):
        pool, part = _default_partition()
        used = np.concatenate([np.concatenate([c.train_index, c.test_index]) for c in part.clients])
        assert len(used) == 100 * 60
        assert len(np.unique(used)) == len(used)
        assert not set(used) & set(part.global_test_index)
        assert len(part.global_test) == 1000
        assert not pool.ambiguous_mask[part.global_test_index].any()

    def test_client_mix_and_split(self):
        pool, part = _default_partition()
        for c, n_clean, n_amb in zip(part.clients, DEFAULT_SPEC.clean, DEFAULT_SPEC.ambiguous):
            rows = np.concatenate([c.train_index, c.test_index])
            assert pool.ambiguous_mask[rows].sum() == n_amb * 60
            assert len(c.test) == 240 and len(c.train) == 960
            np.testing.assert_array_equal(c.train_ambiguous, pool.ambiguous_mask[c.train_index])
            np.testing.assert_array_equal(c.train.labels, pool.labels[c.train_index])

    def test_shards_are_class_sorted(self):
        # each clean shard spans at most two adjacent classes
        pool, part = _default_partition()
        for c in part.clients:
            rows = np.concatenate([c.train_index, c.test_index])
            clean = rows[~pool.ambiguous_mask[rows]]
            classes = np.unique(pool.source_labels[clean])
            n_shards = len(clean) // 60
            assert len(classes) <= 2 * n_shards

    def test_reproducible(self):
        _, a = _default_partition(3)
        _, b = _default_partition(3)
        for x, y in zip(a.clients, b.clients):
            np.testing.assert_array_equal(x.train_index, y.train_index)
        _, c = _default_partition(4)
        assert not np.array_equal(a.clients[0].train_index, c.clients[0].train_index)

    def test_all_clean_spec(self):
        spec = ShardSpec((20,), (0,), 10)
        pool = synthetic_for_spec(spec, 4, 0.5, 0.1, 0, global_test_size=20)
        part = partition_shards(pool, spec, 0, global_test_size=20)
        assert not part.clients[0].train_ambiguous.any()

    def test_insufficient_pool(self):
        pool = gen_synthetic(10, 2, 0.3, 0.1, 0)
        with pytest.raises(ConfigError):
            partition_shards(pool, DEFAULT_SPEC, 0, global_test_size=5)
        with pytest.raises(ConfigError):
            partition_shards(pool, ShardSpec((1,), (0,), 5), 0, global_test_size=100)

    def test_bad_test_fraction(self):
        pool, _ = _default_partition()
        with pytest.raises(ConfigError):
            partition_shards(pool, DEFAULT_SPEC, 0, test_fraction=1.0)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=5)
           .filter(lambda xs: all(a + b > 0 for a, b in xs)),
           st.integers(2, 6), st.integers(0, 2**31 - 1))
    def test_sorted_cut_conservation_disjoint(self, counts, k, seed):
        spec = ShardSpec([a for a, _ in counts], [b for _, b in counts], 7)
        pool = synthetic_for_spec(spec, k, 0.3, 0.1, seed, global_test_size=5)
        part = partition_shards(pool, spec, seed, global_test_size=5)
        rows = [np.concatenate([c.train_index, c.test_index]) for c in part.clients]
        flat = np.concatenate(rows)
        assert len(flat) == sum(a + b for a, b in counts) * 7
        assert len(np.unique(flat)) == len(flat)
        assert not set(flat) & set(part.global_test_index)
        for r, (a, b) in zip(rows, counts):
            assert pool.ambiguous_mask[r].sum() == b * 7

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 9), st.integers(0, 2**31 - 1))
    def test_clean_shard_boundaries_sorted(self, k, size, seed):
        # reconstruct the cut: the sorted clean rows, in shard order, are non-decreasing
        from fairfed.data import _cut_shards
        pool = gen_synthetic(13, k, 0.4, 0.1, seed)
        clean = np.flatnonzero(~pool.ambiguous_mask)
        shards = _cut_shards(clean, pool.source_labels, size)
        for prev, cur in zip(shards, shards[1:]):
            assert pool.labels[cur].min() >= pool.labels[prev].max()


class TestUpsilonOrdering:
    def test_default_spec_increasing_in_ambiguous_shards(self):
        import dataclasses

        from fairfed.config import ExperimentConfig
        from fairfed.experiment import build_partition, prepare_clients

        hits = 0
        for seed in range(10):
            config = ExperimentConfig()
            config.data = dataclasses.replace(config.data, seed=seed)
            clients = prepare_clients(build_partition(config), config, seed)
            hits += bool(np.all(np.diff([c.upsilon for c in clients]) > 0))
        assert hits >= 9, hits
