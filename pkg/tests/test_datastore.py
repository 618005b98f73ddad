"""Bag container, manifest, split and synthesis contracts."""

import numpy as np
import pytest

from bagforge import datastore as ds
from bagforge import numcore as nc
from bagforge.aggregators import Bag
from bagforge.errors import ConfigError, DomainError, FormatError


def rand_bag(rng, n=5, d=512, core_id="core-1", label=2, k=4):
    return Bag(core_id=core_id, label=label, k=k,
               instances=nc.Tensor(rng.standard_normal((n, d)).astype(np.float32)))


class TestBagRoundtrip:
    def test_bitwise_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        bag = rand_bag(rng)
        path = tmp_path / "a.bag"
        ds.write_bag(bag, path)
        back = ds.read_bag(path)
        assert back.core_id == bag.core_id
        assert back.label == bag.label
        assert back.k == bag.k
        assert back.instances.data.tobytes() == bag.instances.data.tobytes()

    def test_write_read_write_identical_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        bag = rand_bag(rng, core_id="unicode-ß-核")
        p1, p2 = tmp_path / "a.bag", tmp_path / "b.bag"
        ds.write_bag(bag, p1)
        ds.write_bag(ds.read_bag(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_offset_zero(self, tmp_path):
        rng = np.random.default_rng(2)
        path = tmp_path / "bad.bag"
        ds.write_bag(rand_bag(rng), path)
        blob = bytearray(path.read_bytes())
        blob[0:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic") as err:
            ds.read_bag(path)
        assert err.value.offset == 0

    def test_truncated_payload_reports_lengths(self, tmp_path):
        rng = np.random.default_rng(3)
        bag = rand_bag(rng, n=3, d=8)
        path = tmp_path / "trunc.bag"
        ds.write_bag(bag, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])  # drop one float32
        with pytest.raises(FormatError, match=r"expected 96 bytes, found 92"):
            ds.read_bag(path)

    def test_bad_version(self, tmp_path):
        rng = np.random.default_rng(4)
        path = tmp_path / "v9.bag"
        ds.write_bag(rand_bag(rng), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (9).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version 9") as err:
            ds.read_bag(path)
        assert err.value.offset == 4


class TestCheckpointRoundtrip:
    def test_bitwise_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        named = [("a.w", nc.Tensor(rng.standard_normal((3, 4)).astype(np.float32))),
                 ("b.b", nc.Tensor(rng.standard_normal((1, 4)).astype(np.float32)))]
        path = tmp_path / "x.ckpt"
        ds.write_checkpoint(path, named, "deadbeef", epoch=7)
        tensors, chash, epoch = ds.read_checkpoint(path)
        assert chash == "deadbeef" and epoch == 7
        assert set(tensors) == {"a.w", "b.b"}
        for name, t in named:
            assert tensors[name].tobytes() == t.data.tobytes()

    def test_corrupt_checkpoint_positioned(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError) as err:
            ds.read_checkpoint(path)
        assert err.value.offset == 0

    def test_truncated_tensor_payload(self, tmp_path):
        rng = np.random.default_rng(6)
        named = [("w", nc.Tensor(rng.standard_normal((4, 4)).astype(np.float32)))]
        path = tmp_path / "t.ckpt"
        ds.write_checkpoint(path, named, "h", epoch=1)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError, match="payload"):
            ds.read_checkpoint(path)


class TestManifest:
    def _manifest(self):
        entries = [ds.ManifestEntry(f"c{i}", f"c{i}.bag", i % 2, "unassigned", f"t{i % 3}")
                   for i in range(10)]
        return ds.Manifest("demo", d=8, k=2, class_names=["neg", "pos"], entries=entries)

    def test_json_roundtrip_lossless(self, tmp_path):
        m = self._manifest()
        path = tmp_path / "manifest.json"
        ds.save_manifest(m, path)
        back = ds.load_manifest(path)
        assert back.to_dict() == m.to_dict()

    def test_duplicate_core_id_rejected(self):
        entries = [ds.ManifestEntry("same", "a.bag", 0),
                   ds.ManifestEntry("same", "b.bag", 1)]
        with pytest.raises(DomainError, match="duplicate"):
            ds.Manifest("demo", d=4, k=2, class_names=["a", "b"], entries=entries)

    def test_summary_table_schema(self):
        # four classes with the published core counts reproduce the summary shape
        counts = [1198, 208, 159, 382]
        entries = []
        for label, n in enumerate(counts):
            for i in range(n):
                entries.append(ds.ManifestEntry(f"c{label}-{i}", "x.bag", label))
        m = ds.Manifest("tma", d=512, k=4,
                        class_names=["EWING", "COND", "GIST", "RHABDO"], entries=entries)
        assert m.class_counts().tolist() == counts
        assert len(m.class_names) == 4

    def test_malformed_json_is_format_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(FormatError):
            ds.load_manifest(path)


class TestStratifiedSplit:
    def _manifest(self, counts):
        entries = []
        for label, n in enumerate(counts):
            for i in range(n):
                entries.append(ds.ManifestEntry(f"c{label}-{i}", "x.bag", label,
                                                source_tma=f"tma{label}-{i % 5}"))
        return ds.Manifest("demo", d=4, k=len(counts),
                           class_names=[f"class{c}" for c in range(len(counts))],
                           entries=entries)

    def test_published_core_count_arithmetic(self):
        # 1198 cores at 60/15/25: floor(718.8)=718, floor(179.7)=179, rest 301
        m = self._manifest([1198])
        # k=1 manifests are rejected upstream by the model, not here
        out = ds.stratified_split(m, ds.SplitSpec(seed=9))
        sizes = {s: sum(1 for e in out.entries if e.split == s)
                 for s in ("train", "val", "test")}
        assert sizes == {"train": 718, "val": 179, "test": 301}

    def test_exact_partition_every_class(self):
        rng = np.random.default_rng(0)
        counts = [int(rng.integers(3, 40)) for _ in range(5)]
        m = self._manifest(counts)
        out = ds.stratified_split(m, ds.SplitSpec(seed=3))
        for label, n in enumerate(counts):
            per = {s: sum(1 for e in out.entries if e.label == label and e.split == s)
                   for s in ("train", "val", "test")}
            assert sum(per.values()) == n
            assert per["train"] == int(0.6 * n)
            assert per["val"] == int(0.15 * n)

    def test_deterministic_given_seed(self):
        m = self._manifest([11, 7, 5])
        a = ds.stratified_split(m, ds.SplitSpec(seed=42))
        b = ds.stratified_split(m, ds.SplitSpec(seed=42))
        assert a.to_dict() == b.to_dict()
        c = ds.stratified_split(m, ds.SplitSpec(seed=43))
        assert a.to_dict() != c.to_dict()

    def test_degenerate_all_train_needs_force(self):
        m = self._manifest([4, 4])
        with pytest.raises(ConfigError):
            ds.SplitSpec(fractions=(1.0, 0.0, 0.1))
        spec = ds.SplitSpec(fractions=(1.0, 0.0, 0.0), force=True)
        out = ds.stratified_split(m, spec)
        assert all(e.split == "train" for e in out.entries)

    def test_small_class_rejected_without_force(self):
        m = self._manifest([2, 8])
        with pytest.raises(DomainError, match=">= 3"):
            ds.stratified_split(m, ds.SplitSpec())

    def test_tma_grouping_keeps_groups_together(self):
        m = self._manifest([25, 25])
        out = ds.stratified_split(m, ds.SplitSpec(seed=1, grouping="tma"))
        for label in (0, 1):
            by_tma = {}
            for e in out.entries:
                if e.label == label:
                    by_tma.setdefault(e.source_tma, set()).add(e.split)
            assert all(len(splits) == 1 for splits in by_tma.values())


class TestSynthesize:
    def test_selfcheck_and_manifest(self, tmp_path):
        m = ds.synthesize_dataset(k=4, bags_per_class=6, n_range=(3, 8), d=16,
                                  separation=6.0, seed=7, out_dir=tmp_path)
        assert m.class_counts().tolist() == [6, 6, 6, 6]
        bags = ds.load_bags(m, tmp_path)
        assert len(bags) == 24
        assert all(3 <= b.n <= 8 and b.d == 16 for b in bags)

    def test_same_seed_identical_bytes(self, tmp_path):
        m1 = ds.synthesize_dataset(k=2, bags_per_class=3, n_range=(2, 4), d=8,
                                   separation=5.0, seed=3, out_dir=tmp_path / "a")
        ds.synthesize_dataset(k=2, bags_per_class=3, n_range=(2, 4), d=8,
                              separation=5.0, seed=3, out_dir=tmp_path / "b")
        for e in m1.entries:
            assert (tmp_path / "a" / e.path).read_bytes() == \
                (tmp_path / "b" / e.path).read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_zero_separation_near_chance_probe(self, tmp_path):
        m = ds.synthesize_dataset(k=4, bags_per_class=25, n_range=(4, 10), d=16,
                                  separation=0.0, seed=5, out_dir=tmp_path)
        bags = ds.load_bags(m, tmp_path)
        means = np.stack([b.instances.data.mean(axis=0) for b in bags])
        labels = np.array([b.label for b in bags])
        acc = ds.nearest_centroid_accuracy(means, labels, 4)
        assert acc < 0.6  # class-blind data stays near 1/k

    def test_strong_separation_probe(self, tmp_path):
        m = ds.synthesize_dataset(k=4, bags_per_class=10, n_range=(4, 10), d=32,
                                  separation=6.0, seed=11, out_dir=tmp_path)
        bags = ds.load_bags(m, tmp_path)
        means = np.stack([b.instances.data.mean(axis=0) for b in bags])
        labels = np.array([b.label for b in bags])
        assert ds.nearest_centroid_accuracy(means, labels, 4) >= 0.95

    def test_config_validation(self, tmp_path):
        with pytest.raises(ConfigError):
            ds.synthesize_dataset(k=4, bags_per_class=2, n_range=(2, 3), d=1,
                                  separation=1.0, seed=0, out_dir=tmp_path)
        with pytest.raises(ConfigError):
            ds.synthesize_dataset(k=8, bags_per_class=2, n_range=(2, 3), d=4,
                                  separation=1.0, seed=0, out_dir=tmp_path)
