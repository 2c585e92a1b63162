"""Unit tests for manifests, the on-disk format, splits and k-fold partitioning."""
from __future__ import annotations

import json

import numpy as np
import pytest
from helpers import make_record, random_manifest, table1_manifest

from phonofuse import data


class TestManifestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        manifest = random_manifest(n=4, da=8, dt=8)
        data.save_manifest(manifest, tmp_path / "ds")
        loaded = data.load_manifest(tmp_path / "ds")
        assert loaded == manifest
        assert loaded.da == 8 and loaded.dt == 8 and len(loaded.records) == 4

    def test_payloads_bit_exact(self, tmp_path):
        manifest = random_manifest(n=10, da=5, dt=7, seed=3)
        data.save_manifest(manifest, tmp_path / "ds")
        loaded = data.load_manifest(tmp_path / "ds")
        for a, b in zip(manifest.records, loaded.records):
            assert a.acoustic.dtype == b.acoustic.dtype == np.float32
            assert np.array_equal(a.acoustic, b.acoustic)
            assert np.array_equal(a.text, b.text)

    def test_empty_dataset(self, tmp_path):
        manifest = data.DatasetManifest(
            class_count=2, da=3, dt=3, class_names=["a", "b"], records=[]
        )
        data.save_manifest(manifest, tmp_path / "ds")
        loaded = data.load_manifest(tmp_path / "ds")
        assert loaded == manifest

    def test_payload_size_arithmetic(self, tmp_path):
        manifest = random_manifest(n=1015, da=768, dt=768, seed=1)
        data.save_manifest(manifest, tmp_path / "ds")
        assert (tmp_path / "ds" / data.ACOUSTIC_FILE).stat().st_size == 1015 * 768 * 4
        assert (tmp_path / "ds" / data.TEXT_FILE).stat().st_size == 1015 * 768 * 4


class TestLoadErrors:
    def _write_valid(self, tmp_path):
        manifest = random_manifest(n=4, da=8, dt=8)
        data.save_manifest(manifest, tmp_path / "ds")
        return tmp_path / "ds"

    def test_missing_file(self, tmp_path):
        path = self._write_valid(tmp_path)
        (path / data.TEXT_FILE).unlink()
        with pytest.raises(data.DatasetFormatError, match="missing"):
            data.load_manifest(path)

    def test_payload_length_mismatch(self, tmp_path):
        path = self._write_valid(tmp_path)
        raw = (path / data.ACOUSTIC_FILE).read_bytes()
        (path / data.ACOUSTIC_FILE).write_bytes(raw[:-4])
        with pytest.raises(data.DatasetFormatError, match="payload"):
            data.load_manifest(path)

    def test_label_at_class_count_rejected(self, tmp_path):
        path = self._write_valid(tmp_path)
        meta = json.loads((path / data.MANIFEST_FILE).read_text())
        meta["records"][0]["label"] = meta["class_count"]
        (path / data.MANIFEST_FILE).write_text(json.dumps(meta))
        with pytest.raises(data.DatasetFormatError, match="label"):
            data.load_manifest(path)

    def test_duplicate_sample_id(self, tmp_path):
        path = self._write_valid(tmp_path)
        meta = json.loads((path / data.MANIFEST_FILE).read_text())
        meta["records"][1]["sample_id"] = meta["records"][0]["sample_id"]
        (path / data.MANIFEST_FILE).write_text(json.dumps(meta))
        with pytest.raises(data.DatasetFormatError, match="duplicate"):
            data.load_manifest(path)

    def test_non_finite_values(self, tmp_path):
        path = self._write_valid(tmp_path)
        payload = np.frombuffer(
            (path / data.ACOUSTIC_FILE).read_bytes(), dtype="<f4"
        ).copy()
        payload[0] = np.nan
        (path / data.ACOUSTIC_FILE).write_bytes(payload.tobytes())
        with pytest.raises(data.DatasetFormatError, match="non-finite"):
            data.load_manifest(path)

    def test_malformed_json(self, tmp_path):
        path = self._write_valid(tmp_path)
        (path / data.MANIFEST_FILE).write_text("{not json")
        with pytest.raises(data.DatasetFormatError, match="malformed"):
            data.load_manifest(path)


class TestSchemeA:
    def test_table1_counts(self):
        manifest = table1_manifest()
        split = data.build_split(manifest, data.SCHEME_A, seed=0)
        train_recs = [r for r in manifest.records if r.sample_id in split.train_ids]
        test_recs = [r for r in manifest.records if r.sample_id in split.test_ids]
        assert len(train_recs) == 783
        assert len({r.speaker_id for r in train_recs}) == 35
        assert len(test_recs) == 232
        assert len({r.speaker_id for r in test_recs}) == 11

    def test_source_purity(self):
        manifest = table1_manifest()
        split = data.build_split(manifest, data.SCHEME_A, seed=0)
        for rec in manifest.records:
            if rec.sample_id in split.train_ids:
                assert rec.source == data.SOURCE_YOUTUBE
            else:
                assert rec.source == data.SOURCE_HAFIZ

    def test_partition_property(self):
        manifest = random_manifest(n=20)
        split = data.build_split(manifest, data.SCHEME_A, seed=0)
        assert split.train_ids & split.test_ids == frozenset()
        assert split.train_ids | split.test_ids == set(manifest.sample_ids())

    def test_missing_source_rejected(self):
        manifest = random_manifest(n=6)
        manifest.records = [r for r in manifest.records if r.source == data.SOURCE_YOUTUBE]
        with pytest.raises(data.DatasetFormatError, match="hafiz"):
            data.build_split(manifest, data.SCHEME_A, seed=0)


class TestSchemeB:
    def _speaker_samples(self, manifest):
        counts = {}
        for rec in manifest.records:
            counts.setdefault(rec.source, {}).setdefault(rec.speaker_id, 0)
            counts[rec.source][rec.speaker_id] += 1
        return counts

    def test_speaker_disjoint_and_fraction(self):
        manifest = table1_manifest()
        counts = self._speaker_samples(manifest)
        for seed in (0, 1, 7):
            split = data.build_split(manifest, data.SCHEME_B, seed=seed)
            train_speakers = {
                r.speaker_id for r in manifest.records if r.sample_id in split.train_ids
            }
            test_speakers = {
                r.speaker_id for r in manifest.records if r.sample_id in split.test_ids
            }
            assert train_speakers & test_speakers == set()
            for source in data.SOURCES:
                recs = [r for r in manifest.records if r.source == source]
                n_test = sum(1 for r in recs if r.sample_id in split.test_ids)
                biggest = max(counts[source].values())
                assert n_test >= data.TEST_FRACTION * len(recs)
                assert n_test < data.TEST_FRACTION * len(recs) + biggest

    def test_small_manifest_invariants_exhaustive(self):
        # 10 samples across two sources; verify every invariant directly
        records = []
        for i in range(6):
            records.append(
                make_record(f"y{i}", f"ysp{i % 3}", data.SOURCE_YOUTUBE, 0, np.ones(2), np.ones(2))
            )
        for i in range(4):
            records.append(
                make_record(f"h{i}", f"hsp{i % 2}", data.SOURCE_HAFIZ, 0, np.ones(2), np.ones(2))
            )
        manifest = data.DatasetManifest(
            class_count=1, da=2, dt=2, class_names=["only"], records=records
        )
        speaker_count = {r.sample_id: r.speaker_id for r in records}
        source_of = {r.sample_id: r.source for r in records}
        for seed in range(10):
            split = data.build_split(manifest, data.SCHEME_B, seed=seed)
            assert split.train_ids | split.test_ids == {r.sample_id for r in records}
            assert split.train_ids & split.test_ids == frozenset()
            assert {speaker_count[s] for s in split.train_ids} & {
                speaker_count[s] for s in split.test_ids
            } == set()
            for source in data.SOURCES:
                ids = [r.sample_id for r in records if r.source == source]
                n_test = sum(1 for s in ids if s in split.test_ids)
                per_speaker = {}
                for s in ids:
                    per_speaker[speaker_count[s]] = per_speaker.get(speaker_count[s], 0) + 1
                assert n_test >= data.TEST_FRACTION * len(ids)
                assert n_test < data.TEST_FRACTION * len(ids) + max(per_speaker.values())
        assert source_of  # silence unused warning

    def test_deterministic_and_seed_sensitive(self):
        manifest = table1_manifest()
        a1 = data.build_split(manifest, data.SCHEME_B, seed=0)
        a2 = data.build_split(manifest, data.SCHEME_B, seed=0)
        b = data.build_split(manifest, data.SCHEME_B, seed=1)
        assert a1 == a2
        assert a1 != b

    def test_speaker_spanning_sources_rejected(self):
        records = [
            make_record("a", "shared", data.SOURCE_YOUTUBE, 0, np.ones(2), np.ones(2)),
            make_record("b", "shared", data.SOURCE_HAFIZ, 0, np.ones(2), np.ones(2)),
        ]
        manifest = data.DatasetManifest(
            class_count=1, da=2, dt=2, class_names=["only"], records=records
        )
        with pytest.raises(data.DatasetFormatError, match="both sources"):
            data.build_split(manifest, data.SCHEME_B, seed=0)


class TestStratifiedKFold:
    def test_two_balanced_classes(self):
        ids = [f"s{i}" for i in range(10)]
        labels = {sid: i % 2 for i, sid in enumerate(ids)}
        folds = data.stratified_kfold(ids, labels, k=5, seed=0)
        for fold in range(5):
            members = folds.fold_ids(fold)
            assert len(members) == 2
            assert sorted(labels[m] for m in members) == [0, 1]

    def test_hundred_samples_four_classes(self):
        ids = [f"s{i}" for i in range(100)]
        labels = {sid: i % 4 for i, sid in enumerate(ids)}
        folds = data.stratified_kfold(ids, labels, k=5, seed=3)
        # brute-force counting oracle
        for fold in range(5):
            members = folds.fold_ids(fold)
            assert len(members) == 20
            per_class = [0, 0, 0, 0]
            for m in members:
                per_class[labels[m]] += 1
            assert per_class == [5, 5, 5, 5]

    def test_seven_singleton_class(self):
        ids = [f"s{i}" for i in range(7)]
        labels = {sid: 0 for sid in ids}
        folds = data.stratified_kfold(ids, labels, k=5, seed=1)
        sizes = sorted(len(folds.fold_ids(f)) for f in range(5))
        assert sizes == [1, 1, 1, 2, 2]

    def test_partition_and_spread_property(self):
        rng = np.random.default_rng(9)
        for trial in range(20):
            n = int(rng.integers(5, 60))
            n_classes = int(rng.integers(1, 6))
            k = int(rng.integers(2, 7))
            ids = [f"t{trial}_{i}" for i in range(n)]
            labels = {sid: int(rng.integers(n_classes)) for sid in ids}
            folds = data.stratified_kfold(ids, labels, k=k, seed=trial)
            assert sorted(folds.fold_of) == sorted(ids)
            for cls in range(n_classes):
                per_fold = [
                    sum(1 for sid in folds.fold_ids(f) if labels[sid] == cls)
                    for f in range(k)
                ]
                assert max(per_fold) - min(per_fold) <= 1

    def test_determinism(self):
        ids = [f"s{i}" for i in range(30)]
        labels = {sid: i % 3 for i, sid in enumerate(ids)}
        a = data.stratified_kfold(ids, labels, k=5, seed=4)
        b = data.stratified_kfold(ids, labels, k=5, seed=4)
        c = data.stratified_kfold(ids, labels, k=5, seed=5)
        assert a == b
        assert a != c

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            data.stratified_kfold(["a"], {"a": 0}, k=1, seed=0)
        with pytest.raises(ValueError):
            data.stratified_kfold([], {}, k=5, seed=0)


class TestGatherArrays:
    def test_manifest_order_and_dtypes(self):
        manifest = random_manifest(n=8, da=3, dt=4)
        wanted = {manifest.records[5].sample_id, manifest.records[2].sample_id}
        xa, xt, y, ids = data.gather_arrays(manifest, wanted)
        assert ids == [manifest.records[2].sample_id, manifest.records[5].sample_id]
        assert xa.shape == (2, 3) and xt.shape == (2, 4)
        assert xa.dtype == np.float64 and y.dtype == np.int64

    def test_empty_selection(self):
        manifest = random_manifest(n=4, da=3, dt=4)
        xa, xt, y, ids = data.gather_arrays(manifest, set())
        assert xa.shape == (0, 3) and xt.shape == (0, 4) and y.size == 0 and ids == []
