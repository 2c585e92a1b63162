"""Dataset manifests, the on-disk embedding format, split builders and k-fold partitioning.

A dataset directory holds three files: ``manifest.json`` with the metadata and
per-record identity/label rows (record order is authoritative), plus
``acoustic.f32`` and ``text.f32`` with row-major little-endian float32 vectors,
one row per record in manifest order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST_FILE = "manifest.json"
ACOUSTIC_FILE = "acoustic.f32"
TEXT_FILE = "text.f32"

SOURCE_YOUTUBE = "youtube"
SOURCE_HAFIZ = "hafiz"
SOURCES = (SOURCE_YOUTUBE, SOURCE_HAFIZ)

SCHEME_A = "A"
SCHEME_B = "B"
SCHEME_CUSTOM = "custom"
SCHEMES = (SCHEME_A, SCHEME_B, SCHEME_CUSTOM)

# Held-out share per source under scheme B; whole speakers are moved to the
# test side until their sample count first reaches this fraction.
TEST_FRACTION = 0.2


class DatasetFormatError(ValueError):
    """A dataset directory or manifest violates the on-disk contract."""


@dataclass(eq=False)
class EmbeddingRecord:
    """One sample: paired acoustic/text vectors plus identity and label."""

    sample_id: str
    speaker_id: str
    source: str
    label: int
    acoustic: np.ndarray  # float32, shape (da,)
    text: np.ndarray  # float32, shape (dt,)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.speaker_id == other.speaker_id
            and self.source == other.source
            and self.label == other.label
            and np.array_equal(self.acoustic, other.acoustic)
            and np.array_equal(self.text, other.text)
        )


@dataclass(eq=False)
class DatasetManifest:
    """A collection of records plus dimensionality and naming metadata."""

    class_count: int
    da: int
    dt: int
    class_names: list[str]
    records: list[EmbeddingRecord]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.da == other.da
            and self.dt == other.dt
            and self.class_names == other.class_names
            and self.records == other.records
        )

    def validate(self) -> None:
        if len(self.class_names) != self.class_count:
            raise DatasetFormatError(
                f"class_names has {len(self.class_names)} entries, "
                f"expected class_count={self.class_count}"
            )
        seen: set[str] = set()
        for rec in self.records:
            if rec.sample_id in seen:
                raise DatasetFormatError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            if rec.source not in SOURCES:
                raise DatasetFormatError(
                    f"{rec.sample_id}: source {rec.source!r} not in {SOURCES}"
                )
            if not 0 <= rec.label < self.class_count:
                raise DatasetFormatError(
                    f"{rec.sample_id}: label {rec.label} outside [0, {self.class_count})"
                )
            if rec.acoustic.shape != (self.da,):
                raise DatasetFormatError(
                    f"{rec.sample_id}: acoustic length {rec.acoustic.shape} != ({self.da},)"
                )
            if rec.text.shape != (self.dt,):
                raise DatasetFormatError(
                    f"{rec.sample_id}: text length {rec.text.shape} != ({self.dt},)"
                )
            if not np.isfinite(rec.acoustic).all() or not np.isfinite(rec.text).all():
                raise DatasetFormatError(f"{rec.sample_id}: non-finite vector components")

    def labels(self) -> dict[str, int]:
        return {rec.sample_id: rec.label for rec in self.records}

    def sample_ids(self) -> list[str]:
        return [rec.sample_id for rec in self.records]


@dataclass(frozen=True)
class SplitAssignment:
    """A disjoint train/test partition over manifest sample ids."""

    train_ids: frozenset[str]
    test_ids: frozenset[str]
    scheme: str


@dataclass(frozen=True)
class FoldAssignment:
    """Mapping sample_id -> fold index in [0, k)."""

    fold_of: dict[str, int]
    k: int

    def fold_ids(self, fold: int) -> list[str]:
        return sorted(sid for sid, f in self.fold_of.items() if f == fold)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the dataset directory. ``load_manifest`` inverts this bit-exactly."""
    manifest.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    meta = {
        "class_count": manifest.class_count,
        "da": manifest.da,
        "dt": manifest.dt,
        "class_names": list(manifest.class_names),
        "records": [
            {
                "sample_id": rec.sample_id,
                "speaker_id": rec.speaker_id,
                "source": rec.source,
                "label": rec.label,
            }
            for rec in manifest.records
        ],
    }
    with open(path / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")

    for fname, dim, rows in (
        (ACOUSTIC_FILE, manifest.da, [r.acoustic for r in manifest.records]),
        (TEXT_FILE, manifest.dt, [r.text for r in manifest.records]),
    ):
        if rows:
            payload = np.stack(rows).astype("<f4", copy=False)
        else:
            payload = np.zeros((0, dim), dtype="<f4")
        (path / fname).write_bytes(payload.tobytes())


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read and validate a dataset directory."""
    path = Path(path)
    for fname in (MANIFEST_FILE, ACOUSTIC_FILE, TEXT_FILE):
        if not (path / fname).is_file():
            raise DatasetFormatError(f"missing {fname} in {path}")

    try:
        with open(path / MANIFEST_FILE, encoding="utf-8") as f:
            meta = json.load(f)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"malformed {MANIFEST_FILE}: {exc}") from exc

    try:
        class_count = int(meta["class_count"])
        da = int(meta["da"])
        dt = int(meta["dt"])
        class_names = [str(n) for n in meta["class_names"]]
        rows = meta["records"]
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"manifest missing required key: {exc}") from exc

    n = len(rows)
    payloads = {}
    for fname, dim in ((ACOUSTIC_FILE, da), (TEXT_FILE, dt)):
        raw = (path / fname).read_bytes()
        expected = n * dim * 4
        if len(raw) != expected:
            raise DatasetFormatError(
                f"{fname}: payload is {len(raw)} bytes, expected {expected} "
                f"({n} records x {dim} x 4)"
            )
        payloads[fname] = np.frombuffer(raw, dtype="<f4").reshape(n, dim)

    records = []
    for i, row in enumerate(rows):
        records.append(
            EmbeddingRecord(
                sample_id=str(row["sample_id"]),
                speaker_id=str(row["speaker_id"]),
                source=str(row["source"]),
                label=int(row["label"]),
                acoustic=payloads[ACOUSTIC_FILE][i].copy(),
                text=payloads[TEXT_FILE][i].copy(),
            )
        )

    manifest = DatasetManifest(
        class_count=class_count, da=da, dt=dt, class_names=class_names, records=records
    )
    manifest.validate()
    return manifest


def gather_arrays(
    manifest: DatasetManifest, ids
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Materialize (acoustic, text, labels) float64/int64 arrays in manifest order."""
    wanted = set(ids)
    recs = [r for r in manifest.records if r.sample_id in wanted]
    if recs:
        xa = np.stack([r.acoustic for r in recs]).astype(np.float64)
        xt = np.stack([r.text for r in recs]).astype(np.float64)
    else:
        xa = np.zeros((0, manifest.da))
        xt = np.zeros((0, manifest.dt))
    y = np.asarray([r.label for r in recs], dtype=np.int64)
    return xa, xt, y, [r.sample_id for r in recs]


def build_split(manifest: DatasetManifest, scheme: str, seed: int) -> SplitAssignment:
    """Build the train/test assignment for one of the named schemes.

    Scheme A trains on every YouTube record and tests on every reciter (hafiz)
    record. Scheme B moves whole speakers to the test side independently within
    each source until the test sample count first reaches 20% of that source.
    """
    if scheme not in (SCHEME_A, SCHEME_B):
        raise ValueError(f"unknown split scheme {scheme!r}")

    by_source: dict[str, list[EmbeddingRecord]] = {s: [] for s in SOURCES}
    for rec in manifest.records:
        by_source[rec.source].append(rec)
    for source in SOURCES:
        if not by_source[source]:
            raise DatasetFormatError(
                f"scheme {scheme} requires source {source!r}, absent from manifest"
            )

    if scheme == SCHEME_A:
        train = frozenset(r.sample_id for r in by_source[SOURCE_YOUTUBE])
        test = frozenset(r.sample_id for r in by_source[SOURCE_HAFIZ])
        return SplitAssignment(train_ids=train, test_ids=test, scheme=SCHEME_A)

    speakers_of = {s: sorted({r.speaker_id for r in by_source[s]}) for s in SOURCES}
    overlap = set(speakers_of[SOURCE_YOUTUBE]) & set(speakers_of[SOURCE_HAFIZ])
    if overlap:
        raise DatasetFormatError(
            f"scheme B needs per-source speakers; {sorted(overlap)[:3]} appear in both sources"
        )

    rng = np.random.default_rng(seed)
    train_ids: set[str] = set()
    test_ids: set[str] = set()
    for source in SOURCES:
        recs = by_source[source]
        counts: dict[str, int] = {}
        for rec in recs:
            counts[rec.speaker_id] = counts.get(rec.speaker_id, 0) + 1
        speakers = speakers_of[source]
        order = rng.permutation(len(speakers))
        target = TEST_FRACTION * len(recs)
        test_speakers: set[str] = set()
        assigned = 0
        for idx in order:
            if assigned >= target:
                break
            spk = speakers[idx]
            test_speakers.add(spk)
            assigned += counts[spk]
        for rec in recs:
            (test_ids if rec.speaker_id in test_speakers else train_ids).add(rec.sample_id)

    return SplitAssignment(
        train_ids=frozenset(train_ids), test_ids=frozenset(test_ids), scheme=SCHEME_B
    )


def stratified_kfold(
    train_ids, labels: dict[str, int], k: int, seed: int
) -> FoldAssignment:
    """Partition ``train_ids`` into k folds with per-class sizes differing by <= 1.

    Every class is shuffled and dealt round-robin starting at a seed-derived
    offset, so classes smaller than k still spread across distinct folds.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    ids = sorted(train_ids)
    if not ids:
        raise ValueError("empty train set")

    by_class: dict[int, list[str]] = {}
    for sid in ids:
        by_class.setdefault(labels[sid], []).append(sid)

    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    for label in sorted(by_class):
        members = by_class[label]
        order = rng.permutation(len(members))
        offset = int(rng.integers(k))
        for pos, idx in enumerate(order):
            fold_of[members[idx]] = (offset + pos) % k
    return FoldAssignment(fold_of=fold_of, k=k)
