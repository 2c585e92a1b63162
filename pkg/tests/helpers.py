"""Shared synthetic-dataset builders for the test suite."""
from __future__ import annotations

import numpy as np

from phonofuse import data


def make_record(
    sample_id: str,
    speaker_id: str,
    source: str,
    label: int,
    acoustic: np.ndarray,
    text: np.ndarray,
) -> data.EmbeddingRecord:
    return data.EmbeddingRecord(
        sample_id=sample_id,
        speaker_id=speaker_id,
        source=source,
        label=label,
        acoustic=np.asarray(acoustic, dtype=np.float32),
        text=np.asarray(text, dtype=np.float32),
    )


def random_manifest(
    n: int = 12,
    class_count: int = 3,
    da: int = 8,
    dt: int = 8,
    seed: int = 0,
    n_speakers: int = 4,
) -> data.DatasetManifest:
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        source = data.SOURCE_YOUTUBE if i % 2 == 0 else data.SOURCE_HAFIZ
        records.append(
            make_record(
                sample_id=f"s{i:04d}",
                speaker_id=f"{source[:2]}_spk{i % n_speakers}",
                source=source,
                label=i % class_count,
                acoustic=rng.normal(size=da),
                text=rng.normal(size=dt),
            )
        )
    return data.DatasetManifest(
        class_count=class_count,
        da=da,
        dt=dt,
        class_names=[f"class{i}" for i in range(class_count)],
        records=records,
    )


def table1_manifest(seed: int = 0) -> data.DatasetManifest:
    """Replicates the reference corpus structure: 783 YouTube samples over 35
    speakers and 232 reciter samples over 11 speakers, 29 classes."""
    rng = np.random.default_rng(seed)
    records = []
    idx = 0

    def add(source: str, speaker: str, count: int):
        nonlocal idx
        for _ in range(count):
            records.append(
                make_record(
                    sample_id=f"{source}_{idx:05d}",
                    speaker_id=speaker,
                    source=source,
                    label=idx % 29,
                    acoustic=rng.normal(size=4),
                    text=rng.normal(size=4),
                )
            )
            idx += 1

    # 13 speakers with 23 samples + 22 speakers with 22 samples = 783
    for s in range(35):
        add(data.SOURCE_YOUTUBE, f"yt_spk{s:02d}", 23 if s < 13 else 22)
    # 1 speaker with 22 samples + 10 speakers with 21 samples = 232
    for s in range(11):
        add(data.SOURCE_HAFIZ, f"hz_spk{s:02d}", 22 if s == 0 else 21)

    manifest = data.DatasetManifest(
        class_count=29,
        da=4,
        dt=4,
        class_names=[f"phoneme{i:02d}" for i in range(29)],
        records=records,
    )
    manifest.validate()
    return manifest


def synergy_manifest(
    seed: int = 0,
    n_train: int = 600,
    n_test: int = 200,
    da: int = 16,
    dt: int = 16,
    margin: float = 3.0,
    noise: float = 0.5,
) -> data.DatasetManifest:
    """Four classes composed of one acoustic-only and one text-only binary factor.

    The label is 2*u + v where u is decodable only from the acoustic vector and
    v only from the text vector, so either modality alone caps at 50% accuracy
    while the pair is cleanly separable. Train rows carry the youtube tag and
    test rows the hafiz tag, so scheme A reproduces the intended split.
    """
    rng = np.random.default_rng(seed)
    dir_a = rng.normal(size=da)
    dir_a /= np.linalg.norm(dir_a)
    dir_t = rng.normal(size=dt)
    dir_t /= np.linalg.norm(dir_t)

    records = []

    def add(count: int, source: str, speaker_pool: int, prefix: str):
        for i in range(count):
            u = (i // 2) % 2
            v = i % 2
            label = 2 * u + v
            acoustic = (2 * u - 1) * margin * dir_a + noise * rng.normal(size=da)
            text = (2 * v - 1) * margin * dir_t + noise * rng.normal(size=dt)
            records.append(
                make_record(
                    sample_id=f"{prefix}{i:04d}",
                    speaker_id=f"{prefix}spk{i % speaker_pool}",
                    source=source,
                    label=label,
                    acoustic=acoustic,
                    text=text,
                )
            )

    add(n_train, data.SOURCE_YOUTUBE, 20, "tr")
    add(n_test, data.SOURCE_HAFIZ, 5, "te")

    manifest = data.DatasetManifest(
        class_count=4,
        da=da,
        dt=dt,
        class_names=["aa-tt", "aa-TT", "AA-tt", "AA-TT"],
        records=records,
    )
    manifest.validate()
    return manifest


def separable_arrays(
    n: int = 80,
    dim: int = 8,
    n_classes: int = 2,
    seed: int = 0,
    margin: float = 4.0,
    noise: float = 0.4,
) -> tuple[np.ndarray, np.ndarray]:
    """Margin-separated clusters: one center per class along distinct axes."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_classes, dim))
    for c in range(n_classes):
        centers[c, c % dim] = margin
    y = np.arange(n) % n_classes
    x = centers[y] + noise * rng.normal(size=(n, dim))
    return x, y.astype(np.int64)
