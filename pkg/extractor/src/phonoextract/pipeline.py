"""Walks a prepped audio tree and writes the embedding dataset directory.

Input layout: ``source/speaker/label/sample.wav`` with source in
{youtube, hafiz} and label one of the 29 phoneme slugs. Output is the dataset
directory consumed by the training harness: ``manifest.json`` plus
``acoustic.f32`` / ``text.f32`` payloads (row-major little-endian float32, one
row per record in manifest order).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .encoders import CLIP_SAMPLES, SAMPLE_RATE, EncoderSet, ExtractionConfig, build_encoders
from .phonemes import CLASS_NAMES, LABEL_OF

log = logging.getLogger(__name__)

SOURCES = ("youtube", "hafiz")


class ExtractionError(ValueError):
    """Raised when the input tree or an audio file violates the contract."""


def read_clip(path: Path) -> np.ndarray:
    """Load one prepped clip: 16 kHz required, averaged to mono, 4 s enforced."""
    try:
        rate, raw = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise ExtractionError(f"{path}: malformed WAV ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise ExtractionError(
            f"{path}: expected {SAMPLE_RATE} Hz input (run `phonofuse prep` first), got {rate}"
        )
    if raw.dtype == np.int16:
        samples = raw.astype(np.float64) / 32768.0
    elif raw.dtype in (np.float32, np.float64):
        samples = raw.astype(np.float64)
    else:
        raise ExtractionError(f"{path}: unsupported sample format {raw.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    n = samples.size
    if n > CLIP_SAMPLES:
        start = (n - CLIP_SAMPLES) // 2
        samples = samples[start : start + CLIP_SAMPLES]
    elif n < CLIP_SAMPLES:
        lead = (CLIP_SAMPLES - n) // 2
        tail = CLIP_SAMPLES - n - lead
        samples = np.concatenate([np.zeros(lead), samples, np.zeros(tail)])
    return samples


@dataclass
class ExtractionSummary:
    records: int
    skipped: int
    da: int
    dt: int
    out_dir: Path


def build_dataset(
    audio_tree: str | Path,
    out_dir: str | Path,
    config: ExtractionConfig | None = None,
    encoders: EncoderSet | None = None,
) -> ExtractionSummary:
    """Extract embeddings for every clip in the tree and write the dataset.

    Files with unknown labels or unreadable audio are logged and skipped;
    an empty or mislaid tree raises. Row order follows the sorted relative
    paths, so re-running over an unchanged tree reproduces the payload bytes.
    """
    tree = Path(audio_tree)
    out = Path(out_dir)
    config = config or ExtractionConfig()
    encoders = encoders or build_encoders(config)

    wavs = sorted(tree.rglob("*.wav"))
    if not wavs:
        raise ExtractionError(f"no .wav files under {tree}")

    rows = []
    acoustic_rows = []
    text_rows = []
    skipped = 0
    for path in wavs:
        rel = path.relative_to(tree)
        parts = rel.parts
        if len(parts) != 4:
            raise ExtractionError(
                f"{rel}: expected source/speaker/label/sample.wav layout"
            )
        source, speaker, label_name = parts[0], parts[1], parts[2]
        if source not in SOURCES:
            raise ExtractionError(f"{rel}: source directory {source!r} not in {SOURCES}")
        if label_name not in LABEL_OF:
            log.warning("skipped %s: unknown label directory %r", rel, label_name)
            skipped += 1
            continue
        try:
            clip = read_clip(path)
        except ExtractionError as exc:
            log.warning("skipped %s: %s", rel, exc)
            skipped += 1
            continue

        transcription = encoders.transcriber.transcribe(clip)
        text_vec = np.asarray(encoders.text_embedder.embed(transcription), dtype=np.float64)
        acoustic_vec = np.asarray(encoders.audio_embedder.embed(clip), dtype=np.float64)
        rows.append(
            {
                "sample_id": rel.with_suffix("").as_posix(),
                "speaker_id": speaker,
                "source": source,
                "label": LABEL_OF[label_name],
            }
        )
        acoustic_rows.append(acoustic_vec)
        text_rows.append(text_vec)
        log.info("extracted %s (transcription %r)", rel, transcription)

    if not rows:
        raise ExtractionError(f"no usable clips under {tree} ({skipped} skipped)")

    da = acoustic_rows[0].size
    dt = text_rows[0].size
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "class_count": len(CLASS_NAMES),
        "da": da,
        "dt": dt,
        "class_names": CLASS_NAMES,
        "records": rows,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    (out / "acoustic.f32").write_bytes(
        np.stack(acoustic_rows).astype("<f4").tobytes()
    )
    (out / "text.f32").write_bytes(np.stack(text_rows).astype("<f4").tobytes())

    log.info("dataset written to %s: %d records (%d skipped)", out, len(rows), skipped)
    return ExtractionSummary(
        records=len(rows), skipped=skipped, da=da, dt=dt, out_dir=out
    )
