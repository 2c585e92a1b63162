"""Encoder backends: pretrained transformers, or a deterministic offline stand-in.

The ``transformers`` backend runs publicly released checkpoints (Whisper for
transcription, UniSpeech for acoustic embeddings, multilingual BERT for text)
in inference mode with greedy decoding. The ``lite`` backend computes cheap
deterministic signal/text features with the same interface so the pipeline can
be built and tested without downloading any model weights.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .phonemes import GLYPHS

BACKEND_LITE = "lite"
BACKEND_TRANSFORMERS = "transformers"

POOLING_MEAN = "mean"
POOLING_CLS = "cls"

SAMPLE_RATE = 16000
CLIP_SAMPLES = 64000

SILENCE_RMS = 1e-5


@dataclass
class ExtractionConfig:
    backend: str = BACKEND_LITE
    acoustic_model_id: str = "microsoft/unispeech-sat-base"
    asr_model_id: str = "openai/whisper-small"
    text_model_id: str = "bert-base-multilingual-cased"
    pooling: str = POOLING_MEAN
    language: str = "ar"

    def validate(self) -> None:
        if self.backend not in (BACKEND_LITE, BACKEND_TRANSFORMERS):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.pooling not in (POOLING_MEAN, POOLING_CLS):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionConfig":
        cfg = cls(**{k: d[k] for k in cls().__dict__ if k in d})
        cfg.validate()
        return cfg


class LiteTranscriber:
    """Maps the dominant spectral band to one Arabic glyph; silence to ''."""

    def transcribe(self, clip: np.ndarray) -> str:
        x = np.asarray(clip, dtype=np.float64)
        rms = float(np.sqrt(np.mean(x * x))) if x.size else 0.0
        if rms < SILENCE_RMS:
            return ""
        spectrum = np.abs(np.fft.rfft(x)) ** 2
        freqs = np.fft.rfftfreq(x.size, d=1.0 / SAMPLE_RATE)
        centroid = float((freqs * spectrum).sum() / spectrum.sum())
        bucket = min(int(centroid / (SAMPLE_RATE / 2) * len(GLYPHS)), len(GLYPHS) - 1)
        return GLYPHS[bucket]


class LiteTextEmbedder:
    """Hashed character-trigram projection; identical strings map identically."""

    def __init__(self, dim: int = 64):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim)
        padded = f"^{text}$"
        for i in range(len(padded) - 2):
            digest = hashlib.blake2b(
                padded[i : i + 3].encode("utf-8"), digest_size=8
            ).digest()
            value = int.from_bytes(digest, "little")
            idx = value % self.dim
            sign = 1.0 if (value >> 32) & 1 else -1.0
            out[idx] += sign
        return np.tanh(out)


class LiteAudioEmbedder:
    """Mean-centered log band energies over 32 ms frames.

    Mean-centering turns a global amplitude change into (approximately) a
    removed constant shift, keeping embeddings of rescaled clips nearly
    parallel.
    """

    def __init__(self, dim: int = 64, frame: int = 512, hop: int = 256):
        self.dim = dim
        self.frame = frame
        self.hop = hop

    def embed(self, clip: np.ndarray) -> np.ndarray:
        x = np.asarray(clip, dtype=np.float64)
        if x.size < self.frame:
            x = np.pad(x, (0, self.frame - x.size))
        n_frames = 1 + (x.size - self.frame) // self.hop
        window = np.hanning(self.frame)
        bands = np.zeros((n_frames, self.dim))
        n_bins = self.frame // 2 + 1
        edges = np.linspace(0, n_bins, self.dim + 1).astype(int)
        for t in range(n_frames):
            seg = x[t * self.hop : t * self.hop + self.frame] * window
            power = np.abs(np.fft.rfft(seg)) ** 2
            for b in range(self.dim):
                lo, hi = edges[b], max(edges[b] + 1, edges[b + 1])
                bands[t, b] = power[lo:hi].mean()
        feats = np.log(bands.mean(axis=0) + 1e-12)
        return feats - feats.mean()


def _lazy_torch():
    try:
        import torch
    except ImportError as exc:  # pragma: no cover - exercised only without extras
        raise RuntimeError(
            "the transformers backend needs the 'models' extra: "
            "pip install phonoextract[models]"
        ) from exc
    return torch


class TransformersTranscriber:  # pragma: no cover - needs model downloads
    def __init__(self, model_id: str, language: str = "ar"):
        torch = _lazy_torch()
        from transformers import WhisperForConditionalGeneration, WhisperProcessor

        self.torch = torch
        self.processor = WhisperProcessor.from_pretrained(model_id)
        self.model = WhisperForConditionalGeneration.from_pretrained(model_id).eval()
        self.language = language

    def transcribe(self, clip: np.ndarray) -> str:
        inputs = self.processor(
            np.asarray(clip, dtype=np.float32),
            sampling_rate=SAMPLE_RATE,
            return_tensors="pt",
        )
        with self.torch.no_grad():
            ids = self.model.generate(
                inputs.input_features,
                num_beams=1,
                do_sample=False,
                language=self.language,
                task="transcribe",
            )
        return self.processor.batch_decode(ids, skip_special_tokens=True)[0].strip()


class TransformersTextEmbedder:  # pragma: no cover - needs model downloads
    def __init__(self, model_id: str, pooling: str = POOLING_MEAN):
        torch = _lazy_torch()
        from transformers import AutoModel, AutoTokenizer

        self.torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModel.from_pretrained(model_id).eval()
        self.pooling = pooling
        self.dim = int(self.model.config.hidden_size)

    def embed(self, text: str) -> np.ndarray:
        inputs = self.tokenizer(text or "", return_tensors="pt", truncation=True)
        with self.torch.no_grad():
            hidden = self.model(**inputs).last_hidden_state[0]
        if self.pooling == POOLING_CLS:
            vec = hidden[0]
        else:
            vec = hidden.mean(dim=0)
        return vec.numpy().astype(np.float64)


class TransformersAudioEmbedder:  # pragma: no cover - needs model downloads
    def __init__(self, model_id: str):
        torch = _lazy_torch()
        from transformers import AutoFeatureExtractor, AutoModel

        self.torch = torch
        self.extractor = AutoFeatureExtractor.from_pretrained(model_id)
        self.model = AutoModel.from_pretrained(model_id).eval()
        self.dim = int(self.model.config.hidden_size)

    def embed(self, clip: np.ndarray) -> np.ndarray:
        inputs = self.extractor(
            np.asarray(clip, dtype=np.float32),
            sampling_rate=SAMPLE_RATE,
            return_tensors="pt",
        )
        with self.torch.no_grad():
            hidden = self.model(**inputs).last_hidden_state[0]
        return hidden.mean(dim=0).numpy().astype(np.float64)


@dataclass
class EncoderSet:
    transcriber: object
    text_embedder: object
    audio_embedder: object


def build_encoders(config: ExtractionConfig) -> EncoderSet:
    config.validate()
    if config.backend == BACKEND_LITE:
        return EncoderSet(
            transcriber=LiteTranscriber(),
            text_embedder=LiteTextEmbedder(),
            audio_embedder=LiteAudioEmbedder(),
        )
    return EncoderSet(  # pragma: no cover - needs model downloads
        transcriber=TransformersTranscriber(config.asr_model_id, config.language),
        text_embedder=TransformersTextEmbedder(config.text_model_id, config.pooling),
        audio_embedder=TransformersAudioEmbedder(config.acoustic_model_id),
    )
