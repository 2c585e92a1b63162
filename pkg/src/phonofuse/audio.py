"""Audio standardization: WAV io, 16 kHz resampling, fixed 4 s duration, noise gate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RATE = 16000
CLIP_SECONDS = 4.0
CLIP_SAMPLES = int(TARGET_RATE * CLIP_SECONDS)  # 64000

# Fixed resampler design for cross-run determinism.
KAISER_BETA = 8.0
TAPS_PER_PHASE = 32

GATE_FRAME_MS = 25
GATE_RAMP_MS = 5


class AudioFormatError(ValueError):
    """Raised for malformed or unsupported WAV input."""


@dataclass
class AudioClip:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int


def load_wav(path: str | Path) -> AudioClip:
    """Read a PCM-16 or IEEE-float WAV as mono float64.

    Channels are averaged; 16-bit samples are scaled by 1/32768.
    """
    try:
        rate, raw = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise AudioFormatError(f"{path}: malformed WAV file ({exc})") from exc

    if raw.dtype == np.int16:
        samples = raw.astype(np.float64) / 32768.0
    elif raw.dtype in (np.float32, np.float64):
        samples = raw.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {raw.dtype}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples=samples, sample_rate=int(rate))


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write 16-bit PCM."""
    scaled = np.clip(clip.samples, -1.0, 1.0) * 32767.0
    wavfile.write(path, clip.sample_rate, np.round(scaled).astype(np.int16))


def _design_lowpass(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc prototype with exactly TAPS_PER_PHASE taps per phase.

    The cutoff sits at the tighter of the two Nyquist limits at the upsampled
    rate. DC gain is normalized to 1; ``resample_poly`` applies the factor of
    ``up`` that compensates zero-stuffing.
    """
    n_taps = TAPS_PER_PHASE * up
    n = np.arange(n_taps, dtype=np.float64) - (n_taps - 1) / 2.0
    cutoff = 1.0 / max(up, down)  # cycles per upsampled sample, times 2
    h = cutoff * np.sinc(cutoff * n)
    h *= np.kaiser(n_taps, KAISER_BETA)
    h /= h.sum()
    return h


def resample_16k(clip: AudioClip) -> AudioClip:
    """Polyphase resample to exactly 16 kHz; identity when already there."""
    if clip.sample_rate <= 0:
        raise ValueError(f"sample rate must be positive, got {clip.sample_rate}")
    if clip.sample_rate == TARGET_RATE:
        return AudioClip(samples=clip.samples.copy(), sample_rate=TARGET_RATE)
    g = math.gcd(TARGET_RATE, clip.sample_rate)
    up = TARGET_RATE // g
    down = clip.sample_rate // g
    out = resample_poly(
        np.asarray(clip.samples, dtype=np.float64), up, down, window=_design_lowpass(up, down)
    )
    return AudioClip(samples=out, sample_rate=TARGET_RATE)


def fix_duration(clip: AudioClip, seconds: float = CLIP_SECONDS) -> AudioClip:
    """Force the exact target length: center-crop long clips, zero-pad short ones.

    Padding is symmetric with any odd remainder going to the tail.
    """
    if clip.sample_rate != TARGET_RATE:
        raise ValueError(f"fix_duration expects {TARGET_RATE} Hz input, got {clip.sample_rate}")
    target = int(round(seconds * TARGET_RATE))
    x = np.asarray(clip.samples, dtype=np.float64)
    n = x.shape[0]
    if n == target:
        out = x.copy()
    elif n > target:
        start = (n - target) // 2
        out = x[start : start + target].copy()
    else:
        lead = (target - n) // 2
        tail = target - n - lead
        out = np.concatenate([np.zeros(lead), x, np.zeros(tail)])
    return AudioClip(samples=out, sample_rate=TARGET_RATE)


def noise_gate(
    clip: AudioClip, threshold_db: float = -40.0, enabled: bool = False
) -> AudioClip:
    """Zero 25 ms frames whose RMS sits below threshold relative to the clip peak.

    Gated regions blend in over 5 ms linear ramps. Disabled by default so the
    standard pipeline stays free of any unstated denoising.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if not enabled or x.size == 0:
        return AudioClip(samples=x.copy(), sample_rate=clip.sample_rate)

    frame = max(1, int(clip.sample_rate * GATE_FRAME_MS / 1000))
    ramp = max(1, int(clip.sample_rate * GATE_RAMP_MS / 1000))
    peak = float(np.max(np.abs(x)))
    threshold = peak * 10.0 ** (threshold_db / 20.0)

    n_frames = (x.size + frame - 1) // frame
    gains = np.empty(x.size)
    any_open = False
    all_open = True
    for i in range(n_frames):
        seg = x[i * frame : (i + 1) * frame]
        rms = float(np.sqrt(np.mean(seg * seg)))
        keep = rms >= threshold
        gains[i * frame : (i + 1) * frame] = 1.0 if keep else 0.0
        any_open = any_open or keep
        all_open = all_open and keep

    if all_open:
        return AudioClip(samples=x.copy(), sample_rate=clip.sample_rate)
    if not any_open:
        return AudioClip(samples=np.zeros_like(x), sample_rate=clip.sample_rate)

    kernel = np.full(ramp, 1.0 / ramp)
    padded = np.pad(gains, ramp, mode="edge")
    smooth = np.convolve(padded, kernel, mode="same")[ramp:-ramp]
    return AudioClip(samples=x * smooth, sample_rate=clip.sample_rate)


def standardize(clip: AudioClip, gate: bool = False, threshold_db: float = -40.0) -> AudioClip:
    """Full pipeline: resample to 16 kHz, fix to 4 s, optional noise gate."""
    out = fix_duration(resample_16k(clip))
    return noise_gate(out, threshold_db=threshold_db, enabled=gate)
