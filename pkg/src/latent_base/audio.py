"""8 kHz audio front and back end: WAV I/O, Hann-windowed chunking at 50%
overlap, overlap-add synthesis, magnitude spectrograms, and generation from a
conv-autoencoder + HMM model."""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass

import numpy as np

from .errors import SampleRateMismatch, TooShort, UnsupportedFormat

log = logging.getLogger(__name__)

SAMPLE_RATE = 8000
CHUNK = 800  # 100 ms
HOP = 400  # 50 ms
CLIP_WARN_FRACTION = 0.01


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.sample_rate != SAMPLE_RATE:
            raise SampleRateMismatch(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self):
        return len(self.samples)


@dataclass
class ChunkSet:
    chunks: np.ndarray  # (n_chunks, CHUNK)
    hop: int = HOP
    window: np.ndarray | None = None


def hann(n: int = CHUNK) -> np.ndarray:
    """Periodic Hann window; shifted copies at hop n/2 sum to exactly 1."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def load_wav(path) -> AudioSignal:
    """Read 16-bit mono PCM at 8 kHz, scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            frames = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from None
    if channels != 1 or width != 2:
        raise UnsupportedFormat(f"{path}: need 16-bit mono, got {8 * width}-bit x{channels}")
    if rate != SAMPLE_RATE:
        raise SampleRateMismatch(f"{path}: {rate} Hz (resampling is not supported)")
    return AudioSignal(np.frombuffer(frames, dtype="<i2") / 32768.0)


def save_wav(signal: AudioSignal, path) -> None:
    x = signal.samples
    if np.any(np.abs(x) > 1.0):
        raise ValueError("samples must lie in [-1, 1]")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def chunk(signal: AudioSignal) -> ChunkSet:
    """Hann-windowed frames ``[t*HOP, t*HOP + CHUNK)``; a trailing partial
    frame is dropped."""
    x = signal.samples
    if len(x) < CHUNK:
        raise TooShort(f"signal has {len(x)} samples, need at least {CHUNK}")
    n = (len(x) - CHUNK) // HOP + 1
    win = hann(CHUNK)
    frames = np.lib.stride_tricks.sliding_window_view(x, CHUNK)[::HOP][:n]
    return ChunkSet(frames * win, HOP, win)


def overlap_add(chunks) -> AudioSignal:
    """Sum frames at hop offsets. No synthesis window is applied."""
    frames = chunks.chunks if isinstance(chunks, ChunkSet) else np.atleast_2d(chunks)
    hop = chunks.hop if isinstance(chunks, ChunkSet) else HOP
    if len(frames) == 0:
        raise ValueError("no chunks to add")
    n, size = frames.shape
    out = np.zeros((n - 1) * hop + size)
    for t, f in enumerate(frames):
        out[t * hop:t * hop + size] += f
    return AudioSignal(out)


def spectrogram(signal, fft_size: int = 256, hop: int = 128) -> np.ndarray:
    """Hann-windowed short-time magnitude spectra, shape ``(fft_size//2 + 1, frames)``."""
    x = signal.samples if isinstance(signal, AudioSignal) else np.asarray(signal, dtype=np.float64)
    if len(x) < fft_size:
        raise TooShort(f"signal has {len(x)} samples, need at least {fft_size}")
    frames = np.lib.stride_tricks.sliding_window_view(x, fft_size)[::hop]
    return np.abs(np.fft.rfft(frames * hann(fft_size), axis=1)).T


def write_spectrogram_csv(grid, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(f"frame_{j}" for j in range(grid.shape[1])) + "\n")
        for row in grid:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class GeneratedAudio:
    signal: AudioSignal
    states: np.ndarray
    clip_fraction: float


def generate_audio(model, rng: np.random.Generator, n_frames: int) -> GeneratedAudio:
    """Sample an HMM latent path, decode each frame to a chunk and overlap-add.

    Output is hard-clipped to [-1, 1]; a warning is logged when more than 1%
    of samples needed clipping.
    """
    frames, states = model.base.sample(rng, n_frames)
    chunks = model.decode(frames)
    raw = overlap_add(ChunkSet(chunks, HOP)).samples
    clip_fraction = float(np.mean(np.abs(raw) > 1.0))
    if clip_fraction > CLIP_WARN_FRACTION:
        log.warning("%.1f%% of generated samples were clipped", 100 * clip_fraction)
    return GeneratedAudio(AudioSignal(np.clip(raw, -1.0, 1.0)), states, clip_fraction)
