"""Log-Mel spectrogram front end and linear audio embedding.

Fixed signal chain: 16 kHz mono input, 25 ms / 10 ms STFT framing with a
periodic Hann window, 512-point FFT, 64 triangular Mel filters spanning
125-7500 Hz, log compression with a small additive floor. Patches of 96
consecutive spectrogram frames stand in for the pretrained audio trunk's
input; a trainable affine map produces the 128-D embedding.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import sample_frame_indices

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms at 16 kHz
HOP_LENGTH = 160  # 10 ms at 16 kHz
N_FFT = 512
N_FFT_BINS = N_FFT // 2 + 1
N_MELS = 64
FMIN_HZ = 125.0
FMAX_HZ = 7500.0
LOG_OFFSET = 0.01
PATCH_FRAMES = 96
N_PATCHES = 28
EMBED_DIM = 128

# Shortest signal that yields PATCH_FRAMES STFT frames.
MIN_PATCH_SAMPLES = WIN_LENGTH + (PATCH_FRAMES - 1) * HOP_LENGTH


@dataclass
class Waveform:
    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def validate(self) -> "Waveform":
        if self.rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.rate}")
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")
        if self.samples.size and np.abs(self.samples).max() > 1.0:
            raise ValueError("waveform amplitudes must lie in [-1, 1]")
        return self


def read_wav(path: Path) -> Waveform:
    """Read a mono 16-bit PCM WAV at 16 kHz. Anything else is rejected."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        if f.getframerate() != SAMPLE_RATE:
            raise ValueError(
                f"{path}: expected {SAMPLE_RATE} Hz, got {f.getframerate()} Hz "
                "(resampling is not performed)"
            )
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples).validate()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(w: Waveform) -> np.ndarray:
    """Slice into overlapping 400-sample frames (hop 160), Hann-windowed.

    Inputs shorter than one window are zero-padded to a single frame.
    """
    samples = w.validate().samples
    if samples.size < WIN_LENGTH:
        samples = np.pad(samples, (0, WIN_LENGTH - samples.size))
    n_frames = (samples.size - WIN_LENGTH) // HOP_LENGTH + 1
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(n_frames)[:, None]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_LENGTH) / WIN_LENGTH)
    return samples[idx] * window


def power_spectrogram(w: Waveform) -> np.ndarray:
    """Magnitude-squared STFT, shape (n_frames, 257)."""
    frames = frame_signal(w)
    return np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2


def mel_filterbank(
    n_fft_bins: int = N_FFT_BINS,
    n_mels: int = N_MELS,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = FMIN_HZ,
    fmax: float = FMAX_HZ,
) -> np.ndarray:
    """Triangular Mel filters as an (n_mels, n_fft_bins) matrix.

    Band edges are equally spaced on the Mel scale between fmin and fmax;
    triangles are evaluated on the Mel axis and peak at 1 (no area
    normalization), so each FFT bin feeds at most two filters.
    """
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    nyquist = sample_rate / 2.0
    bin_mels = hz_to_mel(np.linspace(0.0, nyquist, n_fft_bins))
    edge_mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    weights = np.zeros((n_mels, n_fft_bins))
    for m in range(n_mels):
        lower, center, upper = edge_mels[m], edge_mels[m + 1], edge_mels[m + 2]
        rising = (bin_mels - lower) / (center - lower)
        falling = (upper - bin_mels) / (upper - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def mel_centers_hz(n_mels: int = N_MELS, fmin: float = FMIN_HZ, fmax: float = FMAX_HZ) -> np.ndarray:
    """Center frequency of each Mel filter in Hz."""
    edge_mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(edge_mels[1:-1])


def log_mel_spectrogram(w: Waveform) -> np.ndarray:
    """Per-frame log-Mel energies, shape (n_frames, 64)."""
    power = power_spectrogram(w)
    mel = power @ mel_filterbank().T
    return np.log(mel + LOG_OFFSET)


def log_mel_patches(w: Waveform, n_patches: int = N_PATCHES) -> np.ndarray:
    """Cut the log-Mel spectrogram into n_patches windows of 96 frames.

    Start positions are spread uniformly over all valid window starts with
    the same index formula used for video key frames; signals too short for
    a single window are zero-padded first. Output shape (n_patches, 96, 64).
    """
    samples = w.validate().samples
    if samples.size < MIN_PATCH_SAMPLES:
        w = Waveform(np.pad(samples, (0, MIN_PATCH_SAMPLES - samples.size)), w.rate)
    spec = log_mel_spectrogram(w)
    total_windows = spec.shape[0] - PATCH_FRAMES + 1
    starts = sample_frame_indices(total_windows, n_patches)
    return np.stack([spec[s : s + PATCH_FRAMES] for s in starts])


def audio_embed(patch: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine embedding of one 96x64 patch: flatten row-major, project to 128."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (PATCH_FRAMES, N_MELS):
        raise ValueError(f"patch must be {PATCH_FRAMES}x{N_MELS}, got {patch.shape}")
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weight.shape != (EMBED_DIM, PATCH_FRAMES * N_MELS) or bias.shape != (EMBED_DIM,):
        raise ValueError("projection params must map 96*64 -> 128")
    return weight @ patch.reshape(-1) + bias


def wav_to_audio_features(w: Waveform, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Full front end: waveform to the (28, 128) audio feature matrix."""
    patches = log_mel_patches(w)
    return np.stack([audio_embed(p, weight, bias) for p in patches])
