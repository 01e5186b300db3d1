"""Framing, windowing and the 622-bin forward/inverse STFT.

Analysis geometry: 1242-sample (77.625 ms) frames at 16 kHz, hop 213
samples, real FFT keeping 1242/2 + 1 = 622 bins. Frame t covers samples
[t*hop, t*hop + 1242); the tail is reflect-padded so the frame count is
len // hop regardless of content. That quantization makes 3 s of audio
(48000 samples) produce exactly 225 frames, which lines up with 75 video
frames repeated three times.

The window is the Hann shape sampled at half-sample offsets,
w[n] = sin^2(pi (n + 0.5) / N). It sums to exactly N/2 like the periodic
Hann but is strictly positive, so squared-window overlap-add has nonzero
coverage at every sample (including sample 0) and the round trip is exact
to floating-point precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

PIPELINE_SAMPLE_RATE = 16000


@dataclass
class AudioBuffer:
    """Mono time-domain signal."""

    samples: np.ndarray
    sample_rate: int = PIPELINE_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if self.samples.size else 0.0


def _offset_hann(n: int) -> np.ndarray:
    return np.sin(np.pi * (np.arange(n) + 0.5) / n) ** 2


@dataclass(frozen=True)
class AnalysisConfig:
    """STFT geometry; defaults are the engine's fixed 622-bin analysis."""

    frame_len: int = 1242
    hop: int = 213
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.hop >= self.frame_len:
            raise ConfigError(f"hop {self.hop} must be < frame_len {self.frame_len}")
        if self.frame_len % 2:
            raise ConfigError("frame_len must be even (real FFT keeps frame_len/2 + 1 bins)")
        if self.window is None:
            object.__setattr__(self, "window", _offset_hann(self.frame_len))
        if self.window.shape != (self.frame_len,):
            raise ConfigError("window length must equal frame_len")

    @property
    def fft_bins(self) -> int:
        return self.frame_len // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        return max(1, n_samples // self.hop)


DEFAULT_CONFIG = AnalysisConfig()


@dataclass
class ComplexSpectrogram:
    """T x 622 complex STFT frames plus the geometry that produced them."""

    frames: np.ndarray
    config: AnalysisConfig
    source_len: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.config.fft_bins:
            raise ShapeError(f"spectrogram must be [T,{self.config.fft_bins}], got {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def stft(audio: AudioBuffer, cfg: AnalysisConfig = DEFAULT_CONFIG) -> ComplexSpectrogram:
    """Forward STFT. The input must already be at the 16 kHz pipeline rate."""
    if audio.sample_rate != PIPELINE_SAMPLE_RATE:
        raise ConfigError(f"expected {PIPELINE_SAMPLE_RATE} Hz input, got {audio.sample_rate}")
    x = audio.samples
    if x.size < 1:
        raise ConfigError("empty signal")
    t = cfg.frame_count(x.size)
    needed = (t - 1) * cfg.hop + cfg.frame_len
    if needed > x.size:
        pad = needed - x.size
        if x.size == 1:
            x = np.concatenate([x, np.full(pad, x[0])])
        else:
            # reflect in chunks: np.pad caps each reflection at len-1
            y = x
            while y.size < needed:
                take = min(needed - y.size, y.size - 1)
                y = np.concatenate([y, y[-2 : -2 - take : -1]])
            x = y
    starts = np.arange(t) * cfg.hop
    frames = x[starts[:, None] + np.arange(cfg.frame_len)[None, :]]
    spec = np.fft.rfft(frames * cfg.window, axis=1)
    return ComplexSpectrogram(spec, cfg, audio.samples.size)


def istft(spec: ComplexSpectrogram, cfg: AnalysisConfig | None = None, length: int | None = None) -> AudioBuffer:
    """Weighted overlap-add inverse; output trimmed to the recorded length.

    Synthesis uses the analysis window again and divides by the summed
    squared window, which reconstructs any signal exactly wherever the
    coverage is nonzero (everywhere, by the window choice).
    """
    cfg = cfg or spec.config
    if spec.frames.shape[1] != cfg.fft_bins:
        raise ShapeError(f"spectrogram bins {spec.frames.shape[1]} != config bins {cfg.fft_bins}")
    t = spec.frames.shape[0]
    out_len = length if length is not None else spec.source_len
    total = (t - 1) * cfg.hop + cfg.frame_len
    num = np.zeros(total)
    den = np.zeros(total)
    frames = np.fft.irfft(spec.frames, n=cfg.frame_len, axis=1) * cfg.window
    wsq = cfg.window**2
    for i in range(t):
        a = i * cfg.hop
        num[a : a + cfg.frame_len] += frames[i]
        den[a : a + cfg.frame_len] += wsq
    if den[:out_len].min() <= 0.0:
        raise ConfigError("zero squared-window coverage; window/hop combination is not invertible")
    return AudioBuffer(num[:out_len] / den[:out_len], PIPELINE_SAMPLE_RATE)


def magnitude(spec: ComplexSpectrogram) -> np.ndarray:
    """[T,622] nonnegative magnitudes."""
    return np.abs(spec.frames)


def phase(spec: ComplexSpectrogram) -> np.ndarray:
    """[T,622] phases in (-pi, pi]; a zero bin has phase 0 by convention."""
    return np.angle(spec.frames)


def from_polar(mag: np.ndarray, ph: np.ndarray, cfg: AnalysisConfig, source_len: int) -> ComplexSpectrogram:
    if mag.shape != ph.shape:
        raise ShapeError(f"magnitude {mag.shape} and phase {ph.shape} differ")
    return ComplexSpectrogram(mag * np.exp(1j * ph), cfg, source_len)
