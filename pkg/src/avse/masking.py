"""Ideal-binary-mask oracle, mask application and enhanced-speech resynthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import AnalysisConfig, AudioBuffer, ComplexSpectrogram, istft, stft
from .errors import ConfigError, ShapeError

BINARY = "binary"
SOFT = "soft"


@dataclass
class SpectralMask:
    """T x 622 multiplicative spectrogram mask, binary or soft."""

    values: np.ndarray
    kind: str = BINARY

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {self.values.shape}")
        if self.kind == BINARY:
            if not np.isin(self.values, (0.0, 1.0)).all():
                raise ShapeError("binary mask values must be exactly 0 or 1")
        elif self.kind == SOFT:
            if self.values.min(initial=0.0) < 0.0 or self.values.max(initial=0.0) > 1.0:
                raise ShapeError("soft mask values must lie in [0, 1]")
        else:
            raise ShapeError(f"unknown mask kind {self.kind!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class MaskConfig:
    """Local criterion and binarization policy."""

    lc_db: float = 0.0
    binarize_threshold: float = 0.5
    output_kind: str = BINARY

    def __post_init__(self):
        if not (0.0 < self.binarize_threshold < 1.0):
            raise ConfigError("binarize_threshold must lie in (0, 1)")


def ideal_binary_mask(
    clean_spec: ComplexSpectrogram,
    noise_spec: ComplexSpectrogram,
    cfg: MaskConfig = MaskConfig(),
) -> SpectralMask:
    """1 where per-bin speech power beats noise power by more than lc_db.

    ``noise_spec`` must be the STFT of the noise as actually mixed (already
    scaled). Ties and all-zero bins fall to 0; zero noise under nonzero
    speech gives 1.
    """
    if clean_spec.frames.shape != noise_spec.frames.shape:
        raise ShapeError(f"spectrogram shapes differ: {clean_spec.frames.shape} vs {noise_spec.frames.shape}")
    s2 = np.abs(clean_spec.frames) ** 2
    n2 = np.abs(noise_spec.frames) ** 2
    # strict inequality covers every case: zero noise -> 1 iff speech > 0,
    # both zero -> 0, exact tie at the criterion -> 0
    mask = s2 > n2 * 10.0 ** (cfg.lc_db / 10.0)
    return SpectralMask(mask.astype(np.float64), BINARY)


def binarize(mask: SpectralMask, threshold: float = 0.5) -> SpectralMask:
    """Threshold a soft mask into a binary one (idempotent on binary input)."""
    return SpectralMask((mask.values > threshold).astype(np.float64), BINARY)


def apply_mask(noisy_spec: ComplexSpectrogram, mask: SpectralMask) -> ComplexSpectrogram:
    """Scale magnitudes by the mask; phases pass through untouched."""
    if mask.values.shape != noisy_spec.frames.shape:
        raise ShapeError(f"mask shape {mask.values.shape} != spectrogram shape {noisy_spec.frames.shape}")
    return ComplexSpectrogram(noisy_spec.frames * mask.values, noisy_spec.config, noisy_spec.source_len)


def resynthesize(
    noisy: AudioBuffer,
    mask: SpectralMask,
    cfg: AnalysisConfig | None = None,
) -> tuple[AudioBuffer, int]:
    """Masked-magnitude / noisy-phase resynthesis.

    Returns the enhanced signal (trimmed to the input length, clamped to
    [-1, 1]) together with the number of clamped samples.
    """
    spec = stft(noisy, cfg) if cfg is not None else stft(noisy)
    if mask.values.shape[0] != spec.n_frames:
        raise ShapeError(f"mask has {mask.values.shape[0]} frames, spectrogram has {spec.n_frames}")
    out = istft(apply_mask(spec, mask))
    clipped = int(np.count_nonzero(np.abs(out.samples) > 1.0))
    out.samples = np.clip(out.samples, -1.0, 1.0)
    return out, clipped
