"""Synthetic noisy mixtures at exact SNRs, training segments, and the
hermetic desk-scale corpus generator.

SNR is defined over whole-utterance RMS. Noise shorter than the clean
signal is looped from a seeded offset; longer noise is cropped from a
seeded offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import AnalysisConfig, AudioBuffer, DEFAULT_CONFIG, magnitude, stft
from .errors import AlignmentError, ConfigError, DegenerateInputError
from .masking import MaskConfig, ideal_binary_mask

SNR_GRID_DB = (-12.0, -9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0)

SAMPLES_PER_VIDEO_FRAME = 640  # 16 kHz / 25 fps
EMBEDDING_DIM = 512
SILENT_RMS = 1e-10


@dataclass
class MixtureSpec:
    clean: AudioBuffer
    noise: AudioBuffer
    target_snr_db: float


def noise_gain(clean: AudioBuffer, noise: AudioBuffer, target_snr_db: float) -> float:
    """Gain g so that clean + g*noise measures exactly target_snr_db."""
    rc, rn = clean.rms(), noise.rms()
    if rc <= SILENT_RMS:
        raise DegenerateInputError(f"clean signal is silent (rms {rc:.3g})")
    if rn <= SILENT_RMS:
        raise DegenerateInputError(f"noise signal is silent (rms {rn:.3g})")
    return (rc / rn) * 10.0 ** (-target_snr_db / 20.0)


def _align_noise(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Loop or crop the noise to exactly n samples, from a seeded offset."""
    if noise.size == n:
        return noise.copy()
    if noise.size > n:
        off = int(rng.integers(0, noise.size - n + 1))
        return noise[off : off + n].copy()
    off = int(rng.integers(0, noise.size))
    reps = int(np.ceil((n + off) / noise.size))
    return np.tile(noise, reps)[off : off + n].copy()


def mix(spec: MixtureSpec, seed: int = 0) -> tuple[AudioBuffer, AudioBuffer]:
    """Return (noisy, scaled_noise) hitting the target SNR exactly.

    The gain is computed from the aligned noise segment, so the measured
    whole-utterance SNR equals the target to floating-point precision.
    """
    if spec.clean.sample_rate != spec.noise.sample_rate:
        raise ConfigError("clean and noise sample rates differ")
    rng = np.random.default_rng(seed)
    aligned = AudioBuffer(_align_noise(spec.noise.samples, len(spec.clean), rng), spec.noise.sample_rate)
    g = noise_gain(spec.clean, aligned, spec.target_snr_db)
    scaled = AudioBuffer(g * aligned.samples, spec.clean.sample_rate)
    noisy = AudioBuffer(spec.clean.samples + scaled.samples, spec.clean.sample_rate)
    return noisy, scaled


@dataclass
class TrainingItem:
    """One 3-second training example."""

    noisy_mag: np.ndarray  # [225, 622]
    ibm: np.ndarray  # [225, 622]
    embeddings: np.ndarray  # [75, 512]
    snr_db: float


def make_segments(
    clean: AudioBuffer,
    noise: AudioBuffer,
    embeddings: np.ndarray,
    target_snr_db: float,
    seg_seconds: int = 3,
    cfg: AnalysisConfig = DEFAULT_CONFIG,
    mask_cfg: MaskConfig = MaskConfig(),
    seed: int = 0,
) -> list[TrainingItem]:
    """Cut aligned fixed-length training items; the last partial one is dropped.

    Each segment is mixed independently at the target SNR; the oracle mask
    comes from the STFTs of the segment's clean speech and its scaled noise.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] != EMBEDDING_DIM:
        raise AlignmentError(f"embeddings must be [V,{EMBEDDING_DIM}], got {embeddings.shape}")
    if len(clean) != embeddings.shape[0] * SAMPLES_PER_VIDEO_FRAME:
        raise AlignmentError(
            f"embedding count {embeddings.shape[0]} does not match 25 fps over "
            f"{len(clean)} samples (expected {len(clean) / SAMPLES_PER_VIDEO_FRAME:.2f} frames)"
        )
    seg_samples = seg_seconds * clean.sample_rate
    seg_frames = seg_seconds * 25
    items = []
    rng = np.random.default_rng(seed)
    for k in range(len(clean) // seg_samples):
        a = k * seg_samples
        c = AudioBuffer(clean.samples[a : a + seg_samples], clean.sample_rate)
        m = MixtureSpec(c, noise, target_snr_db)
        noisy, scaled = mix(m, seed=int(rng.integers(0, 2**31)))
        noisy_spec = stft(noisy, cfg)
        ibm = ideal_binary_mask(stft(c, cfg), stft(scaled, cfg), mask_cfg)
        emb = embeddings[k * seg_frames : (k + 1) * seg_frames]
        items.append(TrainingItem(magnitude(noisy_spec), ibm.values, emb.copy(), target_snr_db))
    return items


# ---------------------------------------------------------------------------
# Hermetic synthetic corpus


@dataclass
class CorpusItem:
    """Clean speech stand-in, a noise source, and aligned lip embeddings."""

    clean: AudioBuffer
    noise: AudioBuffer
    embeddings: np.ndarray  # [75, 512]


def _activity_gate(rng: np.random.Generator, n_frames: int) -> np.ndarray:
    """Speech on/off pattern at 25 fps: a few bursts separated by silences."""
    gate = np.zeros(n_frames)
    pos = int(rng.integers(0, 6))
    while pos < n_frames:
        burst = int(rng.integers(10, 30))
        gate[pos : pos + burst] = 1.0
        pos += burst + int(rng.integers(5, 18))
    if gate.sum() < 10:  # guarantee audible speech
        gate[5:35] = 1.0
    kern = np.hanning(7)
    gate = np.convolve(gate, kern / kern.sum(), mode="same")
    return gate


def _harmonic_speech(rng: np.random.Generator, n: int, sr: int) -> AudioBuffer:
    """Amplitude-modulated harmonic complex with randomized, drifting f0.

    The vibrato keeps harmonic peaks moving across STFT bins, so the
    audio-only route cannot simply memorize stationary peak positions.
    """
    t = np.arange(n) / sr
    f0 = rng.uniform(95.0, 230.0)
    vibrato = 1.0 + 0.04 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    phase_base = 2 * np.pi * f0 * np.cumsum(vibrato) / sr
    gate = _activity_gate(rng, (n // SAMPLES_PER_VIDEO_FRAME))
    env = np.interp(np.arange(n), np.arange(gate.size) * SAMPLES_PER_VIDEO_FRAME + SAMPLES_PER_VIDEO_FRAME / 2, gate)
    am = 1.0 + 0.35 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    sig = np.zeros(n)
    for k in range(1, int(3600 / f0) + 1):
        sig += np.sin(k * phase_base + rng.uniform(0, 2 * np.pi)) / k
    # formant-like broadband component so speech occupies wide T-F regions,
    # not just isolated harmonic bins
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1 / sr)
    shape = np.zeros_like(f)
    for _ in range(2):
        cf = rng.uniform(400.0, 3200.0)
        bw = rng.uniform(150.0, 400.0)
        shape += np.exp(-0.5 * ((f - cf) / bw) ** 2)
    formant = np.fft.irfft(spec * shape, n=n)
    formant *= (np.abs(sig).max() / max(np.abs(formant).max(), 1e-12)) * 1.6
    sig = sig + formant
    sig *= env * am
    peak = np.abs(sig).max()
    if peak > 0:
        # headroom so that even a -12 dB mixture stays inside PCM range
        sig *= 0.15 / peak
    return AudioBuffer(sig, sr)


def _seeded_noise(rng: np.random.Generator, n: int, sr: int) -> AudioBuffer:
    """Amplitude-modulated white or pink noise.

    The slow seeded modulation stops overall frame energy from giving away
    speech activity, which is what keeps the visual stream informative at
    low SNR (the premise the AV-advantage experiments test).
    """
    white = rng.standard_normal(n)
    if rng.random() < 0.5:
        sig = white
    else:
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1 / sr)
        spec /= np.sqrt(np.maximum(f, 1.0))
        sig = np.fft.irfft(spec, n=n)
    t = np.arange(n) / sr
    am = 1.0 + 0.6 * np.sin(2 * np.pi * rng.uniform(0.4, 1.6) * t + rng.uniform(0, 2 * np.pi))
    sig *= am
    sig *= 0.3 / max(np.abs(sig).max(), 1e-12)
    return AudioBuffer(sig, sr)


def _embeddings_for(rng: np.random.Generator, clean: AudioBuffer) -> np.ndarray:
    """512-dim rows at 25 fps; dims 0..7 carry the clean energy envelope.

    Dim 0 is the full-band envelope; dims 1..7 are seven octave-band
    envelopes (coarse spectral shape, the kind of information lip
    appearance actually correlates with). The remaining dims are noise.
    """
    n_frames = len(clean) // SAMPLES_PER_VIDEO_FRAME
    blocks = clean.samples[: n_frames * SAMPLES_PER_VIDEO_FRAME].reshape(n_frames, SAMPLES_PER_VIDEO_FRAME)

    def normalize(v):
        return (v - v.mean()) / max(v.std(), 1e-12)

    emb = rng.standard_normal((n_frames, EMBEDDING_DIM))
    emb[:, 0] = normalize(np.sqrt((blocks**2).mean(axis=1)))
    spec = np.abs(np.fft.rfft(blocks, axis=1)) ** 2
    freqs = np.fft.rfftfreq(SAMPLES_PER_VIDEO_FRAME, 1 / clean.sample_rate)
    edges = 62.5 * 2.0 ** np.arange(8)  # 62.5 .. 8000 Hz octaves
    for b in range(7):
        band = (freqs >= edges[b]) & (freqs < edges[b + 1])
        emb[:, 1 + b] = normalize(np.sqrt(spec[:, band].sum(axis=1)))
    emb[:, :8] += 0.05 * rng.standard_normal((n_frames, 8))
    return emb


def synth_corpus(seed: int, n_items: int, seconds: int = 3, sample_rate: int = 16000) -> list[CorpusItem]:
    """Deterministic speech/noise/embedding triples for desk-scale runs."""
    if n_items < 1:
        raise DegenerateInputError("n_items must be >= 1")
    items = []
    root = np.random.SeedSequence(seed)
    for child in root.spawn(n_items):
        rng = np.random.default_rng(child)
        n = seconds * sample_rate
        clean = _harmonic_speech(rng, n, sample_rate)
        noise = _seeded_noise(rng, n + int(rng.integers(0, sample_rate)), sample_rate)
        emb = _embeddings_for(rng, clean)
        items.append(CorpusItem(clean, noise, emb))
    return items
