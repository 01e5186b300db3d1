"""IBM semantics, mask application, resynthesis."""

import numpy as np
import pytest

from avse.dsp import AudioBuffer, istft, magnitude, stft
from avse.errors import ShapeError
from avse.masking import (
    BINARY,
    MaskConfig,
    SOFT,
    SpectralMask,
    apply_mask,
    binarize,
    ideal_binary_mask,
    resynthesize,
)


def _specs(rng, n=16000):
    clean = AudioBuffer(rng.standard_normal(n) * 0.1)
    noise = AudioBuffer(rng.standard_normal(n) * 0.1)
    return stft(clean), stft(noise)


class TestSpectralMask:
    def test_binary_values_enforced(self):
        with pytest.raises(ShapeError):
            SpectralMask(np.array([[0.5]]), BINARY)

    def test_soft_range_enforced(self):
        with pytest.raises(ShapeError):
            SpectralMask(np.array([[1.5]]), SOFT)

    def test_binarize_idempotent(self, rng):
        soft = SpectralMask(rng.uniform(0, 1, (10, 622)), SOFT)
        b1 = binarize(soft, 0.5)
        b2 = binarize(b1, 0.5)
        np.testing.assert_array_equal(b1.values, b2.values)
        assert set(np.unique(b1.values)) <= {0.0, 1.0}


class TestIdealBinaryMask:
    def test_zero_noise_gives_all_ones(self, rng):
        clean_spec, noise_spec = _specs(rng)
        silent = stft(AudioBuffer(np.zeros(16000)))
        mask = ideal_binary_mask(clean_spec, silent)
        assert mask.values.min() == 1.0

    def test_both_zero_gives_zero(self):
        silent = stft(AudioBuffer(np.zeros(16000)))
        mask = ideal_binary_mask(silent, silent)
        assert mask.values.max() == 0.0

    def test_power_ratio_formula(self):
        # |S|^2 = 4, |N|^2 = 1: local SNR 6.02 dB > 0 -> 1
        import avse.dsp as dsp

        cfg = dsp.DEFAULT_CONFIG
        s = dsp.ComplexSpectrogram(np.full((1, 622), 2.0 + 0j), cfg, 1242)
        n = dsp.ComplexSpectrogram(np.full((1, 622), 1.0 + 0j), cfg, 1242)
        assert ideal_binary_mask(s, n).values.min() == 1.0

    def test_tie_at_criterion_is_zero(self):
        import avse.dsp as dsp

        cfg = dsp.DEFAULT_CONFIG
        s = dsp.ComplexSpectrogram(np.full((1, 622), 1.0 + 0j), cfg, 1242)
        assert ideal_binary_mask(s, s).values.max() == 0.0

    def test_lc_shifts_threshold(self, rng):
        clean_spec, noise_spec = _specs(rng)
        loose = ideal_binary_mask(clean_spec, noise_spec, MaskConfig(lc_db=-20.0))
        strict = ideal_binary_mask(clean_spec, noise_spec, MaskConfig(lc_db=20.0))
        assert loose.values.sum() > strict.values.sum()
        assert (loose.values >= strict.values).all()

    def test_dim_mismatch(self, rng):
        clean_spec, _ = _specs(rng, 16000)
        _, other = _specs(rng, 32000)
        with pytest.raises(ShapeError):
            ideal_binary_mask(clean_spec, other)


class TestApplyMask:
    def test_all_ones_is_identity(self, rng):
        spec, _ = _specs(rng)
        mask = SpectralMask(np.ones(spec.frames.shape), BINARY)
        out = apply_mask(spec, mask)
        np.testing.assert_array_equal(out.frames, spec.frames)

    def test_all_zeros_silences(self, rng):
        spec, _ = _specs(rng)
        mask = SpectralMask(np.zeros(spec.frames.shape), BINARY)
        out = apply_mask(spec, mask)
        np.testing.assert_array_equal(out.frames, 0)
        np.testing.assert_array_equal(istft(out).samples, 0)

    def test_magnitude_never_grows(self, rng):
        spec, _ = _specs(rng)
        for _ in range(5):
            mask = SpectralMask(rng.uniform(0, 1, spec.frames.shape), SOFT)
            out = apply_mask(spec, mask)
            assert (magnitude(out) <= magnitude(spec) + 1e-15).all()

    def test_phase_unchanged(self, rng):
        spec, _ = _specs(rng)
        mask = SpectralMask(rng.uniform(0.1, 1, spec.frames.shape), SOFT)
        out = apply_mask(spec, mask)
        np.testing.assert_allclose(np.angle(out.frames), np.angle(spec.frames), atol=1e-12)

    def test_energy_non_expansion(self, rng):
        spec, _ = _specs(rng)
        mask = SpectralMask(rng.uniform(0, 1, spec.frames.shape), SOFT)
        out = apply_mask(spec, mask)
        assert np.linalg.norm(out.frames) <= np.linalg.norm(spec.frames)


class TestResynthesize:
    def test_ones_mask_reproduces_input(self, rng):
        noisy = AudioBuffer(rng.uniform(-0.5, 0.5, 16000))
        spec = stft(noisy)
        mask = SpectralMask(np.ones(spec.frames.shape), BINARY)
        out, clipped = resynthesize(noisy, mask)
        assert len(out) == 16000
        assert np.abs(out.samples - noisy.samples).max() < 1e-6
        assert clipped == 0

    def test_zeros_mask_is_silence(self, rng):
        noisy = AudioBuffer(rng.uniform(-0.5, 0.5, 16000))
        spec = stft(noisy)
        mask = SpectralMask(np.zeros(spec.frames.shape), BINARY)
        out, _ = resynthesize(noisy, mask)
        np.testing.assert_array_equal(out.samples, 0)

    def test_frame_mismatch_rejected(self, rng):
        noisy = AudioBuffer(rng.uniform(-0.5, 0.5, 16000))
        mask = SpectralMask(np.ones((10, 622)), BINARY)
        with pytest.raises(ShapeError):
            resynthesize(noisy, mask)

    def test_output_clamped(self, rng):
        noisy = AudioBuffer(rng.uniform(-1.0, 1.0, 16000) * 1.0)
        spec = stft(noisy)
        mask = SpectralMask(rng.uniform(0, 1, spec.frames.shape), SOFT)
        out, clipped = resynthesize(noisy, mask)
        assert np.abs(out.samples).max() <= 1.0
        assert clipped >= 0
