"""Objective evaluation: SI-SDR, STOI and measured-SNR utilities.

STOI follows the classic 2011 definition: both signals resampled to
10 kHz, silent frames removed against a 40 dB dynamic range, 256-sample
Hann frames with 50% overlap zero-padded to a 512-point FFT, 15
one-third-octave bands starting at 150 Hz, and normalized, clipped
correlations over 30-frame (384 ms) segments, averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dsp import AudioBuffer
from .errors import DegenerateInputError, ShapeError

SI_SDR_CAP_DB = 100.0
_SILENT = 1e-10

STOI_FS = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_FFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEG = 30  # frames per short-time segment
STOI_DYN_RANGE = 40.0
STOI_CLIP_DB = -15.0


@dataclass
class EvalResult:
    si_sdr_db: float
    stoi: float
    measured_snr_db: float


def si_sdr(estimate: AudioBuffer, reference: AudioBuffer) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is scaled by the least-squares projection coefficient;
    the score is the energy ratio of that projection to the residual,
    capped at +-100 dB near the degenerate ends.
    """
    e = np.asarray(estimate.samples if isinstance(estimate, AudioBuffer) else estimate, dtype=np.float64)
    r = np.asarray(reference.samples if isinstance(reference, AudioBuffer) else reference, dtype=np.float64)
    if e.size != r.size or e.size < 1:
        raise ShapeError(f"si_sdr needs equal nonempty lengths, got {e.size} and {r.size}")
    ref_energy = float(r @ r)
    if ref_energy <= _SILENT * r.size:
        raise DegenerateInputError("silent reference")
    alpha = float(e @ r) / ref_energy
    target = alpha * r
    resid = e - target
    et = float(target @ target)
    er = float(resid @ resid)
    if er < 1e-10 * et:
        return SI_SDR_CAP_DB
    if et < 1e-10 * er:
        return -SI_SDR_CAP_DB
    return 10.0 * math.log10(et / er)


def measured_snr(clean: AudioBuffer, scaled_noise: AudioBuffer) -> float:
    """Whole-utterance RMS ratio in dB; the mixer's companion check."""
    if len(clean) != len(scaled_noise):
        raise ShapeError("clean and noise lengths differ")
    rc, rn = clean.rms(), scaled_noise.rms()
    if rc <= _SILENT or rn <= _SILENT:
        raise DegenerateInputError("silent input to measured_snr")
    return 20.0 * math.log10(rc / rn)


# ---------------------------------------------------------------------------
# STOI


def _sinc_resample(x: np.ndarray, fs_in: int, fs_out: int) -> np.ndarray:
    """Polyphase windowed-sinc resampler (private to this module)."""
    if fs_in == fs_out:
        return x.copy()
    frac = Fraction(fs_out, fs_in)
    up, down = frac.numerator, frac.denominator
    m = max(up, down)
    half = 10 * m  # zero crossings of the prototype each side
    n = np.arange(-half, half + 1)
    taps = np.sinc(n / m) / m
    taps *= np.hanning(taps.size)
    taps *= up / taps.sum()  # passband gain `up` compensates the zero-stuffing
    upsampled = np.zeros(x.size * up)
    upsampled[::up] = x
    y = np.convolve(upsampled, taps)[half : half + upsampled.size]
    return y[::down]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames whose reference energy is > dyn_range dB below the peak."""
    w = np.hanning(STOI_FRAME + 2)[1:-1]
    n_frames = (x.size - STOI_FRAME) // STOI_HOP + 1
    if n_frames < 1:
        raise DegenerateInputError("signal shorter than one analysis frame")
    starts = np.arange(n_frames) * STOI_HOP
    xf = x[starts[:, None] + np.arange(STOI_FRAME)] * w
    yf = y[starts[:, None] + np.arange(STOI_FRAME)] * w
    energies = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + 1e-300)
    keep = energies > energies.max() - dyn_range
    xf, yf = xf[keep], yf[keep]
    out_len = (xf.shape[0] - 1) * STOI_HOP + STOI_FRAME if xf.shape[0] else 0
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(xf.shape[0]):
        a = i * STOI_HOP
        xs[a : a + STOI_FRAME] += xf[i]
        ys[a : a + STOI_FRAME] += yf[i]
    return xs, ys


def _third_octave_matrix(fs: int, n_fft: int) -> np.ndarray:
    """Boolean band matrix mapping FFT bins to 15 one-third-octave bands."""
    f = np.linspace(0, fs / 2, n_fft // 2 + 1)
    k = np.arange(STOI_BANDS)
    cf = STOI_MIN_FREQ * 2.0 ** (k / 3.0)
    lo = cf * 2.0 ** (-1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    h = np.zeros((STOI_BANDS, f.size))
    for j in range(STOI_BANDS):
        a = int(np.argmin(np.abs(f - lo[j])))
        b = int(np.argmin(np.abs(f - hi[j])))
        h[j, a:b] = 1.0
    return h


def _band_spectrogram(x: np.ndarray, band: np.ndarray) -> np.ndarray:
    w = np.hanning(STOI_FRAME + 2)[1:-1]
    n_frames = (x.size - STOI_FRAME) // STOI_HOP + 1
    starts = np.arange(n_frames) * STOI_HOP
    frames = x[starts[:, None] + np.arange(STOI_FRAME)] * w
    spec = np.abs(np.fft.rfft(frames, n=STOI_FFT, axis=1)) ** 2
    return np.sqrt(spec @ band.T)  # [frames, bands]


def stoi(estimate: AudioBuffer, reference: AudioBuffer, sample_rate: int | None = None) -> float:
    """Short-time objective intelligibility of ``estimate`` against ``reference``."""
    e = estimate.samples if isinstance(estimate, AudioBuffer) else np.asarray(estimate, dtype=np.float64)
    r = reference.samples if isinstance(reference, AudioBuffer) else np.asarray(reference, dtype=np.float64)
    if sample_rate is None:
        sample_rate = reference.sample_rate if isinstance(reference, AudioBuffer) else STOI_FS
    if e.size != r.size:
        raise ShapeError("stoi needs equal lengths")
    if sample_rate != STOI_FS:
        e = _sinc_resample(e, sample_rate, STOI_FS)
        r = _sinc_resample(r, sample_rate, STOI_FS)
    r_sil, e_sil = _remove_silent_frames(r, e, STOI_DYN_RANGE)
    n_frames = (r_sil.size - STOI_FRAME) // STOI_HOP + 1 if r_sil.size >= STOI_FRAME else 0
    if n_frames < STOI_SEG:
        raise DegenerateInputError(
            f"only {max(n_frames, 0)} frames remain after silence removal; need >= {STOI_SEG}"
        )
    band = _third_octave_matrix(STOI_FS, STOI_FFT)
    xb = _band_spectrogram(r_sil, band)  # clean
    yb = _band_spectrogram(e_sil, band)  # degraded
    # beta = -15 dB is the lower SDR bound: cap factor 1 + 10^(15/20)
    clip_gain = 10.0 ** (-STOI_CLIP_DB / 20.0)
    scores = []
    for m in range(STOI_SEG, xb.shape[0] + 1):
        xs = xb[m - STOI_SEG : m]  # [30, 15]
        ys = yb[m - STOI_SEG : m]
        alpha = np.sqrt((xs**2).sum(axis=0) / ((ys**2).sum(axis=0) + 1e-300))
        ys_n = np.minimum(ys * alpha, xs * (1.0 + clip_gain))
        xc = xs - xs.mean(axis=0)
        yc = ys_n - ys_n.mean(axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0) + 1e-300
        scores.append((xc * yc).sum(axis=0) / denom)
    return float(np.mean(scores))
