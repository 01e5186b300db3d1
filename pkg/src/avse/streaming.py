"""Hop-synchronous streaming engine and the per-stage latency profiler.

One pipeline step per full 213-sample hop: window + FFT the newest frame,
predict one mask row (2 frames behind the input because of the CNN
lookahead), apply it to the saved noisy frame and overlap-add. Output
samples become final exactly (frame_len - hop) + 2*hop = 1455 samples
behind the ingested audio; `close()` reflect-pads the tail so the stream
reproduces the offline resynthesis sample for sample.

Each 25 fps embedding row serves exactly 3 consecutive hops. If the audio
runs ahead of the visuals the stream stalls (buffers audio, emits nothing)
rather than silently reusing a stale embedding; `freewheel=True` opts into
last-row reuse for demos.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dsp import DEFAULT_CONFIG, AnalysisConfig, AudioBuffer, PIPELINE_SAMPLE_RATE
from .errors import StreamProtocolError, UsageError
from .model import MaskStreamer, ModelConfig, config_from_store
from .nn import NamedTensorStore

PAPER_LATENCY_MS = {"window shift": 12.0, "stft": 0.5, "istft": 0.5, "model": 7.0, "total": 20.0}


def algorithmic_delay_samples(cfg: AnalysisConfig = DEFAULT_CONFIG, lookahead_frames: int = 2) -> int:
    """Window-bound output delay: (frame_len - hop) + lookahead * hop."""
    return (cfg.frame_len - cfg.hop) + lookahead_frames * cfg.hop


class EnhancerStream:
    """Streaming enhancement of one audio/embedding pair of clocks."""

    def __init__(
        self,
        weights: NamedTensorStore,
        model_cfg: ModelConfig | None = None,
        cfg: AnalysisConfig = DEFAULT_CONFIG,
        freewheel: bool = False,
    ):
        self.cfg = cfg
        self.model_cfg = model_cfg or config_from_store(weights)
        self.streamer = MaskStreamer(weights, self.model_cfg)
        self.freewheel = freewheel
        self.delay_samples = algorithmic_delay_samples(cfg, self.model_cfg.lookahead_frames)
        self._audio = np.zeros(0)
        self._pushed = 0
        self._emb_count = 0
        self._frames_done = 0
        self._spec_frames: list[np.ndarray] = []  # complex frames awaiting masks
        self._num = np.zeros(cfg.frame_len)
        self._den = np.zeros(cfg.frame_len)
        self._ola_base = 0  # sample index of _num[0]
        self._emitted = 0
        self._closed = False
        self._starved = False
        self._wsq = cfg.window**2
        self.clip_count = 0

    @property
    def starved(self) -> bool:
        """True when audio is waiting on a missing embedding."""
        return self._starved

    @property
    def hops_completed(self) -> int:
        return self.streamer.state.rows_out

    def push_embedding(self, row: np.ndarray, index: int | None = None) -> None:
        """Append the next 25 fps embedding row (strictly in order)."""
        if self._closed:
            raise StreamProtocolError("push_embedding on closed stream")
        if index is not None and index != self._emb_count:
            raise StreamProtocolError(f"out-of-order embedding: expected index {self._emb_count}, got {index}")
        self.streamer.push_embedding(row)
        self._emb_count += 1
        self._process_ready()

    def push_samples(self, samples: np.ndarray) -> None:
        """Buffer audio; every completed 213-sample hop triggers one step."""
        if self._closed:
            raise StreamProtocolError("push_samples on closed stream")
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        self._audio = np.concatenate([self._audio, samples])
        self._pushed += samples.size
        self._process_ready()

    def _frame_ready(self, t: int) -> bool:
        return t * self.cfg.hop + self.cfg.frame_len <= self._audio.size

    def _embedding_ready(self, row_idx: int) -> bool:
        if self.model_cfg.audio_only:
            return True
        need = row_idx // 3
        if need < len(self.streamer.state.emb_queue):
            return True
        if self.freewheel and self.streamer.state.emb_queue:
            self.streamer.state.emb_queue.append(self.streamer.state.emb_queue[-1])
            return True
        return False

    def _process_ready(self) -> None:
        while self._frame_ready(self._frames_done):
            # the frame about to be *emitted* (2 behind) needs its embedding
            next_row = self.streamer.state.rows_out
            will_emit = self._frames_done >= self.model_cfg.lookahead_frames
            if will_emit and not self._embedding_ready(next_row):
                self._starved = True
                return
            self._starved = False
            self._step_one_frame()

    def _step_one_frame(self) -> None:
        t = self._frames_done
        a = t * self.cfg.hop
        frame = self._audio[a : a + self.cfg.frame_len]
        spec = np.fft.rfft(frame * self.cfg.window)
        self._spec_frames.append(spec)
        self._frames_done += 1
        row = self.streamer.push_frame(np.abs(spec))
        if row is not None:
            self._overlap_add(row, self.streamer.state.rows_out - 1)

    def _overlap_add(self, mask_row: np.ndarray, row_idx: int) -> None:
        spec = self._spec_frames.pop(0)
        frame = np.fft.irfft(spec * mask_row, n=self.cfg.frame_len) * self.cfg.window
        a = row_idx * self.cfg.hop
        off = a - self._ola_base
        need = off + self.cfg.frame_len - self._num.size
        if need > 0:
            self._num = np.concatenate([self._num, np.zeros(need)])
            self._den = np.concatenate([self._den, np.zeros(need)])
        self._num[off : off + self.cfg.frame_len] += frame
        self._den[off : off + self.cfg.frame_len] += self._wsq

    def available(self) -> int:
        """Samples of final enhanced output not yet pulled.

        A sample is final once its last covering frame has been
        overlap-added, so availability follows the processed row count;
        with the visual clock keeping up that is exactly the ingested
        sample count minus the 1455-sample algorithmic delay.
        """
        rows = self.streamer.state.rows_out
        total = self._pushed if self._closed else min(rows * self.cfg.hop, self._pushed)
        return max(0, total - self._emitted)

    def pull_enhanced(self) -> np.ndarray:
        """Return every final sample produced since the previous pull."""
        if self._closed:
            raise UsageError("pull on closed stream (close() returned the tail)")
        return self._drain(self.available())

    def _drain(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0)
        off = self._emitted - self._ola_base
        seg_num = self._num[off : off + n]
        seg_den = self._den[off : off + n]
        out = seg_num / np.where(seg_den > 0, seg_den, 1.0)
        # same clamp policy as offline resynthesis
        self.clip_count += int(np.count_nonzero(np.abs(out) > 1.0))
        out = np.clip(out, -1.0, 1.0)
        keep = off + n
        self._num = self._num[keep:]
        self._den = self._den[keep:]
        self._ola_base += keep
        self._emitted += n
        return out

    def close(self) -> np.ndarray:
        """Finish the tail (reflect-pad to the offline frame count, flush the
        conv lookahead) and return all remaining enhanced samples."""
        if self._closed:
            raise StreamProtocolError("stream already closed")
        total_frames = self.cfg.frame_count(self._pushed) if self._pushed else 0
        if total_frames:
            needed = (total_frames - 1) * self.cfg.hop + self.cfg.frame_len
            if needed > self._audio.size:
                x = self._audio
                if x.size == 1:
                    x = np.concatenate([x, np.full(needed - 1, x[0])])
                else:
                    while x.size < needed:
                        take = min(needed - x.size, x.size - 1)
                        x = np.concatenate([x, x[-2 : -2 - take : -1]])
                self._audio = x
            while self._frames_done < total_frames:
                next_row = self.streamer.state.rows_out
                will_emit = self._frames_done >= self.model_cfg.lookahead_frames
                if will_emit and not self._embedding_ready(next_row):
                    raise StreamProtocolError(f"close() starved: no embedding for mask row {next_row}")
                self._step_one_frame()
            first_flush_row = self.streamer.state.rows_out
            for r in range(first_flush_row, total_frames):
                if not self._embedding_ready(r):
                    raise StreamProtocolError(f"close() starved: no embedding for mask row {r}")
            for k, row in enumerate(self.streamer.flush()):
                self._overlap_add(row, first_flush_row + k)
        self._closed = True
        return self._drain(max(0, self._pushed - self._emitted))


# ---------------------------------------------------------------------------
# Latency profiling


@dataclass
class StageStats:
    median_ms: float
    p95_ms: float
    max_ms: float

    @classmethod
    def from_samples(cls, samples_ms: list[float]) -> "StageStats":
        arr = np.asarray(samples_ms)
        return cls(float(np.median(arr)), float(np.percentile(arr, 95)), float(arr.max()))


@dataclass
class LatencyReport:
    """Measured per-hop stage timings next to the published figures."""

    hop_ms: float
    stft: StageStats
    model: StageStats
    istft: StageStats
    algorithmic_delay_samples: int
    n_hops: int
    paper_ms: dict = field(default_factory=lambda: dict(PAPER_LATENCY_MS))

    @property
    def compute_ms(self) -> float:
        return self.stft.median_ms + self.model.median_ms + self.istft.median_ms

    @property
    def hop_bound_latency_ms(self) -> float:
        """Hop duration plus median per-hop compute (the paper's accounting)."""
        return self.hop_ms + self.compute_ms

    @property
    def algorithmic_delay_ms(self) -> float:
        return self.algorithmic_delay_samples / PIPELINE_SAMPLE_RATE * 1000.0

    @property
    def real_time_factor(self) -> float:
        return self.compute_ms / self.hop_ms

    def format_table(self) -> str:
        rows = [
            ("window shift", self.hop_ms, None, None, self.paper_ms["window shift"]),
            ("stft", self.stft.median_ms, self.stft.p95_ms, self.stft.max_ms, self.paper_ms["stft"]),
            ("model", self.model.median_ms, self.model.p95_ms, self.model.max_ms, self.paper_ms["model"]),
            ("istft", self.istft.median_ms, self.istft.p95_ms, self.istft.max_ms, self.paper_ms["istft"]),
            ("total (hop-bound)", self.hop_bound_latency_ms, None, None, self.paper_ms["total"]),
        ]
        lines = [
            f"{'stage':<18} {'median ms':>10} {'p95 ms':>10} {'max ms':>10} {'paper ms':>10}",
            "-" * 62,
        ]
        for name, med, p95, mx, paper in rows:
            p95s = f"{p95:10.3f}" if p95 is not None else f"{'-':>10}"
            mxs = f"{mx:10.3f}" if mx is not None else f"{'-':>10}"
            lines.append(f"{name:<18} {med:10.3f} {p95s} {mxs} {paper:10.1f}")
        lines.append("-" * 62)
        lines.append(
            f"algorithmic delay: {self.algorithmic_delay_samples} samples"
            f" = {self.algorithmic_delay_ms:.1f} ms (window - hop + 2 hops of conv lookahead)"
        )
        lines.append(f"real-time factor: {self.real_time_factor:.3f} over {self.n_hops} hops")
        return "\n".join(lines)

    def to_records(self) -> list[str]:
        recs = [
            f"stage=hop\tmedian_ms={self.hop_ms:.4f}\tpaper_ms={self.paper_ms['window shift']}",
            f"stage=stft\tmedian_ms={self.stft.median_ms:.4f}\tp95_ms={self.stft.p95_ms:.4f}\tmax_ms={self.stft.max_ms:.4f}\tpaper_ms={self.paper_ms['stft']}",
            f"stage=model\tmedian_ms={self.model.median_ms:.4f}\tp95_ms={self.model.p95_ms:.4f}\tmax_ms={self.model.max_ms:.4f}\tpaper_ms={self.paper_ms['model']}",
            f"stage=istft\tmedian_ms={self.istft.median_ms:.4f}\tp95_ms={self.istft.p95_ms:.4f}\tmax_ms={self.istft.max_ms:.4f}\tpaper_ms={self.paper_ms['istft']}",
            f"stage=total\tmedian_ms={self.hop_bound_latency_ms:.4f}\tpaper_ms={self.paper_ms['total']}",
            f"algorithmic_delay_samples={self.algorithmic_delay_samples}",
            f"real_time_factor={self.real_time_factor:.4f}",
        ]
        return recs


def profile(
    weights: NamedTensorStore,
    seconds: float = 10.0,
    cfg: AnalysisConfig = DEFAULT_CONFIG,
    seed: int = 0,
    warmup_hops: int = 50,
) -> LatencyReport:
    """Time each pipeline stage per hop on seeded noise input."""
    if seconds < 5:
        raise UsageError("profile needs at least 5 seconds of input (warmup excluded)")
    model_cfg = config_from_store(weights)
    streamer = MaskStreamer(weights, model_cfg)
    rng = np.random.default_rng(seed)
    n_samples = int(seconds * PIPELINE_SAMPLE_RATE)
    audio = rng.uniform(-0.5, 0.5, n_samples)
    n_hops = n_samples // cfg.hop
    emb_rng = np.random.default_rng(seed + 1)
    wsq = cfg.window**2
    num = np.zeros((n_hops - 1) * cfg.hop + cfg.frame_len)
    den = np.zeros_like(num)
    stft_ms: list[float] = []
    model_ms: list[float] = []
    istft_ms: list[float] = []
    spec_q: list[np.ndarray] = []
    emitted = 0
    for t in range(n_hops):
        if not model_cfg.audio_only and t % 3 == 0:
            streamer.push_embedding(emb_rng.standard_normal(model_cfg.emb_dim))
        a = t * cfg.hop
        frame = audio[a : a + cfg.frame_len]
        if frame.size < cfg.frame_len:
            frame = np.pad(frame, (0, cfg.frame_len - frame.size))
        t0 = time.perf_counter()
        spec = np.fft.rfft(frame * cfg.window)
        t1 = time.perf_counter()
        spec_q.append(spec)
        mag = np.abs(spec)
        row = streamer.push_frame(mag)
        t2 = time.perf_counter()
        istft_t = 0.0
        if row is not None:
            sp = spec_q.pop(0)
            t3 = time.perf_counter()
            out = np.fft.irfft(sp * row, n=cfg.frame_len) * cfg.window
            j = emitted * cfg.hop
            num[j : j + cfg.frame_len] += out
            den[j : j + cfg.frame_len] += wsq
            emitted += 1
            istft_t = time.perf_counter() - t3
        if t >= warmup_hops:
            stft_ms.append((t1 - t0) * 1000.0)
            model_ms.append((t2 - t1) * 1000.0)
            istft_ms.append(istft_t * 1000.0)
    return LatencyReport(
        hop_ms=cfg.hop / PIPELINE_SAMPLE_RATE * 1000.0,
        stft=StageStats.from_samples(stft_ms),
        model=StageStats.from_samples(model_ms),
        istft=StageStats.from_samples(istft_ms),
        algorithmic_delay_samples=algorithmic_delay_samples(cfg, model_cfg.lookahead_frames),
        n_hops=len(stft_ms),
    )


def enhance_offline_streaming(
    noisy: AudioBuffer,
    embeddings: np.ndarray | None,
    weights: NamedTensorStore,
    chunk: int = 4800,
    freewheel: bool = False,
) -> AudioBuffer:
    """Run the streaming engine over a whole buffer (reference harness)."""
    stream = EnhancerStream(weights, freewheel=freewheel)
    out = []
    n = len(noisy)
    emb_idx = 0
    n_emb = 0 if embeddings is None else embeddings.shape[0]
    pos = 0
    while pos < n:
        end = min(pos + chunk, n)
        # keep the visual clock slightly ahead of the audio clock
        while emb_idx < n_emb and emb_idx * 640 < end + 1280:
            stream.push_embedding(embeddings[emb_idx], index=emb_idx)
            emb_idx += 1
        stream.push_samples(noisy.samples[pos:end])
        out.append(stream.pull_enhanced())
        pos = end
    while emb_idx < n_emb:
        stream.push_embedding(embeddings[emb_idx], index=emb_idx)
        emb_idx += 1
    out.append(stream.close())
    return AudioBuffer(np.concatenate(out) if out else np.zeros(0), noisy.sample_rate)
