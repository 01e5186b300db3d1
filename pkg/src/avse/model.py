"""Mask-prediction network: audio CNN, visual upsampling, fusion, LSTM,
time-distributed dense stack; batch and streaming inference plus training.

The spectrogram is treated as a [freq, time, 1] image after per-bin log1p
compression. The five-layer CNN follows the fixed recipe (64/64/64/64/4
filters, 5x5 kernels then 1x1, stride 1, dilation 1): layer 1 is centered
along time ('same', +-2 frames) while layers 2..4 are causal along time
(window [t-4, t]), so the stack's total future context is exactly 2
frames. That bound is what the streaming engine reports as conv lookahead;
a sequence of predict_step calls reproduces the batch forward exactly.

Per frame the CNN output is flattened to 622*4 = 2488 features,
concatenated with the 512-dim lip embedding (each video frame repeated 3
times to match the 75 frames/s spectrogram rate, width 3000 total), then
fed to a unidirectional LSTM with 622 units and three shared-across-time
dense layers: 622 ReLU, 622 ReLU, 622 sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import AlignmentError, ShapeError, StreamProtocolError, UsageError
from .masking import SOFT, SpectralMask
from .nn import NamedTensorStore, Tensor
from .nn import tensor as T

N_BINS = 622
EMB_DIM = 512
VISUAL_REPEAT = 3
CONV_LOOKAHEAD_FRAMES = 2  # layer 1's centered 5-tap time window


@dataclass
class LipEmbeddingSequence:
    """V x 512 visual feature rows at 25 fps."""

    frames: np.ndarray
    fps: int = 25

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != EMB_DIM:
            raise ShapeError(f"embeddings must be [V,{EMB_DIM}], got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ShapeError("embeddings must be finite")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class ModelConfig:
    """Widths of the mask predictor; defaults are the full-scale network."""

    n_bins: int = N_BINS
    emb_dim: int = EMB_DIM
    conv_filters: tuple[int, ...] = (64, 64, 64, 64, 4)
    conv_kernels: tuple[tuple[int, int], ...] = ((5, 5), (5, 5), (5, 5), (5, 5), (1, 1))
    lstm_units: int = 622
    fc_units: int = 622
    audio_only: bool = False

    @property
    def fused_width(self) -> int:
        return self.n_bins * self.conv_filters[-1] + self.emb_dim

    @property
    def lookahead_frames(self) -> int:
        """Future frames the CNN sees: half of layer 1's centered time window."""
        return self.conv_kernels[0][1] // 2

    @classmethod
    def toy(cls, audio_only: bool = False) -> "ModelConfig":
        """Small widths for CI-speed training; same topology and I/O dims."""
        return cls(conv_filters=(2, 2, 2, 2, 1), lstm_units=48, fc_units=48, audio_only=audio_only)


def init_weights(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> NamedTensorStore:
    """Deterministic parameter store for the given widths."""
    rng = np.random.default_rng(seed)
    store = NamedTensorStore()
    cin = 1
    for i, (f, (kh, kw)) in enumerate(zip(cfg.conv_filters, cfg.conv_kernels), start=1):
        store.add(f"conv{i}.kernel", nn.kaiming_uniform(rng, (kh, kw, cin, f), fan_in=kh * kw * cin))
        store.add(f"conv{i}.bias", nn.zeros((f,)))
        cin = f
    w = cfg.fused_width
    h = cfg.lstm_units
    store.add("lstm.wx", nn.scaled_uniform(rng, (w, 4 * h), fan_in=w))
    store.add("lstm.wh", nn.scaled_uniform(rng, (h, 4 * h), fan_in=h))
    store.add("lstm.bias", nn.zeros((4 * h,)))
    store.add("fc1.weight", nn.kaiming_uniform(rng, (h, cfg.fc_units), fan_in=h))
    store.add("fc1.bias", nn.zeros((cfg.fc_units,)))
    store.add("fc2.weight", nn.kaiming_uniform(rng, (cfg.fc_units, cfg.fc_units), fan_in=cfg.fc_units))
    store.add("fc2.bias", nn.zeros((cfg.fc_units,)))
    store.add("out.weight", nn.kaiming_uniform(rng, (cfg.fc_units, cfg.n_bins), fan_in=cfg.fc_units))
    store.add("out.bias", nn.zeros((cfg.n_bins,)))
    if cfg.audio_only:
        store.add("visual_const", nn.scaled_uniform(rng, (cfg.emb_dim,), fan_in=cfg.emb_dim))
    return store


def config_from_store(store: NamedTensorStore) -> ModelConfig:
    """Recover the widths from parameter shapes (the container carries no metadata)."""
    filters = []
    kernels = []
    i = 1
    while f"conv{i}.kernel" in store:
        k = store[f"conv{i}.kernel"].data.shape
        kernels.append((k[0], k[1]))
        filters.append(k[3])
        i += 1
    n_bins = store["out.weight"].data.shape[1]
    lstm_units = store["lstm.wh"].data.shape[0]
    fc_units = store["fc1.weight"].data.shape[1]
    emb_dim = store["lstm.wx"].data.shape[0] - n_bins * filters[-1]
    return ModelConfig(
        n_bins=n_bins,
        emb_dim=emb_dim,
        conv_filters=tuple(filters),
        conv_kernels=tuple(kernels),
        lstm_units=lstm_units,
        fc_units=fc_units,
        audio_only="visual_const" in store,
    )


def upsample_visual(emb) -> np.ndarray:
    """Repeat each 25 fps embedding row 3 times to reach 75 rows/s."""
    frames = emb.frames if isinstance(emb, LipEmbeddingSequence) else np.asarray(emb, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"embeddings must be 2-D, got {frames.shape}")
    return np.repeat(frames, VISUAL_REPEAT, axis=0)


def _audio_feature_graph(mags: np.ndarray, weights: NamedTensorStore, cfg: ModelConfig) -> Tensor:
    """CNN over a [B,T,bins] batch; returns [B, T, n_bins * last_filters]."""
    if mags.ndim != 3 or mags.shape[2] != cfg.n_bins:
        raise ShapeError(f"magnitudes must be [B,T,{cfg.n_bins}], got {mags.shape}")
    bsz, t = mags.shape[0], mags.shape[1]
    x = Tensor(np.log1p(mags).transpose(0, 2, 1)[..., None])  # [B, freq, time, 1]
    n_layers = len(cfg.conv_filters)
    for i in range(1, n_layers + 1):
        k = weights[f"conv{i}.kernel"]
        b = weights[f"conv{i}.bias"]
        kw = k.data.shape[1]
        if i == 1 or kw == 1:
            x = nn.conv2d(x, k, b, padding="same")
        else:
            # causal time axis: left-pad by the full kernel span minus one
            x = T.pad2d(x, ((0, 0), (kw - 1, 0)), mode="constant")
            x = nn.conv2d(x, k, b, padding=("same", "valid"))
        if i < n_layers:
            x = T.relu(x)
    # [B, freq, time, C] -> [B, time, freq * C]
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (bsz, t, cfg.n_bins * cfg.conv_filters[-1]))


def audio_features(noisy_mag: np.ndarray, weights: NamedTensorStore, cfg: ModelConfig | None = None) -> np.ndarray:
    """Per-frame CNN features for one utterance, [T, 2488] at full scale."""
    cfg = cfg or config_from_store(weights)
    mag = np.asarray(noisy_mag, dtype=np.float64)
    if mag.ndim != 2:
        raise ShapeError(f"magnitudes must be [T,bins], got {mag.shape}")
    return _audio_feature_graph(mag[None], weights, cfg).data[0]


def _visual_rows(embs: np.ndarray | None, bsz: int, t: int, weights: NamedTensorStore, cfg: ModelConfig, dtype) -> Tensor:
    if cfg.audio_only:
        return T.add(Tensor(np.zeros((bsz, t, cfg.emb_dim), dtype=dtype)), weights["visual_const"])
    if embs is None:
        raise UsageError("audio-visual model needs embeddings (or use an audio-only config)")
    up = np.repeat(np.asarray(embs, dtype=dtype), VISUAL_REPEAT, axis=1)
    if up.shape[1] != t:
        raise AlignmentError(f"{embs.shape[1]} embeddings upsample to {up.shape[1]} rows but there are {t} frames")
    return Tensor(up)


def forward_batch(
    mags: np.ndarray,
    embs: np.ndarray | None,
    weights: NamedTensorStore,
    cfg: ModelConfig,
) -> Tensor:
    """Soft masks for a batch: [B,T,622] magnitudes (+ [B,V,512]) -> [B,T,622]."""
    bsz, t = mags.shape[0], mags.shape[1]
    af = _audio_feature_graph(mags, weights, cfg)
    vis = _visual_rows(embs, bsz, t, weights, cfg, mags.dtype)
    seq = T.concat([af, vis], axis=2)  # [B,T,W]
    y = nn.lstm_sequence(seq, weights["lstm.wx"], weights["lstm.wh"], weights["lstm.bias"])
    y = T.reshape(y, (t * bsz, cfg.lstm_units))
    y = T.relu(nn.dense(y, weights["fc1.weight"], weights["fc1.bias"]))
    y = T.relu(nn.dense(y, weights["fc2.weight"], weights["fc2.bias"]))
    y = T.sigmoid(nn.dense(y, weights["out.weight"], weights["out.bias"]))
    return T.transpose(T.reshape(y, (t, bsz, cfg.n_bins)), (1, 0, 2))


def predict_masks(
    noisy_mag: np.ndarray,
    emb,
    weights: NamedTensorStore,
    cfg: ModelConfig | None = None,
) -> SpectralMask:
    """Batch inference over one utterance; returns the soft mask."""
    cfg = cfg or config_from_store(weights)
    mag = np.asarray(noisy_mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != cfg.n_bins:
        raise ShapeError(f"magnitudes must be [T,{cfg.n_bins}], got {mag.shape}")
    emb_arr = None
    if not cfg.audio_only:
        frames = emb.frames if isinstance(emb, LipEmbeddingSequence) else np.asarray(emb, dtype=np.float64)
        if frames.shape[0] * VISUAL_REPEAT != mag.shape[0]:
            raise AlignmentError(
                f"{mag.shape[0]} audio frames need {mag.shape[0] / VISUAL_REPEAT:.1f} embeddings, got {frames.shape[0]}"
            )
        emb_arr = frames[None]
    out = forward_batch(mag[None], emb_arr, weights, cfg)
    return SpectralMask(np.clip(out.data[0], 0.0, 1.0), SOFT)


# ---------------------------------------------------------------------------
# Streaming inference


class StreamState:
    """Incremental-forward state: conv ring buffers, LSTM state, embedding queue."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        n_layers = len(cfg.conv_filters)
        chans = (1,) + cfg.conv_filters[:-1]
        widths = [k[1] for k in cfg.conv_kernels]
        # buffers[i] holds the last widths[i] input columns of conv layer i+1
        self.buffers = [
            [np.zeros((cfg.n_bins, chans[i])) for _ in range(widths[i])] for i in range(n_layers)
        ]
        self.h = np.zeros(cfg.lstm_units)
        self.c = np.zeros(cfg.lstm_units)
        self.emb_queue: list[np.ndarray] = []
        self.frames_in = 0
        self.cols_in = 0  # frames plus flush padding columns
        self.rows_out = 0
        self.flushed = False


def _conv_column(window: list[np.ndarray], kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """One output column of a conv layer given its full time window."""
    kh, kw, cin, cout = kernel.shape
    n_bins = window[0].shape[0]
    pad = kh // 2
    out = np.tile(bias, (n_bins, 1))
    for dj in range(kw):
        col = window[dj]
        padded = np.pad(col, ((pad, kh - 1 - pad), (0, 0)))
        for di in range(kh):
            out += padded[di : di + n_bins] @ kernel[di, dj]
    return out


class MaskStreamer:
    """predict_step realization: one spectral frame in, one mask row out.

    The first conv layer looks 2 frames ahead, so output row t emerges when
    frame t+2 arrives; ``flush`` pushes the trailing zero padding and yields
    the final 2 rows. Each embedding serves exactly 3 consecutive rows.
    """

    def __init__(self, weights: NamedTensorStore, cfg: ModelConfig | None = None):
        self.weights = weights
        self.cfg = cfg or config_from_store(weights)
        self.state = StreamState(self.cfg)
        self._kernels = [
            (weights[f"conv{i}.kernel"].data, weights[f"conv{i}.bias"].data)
            for i in range(1, len(self.cfg.conv_filters) + 1)
        ]
        self._wx = weights["lstm.wx"].data
        self._wh = weights["lstm.wh"].data
        self._lb = weights["lstm.bias"].data

    def push_embedding(self, row: np.ndarray) -> None:
        row = np.asarray(row, dtype=np.float64).reshape(-1)
        if row.size != self.cfg.emb_dim:
            raise ShapeError(f"embedding row must have {self.cfg.emb_dim} dims, got {row.size}")
        self.state.emb_queue.append(row)

    def push_frame(self, frame_mag: np.ndarray) -> np.ndarray | None:
        """Feed one magnitude frame; returns a mask row once primed."""
        if self.state.flushed:
            raise StreamProtocolError("stream already flushed")
        frame_mag = np.asarray(frame_mag, dtype=np.float64).reshape(-1)
        if frame_mag.size != self.cfg.n_bins:
            raise ShapeError(f"frame must have {self.cfg.n_bins} bins, got {frame_mag.size}")
        col = np.log1p(frame_mag)[:, None]
        self.state.frames_in += 1
        return self._advance(col)

    def flush(self) -> list[np.ndarray]:
        """Emit the trailing rows held back by the conv lookahead."""
        if self.state.flushed:
            return []
        self.state.flushed = True
        rows = []
        for _ in range(self.cfg.lookahead_frames):
            if self.state.rows_out >= self.state.frames_in:
                break
            row = self._advance(np.zeros((self.cfg.n_bins, 1)))
            if row is not None:
                rows.append(row)
        return rows

    def _advance(self, in_col: np.ndarray) -> np.ndarray | None:
        st = self.state
        st.cols_in += 1
        buf0 = st.buffers[0]
        buf0.pop(0)
        buf0.append(in_col)
        # row j emerges once column j + lookahead has been pushed
        if st.cols_in <= self.cfg.lookahead_frames:
            return None
        col = _conv_column(buf0, *self._kernels[0])
        col = np.maximum(col, 0.0)
        for i in range(1, len(self._kernels)):
            buf = st.buffers[i]
            buf.pop(0)
            buf.append(col)
            col = _conv_column(buf, *self._kernels[i])
            if i < len(self._kernels) - 1:
                col = np.maximum(col, 0.0)
        return self._fuse_and_step(col)

    def _fuse_and_step(self, feat_col: np.ndarray) -> np.ndarray:
        st = self.state
        row_idx = st.rows_out
        if self.cfg.audio_only:
            vis = self.weights["visual_const"].data
        else:
            emb_idx = row_idx // VISUAL_REPEAT
            if emb_idx >= len(st.emb_queue):
                raise StreamProtocolError(f"no embedding available for mask row {row_idx}")
            vis = st.emb_queue[emb_idx]
        fused = np.concatenate([feat_col.reshape(-1), vis])
        gates = fused @ self._wx + st.h @ self._wh + self._lb
        u = self.cfg.lstm_units
        i = _np_sigmoid(gates[:u])
        f = _np_sigmoid(gates[u : 2 * u])
        g = np.tanh(gates[2 * u : 3 * u])
        o = _np_sigmoid(gates[3 * u :])
        st.c = f * st.c + i * g
        st.h = o * np.tanh(st.c)
        y = np.maximum(st.h @ self.weights["fc1.weight"].data + self.weights["fc1.bias"].data, 0.0)
        y = np.maximum(y @ self.weights["fc2.weight"].data + self.weights["fc2.bias"].data, 0.0)
        row = _np_sigmoid(y @ self.weights["out.weight"].data + self.weights["out.bias"].data)
        st.rows_out += 1
        return row


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def predict_step(frame_mag: np.ndarray, new_embedding, streamer: MaskStreamer) -> np.ndarray | None:
    """Functional wrapper over :class:`MaskStreamer` for one hop."""
    if new_embedding is not None:
        streamer.push_embedding(new_embedding)
    return streamer.push_frame(frame_mag)


# ---------------------------------------------------------------------------
# Training


@dataclass
class EpochStats:
    epoch: int
    train_bce: float
    val_bce: float
    lr: float


@dataclass
class TrainResult:
    weights: NamedTensorStore
    history: list[EpochStats] = field(default_factory=list)


class PlateauScheduler:
    """Halve the lr after 3 consecutive epochs without a new best val loss."""

    def __init__(self, lr: float, patience: int = 3):
        self.lr = lr
        self.patience = patience
        self.best = np.inf
        self.streak = 0

    def update(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.streak = 0
        else:
            self.streak += 1
            if self.streak >= self.patience:
                self.lr /= 2.0
                self.streak = 0
        return self.lr


def lr_schedule(val_losses: list[float], current_lr: float, patience: int = 3) -> float:
    """Replay the plateau rule; halve ``current_lr`` iff the newest epoch triggers."""
    if not val_losses:
        raise UsageError("lr_schedule needs at least one validation loss")
    best = np.inf
    streak = 0
    triggered = False
    for loss in val_losses:
        triggered = False
        if loss < best:
            best = loss
            streak = 0
        else:
            streak += 1
            if streak >= patience:
                triggered = True
                streak = 0
    return current_lr / 2.0 if triggered else current_lr


def _dataset_arrays(items, dtype=np.float64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mags = np.stack([np.asarray(it.noisy_mag, dtype=dtype) for it in items])
    ibms = np.stack([np.asarray(it.ibm, dtype=dtype) for it in items])
    embs = np.stack([np.asarray(it.embeddings, dtype=dtype) for it in items])
    return mags, ibms, embs


def _batch_bce(weights, cfg, mags, ibms, embs) -> Tensor:
    pred = forward_batch(mags, None if cfg.audio_only else embs, weights, cfg)
    return nn.bce(pred, Tensor(ibms))


def train(
    dataset,
    epochs: int = 50,
    lr: float = 3e-4,
    cfg: ModelConfig | None = None,
    seed: int = 0,
    batch_size: int = 1,
    val_fraction: float = 0.25,
    dtype=np.float32,
    log=None,
) -> TrainResult:
    """BCE training of the soft mask against the oracle IBM.

    Deterministic given (dataset, seed): weight init, the train/val split
    and per-epoch shuffling all derive from ``seed``. Training runs in
    float32 by default (the container format is float32 anyway); pass
    ``dtype=np.float64`` for full-precision runs.
    """
    if not dataset:
        raise UsageError("empty dataset")
    cfg = cfg or ModelConfig()
    mags, ibms, embs = _dataset_arrays(dataset, dtype=dtype)
    n = len(dataset)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    val_idx = order[:n_val]
    train_idx = order[n_val:] if n_val < n else order
    weights = init_weights(cfg, seed=seed)
    for p in weights.tensors():
        p.data = p.data.astype(dtype)
    params = weights
    state = nn.AdamState(params, lr=lr)
    sched = PlateauScheduler(lr)
    history: list[EpochStats] = []

    for epoch in range(1, epochs + 1):
        state.lr = sched.lr
        perm = rng.permutation(len(train_idx))
        losses = []
        for a in range(0, len(train_idx), batch_size):
            idx = train_idx[perm[a : a + batch_size]]
            loss = _batch_bce(weights, cfg, mags[idx], ibms[idx], embs[idx])
            grads_list = nn.gradients(loss, params.tensors())
            grads = NamedTensorStore()
            for name, g in zip(params.names(), grads_list):
                grads.add(name, Tensor(g))
            nn.adam_step(params, grads, state)
            losses.append(loss.item())
        if len(val_idx):
            num = den = 0.0
            val_bs = max(batch_size, 8)  # forward-only, so batch freely
            for a in range(0, len(val_idx), val_bs):
                idx = val_idx[a : a + val_bs]
                num += _batch_bce(weights, cfg, mags[idx], ibms[idx], embs[idx]).item() * len(idx)
                den += len(idx)
            val_bce = num / den
        else:
            val_bce = float(np.mean(losses))
        row = EpochStats(epoch, float(np.mean(losses)), val_bce, state.lr)
        history.append(row)
        if log is not None:
            log(f"{row.epoch}\t{row.train_bce:.6f}\t{row.val_bce:.6f}\t{row.lr:.6g}")
        sched.update(val_bce)
    return TrainResult(weights, history)
