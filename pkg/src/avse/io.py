"""File formats: PCM16 WAV, the LIPE embedding container and the AVSE
weight container. All three round-trip bit-exactly.

AVSE container: magic "AVSE", version u32, tensor count u32, then per
tensor: name length u16 + UTF-8 name, rank u8, dims u32 each, float32
little-endian row-major data.

LIPE container: magic "LIPE", version u32, frame count u32, dim u32
(must be 512), float32 little-endian row-major rows.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer
from .errors import FormatError
from .nn import NamedTensorStore, Tensor

AVSE_MAGIC = b"AVSE"
LIPE_MAGIC = b"LIPE"
CONTAINER_VERSION = 1
EMBEDDING_DIM = 512
PCM_SCALE = 32768.0


# ---------------------------------------------------------------------------
# WAV (RIFF PCM16 mono)


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM mono RIFF/WAVE file; samples scaled to [-1, 1)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated RIFF header ({len(raw)} bytes, need 12)")
    if raw[0:4] != b"RIFF":
        raise FormatError(f"{path}: bad RIFF magic at byte 0: {raw[0:4]!r}")
    if raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: bad WAVE tag at byte 8: {raw[8:12]!r}")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: chunk {cid!r} at byte {pos} claims {size} bytes, file has {len(body)}")
        if cid == b"fmt ":
            fmt = (body, pos + 8)
        elif cid == b"data":
            data = (body, pos + 8)
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: no fmt chunk")
    if data is None:
        raise FormatError(f"{path}: no data chunk")
    body, off = fmt
    if len(body) < 16:
        raise FormatError(f"{path}: fmt chunk at byte {off} too short ({len(body)} bytes)")
    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
    if audio_format != 1:
        raise FormatError(f"{path}: audio format {audio_format} at byte {off} is not PCM (1)")
    if channels != 1:
        raise FormatError(f"{path}: {channels} channels at byte {off + 2}; need mono")
    if bits != 16:
        raise FormatError(f"{path}: {bits}-bit samples at byte {off + 14}; need 16")
    payload, doff = data
    if len(payload) % 2:
        raise FormatError(f"{path}: data chunk at byte {doff} has odd byte length {len(payload)}")
    samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / PCM_SCALE
    return AudioBuffer(samples, rate)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write PCM16 mono; float samples clamped symmetrically then quantized."""
    clamped = np.clip(audio.samples, -1.0, (PCM_SCALE - 1) / PCM_SCALE)
    pcm = np.round(clamped * PCM_SCALE).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,
        1,
        audio.sample_rate,
        audio.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# LIPE embeddings


def read_embeddings(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated LIPE header ({len(raw)} bytes, need 16)")
    if raw[0:4] != LIPE_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: {raw[0:4]!r} (want {LIPE_MAGIC!r})")
    version, frames, dim = struct.unpack_from("<III", raw, 4)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported LIPE version {version} at byte 4")
    if dim != EMBEDDING_DIM:
        raise FormatError(f"{path}: dim must be {EMBEDDING_DIM}, got {dim} at byte 12")
    expected = 16 + 4 * frames * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {frames}x{dim}, file has {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=frames * dim, offset=16)
    return data.reshape(frames, dim).astype(np.float64)


def write_embeddings(path, embeddings: np.ndarray) -> None:
    emb = np.asarray(embeddings)
    if emb.ndim != 2 or emb.shape[1] != EMBEDDING_DIM:
        raise FormatError(f"embeddings must be [V,{EMBEDDING_DIM}], got {emb.shape}")
    head = LIPE_MAGIC + struct.pack("<III", CONTAINER_VERSION, emb.shape[0], emb.shape[1])
    Path(path).write_bytes(head + emb.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# AVSE weight container


def write_weights(path, store: NamedTensorStore) -> None:
    parts = [AVSE_MAGIC, struct.pack("<II", CONTAINER_VERSION, len(store))]
    for name, tensor in store.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        if arr.ndim > 255:
            raise FormatError(f"tensor {name!r} rank {arr.ndim} exceeds 255")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_weights(path) -> NamedTensorStore:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated AVSE header ({len(raw)} bytes, need 12)")
    if raw[0:4] != AVSE_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: {raw[0:4]!r} (want {AVSE_MAGIC!r})")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported AVSE version {version} at byte 4")
    store = NamedTensorStore()
    pos = 12
    for i in range(count):
        if pos + 2 > len(raw):
            raise FormatError(f"{path}: tensor {i}: truncated name length at byte {pos}")
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if pos + nlen + 1 > len(raw):
            raise FormatError(f"{path}: tensor {i}: truncated name/rank at byte {pos}")
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        rank = raw[pos]
        pos += 1
        if pos + 4 * rank > len(raw):
            raise FormatError(f"{path}: tensor {name!r}: truncated dims at byte {pos}")
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 4 * n
        if pos + nbytes > len(raw):
            raise FormatError(
                f"{path}: tensor {name!r}: expected {nbytes} data bytes at byte {pos}, file has {len(raw) - pos}"
            )
        data = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(dims)
        pos += nbytes
        store.add(name, Tensor(data.copy()))
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes after tensor {count - 1}")
    return store
