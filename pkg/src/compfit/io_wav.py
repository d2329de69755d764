"""WAV loading/saving, pair validation and overlap chunking.

Mono RIFF/WAVE only: PCM16, PCM24 and float32 encodings. Samples are
normalised to +/-1.0 full scale and held as float64 (double precision is
required downstream for Hessian conditioning and finite-difference
checks). No resampling: mismatched rates are an error.
"""
import struct
from dataclasses import dataclass, field

import numpy as np


class WavFormatError(ValueError):
    """Unsupported or malformed WAV content."""


@dataclass
class AudioBuffer:
    """A mono signal: float64 samples at +/-1.0 full scale plus its rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.shape[0] < 1:
            raise ValueError("AudioBuffer needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioBuffer samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be a positive integer")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return self.samples.shape[0] / self.sample_rate


def load_wav(path):
    """Read a mono PCM16/PCM24/float32 WAV file into an AudioBuffer."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if channels != 1:
        raise WavFormatError(f"{path}: multichannel input ({channels} channels), mono required")

    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 1 and bits == 24:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % 3], dtype=np.uint8)
        raw = raw.reshape(-1, 3)
        vals = (
            raw[:, 0].astype(np.int32)
            | (raw[:, 1].astype(np.int32) << 8)
            | (raw[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        samples = vals.astype(np.float64) / 8388608.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported encoding (format tag {audio_format}, {bits}-bit); "
            "PCM16, PCM24 or float32 required"
        )
    return AudioBuffer(samples, sample_rate)


def save_wav(path, buf, encoding="float32"):
    """Write an AudioBuffer as a mono WAV file.

    float32 round-trips losslessly through load_wav (up to the initial
    float64->float32 rounding); PCM encodings clip to full scale.
    """
    x = buf.samples
    sr = buf.sample_rate
    if encoding == "float32":
        payload = x.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    elif encoding == "pcm16":
        q = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
        payload = q.tobytes()
        audio_format, bits = 1, 16
    elif encoding == "pcm24":
        q = np.clip(np.rint(x * 8388608.0), -8388608, 8388607).astype(np.int64)
        q = np.where(q < 0, q + (1 << 24), q).astype(np.uint32)
        b = np.empty((len(q), 3), dtype=np.uint8)
        b[:, 0] = q & 0xFF
        b[:, 1] = (q >> 8) & 0xFF
        b[:, 2] = (q >> 16) & 0xFF
        payload = b.tobytes()
        audio_format, bits = 1, 24
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    block_align = bits // 8
    header = b"WAVE" + b"fmt " + struct.pack(
        "<IHHIIHH", 16, audio_format, 1, sr, sr * block_align, block_align, bits
    )
    chunk = header + b"data" + struct.pack("<I", len(payload)) + payload
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(chunk)) + chunk)
        if len(payload) & 1:
            fh.write(b"\x00")


def pair_validate(x, y):
    """Assert a dry/processed pair is aligned; returns the pair unchanged."""
    if x.sample_rate != y.sample_rate:
        raise ValueError(f"rate mismatch: {x.sample_rate} Hz vs {y.sample_rate} Hz")
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)} samples")
    return x, y


@dataclass
class ChunkPlan:
    """Overlapping chunk layout with warm-up regions.

    Each chunk re-runs the compressor from a reset state; the first
    overlap_len samples of every chunk except the first are warm-up only
    (state evolution without loss). Evaluation regions partition [0, n):
    the first chunk evaluates from sample 0 since it has no preceding
    context to warm up from.
    """

    chunk_len: int
    overlap_len: int
    n_samples: int
    chunk_starts: list = field(default_factory=list)

    @property
    def eval_offset(self):
        return self.overlap_len

    def regions(self):
        """Yield (start, end, eval_start, end) per chunk; end exclusive."""
        out = []
        for i, s in enumerate(self.chunk_starts):
            end = min(s + self.chunk_len, self.n_samples)
            eval_start = s if i == 0 else s + self.overlap_len
            out.append((s, end, eval_start, end))
        return out


def plan_chunks(n_samples, sample_rate, chunk_sec=12.0, overlap_sec=1.0):
    """Slice n_samples into chunk_sec chunks overlapping by overlap_sec."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if not (chunk_sec > overlap_sec >= 0):
        raise ValueError(f"chunk_sec ({chunk_sec}) must exceed overlap_sec ({overlap_sec})")
    chunk_len = int(round(chunk_sec * sample_rate))
    overlap_len = int(round(overlap_sec * sample_rate))
    if chunk_len <= overlap_len:
        raise ValueError("chunk shorter than overlap after rounding to samples")
    step = chunk_len - overlap_len
    starts = [0]
    while starts[-1] + chunk_len < n_samples:
        starts.append(starts[-1] + step)
    return ChunkPlan(chunk_len, overlap_len, n_samples, starts)
