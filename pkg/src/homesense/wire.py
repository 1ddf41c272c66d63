"""Binary wire formats and their byte model.

Raw CSI frame (the continuous-streaming baseline)::

    float64 timestamp | uint32 sequence | uint32 subcarrier count   16 bytes
    complex64 gain x F                                             8F bytes

Upload message (event-driven ACF queue)::

    b"HSU1" | device id, 16 bytes NUL padded | float64 window start
    | float64 sample rate | uint32 block samples | uint16 lag count L
    | uint16 subcarrier count F | uint32 entry count | uint8 flags
    | uint8 reserved                                              50 bytes
    per entry: uint32 block-end offset (samples from window start)
               | float32 motion statistic | float32 combined[L]
               [ | float32 rows[F][L] when the rows flag is set ]

Window record (Origin -> Master summary of one decision window)::

    device id 16s | float64 end time | float32 phi | float32 threshold
    | uint8 verdict | float32 completeness | float32 speed (NaN if none)
    | float32 speed quality | float32 proximity | uint8 near      50 bytes

All multi-byte fields are little-endian.  Every 32-bit float is what the
receiving side computes with, so edge and cloud agree bit for bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .foundation import AcfCurve, MotionDecision, default_threshold

RAW_HEADER = struct.Struct("<dII")
UPLOAD_MAGIC = b"HSU1"
UPLOAD_HEADER = struct.Struct("<4s16sddIHHIBB")
UPLOAD_ENTRY_HEAD = struct.Struct("<If")
RECORD = struct.Struct("<16sdffBffffB")
DEVICE_ID_BYTES = 16

FLAG_MOTION = 1
FLAG_ROWS = 2

VERDICT_CODES = {"invalid": 0, "static": 1, "motion": 2}
VERDICT_NAMES = {v: k for k, v in VERDICT_CODES.items()}


def _f32(x: float) -> float:
    return float(np.float32(x))


def _device_bytes(device_id: str) -> bytes:
    raw = device_id.encode("utf-8")
    if len(raw) > DEVICE_ID_BYTES:
        raise ValueError(f"device_id longer than {DEVICE_ID_BYTES} bytes: {device_id!r}")
    return raw


def _device_str(raw: bytes) -> str:
    return raw.rstrip(b"\0").decode("utf-8")


def raw_frame_bytes(subcarrier_count: int) -> int:
    return RAW_HEADER.size + 8 * subcarrier_count


def encode_frame(timestamp_s: float, sequence: int, gains: np.ndarray) -> bytes:
    g = np.ascontiguousarray(gains, dtype="<c8")
    return RAW_HEADER.pack(timestamp_s, sequence, len(g)) + g.tobytes()


def decode_frame(buf: bytes) -> tuple[float, int, np.ndarray]:
    if len(buf) < RAW_HEADER.size:
        raise ValueError("truncated frame header")
    ts, seq, f = RAW_HEADER.unpack_from(buf)
    if len(buf) != raw_frame_bytes(f):
        raise ValueError("frame length does not match its subcarrier count")
    gains = np.frombuffer(buf, dtype="<c8", offset=RAW_HEADER.size).astype(complex)
    return ts, seq, gains


def upload_bytes(entries: int, lags: int, subcarriers: int = 0, rows: bool = False) -> int:
    """Closed-form size of an upload message."""
    per_entry = UPLOAD_ENTRY_HEAD.size + 4 * lags + (4 * subcarriers * lags if rows else 0)
    return UPLOAD_HEADER.size + entries * per_entry


@dataclass(frozen=True, eq=False)
class UploadMessage:
    """One decision window's ACF queue as shipped to the cloud."""

    device_id: str
    window_start_s: float
    sample_rate_hz: float
    block_samples: int
    motion_flag: bool
    offsets: tuple[int, ...]
    motion_statistics: np.ndarray  # float32 (entries,)
    combined: np.ndarray  # float32 (entries, L)
    rows: np.ndarray | None = None  # float32 (entries, F, L)

    @property
    def lag_count(self) -> int:
        return self.combined.shape[1] if self.combined.ndim == 2 else 0

    @property
    def payload_bytes(self) -> int:
        f = self.rows.shape[1] if self.rows is not None else 0
        return upload_bytes(len(self.offsets), self.lag_count, f, self.rows is not None)

    @classmethod
    def from_queue(
        cls,
        device_id: str,
        window_start_s: float,
        sample_rate_hz: float,
        queue: list[AcfCurve],
        motion_flag: bool,
        include_rows: bool = False,
    ) -> UploadMessage:
        _device_bytes(device_id)
        if queue:
            block = int(queue[0].sample_count)
            lags = len(queue[0].lags_s)
            f = queue[0].rows.shape[0]
        else:
            block, lags, f = 0, 0, 0
        offsets = tuple(int(round((a.time_s - window_start_s) * sample_rate_hz)) for a in queue)
        ms = np.array([a.weights @ a.motion_statistics for a in queue], dtype=np.float32)
        comb = np.array([a.combined for a in queue], dtype=np.float32).reshape(len(queue), lags)
        rows = np.array([a.rows for a in queue], dtype=np.float32).reshape(len(queue), f, lags) if include_rows else None
        return cls(device_id, float(window_start_s), float(sample_rate_hz), block, bool(motion_flag), offsets, ms, comb, rows)

    def encode(self) -> bytes:
        f = self.rows.shape[1] if self.rows is not None else 0
        flags = (FLAG_MOTION if self.motion_flag else 0) | (FLAG_ROWS if self.rows is not None else 0)
        out = [
            UPLOAD_HEADER.pack(
                UPLOAD_MAGIC,
                _device_bytes(self.device_id),
                self.window_start_s,
                self.sample_rate_hz,
                self.block_samples,
                self.lag_count,
                f,
                len(self.offsets),
                flags,
                0,
            )
        ]
        for i, off in enumerate(self.offsets):
            out.append(UPLOAD_ENTRY_HEAD.pack(off, self.motion_statistics[i]))
            out.append(self.combined[i].astype("<f4").tobytes())
            if self.rows is not None:
                out.append(self.rows[i].astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def decode(cls, buf: bytes) -> UploadMessage:
        if len(buf) < UPLOAD_HEADER.size:
            raise ValueError("truncated upload header")
        magic, dev, start, rate, block, lags, f, n, flags, _ = UPLOAD_HEADER.unpack_from(buf)
        if magic != UPLOAD_MAGIC:
            raise ValueError("bad upload magic")
        has_rows = bool(flags & FLAG_ROWS)
        if len(buf) != upload_bytes(n, lags, f, has_rows):
            raise ValueError("upload length does not match its header")
        pos = UPLOAD_HEADER.size
        offsets, ms = [], np.empty(n, dtype=np.float32)
        comb = np.empty((n, lags), dtype=np.float32)
        rows = np.empty((n, f, lags), dtype=np.float32) if has_rows else None
        for i in range(n):
            off, m = UPLOAD_ENTRY_HEAD.unpack_from(buf, pos)
            pos += UPLOAD_ENTRY_HEAD.size
            offsets.append(off)
            ms[i] = m
            comb[i] = np.frombuffer(buf, dtype="<f4", count=lags, offset=pos)
            pos += 4 * lags
            if has_rows:
                rows[i] = np.frombuffer(buf, dtype="<f4", count=f * lags, offset=pos).reshape(f, lags)
                pos += 4 * f * lags
        return cls(_device_str(dev), start, rate, block, bool(flags & FLAG_MOTION), tuple(offsets), ms, comb, rows)

    def curves(self) -> list[AcfCurve]:
        """ACF curves as the cloud sees them (combined curve, optional rows)."""
        lags = np.arange(1, self.lag_count + 1) / self.sample_rate_hz
        out = []
        for i, off in enumerate(self.offsets):
            comb = self.combined[i]
            rows = self.rows[i] if self.rows is not None else comb[None, :]
            t = self.window_start_s + off / self.sample_rate_hz
            out.append(AcfCurve(lags, rows, self.block_samples, t, None, comb, None))
        return out

    def decisions(self) -> list[MotionDecision]:
        thr = default_threshold(self.block_samples) if self.block_samples else math.inf
        return [
            MotionDecision(float(m), thr, self.window_start_s + off / self.sample_rate_hz)
            for m, off in zip(self.motion_statistics, self.offsets)
        ]


@dataclass(frozen=True)
class WindowRecord:
    """Per-window summary forwarded from an Origin to the Master Origin.

    Real-valued fields are held at float32 precision so that a record built
    in place and one decoded off the wire are identical.
    """

    device_id: str
    end_s: float
    motion_statistic: float
    threshold: float
    verdict: str
    completeness: float
    speed_mps: float | None
    speed_quality: float
    proximity: float
    near: bool

    @classmethod
    def create(cls, device_id, end_s, motion_statistic, threshold, verdict, completeness, speed, quality, proximity, near):
        _device_bytes(device_id)
        if verdict not in VERDICT_CODES:
            raise ValueError(f"unknown verdict {verdict!r}")
        return cls(
            device_id,
            float(end_s),
            _f32(motion_statistic),
            _f32(threshold),
            verdict,
            _f32(completeness),
            None if speed is None else _f32(speed),
            _f32(quality),
            _f32(proximity),
            bool(near),
        )

    def encode(self) -> bytes:
        return RECORD.pack(
            _device_bytes(self.device_id),
            self.end_s,
            self.motion_statistic,
            self.threshold,
            VERDICT_CODES[self.verdict],
            self.completeness,
            math.nan if self.speed_mps is None else self.speed_mps,
            self.speed_quality,
            self.proximity,
            1 if self.near else 0,
        )

    @classmethod
    def decode(cls, buf: bytes) -> WindowRecord:
        if len(buf) != RECORD.size:
            raise ValueError("bad record length")
        dev, end, phi, thr, code, comp, speed, q, prox, near = RECORD.unpack(buf)
        if code not in VERDICT_NAMES:
            raise ValueError(f"unknown verdict code {code}")
        return cls(
            _device_str(dev), end, phi, thr, VERDICT_NAMES[code], comp,
            None if math.isnan(speed) else speed, q, prox, bool(near),
        )
