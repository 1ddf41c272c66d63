"""Trace files: newline-delimited JSON and a compact binary format.

Both readers are tolerant: a corrupted frame (bad JSON, wrong field
shapes, failed checksum, sequence going backwards) is skipped and counted,
and the rest of the file is still read.

Binary layout: a header ``b"HSTR" | uint16 version | uint16 F | float64
rate | uint32 meta length | meta JSON`` followed by raw frames in the wire
encoding (16-byte header + F complex64), each trailed by a CRC-32.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import Trace
from .wire import decode_frame, encode_frame, raw_frame_bytes

TEXT_FORMAT = "homesense-trace"
BINARY_MAGIC = b"HSTR"
VERSION = 1
_BIN_HEADER = struct.Struct("<4sHHdI")
_CRC = struct.Struct("<I")


@dataclass(frozen=True)
class ReadResult:
    trace: Trace
    skipped: int


def quantize(trace: Trace) -> Trace:
    """Round gains to complex64, the precision every stored trace carries."""
    return trace.map_gains(lambda g, _t: g.astype(np.complex64).astype(complex))


def _meta(trace: Trace) -> dict:
    return {"device_id": trace.device_id, "sample_rate_hz": trace.sample_rate_hz, "meta": trace.meta}


def _assemble(header: dict, times, seqs, gains, f: int) -> Trace:
    gains = np.array(gains, dtype=complex).reshape(len(gains), f)
    return Trace(
        header["device_id"],
        np.array(times, dtype=float),
        np.array(seqs, dtype=np.int64),
        gains,
        float(header["sample_rate_hz"]),
        dict(header.get("meta") or {}),
    )


def write_text(trace: Trace, path: str | Path) -> None:
    q = quantize(trace)
    with open(path, "w") as fh:
        head = {"format": TEXT_FORMAT, "version": VERSION, "subcarriers": q.subcarrier_count, **_meta(q)}
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for ts, seq, g in zip(q.timestamps, q.sequences, q.gains):
            rec = {"t": float(ts), "seq": int(seq), "re": g.real.tolist(), "im": g.imag.tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_text(path: str | Path) -> ReadResult:
    with open(path) as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: unreadable trace header") from exc
        if header.get("format") != TEXT_FORMAT or header.get("version") != VERSION:
            raise ValueError(f"{path}: not a version-{VERSION} {TEXT_FORMAT} file")
        f = int(header["subcarriers"])
        times, seqs, gains, skipped = [], [], [], 0
        for line in fh:
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                re_, im_ = np.asarray(rec["re"], dtype=float), np.asarray(rec["im"], dtype=float)
                seq, ts = int(rec["seq"]), float(rec["t"])
                if re_.shape != (f,) or im_.shape != (f,):
                    raise ValueError("shape")
                if seqs and seq <= seqs[-1]:
                    raise ValueError("sequence")
            except (ValueError, KeyError, TypeError):
                skipped += 1
                continue
            times.append(ts)
            seqs.append(seq)
            gains.append(re_ + 1j * im_)
    return ReadResult(_assemble(header, times, seqs, gains, f), skipped)


def encode_binary(trace: Trace) -> bytes:
    meta = json.dumps(_meta(trace), sort_keys=True).encode()
    parts = [_BIN_HEADER.pack(BINARY_MAGIC, VERSION, trace.subcarrier_count, trace.sample_rate_hz, len(meta)), meta]
    for ts, seq, g in zip(trace.timestamps, trace.sequences, trace.gains):
        frame = encode_frame(float(ts), int(seq), g)
        parts.append(frame)
        parts.append(_CRC.pack(zlib.crc32(frame)))
    return b"".join(parts)


def decode_binary(buf: bytes) -> ReadResult:
    if len(buf) < _BIN_HEADER.size:
        raise ValueError("truncated trace header")
    magic, version, f, rate, meta_len = _BIN_HEADER.unpack_from(buf)
    if magic != BINARY_MAGIC or version != VERSION:
        raise ValueError("not a homesense binary trace")
    pos = _BIN_HEADER.size
    header = json.loads(buf[pos : pos + meta_len])
    header["sample_rate_hz"] = rate
    pos += meta_len
    size = raw_frame_bytes(f)
    times, seqs, gains, skipped = [], [], [], 0
    while pos + size + _CRC.size <= len(buf):
        frame = buf[pos : pos + size]
        (crc,) = _CRC.unpack_from(buf, pos + size)
        pos += size + _CRC.size
        if zlib.crc32(frame) != crc:
            skipped += 1
            continue
        ts, seq, g = decode_frame(frame)
        if len(g) != f or (seqs and seq <= seqs[-1]) or not np.all(np.isfinite(g)):
            skipped += 1
            continue
        times.append(ts)
        seqs.append(seq)
        gains.append(g)
    if pos != len(buf):
        skipped += 1  # truncated tail
    return ReadResult(_assemble(header, times, seqs, gains, f), skipped)


def write_trace(trace: Trace, path: str | Path) -> None:
    """Write by extension: ``.jsonl`` is text, anything else binary."""
    path = Path(path)
    if path.suffix == ".jsonl":
        write_text(trace, path)
    else:
        path.write_bytes(encode_binary(quantize(trace)))


def read_trace(path: str | Path) -> ReadResult:
    path = Path(path)
    if path.suffix == ".jsonl":
        return read_text(path)
    return decode_binary(path.read_bytes())
