"""Director wire protocol: newline-delimited JSON frames.

One frame is one JSON object on one line, at most 64 KiB.  The encoder is
canonical (`type` key first, remaining keys lexicographic, compact
separators, LF-terminated); the decoder accepts any valid JSON object per
line and ignores unknown fields for forward compatibility.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

MAX_FRAME_BYTES = 65_536

PROTOCOL_VERSION = 1

# known field names per frame type (beyond "type"); all are required when
# the frame is produced by this implementation, but decode only demands
# the ones listed under REQUIRED.
FRAME_FIELDS: dict[str, tuple[str, ...]] = {
    "hello": ("protocol", "story", "story_hash", "role"),
    "status": ("seq", "knot", "finished", "paragraphs", "choices", "vars"),
    "end": ("seq",),
    "error": ("code", "message"),
    "claim": (),
    "release": (),
    "choose": ("id", "seq"),
    "set": ("name", "value"),
    "restart": (),
    "ping": (),
    "pong": (),
    "sync": ("seq", "paragraphs"),
}

REQUIRED: dict[str, tuple[str, ...]] = {
    "hello": ("protocol", "story", "story_hash", "role"),
    "status": ("seq", "knot", "finished", "paragraphs", "choices", "vars"),
    "end": ("seq",),
    "error": ("code", "message"),
    "claim": (),
    "release": (),
    "choose": ("id", "seq"),
    "set": ("name", "value"),
    "restart": (),
    "ping": (),
    "pong": (),
    "sync": (),  # as a request it carries no fields; as a reply it carries seq+paragraphs
}


class ProtocolError(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


@dataclass(frozen=True)
class Frame:
    type: str
    fields: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.fields[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.fields.get(key, default)


def make_frame(frame_type: str, **fields: Any) -> Frame:
    if frame_type not in FRAME_FIELDS:
        raise ProtocolError("unknown_frame_type", f"unknown frame type {frame_type!r}")
    unknown = set(fields) - set(FRAME_FIELDS[frame_type])
    if unknown:
        raise ProtocolError("unknown_field", f"{frame_type} frame has no field(s) {sorted(unknown)}")
    return Frame(frame_type, fields)


def encode_frame(frame: Frame) -> bytes:
    """Canonical encoding: `type` first, other keys lexicographic, compact,
    LF-terminated."""
    if frame.type not in FRAME_FIELDS:
        raise ProtocolError("unknown_frame_type", f"unknown frame type {frame.type!r}")
    payload = {"type": frame.type}
    for key in sorted(frame.fields):
        payload[key] = frame.fields[key]
    data = json.dumps(payload, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"
    if len(data) > MAX_FRAME_BYTES:
        raise ProtocolError("frame_too_large", f"frame is {len(data)} bytes (max {MAX_FRAME_BYTES})")
    return data


def decode_frame(line: bytes) -> Frame:
    """Decode one wire line into a Frame.  Total over arbitrary input:
    raises ProtocolError, never anything else."""
    if len(line) > MAX_FRAME_BYTES:
        raise ProtocolError("frame_too_large", f"line is {len(line)} bytes (max {MAX_FRAME_BYTES})")
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ProtocolError("malformed_json", "frame is not a JSON object line") from None
    if not isinstance(obj, dict):
        raise ProtocolError("malformed_json", "frame is not a JSON object")
    frame_type = obj.get("type")
    if "type" not in obj:
        raise ProtocolError("missing_field", "frame has no 'type'")
    if not isinstance(frame_type, str) or frame_type not in FRAME_FIELDS:
        raise ProtocolError("unknown_frame_type", f"unknown frame type {frame_type!r}")
    for name in REQUIRED[frame_type]:
        if name not in obj:
            raise ProtocolError("missing_field", f"{frame_type} frame is missing {name!r}")
    known = FRAME_FIELDS[frame_type]
    fields = {k: v for k, v in obj.items() if k in known}
    return Frame(frame_type, fields)
