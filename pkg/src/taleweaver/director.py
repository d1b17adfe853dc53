"""Automated directors: clients that claim the control token and steer a
served story to its end, either at random (seeded, replayable) or from a
scripted list of choice ids."""
from __future__ import annotations

import logging
import socket
from dataclasses import dataclass
from typing import Union

from .protocol import Frame, ProtocolError, decode_frame, encode_frame, make_frame
from .rng import SplitMix64

log = logging.getLogger("taleweaver.director")

DEFAULT_TIMEOUT = 30.0


class DirectorError(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


@dataclass(frozen=True)
class RandomPolicy:
    seed: int


@dataclass(frozen=True)
class ScriptedPolicy:
    choices: tuple[int, ...]


Policy = Union[RandomPolicy, ScriptedPolicy]


@dataclass(frozen=True)
class Decision:
    seq: int
    choice_id: int
    label: str


def run_auto_director(host: str, port: int, policy: Policy,
                      timeout: float = DEFAULT_TIMEOUT) -> list[Decision]:
    """Connect, claim the director token, steer until `end`, and return
    the decision transcript."""
    rng = SplitMix64(policy.seed) if isinstance(policy, RandomPolicy) else None
    script = list(policy.choices) if isinstance(policy, ScriptedPolicy) else None
    script_pos = 0
    decisions: list[Decision] = []
    answered_seq = None

    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise DirectorError("connection_lost", f"cannot connect to {host}:{port}: {e}") from None
    try:
        sock.settimeout(timeout)
        rfile = sock.makefile("rb")
        sock.sendall(encode_frame(make_frame("claim")))
        while True:
            try:
                line = rfile.readline()
            except (OSError, socket.timeout) as e:
                raise DirectorError("connection_lost", f"read failed: {e}") from None
            if not line:
                raise DirectorError("connection_lost", "server closed the connection")
            try:
                frame = decode_frame(line.rstrip(b"\n"))
            except ProtocolError as e:
                raise DirectorError("protocol_error", str(e)) from None
            if frame.type == "end":
                return decisions
            if frame.type == "error":
                if frame.get("code") == "stale_seq":
                    continue  # a newer status is on its way
                raise DirectorError(frame.get("code", "error"), frame.get("message", ""))
            if frame.type != "status":
                continue
            choices = frame.get("choices") or []
            seq = frame.get("seq")
            if frame.get("finished") or not choices or seq == answered_seq:
                continue
            n = len(choices)
            if rng is not None:
                pick = rng.next_below(n)
            else:
                if script_pos >= len(script):
                    raise DirectorError("script_exhausted",
                                        f"script has {len(script)} entries but the story asks again")
                pick = script[script_pos]
                script_pos += 1
                if not 0 <= pick < n:
                    raise DirectorError("invalid_scripted_id",
                                        f"scripted id {pick} out of range 0..{n - 1}")
            label = choices[pick].get("label", "") if isinstance(choices[pick], dict) else ""
            decisions.append(Decision(seq, pick, label))
            answered_seq = seq
            log.debug("seq %s -> choice %d (%s)", seq, pick, label)
            sock.sendall(encode_frame(make_frame("choose", id=pick, seq=seq)))
    finally:
        sock.close()
