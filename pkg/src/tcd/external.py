"""External logit providers speaking line-delimited JSON.

Wire protocol (UTF-8, one JSON object per line, over a subprocess pipe or a
TCP socket; the client speaks first):

    -> {"type": "hello"}
    <- {"type": "vocab", "tokens": ["...", ...]}
    -> {"type": "logits", "context": [ids...]}
    <- {"type": "logits", "values": [floats...]}        # exactly V finite floats
    <- {"type": "error", "message": "..."}              # provider-side failure

Raw logits cross the wire, never probabilities, so normalization always
happens on this side. ``serve`` is the reference server loop: point it at
any in-process provider to expose it to another process.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import socket
import subprocess
import sys
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Vocabulary
from .errors import (
    InvalidConfig,
    ProtocolError,
    ProviderError,
    ProviderTimeout,
    VocabMismatch,
)
from .providers import Provider


@dataclass(frozen=True)
class ExternalProviderConfig:
    """Transport plus timeouts for one external provider session."""

    command: tuple[str, ...] | None = None  # subprocess argv
    address: tuple[str, int] | None = None  # TCP (host, port)
    handshake_timeout_ms: int = 5000
    step_timeout_ms: int = 5000
    expected_vocab_hash: str | None = None

    def __post_init__(self):
        if (self.command is None) == (self.address is None):
            raise InvalidConfig("exactly one of command and address must be set")
        if self.handshake_timeout_ms <= 0 or self.step_timeout_ms <= 0:
            raise InvalidConfig("timeouts must be positive")


class _PipeChannel:
    def __init__(self, argv: Sequence[str]):
        self.proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        self._buf = b""

    def send_line(self, line: str) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(line.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError(f"provider pipe closed: {exc}") from exc

    def recv_line(self, timeout_ms: int) -> str:
        assert self.proc.stdout is not None
        fd = self.proc.stdout.fileno()
        deadline = time.monotonic() + timeout_ms / 1000.0
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProviderTimeout(f"no response within {timeout_ms} ms")
            readable, _, _ = select.select([fd], [], [], remaining)
            if not readable:
                continue
            chunk = os.read(fd, 65536)
            if chunk == b"":
                raise ProtocolError("provider closed the stream")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("utf-8")

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class _SocketChannel:
    def __init__(self, address: tuple[str, int]):
        self.sock = socket.create_connection(address)
        self._buf = b""

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise ProtocolError(f"provider socket closed: {exc}") from exc

    def recv_line(self, timeout_ms: int) -> str:
        deadline = time.monotonic() + timeout_ms / 1000.0
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProviderTimeout(f"no response within {timeout_ms} ms")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise ProviderTimeout(f"no response within {timeout_ms} ms") from None
            if chunk == b"":
                raise ProtocolError("provider closed the stream")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("utf-8")

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class ExternalProvider(Provider):
    """Client side of the wire protocol; one session, one outstanding request."""

    name = "external"
    deterministic = False

    def __init__(self, config: ExternalProviderConfig):
        self.config = config
        if config.command is not None:
            self._channel = _PipeChannel(config.command)
        else:
            self._channel = _SocketChannel(config.address)
        try:
            vocabulary = self._handshake()
        except Exception:
            self._channel.close()
            raise
        super().__init__(vocabulary)

    @classmethod
    def spawn(cls, command: str | Sequence[str], **kwargs) -> "ExternalProvider":
        argv = tuple(shlex.split(command)) if isinstance(command, str) else tuple(command)
        return cls(ExternalProviderConfig(command=argv, **kwargs))

    @classmethod
    def connect(cls, host: str, port: int, **kwargs) -> "ExternalProvider":
        return cls(ExternalProviderConfig(address=(host, port), **kwargs))

    def _recv_frame(self, timeout_ms: int) -> dict:
        line = self._channel.recv_line(timeout_ms)
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed frame (not JSON): {line[:120]!r}") from exc
        if not isinstance(frame, dict) or "type" not in frame:
            raise ProtocolError(f"malformed frame (no type): {line[:120]!r}")
        if frame["type"] == "error":
            raise ProviderError(f"provider reported: {frame.get('message', '')}")
        return frame

    def _handshake(self) -> Vocabulary:
        self._channel.send_line(json.dumps({"type": "hello"}))
        frame = self._recv_frame(self.config.handshake_timeout_ms)
        if frame["type"] != "vocab":
            raise ProtocolError(f"expected vocab frame, got type {frame['type']!r}")
        tokens = frame.get("tokens")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise ProtocolError("vocab frame must carry a list of token strings")
        vocabulary = Vocabulary(tokens)
        expected = self.config.expected_vocab_hash
        if expected is not None and vocabulary.hash_hex() != expected:
            raise VocabMismatch(
                f"vocabulary hash {vocabulary.hash_hex()} != expected {expected}"
            )
        return vocabulary

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        ctx = self._check_context(context)
        self._channel.send_line(json.dumps({"type": "logits", "context": ctx}))
        frame = self._recv_frame(self.config.step_timeout_ms)
        if frame["type"] != "logits":
            raise ProtocolError(f"expected logits frame, got type {frame['type']!r}")
        values = frame.get("values")
        if not isinstance(values, list) or len(values) != len(self.vocabulary):
            got = len(values) if isinstance(values, list) else type(values).__name__
            raise ProtocolError(
                f"logits frame must carry exactly {len(self.vocabulary)} floats, got {got}"
            )
        arr = np.asarray(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ProtocolError("logits frame contains a non-finite value")
        return arr

    def close(self) -> None:
        self._channel.close()

    def __enter__(self) -> "ExternalProvider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _decimal(value: float) -> str:
    text = repr(float(value))
    if "e" in text or "E" in text:
        text = np.format_float_positional(float(value), unique=True, trim="0")
    return text


def _dump_frame(frame: dict) -> str:
    if frame.get("type") == "logits":
        values = ",".join(_decimal(v) for v in frame["values"])
        return '{"type":"logits","values":[%s]}' % values
    return json.dumps(frame, ensure_ascii=False, separators=(",", ":"))


def serve(provider, lines_in, lines_out) -> None:
    """Reference server loop: expose an in-process provider over the protocol.

    Reads request frames from the ``lines_in`` text stream and writes one
    response frame per request to ``lines_out``. Returns at end of input.
    """
    for raw in lines_in:
        raw = raw.strip()
        if not raw:
            continue
        try:
            frame = json.loads(raw)
            kind = frame.get("type")
            if kind == "hello":
                reply = {"type": "vocab", "tokens": list(provider.vocabulary.tokens)}
            elif kind == "logits":
                values = provider.next_logits(frame["context"])
                reply = {"type": "logits", "values": [float(v) for v in values]}
            else:
                reply = {"type": "error", "message": f"unknown frame type {kind!r}"}
        except Exception as exc:
            reply = {"type": "error", "message": str(exc)}
        lines_out.write(_dump_frame(reply) + "\n")
        lines_out.flush()


def serve_stdio(provider) -> None:
    serve(provider, sys.stdin, sys.stdout)
