"""Wire protocol client for external (learned) servo estimators.

Transport is newline-delimited UTF-8 JSON, either over a spawned child
process's standard streams or a local TCP socket. One request per line:

    {"id": 7, "live": "<base64 PNG>", "bottleneck": "<base64 PNG>"}

and one response per line, echoing the id:

    {"id": 7, "e_x": -3.5, "e_y": 0.0, "e_s": 1.04, "e_r": 0.12}

A connection carries one in-flight request at a time; separate episodes may
hold separate connections.
"""

from __future__ import annotations

import base64
import json
import logging
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import EstimatorUnavailableError, ProtocolError
from .estimate import ServoEstimate
from .render import encode_png

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 2.0  # s

RESPONSE_FIELDS = ("e_x", "e_y", "e_s", "e_r")


@dataclass(frozen=True)
class EstimatorEndpoint:
    """Where to find an external estimator: a command to spawn, or a TCP
    address. Exactly one of cmd/host must be set."""

    cmd: tuple[str, ...] | None = None
    host: str | None = None
    port: int | None = None
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if (self.cmd is None) == (self.host is None):
            raise ValueError("set exactly one of cmd or host/port")
        if self.host is not None and self.port is None:
            raise ValueError("a TCP endpoint needs a port")

    def to_dict(self) -> dict:
        if self.cmd is not None:
            return {"cmd": list(self.cmd), "timeout": self.timeout}
        return {"host": self.host, "port": self.port, "timeout": self.timeout}

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorEndpoint":
        return cls(
            cmd=tuple(data["cmd"]) if data.get("cmd") else None,
            host=data.get("host"),
            port=data.get("port"),
            timeout=data.get("timeout", DEFAULT_TIMEOUT),
        )


def encode_image_b64(img: np.ndarray) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


class ExternalEstimatorClient:
    """Serializes segmented image pairs, sends one request at a time, and
    parses responses into ServoEstimate values."""

    def __init__(self, endpoint: EstimatorEndpoint):
        self.endpoint = endpoint
        self.timeout = endpoint.timeout
        self._next_id = 0
        self._proc = None
        self._sock = None
        self._sock_file = None
        self._lines: queue.Queue | None = None
        if endpoint.cmd is not None:
            self._spawn(endpoint.cmd)
        else:
            self._connect(endpoint.host, endpoint.port)

    def _spawn(self, cmd) -> None:
        self._proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()

        def pump(stream, out: queue.Queue):
            for line in stream:
                out.put(line)

        self._reader = threading.Thread(
            target=pump, args=(self._proc.stdout, self._lines), daemon=True)
        self._reader.start()

    def _connect(self, host: str, port: int) -> None:
        self._sock = socket.create_connection((host, port), timeout=self.timeout)
        self._sock.settimeout(self.timeout)
        self._sock_file = self._sock.makefile("rw", encoding="utf-8", newline="\n")

    def _send_line(self, line: str) -> None:
        try:
            if self._proc is not None:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            else:
                self._sock_file.write(line + "\n")
                self._sock_file.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EstimatorUnavailableError(f"estimator connection lost: {exc}") from exc

    def _recv_line(self) -> str:
        if self._proc is not None:
            try:
                return self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise EstimatorUnavailableError(
                    f"no estimator response within {self.timeout} s") from None
        try:
            line = self._sock_file.readline()
        except (socket.timeout, OSError) as exc:
            raise EstimatorUnavailableError(
                f"no estimator response within {self.timeout} s") from exc
        if not line:
            raise EstimatorUnavailableError("estimator closed the connection")
        return line

    def estimate(self, seg_live_img: np.ndarray, seg_bot_img: np.ndarray) -> ServoEstimate:
        request_id = self._next_id
        self._next_id += 1
        request = {
            "id": request_id,
            "live": encode_image_b64(seg_live_img),
            "bottleneck": encode_image_b64(seg_bot_img),
        }
        self._send_line(json.dumps(request))
        raw = self._recv_line()
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            logger.error("malformed estimator response: %r", raw)
            raise ProtocolError(f"response is not JSON: {raw!r}") from exc
        if not isinstance(doc, dict) or doc.get("id") != request_id:
            logger.error("estimator response id mismatch: %r", raw)
            raise ProtocolError(
                f"response id {doc.get('id')!r} does not echo request id {request_id}")
        missing = [f for f in RESPONSE_FIELDS if f not in doc]
        if missing:
            logger.error("estimator response missing %s: %r", missing, raw)
            raise ProtocolError(f"response missing fields {missing}: {raw!r}")
        try:
            return ServoEstimate(
                e_x=float(doc["e_x"]),
                e_y=float(doc["e_y"]),
                e_s=float(doc["e_s"]),
                e_r=float(doc["e_r"]),
            )
        except (TypeError, ValueError) as exc:
            logger.error("invariant-violating estimator response: %r", raw)
            raise ProtocolError(f"invariant violation in response: {exc}") from exc

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None
        if self._sock is not None:
            try:
                self._sock_file.close()
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def __enter__(self) -> "ExternalEstimatorClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def estimate_external(endpoint: EstimatorEndpoint, seg_live_img: np.ndarray,
                      seg_bot_img: np.ndarray) -> ServoEstimate:
    """One-shot convenience: open a connection, run a single exchange, close."""
    with ExternalEstimatorClient(endpoint) as client:
        return client.estimate(seg_live_img, seg_bot_img)
