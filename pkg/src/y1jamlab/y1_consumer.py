"""Y1 consumer with a forwarding relay.

The consumer subscribes to a producer, accepts notifications on ``/notify``
and forwards each accepted ``rai_content`` (plus its timestamp) as one line
of JSON over TCP.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

from .ran_sim import METRIC_NAMES
from .transport import ConnectionFailed
from .y1_producer import SUBSCRIBE_PATH, UNSUBSCRIBE_PATH, SubscriptionRequest

logger = logging.getLogger(__name__)

NOTIFY_PATH = "/notify"
RELAY_QUEUE_CAPACITY = 64


class Rejected(Exception):
    def __init__(self, status: int, body: Any):
        super().__init__(f"producer answered {status}: {body}")
        self.status = status
        self.body = body


class MalformedPayload(ValueError):
    pass


def encode_relay_line(payload: dict) -> bytes:
    """One NDJSON frame: the received rai_content and timestamp, untouched."""
    frame = {"timestamp": payload["timestamp"], "rai_content": payload["rai_content"]}
    return (json.dumps(frame, separators=(",", ":")) + "\n").encode()


def parse_notification(body: bytes) -> dict:
    try:
        doc = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedPayload(f"bad JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedPayload("payload must be an object")
    if not isinstance(doc.get("subscription_id"), str):
        raise MalformedPayload("subscription_id missing")
    content = doc.get("rai_content")
    if not isinstance(content, dict) or not set(content) <= set(METRIC_NAMES):
        raise MalformedPayload("rai_content must map known metric names")
    if not isinstance(doc.get("timestamp"), str):
        raise MalformedPayload("timestamp missing")
    validity = doc.get("validity_period")
    if isinstance(validity, bool) or not isinstance(validity, int):
        raise MalformedPayload("validity_period must be an integer")
    return doc


@dataclass
class ConsumerState:
    subscription_id: str | None = None
    latest_rai: dict | None = None
    received_count: int = 0
    dropped_count: int = 0
    relay_endpoint: tuple[str, int] | None = None


class CallbackRelay:
    """Synchronous relay into an in-process sink (virtual-time mode)."""

    def __init__(self, sink: Callable[[bytes], None]):
        self.sink = sink
        self.sent = 0

    def forward(self, payload: dict) -> None:
        self.sink(encode_relay_line(payload))
        self.sent += 1

    def close(self) -> None:
        pass


class TcpRelay:
    """Forwards frames to the jammer over one TCP connection.

    Frames go out in arrival order from a bounded queue (drop-oldest). While
    the link is down, only the newest pending frame survives; it is sent
    first on reconnect.
    """

    def __init__(self, host: str, port: int, capacity: int = RELAY_QUEUE_CAPACITY,
                 backoff_s: float = 0.05, max_backoff_s: float = 1.0):
        self.endpoint = (host, port)
        self._queue: deque[bytes] = deque(maxlen=capacity)
        self._cond = threading.Condition()
        self._closed = False
        self._sock: socket.socket | None = None
        self.backoff_s = backoff_s
        self.max_backoff_s = max_backoff_s
        self.sent = 0
        self._thread = threading.Thread(target=self._run, daemon=True, name="relay")
        self._thread.start()

    def forward(self, payload: dict) -> None:
        with self._cond:
            self._queue.append(encode_relay_line(payload))
            self._cond.notify()

    def _connect(self) -> bool:
        try:
            self._sock = socket.create_connection(self.endpoint, timeout=2.0)
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return True
        except OSError as exc:
            logger.debug("relay connect to %s failed: %s", self.endpoint, exc)
            self._sock = None
            return False

    def _run(self) -> None:
        delay = self.backoff_s
        # Only an observed outage triggers the newest-only trim.
        was_down = not self._connect()
        while True:
            with self._cond:
                self._cond.wait_for(lambda: self._closed or self._queue)
                if self._closed and not self._queue:
                    return
            if self._sock is None:
                if not self._connect():
                    was_down = True
                    with self._cond:
                        if self._closed:
                            return
                        if len(self._queue) > 1:
                            logger.warning("relay down; keeping newest of %d frames", len(self._queue))
                            newest = self._queue[-1]
                            self._queue.clear()
                            self._queue.append(newest)
                    time.sleep(delay)
                    delay = min(delay * 2, self.max_backoff_s)
                    continue
                delay = self.backoff_s
                if was_down:
                    with self._cond:
                        while len(self._queue) > 1:
                            self._queue.popleft()
                    was_down = False
            with self._cond:
                if not self._queue:
                    continue
                frame = self._queue[0]
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                logger.warning("relay send failed: %s", exc)
                self._sock.close()
                self._sock = None
                was_down = True
                continue
            with self._cond:
                if self._queue and self._queue[0] is frame:
                    self._queue.popleft()
                self.sent += 1

    def close(self, drain_timeout: float = 2.0) -> None:
        deadline = time.monotonic() + drain_timeout
        while time.monotonic() < deadline:
            with self._cond:
                if not self._queue:
                    break
            time.sleep(0.01)
        with self._cond:
            self._closed = True
            self._queue.clear()
            self._cond.notify_all()
        self._thread.join(timeout=2.0)
        if self._sock is not None:
            self._sock.close()


class Y1Consumer:
    def __init__(self, transport, relay=None, notify_url: str | None = None):
        self.transport = transport
        self.relay = relay
        self.notify_url = notify_url
        self.state = ConsumerState()
        self._lock = threading.Lock()
        self.producer_url: str | None = None

    def subscribe(self, producer_url: str, req: SubscriptionRequest | dict) -> str:
        body = req.to_json() if isinstance(req, SubscriptionRequest) else req
        status, resp = self.transport.request("POST", producer_url.rstrip("/") + SUBSCRIBE_PATH, body)
        if status != 201 or not isinstance(resp, dict) or "id" not in resp:
            raise Rejected(status, resp)
        with self._lock:
            self.state.subscription_id = resp["id"]
        self.producer_url = producer_url
        logger.info("subscribed with id %s", resp["id"])
        return resp["id"]

    def unsubscribe(self) -> int:
        sub_id = self.state.subscription_id
        if sub_id is None or self.producer_url is None:
            return 404
        status, _ = self.transport.request(
            "DELETE", f"{self.producer_url.rstrip('/')}{UNSUBSCRIBE_PATH}?id={sub_id}")
        if status == 204:
            with self._lock:
                self.state.subscription_id = None
        return status

    def handle_notify(self, body: bytes) -> int:
        try:
            doc = parse_notification(body)
        except MalformedPayload as exc:
            logger.warning("malformed notification: %s", exc)
            return 400
        with self._lock:
            if doc["subscription_id"] != self.state.subscription_id:
                self.state.dropped_count += 1
                logger.info("dropping notification for unknown subscription %s",
                            doc["subscription_id"])
                return 200
            latest = self.state.latest_rai
            if latest is not None and doc["timestamp"] < latest["timestamp"]:
                self.state.dropped_count += 1
                logger.info("dropping out-of-order notification %s", doc["timestamp"])
                return 200
            self.state.latest_rai = doc
            self.state.received_count += 1
            # Enqueued under the lock so relay order equals acceptance order.
            if self.relay is not None:
                self.relay.forward(doc)
        return 200

    def route(self, method: str, path: str, query: dict, body: bytes,
              identity: str | None) -> tuple[int, Any]:
        if method == "POST" and path == NOTIFY_PATH:
            status = self.handle_notify(body)
            return status, ({"status": "ok"} if status == 200 else {"error": "MalformedPayload"})
        return 404, {"error": "not found"}


__all__ = [
    "CallbackRelay", "ConnectionFailed", "ConsumerState", "MalformedPayload", "Rejected",
    "TcpRelay", "Y1Consumer", "encode_relay_line", "parse_notification",
]
