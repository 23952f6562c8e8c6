"""Y1 RAN Analytics Information producer.

Manages the subscription lifecycle and pushes periodic notifications built
from the newest sample in the shared data layer.

Endpoints (all JSON)::

    POST   /Y1_RAI_Subscriptions/v1/subscriptions/subscribe
    DELETE /Y1_RAI_Subscriptions/v1/subscriptions/unsubscribe?id=<id>
    PUT    /Y1_RAI_Subscriptions/v1/subscriptions/<id>
"""

from __future__ import annotations

import json
import logging
import math
import secrets
import threading
from dataclasses import dataclass, replace
from typing import Any, Callable, Sequence
from urllib.parse import urlsplit

from .clock import VirtualClock, iso_timestamp
from .ran_sim import METRIC_NAMES, AnalyticsSample
from .sdl_store import CellKey, SdlStore
from .transport import ConnectionFailed

logger = logging.getLogger(__name__)

API_ROOT = "/Y1_RAI_Subscriptions/v1/subscriptions"
SUBSCRIBE_PATH = f"{API_ROOT}/subscribe"
UNSUBSCRIBE_PATH = f"{API_ROOT}/unsubscribe"
SUPPORTED_RAI_TYPE = "ran_performance_analytics"
DEFAULT_MAX_FAILURES = 5

PERIODIC = "PERIODIC"
EVENT = "EVENT"
ACTIVE = "ACTIVE"
CANCELLED = "CANCELLED"


class Y1Error(Exception):
    status = 400


class BadRequest(Y1Error):
    pass


class UnsupportedRaiType(Y1Error):
    pass


class UnsupportedUpdate(Y1Error):
    pass


class NotFound(Y1Error):
    status = 404


class Unauthenticated(Y1Error):
    status = 401


class NoData(Exception):
    """Nothing stored yet; the dispatch is skipped."""


def _valid_url(value: Any) -> bool:
    if not isinstance(value, str):
        return False
    parts = urlsplit(value)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


@dataclass(frozen=True)
class SubscriptionRequest:
    rai_type: str
    rai_type_version: str
    trigger: str
    period_s: float
    notification_target_address: str
    rai_filter: tuple[str, ...] = METRIC_NAMES

    @classmethod
    def from_json(cls, doc: Any) -> "SubscriptionRequest":
        if not isinstance(doc, dict):
            raise BadRequest("request body must be a JSON object")
        rai_type = doc.get("raiType")
        version = doc.get("raiTypeVersion", "1.0")
        criteria = doc.get("notificationCriteria")
        target = doc.get("notificationTargetAddress")
        if not isinstance(rai_type, str) or not rai_type:
            raise BadRequest("raiType is required")
        if not isinstance(version, str):
            raise BadRequest("raiTypeVersion must be a string")
        if not isinstance(criteria, dict):
            raise BadRequest("notificationCriteria is required")
        trigger = criteria.get("trigger")
        if trigger not in (PERIODIC, EVENT):
            raise BadRequest("notificationCriteria.trigger must be PERIODIC or EVENT")
        period = criteria.get("periodSeconds")
        if trigger == PERIODIC:
            if isinstance(period, bool) or not isinstance(period, (int, float)) \
                    or not math.isfinite(period) or period <= 0:
                raise BadRequest("PERIODIC trigger needs periodSeconds > 0")
        if not _valid_url(target):
            raise BadRequest("notificationTargetAddress must be an http(s) URL")
        rai_filter = doc.get("raiFilter", list(METRIC_NAMES))
        if not isinstance(rai_filter, list) or not all(isinstance(m, str) for m in rai_filter):
            raise BadRequest("raiFilter must be a list of metric names")
        unknown = set(rai_filter) - set(METRIC_NAMES)
        if unknown:
            raise BadRequest(f"unknown metrics in raiFilter: {sorted(unknown)}")
        if rai_type != SUPPORTED_RAI_TYPE:
            raise UnsupportedRaiType(f"unsupported raiType {rai_type!r}")
        if trigger == EVENT:
            raise UnsupportedUpdate("EVENT trigger is not supported")
        return cls(rai_type, version, trigger, float(period), target, tuple(rai_filter))

    def to_json(self) -> dict:
        return {
            "raiType": self.rai_type,
            "raiTypeVersion": self.rai_type_version,
            "notificationCriteria": {"trigger": self.trigger, "periodSeconds": self.period_s},
            "notificationTargetAddress": self.notification_target_address,
            "raiFilter": list(self.rai_filter),
        }


@dataclass
class Subscription:
    id: str
    request: SubscriptionRequest
    state: str
    created_tick: int
    last_notified_tick: int | None = None
    last_notified_at: float | None = None
    next_due: float = 0.0
    failures: int = 0
    delivered: int = 0
    client: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            **self.request.to_json(),
            "state": self.state,
            "createdTick": self.created_tick,
            "lastNotifiedTick": self.last_notified_tick,
        }


@dataclass(frozen=True)
class NotificationPayload:
    subscription_id: str
    rai_content: dict
    timestamp: str
    validity_period: int

    def to_json(self) -> dict:
        return {
            "subscription_id": self.subscription_id,
            "rai_content": dict(self.rai_content),
            "timestamp": self.timestamp,
            "validity_period": self.validity_period,
        }


def build_notification(sub: Subscription, sample: AnalyticsSample | None,
                       metric_filter: Sequence[str], now: float) -> NotificationPayload:
    if sample is None:
        raise NoData("store is empty")
    metrics = sample.metrics()
    return NotificationPayload(
        subscription_id=sub.id,
        rai_content={name: metrics[name] for name in metric_filter},
        timestamp=iso_timestamp(now),
        validity_period=math.ceil(sub.request.period_s),
    )


Sender = Callable[[str, dict], bool]


class Y1Producer:
    """Subscription table plus the periodic dispatcher.

    ``sender(url, payload_json)`` performs one outbound POST and returns
    whether the consumer accepted it.
    """

    def __init__(self, store: SdlStore, cell: CellKey, clock: VirtualClock,
                 sender: Sender | None = None, test_mode: bool = False,
                 max_failures: int = DEFAULT_MAX_FAILURES):
        self.store = store
        self.cell = cell
        self.clock = clock
        self.sender = sender
        self.test_mode = test_mode
        self.max_failures = max_failures
        self._subs: dict[str, Subscription] = {}
        self._lock = threading.RLock()
        self.sent_log: list[NotificationPayload] = []
        self._dispatch_thread: threading.Thread | None = None

    # -- lifecycle ----------------------------------------------------------

    def _check_auth(self, identity: str | None) -> None:
        if identity is None and not self.test_mode:
            raise Unauthenticated("client certificate required")

    def handle_subscribe(self, req: SubscriptionRequest, client_identity: str | None) -> Subscription:
        self._check_auth(client_identity)
        now = self.clock.now()
        sub = Subscription(
            id=secrets.token_hex(16),
            request=req,
            state=ACTIVE,
            created_tick=math.floor(now),
            next_due=now,
            client=client_identity,
        )
        with self._lock:
            self._subs[sub.id] = sub
        logger.info("subscription %s created for %s (period %ss)", sub.id,
                    req.notification_target_address, req.period_s)
        return sub

    def handle_unsubscribe(self, sub_id: str, client_identity: str | None = None) -> None:
        self._check_auth(client_identity)
        with self._lock:
            sub = self._subs.pop(sub_id, None)
            if sub is None:
                raise NotFound(f"no subscription {sub_id!r}")
            sub.state = CANCELLED
        logger.info("subscription %s cancelled", sub_id)

    def handle_update(self, sub_id: str, doc: Any, client_identity: str | None = None) -> Subscription:
        self._check_auth(client_identity)
        with self._lock:
            sub = self._subs.get(sub_id)
            if sub is None:
                raise NotFound(f"no subscription {sub_id!r}")
            if not isinstance(doc, dict):
                raise BadRequest("update body must be a JSON object")
            criteria = doc.get("notificationCriteria")
            if set(doc) != {"notificationCriteria"} or not isinstance(criteria, dict) \
                    or set(criteria) != {"periodSeconds"}:
                raise UnsupportedUpdate("only notificationCriteria.periodSeconds may be updated")
            period = criteria["periodSeconds"]
            if isinstance(period, bool) or not isinstance(period, (int, float)) \
                    or not math.isfinite(period) or period <= 0:
                raise BadRequest("periodSeconds must be > 0")
            sub.request = replace(sub.request, period_s=float(period))
            if sub.last_notified_at is not None:
                sub.next_due = sub.last_notified_at + float(period)
            return sub

    def get(self, sub_id: str) -> Subscription | None:
        with self._lock:
            return self._subs.get(sub_id)

    def active(self) -> list[Subscription]:
        with self._lock:
            return [s for s in self._subs.values() if s.state == ACTIVE]

    # -- dispatch -----------------------------------------------------------

    def dispatch_due(self, now: float | None = None) -> list[NotificationPayload]:
        """Send one notification to every ACTIVE subscription that is due."""
        now = self.clock.now() if now is None else now
        sample = self.store.latest(self.cell)
        sent = []
        for sub in self.active():
            if now + 1e-9 < sub.next_due:
                continue
            period = sub.request.period_s
            # Missed periods are dropped, not queued.
            while sub.next_due <= now + 1e-9:
                sub.next_due += period
            try:
                payload = build_notification(sub, sample, sub.request.rai_filter, now)
            except NoData:
                continue
            # Held across the send so a concurrent unsubscribe either precedes
            # this delivery entirely or follows it.
            with self._lock:
                if sub.state != ACTIVE:
                    continue
                if self._deliver(sub, payload, now):
                    sent.append(payload)
        return sent

    def _deliver(self, sub: Subscription, payload: NotificationPayload, now: float) -> bool:
        ok = False
        if self.sender is not None:
            try:
                ok = self.sender(sub.request.notification_target_address, payload.to_json())
            except ConnectionFailed as exc:
                logger.warning("delivery to %s failed: %s", sub.request.notification_target_address, exc)
        with self._lock:
            if ok:
                sub.failures = 0
                sub.delivered += 1
                sub.last_notified_tick = math.floor(now)
                sub.last_notified_at = now
                self.sent_log.append(payload)
                return True
            sub.failures += 1
            if sub.failures >= self.max_failures and sub.state == ACTIVE:
                sub.state = CANCELLED
                self._subs.pop(sub.id, None)
                logger.warning("subscription %s auto-cancelled after %d failures",
                               sub.id, sub.failures)
        return False

    def start_dispatcher(self) -> None:
        """Dispatch on every clock advance, on a background thread."""
        def loop():
            last = self.clock.now()
            while True:
                now = self.clock.wait_past(last)
                if now is None:
                    return
                last = now
                try:
                    self.dispatch_due(now)
                except Exception:
                    logger.exception("dispatch failed at t=%s", now)
                self.dispatched_through = now

        self.dispatched_through = self.clock.now()
        self._dispatch_thread = threading.Thread(target=loop, daemon=True, name="y1-dispatch")
        self._dispatch_thread.start()

    def stop_dispatcher(self) -> None:
        self.clock.close()
        if self._dispatch_thread:
            self._dispatch_thread.join(timeout=5)

    # -- HTTP ---------------------------------------------------------------

    def route(self, method: str, path: str, query: dict, body: bytes,
              identity: str | None) -> tuple[int, Any]:
        try:
            if method == "POST" and path == SUBSCRIBE_PATH:
                req = SubscriptionRequest.from_json(_parse(body))
                return 201, self.handle_subscribe(req, identity).to_json()
            if method == "DELETE" and path == UNSUBSCRIBE_PATH:
                sub_id = query.get("id")
                if not sub_id:
                    raise BadRequest("id query parameter is required")
                self.handle_unsubscribe(sub_id, identity)
                return 204, None
            if method == "PUT" and path.startswith(API_ROOT + "/"):
                sub_id = path[len(API_ROOT) + 1:]
                if sub_id in ("subscribe", "unsubscribe") or "/" in sub_id:
                    return 404, {"error": "not found"}
                return 200, self.handle_update(sub_id, _parse(body), identity).to_json()
        except Y1Error as exc:
            return exc.status, {"error": type(exc).__name__, "detail": str(exc)}
        return 404, {"error": "not found"}


def _parse(body: bytes) -> Any:
    try:
        return json.loads(body or b"null")
    except (ValueError, UnicodeDecodeError) as exc:
        raise BadRequest(f"malformed JSON: {exc}") from exc


def transport_sender(transport) -> Sender:
    """Adapt a transport's ``request`` into a producer sender."""
    def send(url: str, payload: dict) -> bool:
        status, _ = transport.request("POST", url, payload)
        return 200 <= status < 300
    return send
