"""HTTP plumbing shared by the producer and consumer.

Both services expose a ``route(method, path, query, body, identity)``
callable returning ``(status, json_or_None)``. The same callable is served
over real sockets (:class:`JsonHttpServer`) or called directly through
:class:`InProcessTransport` when the whole loop runs in virtual time.
"""

from __future__ import annotations

import json
import logging
import os
import ssl
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import parse_qs, urlsplit

import requests

logger = logging.getLogger(__name__)

Route = Callable[[str, str, dict, bytes, "str | None"], "tuple[int, Any]"]


class ConnectionFailed(ConnectionError):
    pass


@dataclass(frozen=True)
class TlsMaterial:
    cert: str
    key: str
    ca: str

    @classmethod
    def from_env(cls, environ=os.environ) -> "TlsMaterial | None":
        """None when ``Y1_TLS_DISABLE=1`` (test mode) or nothing is configured."""
        if environ.get("Y1_TLS_DISABLE") == "1":
            return None
        paths = [environ.get(k) for k in ("Y1_TLS_CERT", "Y1_TLS_KEY", "Y1_TLS_CA")]
        if not all(paths):
            return None
        return cls(*paths)

    def server_context(self) -> ssl.SSLContext:
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        ctx.minimum_version = ssl.TLSVersion.TLSv1_2
        ctx.load_cert_chain(self.cert, self.key)
        ctx.load_verify_locations(self.ca)
        ctx.verify_mode = ssl.CERT_REQUIRED
        return ctx


def peer_identity(sock) -> str | None:
    getpeercert = getattr(sock, "getpeercert", None)
    if getpeercert is None:
        return None
    cert = getpeercert()
    if not cert:
        return None
    for rdn in cert.get("subject", ()):
        for key, value in rdn:
            if key == "commonName":
                return value
    return "unknown"


class _Handler(BaseHTTPRequestHandler):
    server: "JsonHttpServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _dispatch(self):
        parts = urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        query = {k: v[0] for k, v in parse_qs(parts.query).items()}
        try:
            status, payload = self.server.route(
                self.command, parts.path, query, body, peer_identity(self.connection))
        except Exception:
            logger.exception("handler crashed for %s %s", self.command, self.path)
            status, payload = 500, {"error": "internal error"}
        data = b"" if payload is None else json.dumps(payload).encode()
        self.send_response(status)
        if data:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        if data:
            self.wfile.write(data)

    do_GET = do_POST = do_PUT = do_DELETE = _dispatch


class JsonHttpServer(ThreadingHTTPServer):
    """Threaded JSON server; with ``tls`` set, clients must present a CA-signed cert."""

    daemon_threads = True

    def __init__(self, route: Route, host: str = "127.0.0.1", port: int = 0,
                 tls: TlsMaterial | None = None):
        self.route = route
        self.tls = tls
        super().__init__((host, port), _Handler)
        if tls is not None:
            self.socket = tls.server_context().wrap_socket(
                self.socket, server_side=True, do_handshake_on_connect=False)
        self._thread: threading.Thread | None = None

    def finish_request(self, request, client_address):
        if self.tls is not None:
            try:
                request.do_handshake()
            except (ssl.SSLError, OSError) as exc:
                logger.info("TLS handshake rejected from %s: %s", client_address, exc)
                return
        super().finish_request(request, client_address)

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        scheme = "https" if self.tls else "http"
        return f"{scheme}://{host}:{port}"

    def start(self) -> "JsonHttpServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True,
                                        name=f"http-{self.server_address[1]}")
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread:
            self._thread.join(timeout=5)


class HttpTransport:
    """Outbound JSON requests, optionally authenticated with a client cert."""

    def __init__(self, tls: TlsMaterial | None = None, timeout: float = 5.0):
        self.session = requests.Session()
        self.timeout = timeout
        self._tls_kwargs: dict = {}
        if tls is not None:
            # Per-request kwargs: REQUESTS_CA_BUNDLE would otherwise override session.verify.
            self.session.trust_env = False
            self._tls_kwargs = {"cert": (tls.cert, tls.key), "verify": tls.ca}

    def request(self, method: str, url: str, body: Any = None,
                raw: bytes | None = None) -> tuple[int, Any]:
        data = raw if raw is not None else (None if body is None else json.dumps(body).encode())
        headers = {"Content-Type": "application/json"} if data is not None else {}
        try:
            resp = self.session.request(method, url, data=data, headers=headers,
                                        timeout=self.timeout, **self._tls_kwargs)
        except requests.RequestException as exc:
            raise ConnectionFailed(f"{method} {url}: {exc}") from exc
        try:
            payload = resp.json() if resp.content else None
        except ValueError:
            payload = resp.text
        return resp.status_code, payload

    def close(self) -> None:
        self.session.close()


class InProcessTransport:
    """Routes requests to registered in-process services by scheme://host:port."""

    def __init__(self, identity: str | None = "in-process"):
        self.identity = identity
        self._routes: dict[str, Route] = {}
        self.down: set[str] = set()

    def register(self, base_url: str, route: Route) -> None:
        self._routes[base_url.rstrip("/")] = route

    def request(self, method: str, url: str, body: Any = None,
                raw: bytes | None = None) -> tuple[int, Any]:
        parts = urlsplit(url)
        base = f"{parts.scheme}://{parts.netloc}"
        route = self._routes.get(base)
        if route is None or base in self.down:
            raise ConnectionFailed(f"{method} {url}: no route")
        data = raw if raw is not None else (b"" if body is None else json.dumps(body).encode())
        query = {k: v[0] for k, v in parse_qs(parts.query).items()}
        status, payload = route(method, parts.path, query, data, self.identity)
        # Round-trip through JSON so callers see exactly what a socket would carry.
        return status, None if payload is None else json.loads(json.dumps(payload))

    def close(self) -> None:
        pass
