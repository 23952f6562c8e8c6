"""Jamming controller driven by relayed Y1 analytics.

Four strategies decide JAM / NO_JAM once per tick:

* ``ALWAYS_ON`` jams every tick.
* ``RANDOM`` jams with a fixed probability, independently per tick.
* ``THRESHOLD`` jams while the last observed bitrate is at or above theta.
* ``CLUSTERING`` classifies the last observed feature vector against a
  trained :class:`~y1jamlab.profiler.ClusterModel` and jams unless the
  nearest cluster is in the allow set.

A budget gate then caps the number of JAM ticks per session.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import profiler
from .clock import tick_of

logger = logging.getLogger(__name__)

ALWAYS_ON = "ALWAYS_ON"
RANDOM = "RANDOM"
THRESHOLD = "THRESHOLD"
CLUSTERING = "CLUSTERING"
KINDS = (ALWAYS_ON, RANDOM, THRESHOLD, CLUSTERING)

JAM = "JAM"
NO_JAM = "NO_JAM"

STALE_AFTER_TICKS = 3
DECISION_LOG_COLUMNS = ("tick", "verdict", "reason", "cqi", "mcs", "bitrate_bps", "bler_pct",
                        "analytics_tick")


class StrategyError(ValueError):
    pass


@dataclass
class StrategyConfig:
    kind: str
    theta_bps: float | None = None
    duty_p: float | None = None
    model: profiler.ClusterModel | None = None
    allow_set: frozenset[int] | None = None
    rng_seed: int = 0
    burst_len: int = 1
    label: str = ""

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in KINDS:
            raise StrategyError(f"unknown strategy {self.kind!r}")
        if self.kind == THRESHOLD:
            if self.theta_bps is None:
                self.theta_bps = 1000.0
            if self.theta_bps < 0:
                raise StrategyError("theta_bps must be >= 0")
        if self.kind == RANDOM:
            if self.duty_p is None or not 0.0 <= self.duty_p <= 1.0:
                raise StrategyError("RANDOM needs duty_p in [0, 1]")
            if self.burst_len < 1:
                raise StrategyError("burst_len must be >= 1")
        if self.kind == CLUSTERING:
            if self.model is None:
                raise StrategyError("CLUSTERING needs a trained model")
            if self.allow_set is None:
                raise StrategyError("CLUSTERING needs an allow set")
            self.allow_set = frozenset(self.allow_set)
        if not self.label:
            self.label = self.kind.lower()

    @classmethod
    def targeting(cls, model: profiler.ClusterModel, targets: Iterable[str],
                  **kwargs) -> "StrategyConfig":
        """Clustering strategy that jams the named semantic classes."""
        targets = [t.upper() for t in targets]
        return cls(CLUSTERING, model=model, allow_set=target_to_allow(model, targets),
                   label=kwargs.pop("label", "+".join(t.lower() for t in targets)), **kwargs)


def target_to_allow(model: profiler.ClusterModel, targets: Iterable[str]) -> frozenset[int]:
    """Allow (do-not-jam) set = every cluster index except the targeted ones."""
    targeted: set[int] = set()
    for name in targets:
        found = model.indices_for(name)
        if not found:
            raise StrategyError(f"model has no {name} cluster")
        targeted |= found
    return frozenset(range(model.k)) - targeted


# -- per-tick rules ---------------------------------------------------------

def decide_always_on() -> str:
    return JAM


def decide_random(tick: int, duty_p: float, rng: np.random.Generator) -> str:
    return JAM if rng.random() < duty_p else NO_JAM


def decide_threshold(latest_rai: dict | None, theta_bps: float) -> tuple[str, str]:
    if not latest_rai or "dl_bitrate_bps" not in latest_rai:
        return NO_JAM, "no-data"
    bitrate = float(latest_rai["dl_bitrate_bps"])
    if bitrate >= theta_bps:
        return JAM, f"threshold:{bitrate:.0f}>={theta_bps:g}"
    return NO_JAM, f"threshold:{bitrate:.0f}<{theta_bps:g}"


def decide_clustering(latest_rai: dict | None, model: profiler.ClusterModel,
                      allow_set: frozenset[int]) -> tuple[str, str]:
    x = profiler.features_from_metrics(latest_rai or {})
    if x is None:
        return NO_JAM, "no-data"
    j = profiler.classify(x, model)
    name = model.labels_semantic.get(j, "?")
    if j in allow_set:
        return NO_JAM, f"clustering:j={j}({name})in-allow"
    return JAM, f"clustering:j={j}({name})"


@dataclass
class BudgetState:
    budget_fraction: float | None
    total_ticks: int
    active_ticks: int = 0

    def __post_init__(self):
        if self.budget_fraction is not None and not 0.0 < self.budget_fraction <= 1.0:
            raise StrategyError("budget_fraction must be in (0, 1]")

    @property
    def limit(self) -> int | None:
        if self.budget_fraction is None:
            return None
        # Guard against 0.1 * 220 = 22.000000000000004.
        return math.ceil(round(self.budget_fraction * self.total_ticks, 9))


@dataclass(frozen=True)
class Snapshot:
    tick: int
    rai_content: dict


@dataclass(frozen=True)
class JamDecision:
    tick: int
    verdict: str
    reason: str
    snapshot: Snapshot | None = None

    @property
    def jam(self) -> bool:
        return self.verdict == JAM

    def row(self) -> dict:
        content = self.snapshot.rai_content if self.snapshot else {}
        return {
            "tick": self.tick,
            "verdict": self.verdict,
            "reason": self.reason,
            "cqi": content.get("dl_cqi", ""),
            "mcs": content.get("dl_mcs", ""),
            "bitrate_bps": content.get("dl_bitrate_bps", ""),
            "bler_pct": content.get("dl_bler_pct", ""),
            "analytics_tick": "" if self.snapshot is None else self.snapshot.tick,
        }


def budget_gate(verdict: str, state: BudgetState) -> tuple[str, bool]:
    """Apply the budget; returns (final verdict, suppressed?)."""
    if verdict != JAM:
        return NO_JAM, False
    limit = state.limit
    if limit is None or state.active_ticks + 1 <= limit:
        state.active_ticks += 1
        return JAM, False
    return NO_JAM, True


# -- controller -------------------------------------------------------------

class JammerController:
    """Holds the newest analytics snapshot and emits one decision per tick."""

    def __init__(self, strategy: StrategyConfig | None, budget: BudgetState,
                 record_history: bool = False):
        # strategy None: a passive listener that never jams (baseline runs).
        self.strategy = strategy
        self.budget = budget
        self.decisions: list[JamDecision] = []
        self._latest: Snapshot | None = None
        self._cond = threading.Condition()
        self._rng = np.random.default_rng(strategy.rng_seed if strategy else 0)
        self._burst_left = 0
        self.lines_received = 0
        self.history: list[Snapshot] | None = [] if record_history else None

    def ingest_line(self, line: bytes | str) -> None:
        try:
            frame = json.loads(line)
            snap = Snapshot(tick_of(frame["timestamp"]), dict(frame.get("rai_content") or {}))
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("unparseable relay line %r: %s", line, exc)
            return
        with self._cond:
            self.lines_received += 1
            self._latest = snap
            if self.history is not None:
                self.history.append(snap)
            self._cond.notify_all()

    def latest(self) -> Snapshot | None:
        with self._cond:
            return self._latest

    def wait_for_analytics(self, tick: int, timeout: float) -> bool:
        with self._cond:
            return self._cond.wait_for(
                lambda: self._latest is not None and self._latest.tick >= tick, timeout)

    def _random_verdict(self, tick: int) -> tuple[str, str]:
        s = self.strategy
        if s.burst_len == 1:
            return decide_random(tick, s.duty_p, self._rng), f"random:p={s.duty_p:g}"
        # Renewal process whose long-run on-fraction equals duty_p.
        u = self._rng.random()
        if self._burst_left > 0:
            self._burst_left -= 1
            return JAM, "random:burst"
        L = s.burst_len
        start_p = s.duty_p / (L - s.duty_p * (L - 1)) if s.duty_p < 1 else 1.0
        if u < start_p:
            self._burst_left = L - 1
            return JAM, "random:burst"
        return NO_JAM, f"random:p={s.duty_p:g}"

    def decide(self, tick: int) -> JamDecision:
        s = self.strategy
        snap = self.latest()
        if s is None:
            verdict, reason = NO_JAM, "no-jammer"
        elif s.kind == ALWAYS_ON:
            verdict, reason = decide_always_on(), "always-on"
        elif s.kind == RANDOM:
            verdict, reason = self._random_verdict(tick)
        elif snap is None:
            verdict, reason = NO_JAM, "no-data"
        elif tick - snap.tick > STALE_AFTER_TICKS:
            verdict, reason = NO_JAM, "stale-data"
        elif s.kind == THRESHOLD:
            verdict, reason = decide_threshold(snap.rai_content, s.theta_bps)
        else:
            verdict, reason = decide_clustering(snap.rai_content, s.model, s.allow_set)
        final, suppressed = budget_gate(verdict, self.budget)
        decision = JamDecision(tick, final, "budget-exhausted" if suppressed else reason, snap)
        self.decisions.append(decision)
        return decision

    @property
    def active_ticks(self) -> int:
        return sum(d.jam for d in self.decisions)


def write_decision_log(path: str | Path, decisions: Iterable[JamDecision]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DECISION_LOG_COLUMNS)
        writer.writeheader()
        for d in decisions:
            writer.writerow(d.row())


def read_decision_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- live-mode sockets --------------------------------------------------------

class _RelayHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if line.strip():
                self.server.controller.ingest_line(line)


class _ControlHandler(socketserver.StreamRequestHandler):
    """Driver sends ``{"tick": t}``; the jammer answers ``{"tick": t, "verdict": ...}``."""

    def handle(self):
        controller = self.server.controller
        for line in self.rfile:
            try:
                tick = int(json.loads(line)["tick"])
            except (ValueError, KeyError, TypeError):
                logger.warning("bad control line %r", line)
                continue
            # Wait for the analytics of the previous tick before deciding.
            if tick > 0:
                controller.wait_for_analytics(tick - 1, self.server.sync_timeout)
            decision = controller.decide(tick)
            reply = {"tick": tick, "verdict": decision.verdict}
            self.wfile.write((json.dumps(reply) + "\n").encode())
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class JammerService:
    """Relay listener (NDJSON in) plus control listener (NDJSON decisions out)."""

    def __init__(self, controller: JammerController, host: str = "127.0.0.1",
                 relay_port: int = 0, control_port: int = 0, sync_timeout: float = 1.0):
        self.controller = controller
        self.relay_server = _Server((host, relay_port), _RelayHandler)
        self.control_server = _Server((host, control_port), _ControlHandler)
        for srv in (self.relay_server, self.control_server):
            srv.controller = controller
            srv.sync_timeout = sync_timeout
        self._threads: list[threading.Thread] = []

    @property
    def relay_address(self) -> tuple[str, int]:
        return self.relay_server.server_address[:2]

    @property
    def control_address(self) -> tuple[str, int]:
        return self.control_server.server_address[:2]

    def start(self) -> "JammerService":
        for srv in (self.relay_server, self.control_server):
            t = threading.Thread(target=srv.serve_forever, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        for srv in (self.relay_server, self.control_server):
            srv.shutdown()
            srv.server_close()


class ControlClient:
    """Simulation-driver side of the control channel."""

    def __init__(self, address: tuple[str, int], timeout: float = 10.0):
        self.sock = socket.create_connection(address, timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = self.sock.makefile("rb")

    def request(self, tick: int) -> bool:
        self.sock.sendall((json.dumps({"tick": tick}) + "\n").encode())
        reply = json.loads(self._reader.readline())
        if reply.get("tick") != tick:
            raise RuntimeError(f"control reply for tick {reply.get('tick')} != {tick}")
        return reply["verdict"] == JAM

    def close(self) -> None:
        self._reader.close()
        self.sock.close()


@dataclass
class JammerConfig:
    """Parsed jammer config file (key = value)."""

    strategy: str = THRESHOLD
    theta_bps: float = 1000.0
    duty_p: float = 0.5
    budget: float | None = None
    seed: int = 0
    model_path: str | None = None
    targets: list[str] = field(default_factory=lambda: ["HIGH"])
    burst_len: int = 1

    def build(self) -> StrategyConfig:
        kind = self.strategy.upper()
        if kind == CLUSTERING:
            if not self.model_path:
                raise StrategyError("CLUSTERING needs model_path")
            model = profiler.ClusterModel.load(self.model_path)
            return StrategyConfig.targeting(model, self.targets, rng_seed=self.seed)
        return StrategyConfig(kind, theta_bps=self.theta_bps if kind == THRESHOLD else None,
                              duty_p=self.duty_p if kind == RANDOM else None,
                              rng_seed=self.seed, burst_len=self.burst_len)


def jammer_config_from_mapping(values: dict[str, str]) -> JammerConfig:
    cfg = JammerConfig()
    try:
        if "strategy" in values:
            cfg.strategy = values["strategy"].strip()
        if "theta_bps" in values:
            cfg.theta_bps = float(values["theta_bps"])
        if "duty_p" in values:
            cfg.duty_p = float(values["duty_p"])
        if values.get("budget", "").strip().lower() not in ("", "unlimited", "none"):
            cfg.budget = float(values["budget"])
        if "seed" in values:
            cfg.seed = int(values["seed"])
        if "model_path" in values:
            cfg.model_path = values["model_path"].strip()
        if "targets" in values:
            cfg.targets = [t.strip().upper() for t in values["targets"].split(",") if t.strip()]
        if "burst_len" in values:
            cfg.burst_len = int(values["burst_len"])
    except ValueError as exc:
        raise StrategyError(f"bad jammer config: {exc}") from exc
    return cfg
