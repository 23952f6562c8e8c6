"""Closed-loop experiment runner.

Per tick ``t`` the loop is::

    jammer decides tick t from the newest relayed analytics (tick t-1)
    simulator steps tick t with that verdict
    sample stored in the SDL, clock advanced to t
    producer notifies the consumer, consumer relays to the jammer

VIRTUAL mode calls every component in-process; LIVE mode runs the producer,
consumer and jammer as real localhost services and exchanges the same JSON
over HTTP and TCP.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import profiler
from .clock import VirtualClock
from .jammer import (
    RANDOM,
    BudgetState,
    ControlClient,
    JamDecision,
    JammerController,
    JammerService,
    StrategyConfig,
)
from .ran_sim import (
    METRIC_NAMES,
    LinkModelParams,
    RanSimulator,
    TrafficScenario,
    scenario_part_a,
    scenario_part_b,
)
from .sdl_store import CellKey, SdlStore
from .transport import HttpTransport, InProcessTransport, JsonHttpServer, TlsMaterial
from .y1_consumer import NOTIFY_PATH, CallbackRelay, TcpRelay, Y1Consumer
from .y1_producer import PERIODIC, SUPPORTED_RAI_TYPE, SubscriptionRequest, Y1Producer, transport_sender

logger = logging.getLogger(__name__)

VIRTUAL = "virtual"
LIVE = "live"
PRODUCER_URL = "https://producer.local:8443"
CONSUMER_URL = "https://consumer.local:8443"


class ConfigError(ValueError):
    pass


class ModelMissing(ConfigError):
    pass


class PortBindError(RuntimeError):
    pass


class NoActiveTraffic(ValueError):
    pass


class ZeroBaseline(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str = "part_a"
    seed: int = 42
    strategy: StrategyConfig | None = None
    budget: float | None = None
    link: LinkModelParams = field(default_factory=LinkModelParams)
    mode: str = VIRTUAL
    output_dir: str | None = None
    period_s: float = 1.0
    tick_s: float = 0.1
    tls: TlsMaterial | None = None
    scenario_obj: TrafficScenario | None = None

    def validate(self) -> None:
        if self.scenario not in ("part_a", "part_b", "custom"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "custom" and self.scenario_obj is None:
            raise ConfigError("custom scenario needs scenario_obj")
        if self.mode not in (VIRTUAL, LIVE):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.budget is not None and not 0.0 < self.budget <= 1.0:
            raise ConfigError("budget must be in (0, 1]")
        if self.strategy is not None and self.strategy.kind == "CLUSTERING" \
                and self.strategy.model is None:
            raise ModelMissing("CLUSTERING strategy needs a trained model")
        if self.tick_s < 0:
            raise ConfigError("tick_s must be >= 0")

    def build_scenario(self) -> TrafficScenario:
        if self.scenario_obj is not None:
            return self.scenario_obj
        if self.scenario == "part_a":
            return scenario_part_a(self.seed)
        return scenario_part_b(seed=self.seed)

    @property
    def label(self) -> str:
        return "none" if self.strategy is None else self.strategy.label


@dataclass
class MetricsReport:
    scenario: str
    strategy: str
    seed: int
    mode: str
    budget: float | None
    total_ticks: int
    active_ticks: int
    mean_bler_pct: float
    mean_snr_db: float
    mean_bitrate_bps: float
    baseline_bitrate_bps: float
    bitrate_drop_pct: float
    active_time_pct: float
    notifications: int
    records: list[dict] = field(repr=False, default_factory=list)
    decisions: list[JamDecision] = field(repr=False, default_factory=list)
    cdf_tables: dict[str, list[tuple[float, float]]] = field(repr=False, default_factory=dict)

    def summary(self) -> dict:
        out = asdict(self)
        for key in ("records", "decisions", "cdf_tables"):
            out.pop(key)
        return out


def bitrate_drop(baseline_bps: float, observed_bps: float) -> float:
    """Relative throughput loss in percent; negative values are kept."""
    if baseline_bps <= 0:
        raise ZeroBaseline("baseline bitrate must be > 0")
    return 100.0 * (baseline_bps - observed_bps) / baseline_bps


def cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """(value, fraction <= value) at each distinct value, ascending."""
    arr = np.sort(np.asarray(values, dtype=float))
    if arr.size == 0:
        return []
    uniq, counts = np.unique(arr, return_counts=True)
    frac = np.cumsum(counts) / arr.size
    return [(float(v), float(f)) for v, f in zip(uniq, frac)]


def summarize(records: Sequence[dict]) -> dict:
    """Active-tick means and CDF tables for BLER, SNR and bitrate."""
    active = [r for r in records if r["offered_rate_bps"] > 0]
    if not active:
        raise NoActiveTraffic("no tick carried offered traffic")
    bler = [r["dl_bler_pct"] for r in active]
    snr = [r["snr_db"] for r in active]
    bitrate = [r["dl_bitrate_bps"] for r in active]
    return {
        "active_ticks": len(active),
        "mean_bler_pct": float(np.mean(bler)),
        "mean_snr_db": float(np.mean(snr)),
        "mean_bitrate_bps": float(np.mean(bitrate)),
        "cdf_tables": {"bler": cdf(bler), "snr": cdf(snr), "bitrate": cdf(bitrate)},
    }


# -- loops --------------------------------------------------------------------

@dataclass
class _LoopResult:
    records: list[dict]
    decisions: list[JamDecision]
    notifications: int
    controller: JammerController


def _record(sample, offered: int, jam: bool) -> dict:
    row = {"tick": sample.tick, "offered_rate_bps": offered, "jam": int(jam),
           "snr_db": sample.snr_db}
    row.update(sample.metrics())
    return row


def _subscription(period_s: float, target: str) -> SubscriptionRequest:
    return SubscriptionRequest(SUPPORTED_RAI_TYPE, "1.0", PERIODIC, period_s, target)


def _run_virtual(sim: RanSimulator, n_ticks: int, controller: JammerController,
                 period_s: float) -> _LoopResult:
    clock = VirtualClock(-1.0)
    store = SdlStore()
    cell = CellKey(sim.params.pci, sim.params.carrier_id)
    transport = InProcessTransport()
    producer = Y1Producer(store, cell, clock, sender=transport_sender(transport), test_mode=True)
    consumer = Y1Consumer(transport, relay=CallbackRelay(controller.ingest_line))
    transport.register(PRODUCER_URL, producer.route)
    transport.register(CONSUMER_URL, consumer.route)
    consumer.subscribe(PRODUCER_URL, _subscription(period_s, CONSUMER_URL + NOTIFY_PATH))

    records = []
    for t in range(n_ticks):
        decision = controller.decide(t)
        offered = sim.offered_rate(t)
        sample = sim.advance(decision.jam)
        store.put_sample(cell, sample)
        clock.advance_to(t)
        producer.dispatch_due(t)
        records.append(_record(sample, offered, decision.jam))
    return _LoopResult(records, controller.decisions, len(producer.sent_log), controller)


def _run_live(sim: RanSimulator, n_ticks: int, controller: JammerController,
              period_s: float, tick_s: float, tls: TlsMaterial | None) -> _LoopResult:
    clock = VirtualClock(-1.0)
    store = SdlStore()
    cell = CellKey(sim.params.pci, sim.params.carrier_id)
    out_transport = HttpTransport(tls)
    producer = Y1Producer(store, cell, clock, sender=transport_sender(out_transport),
                          test_mode=tls is None)
    sync_timeout = max(2.0, 20 * tick_s)
    try:
        producer_srv = JsonHttpServer(producer.route, tls=tls)
        jammer_srv = JammerService(controller, sync_timeout=sync_timeout)
        relay = TcpRelay(*jammer_srv.relay_address)
        consumer = Y1Consumer(HttpTransport(tls), relay=relay)
        consumer_srv = JsonHttpServer(consumer.route, tls=tls)
    except OSError as exc:
        raise PortBindError(str(exc)) from exc

    started = []
    control = None
    try:
        # store -> producer -> consumer -> jammer -> simulator
        producer_srv.start(); started.append(producer_srv)
        producer.start_dispatcher()
        consumer_srv.start(); started.append(consumer_srv)
        jammer_srv.start(); started.append(jammer_srv)
        consumer.subscribe(producer_srv.base_url,
                           _subscription(period_s, consumer_srv.base_url + NOTIFY_PATH))
        control = ControlClient(jammer_srv.control_address, timeout=sync_timeout + 5)

        records = []
        for t in range(n_ticks):
            t0 = time.monotonic()
            jam = control.request(t)
            offered = sim.offered_rate(t)
            sample = sim.advance(jam)
            store.put_sample(cell, sample)
            clock.advance_to(t)
            records.append(_record(sample, offered, jam))
            remaining = tick_s - (time.monotonic() - t0)
            if remaining > 0:
                time.sleep(remaining)
        controller.wait_for_analytics(n_ticks - 1, sync_timeout)
        notifications = len(producer.sent_log)
    finally:
        if control is not None:
            control.close()
        producer.stop_dispatcher()
        relay.close()
        for srv in reversed(started):
            srv.stop()
        out_transport.close()
    return _LoopResult(records, list(controller.decisions), notifications, controller)


# -- experiments ----------------------------------------------------------------

_baseline_cache: dict[str, float] = {}


def _baseline_key(scenario: TrafficScenario, link: LinkModelParams, seed: int) -> str:
    doc = json.dumps({"segments": scenario.segments, "seed": seed, "link": asdict(link)},
                     sort_keys=True, default=list)
    return hashlib.sha256(doc.encode()).hexdigest()


def baseline_bitrate(scenario: TrafficScenario, link: LinkModelParams, seed: int,
                     period_s: float = 1.0) -> float:
    """Mean active-tick bitrate with no jammer; cached by content hash."""
    key = _baseline_key(scenario, link, seed)
    if key not in _baseline_cache:
        sim = RanSimulator(scenario, link, seed=seed)
        controller = JammerController(None, BudgetState(None, scenario.total_s))
        result = _run_virtual(sim, scenario.total_s, controller, period_s)
        _baseline_cache[key] = summarize(result.records)["mean_bitrate_bps"]
    return _baseline_cache[key]


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    cfg.validate()
    scenario = cfg.build_scenario()
    baseline = baseline_bitrate(scenario, cfg.link, cfg.seed, cfg.period_s)

    strategy = cfg.strategy
    controller = JammerController(strategy, BudgetState(cfg.budget, scenario.total_s))
    sim = RanSimulator(scenario, cfg.link, seed=cfg.seed)
    if cfg.mode == VIRTUAL:
        result = _run_virtual(sim, scenario.total_s, controller, cfg.period_s)
    else:
        result = _run_live(sim, scenario.total_s, controller, cfg.period_s, cfg.tick_s, cfg.tls)

    agg = summarize(result.records)
    jammed = sum(d.jam for d in result.decisions)
    report = MetricsReport(
        scenario=cfg.scenario,
        strategy=cfg.label,
        seed=cfg.seed,
        mode=cfg.mode,
        budget=cfg.budget,
        total_ticks=scenario.total_s,
        active_ticks=jammed,
        mean_bler_pct=agg["mean_bler_pct"],
        mean_snr_db=agg["mean_snr_db"],
        mean_bitrate_bps=agg["mean_bitrate_bps"],
        baseline_bitrate_bps=baseline,
        bitrate_drop_pct=bitrate_drop(baseline, agg["mean_bitrate_bps"]),
        active_time_pct=100.0 * jammed / scenario.total_s,
        notifications=result.notifications,
        records=result.records,
        decisions=result.decisions,
        cdf_tables=agg["cdf_tables"],
    )
    if cfg.output_dir:
        from .report import write_run
        write_run(report, cfg.output_dir)
    return report


@dataclass
class ProfileResult:
    model: profiler.ClusterModel
    X: np.ndarray


def collect_trace(scenario: TrafficScenario, link: LinkModelParams, seed: int,
                  n_samples: int, period_s: float = 1.0) -> np.ndarray:
    """Jam-free feature vectors as seen by the jammer through the relay."""
    sim = RanSimulator(scenario, link, seed=seed, cyclic=True)
    controller = JammerController(None, BudgetState(None, n_samples), record_history=True)
    _run_virtual(sim, n_samples, controller, period_s)
    rows = [profiler.features_from_metrics(s.rai_content) for s in controller.history]
    return np.array([r for r in rows if r is not None])


def profile_phase(scenario: TrafficScenario | None = None, link: LinkModelParams | None = None,
                  seed: int = 7, n_samples: int = 227, eps: float = 0.30,
                  min_pts: int = 10, out_path: str | None = None) -> ProfileResult:
    """Train the clustering model offline from a jam-free trace."""
    scenario = scenario or scenario_part_b()
    link = link or LinkModelParams()
    if n_samples < 200:
        raise ConfigError("profiling needs at least 200 samples")
    X = collect_trace(scenario, link, seed, n_samples)
    try:
        model = profiler.fit_model(X, eps=eps, min_pts=min_pts)
    except profiler.NoValidClusters as exc:
        raise profiler.NoValidClusters(
            f"{exc}; try `y1jamlab profile --sweep-eps 0.2,0.3,0.5` to pick eps") from exc
    if out_path:
        model.save(out_path)
    return ProfileResult(model, X)


SWEEP_STRATEGIES = ("random", "low", "medium", "high")


def sweep_strategy(name: str, budget: float, model: profiler.ClusterModel | None,
                   rng_seed: int) -> StrategyConfig:
    name = name.lower()
    if name == "random":
        return StrategyConfig(RANDOM, duty_p=budget, rng_seed=rng_seed, label="random")
    if name in ("low", "medium", "high", "idle"):
        if model is None:
            raise ModelMissing("clustering strategies need a trained model")
        return StrategyConfig.targeting(model, [name], label=name)
    if name in ("threshold", "always_on"):
        return StrategyConfig(name.upper(), label=name)
    raise ConfigError(f"unknown sweep strategy {name!r}")


@dataclass
class SweepResult:
    baseline_bps: float
    baseline_bler_pct: float
    cells: dict[tuple[float, str], MetricsReport]
    budgets: list[float]
    strategies: list[str]

    def rows(self) -> list[dict]:
        out = []
        for (budget, name), rep in self.cells.items():
            out.append({"budget_pct": round(100 * budget, 6), "strategy": name,
                        "bitrate_bps": rep.mean_bitrate_bps, "drop_pct": rep.bitrate_drop_pct,
                        "bler_pct": rep.mean_bler_pct, "active_ticks": rep.active_ticks,
                        "budget_limit": BudgetState(budget, rep.total_ticks).limit})
        return out


def budget_sweep(budgets: Sequence[float], strategies: Sequence[str] = SWEEP_STRATEGIES,
                 model: profiler.ClusterModel | None = None, seed: int = 0,
                 rng_seed: int = 1, link: LinkModelParams | None = None,
                 scenario: TrafficScenario | None = None) -> SweepResult:
    """One run per (budget, strategy) on the same traffic and channel seed."""
    link = link or LinkModelParams()
    scenario = scenario or scenario_part_b(seed=seed)
    cfg0 = ExperimentConfig(scenario="part_b", seed=seed, link=link, scenario_obj=scenario)
    baseline = run_experiment(cfg0)
    cells: dict[tuple[float, str], MetricsReport] = {}
    for budget in budgets:
        for name in strategies:
            cfg = ExperimentConfig(scenario="part_b", seed=seed, link=link, scenario_obj=scenario,
                                   strategy=sweep_strategy(name, budget, model, rng_seed),
                                   budget=budget)
            cells[(budget, name)] = run_experiment(cfg)
    return SweepResult(baseline.mean_bitrate_bps, baseline.mean_bler_pct, cells,
                       list(budgets), list(strategies))


__all__ = [
    "ExperimentConfig", "MetricsReport", "METRIC_NAMES", "bitrate_drop", "budget_sweep", "cdf",
    "profile_phase", "run_experiment", "summarize",
]
