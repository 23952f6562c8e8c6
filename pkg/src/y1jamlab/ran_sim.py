"""Discrete-time RAN link simulator.

One tick is one second. Each tick the simulator takes the offered downlink
rate of the current traffic segment and a boolean jam flag and emits an
:class:`AnalyticsSample` carrying the nine cell-level metrics exposed over Y1.

The radio channel is a two-state (clear / jammed) parametric model. Its
defaults are calibrated so that a 4 Mbps flow reproduces the clear-channel
and always-on-jammed operating points used throughout the experiments.
"""

from __future__ import annotations

import bisect
import configparser
import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Nine metric names, in the order they are exposed over Y1.
METRIC_NAMES: tuple[str, ...] = (
    "dl_cqi",
    "dl_mcs",
    "dl_bitrate_bps",
    "dl_bler_pct",
    "dl_latency_s",
    "dl_bytes",
    "pci",
    "carrier_id",
    "num_rach",
)

# Minimum SNR (dB) for CQI 1..15.
DEFAULT_CQI_THRESHOLDS: tuple[float, ...] = (
    -6.7, -4.7, -2.3, 0.2, 2.4, 4.3, 5.9, 8.1, 10.3, 11.7, 14.1, 16.3, 18.7, 21.0, 22.7,
)

# (minimum SNR dB, MCS index). Steps share the CQI breakpoints so that
# CQI and MCS move together.
DEFAULT_MCS_TABLE: tuple[tuple[float, int], ...] = (
    (-6.7, 0), (-4.7, 1), (-2.3, 2), (0.2, 4), (2.4, 6), (4.3, 8), (5.9, 11),
    (8.1, 13), (10.3, 16), (11.7, 18), (14.1, 20), (16.3, 22), (18.7, 24),
    (21.0, 26), (22.7, 28),
)

PART_A_RATE_BPS = 4_000_000
PART_B_CLASSES: tuple[tuple[int, float], ...] = (
    (4_000_000, 0.355),
    (2_000_000, 0.245),
    (500_000, 0.245),
    (0, 0.155),
)


class ConfigError(ValueError):
    """Raised for malformed simulator or scenario configuration."""


@dataclass(frozen=True)
class TrafficScenario:
    segments: tuple[tuple[int, int], ...]
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        for duration, rate in self.segments:
            if duration <= 0 or rate < 0:
                raise ConfigError(f"bad segment ({duration}, {rate})")

    @property
    def total_s(self) -> int:
        return sum(d for d, _ in self.segments)

    def rates(self) -> list[int]:
        """Offered rate for every tick, in order."""
        out: list[int] = []
        for duration, rate in self.segments:
            out.extend([rate] * duration)
        return out

    def active_ticks(self) -> int:
        return sum(d for d, r in self.segments if r > 0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tick", "offered_rate_bps"])
        for tick, rate in enumerate(self.rates()):
            writer.writerow([tick, rate])
        return buf.getvalue()


@dataclass(frozen=True)
class LinkModelParams:
    snr_clear_db: float = 19.6
    snr_jam_delta_db: float = 10.9
    bler_jam_pct: float = 64.3
    bler_clear_pct: float = 0.7
    throughput_retain_jam: float = 0.5387
    overhead_factor: float = 0.98732
    latency_clear_s: float = 0.012
    latency_jam_s: float = 0.048
    snr_sigma_db: float = 0.5
    bler_sigma_pct: float = 2.0
    rach_rate_clear: float = 0.02
    rach_rate_jam: float = 0.5
    pci: int = 1
    carrier_id: int = 0
    cqi_table: tuple[float, ...] = DEFAULT_CQI_THRESHOLDS
    mcs_table: tuple[tuple[float, int], ...] = DEFAULT_MCS_TABLE

    def __post_init__(self):
        if self.snr_jam_delta_db < 0:
            raise ConfigError("snr_jam_delta_db must be >= 0")
        if not 0.0 <= self.throughput_retain_jam <= 1.0:
            raise ConfigError("throughput_retain_jam must be in [0, 1]")
        if not 0.0 <= self.overhead_factor <= 1.0:
            raise ConfigError("overhead_factor must be in [0, 1]")
        for name in ("bler_jam_pct", "bler_clear_pct"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise ConfigError(f"{name} must be in [0, 100]")
        if len(self.cqi_table) != 15 or list(self.cqi_table) != sorted(self.cqi_table):
            raise ConfigError("cqi_table must hold 15 nondecreasing thresholds")
        snrs = [s for s, _ in self.mcs_table]
        idx = [m for _, m in self.mcs_table]
        if snrs != sorted(snrs) or idx != sorted(idx) or not all(0 <= m <= 28 for m in idx):
            raise ConfigError("mcs_table must be monotone with indices in [0, 28]")


@dataclass(frozen=True)
class AnalyticsSample:
    """One tick of cell-level analytics.

    ``snr_db`` is the ground-truth SNR seen by the simulator. It is kept for
    reporting only and is not one of the exposed metrics.
    """

    tick: int
    dl_cqi: float
    dl_mcs: float
    dl_bitrate_bps: float
    dl_bler_pct: float
    dl_latency_s: float
    dl_bytes: int
    pci: int
    carrier_id: int
    num_rach: int
    snr_db: float = field(default=0.0, compare=True)

    def metrics(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def cqi_from_snr(snr_db: float, table: Sequence[float] = DEFAULT_CQI_THRESHOLDS) -> int:
    """Largest CQI whose minimum SNR is met; 0 below the first threshold."""
    return bisect.bisect_right(list(table), snr_db)


def mcs_from_snr(snr_db: float, table: Sequence[tuple[float, int]] = DEFAULT_MCS_TABLE) -> int:
    pos = bisect.bisect_right([s for s, _ in table], snr_db)
    return 0 if pos == 0 else table[pos - 1][1]


def tick_rng(seed: int, tick: int) -> np.random.Generator:
    # Per-tick stream: noise at tick t does not depend on earlier jam decisions.
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, tick])


def step(
    params: LinkModelParams,
    offered_rate_bps: int,
    jam_active: bool,
    tick: int,
    rng: np.random.Generator,
) -> AnalyticsSample:
    if offered_rate_bps < 0:
        raise ValueError("offered_rate_bps must be >= 0")
    snr_noise = rng.normal(0.0, params.snr_sigma_db)
    bler_noise = rng.normal(0.0, params.bler_sigma_pct)
    rach_draw_clear = rng.poisson(params.rach_rate_clear)
    rach_draw_jam = rng.poisson(params.rach_rate_jam)
    active = offered_rate_bps > 0

    if jam_active:
        snr = params.snr_clear_db - params.snr_jam_delta_db + snr_noise
        num_rach = int(rach_draw_jam)
    else:
        snr = params.snr_clear_db + snr_noise
        num_rach = int(rach_draw_clear)

    if jam_active and active:
        bler = min(100.0, max(0.0, params.bler_jam_pct + bler_noise))
        bitrate = params.throughput_retain_jam * offered_rate_bps
        latency = params.latency_jam_s
    else:
        # No transport blocks are at risk on an idle tick.
        bler = params.bler_clear_pct
        bitrate = params.overhead_factor * offered_rate_bps
        latency = params.latency_clear_s
    bitrate = float(min(bitrate, offered_rate_bps))

    return AnalyticsSample(
        tick=tick,
        dl_cqi=float(cqi_from_snr(snr, params.cqi_table)),
        dl_mcs=float(mcs_from_snr(snr, params.mcs_table)),
        dl_bitrate_bps=bitrate,
        dl_bler_pct=float(bler),
        dl_latency_s=latency,
        dl_bytes=int(round(bitrate / 8)),
        pci=params.pci,
        carrier_id=params.carrier_id,
        num_rach=num_rach,
        snr_db=float(snr),
    )


class RanSimulator:
    """Steps a scenario one tick at a time.

    Tick ``t`` may wrap past the end of the scenario (``cyclic=True``), which
    the profiling phase uses to collect traces longer than one session.
    """

    def __init__(self, scenario: TrafficScenario, params: LinkModelParams | None = None,
                 seed: int | None = None, cyclic: bool = False):
        self.scenario = scenario
        self.params = params or LinkModelParams()
        self.seed = scenario.seed if seed is None else seed
        self.cyclic = cyclic
        self._rates = scenario.rates()
        self.tick = 0

    def offered_rate(self, tick: int) -> int:
        if self.cyclic:
            return self._rates[tick % len(self._rates)]
        return self._rates[tick]

    @property
    def done(self) -> bool:
        return not self.cyclic and self.tick >= len(self._rates)

    def advance(self, jam_active: bool) -> AnalyticsSample:
        if self.done:
            raise IndexError("scenario exhausted")
        sample = step(self.params, self.offered_rate(self.tick), jam_active, self.tick,
                      tick_rng(self.seed, self.tick))
        self.tick += 1
        return sample


def _split(total: int, parts: int, lo: int, hi: int, rng: np.random.Generator) -> list[int]:
    """Random composition of ``total`` into ``parts`` lengths within [lo, hi]."""
    lengths = [lo] * parts
    remainder = total - lo * parts
    while remainder > 0:
        open_slots = [i for i, n in enumerate(lengths) if n < hi]
        i = open_slots[int(rng.integers(len(open_slots)))]
        lengths[i] += 1
        remainder -= 1
    return lengths


def scenario_part_a(seed: int = 42, total_s: int = 270, active_fraction: float = 0.754,
                    min_segment_s: int = 5, max_segment_s: int = 20,
                    rate_bps: int = PART_A_RATE_BPS) -> TrafficScenario:
    """Alternating on/off traffic at a fixed rate.

    The active tick count is ``round(active_fraction * total_s)``; segment
    lengths are drawn from a seeded generator within
    ``[min_segment_s, max_segment_s]``.
    """
    if not 1 <= min_segment_s <= max_segment_s:
        raise ConfigError("need 1 <= min_segment_s <= max_segment_s")
    active = round(active_fraction * total_s)
    idle = total_s - active
    rng = np.random.default_rng(seed)

    def counts(total: int) -> range:
        return range(math.ceil(total / max_segment_s), total // min_segment_s + 1)

    n_active_opts, n_idle_opts = counts(active), counts(idle)
    pairs = [(a, i) for a in n_active_opts for i in n_idle_opts if abs(a - i) <= 1]
    if not pairs:
        raise ConfigError("segment bounds cannot tile the requested active/idle split")
    n_active, n_idle = pairs[int(rng.integers(len(pairs)))]
    active_lengths = _split(active, n_active, min_segment_s, max_segment_s, rng)
    idle_lengths = _split(idle, n_idle, min_segment_s, max_segment_s, rng)

    if n_active > n_idle:
        start_active = True
    elif n_idle > n_active:
        start_active = False
    else:
        start_active = bool(rng.integers(2))
    first, second = (active_lengths, idle_lengths) if start_active else (idle_lengths, active_lengths)
    first_rate, second_rate = (rate_bps, 0) if start_active else (0, rate_bps)
    segments: list[tuple[int, int]] = []
    for k in range(max(len(first), len(second))):
        if k < len(first):
            segments.append((first[k], first_rate))
        if k < len(second):
            segments.append((second[k], second_rate))
    return TrafficScenario(tuple(segments), seed=seed, name="part_a")


def part_b_tick_counts(total_s: int = 220) -> list[tuple[int, int]]:
    """(rate, ticks) per class; rounding residue goes to the first class."""
    counts = [(rate, round(share * total_s)) for rate, share in PART_B_CLASSES]
    residue = total_s - sum(n for _, n in counts)
    rate0, n0 = counts[0]
    counts[0] = (rate0, n0 + residue)
    return counts


def scenario_part_b(total_s: int = 220, block_s: int = 10, seed: int = 0) -> TrafficScenario:
    """Multi-rate traffic interleaved round-robin over classes in fixed blocks."""
    remaining = [list(c) for c in part_b_tick_counts(total_s)]
    segments: list[tuple[int, int]] = []
    while any(n > 0 for _, n in remaining):
        for entry in remaining:
            rate, n = entry
            if n <= 0:
                continue
            take = min(block_s, n)
            entry[1] -= take
            if segments and segments[-1][1] == rate:
                segments[-1] = (segments[-1][0] + take, rate)
            else:
                segments.append((take, rate))
    return TrafficScenario(tuple(segments), seed=seed, name="part_b")


# -- config files ---------------------------------------------------------

def _read_kv(path_or_text: str | Path) -> dict[str, str]:
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else path_or_text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return dict(parser["root"])


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(",") if v.strip())


def link_params_from_mapping(values: dict[str, str]) -> LinkModelParams:
    kwargs: dict = {}
    fields = {f.name: f for f in dataclasses.fields(LinkModelParams)}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown link parameter {key!r}")
        try:
            if key == "cqi_table":
                kwargs[key] = _floats(raw)
            elif key == "mcs_table":
                pairs = [p.split(":") for p in raw.split(",") if p.strip()]
                kwargs[key] = tuple((float(s), int(m)) for s, m in pairs)
            elif key in ("pci", "carrier_id"):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return LinkModelParams(**kwargs)


def load_link_params(path: str | Path) -> LinkModelParams:
    return link_params_from_mapping(_read_kv(Path(path)))


def scenario_from_mapping(values: dict[str, str]) -> TrafficScenario:
    """Build a scenario from ``scenario = part_a|part_b|custom`` plus options.

    ``custom`` takes ``segments = 10:4000000, 5:0, ...`` (duration:rate).
    """
    kind = values.get("scenario", "part_a").strip().lower()
    try:
        seed = int(values.get("seed", "42"))
        if kind == "part_a":
            return scenario_part_a(
                seed=seed,
                min_segment_s=int(values.get("min_segment_s", "5")),
                max_segment_s=int(values.get("max_segment_s", "20")),
            )
        if kind == "part_b":
            return scenario_part_b(block_s=int(values.get("block_s", "10")), seed=seed)
        if kind == "custom":
            pairs = [p.split(":") for p in values["segments"].split(",") if p.strip()]
            return TrafficScenario(tuple((int(d), int(r)) for d, r in pairs), seed=seed)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from exc
    raise ConfigError(f"unknown scenario {kind!r}")


def load_scenario(path: str | Path) -> TrafficScenario:
    return scenario_from_mapping(_read_kv(Path(path)))


def samples_to_csv(samples: Iterable[AnalyticsSample]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["tick", *METRIC_NAMES])
    for s in samples:
        writer.writerow([s.tick, *(getattr(s, n) for n in METRIC_NAMES)])
    return buf.getvalue()
