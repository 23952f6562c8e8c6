"""Command line entry point: ``y1jamlab {run,profile,sweep,report,consumer,certs}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import certs, profiler
from .experiment import (
    LIVE,
    VIRTUAL,
    ConfigError,
    ExperimentConfig,
    budget_sweep,
    profile_phase,
    run_experiment,
)
from .jammer import (
    ALWAYS_ON,
    CLUSTERING,
    RANDOM,
    THRESHOLD,
    StrategyConfig,
    StrategyError,
    jammer_config_from_mapping,
)
from .ran_sim import ConfigError as SimConfigError
from .ran_sim import LinkModelParams, _read_kv, load_link_params, scenario_from_mapping, scenario_part_b
from .report import load_runs, plot_run_overlay, render_runs, write_run, write_sweep
from .transport import HttpTransport, JsonHttpServer, TlsMaterial
from .y1_consumer import NOTIFY_PATH, Rejected, TcpRelay, Y1Consumer
from .y1_producer import PERIODIC, SUPPORTED_RAI_TYPE, SubscriptionRequest

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CONFIG_ERRORS = (ConfigError, SimConfigError, StrategyError, profiler.InsufficientData)

log = logging.getLogger("y1jamlab")


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _link(args) -> LinkModelParams:
    return load_link_params(args.link_config) if getattr(args, "link_config", None) else LinkModelParams()


def _strategy(args) -> StrategyConfig | None:
    if args.jammer_config:
        jc = jammer_config_from_mapping(_read_kv(Path(args.jammer_config)))
        if args.budget is None and jc.budget is not None:
            args.budget = jc.budget * 100
        return jc.build()
    kind = args.strategy.upper()
    if kind == "NONE":
        return None
    if kind == THRESHOLD:
        return StrategyConfig(THRESHOLD, theta_bps=args.theta, rng_seed=args.jam_seed)
    if kind == RANDOM:
        duty = args.duty if args.duty is not None else (args.budget / 100 if args.budget else 0.5)
        return StrategyConfig(RANDOM, duty_p=duty, rng_seed=args.jam_seed, burst_len=args.burst_len)
    if kind == ALWAYS_ON:
        return StrategyConfig(ALWAYS_ON)
    if kind == CLUSTERING:
        if not args.model:
            raise ConfigError("--strategy clustering needs --model")
        model = profiler.ClusterModel.load(args.model)
        return StrategyConfig.targeting(model, args.targets.split(","), rng_seed=args.jam_seed)
    raise ConfigError(f"unknown strategy {args.strategy!r}")


def cmd_run(args) -> int:
    strategy = _strategy(args)
    scenario_obj = None
    if args.scenario_config:
        scenario_obj = scenario_from_mapping(_read_kv(Path(args.scenario_config)))
    tls = TlsMaterial.from_env() if args.mode == LIVE else None
    for i in range(args.repeat):
        seed = args.seed + i
        out = Path(args.out) / f"run{i}" if args.repeat > 1 else Path(args.out)
        cfg = ExperimentConfig(
            scenario="custom" if scenario_obj else args.scenario, seed=seed, strategy=strategy,
            budget=None if args.budget is None else args.budget / 100,
            link=_link(args), mode=args.mode, output_dir=None, tick_s=args.tick_s,
            period_s=args.period, tls=tls, scenario_obj=scenario_obj)
        report = run_experiment(cfg)
        write_run(report, out, plots=not args.no_plots)
        print(render_runs([report.summary()], "md"), end="")
    return EXIT_OK


def cmd_profile(args) -> int:
    scenario = (scenario_from_mapping(_read_kv(Path(args.scenario_config)))
                if args.scenario_config else scenario_part_b())
    if args.sweep_eps:
        from .experiment import collect_trace
        X = collect_trace(scenario, _link(args), args.seed, args.samples)
        print("| eps | clusters | noise |\n|---|---|---|")
        for eps, k, noise in profiler.eps_sweep(X, _csv_floats(args.sweep_eps), args.min_pts):
            print(f"| {eps:g} | {k} | {noise} |")
        return EXIT_OK
    result = profile_phase(scenario, _link(args), seed=args.seed, n_samples=args.samples,
                           eps=args.eps, min_pts=args.min_pts, out_path=args.out)
    if args.trace_csv:
        profiler.write_training_csv(args.trace_csv, result.X)
    m = result.model
    print(f"{len(result.X)} samples -> {m.k} clusters, {m.noise_count} noise; model written to {args.out}")
    for j in range(m.k):
        rate = profiler.bitrate_of(m.centroids[j], m.standardizer)
        print(f"  cluster {j}: {m.labels_semantic[j]:<6} n={m.cluster_sizes[j]:<4} "
              f"mean bitrate {rate:,.0f} bps")
    return EXIT_OK


def cmd_sweep(args) -> int:
    model = profiler.ClusterModel.load(args.model) if args.model else None
    budgets = [b / 100 for b in _csv_floats(args.budgets)]
    strategies = [s.strip().lower() for s in args.strategies.split(",") if s.strip()]
    result = budget_sweep(budgets, strategies, model=model, seed=args.seed,
                          rng_seed=args.jam_seed, link=_link(args))
    write_sweep(result, args.out, plots=not args.no_plots)
    from .report import sweep_markdown
    print(sweep_markdown(result), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    runs = load_runs(args.input)
    if not runs:
        raise ConfigError(f"no report.json under {args.input}")
    print(render_runs([summary for _, summary in runs], args.format), end="")
    if args.plots:
        plot_run_overlay(runs, args.input)
    return EXIT_OK


def cmd_consumer(args) -> int:
    tls = TlsMaterial.from_env()
    relay = TcpRelay(*args.relay_endpoint)
    consumer = Y1Consumer(HttpTransport(tls), relay=relay)
    host, port = args.listen
    server = JsonHttpServer(consumer.route, host=host, port=port, tls=tls).start()
    notify_url = args.notify_url or server.base_url + NOTIFY_PATH
    metrics = tuple(m.strip() for m in args.metrics_filter.split(",")) if args.metrics_filter else None
    req = SubscriptionRequest(SUPPORTED_RAI_TYPE, "1.0", PERIODIC, args.period, notify_url,
                              *(() if metrics is None else (metrics,)))
    try:
        sub_id = consumer.subscribe(args.producer_url, req)
    except Rejected as exc:
        print(f"subscription rejected: {exc}", file=sys.stderr)
        server.stop()
        return EXIT_RUNTIME
    print(f"subscribed {sub_id}; listening on {server.base_url}{NOTIFY_PATH}")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        consumer.unsubscribe()
        relay.close()
        server.stop()
    return EXIT_OK


def cmd_certs(args) -> int:
    material = certs.generate(args.out, tuple(args.names.split(",")))
    for name, m in material.items():
        print(f"{name}: cert={m.cert} key={m.key} ca={m.ca}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="y1jamlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one closed-loop experiment")
    run.add_argument("--scenario", choices=("part_a", "part_b"), default="part_a")
    run.add_argument("--scenario-config", help="key = value scenario file")
    run.add_argument("--strategy", default="threshold",
                     help="none | always_on | random | threshold | clustering")
    run.add_argument("--theta", type=float, default=1000.0, help="threshold in bps")
    run.add_argument("--duty", type=float, help="random jammer duty in [0,1]")
    run.add_argument("--burst-len", type=int, default=1)
    run.add_argument("--budget", type=float, help="budget in percent of session ticks")
    run.add_argument("--model", help="cluster model JSON (clustering strategy)")
    run.add_argument("--targets", default="HIGH", help="semantic clusters to jam")
    run.add_argument("--jammer-config", help="key = value jammer file")
    run.add_argument("--link-config", help="key = value link model file")
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--jam-seed", type=int, default=1)
    run.add_argument("--period", type=float, default=1.0, help="notification period (s)")
    run.add_argument("--mode", choices=(VIRTUAL, LIVE), default=VIRTUAL)
    run.add_argument("--tick-s", type=float, default=0.1, help="wall seconds per tick in live mode")
    run.add_argument("--repeat", type=int, default=1, help="runs with consecutive seeds")
    run.add_argument("--out", default="results")
    run.add_argument("--no-plots", action="store_true")
    run.set_defaults(func=cmd_run)

    prof = sub.add_parser("profile", help="train the clustering model from a jam-free trace")
    prof.add_argument("--scenario", choices=("part_b",), default="part_b")
    prof.add_argument("--scenario-config")
    prof.add_argument("--link-config")
    prof.add_argument("--eps", type=float, default=0.30)
    prof.add_argument("--min-pts", type=int, default=10)
    prof.add_argument("--samples", type=int, default=227)
    prof.add_argument("--seed", type=int, default=7)
    prof.add_argument("--sweep-eps", help="comma list; print (eps, clusters, noise) and exit")
    prof.add_argument("--trace-csv", help="also write the training trace as CSV")
    prof.add_argument("--out", default="model.json")
    prof.set_defaults(func=cmd_profile)

    sw = sub.add_parser("sweep", help="budget sweep on the multi-rate scenario")
    sw.add_argument("--budgets", default="10,15,20,25", help="percent values")
    sw.add_argument("--strategies", default="random,low,medium,high")
    sw.add_argument("--model")
    sw.add_argument("--link-config")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--jam-seed", type=int, default=1)
    sw.add_argument("--out", default="sweep")
    sw.add_argument("--no-plots", action="store_true")
    sw.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="tabulate finished runs")
    rep.add_argument("--in", dest="input", required=True)
    rep.add_argument("--format", choices=("md", "csv", "json"), default="md")
    rep.add_argument("--plots", action="store_true", help="write overlay CDF figures")
    rep.set_defaults(func=cmd_report)

    con = sub.add_parser("consumer", help="run a standalone Y1 consumer with relay")
    con.add_argument("--producer-url", required=True)
    con.add_argument("--period", type=float, default=1.0)
    con.add_argument("--relay-endpoint", type=_host_port, required=True)
    con.add_argument("--metrics-filter", help="comma list of metric names")
    con.add_argument("--listen", type=_host_port, default=("127.0.0.1", 8443))
    con.add_argument("--notify-url")
    con.set_defaults(func=cmd_consumer)

    crt = sub.add_parser("certs", help="generate a CA and mTLS cert/key pairs")
    crt.add_argument("--out", default="certs")
    crt.add_argument("--names", default="producer,consumer")
    crt.set_defaults(func=cmd_certs)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
