
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from y1jamlab import profiler
from y1jamlab.clock import iso_timestamp
from y1jamlab.jammer import (
    JAM,
    NO_JAM,
    BudgetState,
    ControlClient,
    JammerController,
    JammerService,
    StrategyConfig,
    StrategyError,
    budget_gate,
    decide_always_on,
    decide_clustering,
    decide_random,
    decide_threshold,
    jammer_config_from_mapping,
    read_decision_log,
    target_to_allow,
    write_decision_log,
)
from y1jamlab.profiler import ClusterModel, Standardizer
from y1jamlab.y1_consumer import encode_relay_line


def rai(bitrate, cqi=13, mcs=24, bler=0.7):
    return {"dl_cqi": cqi, "dl_mcs": mcs, "dl_bitrate_bps": bitrate, "dl_bler_pct": bler}


def line(tick, content):
    return encode_relay_line({"timestamp": iso_timestamp(tick), "rai_content": content})


def toy_model():
    # Identity standardizer; centroids along the bitrate axis.
    cents = [np.array([0.0, 0, b, 0]) for b in (0.0, 1.0, 2.0, 3.0)]
    return ClusterModel(Standardizer((0,) * 4, (1,) * 4), cents,
                        {0: "LOW", 1: "IDLE", 2: "MEDIUM", 3: "HIGH"}, 0.3, 10)


class TestRules:
    def test_always_on(self):
        assert decide_always_on() == JAM

    def test_random_extremes(self):
        rng = np.random.default_rng(0)
        assert all(decide_random(t, 0.0, rng) == NO_JAM for t in range(500))
        assert all(decide_random(t, 1.0, rng) == JAM for t in range(500))

    def test_random_duty(self):
        rng = np.random.default_rng(11)
        frac = sum(decide_random(t, 0.56, rng) == JAM for t in range(270)) / 270
        assert abs(frac - 0.56) <= 0.05

    def test_threshold(self):
        assert decide_threshold(rai(4_000_000), 1000)[0] == JAM
        assert decide_threshold(rai(0), 1000)[0] == NO_JAM
        assert decide_threshold(rai(1000), 1000)[0] == JAM
        assert decide_threshold({}, 1000) == (NO_JAM, "no-data")
        assert decide_threshold(None, 1000) == (NO_JAM, "no-data")

    @given(st.floats(0, 1e8), st.floats(0, 1e8), st.floats(0, 1e7))
    def test_threshold_monotone(self, a, b, theta):
        hi, lo = max(a, b), min(a, b)
        if decide_threshold(rai(lo), theta)[0] == JAM:
            assert decide_threshold(rai(hi), theta)[0] == JAM

    def test_clustering_jams_outside_allow_set(self):
        m = toy_model()
        # x classifies to index 3 (HIGH); I = {1}
        assert decide_clustering(rai(3.0, 0, 0, 0), m, frozenset({1}))[0] == JAM
        assert decide_clustering(rai(1.0, 0, 0, 0), m, frozenset({1}))[0] == NO_JAM
        for b in (0.0, 1.0, 2.0, 3.0, 7.5):
            assert decide_clustering(rai(b, 0, 0, 0), m, frozenset(range(4)))[0] == NO_JAM
        assert decide_clustering({"dl_cqi": 1}, m, frozenset())[0] == NO_JAM

    @settings(max_examples=100)
    @given(st.floats(-5, 8), st.sets(st.integers(0, 3)))
    def test_clustering_truth_table(self, b, allow):
        m = toy_model()
        x = rai(b, 0, 0, 0)
        j = profiler.classify(profiler.features_from_metrics(x), m)
        expected = JAM if j not in allow else NO_JAM
        assert decide_clustering(x, m, frozenset(allow))[0] == expected

    def test_target_to_allow(self):
        m = toy_model()
        assert target_to_allow(m, ["HIGH"]) == {0, 1, 2}
        assert target_to_allow(m, ["HIGH", "LOW"]) == {1, 2}
        with pytest.raises(StrategyError):
            target_to_allow(ClusterModel(m.standardizer, m.centroids[:1], {0: "IDLE"}, .3, 10),
                            ["HIGH"])

    def test_strategy_validation(self):
        with pytest.raises(StrategyError):
            StrategyConfig("LASER")
        with pytest.raises(StrategyError):
            StrategyConfig("RANDOM")
        with pytest.raises(StrategyError):
            StrategyConfig("RANDOM", duty_p=1.5)
        with pytest.raises(StrategyError):
            StrategyConfig("THRESHOLD", theta_bps=-1)
        with pytest.raises(StrategyError):
            StrategyConfig("CLUSTERING")
        assert StrategyConfig("threshold").theta_bps == 1000.0


class TestBudget:
    def test_ceil_limits(self):
        # Exact integer arithmetic oracle: ceil(p/100 * 220) == ceil(p*220/100).
        for pct in (10, 15, 20, 25):
            assert BudgetState(pct / 100, 220).limit == -(-pct * 220 // 100)
        assert BudgetState(0.10, 220).limit == 22

    def test_23rd_attempt_suppressed(self):
        state = BudgetState(0.10, 220)
        results = [budget_gate(JAM, state) for _ in range(23)]
        assert all(r == (JAM, False) for r in results[:22])
        assert results[22] == (NO_JAM, True)
        assert state.active_ticks == 22

    def test_unlimited(self):
        state = BudgetState(None, 220)
        assert all(budget_gate(JAM, state) == (JAM, False) for _ in range(300))

    def test_no_jam_not_counted(self):
        state = BudgetState(0.1, 10)
        assert budget_gate(NO_JAM, state) == (NO_JAM, False) and state.active_ticks == 0

    def test_bad_fraction(self):
        with pytest.raises(StrategyError):
            BudgetState(0.0, 10)


class TestController:
    def test_warmup_and_latency(self):
        c = JammerController(StrategyConfig("THRESHOLD"), BudgetState(None, 5))
        d0 = c.decide(0)
        assert (d0.verdict, d0.reason) == (NO_JAM, "no-data")
        c.ingest_line(line(0, rai(4e6)))
        d1 = c.decide(1)
        assert d1.jam and d1.snapshot.tick == 0

    def test_stale_fallback(self):
        c = JammerController(StrategyConfig("THRESHOLD"), BudgetState(None, 11))
        c.ingest_line(line(0, rai(4e6)))
        decisions = [c.decide(t) for t in range(1, 11)]
        assert all(d.jam for d in decisions[:3])
        assert all((d.verdict, d.reason) == (NO_JAM, "stale-data") for d in decisions[3:])
        assert [d.tick for d in decisions[3:]] == list(range(4, 11))

    def test_budget_reason(self):
        c = JammerController(StrategyConfig("ALWAYS_ON"), BudgetState(0.5, 4))
        verdicts = [(c.decide(t).verdict, c.decisions[-1].reason) for t in range(4)]
        assert verdicts == [(JAM, "always-on")] * 2 + [(NO_JAM, "budget-exhausted")] * 2

    def test_garbage_line_ignored(self):
        c = JammerController(StrategyConfig("THRESHOLD"), BudgetState(None, 2))
        c.ingest_line(b"not json\n")
        c.ingest_line(b'{"rai_content": {}}\n')
        assert c.latest() is None and c.lines_received == 0

    def test_determinism(self):
        def replay():
            c = JammerController(StrategyConfig("RANDOM", duty_p=0.4, rng_seed=9),
                                 BudgetState(0.25, 50))
            for t in range(50):
                c.decide(t)
                c.ingest_line(line(t, rai(1e6 * (t % 3))))
            return [d.row() for d in c.decisions]
        assert replay() == replay()

    def test_burst_mode_duty(self):
        c = JammerController(StrategyConfig("RANDOM", duty_p=0.3, burst_len=4, rng_seed=2),
                             BudgetState(None, 20_000))
        verdicts = [c.decide(t).jam for t in range(20_000)]
        assert abs(sum(verdicts) / len(verdicts) - 0.3) < 0.02
        runs, n = [], 0
        for v in verdicts + [False]:
            if v:
                n += 1
            elif n:
                runs.append(n)
                n = 0
        assert min(runs) >= 4

    def test_passive(self):
        c = JammerController(None, BudgetState(None, 3))
        assert [c.decide(t).reason for t in range(3)] == ["no-jammer"] * 3

    def test_log_roundtrip(self, tmp_path):
        c = JammerController(StrategyConfig("THRESHOLD"), BudgetState(None, 3))
        c.decide(0)
        c.ingest_line(line(0, rai(5000)))
        c.decide(1)
        path = tmp_path / "d.csv"
        write_decision_log(path, c.decisions)
        rows = read_decision_log(path)
        assert list(rows[0])[:7] == ["tick", "verdict", "reason", "cqi", "mcs", "bitrate_bps",
                                     "bler_pct"]
        assert rows[1]["verdict"] == JAM and rows[1]["analytics_tick"] == "0"
        assert float(rows[1]["bitrate_bps"]) == 5000


class TestService:
    def test_control_waits_for_previous_analytics(self):
        c = JammerController(StrategyConfig("THRESHOLD"), BudgetState(None, 3))
        svc = JammerService(c, sync_timeout=5.0).start()
        import socket
        import threading
        try:
            relay = socket.create_connection(svc.relay_address)
            client = ControlClient(svc.control_address)
            assert client.request(0) is False
            # Deliver tick-0 analytics late; the control reply must wait for it.
            timer = threading.Timer(0.2, lambda: relay.sendall(line(0, rai(4e6))))
            timer.start()
            assert client.request(1) is True
            assert c.decisions[1].snapshot.tick == 0
            client.close()
            relay.close()
        finally:
            svc.stop()


class TestConfig:
    def test_mapping(self):
        cfg = jammer_config_from_mapping({"strategy": "random", "duty_p": "0.3", "budget": "0.2",
                                          "seed": "4"})
        s = cfg.build()
        assert (s.kind, s.duty_p, s.rng_seed, cfg.budget) == ("RANDOM", 0.3, 4, 0.2)
        assert jammer_config_from_mapping({"budget": "unlimited"}).budget is None

    def test_clustering_needs_model(self):
        with pytest.raises(StrategyError):
            jammer_config_from_mapping({"strategy": "clustering"}).build()

    def test_clustering_from_file(self, model, tmp_path):
        path = tmp_path / "m.json"
        model.save(path)
        s = jammer_config_from_mapping({"strategy": "clustering", "model_path": str(path),
                                        "targets": "high"}).build()
        assert s.allow_set == frozenset(range(model.k)) - model.indices_for("HIGH")

    def test_bad_number(self):
        with pytest.raises(StrategyError):
            jammer_config_from_mapping({"theta_bps": "lots"})
