import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cccn.cache import StoredItem
from cccn.netgraph import bfs_distances
from cccn.sim import (CSV_HEADER, ConfigError, Engine, ExperimentConfig, MetricsReport, RunLog,
                      ZeroWindow, compute_metrics, csv_row, gen_workload, run_experiment,
                      run_sweep)

SMALL = ExperimentConfig(n_requests=150)


# -- workload ------------------------------------------------------------------

def test_poisson_count():
    cfg = ExperimentConfig(rate=100, load_scale=1.0, duration_s=100)
    for gw in (0, 7, 42):
        n = len(gen_workload(cfg, gw))
        assert abs(n - 10_000) <= 3 * math.sqrt(10_000)


def test_interarrivals_exponential():
    cfg = ExperimentConfig(rate=50, load_scale=1.0, duration_s=400)
    ts = np.array([t for t, _ in gen_workload(cfg, 3)])
    gaps = np.diff(ts)
    assert abs(gaps.mean() - 1 / 50) < 4 * (1 / 50) / math.sqrt(len(gaps))
    # memoryless: P(gap > mean) = 1/e
    assert abs((gaps > 1 / 50).mean() - math.exp(-1)) < 0.02


def test_zipf_rank_ratio():
    cfg = ExperimentConfig(rate=10_000, load_scale=1.0, duration_s=100, zipf_alpha=0.7)
    ids = [c for _, c in gen_workload(cfg, 1)]
    assert len(ids) > 990_000
    cnt = Counter(ids)
    assert cnt[0] / cnt[1] == pytest.approx(2 ** 0.7, rel=0.05)


def test_zipf_zero_is_uniform():
    cfg = ExperimentConfig(rate=1000, load_scale=1.0, duration_s=200, zipf_alpha=0.0)
    ids = [c for _, c in gen_workload(cfg, 2)]
    n, k = len(ids), cfg.catalog_size
    cnt = Counter(ids)
    exp = n / k
    chi2 = sum((cnt.get(i, 0) - exp) ** 2 / exp for i in range(k))
    dof = k - 1
    assert chi2 < dof + 4 * math.sqrt(2 * dof)


def test_workload_deterministic_per_gateway():
    cfg = ExperimentConfig(rate=100, load_scale=1.0, duration_s=10)
    assert gen_workload(cfg, 4) == gen_workload(cfg, 4)
    assert gen_workload(cfg, 4) != gen_workload(cfg, 5)
    assert gen_workload(cfg, 4) != gen_workload(cfg.replace(seed=2), 4)


# -- degenerate runs -----------------------------------------------------------

def test_zero_arrivals():
    rep = run_experiment(ExperimentConfig(n_requests=0))
    assert rep.requests == 0 and rep.completions == 0
    assert rep.avg_download_delay_s == 0 and rep.avg_link_usage == 0
    assert rep.avg_interest_load == 0 and rep.data_sent == 0


def test_empty_window_raises():
    log = RunLog("CCN", 0.0, 0.0, 1e-5, 1e9)
    with pytest.raises(ZeroWindow):
        compute_metrics(log, ExperimentConfig())


def _engine(**kw):
    cfg = ExperimentConfig(loss_rate=0.0, warmup_fraction=0.0, duration_s=10.0, **kw)
    return cfg, Engine(cfg)


@pytest.mark.parametrize("mode", ["CCN", "CCCN"])
def test_single_cached_request(mode):
    cfg, eng = _engine(mode=mode)
    gw = eng.roles.gateways[0]
    for s in range(cfg.segments):
        eng.nodes[gw].cs.insert(StoredItem.plain(eng.names[5], s))
    log = eng.run(arrivals=[(cfg.ticks(1.0), gw, 5)])
    rep = compute_metrics(log, cfg)
    assert rep.completions == 1
    assert rep.avg_download_delay_s == pytest.approx(cfg.proc_delay_s)
    assert rep.avg_interest_load == 0
    assert rep.data_sent == 0


def test_ccn_cache0_interest_load_is_hop_count():
    cfg = ExperimentConfig(mode="CCN", cache_bytes=0, loss_rate=0.0, warmup_fraction=0.0,
                           rate=1.0, load_scale=0.01, n_requests=120)
    rep, log = run_experiment(cfg, return_log=True)
    eng = Engine(cfg)
    dist = {p: bfs_distances(eng.adj, [p]) for p in eng.roles.publishers}
    hops = [dist[eng.pub_of[eng.names[c]]][gw] for _, gw, c, _, done in log.requests
            if done is not None]
    assert rep.completions == rep.requests == len(hops)
    assert rep.avg_interest_load == pytest.approx(sum(hops) / len(hops))


def test_aggregation_counts_interest_once():
    cfg, eng = _engine(mode="CCN", cache_bytes=0)
    gw = eng.roles.gateways[3]
    pub = eng.pub_of[eng.names[9]]
    d = bfs_distances(eng.adj, [pub])[gw]
    t = cfg.ticks(1.0)
    log = eng.run(arrivals=[(t, gw, 9), (t, gw, 9)])
    rep = compute_metrics(log, cfg)
    assert rep.completions == 2
    assert len(log.interest_ticks) == d
    assert rep.avg_interest_load == pytest.approx(d / 2)


def test_three_hop_usage_arithmetic():
    cfg = ExperimentConfig(segments=10, warmup_fraction=0.0)
    seg_ticks = cfg.ticks(cfg.segment_bytes * 8 / 1e9)
    window = 2_000_000
    log = RunLog("CCN", window * cfg.tick_s, 0.0, cfg.tick_s, 1e9)
    log.requests.append([0, 0, 0, 0, 500_000])
    t = 0
    for _ in range(10):
        for link in range(3):
            log.tx.append((link, t + link * seg_ticks, t + (link + 1) * seg_ticks))
        t += seg_ticks
    rep = compute_metrics(log, cfg)
    expect = 30 * cfg.segment_bytes * 8 / (3 * 1e9 * window * cfg.tick_s)
    assert rep.links_involved == 3
    assert rep.avg_link_usage == pytest.approx(expect)


def test_window_excludes_warmup():
    cfg = ExperimentConfig(warmup_fraction=0.5)
    log = RunLog("IP", 1.0, 0.5, 1e-5, 1e9)
    log.requests += [[0, 0, 0, 10_000, 20_000], [1, 0, 0, 60_000, 90_000]]
    rep = compute_metrics(log, cfg)
    assert rep.requests == 1
    assert rep.avg_download_delay_s == pytest.approx(0.3)


# -- whole runs ----------------------------------------------------------------

@pytest.mark.parametrize("mode", ["IP", "CCN", "CCCN"])
def test_small_run_conserves(mode):
    rep = run_experiment(SMALL.replace(mode=mode))
    assert rep.requests > 0
    assert rep.completions == rep.requests
    assert rep.conservation_ok
    assert rep.data_sent == rep.data_arrived + rep.losses + rep.data_in_flight
    assert 0 <= rep.avg_link_usage <= 1
    if mode == "IP":
        assert rep.cache_hits_plain == 0 and rep.coding_ops == 0
    if mode == "CCN":
        assert rep.coding_ops == 0 and rep.cache_hits_coded == 0


@pytest.mark.parametrize("mode", ["IP", "CCN", "CCCN"])
def test_repeat_runs_identical(mode):
    cfg = SMALL.replace(mode=mode, n_requests=80)
    a, la = run_experiment(cfg, log_events=True, return_log=True)
    b, lb = run_experiment(cfg, log_events=True, return_log=True)
    assert a == b
    assert la.lines == lb.lines and la.lines
    c = run_experiment(cfg.replace(seed=cfg.seed + 1))
    assert c != a


def test_event_log_format():
    _, log = run_experiment(SMALL.replace(n_requests=20), log_events=True, return_log=True)
    kinds = Counter()
    for line in log.lines:
        t, node, kind, rest = line.split(" ", 3)
        float(t)
        int(node)
        kinds[kind] += 1
    assert kinds["REQUEST"] > 0 and kinds["COMPLETE"] > 0
    assert kinds["RX_DATA"] > 0 and kinds["TX_INTEREST"] > 0


def test_event_cap_never_hangs():
    rep = run_experiment(SMALL.replace(max_events=500, warmup_fraction=0.0))
    assert rep.events == 500
    assert rep.incomplete > 0
    assert rep.completions + rep.incomplete == rep.requests


@settings(max_examples=8, deadline=None)
@given(st.sampled_from(["IP", "CCN", "CCCN"]), st.integers(1, 10_000),
       st.sampled_from([0.0, 0.005, 0.01, 0.05]))
def test_conservation_property(mode, seed, loss):
    rep = run_experiment(ExperimentConfig(mode=mode, seed=seed, loss_rate=loss, n_requests=40,
                                          warmup_fraction=0.0))
    assert rep.conservation_ok
    assert rep.completions <= rep.requests
    assert 0 <= rep.avg_link_usage <= 1


# -- config ----------------------------------------------------------------------

def test_config_roundtrip():
    cfg = ExperimentConfig(mode="IP", rate=30.0, seed=4)
    assert ExperimentConfig.parse(cfg.to_text()) == cfg


def test_config_size_suffix():
    assert ExperimentConfig.parse("cache_bytes = 10GB").cache_bytes == 1e10
    assert ExperimentConfig.parse("segment_bytes = 5MB").segment_bytes == 5e6
    with pytest.raises(ConfigError):
        ExperimentConfig.parse("rate = 10GB")


def test_config_parse_comments_and_sci():
    cfg = ExperimentConfig.parse("# desk\nmode = CCN\nn_requests = 1e4  # ten thousand\n")
    assert cfg.mode == "CCN" and cfg.n_requests == 10_000


@pytest.mark.parametrize("text, field", [
    ("bogus = 1", "bogus"),
    ("rate = fast", "rate"),
    ("n_requests = 2.5", "n_requests"),
    ("mode = TCP", "mode"),
    ("rate = -1", "rate"),
    ("loss_rate = 1.5", "loss_rate"),
    ("field_m = 7", "field_m"),
    ("n_gateways = 99", "n_gateways"),
    ("just words", "line 1"),
])
def test_config_errors(text, field):
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.parse(text)
    assert ei.value.field == field


def test_derived_quantities():
    cfg = ExperimentConfig()
    assert cfg.catalog_size == 1000
    assert cfg.effective_rate == pytest.approx(cfg.rate * cfg.load_scale)
    assert cfg.arrival_period_s == pytest.approx(10_000 / (15 * cfg.effective_rate))
    assert ExperimentConfig(duration_s=5).arrival_period_s == 5


# -- sweeps and output -------------------------------------------------------

TINY = ExperimentConfig(n_requests=25)


def test_sweep_cache_axis_count():
    rows = run_sweep(TINY, "cache", [2e8, 1e9, 1e10, 1e11], ["CCN", "CCCN", "IP"])
    assert len(rows) == 12
    assert {(r[1], r[2]) for r in rows} == {(v, m) for v in (2e8, 1e9, 1e10, 1e11)
                                           for m in ("CCN", "CCCN", "IP")}


def test_sweep_rate_axis_count():
    rows = run_sweep(TINY, "rate", list(range(10, 101, 10)), ["CCN"])
    assert len(rows) == 10


def test_sweep_single_matches_run():
    [(axis, val, mode, seed, rep)] = run_sweep(TINY, "rate", [40], ["CCCN"])
    assert rep == run_experiment(TINY.replace(rate=40.0, mode="CCCN"))


def test_sweep_errors():
    with pytest.raises(ValueError):
        run_sweep(TINY, "cache", [])
    with pytest.raises(ValueError):
        run_sweep(TINY, "latency", [1])


def test_csv_row_matches_header():
    rep = MetricsReport("CCN", 1.5, 0, 0.25, 2.0, requests=10, completions=9)
    row = csv_row(rep, "cache", 1e9, 3)
    assert len(row.split(",")) == len(CSV_HEADER.split(","))
    assert row.startswith("CCN,cache,1000000000.0,3,1.5,0.25,2,9,10")
