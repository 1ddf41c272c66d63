import itertools
import math

import numpy as np
import pytest

from homesense.channel import ChannelConfig, SubjectProfile, generate_trace
from homesense.foundation import MotionDecision, PowerWindow
from homesense.topology import (
    DetectionEvent,
    Deployment,
    EventStore,
    Mode,
    Node,
    PipelineConfig,
    Policy,
    Presence,
    Role,
    daily_bandwidth,
    effective_csi_rate,
    fuse_coverage,
    proximity_score,
    run_pipeline,
)
from homesense.wire import RECORD, raw_frame_bytes

RATE = 100.0


def _trace(device, subject, seed, seconds=12.0, coherence=0.0, mean_db=10.0):
    cfg = ChannelConfig.heterogeneous(
        mean_db=mean_db, sample_rate_hz=RATE, rng_seed=seed, subcarrier_coherence=coherence
    )
    tr = generate_trace(cfg, subject, seconds)
    return _rename(tr, device)


def _rename(tr, device):
    import dataclasses

    return dataclasses.replace(tr, device_id=device)


# ------------------------------------------------------------ deployment


def test_star_deployment():
    d = Deployment.star(["b1", "b2"])
    assert d.master == "mo" and d.origins == ("origin-0",)
    assert d.hops_to_master("b1") == 2
    assert Deployment.from_dict(d.to_dict()) == d


@pytest.mark.parametrize(
    "nodes, links, match",
    [
        ([("mo", "master_origin"), ("mo2", "master_origin")], [], "exactly one"),
        ([("o", "origin")], [], "exactly one"),
        ([("mo", "master_origin"), ("mo", "origin")], [], "duplicate"),
        ([("mo", "master_origin"), ("b", "bot")], [], "no link"),
        ([("mo", "master_origin"), ("b", "bot")], [("mo", "b")], "master_origin cannot"),
        ([("mo", "master_origin"), ("b", "bot")], [("b", "x")], "unknown"),
        ([("mo", "master_origin"), ("b", "bot"), ("c", "bot")], [("b", "c")], "cannot receive"),
        ([("mo", "master_origin"), ("b", "bot")], [("b", "mo"), ("b", "mo")], "more than one"),
    ],
)
def test_invalid_deployments(nodes, links, match):
    with pytest.raises(ValueError, match=match):
        Deployment(tuple(Node(i, Role(r)) for i, r in nodes), tuple(links))


def test_every_transmitter_within_two_hops():
    d = Deployment(
        (Node("mo", Role.MASTER_ORIGIN), Node("o1", Role.ORIGIN), Node("o2", Role.ORIGIN), Node("b", Role.BOT)),
        (("b", "o1"), ("o2", "mo"), ("o1", "o2")),
    )
    assert all(d.hops_to_master(tx) <= 2 for tx in d.transmitters)


# ------------------------------------------------------------ event store


def _event(t, dev="b1"):
    return DetectionEvent(t, dev, "z", "motion", 0.3, 1.0, 0.1, False)


def test_store_is_append_only_and_monotone(tmp_path):
    path = tmp_path / "events.ndjson"
    store = EventStore(path)
    store.append(_event(1.0))
    store.append(_event(1.0))
    store.append(_event(0.5, "b2"))
    with pytest.raises(ValueError, match="precedes"):
        store.append(_event(0.9))
    assert len(store) == 3
    reopened = EventStore(path)
    assert reopened.events == store.events
    assert not hasattr(store, "remove")


def test_event_json_round_trip():
    e = DetectionEvent(2.5, "b1", "z", "static", 0.01, None, 0.0, False, "human", 0.7, 71, True)
    assert DetectionEvent.from_json(e.to_json()) == e


# --------------------------------------------------------------- proximity


def _mean_prox(coherence, subject, seeds=range(10)):
    scores = []
    for s in seeds:
        tr = _trace("d", subject, s, seconds=6.0, coherence=coherence)
        scores.append(proximity_score(PowerWindow.from_power(tr.power(), RATE)).proximity_score)
    return np.array(scores)


def test_static_proximity_near_zero():
    assert _mean_prox(0.0, SubjectProfile.none()).max() < 0.1


def test_near_field_flagged():
    near = [proximity_score(PowerWindow.from_power(_trace("d", SubjectProfile.human(), s, 6.0, 0.9).power(), RATE)).near for s in range(20)]
    far = [proximity_score(PowerWindow.from_power(_trace("d", SubjectProfile.human(), s, 6.0, 0.0).power(), RATE)).near for s in range(20)]
    assert np.mean(near) >= 0.9
    assert np.mean(far) <= 0.1


def test_proximity_matches_correlation_matrix():
    tr = _trace("d", SubjectProfile.human(), 3, 6.0, 0.5)
    x = tr.power()
    c = np.corrcoef(x.T)
    f = c.shape[0]
    expected = (c.sum() - f) / (f * (f - 1))
    got = proximity_score(PowerWindow.from_power(x, RATE)).proximity_score
    assert got == pytest.approx(max(0.0, expected), abs=1e-5)


def test_proximity_degenerate_window():
    w = PowerWindow.from_power(np.ones((50, 4)), RATE)
    assert proximity_score(w).proximity_score == 0.0


# ----------------------------------------------------------------- coverage


def _decisions(times, motion):
    return [MotionDecision(0.5 if m else 0.0, 0.1, float(t)) for t, m in zip(times, motion)]


def test_coverage_nine_of_ten():
    times = np.arange(1, 11) * 6.0
    cov = fuse_coverage({"a": _decisions(times, [True] * 9 + [False])}, [Presence(0, 60, "r")], 6.0)
    assert cov["r"].probability == pytest.approx(0.9)
    assert cov["r"].covered


def test_coverage_no_detections():
    times = np.arange(1, 11) * 6.0
    cov = fuse_coverage({"a": _decisions(times, [False] * 10)}, [Presence(0, 60, "r")], 6.0)
    assert cov["r"].probability == 0.0 and not cov["r"].covered


def test_coverage_is_or_fusion_and_matches_recount():
    rng = np.random.default_rng(1)
    times = np.arange(1, 21) * 3.0
    presence = [Presence(0, 30, "a"), Presence(30, 60, "b")]
    links = {k: _decisions(times, rng.random(20) < 0.5) for k in ("x", "y")}
    cov = fuse_coverage(links, presence, 6.0)
    for region, lo, hi in (("a", 0, 30), ("b", 30, 60)):
        # window [t-6, t] sits in a region if more than 3 s of it falls there
        idx = [i for i, t in enumerate(times) if min(t, hi) - max(t - 6, lo) > 3]
        hits = sum(links["x"][i].motion or links["y"][i].motion for i in idx)
        assert cov[region].present_windows == len(idx)
        assert cov[region].detected_windows == hits


def test_coverage_requires_presence():
    with pytest.raises(ValueError):
        fuse_coverage({}, [], 6.0)


# ---------------------------------------------------------------- pipeline


@pytest.fixture(scope="module")
def edge_traces():
    return {
        "b1": _rename(_trace("b1", SubjectProfile.human(), 11), "b1"),
        "b2": _rename(_trace("b2", SubjectProfile.none(), 12), "b2"),
    }


def test_edge_only_has_no_uploads_or_labels(edge_traces):
    res = run_pipeline(Deployment.star(["b1", "b2"]), edge_traces, PipelineConfig(policy="edge_only"))
    assert res.traffic.upload_bytes == 0 and not res.uploads
    assert all(e.label is None and e.confidence is None for e in res.events)
    assert any(e.verdict == "motion" for e in res.events if e.device_id == "b1")
    assert all(e.verdict == "static" for e in res.events if e.device_id == "b2")


def test_cloud_policy_needs_model(edge_traces):
    with pytest.raises(ValueError, match="model"):
        run_pipeline(Deployment.star(["b1", "b2"]), edge_traces, PipelineConfig())


def test_traces_must_match_links(edge_traces):
    with pytest.raises(ValueError, match="missing"):
        run_pipeline(Deployment.star(["b1", "b2", "b3"]), edge_traces, PipelineConfig(policy="edge_only"))


def test_aggregated_sends_only_records_to_master(edge_traces):
    traces = {f"b{i}": _rename(_trace("x", SubjectProfile.none(), 20 + i, 6.0), f"b{i}") for i in range(1, 5)}
    res = run_pipeline(Deployment.star(list(traces)), traces, PipelineConfig(policy="edge_only"))
    assert res.traffic.raw_forward_bytes == 0
    assert res.traffic.record_bytes == RECORD.size * len(res.events) == RECORD.size * 4


def test_direct_mode_relays_raw_frames(edge_traces):
    d = Deployment.star(["b1", "b2"], mode=Mode.DIRECT_TO_MASTER)
    res = run_pipeline(d, edge_traces, PipelineConfig(policy="edge_only"))
    assert res.traffic.raw_forward_bytes == res.traffic.raw_bytes
    assert res.traffic.record_bytes == 0


def test_accounting_conservation(edge_traces, model):
    res = run_pipeline(Deployment.star(["b1", "b2"]), edge_traces, PipelineConfig(), model)
    assert res.traffic.raw_bytes == sum(len(t) * raw_frame_bytes(t.subcarrier_count) for t in edge_traces.values())
    assert res.traffic.upload_bytes == sum(len(m.encode()) for m in res.uploads)
    assert res.traffic.frames == sum(len(t) for t in edge_traces.values())


def test_upload_iff_motion(edge_traces, model):
    res = run_pipeline(Deployment.star(["b1", "b2"]), edge_traces, PipelineConfig(), model)
    uploaded = sorted((m.device_id, round(m.window_start_s + 6.0, 6)) for m in res.uploads)
    motion = sorted((tx, round(d.time_s, 6)) for tx, ds in res.decisions.items() for d in ds if d.motion)
    assert uploaded == motion and motion


def test_static_day_uploads_nothing(model):
    traces = {"b1": _rename(_trace("x", SubjectProfile.none(), 31, 18.0), "b1")}
    res = run_pipeline(Deployment.star(["b1"]), traces, PipelineConfig(), model)
    assert res.traffic.upload_bytes == 0
    assert daily_bandwidth(RATE, 56, 0.0).acf_bytes == 0


def test_event_times_monotone_per_device(demo_run):
    for dev, evs in itertools.groupby(sorted(demo_run.result.events, key=lambda e: e.device_id), key=lambda e: e.device_id):
        times = [e.time_s for e in evs]
        assert times == sorted(times)


def test_modes_agree(demo, demo_traces, model, demo_run):
    from homesense.scenario import run_scenario

    direct = run_scenario(demo, model, traces=demo_traces, mode="direct_to_master")
    assert direct.result.event_log() == demo_run.result.event_log()


def test_failover_preserves_log(demo, demo_traces, model, demo_run):
    from homesense.scenario import run_scenario

    out = run_scenario(demo, model, traces=demo_traces, failover_at_s=20.0)
    assert out.result.master_history[-1] == (20.0, "origin-1")
    assert out.result.event_log() == demo_run.result.event_log()
    assert not out.violations


def test_failover_needs_an_origin(edge_traces):
    d = Deployment((Node("mo", Role.MASTER_ORIGIN), Node("b1", Role.BOT)), (("b1", "mo"),))
    with pytest.raises(ValueError, match="Origin"):
        run_pipeline(d, {"b1": edge_traces["b1"]}, PipelineConfig(policy="edge_only", failover_at_s=1.0))


# ---------------------------------------------------------- contention


def test_effective_rate_values():
    assert 1200 <= effective_csi_rate(1500, 4, 0.0) <= 1300
    assert 900 <= effective_csi_rate(1500, 4, 1.0) <= 1100
    assert effective_csi_rate(1500, 1, 0.0) < 1500


def test_effective_rate_monotone():
    rates = [effective_csi_rate(1500, n, 0.3) for n in range(1, 10)]
    assert all(b < a for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        effective_csi_rate(1500, -1, 0.0)
    with pytest.raises(ValueError):
        effective_csi_rate(math.nan, 1, 0.0)


def test_daily_bandwidth_closed_form():
    rep = daily_bandwidth(100, 56, 0.01)
    windows = 86400 // 6
    assert rep.messages == round(0.01 * windows)
    assert rep.raw_bytes == 8_640_000 * raw_frame_bytes(56)
    assert rep.ratio <= 0.01
