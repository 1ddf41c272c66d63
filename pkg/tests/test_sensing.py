import json

import numpy as np
import pytest

from homesense.channel import ChannelConfig, ImpairmentConfig, SubjectProfile, generate_trace
from homesense.foundation import PowerWindow, combine_mrc, compute_acf
from homesense.sensing import (
    GAIT_RATE_HZ,
    SensingParams,
    WindowStream,
    analyze_window,
    iter_windows,
    records_to_ndjson,
    window_count,
)


@pytest.fixture(scope="module")
def walk():
    cfg = ChannelConfig.heterogeneous(4.0, sample_rate_hz=GAIT_RATE_HZ, rng_seed=8)
    return generate_trace(cfg, SubjectProfile.human(), 12.0)


def test_disjoint_windows_on_sequence_grid(walk):
    reps = list(iter_windows(walk, SensingParams()))
    assert [r.end_s for r in reps] == [6.0, 12.0]
    assert all(r.start_s == r.end_s - 6.0 for r in reps)
    assert window_count(12.0, SensingParams()) == 2
    assert window_count(12.0, SensingParams(), hop_s=3.0) == 3
    assert window_count(5.0, SensingParams()) == 0


def test_motion_window_carries_queue(walk):
    params = SensingParams()
    rep = next(iter_windows(walk, params))
    assert rep.motion
    # 6 s of 0.4 s blocks every 0.05 s
    assert len(rep.queue) == len(rep.queue_decisions) == 113
    assert len(rep.speeds) == 113
    assert rep.queue[0].lags_s[-1] == pytest.approx(0.2)
    speed, quality = rep.summary_speed()
    assert 0.5 < speed < 2.0 and 0 < quality <= 1


def test_static_window_has_no_queue():
    cfg = ChannelConfig(sample_rate_hz=100.0, rng_seed=2)
    rep = next(iter_windows(generate_trace(cfg, SubjectProfile.none(), 6.0), SensingParams()))
    assert rep.valid and not rep.motion and rep.queue == []
    assert rep.summary_speed() == (None, 0.0)


def test_decision_matches_direct_computation(walk):
    rep = next(iter_windows(walk, SensingParams(), with_queue=False))
    p = walk.power()[: int(6 * GAIT_RATE_HZ)]
    acf = combine_mrc(compute_acf(PowerWindow.from_power(p, GAIT_RATE_HZ), 1 / GAIT_RATE_HZ))
    phi = float(acf.weights @ acf.motion_statistics)
    assert rep.decision.motion_statistic == pytest.approx(phi, rel=1e-6)


def test_lossy_window_is_invalid():
    cfg = ChannelConfig(sample_rate_hz=100.0, rng_seed=2)
    tr = generate_trace(cfg, SubjectProfile.human(), 12.0, ImpairmentConfig(packet_loss_rate=0.3))
    reps = list(iter_windows(tr, SensingParams()))
    assert reps and all(not r.valid for r in reps)
    assert all(r.record()["verdict"] == "invalid" for r in reps)


def test_stream_equals_iterator(walk):
    params = SensingParams()
    stream = WindowStream(walk.device_id, walk.subcarrier_count, walk.sample_rate_hz, params, hop_s=2.0)
    pushed = [r for f in walk for r in stream.push(f)]
    batch = list(iter_windows(walk, params, hop_s=2.0))
    assert records_to_ndjson(pushed) == records_to_ndjson(batch)


def test_records_are_ndjson(walk):
    text = records_to_ndjson(iter_windows(walk, SensingParams()))
    lines = text.splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert set(rec) == {"device", "t", "phi", "verdict", "v", "quality"}
    assert rec["verdict"] == "motion" and rec["t"] == 6.0


def test_analyze_window_force_queue():
    rng = np.random.default_rng(0)
    w = PowerWindow.from_power(50 + rng.standard_normal((600, 4)), 100.0)
    rep = analyze_window(w, SensingParams(), with_queue=True)
    assert not rep.motion and len(rep.queue) > 0


def test_params_validation():
    with pytest.raises(ValueError):
        SensingParams(queue_block_s=0.2, queue_max_lag_s=0.2)
    with pytest.raises(ValueError):
        SensingParams(min_completeness=1.5)
