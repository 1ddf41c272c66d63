"""Device qualification: CSI-level and application-level quality scores.

Sub-scores are on 0-100.  Timestamp and amplitude scores judge the raw CSI
stream; motion and human scores judge what the sensing pipeline makes of a
scripted 30 s walk followed by 30 s of stillness.  Every score is rounded
to 6 decimals so that reports are stable under harmless float noise.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import kurtosis

from .channel import (
    ChannelConfig,
    ImpairmentConfig,
    SubjectProfile,
    Trace,
    attenuate_for_distance,
    generate_trace,
)
from .sensing import GAIT_RATE_HZ, SensingParams, iter_windows
from .subject import HUMAN, ClassifierModel, classify, extract_features

MIN_FRAMES = 100
LOSS_CEILING = 0.10
JITTER_CEILING = 1.0
BAD_SAMPLE_CEILING = 0.5
# excess kurtosis tolerated before the amplitude score starts to drop
KURTOSIS_FREE = 1.0
KURTOSIS_SPAN = 4.0
QUALIFY_THRESHOLD = 60.0
TEST_DURATION_S = 30.0
DURATION_TOLERANCE = 0.10
WEIGHTS = {"timestamp": 0.2, "amplitude": 0.2, "motion": 0.3, "human": 0.3}
_DIGITS = 6
REFERENCE_MEAN_DB = 10.0


def _round(x: float) -> float:
    return round(float(x), _DIGITS)


def _check_frames(trace: Trace) -> None:
    if len(trace) < MIN_FRAMES:
        raise ValueError(f"need at least {MIN_FRAMES} frames, got {len(trace)}")


def packet_loss_rate(trace: Trace) -> float:
    expected = int(trace.sequences[-1] - trace.sequences[0]) + 1
    return (expected - len(trace)) / expected


def timestamp_score(trace: Trace) -> tuple[float, float]:
    """Score from sequence-gap loss and inter-arrival jitter, plus the loss rate.

    ``100 * max(0, 1 - loss/0.10) * max(0, 1 - cv/1.0)`` where ``cv`` is the
    coefficient of variation of inter-arrival times.
    """
    _check_frames(trace)
    loss = packet_loss_rate(trace)
    gaps = np.diff(trace.timestamps)
    mean_gap = gaps.mean()
    cv = float(gaps.std() / mean_gap) if mean_gap > 0 else math.inf
    return timestamp_formula(loss, cv), _round(loss)


def timestamp_formula(loss_rate: float, jitter_cv: float) -> float:
    score = 100.0 * max(0.0, 1.0 - loss_rate / LOSS_CEILING) * max(0.0, 1.0 - jitter_cv / JITTER_CEILING)
    return _round(score)


def amplitude_score(trace: Trace) -> float:
    """Penalise unusable samples and heavy-tailed power.

    A sample is bad when its magnitude is non-finite, zero, or pinned at a
    clipping ceiling (the trace maximum, reached by more than 0.1% of the
    samples).  A subcarrier is usable when its power varies at all.  The
    score is ``100 * max(0, 1 - bad/0.5) * usable * k`` where ``k`` drops
    linearly from 1 to 0 as the median absolute excess kurtosis of usable
    subcarriers goes from 1 to 5.
    """
    _check_frames(trace)
    mag = np.abs(trace.gains)
    finite = np.isfinite(mag)
    bad = ~finite | (mag == 0)
    if finite.any():
        top = mag[finite].max()
        pinned = finite & (mag >= top * (1 - 1e-9))
        if top > 0 and pinned.mean() > 1e-3:
            bad |= pinned
    bad_frac = float(bad.mean())

    power = np.where(bad, np.nan, mag * mag)
    usable = []
    for col in power.T:
        col = col[~np.isnan(col)]
        if len(col) >= 4 and np.ptp(col) > 1e-12 * max(1.0, float(np.abs(col).max())):
            usable.append(col)
    usable_frac = len(usable) / power.shape[1]
    if not usable:
        return 0.0
    k = float(np.median([abs(kurtosis(c)) for c in usable]))
    k_factor = min(1.0, max(0.0, 1.0 - (k - KURTOSIS_FREE) / KURTOSIS_SPAN))
    return _round(100.0 * max(0.0, 1.0 - bad_frac / BAD_SAMPLE_CEILING) * usable_frac * k_factor)


@dataclass(frozen=True)
class QualityReport:
    timestamp_score: float
    amplitude_score: float
    motion_score: float
    human_score: float | None
    final_score: float
    packet_loss_rate: float
    qualified: bool
    walk_windows: int = 0
    static_windows: int = 0

    @property
    def degraded(self) -> bool:
        """True when no classifier was available and the human score is omitted."""
        return self.human_score is None

    def to_json(self) -> str:
        doc = asdict(self)
        doc["degraded"] = self.degraded
        return json.dumps(doc, sort_keys=True) + "\n"


def final_score(timestamp: float, amplitude: float, motion: float, human: float | None) -> float:
    """Weighted average; without a human score the other weights are renormalised."""
    parts = {"timestamp": timestamp, "amplitude": amplitude, "motion": motion, "human": human}
    used = {k: v for k, v in parts.items() if v is not None}
    total = sum(WEIGHTS[k] for k in used)
    return _round(sum(WEIGHTS[k] * v for k, v in used.items()) / total)


def is_qualified(final: float) -> bool:
    """The device qualifies strictly above the threshold."""
    return final > QUALIFY_THRESHOLD


def _check_duration(trace: Trace, name: str) -> None:
    span = (int(trace.sequences[-1] - trace.sequences[0]) + 1) / trace.sample_rate_hz
    lo, hi = TEST_DURATION_S * (1 - DURATION_TOLERANCE), TEST_DURATION_S * (1 + DURATION_TOLERANCE)
    if not lo <= span <= hi:
        raise ValueError(f"{name}: expected {TEST_DURATION_S:g} s +/- 10%, got {span:.2f} s")


def qualification_test(
    walk_trace: Trace,
    static_trace: Trace,
    model: ClassifierModel | None,
    params: SensingParams | None = None,
) -> QualityReport:
    """Score a device from a 30 s walk trace and a 30 s static trace.

    Both traces are cut into 6 s windows with 50% overlap.  Windows that
    cannot be decided (too much loss) count against the motion score, as
    they would in deployment.
    """
    params = params or SensingParams()
    _check_frames(walk_trace)
    _check_frames(static_trace)
    _check_duration(walk_trace, "walk_trace")
    _check_duration(static_trace, "static_trace")
    hop = params.window_len_s / 2

    ts_w, loss_w = timestamp_score(walk_trace)
    ts_s, loss_s = timestamp_score(static_trace)
    ts = _round((ts_w + ts_s) / 2)
    amp = _round((amplitude_score(walk_trace) + amplitude_score(static_trace)) / 2)
    loss = _round((loss_w + loss_s) / 2)

    # the ACF queue only feeds the classifier
    walk_queue = None if model is not None else False
    walk = list(iter_windows(walk_trace, params, hop_s=hop, with_queue=walk_queue))
    still = list(iter_windows(static_trace, params, hop_s=hop, with_queue=False))
    walk_hits = sum(r.motion for r in walk) / len(walk) if walk else 0.0
    still_hits = sum(r.valid and not r.motion for r in still) / len(still) if still else 0.0
    motion = _round(100.0 * walk_hits * still_hits)

    human = None
    if model is not None:
        humans = 0
        for r in walk:
            if r.motion:
                fv = extract_features(r.speeds, r.queue, r.queue_decisions)
                humans += classify(model, fv)[0] == HUMAN
        human = _round(100.0 * humans / len(walk)) if walk else 0.0

    final = final_score(ts, amp, motion, human)
    return QualityReport(ts, amp, motion, human, final, loss, is_qualified(final), len(walk), len(still))


def qualification_traces(
    distance_m: float = 3.0,
    seed: int = 0,
    packet_loss_rate: float = 0.0,
    sample_rate_hz: float = GAIT_RATE_HZ,
) -> tuple[Trace, Trace]:
    """Synthetic 30 s walk and static traces for a device at ``distance_m``."""
    cfg = attenuate_for_distance(
        ChannelConfig.heterogeneous(mean_db=REFERENCE_MEAN_DB, sample_rate_hz=sample_rate_hz), distance_m
    )
    impair = ImpairmentConfig(packet_loss_rate=packet_loss_rate) if packet_loss_rate else None
    walk = generate_trace(
        dataclasses.replace(cfg, rng_seed=2 * seed + 1), SubjectProfile.human(), TEST_DURATION_S, impair,
        device_id="walk",
    )
    still = generate_trace(
        dataclasses.replace(cfg, rng_seed=2 * seed + 2), SubjectProfile.none(), TEST_DURATION_S, impair,
        device_id="static",
    )
    return walk, still
