"""Per-window sensing: motion decision, ACF queue and speed trace.

A decision window (default 6 s) gets one motion decision from its full-length
ACF.  Motion windows additionally get an ACF queue: short blocks (0.4 s,
hopped every 0.05 s) whose combined curves feed the speed estimator, giving
a speed trace fine enough to resolve stride cycles.  The queue is what the
edge uploads; the cloud rebuilds the speed trace from it.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from .channel import DEFAULT_WAVELENGTH_M, Trace
from .foundation import (
    AcfCurve,
    MotionDecision,
    PowerWindow,
    SpeedTrace,
    block_acfs,
    combine_mrc,
    compute_acf,
    estimate_speed,
    motion_statistic,
)

GAIT_RATE_HZ = 500.0


@dataclass(frozen=True)
class SensingParams:
    window_len_s: float = 6.0
    queue_block_s: float = 0.4
    queue_hop_s: float = 0.05
    queue_max_lag_s: float = 0.2
    threshold: float | None = None
    # windows with more bridged (lost) samples than this fraction are unusable
    min_completeness: float = 0.9
    wavelength_m: float = DEFAULT_WAVELENGTH_M

    def __post_init__(self):
        if self.queue_max_lag_s > self.queue_block_s / 2:
            raise ValueError("queue_max_lag_s must not exceed half the queue block")
        if not 0.0 <= self.min_completeness <= 1.0:
            raise ValueError("min_completeness must be in [0, 1]")


@dataclass(eq=False)
class WindowReport:
    device_id: str
    start_s: float
    end_s: float
    completeness: float
    decision: MotionDecision | None
    queue: list[AcfCurve] = field(default_factory=list)
    queue_decisions: list[MotionDecision] = field(default_factory=list)
    speeds: SpeedTrace = field(default_factory=SpeedTrace)

    @property
    def valid(self) -> bool:
        return self.decision is not None

    @property
    def motion(self) -> bool:
        return self.decision is not None and self.decision.motion

    def summary_speed(self) -> tuple[float | None, float]:
        """Median valid speed of the trace and the mean peak quality."""
        v = self.speeds.valid_speeds()
        if len(v) == 0:
            return None, 0.0
        q = np.mean([e.peak_quality for e in self.speeds.entries if e.valid])
        return float(np.median(v)), float(q)

    def record(self) -> dict:
        speed, quality = self.summary_speed()
        return {
            "device": self.device_id,
            "t": round(self.end_s, 6),
            "phi": None if self.decision is None else round(self.decision.motion_statistic, 9),
            "verdict": "invalid" if self.decision is None else self.decision.verdict,
            "v": None if speed is None else round(speed, 6),
            "quality": round(quality, 6),
        }


def queue_speeds(queue: list[AcfCurve], wavelength_m: float) -> SpeedTrace:
    return SpeedTrace([estimate_speed(a, wavelength_m) for a in queue])


def acf_queue(power: np.ndarray, sample_rate_hz: float, params: SensingParams, t0: float = 0.0):
    """Combined ACF curves and motion decisions of the queue blocks."""
    curves = [
        combine_mrc(a)
        for a in block_acfs(power, sample_rate_hz, params.queue_block_s, params.queue_hop_s, params.queue_max_lag_s, t0)
    ]
    return curves, [motion_statistic(a) for a in curves]


def analyze_window(
    window: PowerWindow,
    params: SensingParams,
    device_id: str = "bot-0",
    end_s: float | None = None,
    with_queue: bool | None = None,
) -> WindowReport:
    """Decide motion for the buffered window; build the ACF queue on motion.

    ``with_queue`` forces (True) or suppresses (False) the queue regardless
    of the verdict.
    """
    rate = window.sample_rate_hz
    n = len(window)
    end = n / rate if end_s is None else end_s
    start = end - n / rate
    completeness = window.completeness()
    if completeness < params.min_completeness or n < 4:
        return WindowReport(device_id, start, end, completeness, None)
    acf = combine_mrc(compute_acf(window, 1.0 / rate, time_s=end))
    decision = motion_statistic(acf, params.threshold)
    report = WindowReport(device_id, start, end, completeness, decision)
    if with_queue or (with_queue is None and decision.motion):
        report.queue, report.queue_decisions = acf_queue(window.samples(), rate, params, start)
        report.speeds = queue_speeds(report.queue, params.wavelength_m)
    return report


class WindowStream:
    """Incremental form of :func:`iter_windows` for frame-at-a-time callers.

    ``push`` returns the reports (zero or one) completed by that frame.
    After a gap reset the next report waits until the window is full again.
    """

    def __init__(
        self,
        device_id: str,
        subcarrier_count: int,
        sample_rate_hz: float,
        params: SensingParams,
        hop_s: float | None = None,
        with_queue: bool | None = None,
        window: PowerWindow | None = None,
    ):
        self.device_id = device_id
        self.params = params
        self.with_queue = with_queue
        self.window = window or PowerWindow(subcarrier_count, sample_rate_hz, params.window_len_s)
        self.hop = max(1, int(round((hop_s or params.window_len_s) * sample_rate_hz)))
        self._resets = self.window.resets
        self._next_emit: int | None = None

    def push(self, frame) -> list[WindowReport]:
        win = self.window
        win.update(frame)
        if win.last_sequence is None:
            return []
        if win.resets != self._resets or self._next_emit is None:
            self._resets = win.resets
            self._next_emit = win.last_sequence + win.capacity - len(win)
        if win.last_sequence >= self._next_emit and win.full:
            end = (win.last_sequence + 1) / win.sample_rate_hz
            self._next_emit = win.last_sequence + self.hop
            return [analyze_window(win, self.params, self.device_id, end, self.with_queue)]
        return []


def iter_windows(
    trace: Trace,
    params: SensingParams,
    hop_s: float | None = None,
    with_queue: bool | None = None,
    window: PowerWindow | None = None,
) -> Iterator[WindowReport]:
    """Stream a trace through a rolling window, reporting every ``hop_s``.

    Times are on the sequence grid (``sequence / rate``), so timestamp jitter
    does not move window boundaries.  The first report comes once the window
    is full; ``hop_s`` defaults to the window length (disjoint windows).
    """
    stream = WindowStream(
        trace.device_id, trace.subcarrier_count, trace.sample_rate_hz, params, hop_s, with_queue, window
    )
    for frame in trace:
        yield from stream.push(frame)


def records_to_ndjson(reports) -> str:
    return "".join(json.dumps(r.record(), sort_keys=True) + "\n" for r in reports)


def window_count(duration_s: float, params: SensingParams, hop_s: float | None = None) -> int:
    hop = hop_s or params.window_len_s
    if duration_s < params.window_len_s:
        return 0
    return 1 + int(math.floor((duration_s - params.window_len_s) / hop + 1e-9))
