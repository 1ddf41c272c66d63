"""Calibration-free sensing core on the CSI power response ``G = |H|^2``.

Pipeline per link: a rolling power window with streaming mean/variance, the
biased per-subcarrier autocorrelation, a motion statistic (ACF at one sample
lag) tested against a universal threshold, maximal-ratio combining of the
per-subcarrier ACFs, and speed from the first peak of the combined ACF's
differential, ``v = x0 * wavelength / (2 pi tau_peak)``.

ACF rows and the combined curve are stored as float32, the wire precision of
the upload codec.  Two consequences follow: the cloud sees exactly the values
the edge used, and gain scaling or phase rotation of the input (which only
perturb ``|H|^2`` at the float64 rounding level) leave every downstream value
unchanged.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from .bessel import bessel_j0, first_differential_peak
from .channel import CsiFrame

Z_99 = 2.3263478740408408  # standard normal 0.99 quantile
# First local maximum of dJ0/dx; calibrate_x0() reproduces it end to end.
X0 = 5.331442773525032
SMOOTH_TAPS = 5
PROMINENCE_FLOOR = 0.02
DEGENERATE_EPS = 1e-12
_X_DIFF_PEAK = first_differential_peak()


def default_threshold(sample_count: int) -> float:
    """Null-distribution threshold ``z_0.99 / sqrt(n)`` for the lag-1 ACF."""
    return Z_99 / math.sqrt(sample_count)


class PowerWindow:
    """Rolling buffer of the last ``window_len_s`` seconds of power samples.

    Samples sit on the nominal sampling grid given by frame sequence numbers.
    Short sequence gaps (lost packets) are bridged by linear interpolation and
    flagged; a gap longer than ``max_gap`` samples restarts the window.
    Mean and variance are maintained with Welford updates and removals and
    re-synchronised from the buffer once per window length.
    """

    def __init__(
        self,
        subcarrier_count: int,
        sample_rate_hz: float = 100.0,
        window_len_s: float = 6.0,
        max_gap: int | None = None,
    ):
        if subcarrier_count < 1 or sample_rate_hz <= 0 or window_len_s <= 0:
            raise ValueError("invalid window geometry")
        self.subcarrier_count = subcarrier_count
        self.sample_rate_hz = float(sample_rate_hz)
        self.window_len_s = float(window_len_s)
        self.capacity = int(round(window_len_s * sample_rate_hz))
        self.max_gap = self.capacity // 4 if max_gap is None else max_gap
        self._buf = np.zeros((self.capacity, subcarrier_count))
        self._filled = np.zeros(self.capacity, dtype=bool)
        self._head = 0  # next write slot
        self._count = 0
        self._mean = np.zeros(subcarrier_count)
        self._m2 = np.zeros(subcarrier_count)
        self._since_sync = 0
        self.last_sequence: int | None = None
        self.last_timestamp: float | None = None
        self.dropped = 0
        self.resets = 0

    @property
    def sample_interval_s(self) -> float:
        return 1.0 / self.sample_rate_hz

    def __len__(self) -> int:
        return self._count

    @property
    def full(self) -> bool:
        return self._count == self.capacity

    @property
    def mean(self) -> np.ndarray:
        return self._mean.copy()

    @property
    def variance(self) -> np.ndarray:
        """Population variance (divide by n) of each subcarrier's power."""
        if self._count == 0:
            return np.zeros(self.subcarrier_count)
        return np.maximum(self._m2 / self._count, 0.0)

    def completeness(self) -> float:
        """Fraction of buffered samples that were received rather than bridged."""
        if self._count == 0:
            return 0.0
        idx = (self._head - self._count + np.arange(self._count)) % self.capacity
        return 1.0 - float(self._filled[idx].mean())

    def samples(self) -> np.ndarray:
        """Buffered power, oldest first, shape ``(n, subcarriers)``."""
        idx = (self._head - self._count + np.arange(self._count)) % self.capacity
        return self._buf[idx]

    def clear(self) -> None:
        self._count = 0
        self._head = 0
        self._mean[:] = 0.0
        self._m2[:] = 0.0
        self._since_sync = 0
        self.last_sequence = None

    def _push(self, g: np.ndarray, bridged: bool) -> None:
        if self._count == self.capacity:
            old = self._buf[self._head]
            # replace-in-place Welford update for a full window
            new_mean = self._mean + (g - old) / self._count
            self._m2 += (g - old) * (g - new_mean + old - self._mean)
            self._mean = new_mean
        else:
            self._count += 1
            delta = g - self._mean
            self._mean = self._mean + delta / self._count
            self._m2 += delta * (g - self._mean)
        self._buf[self._head] = g
        self._filled[self._head] = bridged
        self._head = (self._head + 1) % self.capacity
        self._since_sync += 1
        if self._since_sync >= self.capacity:
            data = self.samples()
            self._mean = data.mean(axis=0)
            self._m2 = ((data - self._mean) ** 2).sum(axis=0)
            self._since_sync = 0

    def update(self, frame: CsiFrame) -> PowerWindow:
        """Append one frame's power; returns the window for chaining.

        Frames with non-finite gains or a wrong subcarrier count are dropped
        and counted in :attr:`dropped`.
        """
        gains = np.asarray(frame.gains)
        if gains.shape != (self.subcarrier_count,) or not np.all(np.isfinite(gains)):
            self.dropped += 1
            return self
        if self.last_timestamp is not None and frame.timestamp_s < self.last_timestamp:
            raise ValueError("frame timestamps must be nondecreasing")
        g = np.abs(gains) ** 2
        if self.last_sequence is not None:
            step = frame.sequence - self.last_sequence
            if step <= 0:
                self.dropped += 1
                return self
            if step - 1 > self.max_gap:
                self.clear()
                self.resets += 1
            elif step > 1:
                prev = self._buf[(self._head - 1) % self.capacity]
                for j in range(1, step):
                    self._push(prev + (g - prev) * (j / step), bridged=True)
        self._push(g, bridged=False)
        self.last_sequence = frame.sequence
        self.last_timestamp = frame.timestamp_s
        return self

    def extend(self, frames: Iterable[CsiFrame]) -> PowerWindow:
        for f in frames:
            self.update(f)
        return self

    @classmethod
    def from_power(cls, power: np.ndarray, sample_rate_hz: float, window_len_s: float | None = None) -> PowerWindow:
        """Window pre-loaded with a block of power samples (batch statistics)."""
        power = np.asarray(power, dtype=float)
        n, f = power.shape
        w = cls(f, sample_rate_hz, window_len_s or n / sample_rate_hz)
        take = power[-w.capacity :]
        w._buf[: len(take)] = take
        w._count = len(take)
        w._head = len(take) % w.capacity
        w._mean = take.mean(axis=0)
        w._m2 = ((take - w._mean) ** 2).sum(axis=0)
        return w


@dataclass(eq=False)
class AcfCurve:
    """Per-subcarrier ACF rows ``(subcarriers, lags)`` plus the MRC combination.

    ``sample_count`` is the number of power samples behind the estimate; it
    sets the default motion threshold and the biased-estimator taper used by
    the speed refinement.  ``None`` marks an analytic (noiseless) curve.
    """

    lags_s: np.ndarray
    rows: np.ndarray
    sample_count: int | None = None
    time_s: float = 0.0
    degenerate: np.ndarray | None = None
    combined: np.ndarray | None = None
    weights: np.ndarray | None = None

    @property
    def sample_interval_s(self) -> float:
        return float(self.lags_s[0])

    @property
    def motion_statistics(self) -> np.ndarray:
        """Per-subcarrier ``phi(f)``, the ACF at one sample lag."""
        return self.rows[:, 0].astype(float)


def _autocorr_rows(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocovariance ``(1/n) sum x_t x_{t-tau}`` along axis -2.

    ``x`` is mean-removed with shape ``(..., n, subcarriers)``; returns
    ``(..., subcarriers, max_lag + 1)``.
    """
    n = x.shape[-2]
    nfft = 1 << int(math.ceil(math.log2(2 * n - 1)))
    spec = np.fft.rfft(x, nfft, axis=-2)
    acov = np.fft.irfft(spec.real**2 + spec.imag**2, nfft, axis=-2)[..., : max_lag + 1, :] / n
    return np.swapaxes(acov, -1, -2)


def _normalize(acov: np.ndarray, var: np.ndarray, mean: np.ndarray):
    degenerate = var < DEGENERATE_EPS * mean**2
    safe = np.where(degenerate, 1.0, var)
    rho = acov[..., 1:] / safe[..., None]
    rho = np.where(degenerate[..., None], 0.0, rho)
    return np.clip(rho, -1.0, 1.0).astype(np.float32), degenerate


def compute_acf(window: PowerWindow, max_lag_s: float, time_s: float | None = None) -> AcfCurve:
    """Biased sample ACF of each subcarrier over lags ``dt, 2 dt, ..., max_lag_s``.

    Subcarriers whose variance is below ``1e-12 * mean^2`` are treated as
    static: their rows are zero and they get no MRC weight.
    """
    n = len(window)
    if n < 2:
        raise ValueError("window too short: need at least 2 samples")
    dt = window.sample_interval_s
    max_lag = int(round(max_lag_s / dt))
    if max_lag < 1 or max_lag > n // 2:
        raise ValueError(f"max_lag_s={max_lag_s} outside [dt, span/2] for {n} samples")
    data = window.samples()
    mean = window.mean
    acov = _autocorr_rows(data - mean, max_lag)
    rows, degenerate = _normalize(acov, window.variance, mean)
    lags = dt * np.arange(1, max_lag + 1)
    return AcfCurve(lags, rows, n, time_s if time_s is not None else 0.0, degenerate)


def block_acfs(power: np.ndarray, sample_rate_hz: float, block_s: float, hop_s: float, max_lag_s: float, t0: float = 0.0):
    """ACF curves of consecutive sub-blocks of a power array (batch statistics).

    Blocks of ``block_s`` seconds start every ``hop_s`` seconds; each curve is
    stamped with its block's end time relative to ``t0``.
    """
    dt = 1.0 / sample_rate_hz
    m = int(round(block_s * sample_rate_hz))
    hop = max(1, int(round(hop_s * sample_rate_hz)))
    max_lag = int(round(max_lag_s * sample_rate_hz))
    n = len(power)
    if m < 2 or n < m or max_lag < 1 or max_lag > m // 2:
        return []
    starts = np.arange(0, n - m + 1, hop)
    view = np.lib.stride_tricks.sliding_window_view(power, m, axis=0)[starts]  # (B, F, m)
    blocks = np.swapaxes(view, -1, -2)
    mean = blocks.mean(axis=-2)
    x = blocks - mean[:, None, :]
    var = (x * x).mean(axis=-2)
    acov = _autocorr_rows(x, max_lag)
    rows, degenerate = _normalize(acov, var, mean)
    lags = dt * np.arange(1, max_lag + 1)
    return [
        AcfCurve(lags, rows[i], m, t0 + (s + m) * dt, degenerate[i]) for i, s in enumerate(starts)
    ]


def combine_mrc(acf: AcfCurve) -> AcfCurve:
    """Fill ``weights`` (proportional to positive motion statistics) and ``combined``.

    Falls back to uniform weights over non-degenerate subcarriers when no
    motion statistic is positive.
    """
    phi = acf.motion_statistics
    ok = ~acf.degenerate if acf.degenerate is not None else np.ones(len(phi), dtype=bool)
    if not ok.any():
        ok = np.ones(len(phi), dtype=bool)
    w = np.where(ok, np.maximum(phi, 0.0), 0.0)
    total = w.sum()
    if total <= 0:
        w = ok.astype(float)
        total = w.sum()
    w = w / total
    combined = (w @ acf.rows.astype(float)).astype(np.float32)
    return AcfCurve(acf.lags_s, acf.rows, acf.sample_count, acf.time_s, acf.degenerate, combined, w)


def uniform_combine(acf: AcfCurve) -> np.ndarray:
    """Plain average of the non-degenerate rows (the MRC baseline)."""
    ok = ~acf.degenerate if acf.degenerate is not None else np.ones(acf.rows.shape[0], dtype=bool)
    if not ok.any():
        return np.zeros(acf.rows.shape[1])
    return acf.rows[ok].astype(float).mean(axis=0)


@dataclass(frozen=True)
class MotionDecision:
    motion_statistic: float
    threshold: float
    time_s: float = 0.0

    @property
    def motion(self) -> bool:
        return self.motion_statistic > self.threshold

    @property
    def verdict(self) -> str:
        return "motion" if self.motion else "static"


def motion_statistic(acf: AcfCurve, threshold: float | None = None) -> MotionDecision:
    """MRC-weighted mean of ``phi(f)`` tested against ``threshold``.

    The default threshold is ``z_0.99 / sqrt(n)``.
    """
    if acf.rows.size == 0:
        raise ValueError("empty ACF")
    if acf.weights is None:
        acf = combine_mrc(acf)
    if threshold is None:
        if acf.sample_count is None:
            raise ValueError("threshold required for an ACF without a sample count")
        threshold = default_threshold(acf.sample_count)
    phi = float(acf.weights @ acf.motion_statistics)
    return MotionDecision(phi, float(threshold), acf.time_s)


@dataclass(frozen=True)
class SpeedEstimate:
    time_s: float
    speed_mps: float | None
    peak_lag_s: float | None
    peak_quality: float

    @property
    def valid(self) -> bool:
        return self.speed_mps is not None


@dataclass
class SpeedTrace:
    entries: list[SpeedEstimate] = field(default_factory=list)
    bessel_constant: float = X0

    def __len__(self) -> int:
        return len(self.entries)

    def times(self) -> np.ndarray:
        return np.array([e.time_s for e in self.entries])

    def speeds(self) -> np.ndarray:
        """Speeds with ``nan`` where no estimate exists."""
        return np.array([np.nan if e.speed_mps is None else e.speed_mps for e in self.entries])

    def valid_speeds(self) -> np.ndarray:
        return np.array([e.speed_mps for e in self.entries if e.speed_mps is not None])


def _moving_average(x: np.ndarray, taps: int) -> np.ndarray:
    kernel = np.ones(taps)
    num = np.convolve(x, kernel, mode="same")
    den = np.convolve(np.ones_like(x), kernel, mode="same")
    return num / den


def _no_estimate(t: float) -> SpeedEstimate:
    return SpeedEstimate(t, None, None, 0.0)


def estimate_speed(
    acf: AcfCurve,
    wavelength_m: float,
    x0: float = X0,
    *,
    threshold: float | None = None,
    refine: bool = True,
) -> SpeedEstimate:
    """Speed from the first qualifying peak of the combined ACF's differential.

    The differential ``S(tau + dt) - S(tau)`` is placed at lag midpoints,
    smoothed with a 5-tap moving average and scaled by its largest magnitude.
    The first local maximum with positive slope and prominence of at least
    ``PROMINENCE_FLOOR`` gives a coarse ``tau_peak``.  With ``refine`` the
    lag is then pinned to sub-sample precision by fitting ``a J0(b tau)``
    (times the biased-estimator taper) around it; the differential's first
    peak of the fitted curve sits at ``tau = x_d / b``.

    Curves whose lag-1 value fails the motion test yield no estimate, as do
    curves without a qualifying peak.
    """
    if wavelength_m <= 0:
        raise ValueError("wavelength_m must be > 0")
    if acf.combined is None:
        acf = combine_mrc(acf)
    t = acf.time_s
    s = acf.combined.astype(float)
    lags = acf.lags_s
    if len(s) < SMOOTH_TAPS + 2:
        return _no_estimate(t)
    if threshold is None and acf.sample_count is not None:
        threshold = default_threshold(acf.sample_count)
    if threshold is not None and not s[0] > threshold:
        return _no_estimate(t)

    dt = float(lags[1] - lags[0])
    diff = np.diff(s)
    mids = lags[:-1] + 0.5 * dt
    smooth = _moving_average(diff, SMOOTH_TAPS)
    scale = np.max(np.abs(smooth))
    if not scale > 0:
        return _no_estimate(t)
    norm = smooth / scale
    peaks, props = find_peaks(norm, prominence=PROMINENCE_FLOOR)
    keep = norm[peaks] > 0
    peaks, prominences = peaks[keep], props["prominences"][keep]
    if len(peaks) == 0:
        return _no_estimate(t)
    tau = float(mids[peaks[0]])
    quality = float(min(1.0, prominences[0]))

    if refine:
        tau = _refine_peak_lag(s, lags, tau, acf.sample_count)
    speed = x0 * wavelength_m / (2 * math.pi * tau)
    return SpeedEstimate(t, float(speed), tau, quality)


def _refine_peak_lag(s, lags, tau_coarse, sample_count):
    span = min(lags[-1], 1.6 * tau_coarse)
    sel = lags <= span + 1e-12
    if sel.sum() < 3:
        return tau_coarse
    y = s[sel]
    x = lags[sel]
    taper = 1.0 - x / (sample_count * lags[0]) if sample_count else np.ones_like(x)
    b0 = _X_DIFF_PEAK / tau_coarse
    lo, hi = b0 / 1.35, b0 * 1.35

    def resid(b):
        tmpl = taper * bessel_j0(b * x)
        den = tmpl @ tmpl
        if den <= 0:
            return float(y @ y)
        a = (y @ tmpl) / den
        r = y - a * tmpl
        return float(r @ r)

    res = minimize_scalar(resid, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9 * b0})
    b = float(res.x)
    if not (lo * 1.001 < b < hi / 1.001):
        return tau_coarse
    return _X_DIFF_PEAK / b


def model_acf(
    speed_mps: float,
    wavelength_m: float,
    sample_interval_s: float,
    max_lag_s: float,
    motion_fraction: float = 1.0,
) -> AcfCurve:
    """Noiseless curve ``motion_fraction * J0(k v tau)`` as a one-row AcfCurve."""
    n_lags = int(round(max_lag_s / sample_interval_s))
    lags = sample_interval_s * np.arange(1, n_lags + 1)
    k = 2 * math.pi / wavelength_m
    row = motion_fraction * bessel_j0(k * speed_mps * lags)
    curve = AcfCurve(lags, row[None, :], None, 0.0, np.zeros(1, dtype=bool))
    return AcfCurve(lags, curve.rows, None, 0.0, curve.degenerate, row.copy(), np.ones(1))


def calibrate_x0(
    references=((0.5, 1e-3), (1.0, 2e-3), (2.0, 1e-3), (1.3, 7e-4)),
    wavelength_m: float = 0.0517,
) -> float:
    """Bessel abscissa that makes :func:`estimate_speed` exact on model curves.

    Runs the estimator with ``x0 = 1`` on analytic ACFs for each ``(speed,
    sample_interval)`` reference and solves ``v = x0 lambda / (2 pi tau)`` for
    ``x0``.  The references must agree; their mean is returned.
    """
    k = 2 * math.pi / wavelength_m
    values = []
    for v, dt in references:
        max_lag = 3.0 * _X_DIFF_PEAK / (k * v)
        est = estimate_speed(model_acf(v, wavelength_m, dt, max_lag), wavelength_m, x0=1.0)
        if not est.valid:
            raise RuntimeError(f"no peak on the model curve for v={v}, dt={dt}")
        values.append(k * v * est.peak_lag_s)
    values = np.array(values)
    if np.ptp(values) > 1e-8 * values.mean():
        raise RuntimeError(f"calibration references disagree: {values}")
    return float(values.mean())


def acf_snr(curve, lags_s: np.ndarray, speed_mps: float, wavelength_m: float, search: float = 0.2) -> float:
    """ACF signal-to-noise ratio of a combined curve, in dB.

    The motion signal is the least-squares fit ``a J0(b tau)`` with ``b``
    searched within ``+/- search`` of the true ``k v``; everything the fit
    leaves over counts as noise.
    """
    s = np.asarray(curve, dtype=float)
    lags_s = np.asarray(lags_s, dtype=float)
    b0 = 2 * math.pi / wavelength_m * speed_mps

    def fit(b):
        tmpl = bessel_j0(b * lags_s)
        a = (s @ tmpl) / (tmpl @ tmpl)
        return a * tmpl

    res = minimize_scalar(
        lambda b: float(np.sum((s - fit(b)) ** 2)), bounds=(b0 * (1 - search), b0 * (1 + search)), method="bounded"
    )
    signal = fit(res.x)
    noise = float(np.sum((s - signal) ** 2))
    if noise <= 0:
        return math.inf
    return 10.0 * math.log10(float(signal @ signal) / noise)
