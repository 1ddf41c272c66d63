"""Human vs non-human recognition from locomotion features.

Thirteen features per decision window: seven physical ones from the speed
trace (gait presence, stride length and cycle, speed mean, variance and
quartiles) and six statistical ones from the ACF queue and motion statistics.
A linear SVM separates humans from pets, robots and fans; a sliding vote
window turns per-window margins into a 0-99 confidence.
"""

from __future__ import annotations

import json
import math
from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.signal import find_peaks

from .foundation import AcfCurve, MotionDecision, SpeedTrace

HUMAN = "human"
NON_HUMAN = "non-human"
MODEL_FORMAT = "homesense-linear-svm"
MODEL_VERSION = 1

GAIT_PROMINENCE = 0.3
GAIT_LAG_BAND_S = (0.2, 2.5)


@dataclass(frozen=True)
class FeatureVector:
    gait_present: float = 0.0
    stride_length_m: float = 0.0
    stride_cycle_s: float = 0.0
    speed_mean: float = 0.0
    speed_var: float = 0.0
    speed_p25: float = 0.0
    speed_p75: float = 0.0
    acf_peak_mean: float = 0.0
    acf_valley_mean: float = 0.0
    acf_peak_interval_s: float = 0.0
    acf_valley_interval_s: float = 0.0
    ms_mean: float = 0.0
    ms_var: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> FeatureVector:
        values = np.asarray(values, dtype=float)
        if values.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features")
        return cls(*(float(v) for v in values))


FEATURE_NAMES = tuple(f.name for f in fields(FeatureVector))


def _fill_gaps(x: np.ndarray) -> np.ndarray:
    ok = ~np.isnan(x)
    idx = np.arange(len(x))
    out = x.copy()
    out[~ok] = np.interp(idx[~ok], idx[ok], x[ok])
    return out


def _parabolic_offset(y_prev, y0, y_next) -> float:
    den = y_prev - 2 * y0 + y_next
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (y_prev - y_next) / den, -0.5, 0.5))


def gait_cycle(speeds: np.ndarray, hop_s: float) -> float | None:
    """Stride period from the speed series' autocorrelation, or ``None``.

    The first autocorrelation peak with prominence >= 0.3 whose lag lies in
    [0.2, 2.5] s counts as the stride cycle.
    """
    x = speeds - speeds.mean()
    energy = x @ x
    if len(x) < 4 or energy <= 0:
        return None
    n = len(x)
    hi = min(n - 1, int(math.floor(GAIT_LAG_BAND_S[1] / hop_s)) + 1)
    r = np.array([x[: n - k] @ x[k:] for k in range(hi + 1)]) / energy
    peaks, _ = find_peaks(r, prominence=GAIT_PROMINENCE)
    for p in peaks:
        lag = p * hop_s
        if GAIT_LAG_BAND_S[0] <= lag <= GAIT_LAG_BAND_S[1]:
            if 0 < p < len(r) - 1:
                lag += _parabolic_offset(r[p - 1], r[p], r[p + 1]) * hop_s
            return float(lag)
    return None


def _extrema(curve: AcfCurve):
    s = curve.combined.astype(float)
    peaks, _ = find_peaks(s)
    valleys, _ = find_peaks(-s)
    return s, curve.lags_s, peaks, valleys


def _mean_spacing(lags: np.ndarray) -> float | None:
    # measured from lag 0, where every ACF peaks
    if len(lags) == 0:
        return None
    return float(np.diff(np.concatenate(([0.0], lags))).mean())


def extract_features(
    speeds: SpeedTrace,
    acf_history: Sequence[AcfCurve],
    ms_history: Sequence[MotionDecision],
) -> FeatureVector:
    """Thirteen-feature summary of one decision window.

    A window without any motion verdict in ``ms_history`` maps to the zero
    vector.  Fewer than three valid speed estimates leave the gait and
    stride fields at the sentinel 0.  Interval features are mean spacings of
    successive ACF peaks (or valleys) counted from lag 0.
    """
    if not any(m.motion for m in ms_history):
        return FeatureVector()

    v = speeds.speeds()
    valid = v[~np.isnan(v)]
    gait_present, stride_len, cycle = 0.0, 0.0, 0.0
    if len(valid) >= 3:
        times = speeds.times()
        hop = float(np.median(np.diff(times))) if len(times) > 1 else 0.0
        found = gait_cycle(_fill_gaps(v), hop) if hop > 0 else None
        if found is not None:
            gait_present, cycle = 1.0, found
            stride_len = float(valid.mean()) * cycle

    if len(valid):
        p25, p75 = np.percentile(valid, [25, 75])
        speed_stats = (float(valid.mean()), float(valid.var()), float(p25), float(p75))
    else:
        speed_stats = (0.0, 0.0, 0.0, 0.0)

    peak_vals, valley_vals, peak_gaps, valley_gaps = [], [], [], []
    for curve in acf_history:
        if curve.combined is None:
            continue
        s, lags, peaks, valleys = _extrema(curve)
        peak_vals.extend(s[peaks])
        valley_vals.extend(s[valleys])
        gap = _mean_spacing(lags[peaks])
        if gap is not None:
            peak_gaps.append(gap)
        gap = _mean_spacing(lags[valleys])
        if gap is not None:
            valley_gaps.append(gap)

    def mean_or_zero(vals):
        return float(np.mean(vals)) if len(vals) else 0.0

    ms = np.array([m.motion_statistic for m in ms_history])
    return FeatureVector(
        gait_present,
        stride_len,
        cycle,
        *speed_stats,
        mean_or_zero(peak_vals),
        mean_or_zero(valley_vals),
        mean_or_zero(peak_gaps),
        mean_or_zero(valley_gaps),
        float(ms.mean()),
        float(ms.var()),
    )


@dataclass(frozen=True)
class TrainParams:
    seed: int = 0
    epochs: int = 60
    reg: float = 1e-3
    learning_rate: float = 0.5


@dataclass(frozen=True)
class ClassifierModel:
    weights: tuple[float, ...]
    bias: float
    feature_means: tuple[float, ...]
    feature_scales: tuple[float, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not s > 0 for s in self.feature_scales):
            raise ValueError("feature scales must be strictly positive")

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        z = (np.asarray(X, dtype=float) - np.array(self.feature_means)) / np.array(self.feature_scales)
        return z @ np.array(self.weights) + self.bias

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "features": list(FEATURE_NAMES),
            **asdict(self),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ClassifierModel:
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError("not a homesense classifier model")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        if tuple(doc["features"]) != FEATURE_NAMES:
            raise ValueError("model feature layout does not match")
        return cls(
            tuple(doc["weights"]),
            float(doc["bias"]),
            tuple(doc["feature_means"]),
            tuple(doc["feature_scales"]),
            doc.get("metadata", {}),
        )


def _as_matrix(dataset) -> tuple[np.ndarray, np.ndarray]:
    X, y = [], []
    for fv, label in dataset:
        X.append(fv.as_array() if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=float))
        y.append(1.0 if label in (True, 1, HUMAN) else -1.0)
    return np.array(X, dtype=float), np.array(y)


def train(dataset, params: TrainParams | None = None) -> ClassifierModel:
    """Linear SVM by seeded stochastic subgradient descent on the hinge loss.

    ``dataset`` is an iterable of ``(features, label)`` with label ``True``
    / ``"human"`` for humans.  Features are standardised first; the returned
    weights are the Polyak average of the iterates after the first epoch.
    """
    params = params or TrainParams()
    X, y = _as_matrix(dataset)
    if len(X) == 0 or len(set(y.tolist())) < 2:
        raise ValueError("training needs both human and non-human examples")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales <= 1e-12] = 1.0
    Z = (X - means) / scales

    rng = np.random.default_rng(params.seed)
    n, d = Z.shape
    w = np.zeros(d)
    b = 0.0
    w_avg = np.zeros(d)
    b_avg = 0.0
    n_avg = 0
    step = 0
    for epoch in range(params.epochs):
        for i in rng.permutation(n):
            step += 1
            eta = params.learning_rate / (1.0 + params.learning_rate * params.reg * step)
            margin = y[i] * (Z[i] @ w + b)
            w *= 1.0 - eta * params.reg
            if margin < 1.0:
                w += eta * y[i] * Z[i]
                b += eta * y[i]
            if epoch > 0:
                n_avg += 1
                w_avg += (w - w_avg) / n_avg
                b_avg += (b - b_avg) / n_avg
    if n_avg == 0:
        w_avg, b_avg = w, b
    meta = {"seed": params.seed, "epochs": params.epochs, "reg": params.reg, "samples": int(n)}
    return ClassifierModel(
        tuple(float(v) for v in w_avg),
        float(b_avg),
        tuple(float(v) for v in means),
        tuple(float(v) for v in scales),
        meta,
    )


def classify(model: ClassifierModel, fv: FeatureVector) -> tuple[str, float]:
    """Label and signed margin; a margin of exactly 0 counts as non-human."""
    x = fv.as_array() if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    margin = float(model.decision_values(x[None, :])[0])
    return (HUMAN if margin > 0 else NON_HUMAN), margin


def accuracy(model: ClassifierModel, dataset) -> float:
    X, y = _as_matrix(dataset)
    pred = np.where(model.decision_values(X) > 0, 1.0, -1.0)
    return float(np.mean(pred == y))


def _sigmoid(m: float) -> float:
    if m >= 0:
        return 1.0 / (1.0 + math.exp(-m))
    e = math.exp(m)
    return e / (1.0 + e)


@dataclass(frozen=True)
class ConfidenceState:
    """Sliding per-receiver vote windows and the fused 0-99 score."""

    window: int = 10
    alert_threshold: int = 70
    votes: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")

    @property
    def score(self) -> int:
        allv = [v for vs in self.votes.values() for v in vs]
        if not allv:
            return 0
        return int(min(99, max(0, round(99 * sum(allv) / len(allv)))))

    @property
    def alert(self) -> bool:
        return self.score >= self.alert_threshold


def update_confidence(state: ConfidenceState, outputs: Mapping[str, tuple[str, float]]) -> ConfidenceState:
    """Append one vote ``sigmoid(margin)`` per reporting receiver."""
    votes = {k: deque(v, maxlen=state.window) for k, v in state.votes.items()}
    for receiver, (_label, margin) in outputs.items():
        votes.setdefault(receiver, deque(maxlen=state.window)).append(_sigmoid(float(margin)))
    return ConfidenceState(state.window, state.alert_threshold, {k: tuple(v) for k, v in votes.items()})
