"""Synthetic CSI generator with a known ground truth.

The static channel gives a Gaussian power response ``G ~ N(mu, sigma^2)`` per
subcarrier.  Moving subjects add a sum-of-scatterers term: ``N`` paths with
uniformly random arrival angles, each Doppler shifted by the subject's
instantaneous speed.  The power perturbation of one subcarrier is

    d(t, f) = sqrt(2/N) * sum_n cos(k s(t) cos(theta_n) + phi_{n,f})

where ``s(t)`` is the distance travelled.  ``d`` has unit variance and, at a
constant speed, an ensemble autocorrelation of ``mean_n cos(k v tau cos
theta_n) -> J0(k v tau)``.  Power is ``mu + E_d d + sigma w`` with white ``w``,
so the normalised power ACF is ``E_d^2 / (E_d^2 + sigma^2) * J0(k v tau)``.

Complex gains carry that power as their squared magnitude.  Phase (static
per-subcarrier offsets, CFO/SFO drift) is applied on top and never changes
``|H|^2`` beyond floating-point rounding.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_WAVELENGTH_M = 0.0517  # 5.8 GHz
DEFAULT_SUBCARRIERS = 56
DEFAULT_SPREAD_DB = 6.0
# Power is clamped here before taking the square root; only reachable when
# static_mean is within a few sigma of zero.
_MIN_POWER = 1e-12


class SubjectKind(str, enum.Enum):
    HUMAN = "human"
    PET = "pet"
    ROBOT = "robot"
    FAN = "fan"
    NONE = "none"

    @property
    def legged(self) -> bool:
        return self in (SubjectKind.HUMAN, SubjectKind.PET)


def _check_finite(name: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {value!r}")


def heterogeneous_ratios(
    mean_db: float,
    count: int = DEFAULT_SUBCARRIERS,
    spread_db: float = DEFAULT_SPREAD_DB,
    seed: int = 0,
) -> tuple[float, ...]:
    """Per-subcarrier motion-energy ratios, uniform in dB over ``mean +- spread``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x5EED]))
    return tuple(float(x) for x in mean_db + rng.uniform(-spread_db, spread_db, count))


@dataclass(frozen=True)
class ChannelConfig:
    """Statistical channel description for one link.

    ``motion_energy_ratio_db`` is ``E_d^2(f) / sigma^2(f)`` in dB; a scalar is
    broadcast to every subcarrier.  ``subcarrier_coherence`` mixes a waveform
    shared by all subcarriers into the dynamic term (near-field motion
    perturbs subcarriers coherently, distant motion does not).
    """

    carrier_wavelength_m: float = DEFAULT_WAVELENGTH_M
    subcarrier_count: int = DEFAULT_SUBCARRIERS
    path_count: int = 100
    motion_energy_ratio_db: float | tuple[float, ...] = 0.0
    noise_variance: float = 1.0
    static_mean: float = 50.0
    sample_rate_hz: float = 100.0
    rng_seed: int = 0
    subcarrier_coherence: float = 0.0
    path_loss_exponent: float = 2.5

    def __post_init__(self):
        for name in (
            "carrier_wavelength_m",
            "noise_variance",
            "static_mean",
            "sample_rate_hz",
            "subcarrier_coherence",
            "path_loss_exponent",
        ):
            _check_finite(name, getattr(self, name))
        _check_finite("motion_energy_ratio_db", self.motion_energy_ratio_db)
        if self.subcarrier_count < 1:
            raise ValueError("subcarrier_count must be >= 1")
        if self.path_count < 1:
            raise ValueError("path_count must be >= 1")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be > 0")
        if self.carrier_wavelength_m <= 0:
            raise ValueError("carrier_wavelength_m must be > 0")
        if self.noise_variance <= 0 or self.static_mean <= 0:
            raise ValueError("noise_variance and static_mean must be > 0")
        if not 0.0 <= self.subcarrier_coherence <= 1.0:
            raise ValueError("subcarrier_coherence must be in [0, 1]")
        ratios = np.broadcast_to(
            np.asarray(self.motion_energy_ratio_db, dtype=float), (self.subcarrier_count,)
        )
        object.__setattr__(self, "motion_energy_ratio_db", tuple(float(r) for r in ratios))
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    @classmethod
    def heterogeneous(cls, mean_db: float = 10.0, spread_db: float = DEFAULT_SPREAD_DB, **kw):
        """Config whose ratios spread log-uniformly by ``spread_db`` around ``mean_db``."""
        count = kw.get("subcarrier_count", DEFAULT_SUBCARRIERS)
        seed = kw.get("rng_seed", 0)
        return cls(motion_energy_ratio_db=heterogeneous_ratios(mean_db, count, spread_db, seed), **kw)

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.carrier_wavelength_m

    @property
    def sample_interval_s(self) -> float:
        return 1.0 / self.sample_rate_hz

    def motion_fraction(self) -> np.ndarray:
        """``E_d^2 / (E_d^2 + sigma^2)`` per subcarrier, the model ACF scale."""
        r = 10.0 ** (np.asarray(self.motion_energy_ratio_db) / 10.0)
        return r / (1.0 + r)


@dataclass(frozen=True)
class SubjectProfile:
    """Motion source.

    For legged kinds the cycle-average speed is ``stride_length_m /
    stride_cycle_s``; ``base_speed_mps`` drives robots and fans.
    """

    kind: SubjectKind = SubjectKind.NONE
    base_speed_mps: float = 0.0
    stride_cycle_s: float = 1.0
    stride_length_m: float = 1.0
    speed_jitter: float = 0.0
    collision_rate_hz: float = 0.0
    # fraction of the mean speed swung above/below it within one stride
    gait_depth: float = 0.6

    def __post_init__(self):
        try:
            kind = SubjectKind(self.kind)
        except ValueError:
            raise ValueError(f"kind: unknown subject kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        for name in (
            "base_speed_mps",
            "stride_cycle_s",
            "stride_length_m",
            "speed_jitter",
            "collision_rate_hz",
            "gait_depth",
        ):
            _check_finite(name, getattr(self, name))
        if self.base_speed_mps < 0 or self.speed_jitter < 0 or self.collision_rate_hz < 0:
            raise ValueError("speeds, jitter and collision rate must be nonnegative")
        if self.stride_cycle_s <= 0 or self.stride_length_m <= 0:
            raise ValueError("stride_cycle_s and stride_length_m must be positive")
        if not 0.0 <= self.gait_depth < 1.0:
            raise ValueError("gait_depth must be in [0, 1)")
        if kind is SubjectKind.NONE and self.base_speed_mps != 0:
            raise ValueError("kind=none requires base_speed_mps = 0")

    @classmethod
    def human(cls, stride_cycle_s=1.1, stride_length_m=1.3, speed_jitter=0.05, **kw):
        return cls(
            SubjectKind.HUMAN,
            base_speed_mps=stride_length_m / stride_cycle_s,
            stride_cycle_s=stride_cycle_s,
            stride_length_m=stride_length_m,
            speed_jitter=speed_jitter,
            **kw,
        )

    @classmethod
    def pet(cls, stride_cycle_s=0.5, stride_length_m=0.5, speed_jitter=0.1, **kw):
        kw.setdefault("gait_depth", 0.5)
        return cls(
            SubjectKind.PET,
            base_speed_mps=stride_length_m / stride_cycle_s,
            stride_cycle_s=stride_cycle_s,
            stride_length_m=stride_length_m,
            speed_jitter=speed_jitter,
            **kw,
        )

    @classmethod
    def robot(cls, base_speed_mps=0.3, collision_rate_hz=0.2, speed_jitter=0.15, **kw):
        return cls(
            SubjectKind.ROBOT,
            base_speed_mps=base_speed_mps,
            collision_rate_hz=collision_rate_hz,
            speed_jitter=speed_jitter,
            **kw,
        )

    @classmethod
    def fan(cls, base_speed_mps=0.6, **kw):
        return cls(SubjectKind.FAN, base_speed_mps=base_speed_mps, **kw)

    @classmethod
    def none(cls):
        return cls(SubjectKind.NONE)

    @property
    def mean_speed_mps(self) -> float:
        if self.kind.legged:
            return self.stride_length_m / self.stride_cycle_s
        return self.base_speed_mps


@dataclass(frozen=True)
class ImpairmentConfig:
    packet_loss_rate: float = 0.0
    timing_jitter_std_s: float = 0.0
    phase_drift_rate: float = 0.0
    amplitude_clip: float | None = None

    def __post_init__(self):
        for name in ("packet_loss_rate", "timing_jitter_std_s", "phase_drift_rate"):
            _check_finite(name, getattr(self, name))
        if not 0.0 <= self.packet_loss_rate <= 1.0:
            raise ValueError("packet_loss_rate must be in [0, 1]")
        if self.timing_jitter_std_s < 0:
            raise ValueError("timing_jitter_std_s must be nonnegative")
        if self.amplitude_clip is not None:
            _check_finite("amplitude_clip", self.amplitude_clip)
            if self.amplitude_clip <= 0:
                raise ValueError("amplitude_clip must be positive")


@dataclass(frozen=True, eq=False)
class CsiFrame:
    timestamp_s: float
    sequence: int
    device_id: str
    gains: np.ndarray

    def power(self) -> np.ndarray:
        return np.abs(self.gains) ** 2


@dataclass(eq=False)
class Trace(Sequence):
    """Array-backed sequence of :class:`CsiFrame` for one device link."""

    device_id: str
    timestamps: np.ndarray
    sequences: np.ndarray
    gains: np.ndarray  # (frames, subcarriers) complex
    sample_rate_hz: float = 100.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.sequences = np.asarray(self.sequences, dtype=np.int64)
        self.gains = np.asarray(self.gains, dtype=complex)
        if self.gains.ndim != 2 or len(self.gains) != len(self.timestamps) or len(self.sequences) != len(
            self.timestamps
        ):
            raise ValueError("timestamps, sequences and gains must share the frame axis")
        if len(self.sequences) > 1 and np.any(np.diff(self.sequences) <= 0):
            raise ValueError("sequence numbers must strictly increase")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trace(
                self.device_id,
                self.timestamps[i],
                self.sequences[i],
                self.gains[i],
                self.sample_rate_hz,
                dict(self.meta),
            )
        return CsiFrame(float(self.timestamps[i]), int(self.sequences[i]), self.device_id, self.gains[i])

    @property
    def subcarrier_count(self) -> int:
        return self.gains.shape[1]

    def power(self) -> np.ndarray:
        return np.abs(self.gains) ** 2

    def lost_packets(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.sequences[-1] - self.sequences[0] + 1 - len(self))

    def map_gains(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Trace:
        """Copy with ``gains = fn(gains, timestamps)``."""
        return Trace(
            self.device_id,
            self.timestamps.copy(),
            self.sequences.copy(),
            fn(self.gains, self.timestamps),
            self.sample_rate_hz,
            dict(self.meta),
        )

    @classmethod
    def from_frames(cls, frames: Sequence[CsiFrame], sample_rate_hz: float = 100.0) -> Trace:
        frames = list(frames)
        if not frames:
            raise ValueError("no frames")
        return cls(
            frames[0].device_id,
            [f.timestamp_s for f in frames],
            [f.sequence for f in frames],
            np.vstack([f.gains for f in frames]),
            sample_rate_hz,
        )


def speed_waveform(
    subject: SubjectProfile, duration_s: float, rate_hz: float, seed=0
) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous speed of ``subject`` sampled at ``rate_hz``.

    Legged subjects follow a raised cosine per stride (slowest at stance,
    fastest mid-swing) whose integral over one stride is the stride length;
    ``speed_jitter`` scales each stride's mean speed by ``1 + jitter * N(0,1)``.
    Robots hold a speed level, stop briefly at Poisson collision times and
    resume at a new level.  Fans keep a constant speed.

    Returns
    -------
    (times, speeds) : tuple of numpy.ndarray
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be > 0")
    if duration_s <= 0:
        raise ValueError("duration_s must be > 0")
    n = int(math.ceil(duration_s * rate_hz - 1e-9))
    t = np.arange(n) / rate_hz
    rng = np.random.default_rng(seed)
    kind = subject.kind

    if kind is SubjectKind.NONE:
        return t, np.zeros(n)

    if kind.legged:
        cycle = subject.stride_cycle_s
        mean_v = subject.stride_length_m / cycle
        phase0 = rng.uniform(0.0, cycle)
        u = (t + phase0) / cycle
        stride_idx = np.floor(u).astype(int)
        n_strides = stride_idx[-1] + 1
        scale = np.maximum(1.0 + subject.speed_jitter * rng.standard_normal(n_strides), 0.0)
        v = mean_v * scale[stride_idx] * (1.0 - subject.gait_depth * np.cos(2 * math.pi * u))
        return t, v

    if kind is SubjectKind.ROBOT:
        base = subject.base_speed_mps
        pause = 0.5
        v = np.empty(n)
        level = base
        start = 0.0
        while start < duration_s:
            if subject.collision_rate_hz > 0:
                gap = rng.exponential(1.0 / subject.collision_rate_hz)
            else:
                gap = math.inf
            stop = start + gap
            seg = (t >= start) & (t < stop)
            v[seg] = level
            resume = stop + pause
            v[(t >= stop) & (t < resume)] = 0.0
            start = resume
            level = base * max(0.2, 1.0 + subject.speed_jitter * rng.standard_normal())
        return t, v

    # fan
    return t, np.full(n, subject.base_speed_mps)


def attenuate_for_distance(cfg: ChannelConfig, distance_m: float, exponent: float | None = None) -> ChannelConfig:
    """Log-distance path loss applied to the motion-energy ratio (reference 1 m)."""
    _check_finite("distance_m", distance_m)
    if distance_m <= 0:
        raise ValueError("distance_m must be > 0")
    n = cfg.path_loss_exponent if exponent is None else exponent
    loss_db = 10.0 * n * math.log10(distance_m)
    return replace(cfg, motion_energy_ratio_db=tuple(r - loss_db for r in cfg.motion_energy_ratio_db))


def _dynamic_power(cfg, subject, t, rng, speed_seed):
    """Unit-variance power perturbation (frames x subcarriers) for one subject."""
    n_paths, n_sub = cfg.path_count, cfg.subcarrier_count
    theta = rng.uniform(0.0, 2 * math.pi, n_paths)
    own = np.exp(1j * rng.uniform(0.0, 2 * math.pi, (n_paths, n_sub)))
    common = np.exp(1j * rng.uniform(0.0, 2 * math.pi, n_paths))
    if subject.kind is SubjectKind.NONE:
        return np.zeros((len(t), n_sub))

    _, v = speed_waveform(subject, len(t) / cfg.sample_rate_hz, cfg.sample_rate_hz, speed_seed)
    v = v[: len(t)]
    dt = 1.0 / cfg.sample_rate_hz
    travelled = np.concatenate(([0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)))
    doppler = np.exp(1j * cfg.wavenumber * np.outer(travelled, np.cos(theta)))
    scale = math.sqrt(2.0 / n_paths)
    d = scale * np.real(doppler @ own)
    c = cfg.subcarrier_coherence
    if c > 0:
        shared = scale * np.real(doppler @ common)
        d = math.sqrt(1.0 - c) * d + math.sqrt(c) * shared[:, None]
    return d


def generate_trace(
    cfg: ChannelConfig,
    subject: SubjectProfile | Sequence[SubjectProfile],
    duration_s: float,
    impair: ImpairmentConfig | None = None,
    *,
    device_id: str = "bot-0",
    start_s: float = 0.0,
    sequence_start: int | None = None,
    envelope=None,
    envelopes=None,
) -> Trace:
    """Generate a CSI trace.

    Parameters
    ----------
    cfg : ChannelConfig
        Channel statistics and the seed; identical inputs give identical traces.
    subject : SubjectProfile or sequence of SubjectProfile
        Several subjects move simultaneously, each with its own scatterers and
        the full configured motion energy.
    duration_s : float
        ``ceil(duration_s * sample_rate_hz)`` frames are produced before loss.
    impair : ImpairmentConfig, optional
        Applied in order: loss, timing jitter, phase drift, clipping.
    envelope : callable or array_like, optional
        Amplitude multiplier of the dynamic term, as a function of time
        (relative to ``start_s``) or one value per frame.  Zero switches the
        subject off, e.g. while it is outside the link's coverage.
    envelopes : sequence, optional
        One envelope per subject, applied on top of ``envelope``.
    sequence_start : int, optional
        Sequence number of the first frame; defaults to ``round(start_s *
        rate)`` so that ``sequence / rate`` is the nominal sample time.
    """
    _check_finite("duration_s", duration_s)
    if duration_s <= 0:
        raise ValueError("duration_s must be > 0")
    impair = impair or ImpairmentConfig()
    if sequence_start is None:
        sequence_start = int(round(start_s * cfg.sample_rate_hz))
    subjects = [subject] if isinstance(subject, SubjectProfile) else list(subject)

    n = int(math.ceil(duration_s * cfg.sample_rate_hz - 1e-9))
    t = np.arange(n) / cfg.sample_rate_hz
    n_sub = cfg.subcarrier_count
    seq = np.random.SeedSequence([cfg.rng_seed & (2**64 - 1)])
    s_noise, s_phase, s_loss, s_jitter, *s_subj = seq.spawn(4 + 2 * len(subjects))

    sigma = math.sqrt(cfg.noise_variance)
    power = cfg.static_mean + sigma * np.random.default_rng(s_noise).standard_normal((n, n_sub))
    amp = sigma * np.sqrt(10.0 ** (np.asarray(cfg.motion_energy_ratio_db) / 10.0))

    def resolve(e):
        if e is None:
            return None
        arr = np.asarray(e(t) if callable(e) else e, dtype=float)
        if arr.shape != (n,):
            raise ValueError(f"envelope must have {n} values")
        return arr

    env = resolve(envelope)
    if envelopes is not None and len(envelopes) != len(subjects):
        raise ValueError("envelopes needs one entry per subject")
    for i, subj in enumerate(subjects):
        d = _dynamic_power(cfg, subj, t, np.random.default_rng(s_subj[2 * i]), s_subj[2 * i + 1])
        if env is not None:
            d = d * env[:, None]
        own = resolve(envelopes[i]) if envelopes is not None else None
        if own is not None:
            d = d * own[:, None]
        power += amp * d
    np.maximum(power, _MIN_POWER, out=power)

    static_phase = np.random.default_rng(s_phase).uniform(0.0, 2 * math.pi, n_sub)
    gains = np.sqrt(power) * np.exp(1j * static_phase)

    keep = np.random.default_rng(s_loss).random(n) >= impair.packet_loss_rate
    idx = np.flatnonzero(keep)
    times = start_s + t[idx]
    if impair.timing_jitter_std_s > 0:
        times = times + impair.timing_jitter_std_s * np.random.default_rng(s_jitter).standard_normal(len(idx))
        # receive stamps are taken on arrival and cannot run backwards
        times = np.maximum.accumulate(times)
    gains = gains[idx]
    if impair.phase_drift_rate:
        gains = gains * np.exp(1j * impair.phase_drift_rate * t[idx])[:, None]
    if impair.amplitude_clip is not None:
        mag = np.abs(gains)
        over = mag > impair.amplitude_clip
        gains = np.where(over, gains * (impair.amplitude_clip / np.where(over, mag, 1.0)), gains)

    return Trace(
        device_id,
        times,
        sequence_start + idx,
        gains,
        cfg.sample_rate_hz,
        {"seed": cfg.rng_seed, "subjects": [s.kind.value for s in subjects]},
    )
