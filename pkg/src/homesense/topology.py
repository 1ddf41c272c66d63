"""Bot / Origin / Master-Origin deployment simulated over a message bus.

Each node is a small state machine fed timestamped messages from a single
virtual-clock queue; nodes share no mutable state.  Bots only transmit:
their CSI is measured by the receiving node named in the deployment links.
Where the foundation pipeline runs depends on the mode (at the receiving
Origin, or at the Master for ``direct_to_master``); subject recognition
always runs at the cloud boundary on decoded upload messages, so both modes
produce identical events and differ only in traffic.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import Trace
from .foundation import MotionDecision, PowerWindow
from .sensing import SensingParams, WindowReport, WindowStream, queue_speeds
from .subject import ClassifierModel, ConfidenceState, classify, extract_features, update_confidence
from .wire import RECORD, UploadMessage, WindowRecord, raw_frame_bytes, upload_bytes

PROXIMITY_THRESHOLD = 0.35
COVERAGE_THRESHOLD = 0.8

# contention model: CSMA overhead per active device, and the share of
# airtime lost to competing traffic at full load
CONTENTION_PER_DEVICE = 0.05
LOAD_DEGRADATION = 0.25


class Role(str, enum.Enum):
    BOT = "bot"
    ORIGIN = "origin"
    MASTER_ORIGIN = "master_origin"


class Mode(str, enum.Enum):
    DIRECT_TO_MASTER = "direct_to_master"
    ORIGIN_AGGREGATED = "origin_aggregated"


class Policy(str, enum.Enum):
    EDGE_ONLY = "edge_only"
    CLOUD_WHEN_MOTION = "cloud_when_motion"
    ALWAYS_CLOUD = "always_cloud"


@dataclass(frozen=True)
class Node:
    id: str
    role: Role

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.id:
            raise ValueError("node id must be non-empty")


@dataclass(frozen=True)
class Deployment:
    """Nodes plus sensing links ``(transmitter -> receiver)``.

    Transmitters are bots, or Origins acting as a bot for another Origin.
    Receivers are Origins or the Master.  Every Origin talks to the Master
    directly, so any transmitter is at most two hops from the Master.
    """

    nodes: tuple[Node, ...]
    links: tuple[tuple[str, str], ...]
    mode: Mode = Mode.ORIGIN_AGGREGATED

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(tuple(link) for link in self.links))
        object.__setattr__(self, "mode", Mode(self.mode))
        self.validate()

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node id")
        masters = [n for n in self.nodes if n.role is Role.MASTER_ORIGIN]
        if len(masters) != 1:
            raise ValueError(f"deployment needs exactly one master_origin, found {len(masters)}")
        roles = {n.id: n.role for n in self.nodes}
        seen = set()
        for tx, rx in self.links:
            if tx not in roles or rx not in roles:
                raise ValueError(f"link {tx}->{rx} names an unknown node")
            if tx == rx:
                raise ValueError(f"link {tx}->{rx} is a self-loop")
            if roles[tx] is Role.MASTER_ORIGIN:
                raise ValueError("the master_origin cannot transmit on a sensing link")
            if roles[rx] is Role.BOT:
                raise ValueError(f"link {tx}->{rx}: a bot cannot receive")
            if tx in seen:
                raise ValueError(f"transmitter {tx} has more than one link")
            seen.add(tx)
        for n in self.nodes:
            if n.role is Role.BOT and n.id not in seen:
                raise ValueError(f"bot {n.id} has no link")

    @property
    def master(self) -> str:
        return next(n.id for n in self.nodes if n.role is Role.MASTER_ORIGIN)

    @property
    def origins(self) -> tuple[str, ...]:
        return tuple(sorted(n.id for n in self.nodes if n.role is Role.ORIGIN))

    @property
    def transmitters(self) -> tuple[str, ...]:
        return tuple(tx for tx, _ in self.links)

    def receiver(self, tx: str) -> str:
        return dict(self.links)[tx]

    def hops_to_master(self, tx: str) -> int:
        return 1 if self.receiver(tx) == self.master else 2

    def with_mode(self, mode: Mode | str) -> Deployment:
        return Deployment(self.nodes, self.links, Mode(mode))

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "role": n.role.value} for n in self.nodes],
            "links": [list(link) for link in self.links],
            "mode": self.mode.value,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> Deployment:
        try:
            nodes = tuple(Node(n["id"], Role(n["role"])) for n in doc["nodes"])
            links = tuple((str(a), str(b)) for a, b in doc["links"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"topology: malformed deployment ({exc})") from exc
        return cls(nodes, links, Mode(doc.get("mode", Mode.ORIGIN_AGGREGATED.value)))

    @classmethod
    def star(cls, bots: Sequence[str], origin: str = "origin-0", master: str = "mo", mode=Mode.ORIGIN_AGGREGATED):
        """All bots linked to one Origin under a Master."""
        nodes = (Node(master, Role.MASTER_ORIGIN), Node(origin, Role.ORIGIN), *(Node(b, Role.BOT) for b in bots))
        return cls(nodes, tuple((b, origin) for b in bots), mode)


# ---------------------------------------------------------------- events


@dataclass(frozen=True)
class DetectionEvent:
    time_s: float
    device_id: str
    zone: str
    verdict: str
    motion_statistic: float
    speed_mps: float | None
    proximity: float
    near: bool
    label: str | None = None
    vote: float | None = None
    confidence: int | None = None
    alert: bool | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> DetectionEvent:
        return cls(**json.loads(line))


class EventStore:
    """Append-only detection log, optionally mirrored to an NDJSON file.

    Times must not go backwards per device.  A Master promoted after a
    failure rebuilds its confidence state from this log.
    """

    def __init__(self, path: str | Path | None = None):
        self._events: list[DetectionEvent] = []
        self._last: dict[str, float] = {}
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    self._remember(DetectionEvent.from_json(line))

    def _remember(self, event: DetectionEvent) -> None:
        last = self._last.get(event.device_id)
        if last is not None and event.time_s < last:
            raise ValueError(f"event for {event.device_id} at {event.time_s} precedes {last}")
        self._last[event.device_id] = event.time_s
        self._events.append(event)

    def append(self, event: DetectionEvent) -> None:
        self._remember(event)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(event.to_json() + "\n")

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self):
        return iter(tuple(self._events))

    @property
    def events(self) -> tuple[DetectionEvent, ...]:
        return tuple(self._events)

    def confidence_state(self, zone: str, window: int, alert_threshold: int) -> ConfidenceState:
        votes: dict[str, list[float]] = {}
        for e in self._events:
            if e.zone == zone and e.vote is not None:
                votes.setdefault(e.device_id, []).append(e.vote)
        return ConfidenceState(window, alert_threshold, {k: tuple(v[-window:]) for k, v in votes.items()})


def events_to_ndjson(events) -> str:
    return "".join(e.to_json() + "\n" for e in events)


# ------------------------------------------------------------- proximity


@dataclass(frozen=True)
class ProximityReading:
    device_id: str
    time_s: float
    proximity_score: float
    near: bool


def proximity_score(
    window: PowerWindow,
    threshold: float = PROXIMITY_THRESHOLD,
    device_id: str = "",
    time_s: float = 0.0,
) -> ProximityReading:
    """Mean pairwise correlation of subcarrier power, clipped to [0, 1].

    A subject close to the device modulates all subcarriers together;
    distant motion and noise decorrelate them.  Subcarriers without power
    variation are ignored, and fewer than two usable ones give score 0.
    """
    x = window.samples()
    if len(x) < 3:
        return ProximityReading(device_id, time_s, 0.0, False)
    mean = x.mean(axis=0)
    xc = x - mean
    sd = np.sqrt((xc * xc).mean(axis=0))
    ok = sd > 1e-6 * np.maximum(np.abs(mean), 1e-12)
    f = int(ok.sum())
    if f < 2:
        return ProximityReading(device_id, time_s, 0.0, False)
    z = xc[:, ok] / sd[ok]
    # mean off-diagonal of the correlation matrix from the column sum
    s = z.sum(axis=1)
    total = float(s @ s) / len(z)
    score = (total - f) / (f * (f - 1))
    score = round(min(1.0, max(0.0, score)), 6)
    return ProximityReading(device_id, time_s, score, score > threshold)


# -------------------------------------------------------------- coverage


@dataclass(frozen=True)
class Presence:
    start_s: float
    end_s: float
    region: str


@dataclass(frozen=True)
class RegionCoverage:
    region: str
    present_windows: int
    detected_windows: int
    probability: float
    covered: bool


def _window_region(presence: Sequence[Presence], start: float, end: float) -> str | None:
    overlap: dict[str, float] = {}
    for p in presence:
        o = min(end, p.end_s) - max(start, p.start_s)
        if o > 0:
            overlap[p.region] = overlap.get(p.region, 0.0) + o
    if not overlap:
        return None
    region, o = max(sorted(overlap.items()), key=lambda kv: kv[1])
    return region if o > 0.5 * (end - start) else None


def fuse_coverage(
    per_link: Mapping[str, Sequence[MotionDecision]],
    presence: Sequence[Presence],
    window_s: float,
    threshold: float = COVERAGE_THRESHOLD,
) -> dict[str, RegionCoverage]:
    """Per-region detection probability with OR-fusion across links.

    A decision window ``[t - window_s, t]`` belongs to the region the subject
    occupies for more than half of it; it counts as detected when any link
    reports motion at ``t``.  A region is covered above ``threshold``.
    """
    if not presence:
        raise ValueError("presence log is empty")
    detected: dict[float, bool] = {}
    for decisions in per_link.values():
        for d in decisions:
            key = round(d.time_s, 6)
            detected[key] = detected.get(key, False) or d.motion
    regions = sorted({p.region for p in presence})
    present = dict.fromkeys(regions, 0)
    hits = dict.fromkeys(regions, 0)
    for t in sorted(detected):
        region = _window_region(presence, t - window_s, t)
        if region is None:
            continue
        present[region] += 1
        hits[region] += detected[t]
    out = {}
    for r in regions:
        p = hits[r] / present[r] if present[r] else 0.0
        out[r] = RegionCoverage(r, present[r], hits[r], p, p > threshold)
    return out


# ----------------------------------------------------------- bandwidth


@dataclass(frozen=True)
class TrafficReport:
    raw_bytes: int = 0  # every frame, as if streamed continuously
    raw_forward_bytes: int = 0  # raw frames carried Origin -> Master
    record_bytes: int = 0
    upload_bytes: int = 0
    upload_messages: int = 0
    frames: int = 0

    @property
    def reduction(self) -> float:
        return 1.0 - self.upload_bytes / self.raw_bytes if self.raw_bytes else 0.0


@dataclass(frozen=True)
class BandwidthReport:
    duration_s: float
    raw_bytes: int
    acf_bytes: int
    messages: int

    @property
    def raw_bytes_per_s(self) -> float:
        return self.raw_bytes / self.duration_s

    @property
    def acf_bytes_per_s(self) -> float:
        return self.acf_bytes / self.duration_s

    @property
    def ratio(self) -> float:
        return self.acf_bytes / self.raw_bytes if self.raw_bytes else 0.0

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.ratio)

    def as_dict(self) -> dict:
        doc = asdict(self)
        doc.update(
            raw_bytes_per_s=self.raw_bytes_per_s,
            acf_bytes_per_s=self.acf_bytes_per_s,
            ratio=self.ratio,
            reduction_pct=self.reduction_pct,
        )
        return doc


def account_bandwidth(traces: Sequence[Trace], messages: Sequence[UploadMessage]) -> BandwidthReport:
    """Raw-streaming bytes of ``traces`` against the bytes of ``messages``."""
    raw = sum(len(t) * raw_frame_bytes(t.subcarrier_count) for t in traces)
    duration = sum(
        (int(t.sequences[-1] - t.sequences[0]) + 1) / t.sample_rate_hz for t in traces if len(t)
    )
    acf = sum(len(m.encode()) for m in messages)
    return BandwidthReport(duration, raw, acf, len(messages))


def queue_entries(params: SensingParams, sample_rate_hz: float) -> int:
    n = int(round(params.window_len_s * sample_rate_hz))
    m = int(round(params.queue_block_s * sample_rate_hz))
    hop = max(1, int(round(params.queue_hop_s * sample_rate_hz)))
    return 0 if n < m else (n - m) // hop + 1


def window_upload_bytes(params: SensingParams, sample_rate_hz: float, subcarriers: int, rows: bool = False) -> int:
    """Size of the upload message for one decision window."""
    lags = int(round(params.queue_max_lag_s * sample_rate_hz))
    return upload_bytes(queue_entries(params, sample_rate_hz), lags, subcarriers, rows)


def daily_bandwidth(
    sample_rate_hz: float,
    subcarriers: int,
    motion_duty: float,
    params: SensingParams | None = None,
    rows: bool = False,
    day_s: float = 86400.0,
) -> BandwidthReport:
    """A day of continuous raw streaming against event-driven ACF upload."""
    if not 0.0 <= motion_duty <= 1.0:
        raise ValueError("motion_duty must be in [0, 1]")
    params = params or SensingParams()
    windows = int(day_s // params.window_len_s)
    motion_windows = int(round(motion_duty * windows))
    raw = int(round(day_s * sample_rate_hz)) * raw_frame_bytes(subcarriers)
    acf = motion_windows * window_upload_bytes(params, sample_rate_hz, subcarriers, rows)
    return BandwidthReport(day_s, raw, acf, motion_windows)


def effective_csi_rate(nominal_rate_hz: float, n_devices: int, traffic_load: float) -> float:
    """Per-device CSI packet rate after channel contention.

    ``nominal / (1 + 0.05 n) * (1 - 0.25 load)``: four devices at 1500 Hz
    get 1250 Hz on an idle channel and 937.5 Hz at full load.
    """
    for name, v in (("nominal_rate_hz", nominal_rate_hz), ("n_devices", n_devices), ("traffic_load", traffic_load)):
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"{name} must be finite and non-negative")
    load = min(1.0, traffic_load)
    return nominal_rate_hz / (1.0 + CONTENTION_PER_DEVICE * n_devices) * (1.0 - LOAD_DEGRADATION * load)


# ------------------------------------------------------------ pipeline


@dataclass
class PipelineConfig:
    policy: Policy = Policy.CLOUD_WHEN_MOTION
    params: SensingParams = field(default_factory=SensingParams)
    hop_s: float | None = None
    confidence_window: int = 10
    alert_threshold: int = 70
    proximity_threshold: float = PROXIMITY_THRESHOLD
    include_rows: bool = False
    failover_at_s: float | None = None

    def __post_init__(self):
        self.policy = Policy(self.policy)


@dataclass
class PipelineResult:
    events: list[DetectionEvent]
    traffic: TrafficReport
    uploads: list[UploadMessage]
    proximity: list[ProximityReading]
    decisions: dict[str, list[MotionDecision]]
    master_history: list[tuple[float, str]]

    def event_log(self) -> str:
        return events_to_ndjson(self.events)


class _Cloud:
    def __init__(self, model: ClassifierModel, wavelength_m: float):
        self.model = model
        self.wavelength_m = wavelength_m

    def classify(self, payload: bytes) -> tuple[str, float]:
        msg = UploadMessage.decode(payload)
        curves = msg.curves()
        fv = extract_features(queue_speeds(curves, self.wavelength_m), curves, msg.decisions())
        return classify(self.model, fv)


class _Processor:
    """Foundation pipeline for the links terminating at (or routed to) a node."""

    def __init__(self, node_id: str, cfg: PipelineConfig):
        self.node_id = node_id
        self.cfg = cfg
        self.streams: dict[str, WindowStream] = {}

    def on_frame(self, tx: str, trace: Trace, frame) -> list[tuple[WindowReport, ProximityReading]]:
        stream = self.streams.get(tx)
        if stream is None:
            with_queue = True if self.cfg.policy is Policy.ALWAYS_CLOUD else None
            if self.cfg.policy is Policy.EDGE_ONLY:
                with_queue = False
            stream = WindowStream(
                tx, trace.subcarrier_count, trace.sample_rate_hz, self.cfg.params, self.cfg.hop_s, with_queue
            )
            self.streams[tx] = stream
        out = []
        for rep in stream.push(frame):
            prox = proximity_score(stream.window, self.cfg.proximity_threshold, tx, rep.end_s)
            out.append((rep, prox))
        return out


class _Master:
    def __init__(self, node_id: str, cfg: PipelineConfig, cloud: _Cloud | None, store: EventStore, zones):
        self.node_id = node_id
        self.cfg = cfg
        self.cloud = cloud
        self.store = store
        # state is rebuilt from the persistent log, so a promoted Master
        # carries on exactly where the failed one stopped
        self.confidence = {
            z: store.confidence_state(z, cfg.confidence_window, cfg.alert_threshold) for z in sorted(set(zones))
        }

    def on_record(self, zone: str, record_bytes: bytes, upload: bytes | None) -> DetectionEvent:
        rec = WindowRecord.decode(record_bytes)
        label = vote = conf = alert = None
        if self.cloud is not None and rec.verdict != "invalid":
            if rec.verdict == "motion":
                if upload is None:
                    raise RuntimeError(f"motion window from {rec.device_id} arrived without its ACF queue")
                label, margin = self.cloud.classify(upload)
            else:
                # a still window is evidence that nobody is moving
                margin = -math.inf
            state = update_confidence(self.confidence[zone], {rec.device_id: (label or "none", margin)})
            self.confidence[zone] = state
            vote = state.votes[rec.device_id][-1]
        if self.cloud is not None:
            state = self.confidence[zone]
            conf, alert = state.score, state.alert
        event = DetectionEvent(
            rec.end_s,
            rec.device_id,
            zone,
            rec.verdict,
            rec.motion_statistic,
            rec.speed_mps,
            rec.proximity,
            rec.near,
            label,
            vote,
            conf,
            alert,
        )
        self.store.append(event)
        return event


def run_pipeline(
    deployment: Deployment,
    traces: Mapping[str, Trace],
    config: PipelineConfig | None = None,
    model: ClassifierModel | None = None,
    store: EventStore | None = None,
) -> PipelineResult:
    """Drive every trace through the deployment on a shared virtual clock.

    Frames are delivered at their nominal sample time ``sequence / rate``.
    With ``failover_at_s`` the Master drops out at that time and the Origin
    with the smallest id takes over; processing that lived on the old
    Master (all of it, in ``direct_to_master`` mode) restarts with empty
    windows on the new one.
    """
    cfg = config or PipelineConfig()
    if cfg.policy is not Policy.EDGE_ONLY and model is None:
        raise ValueError("a classifier model is required unless the policy is edge_only")
    if set(traces) != set(deployment.transmitters):
        missing = sorted(set(deployment.transmitters) - set(traces))
        extra = sorted(set(traces) - set(deployment.transmitters))
        raise ValueError(f"traces do not match links (missing {missing}, unexpected {extra})")
    for tx, tr in traces.items():
        if tr.device_id != tx:
            raise ValueError(f"trace for link {tx} carries device id {tr.device_id!r}")

    store = store if store is not None else EventStore()
    cloud = None if cfg.policy is Policy.EDGE_ONLY else _Cloud(model, cfg.params.wavelength_m)
    zones = {tx: deployment.receiver(tx) for tx in deployment.transmitters}
    master_id = deployment.master
    master = _Master(master_id, cfg, cloud, store, zones.values())
    processors: dict[str, _Processor] = {}
    master_history = [(-math.inf, master_id)]
    dead: set[str] = set()

    def processor_for(tx: str) -> _Processor:
        node = zones[tx]
        if deployment.mode is Mode.DIRECT_TO_MASTER or node in dead:
            node = master_id
        if node not in processors:
            processors[node] = _Processor(node, cfg)
        return processors[node]

    counter = itertools.count()
    queue: list = []
    FAILOVER, FRAME, RECORD_MSG = 0, 1, 2
    order = {tx: i for i, tx in enumerate(sorted(traces))}
    for tx in sorted(traces):
        tr = traces[tx]
        for i, seq in enumerate(tr.sequences):
            heapq.heappush(queue, (seq / tr.sample_rate_hz, FRAME, order[tx], next(counter), (tx, i)))
    if cfg.failover_at_s is not None:
        if not deployment.origins:
            raise ValueError("failover needs at least one Origin to promote")
        heapq.heappush(queue, (cfg.failover_at_s, FAILOVER, 0, next(counter), None))

    raw = forward = rec_bytes = up_bytes = up_count = frames = 0
    events: list[DetectionEvent] = []
    uploads: list[UploadMessage] = []
    proximity: list[ProximityReading] = []
    decisions: dict[str, list[MotionDecision]] = {tx: [] for tx in sorted(traces)}

    while queue:
        t, kind, _, _, payload = heapq.heappop(queue)
        if kind == FAILOVER:
            dead.add(master_id)
            processors.pop(master_id, None)
            master_id = min(o for o in deployment.origins if o not in dead)
            master = _Master(master_id, cfg, cloud, store, zones.values())
            master_history.append((t, master_id))
        elif kind == FRAME:
            tx, i = payload
            tr = traces[tx]
            frame = tr[i]
            frames += 1
            fb = raw_frame_bytes(tr.subcarrier_count)
            raw += fb
            proc = processor_for(tx)
            if proc.node_id != zones[tx]:
                forward += fb  # receiver relays the raw frame to the Master
            for rep, prox in proc.on_frame(tx, tr, frame):
                proximity.append(prox)
                if rep.decision is not None:
                    decisions[tx].append(rep.decision)
                speed, quality = rep.summary_speed()
                dec = rep.decision
                record = WindowRecord.create(
                    tx,
                    rep.end_s,
                    dec.motion_statistic if dec else math.nan,
                    dec.threshold if dec else math.nan,
                    "invalid" if dec is None else dec.verdict,
                    rep.completeness,
                    speed,
                    quality,
                    prox.proximity_score,
                    prox.near,
                )
                upload = None
                if cloud is not None and dec is not None and (rep.motion or cfg.policy is Policy.ALWAYS_CLOUD):
                    msg = UploadMessage.from_queue(
                        tx, rep.start_s, tr.sample_rate_hz, rep.queue, rep.motion, cfg.include_rows
                    )
                    upload = msg.encode()
                    uploads.append(msg)
                    up_bytes += len(upload)
                    up_count += 1
                heapq.heappush(queue, (t, RECORD_MSG, order[tx], next(counter), (tx, proc.node_id, record.encode(), upload)))
        else:
            tx, sender, record_bytes, upload = payload
            if sender != master_id:
                rec_bytes += RECORD.size
            events.append(master.on_record(zones[tx], record_bytes, upload))

    traffic = TrafficReport(raw, forward, rec_bytes, up_bytes, up_count, frames)
    return PipelineResult(events, traffic, uploads, proximity, decisions, master_history)
