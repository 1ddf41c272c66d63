"""Scenario files: channel, topology, subject schedule and seed in one document.

A scenario is plain JSON.  Each sensing link covers a set of regions; a
scheduled subject perturbs a link's channel only while it is in one of that
link's regions.  Traces are generated deterministically from the scenario
seed and stored at complex64 precision (see :func:`traceio.quantize`), so a
run on freshly generated traces and one on traces read back from disk are
identical.
"""

from __future__ import annotations

import copy
import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (
    DEFAULT_SPREAD_DB,
    DEFAULT_SUBCARRIERS,
    DEFAULT_WAVELENGTH_M,
    ChannelConfig,
    ImpairmentConfig,
    SubjectKind,
    SubjectProfile,
    Trace,
    attenuate_for_distance,
    generate_trace,
)
from .sensing import GAIT_RATE_HZ, SensingParams
from .subject import HUMAN, ClassifierModel
from .topology import (
    Deployment,
    EventStore,
    Mode,
    PipelineConfig,
    PipelineResult,
    Policy,
    Presence,
    account_bandwidth,
    fuse_coverage,
    run_pipeline,
)
from .traceio import quantize, read_trace, write_trace


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the offending field."""


@dataclass(frozen=True)
class LinkSpec:
    tx: str
    regions: tuple[str, ...]
    distance_m: float = 1.0
    coherence: float = 0.0


@dataclass(frozen=True)
class ScheduleEntry:
    subject: str
    start_s: float
    end_s: float
    region: str
    id: str
    params: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_s: float
    sample_rate_hz: float
    channel: Mapping
    deployment: Deployment
    links: Mapping[str, LinkSpec]
    schedule: tuple[ScheduleEntry, ...]
    impairments: ImpairmentConfig
    policy: Policy
    source: Mapping

    @property
    def regions(self) -> tuple[str, ...]:
        return tuple(sorted({r for link in self.links.values() for r in link.regions}))

    def config_hash(self) -> str:
        canon = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def subject_of_interest(self) -> str | None:
        """Id of the first scheduled human, else of the first subject."""
        for e in self.schedule:
            if e.subject == HUMAN:
                return e.id
        return self.schedule[0].id if self.schedule else None

    def presence(self, subject_id: str | None = None) -> list[Presence]:
        """Region log of one subject (default: the subject of interest)."""
        sid = subject_id or self.subject_of_interest()
        return [Presence(e.start_s, e.end_s, e.region) for e in self.schedule if e.id == sid]


def _get(doc: Mapping, key: str, where: str, kind=None, default=...):
    if key not in doc:
        if default is ...:
            raise ScenarioError(f"{where}{key}: required field missing")
        return default
    value = doc[key]
    if kind is not None:
        try:
            value = kind(value)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}{key}: {exc}") from exc
    return value


def parse_scenario(doc: Mapping, seed: int | None = None) -> Scenario:
    """Validate a scenario document; ``seed`` overrides the stored one."""
    doc = copy.deepcopy(dict(doc))
    if seed is not None:
        doc["seed"] = int(seed)
    name = _get(doc, "name", "", str, "scenario")
    if "seed" not in doc:
        raise ScenarioError("seed: required field missing (runs must be reproducible)")
    seed_v = _get(doc, "seed", "", int)
    duration = _get(doc, "duration_s", "", float)
    if not duration > 0:
        raise ScenarioError("duration_s: must be > 0")
    rate = _get(doc, "sample_rate_hz", "", float, GAIT_RATE_HZ)
    if not rate > 0:
        raise ScenarioError("sample_rate_hz: must be > 0")
    channel = dict(_get(doc, "channel", "", dict, {}))
    known = {"mean_db", "spread_db", "path_count", "subcarrier_count", "noise_variance", "wavelength_m"}
    for key in channel:
        if key not in known:
            raise ScenarioError(f"channel.{key}: unknown channel field")

    try:
        deployment = Deployment.from_dict(_get(doc, "topology", "", dict))
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"topology: {exc}") from exc

    links = {}
    link_docs = _get(doc, "links", "", dict)
    for tx in deployment.transmitters:
        if tx not in link_docs:
            raise ScenarioError(f"links.{tx}: no link description for transmitter")
        ld = link_docs[tx]
        where = f"links.{tx}."
        regions = tuple(str(r) for r in _get(ld, "regions", where, list))
        distance = _get(ld, "distance_m", where, float, 1.0)
        coherence = _get(ld, "coherence", where, float, 0.0)
        if not distance > 0:
            raise ScenarioError(f"{where}distance_m: must be > 0")
        if not 0.0 <= coherence <= 1.0:
            raise ScenarioError(f"{where}coherence: must be in [0, 1]")
        links[tx] = LinkSpec(tx, regions, distance, coherence)
    for tx in link_docs:
        if tx not in links:
            raise ScenarioError(f"links.{tx}: not a transmitter in the topology")

    schedule = []
    last_start = -np.inf
    for i, e in enumerate(_get(doc, "schedule", "", list, [])):
        where = f"schedule[{i}]."
        kind = _get(e, "subject", where, str)
        try:
            SubjectKind(kind)
        except ValueError:
            raise ScenarioError(f"{where}subject: unknown subject kind {kind!r}") from None
        start = _get(e, "start_s", where, float)
        end = _get(e, "end_s", where, float)
        if not start < end:
            raise ScenarioError(f"{where}end_s: must exceed start_s")
        if start < last_start:
            raise ScenarioError(f"{where}start_s: schedule times must be nondecreasing")
        last_start = start
        params = dict(_get(e, "params", where, dict, {}))
        schedule.append(
            ScheduleEntry(kind, start, end, _get(e, "region", where, str), _get(e, "id", where, str, kind), params)
        )
    by_id: dict[str, str] = {}
    for i, e in enumerate(schedule):
        if by_id.setdefault(e.id, e.subject) != e.subject:
            raise ScenarioError(f"schedule[{i}].id: {e.id!r} is used for two subject kinds")

    imp_doc = dict(_get(doc, "impairments", "", dict, {}))
    try:
        impairments = ImpairmentConfig(**imp_doc)
    except TypeError as exc:
        raise ScenarioError(f"impairments: {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"impairments.{exc}") from exc
    try:
        policy = Policy(_get(doc, "policy", "", str, Policy.CLOUD_WHEN_MOTION.value))
    except ValueError as exc:
        raise ScenarioError(f"policy: {exc}") from exc
    return Scenario(name, seed_v, duration, rate, channel, deployment, links, tuple(schedule), impairments, policy, doc)


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    if str(path) == "demo":
        return parse_scenario(DEMO_SCENARIO, seed)
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"scenario: cannot read {path} ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario: {path} is not valid JSON ({exc})") from exc
    return parse_scenario(doc, seed)


def _profile(kind: str, params: Mapping) -> SubjectProfile:
    factory = getattr(SubjectProfile, SubjectKind(kind).value)
    try:
        return factory(**params)
    except TypeError as exc:
        raise ScenarioError(f"schedule.params: {exc}") from exc


def link_config(sc: Scenario, index: int, link: LinkSpec) -> ChannelConfig:
    ch = sc.channel
    link_seed = int(np.random.SeedSequence([sc.seed, index, 0x11E]).generate_state(1)[0])
    cfg = ChannelConfig.heterogeneous(
        mean_db=float(ch.get("mean_db", 10.0)),
        spread_db=float(ch.get("spread_db", DEFAULT_SPREAD_DB)),
        path_count=int(ch.get("path_count", 100)),
        subcarrier_count=int(ch.get("subcarrier_count", DEFAULT_SUBCARRIERS)),
        noise_variance=float(ch.get("noise_variance", 1.0)),
        carrier_wavelength_m=float(ch.get("wavelength_m", DEFAULT_WAVELENGTH_M)),
        sample_rate_hz=sc.sample_rate_hz,
        rng_seed=link_seed,
        subcarrier_coherence=link.coherence,
    )
    return attenuate_for_distance(cfg, link.distance_m) if link.distance_m != 1.0 else cfg


def build_traces(sc: Scenario) -> dict[str, Trace]:
    """One trace per sensing link, at stored (complex64) precision."""
    ids = list(dict.fromkeys(e.id for e in sc.schedule))
    traces = {}
    for index, tx in enumerate(sc.deployment.transmitters):
        link = sc.links[tx]
        subjects, envelopes = [], []
        for sid in ids:
            entries = [e for e in sc.schedule if e.id == sid]
            if SubjectKind(entries[0].subject) is SubjectKind.NONE:
                continue
            spans = [(e.start_s, e.end_s) for e in entries if e.region in link.regions]
            subjects.append(_profile(entries[0].subject, entries[0].params))
            envelopes.append(
                lambda t, spans=spans: np.array(
                    [any(a <= x < b for a, b in spans) for x in t], dtype=float
                )
                if spans
                else np.zeros(len(t))
            )
        cfg = link_config(sc, index, link)
        if not subjects:
            subjects, envelopes = [SubjectProfile.none()], None
        tr = generate_trace(cfg, subjects, sc.duration_s, sc.impairments, device_id=tx, envelopes=envelopes)
        traces[tx] = quantize(tr)
    return traces


def cached_traces(sc: Scenario, cache_dir: str | Path | None) -> dict[str, Trace]:
    """Inline generation with an on-disk cache keyed by the config hash."""
    if cache_dir is None:
        return build_traces(sc)
    root = Path(cache_dir) / sc.config_hash()
    paths = {tx: root / f"{tx}.csi" for tx in sc.deployment.transmitters}
    if all(p.exists() for p in paths.values()):
        out = {}
        for tx, p in paths.items():
            res = read_trace(p)
            if res.skipped:
                break
            out[tx] = res.trace
        else:
            return out
    traces = build_traces(sc)
    root.mkdir(parents=True, exist_ok=True)
    for tx, tr in traces.items():
        write_trace(tr, paths[tx])
    return traces


@dataclass
class RunOutput:
    scenario: Scenario
    result: PipelineResult
    coverage: dict
    violations: list[str]
    report: dict


def check_invariants(
    result: PipelineResult, traces: Mapping[str, Trace], policy: Policy, window_len_s: float
) -> list[str]:
    """Cross-check a run's logs; returns human-readable violations."""
    problems = []
    last: dict[str, float] = {}
    for e in result.events:
        if e.time_s < last.get(e.device_id, -np.inf):
            problems.append(f"event log not time-monotone for {e.device_id} at {e.time_s}")
        last[e.device_id] = e.time_s
    uploaded = sorted((m.device_id, round(m.window_start_s, 6)) for m in result.uploads)
    if policy is Policy.CLOUD_WHEN_MOTION:
        motion = sorted(
            (tx, round(d.time_s - window_len_s, 6)) for tx, decs in result.decisions.items() for d in decs if d.motion
        )
        if uploaded != motion:
            problems.append(f"uploads ({len(uploaded)}) do not match motion windows ({len(motion)}) one to one")
    elif policy is Policy.EDGE_ONLY and uploaded:
        problems.append("edge_only run produced uploads")
    acct = account_bandwidth(list(traces.values()), result.uploads)
    if acct.raw_bytes != result.traffic.raw_bytes:
        problems.append("raw byte accounting does not match the traces")
    if acct.acf_bytes != result.traffic.upload_bytes:
        problems.append("upload byte accounting does not match the messages")
    if result.traffic.upload_bytes > result.traffic.raw_bytes:
        problems.append("event-driven upload exceeds continuous raw streaming")
    return problems


def run_scenario(
    sc: Scenario,
    model: ClassifierModel | None,
    traces: Mapping[str, Trace] | None = None,
    mode: Mode | str | None = None,
    policy: Policy | str | None = None,
    params: SensingParams | None = None,
    store: EventStore | None = None,
    failover_at_s: float | None = None,
) -> RunOutput:
    policy = Policy(policy) if policy is not None else sc.policy
    deployment = sc.deployment.with_mode(mode) if mode is not None else sc.deployment
    traces = dict(traces) if traces is not None else build_traces(sc)
    params = params or SensingParams(wavelength_m=float(sc.channel.get("wavelength_m", DEFAULT_WAVELENGTH_M)))
    cfg = PipelineConfig(policy=policy, params=params, failover_at_s=failover_at_s)
    result = run_pipeline(deployment, traces, cfg, model, store)

    presence = sc.presence()
    coverage = {}
    if presence:
        window = params.window_len_s
        for tx in sorted(result.decisions):
            coverage[tx] = fuse_coverage({tx: result.decisions[tx]}, presence, window)
        coverage["fused"] = fuse_coverage(result.decisions, presence, window)
    violations = check_invariants(result, traces, policy, params.window_len_s)
    report = {
        "scenario": sc.name,
        "seed": sc.seed,
        "config_hash": sc.config_hash(),
        "mode": deployment.mode.value,
        "policy": policy.value,
        "events": len(result.events),
        "motion_events": sum(e.verdict == "motion" for e in result.events),
        "human_alerts": sum(bool(e.alert) and e.label == HUMAN for e in result.events),
        "uploads": result.traffic.upload_messages,
        "upload_bytes": result.traffic.upload_bytes,
        "raw_bytes": result.traffic.raw_bytes,
        "reduction": round(result.traffic.reduction, 9),
        "covered_regions": {k: sorted(r for r, c in v.items() if c.covered) for k, v in coverage.items()},
        "violations": violations,
    }
    return RunOutput(sc, result, coverage, violations, report)


DEMO_SCENARIO = {
    "name": "demo-home",
    "seed": 7,
    "duration_s": 36.0,
    "sample_rate_hz": GAIT_RATE_HZ,
    "channel": {"mean_db": 3.0, "spread_db": 6.0, "path_count": 100},
    "topology": {
        "nodes": [
            {"id": "mo", "role": "master_origin"},
            {"id": "origin-1", "role": "origin"},
            {"id": "origin-2", "role": "origin"},
            {"id": "bot-1", "role": "bot"},
            {"id": "bot-2", "role": "bot"},
        ],
        "links": [["bot-1", "origin-1"], ["bot-2", "origin-2"]],
        "mode": "origin_aggregated",
    },
    "links": {
        "bot-1": {"regions": ["living"]},
        "bot-2": {"regions": ["kitchen"]},
    },
    "schedule": [
        {"subject": "pet", "id": "cat", "start_s": 0.0, "end_s": 12.0, "region": "kitchen"},
        {"subject": "human", "id": "alice", "start_s": 0.0, "end_s": 18.0, "region": "living"},
        {"subject": "human", "id": "alice", "start_s": 18.0, "end_s": 36.0, "region": "kitchen"},
    ],
    "policy": "cloud_when_motion",
}
