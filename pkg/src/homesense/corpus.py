"""Synthetic labelled corpus and leave-one-environment-out evaluation.

Each environment fixes a channel (mean SNR, scatterer count, subcarrier
spread) and a population of subjects whose gait parameters differ from the
other environments, so that a held-out environment is genuinely unseen.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig, SubjectKind, SubjectProfile, generate_trace
from .sensing import GAIT_RATE_HZ, SensingParams, iter_windows
from .subject import HUMAN, FeatureVector, TrainParams, accuracy, classify, extract_features, train

KINDS = (SubjectKind.HUMAN, SubjectKind.PET, SubjectKind.ROBOT, SubjectKind.FAN)

# weaker reflectors than a walking adult
ENERGY_OFFSET_DB = {
    SubjectKind.HUMAN: 0.0,
    SubjectKind.PET: -3.0,
    SubjectKind.ROBOT: -3.0,
    SubjectKind.FAN: -6.0,
}
DISTANCE_SPREAD_DB = 3.0


@dataclass(frozen=True)
class Sample:
    environment: str
    kind: str
    features: FeatureVector

    @property
    def human(self) -> bool:
        return self.kind == SubjectKind.HUMAN.value


def environment_setup(env_index: int, seed: int = 0):
    """Channel config factory and per-kind subject profiles of one environment."""
    rng = np.random.default_rng([seed, env_index, 0xE17])
    mean_db = float(rng.uniform(-4.0, 6.0))
    spread_db = float(rng.uniform(3.0, 8.0))
    paths = int(rng.integers(40, 160))
    human_cycle = float(rng.uniform(0.95, 1.25))
    pet_cycle = float(rng.uniform(0.38, 0.62))
    # legged gaits are drawn as (cycle, walking speed); stride follows
    profiles = {
        SubjectKind.HUMAN: SubjectProfile.human(
            stride_cycle_s=human_cycle,
            stride_length_m=human_cycle * float(rng.uniform(1.0, 1.4)),
        ),
        SubjectKind.PET: SubjectProfile.pet(
            stride_cycle_s=pet_cycle,
            stride_length_m=pet_cycle * float(rng.uniform(0.55, 1.0)),
        ),
        SubjectKind.ROBOT: SubjectProfile.robot(
            base_speed_mps=float(rng.uniform(0.2, 0.5)),
            collision_rate_hz=float(rng.uniform(0.1, 0.3)),
        ),
        SubjectKind.FAN: SubjectProfile.fan(base_speed_mps=float(rng.uniform(0.35, 0.9))),
    }

    def config(kind: SubjectKind, trace_seed: int, distance_db: float = 0.0) -> ChannelConfig:
        return ChannelConfig.heterogeneous(
            mean_db=mean_db + ENERGY_OFFSET_DB[kind] + distance_db,
            spread_db=spread_db,
            path_count=paths,
            sample_rate_hz=GAIT_RATE_HZ,
            rng_seed=trace_seed,
        )

    return config, profiles


def _trace_features(args):
    env_index, kind_value, recording, windows, seed = args
    kind = SubjectKind(kind_value)
    config, profiles = environment_setup(env_index, seed)
    params = SensingParams()
    ss = np.random.SeedSequence([seed, env_index, KINDS.index(kind), recording])
    trace_seed = int(ss.generate_state(1)[0])
    # each recording is made at its own distance from the link
    distance_db = float(np.random.default_rng(ss).uniform(-DISTANCE_SPREAD_DB, DISTANCE_SPREAD_DB))
    trace = generate_trace(config(kind, trace_seed, distance_db), profiles[kind], windows * params.window_len_s)
    out = []
    for rep in iter_windows(trace, params):
        # the classifier only ever sees windows the motion detector passed on
        if not rep.motion:
            continue
        out.append(extract_features(rep.speeds, rep.queue, rep.queue_decisions).as_array())
    return env_index, kind_value, out


def generate_corpus(
    environments: int = 5,
    windows_per_trace: int = 3,
    seed: int = 0,
    workers: int | None = None,
    recordings: int = 2,
) -> list[Sample]:
    """Feature vectors of every motion window, ``environments`` x 4 kinds.

    Every (environment, kind) pair contributes ``recordings`` traces of
    ``windows_per_trace`` decision windows, each at a random distance.

    Traces are independent, so they are processed in a process pool when
    ``workers`` (default: CPU count, capped at 8) exceeds one.  Results are
    ordered deterministically regardless of scheduling.
    """
    if min(environments, windows_per_trace, recordings) < 1:
        raise ValueError("environments, windows_per_trace and recordings must be >= 1")
    jobs = [
        (e, k.value, r, windows_per_trace, seed)
        for e in range(environments)
        for k in KINDS
        for r in range(recordings)
    ]
    if workers is None:
        workers = min(8, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trace_features, jobs))
    else:
        results = [_trace_features(j) for j in jobs]
    return [
        Sample(f"env{e}", kind, FeatureVector.from_array(x))
        for e, kind, rows in results
        for x in rows
    ]


@dataclass(frozen=True)
class FoldResult:
    held_out: str
    accuracy: float
    false_alarm_rate: float
    windows: int


def false_alarm_rate(model, samples) -> float:
    negatives = [s for s in samples if not s.human]
    if not negatives:
        return 0.0
    return sum(classify(model, s.features)[0] == HUMAN for s in negatives) / len(negatives)


def leave_one_environment_out(samples: list[Sample], params: TrainParams | None = None) -> list[FoldResult]:
    """Train on all environments but one, test on the held-out one, per fold."""
    envs = sorted({s.environment for s in samples})
    if len(envs) < 2:
        raise ValueError("leave-one-environment-out needs at least 2 environments")
    folds = []
    for env in envs:
        train_set = [(s.features, s.human) for s in samples if s.environment != env]
        test = [s for s in samples if s.environment == env]
        model = train(train_set, params)
        folds.append(
            FoldResult(env, accuracy(model, [(s.features, s.human) for s in test]), false_alarm_rate(model, test), len(test))
        )
    return folds
