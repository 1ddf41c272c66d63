import numpy as np
import pytest

from homesense.corpus import (
    KINDS,
    Sample,
    environment_setup,
    false_alarm_rate,
    generate_corpus,
    leave_one_environment_out,
)
from homesense.subject import FeatureVector, TrainParams


@pytest.fixture(scope="module")
def small():
    return generate_corpus(environments=2, windows_per_trace=1, recordings=1, seed=4, workers=1)


def test_small_corpus_labels_and_environments(small):
    assert {s.environment for s in small} == {"env0", "env1"}
    assert {s.kind for s in small} <= {k.value for k in KINDS}
    assert all(s.human == (s.kind == "human") for s in small)


def test_corpus_is_deterministic(small):
    again = generate_corpus(environments=2, windows_per_trace=1, recordings=1, seed=4, workers=1)
    assert [s.features.as_array().tobytes() for s in again] == [s.features.as_array().tobytes() for s in small]


def test_environments_differ():
    cfg0, prof0 = environment_setup(0, seed=0)
    cfg1, prof1 = environment_setup(1, seed=0)
    assert prof0 != prof1
    assert cfg0(KINDS[0], 1).motion_energy_ratio_db != cfg1(KINDS[0], 1).motion_energy_ratio_db


def test_loeo_needs_two_environments(small):
    with pytest.raises(ValueError, match="2 environments"):
        leave_one_environment_out([s for s in small if s.environment == "env0"])


def test_loeo_fold_per_environment(corpus):
    folds = leave_one_environment_out(corpus, TrainParams(seed=0))
    assert [f.held_out for f in folds] == sorted({s.environment for s in corpus})
    assert sum(f.windows for f in folds) == len(corpus)
    assert all(0 <= f.accuracy <= 1 and 0 <= f.false_alarm_rate <= 1 for f in folds)


def test_false_alarm_rate_counts_negatives_only(model):
    human_like = FeatureVector.from_array(np.r_[1, 1.3, 1.1, 1.2, 0.2, 0.7, 1.6, np.zeros(6)])
    assert false_alarm_rate(model, [Sample("e", "human", human_like)]) == 0.0
