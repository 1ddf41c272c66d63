import time

import numpy as np
import pytest

from homesense.corpus import generate_corpus
from homesense.scenario import build_traces, load_scenario, run_scenario
from homesense.subject import train

CORPUS_ENVIRONMENTS = 5


@pytest.fixture(scope="session")
def corpus_run():
    """The default synthetic corpus and the wall time it took to build."""
    t0 = time.perf_counter()
    samples = generate_corpus(CORPUS_ENVIRONMENTS, seed=0)
    return samples, time.perf_counter() - t0


@pytest.fixture(scope="session")
def corpus(corpus_run):
    return corpus_run[0]


@pytest.fixture(scope="session")
def model(corpus):
    return train([(s.features, s.human) for s in corpus])


@pytest.fixture(scope="session")
def demo():
    return load_scenario("demo")


@pytest.fixture(scope="session")
def demo_traces(demo):
    return build_traces(demo)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def demo_run(demo, demo_traces, model):
    return run_scenario(demo, model, traces=demo_traces)
