import copy

import numpy as np
import pytest

from homesense.scenario import DEMO_SCENARIO, ScenarioError, build_traces, parse_scenario

SMALL = {
    "name": "small",
    "seed": 3,
    "duration_s": 12.0,
    "sample_rate_hz": 100.0,
    "topology": {
        "nodes": [{"id": "mo", "role": "master_origin"}, {"id": "b1", "role": "bot"}],
        "links": [["b1", "mo"]],
    },
    "links": {"b1": {"regions": ["hall"]}},
    "schedule": [{"subject": "human", "start_s": 0.0, "end_s": 12.0, "region": "hall"}],
    "policy": "edge_only",
}


def _with(path, value):
    doc = copy.deepcopy(SMALL)
    *head, last = path
    node = doc
    for k in head:
        node = node[k]
    if value is KeyError:
        del node[last]
    else:
        node[last] = value
    return doc


def test_demo_parses():
    sc = parse_scenario(DEMO_SCENARIO)
    assert sc.regions == ("kitchen", "living")
    assert sc.subject_of_interest() == "alice"
    assert len(sc.presence()) == 2


def test_seed_override_changes_hash():
    a, b = parse_scenario(SMALL), parse_scenario(SMALL, seed=4)
    assert a.seed == 3 and b.seed == 4
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == parse_scenario(SMALL).config_hash()


@pytest.mark.parametrize(
    "path, value, field",
    [
        (("seed",), KeyError, "seed"),
        (("duration_s",), -1.0, "duration_s"),
        (("schedule", 0, "subject"), "ghost", "schedule[0].subject"),
        (("schedule", 0, "end_s"), 0.0, "schedule[0].end_s"),
        (("links", "b1", "coherence"), 2.0, "links.b1.coherence"),
        (("links", "b9"), {"regions": []}, "links.b9"),
        (("topology", "links"), [], "topology"),
        (("policy",), "sometimes", "policy"),
        (("channel",), {"colour": 1}, "channel.colour"),
        (("impairments",), {"packet_loss_rate": 2.0}, "impairments"),
    ],
)
def test_invalid_scenarios_name_the_field(path, value, field):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_with(path, value))
    assert field in str(err.value)


def test_schedule_ids_keep_one_kind():
    doc = _with(("schedule",), [
        {"subject": "human", "id": "x", "start_s": 0, "end_s": 5, "region": "hall"},
        {"subject": "pet", "id": "x", "start_s": 5, "end_s": 9, "region": "hall"},
    ])
    with pytest.raises(ScenarioError, match="two subject kinds"):
        parse_scenario(doc)


def test_traces_are_deterministic():
    sc = parse_scenario(SMALL)
    a, b = build_traces(sc), build_traces(sc)
    assert set(a) == {"b1"}
    np.testing.assert_array_equal(a["b1"].gains, b["b1"].gains)
    assert len(a["b1"]) == 1200
    c = build_traces(parse_scenario(SMALL, seed=9))
    assert not np.array_equal(a["b1"].gains, c["b1"].gains)


def test_subject_outside_link_region_is_invisible():
    moved = parse_scenario(_with(("schedule", 0, "region"), "garden"))
    tr = build_traces(moved)["b1"]
    still = build_traces(parse_scenario(_with(("schedule",), [])))["b1"]
    np.testing.assert_allclose(tr.power().var(axis=0), still.power().var(axis=0), rtol=0.3)
