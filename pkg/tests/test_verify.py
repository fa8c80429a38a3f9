import json
import random

import pytest

from engine import maximal_enabled, replay
from interaction import build_system
from verify import (
    Limits, Status, abstract_candidates, check_deadlock, check_deadlock_compositional, check_safety,
    explore, local_reachable,
)

from generators import parse_ok, random_model_source
from oracle import FlatOracle

UNGUARDED = """
atom T {
  port b
  port f
  state sleep
  state work
  init -> sleep
  on b from sleep to work
  on f from work to sleep
}

compound Free {
  component task1 : T
  component task2 : T
  connector b1(task1.b)
  connector b2(task2.b)
  connector f1(task1.f)
  connector f2(task2.f)
}

property mutual_exclusion { !(task1@work && task2@work) }
"""


def described(system, g):
    return frozenset(system.describe(g).items())


def test_mutex_state_space(system_of):
    space = explore(system_of("mutex"))
    assert len(space.states) == 3
    assert space.edge_count == 4
    assert not space.deadlocks
    assert not space.truncated


def test_traffic_light_state_space(system_of):
    space = explore(system_of("traffic_light"))
    assert len(space.states) == 123
    assert check_deadlock(space).status is Status.HOLDS


def test_safety_holds(load):
    model = load("mutex")
    space = explore(build_system(model))
    verdict = check_safety(space, model.find_property("mutual_exclusion"))
    assert verdict.holds
    assert verdict.summary() == "Holds"
    assert verdict.states_explored == 3


def test_safety_violation_has_shortest_trace():
    model = parse_ok(UNGUARDED)
    system = build_system(model)
    verdict = check_safety(explore(system), model.find_property("mutual_exclusion"))
    assert verdict.status is Status.VIOLATED
    assert [e.connector for e in verdict.trace] == ["b1", "b2"]
    assert verdict.state == {"task1": "work", "task2": "work"}
    assert verdict.summary() == "Violated after 2 steps (property mutual_exclusion)"


def test_broken_mutex_deadlock(system_of):
    system = system_of("broken_mutex")
    verdict = check_deadlock(explore(system))
    assert verdict.status is Status.VIOLATED
    assert len(verdict.trace) == 1
    assert verdict.trace[0].connector == "b2t"
    assert verdict.trace[0].ports == ("C.t", "task2.b2")
    assert verdict.state == {"C": "taken", "task1": "sleep", "task2": "work"}
    g = replay(system, [(e.connector, e.ports) for e in verdict.trace])
    assert system.describe(g) == verdict.state
    assert maximal_enabled(system, g) == []


def test_verdict_json(system_of):
    verdict = check_deadlock(explore(system_of("broken_mutex")))
    doc = json.loads(verdict.to_json())
    assert doc["status"] == "Violated"
    assert doc["trace"][0]["connector"] == "b2t"
    assert doc["state"]["task2"] == "work"


def test_resource_limit(system_of, load):
    space = explore(system_of("traffic_light"), Limits(max_states=10, max_seconds=60))
    assert space.truncated
    verdict = check_deadlock(space)
    assert verdict.status is Status.RESOURCE_LIMIT
    assert verdict.summary().startswith("ResourceLimit after")
    prop = load("traffic_light").find_property("no_late_switch")
    assert check_safety(space, prop).status is Status.RESOURCE_LIMIT


def test_states_frame(system_of):
    frame = explore(system_of("mutex")).to_frame()
    assert len(frame) == 3
    assert list(frame.columns) == ["state", "out_edges", "C", "task1", "task2"]
    assert frame.loc[0, "C"] == "free"


def test_compositional_mutex_holds(system_of):
    verdict = check_deadlock_compositional(system_of("mutex"), limits=None)
    assert verdict.status is Status.HOLDS
    assert verdict.refuted == 2
    assert verdict.candidates == ()
    assert verdict.summary() == "Holds, 0 candidates (2 refuted by interaction invariants)"


def test_compositional_abstraction_of_mutex(system_of):
    system = system_of("mutex")
    reach = local_reachable(system)
    assert reach == [["free", "taken"], ["sleep", "work"], ["sleep", "work"]]
    candidates, complete = abstract_candidates(system, reach)
    assert complete
    assert sorted(candidates) == [("free", "work", "work"), ("taken", "sleep", "sleep")]


def test_compositional_confirms_real_deadlock(system_of):
    verdict = check_deadlock_compositional(system_of("broken_mutex"))
    assert verdict.status is Status.VIOLATED
    assert verdict.state == {"C": "taken", "task1": "sleep", "task2": "work"}


def test_compositional_without_exploration_is_potential(system_of):
    verdict = check_deadlock_compositional(system_of("broken_mutex"), limits=None)
    assert verdict.status is Status.POTENTIAL_VIOLATION
    assert {"C": "taken", "task1": "sleep", "task2": "work"} in verdict.candidates


@pytest.mark.parametrize("seed", range(500))
def test_random_models(seed):
    rng = random.Random(seed)
    model = parse_ok(random_model_source(rng))
    system = build_system(model)
    space = explore(system)
    reachable, expected_deadlocks = FlatOracle(model).reachable()
    assert {described(system, g) for g in space.states} == reachable
    assert {described(system, space.states[i]) for i in space.deadlocks} == expected_deadlocks
    deadlocks = {space.states[i] for i in space.deadlocks}

    verdict = check_deadlock(space)
    if deadlocks:
        assert verdict.status is Status.VIOLATED
        g = replay(system, [(e.connector, e.ports) for e in verdict.trace])
        assert g in deadlocks
        assert len(verdict.trace) == len(space.path_to(min(space.deadlocks)))
    else:
        assert verdict.status is Status.HOLDS

    compositional = check_deadlock_compositional(system, limits=None)
    if compositional.status is Status.HOLDS:
        assert not expected_deadlocks


def test_mutex_count_against_control_product(load):
    model = load("mutex")
    reachable, deadlocks = FlatOracle(model).reachable()
    assert not deadlocks
    controls = {(dict(s)["C"], dict(s)["task1"], dict(s)["task2"]) for s in reachable}
    product = [(c, t1, t2) for c in ("free", "taken") for t1 in ("sleep", "work") for t2 in ("sleep", "work")]
    assert len(product) == 8
    assert sorted(s for s in product if s in controls) == [
        ("free", "sleep", "sleep"), ("taken", "sleep", "work"), ("taken", "work", "sleep")]
    space = explore(build_system(model))
    assert {described(space.system, g) for g in space.states} == reachable


def test_smallest_nonempty_space():
    system = build_system(parse_ok("""
atom A { port p state s init -> s on p from s to s }
compound C { component a : A connector c(a.p) }
"""))
    space = explore(system)
    assert len(space.states) == 1
    assert space.edge_count == 1
    assert check_deadlock(space).holds


def test_broken_mutex_against_enumeration(load):
    model = load("broken_mutex")
    reachable, deadlocks = FlatOracle(model).reachable()
    assert deadlocks == {frozenset({"C": "taken", "task1": "sleep", "task2": "work"}.items())}
    space = explore(build_system(model))
    assert {described(space.system, g) for g in space.states} == reachable
