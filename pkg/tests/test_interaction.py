import logging

import pytest

from expressions import DivisionByZero
from interaction import FireError, GlobalConfiguration, build_system, enabled_interactions, \
    enumerate_interactions, fire

from generators import parse_ok

ATOMS = """
atom X { port a state s init -> s on a from s to s }
atom Y { port b state s init -> s on b from s to s }
atom Z { port c state s init -> s on c from s to s }
"""

SHAPES = ATOMS + """
compound Rendezvous {
  component x : X
  component y : Y
  component z : Z
  connector abc(x.a, y.b, z.c)
}

compound Broadcast {
  component x : X
  component y : Y
  component z : Z
  connector abc(x.a', y.b, z.c)
}

compound TwoTriggers {
  component x : X
  component y : Y
  component z : Z
  connector abc(x.a', y.b', z.c)
}

compound NestedRendezvous {
  component x : X
  component y : Y
  component z : Z
  connector bc(y.b, z.c) export bc
  connector abc(x.a, bc)
}

compound AtomicPair {
  component x : X
  component y : Y
  component z : Z
  connector bc(y.b, z.c) export bc
  connector abc(x.a', bc)
}

compound NestedBroadcast {
  component x : X
  component y : Y
  component z : Z
  connector bc(y.b', z.c) export bc
  connector abc(x.a', bc)
}
"""


def members(*groups):
    names = {"a": "x.a", "b": "y.b", "c": "z.c"}
    return frozenset(frozenset(names[ch] for ch in g) for g in groups)


@pytest.mark.parametrize("root, expected", [
    ("Rendezvous", members("abc")),
    ("Broadcast", members("a", "ab", "ac", "abc")),
    ("TwoTriggers", members("a", "b", "ab", "ac", "bc", "abc")),
    ("NestedRendezvous", members("abc")),
    ("AtomicPair", members("a", "abc")),
    ("NestedBroadcast", members("a", "ab", "abc")),
])
def test_interaction_sets(root, expected):
    model = parse_ok(SHAPES)
    system = build_system(model, model.compound(root))
    result = enumerate_interactions(system, "abc")
    assert result.connector == "abc"
    assert result.members == expected


def test_enabled_and_fire_on_mutex(system_of):
    system = system_of("mutex")
    assert [a.path for a in system.atoms] == ["C", "task1", "task2"]
    g = GlobalConfiguration(("free", "sleep", "sleep"), ((), (), ()))
    enabled = enabled_interactions(system, g)
    assert [b.interaction.connector for b in enabled] == ["b1t", "b2t"]
    nxt = fire(system, g, enabled[0])
    assert nxt.states == ("taken", "work", "sleep")
    assert g.states == ("free", "sleep", "sleep")
    assert [b.interaction.connector for b in enabled_interactions(system, nxt)] == ["f1r"]


def test_interaction_labels_and_ports(system_of):
    system = system_of("mutex")
    b1t = next(i for i in system.interactions if i.connector == "b1t")
    assert b1t.ports == ("C.t", "task1.b1")
    assert b1t.label == "b1t{C.t, task1.b1}"


def test_bidirectional_dataflow(system_of):
    system = system_of("traffic_light")
    assert [a.path for a in system.atoms] == ["Light", "Timer"]
    g = GlobalConfiguration(("green", "run"), ((56, 4), (60, 60, 60)))
    enabled = enabled_interactions(system, g)
    assert [b.interaction.connector for b in enabled] == ["tick", "sync"]
    sync = enabled[1]
    assert sync.values["sync"]["x"] == 60
    assert sync.values["sync"]["y"] == 4
    nxt = fire(system, g, sync)
    assert nxt.states == ("yellow", "run")
    assert nxt.values == ((60, 56), (0, 4, 4))


def test_hierarchical_connectors(system_of):
    system = system_of("payload_hk")
    assert [a.path for a in system.atoms] == ["cdms", "payload.ctrl", "payload.sensor"]
    poll = next(i for i in system.interactions if i.connector == "poll")
    assert poll.ports == ("cdms.request", "payload.ctrl.read_HK")
    roots = sorted(n.name for n in system.roots)
    assert roots == ["downlink", "payload.acquire", "poll", "sleep", "wake"]


def test_hierarchical_dataflow(system_of):
    system = system_of("payload_hk")
    g = GlobalConfiguration(("polling", "SEND", "idle"), ((0, 1), (7,), (0,)))
    [downlink] = enabled_interactions(system, g)
    assert downlink.interaction.connector == "downlink"
    nxt = fire(system, g, downlink)
    assert nxt.states == ("idle", "WAIT", "idle")
    assert nxt.values[0] == (7, 2)


FAULTY = """
atom A {
  port p
  port q
  var int x
  var int y
  state s
  init -> s
  on p from s to s do x := 1 / y
  on q from s to s provided 1 / y > 0
}

compound C {
  component a : A
  connector cp(a.p)
  connector cq(a.q)
}
"""


def test_fire_error_leaves_configuration_untouched():
    system = build_system(parse_ok(FAULTY))
    g = GlobalConfiguration(("s",), ((0, 0),))
    [bound] = enabled_interactions(system, g)
    with pytest.raises(FireError) as err:
        fire(system, g, bound)
    assert isinstance(err.value.cause, DivisionByZero)
    assert g.values == ((0, 0),)


def test_guard_errors_disable_the_transition(caplog):
    system = build_system(parse_ok(FAULTY))
    g = GlobalConfiguration(("s",), ((0, 0),))
    with caplog.at_level(logging.WARNING):
        enabled = enabled_interactions(system, g)
    assert [b.interaction.connector for b in enabled] == ["cp"]
    assert "division by zero" in caplog.text


def test_connector_guard_is_checked_after_up():
    source = """
atom A { port p(x) var int x state s init do x := 3 -> s on p from s to s do x := x - 1 }
compound C {
  component a : A
  component b : A
  connector c(a.p, b.p) var int total provided total > 4 up total := a.x + b.x
}
"""
    system = build_system(parse_ok(source))
    g = GlobalConfiguration(("s", "s"), ((3,), (3,)))
    [bound] = enabled_interactions(system, g)
    assert bound.values["c"]["total"] == 6
    g = fire(system, g, bound)
    assert g.values == ((2,), (2,))
    assert enabled_interactions(system, g) == []
