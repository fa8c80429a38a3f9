import dataclasses

import pytest

from model import Atom, Compound, Instance, Model, validate_model
from textlang import parse

from generators import parse_ok

TASK = """
atom T {
  port p
  port q
  state s
  init -> s
  on p from s to s
  on q from s to s
}
"""


def codes(source):
    _, diagnostics = parse(source)
    return [d.code for d in diagnostics]


def test_bundled_models_are_well_formed(load):
    for name in ["traffic_light", "mutex", "broken_mutex", "payload_hk", "cubeth_reduced"]:
        assert load(name).root.name


def test_missing_init_and_states():
    assert "missing-init" in codes("atom A { state s }")
    assert "no-states" in codes("atom A { init -> s }")


def test_unknown_names():
    found = codes(TASK + "compound C { component t : Nope connector c(t.p) }")
    assert "unknown-type" in found
    found = codes(TASK + "compound C { component t : T connector c(t.nope) }")
    assert "unresolved-end" in found
    found = codes("atom A { port p var int x state s init -> s on p from s to s provided y > 0 }")
    assert "unknown-variable" in found


def test_type_errors_are_reported():
    found = codes("atom A { port p var int x state s init -> s on p from s to s provided x }")
    assert "type-error" in found
    found = codes("atom A { port p var bool b state s init -> s on p from s to s do b := 1 }")
    assert "type-error" in found


def test_one_port_per_atom():
    _, diagnostics = parse(TASK + "compound C { component t : T connector c(t.p, t.q) }")
    [d] = [d for d in diagnostics if d.code == "one-port-per-atom"]
    assert "more than one port of component 't'" in d.message


def test_priority_cycle_is_reported_once_with_its_path():
    source = TASK + """
compound C {
  component t1 : T
  component t2 : T
  component t3 : T
  connector a(t1.p)
  connector b(t2.p)
  connector c(t3.p)
  priority b < c
  priority a < b
  priority c < a
}
"""
    _, diagnostics = parse(source)
    cycles = [d for d in diagnostics if d.code == "priority-cycle"]
    assert len(cycles) == 1
    assert cycles[0].message == "priority cycle a→b→c→a"


def test_recursive_compound():
    assert "recursive-compound" in codes("compound C { component c : C }")


def test_duplicates():
    assert "duplicate-type" in codes(TASK + TASK)
    assert "duplicate-init" in codes("atom A { state s init -> s init -> s }")
    assert "duplicate-connector" in codes(TASK + "compound C { component t : T connector c(t.p) connector c(t.q) }")


def test_state_tests_only_in_properties():
    found = codes("atom A { port p state s init -> s on p from s to s provided A@s }")
    assert "type-error" in found


def test_property_scope_is_the_root_compound():
    source = TASK + "compound C { component t : T connector c(t.p) }\n"
    assert codes(source + "property ok { t@s }") == []
    assert "type-error" in codes(source + "property bad { t@nowhere }")
    assert "unknown-variable" in codes(source + "property bad { t.x > 0 }")


def test_validation_never_mutates_and_is_repeatable():
    model, _ = parse(TASK + "compound C { component t : T connector c(t.p, t.q) }")
    first = validate_model(model)
    second = validate_model(model)
    assert first == second
    assert first is not second


def test_root_is_last_uninstantiated_compound(load):
    model = load("payload_hk")
    assert model.root.name == "Satellite"
    assert Model().root == Compound("")
    paths = dict(model.atom_paths())
    assert sorted(paths) == ["cdms", "payload.ctrl", "payload.sensor"]
    assert paths["payload.ctrl"].name == "PayloadHK"


def test_model_is_frozen_and_spans_do_not_matter():
    a = parse_ok(TASK)
    b = parse_ok("\n\n" + TASK)
    assert a == b
    atom = a.atom("T")
    assert isinstance(atom, Atom)
    with pytest.raises(dataclasses.FrozenInstanceError):
        atom.name = "U"


def test_instances_resolve_to_component_types(load):
    model = load("cubeth_reduced")
    root = model.root
    assert root.name == "CubeSat"
    assert root.instance("payload") == Instance("payload", "Subsystem")
    assert len(list(model.atom_paths())) == 19


INNER = TASK + """
compound Inner {
  component t : T
  connector a(t.p) export pa
  connector b(t.q)
  export port pa
  priority b < a
}
"""


def test_priority_on_consumed_export_is_reported():
    source = INNER + "compound Outer { component i : Inner component u : T connector top(i.pa, u.p) }"
    _, diagnostics = parse(source)
    [d] = [d for d in diagnostics if d.code == "priority-inner-connector"]
    assert "'a'" in d.message and "'top'" in d.message


def test_priority_on_unconsumed_export_is_accepted():
    assert "priority-inner-connector" not in codes(INNER + "compound Outer { component i : Inner component u : T connector top(u.p) }")
