"""
Deterministic generators and helpers shared by the randomized suites.
"""

import random
from typing import List

from model import Model, errors_only
from textlang import parse


def parse_ok(source: str) -> Model:
    model, diagnostics = parse(source)
    errors = errors_only(diagnostics)
    assert not errors, "\n".join(str(d) for d in errors)
    return model


def random_model_source(rng: random.Random, max_atoms: int = 5, max_states: int = 4,
                        data: bool = True) -> str:
    """A well-formed flat model: atoms a0..an under one compound `Sys`."""
    n_atoms = rng.randint(1, max_atoms)
    lines: List[str] = []
    ports_of = []
    for i in range(n_atoms):
        n_states = rng.randint(1, max_states)
        n_ports = rng.randint(1, 3)
        ports = [f"p{k}" for k in range(n_ports)]
        ports_of.append(ports)
        lines.append(f"atom A{i} {{")
        for p in ports:
            lines.append(f"  port {p}(x)" if data else f"  port {p}")
        if data:
            lines.append("  var int x")
        for s in range(n_states):
            lines.append(f"  state s{s}")
        lines.append("  init -> s0")
        for _ in range(rng.randint(0, 2 * n_states)):
            t = f"  on {rng.choice(ports)} from s{rng.randrange(n_states)} to s{rng.randrange(n_states)}"
            if data and rng.random() < 0.3:
                t += " provided x < 2"
            if data and rng.random() < 0.3:
                t += " do x := (x + 1) % 3"
            lines.append(t)
        lines.append("}")
        lines.append("")

    lines.append("compound Sys {")
    for i in range(n_atoms):
        lines.append(f"  component a{i} : A{i}")
    n_connectors = rng.randint(1, 5)
    for j in range(n_connectors):
        members = rng.sample(range(n_atoms), rng.randint(1, min(3, n_atoms)))
        broadcast = len(members) > 1 and rng.random() < 0.25
        ends = [f"a{i}.{rng.choice(ports_of[i])}" for i in members]
        if broadcast:
            ends[0] += "'"
        text = f"  connector c{j}({', '.join(ends)})"
        if data and len(members) > 1 and not broadcast and rng.random() < 0.4:
            text += f" var int v up v := a{members[0]}.x down a{members[1]}.x := v"
        lines.append(text)
    for j in range(n_connectors):
        for k in range(j + 1, n_connectors):
            if rng.random() < 0.15:
                lines.append(f"  priority c{j} < c{k}")
    lines.append("}")
    lines.append("")
    other = rng.randrange(n_atoms)
    lines.append(f"property p {{ !(a0@s0 && a{other}.x > 5) }}" if data else "property p { a0@s0 || true }")
    return "\n".join(lines) + "\n"


def random_architecture_source(rng: random.Random, count: int) -> str:
    """`count` architectures Arch0.. over parameters p0, p1 with interface {a, b}."""
    lines: List[str] = []
    for k in range(count):
        lines += [
            f"atom Coord{k} {{",
            "  port t",
            "  port r",
            "  state s0",
            "  state s1",
            "  init -> s0",
            "  on t from s0 to s1",
            "  on r from s1 to s0",
            "}",
            "",
            f"property prop{k} {{ C@s0 || C@s1 }}",
            "",
        ]
    for k in range(count):
        lines.append(f"architecture Arch{k} {{")
        lines.append("  param p0 : { a, b }")
        lines.append("  param p1 : { a, b }")
        lines.append(f"  coordinator C : Coord{k}")
        names = []
        for j in range(rng.randint(1, 3)):
            param = rng.choice(["p0", "p1"])
            port = rng.choice(["a", "b"])
            coordinator_port = rng.choice(["t", "r"])
            names.append(f"g{j}")
            lines.append(f"  connector g{j}({param}.{port}, C.{coordinator_port})")
        if len(names) > 1 and rng.random() < 0.5:
            lines.append(f"  priority {names[0]} < {names[1]}")
        lines.append(f"  property prop{k}")
        lines.append("}")
        lines.append("")
    return "\n".join(lines)
