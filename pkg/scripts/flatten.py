"""
Flattening back-end.

`flatten` turns the reachable state space of a closed system into a single
automaton: one state per reachable configuration, one edge per maximal
enabled interaction (in the engine's candidate order) carrying a guard
program and an action program for a small stack machine. `emit` and `load`
convert the automaton to and from a versioned little-endian image, and
`interpret` runs an image with the engine's generator so that both produce
the same trace for the same seed.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, TextIO, Tuple, Union

from tqdm import tqdm

from engine import RNG_SCHEME, RunResult, RunStatus, TraceEvent, make_rng, maximal_enabled
from expressions import (
    BINARY_OPS, BOOL, INT, BipError, Binary, Const, EvaluationError, Expression, StateTest, Unary, Value, Var,
    _apply_binary, _apply_unary, default_value, is_true,
)
from interaction import (
    CompiledTransition, ConnectorNode, FireError, GlobalConfiguration, Interaction, System,
    fire_with_transitions,
)
from verify import Limits, ResourceLimitError, explore

logger = logging.getLogger(__name__)

MAGIC = b"BIPF"
VERSION = 1
HEADER = struct.Struct("<4sHQ")
NO_TARGET = 0xFFFFFFFF

# ---- Stack machine opcodes ----
HALT = 0
PUSH_INT = 1
PUSH_BOOL = 2
LOAD = 3
STORE = 4
NEG = 5
NOT = 6
BINARY_BASE = 16
BINARY_CODES = {op: BINARY_BASE + i for i, op in enumerate(BINARY_OPS)}
BINARY_NAMES = {code: op for op, code in BINARY_CODES.items()}


# -------------------------------------------------------------------
# ERRORS
# -------------------------------------------------------------------
class ImageError(BipError):
    pass


class VersionMismatch(ImageError):
    pass


class ChecksumMismatch(ImageError):
    pass


class ImageCorrupt(ImageError):
    pass


# -------------------------------------------------------------------
# TYPES
# -------------------------------------------------------------------
@dataclass(frozen=True)
class FlatVariable:
    name: str
    type: str
    scratch: bool


@dataclass(frozen=True)
class FlatAtom:
    path: str
    first_slot: int
    slot_count: int


@dataclass(frozen=True)
class FlatState:
    control: Tuple[str, ...]
    values: Tuple[Value, ...]


@dataclass(frozen=True)
class FlatEdge:
    interaction: int
    guard: int
    action: int
    target: int
    error: Optional[str] = None


@dataclass(frozen=True)
class FlatAutomaton:
    rng_scheme: str
    root: str
    variables: Tuple[FlatVariable, ...]
    atoms: Tuple[FlatAtom, ...]
    interactions: Tuple[Tuple[str, Tuple[str, ...]], ...]
    states: Tuple[FlatState, ...]
    code: Tuple[Tuple[int, int], ...]
    edges: Tuple[Tuple[FlatEdge, ...], ...]

    @property
    def edge_count(self) -> int:
        return sum(len(e) for e in self.edges)

    @property
    def sinks(self) -> List[int]:
        return [i for i, e in enumerate(self.edges) if not e]

    def table_sizes(self) -> Dict[str, int]:
        """Entry count of every static table in the image."""
        return {
            "states": len(self.states),
            "edges": self.edge_count,
            "interactions": len(self.interactions),
            "variables": len(self.variables),
            "scratch_slots": sum(1 for v in self.variables if v.scratch),
            "code": len(self.code),
        }

    def configuration(self, index: int) -> GlobalConfiguration:
        state = self.states[index]
        values = tuple(state.values[a.first_slot:a.first_slot + a.slot_count] for a in self.atoms)
        return GlobalConfiguration(state.control, values)


# -------------------------------------------------------------------
# PROGRAM COMPILATION
# -------------------------------------------------------------------
class _Compiler:
    """Memory layout and stack programs of one system."""

    def __init__(self, system: System):
        self.system = system
        self.variables: List[FlatVariable] = []
        self.atom_slots: Dict[Tuple[int, str], int] = {}
        self.node_slots: Dict[Tuple[str, str], int] = {}
        self.atoms: List[FlatAtom] = []
        for inst in system.atoms:
            first = len(self.variables)
            for decl in inst.atom.variables:
                self.atom_slots[(inst.index, decl.name)] = len(self.variables)
                self.variables.append(FlatVariable(f"{inst.path}.{decl.name}", decl.type, False))
            self.atoms.append(FlatAtom(inst.path, first, len(self.variables) - first))
        for name in sorted(system.nodes):
            for decl in system.nodes[name].connector.variables:
                self.node_slots[(name, decl.name)] = len(self.variables)
                self.variables.append(FlatVariable(f"{name}.{decl.name}", decl.type, True))
        self.code: List[Tuple[int, int]] = []
        self._programs: Dict[tuple, Tuple[int, int]] = {}

    # ---------------------------------------------------------------
    def _node_resolver(self, node: ConnectorNode) -> Callable[[str], int]:
        def resolve(name: str) -> int:
            if "." not in name:
                return self.node_slots[(node.name, name)]
            prefix, var = name.split(".", 1)
            end = node.end_for(prefix)
            if end.child is not None:
                return self.node_slots[(end.child.name, var)]
            return self.atom_slots[(end.atom, var)]
        return resolve

    def _atom_resolver(self, atom: int) -> Callable[[str], int]:
        return lambda name: self.atom_slots[(atom, name)]

    def _expression(self, e: Expression, resolve: Callable[[str], int]):
        if isinstance(e, Const):
            if type(e.value) is bool:
                self.code.append((PUSH_BOOL, int(e.value)))
            else:
                self.code.append((PUSH_INT, e.value))
        elif isinstance(e, Var):
            self.code.append((LOAD, resolve(e.name)))
        elif isinstance(e, Unary):
            self._expression(e.operand, resolve)
            self.code.append((NEG if e.op == "-" else NOT, 0))
        elif isinstance(e, Binary):
            self._expression(e.left, resolve)
            self._expression(e.right, resolve)
            self.code.append((BINARY_CODES[e.op], 0))
        elif isinstance(e, StateTest):
            raise BipError(f"state test '{e.name}@{e.state}' cannot appear in a guard or action")
        else:
            raise TypeError(f"not an expression: {e!r}")

    def _condition(self, e: Expression, resolve, count: int) -> int:
        self._expression(e, resolve)
        if count:
            self.code.append((BINARY_CODES["&&"], 0))
        return count + 1

    # ---------------------------------------------------------------
    def programs(self, interaction: Interaction, taken: Tuple[CompiledTransition, ...]) -> Tuple[int, int]:
        """(guard offset, action offset) for firing `interaction` with the given transitions."""
        key = (interaction.id, tuple(t.index for t in taken))
        if key not in self._programs:
            self._programs[key] = (self._guard_program(interaction, taken), self._action_program(interaction, taken))
        return self._programs[key]

    def _guard_program(self, interaction: Interaction, taken) -> int:
        parts = dict(interaction.parts)
        nodes = self.system.nodes
        offset = len(self.code)
        for name in parts:
            for decl in nodes[name].connector.variables:
                value = default_value(decl.type)
                self.code.append((PUSH_BOOL if decl.type == BOOL else PUSH_INT, int(value)))
                self.code.append((STORE, self.node_slots[(name, decl.name)]))
        count = 0

        def up(node: ConnectorNode, count: int) -> int:
            present = parts[node.name]
            for i in sorted(present):
                if node.ends[i].child is not None:
                    count = up(node.ends[i].child, count)
            resolve = self._node_resolver(node)
            for assign, (target, _, refs) in zip(node.connector.up, node.up):
                if refs <= present:
                    self._expression(assign.expr, resolve)
                    self.code.append((STORE, resolve(target)))
            if node.guard_refs <= present and not is_true(node.connector.guard):
                count = self._condition(node.connector.guard, resolve, count)
            return count

        count = up(nodes[interaction.connector], count)
        for (a, _), t in zip(interaction.participants, taken):
            if not is_true(t.transition.guard):
                count = self._condition(t.transition.guard, self._atom_resolver(a), count)
        if not count:
            self.code.append((PUSH_BOOL, 1))
        self.code.append((HALT, 0))
        return offset

    def _action_program(self, interaction: Interaction, taken) -> int:
        parts = dict(interaction.parts)
        offset = len(self.code)

        def down(node: ConnectorNode):
            present = parts[node.name]
            resolve = self._node_resolver(node)
            for assign, (target, _, refs) in zip(node.connector.down, node.down):
                if refs <= present:
                    self._expression(assign.expr, resolve)
                    self.code.append((STORE, resolve(target)))
            for i in sorted(present):
                if node.ends[i].child is not None:
                    down(node.ends[i].child)

        down(self.system.nodes[interaction.connector])
        for (a, _), t in zip(interaction.participants, taken):
            resolve = self._atom_resolver(a)
            for assign in t.transition.action:
                self._expression(assign.expr, resolve)
                self.code.append((STORE, resolve(assign.name)))
        self.code.append((HALT, 0))
        return offset


# -------------------------------------------------------------------
# FLATTENING
# -------------------------------------------------------------------
def flatten(system: System, limits: Limits = Limits(), progress: bool = False) -> FlatAutomaton:
    """
    Compile the reachable configurations of `system` into a FlatAutomaton.

    Raises:
        ResourceLimitError: the state space does not fit `limits`
    """
    space = explore(system, limits, progress)
    if space.truncated:
        raise ResourceLimitError(
            f"cannot flatten '{system.root.name}': state space exceeds {limits.max_states} states "
            f"or {limits.max_seconds}s")
    compiler = _Compiler(system)
    states, edges = [], []
    for g in tqdm(space.states, desc="Flattening", unit="state", disable=not progress):
        states.append(FlatState(g.states, tuple(v for values in g.values for v in values)))
        out = []
        for bound in maximal_enabled(system, g):
            iid = bound.interaction.id
            try:
                nxt, taken = fire_with_transitions(system, g, bound)
            except FireError as err:
                out.append(FlatEdge(iid, 0, 0, NO_TARGET, str(err)))
                continue
            guard, action = compiler.programs(bound.interaction, taken)
            out.append(FlatEdge(iid, guard, action, space.index[nxt]))
        edges.append(tuple(out))
    automaton = FlatAutomaton(
        rng_scheme=RNG_SCHEME,
        root=system.root.name,
        variables=tuple(compiler.variables),
        atoms=tuple(compiler.atoms),
        interactions=tuple((i.connector, i.ports) for i in system.interactions),
        states=tuple(states),
        code=tuple(compiler.code),
        edges=tuple(edges),
    )
    logger.info(f"Flattened '{system.root.name}': {automaton.table_sizes()}")
    return automaton


# -------------------------------------------------------------------
# IMAGE
# -------------------------------------------------------------------
class _Writer:
    def __init__(self):
        self.parts: List[bytes] = []
        self.strings: Dict[str, int] = {}

    def intern(self, s: str) -> int:
        return self.strings.setdefault(s, len(self.strings))

    def pack(self, fmt: str, *values):
        self.parts.append(struct.pack("<" + fmt, *values))


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.offset = offset
        self.strings: List[str] = []

    def unpack(self, fmt: str) -> tuple:
        fmt = "<" + fmt
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += struct.calcsize(fmt)
        return values

    def u32(self) -> int:
        return self.unpack("I")[0]

    def string(self) -> str:
        return self.strings[self.u32()]


def emit(automaton: FlatAutomaton) -> bytes:
    """Serialize `automaton`; identical automata give identical bytes."""
    w = _Writer()
    tables = _Writer()
    tables.pack("II", w.intern(automaton.rng_scheme), w.intern(automaton.root))
    tables.pack("I", len(automaton.variables))
    for v in automaton.variables:
        tables.pack("IBB", w.intern(v.name), 1 if v.type == BOOL else 0, int(v.scratch))
    tables.pack("I", len(automaton.atoms))
    for a in automaton.atoms:
        tables.pack("III", w.intern(a.path), a.first_slot, a.slot_count)
    tables.pack("I", len(automaton.interactions))
    for connector, ports in automaton.interactions:
        tables.pack("II", w.intern(connector), len(ports))
        for p in ports:
            tables.pack("I", w.intern(p))
    tables.pack("I", len(automaton.states))
    for s in automaton.states:
        for name in s.control:
            tables.pack("I", w.intern(name))
        for value in s.values:
            tables.pack("q", int(value))
    tables.pack("I", len(automaton.code))
    for op, arg in automaton.code:
        tables.pack("Bq", op, arg)
    for out in automaton.edges:
        tables.pack("I", len(out))
        for e in out:
            tables.pack("IIII", e.interaction, e.guard, e.action, e.target)
    failures = [(i, k, e.error) for i, out in enumerate(automaton.edges) for k, e in enumerate(out)
                if e.error is not None]
    tables.pack("I", len(failures))
    for i, k, message in failures:
        tables.pack("III", i, k, w.intern(message))
    for s in w.strings:
        encoded = s.encode("utf-8")
        w.pack("I", len(encoded))
        w.parts.append(encoded)
    body = struct.pack("<I", len(w.strings)) + b"".join(w.parts) + b"".join(tables.parts)
    digest = int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")
    image = HEADER.pack(MAGIC, VERSION, digest) + body
    logger.info(f"Image of '{automaton.root}': {len(image)} bytes")
    return image


def load(image: bytes) -> FlatAutomaton:
    """
    Deserialize an image produced by `emit`.

    Raises:
        ImageCorrupt: not an image, or tables inconsistent
        VersionMismatch: produced by another format version
        ChecksumMismatch: content hash differs (truncated or altered image)
    """
    if image[:len(MAGIC)] != MAGIC:
        raise ImageCorrupt("not an automaton image (bad magic)")
    if len(image) < HEADER.size:
        raise ChecksumMismatch("image truncated inside its header")
    _, version, digest = HEADER.unpack_from(image, 0)
    if version != VERSION:
        raise VersionMismatch(f"image format version {version}, expected {VERSION}")
    body = image[HEADER.size:]
    if int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little") != digest:
        raise ChecksumMismatch("image content hash does not match")
    try:
        return _read_tables(_Reader(image, HEADER.size))
    except (struct.error, IndexError, UnicodeDecodeError) as err:
        raise ImageCorrupt(f"malformed image tables: {err}") from err


def _read_tables(r: _Reader) -> FlatAutomaton:
    for _ in range(r.u32()):
        size = r.u32()
        raw = r.data[r.offset:r.offset + size]
        if len(raw) != size:
            raise ImageCorrupt("string table truncated")
        r.strings.append(raw.decode("utf-8"))
        r.offset += size
    scheme, root = r.string(), r.string()
    variables = []
    for _ in range(r.u32()):
        name, kind, scratch = r.unpack("IBB")
        variables.append(FlatVariable(r.strings[name], BOOL if kind else INT, bool(scratch)))
    atoms = []
    for _ in range(r.u32()):
        path, first, count = r.unpack("III")
        atoms.append(FlatAtom(r.strings[path], first, count))
    interactions = []
    for _ in range(r.u32()):
        connector, n = r.unpack("II")
        interactions.append((r.strings[connector], tuple(r.string() for _ in range(n))))
    kinds = [v.type for v in variables if not v.scratch]
    states = []
    for _ in range(r.u32()):
        control = tuple(r.string() for _ in atoms)
        values = tuple(bool(r.unpack("q")[0]) if k == BOOL else r.unpack("q")[0] for k in kinds)
        states.append(FlatState(control, values))
    code = tuple(r.unpack("Bq") for _ in range(r.u32()))
    edges = []
    for _ in states:
        edges.append([FlatEdge(*r.unpack("IIII")) for _ in range(r.u32())])
    for _ in range(r.u32()):
        i, k, message = r.unpack("III")
        edges[i][k] = FlatEdge(edges[i][k].interaction, edges[i][k].guard, edges[i][k].action,
                               edges[i][k].target, r.strings[message])
    if r.offset != len(r.data):
        raise ImageCorrupt(f"{len(r.data) - r.offset} trailing bytes after the tables")
    if scheme != RNG_SCHEME:
        raise ImageCorrupt(f"image uses generator scheme '{scheme}', this interpreter provides '{RNG_SCHEME}'")
    return FlatAutomaton(scheme, root, tuple(variables), tuple(atoms), tuple(interactions), tuple(states),
                         code, tuple(tuple(e) for e in edges))


# -------------------------------------------------------------------
# INTERPRETER
# -------------------------------------------------------------------
def execute(code: Tuple[Tuple[int, int], ...], offset: int, memory: List[Value]) -> Optional[Value]:
    """Run the program at `offset` over `memory`; returns the top of the stack at HALT."""
    stack: List[Value] = []
    pc = offset
    while True:
        op, arg = code[pc]
        pc += 1
        if op == HALT:
            return stack[-1] if stack else None
        if op == PUSH_INT:
            stack.append(arg)
        elif op == PUSH_BOOL:
            stack.append(bool(arg))
        elif op == LOAD:
            stack.append(memory[arg])
        elif op == STORE:
            memory[arg] = stack.pop()
        elif op == NEG:
            stack.append(_apply_unary("-", stack.pop()))
        elif op == NOT:
            stack.append(_apply_unary("!", stack.pop()))
        elif op in BINARY_NAMES:
            right = stack.pop()
            stack.append(_apply_binary(BINARY_NAMES[op], stack.pop(), right))
        else:
            raise ImageCorrupt(f"unknown opcode {op} at {pc - 1}")


def interpret(source: Union[bytes, FlatAutomaton], seed: int = 0, steps: Optional[int] = None,
              trace_sink: Optional[TextIO] = None, progress: bool = False) -> RunResult:
    """
    Run a flattened automaton with the engine's generator and trace format.

    Args:
        source: image bytes or a loaded FlatAutomaton
        seed: generator seed
        steps: stop after this many steps; None runs until deadlock
        trace_sink: text stream receiving one JSON line per step
        progress: show a tqdm progress bar
    """
    automaton = load(source) if isinstance(source, (bytes, bytearray)) else source
    rng = make_rng(seed)
    names = [v.name for v in automaton.variables]
    visible = sum(1 for v in automaton.variables if not v.scratch)
    state = 0
    memory: List[Value] = list(automaton.states[0].values) + [
        default_value(v.type) for v in automaton.variables[visible:]]
    firings: Counter = Counter()
    count = 0
    result: Optional[RunResult] = None
    bar = tqdm(total=steps, desc="Interpreting", unit="step", disable=not progress)
    try:
        while steps is None or count < steps:
            out = automaton.edges[state]
            if not out:
                logger.warning(f"Deadlock at step {count}")
                result = RunResult(RunStatus.DEADLOCK, count, automaton.configuration(state), firings=firings)
                break
            edge = out[int(rng.integers(0, len(out)))]
            if edge.error is not None:
                logger.error(f"Run stopped at step {count}: {edge.error}")
                result = RunResult(RunStatus.ERROR, count, automaton.configuration(state), edge.error, firings)
                break
            before = memory[:visible]
            try:
                enabled = execute(automaton.code, edge.guard, memory)
                execute(automaton.code, edge.action, memory)
            except EvaluationError as err:
                raise ImageCorrupt(f"program of edge {state} -> {edge.target} failed: {err}") from err
            if enabled is not True:
                raise ImageCorrupt(f"guard of edge {state} -> {edge.target} does not hold")
            if tuple(memory[:visible]) != automaton.states[edge.target].values:
                raise ImageCorrupt(f"edge {state} -> {edge.target} does not reach the recorded values")
            connector, ports = automaton.interactions[edge.interaction]
            writes = {names[i]: memory[i] for i in range(visible)
                      if before[i] != memory[i] or type(before[i]) is not type(memory[i])}
            event = TraceEvent(count, connector, ports, dict(sorted(writes.items())))
            if trace_sink is not None:
                trace_sink.write(event.to_json() + "\n")
            firings[connector] += 1
            state = edge.target
            count += 1
            bar.update(1)
    finally:
        bar.close()
        if trace_sink is not None:
            trace_sink.flush()
    if result is None:
        result = RunResult(RunStatus.COMPLETED, count, automaton.configuration(state), firings=firings)
    logger.info(f"Image run finished: {result.summary()} (seed {seed})")
    return result
