"""
Verification back-end.

Exact mode explores the reachable configurations breadth-first under the
engine's semantics (priorities included) and answers deadlock and safety
questions with shortest counterexamples. Compositional mode works on control
states only: it computes per-atom reachable states, looks for control
combinations in which no interaction can be offered, discards those excluded
by initially marked traps of the interaction net, and confirms or refutes
the remainder by exact exploration when it fits the limits.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

import networkx as nx
import pandas as pd
from tqdm import tqdm

from engine import TraceEvent, initialize, maximal_enabled, writes_of
from expressions import Binary, BipError, compile_expression, constant_value, is_true, walk
from interaction import FireError, GlobalConfiguration, Interaction, System, fire
from model import SafetyProperty

logger = logging.getLogger(__name__)

DEFAULT_MAX_STATES = int(os.environ.get("BIP_MAX_STATES", 1_000_000))
DEFAULT_MAX_SECONDS = float(os.environ.get("BIP_MAX_SECONDS", 60))
MAX_CANDIDATES = 10_000


class ResourceLimitError(BipError):
    """A consumer needed the complete state space but exploration was truncated."""


@dataclass(frozen=True)
class Limits:
    max_states: int = DEFAULT_MAX_STATES
    max_seconds: float = DEFAULT_MAX_SECONDS


class Status(str, enum.Enum):
    HOLDS = "Holds"
    VIOLATED = "Violated"
    POTENTIAL_VIOLATION = "PotentialViolation"
    RESOURCE_LIMIT = "ResourceLimit"


# -------------------------------------------------------------------
# STATE SPACE
# -------------------------------------------------------------------
@dataclass
class StateSpace:
    system: System
    states: List[GlobalConfiguration] = field(default_factory=list)
    index: Dict[GlobalConfiguration, int] = field(default_factory=dict)
    edges: List[List[Tuple[int, int]]] = field(default_factory=list)
    parent: List[Optional[Tuple[int, int]]] = field(default_factory=list)
    expanded: int = 0
    deadlocks: List[int] = field(default_factory=list)
    errors: List[Tuple[int, int, str]] = field(default_factory=list)
    truncated: bool = False
    elapsed: float = 0.0

    @property
    def edge_count(self) -> int:
        return sum(len(e) for e in self.edges)

    def add(self, g: GlobalConfiguration, parent: Optional[Tuple[int, int]]) -> Tuple[int, bool]:
        if g in self.index:
            return self.index[g], False
        i = len(self.states)
        self.index[g] = i
        self.states.append(g)
        self.edges.append([])
        self.parent.append(parent)
        return i, True

    def path_to(self, target: int) -> List[Tuple[int, int, int]]:
        """Shortest (source, interaction id, target) steps from the initial configuration."""
        steps = []
        while self.parent[target] is not None:
            source, interaction = self.parent[target]
            steps.append((source, interaction, target))
            target = source
        return steps[::-1]

    def trace_to(self, target: int) -> List[TraceEvent]:
        events = []
        for n, (source, iid, dest) in enumerate(self.path_to(target)):
            interaction = self.system.interactions[iid]
            writes = writes_of(self.system, interaction, self.states[source], self.states[dest])
            events.append(TraceEvent(n, interaction.connector, interaction.ports, writes))
        return events

    def to_frame(self) -> pd.DataFrame:
        """One row per reachable configuration, columns `path` and `path.var`."""
        rows = []
        for i, g in enumerate(self.states):
            row = {"state": i, "out_edges": len(self.edges[i])}
            row.update(self.system.describe(g))
            rows.append(row)
        return pd.DataFrame(rows)


def explore(system: System, limits: Limits = Limits(), progress: bool = False) -> StateSpace:
    """Breadth-first exploration of the reachable configurations."""
    space = StateSpace(system)
    start = time.monotonic()
    queue = deque([space.add(initialize(system), None)[0]])
    bar = tqdm(desc="Exploring", unit="state", disable=not progress)
    try:
        while queue:
            if len(space.states) > limits.max_states or time.monotonic() - start > limits.max_seconds:
                space.truncated = True
                break
            i = queue.popleft()
            g = space.states[i]
            candidates = maximal_enabled(system, g)
            if not candidates:
                space.deadlocks.append(i)
            for bound in candidates:
                try:
                    nxt = fire(system, g, bound)
                except FireError as err:
                    space.errors.append((i, bound.interaction.id, str(err)))
                    logger.warning(f"State {i}: {err}")
                    continue
                j, new = space.add(nxt, (i, bound.interaction.id))
                space.edges[i].append((bound.interaction.id, j))
                if new:
                    queue.append(j)
            space.expanded += 1
            bar.update(1)
    finally:
        bar.close()
    space.elapsed = time.monotonic() - start
    if space.truncated:
        logger.warning(f"Exploration truncated after {space.expanded} expanded states "
                       f"(limits: {limits.max_states} states, {limits.max_seconds}s)")
    logger.info(f"Explored {len(space.states)} states, {space.edge_count} edges "
                f"in {space.elapsed:.2f}s{' (truncated)' if space.truncated else ''}")
    return space


# -------------------------------------------------------------------
# VERDICTS
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Verdict:
    status: Status
    states_explored: int = 0
    elapsed: float = 0.0
    trace: Tuple[TraceEvent, ...] = ()
    state: Optional[dict] = None
    candidates: Tuple[dict, ...] = ()
    refuted: int = 0
    message: str = ""

    @property
    def holds(self) -> bool:
        return self.status is Status.HOLDS

    def summary(self) -> str:
        if self.status is Status.VIOLATED:
            return f"Violated after {len(self.trace)} steps ({self.message})" if self.message \
                else f"Violated after {len(self.trace)} steps"
        if self.status is Status.POTENTIAL_VIOLATION:
            return f"PotentialViolation, {len(self.candidates)} candidates"
        if self.status is Status.RESOURCE_LIMIT:
            return f"ResourceLimit after {self.states_explored} states"
        if self.message:
            return f"Holds, {len(self.candidates)} candidates ({self.message})"
        return "Holds"

    def to_json(self) -> str:
        return json.dumps({
            "status": self.status.value,
            "states_explored": self.states_explored,
            "elapsed": round(self.elapsed, 6),
            "trace": [json.loads(e.to_json()) for e in self.trace],
            "state": self.state,
            "candidates": list(self.candidates),
            "refuted": self.refuted,
            "message": self.message,
        }, separators=(",", ":"))


def _violation(space: StateSpace, target: int, message: str = "") -> Verdict:
    return Verdict(Status.VIOLATED, len(space.states), space.elapsed, tuple(space.trace_to(target)),
                   space.system.describe(space.states[target]), message=message)


def check_deadlock(space: StateSpace) -> Verdict:
    """Shortest path to a configuration with no enabled interaction, if any."""
    if space.deadlocks:
        return _violation(space, min(space.deadlocks), "deadlock")
    if space.truncated:
        return Verdict(Status.RESOURCE_LIMIT, len(space.states), space.elapsed)
    return Verdict(Status.HOLDS, len(space.states), space.elapsed)


def check_safety(space: StateSpace, prop: SafetyProperty) -> Verdict:
    """Shortest path to a configuration where the property's predicate is false."""
    predicate = compile_expression(prop.predicate)
    for i, g in enumerate(space.states):
        if predicate(space.system.property_env(g)) is not True:
            return _violation(space, i, f"property {prop.name}")
    if space.truncated:
        return Verdict(Status.RESOURCE_LIMIT, len(space.states), space.elapsed)
    return Verdict(Status.HOLDS, len(space.states), space.elapsed)


# -------------------------------------------------------------------
# COMPOSITIONAL MODE
# -------------------------------------------------------------------
def local_reachable(system: System) -> List[List[str]]:
    """Per atom, control states reachable from the initial state through ports any interaction uses."""
    used = {p for i in system.interactions for p in i.participants}
    result = []
    for inst in system.atoms:
        graph = nx.DiGraph()
        start = inst.atom.init.target
        graph.add_node(start)
        for t in inst.atom.transitions:
            if (inst.index, t.port) in used and constant_value(t.guard) is not False:
                graph.add_edge(t.source, t.target)
        reach = nx.descendants(graph, start) | {start}
        result.append([s for s in inst.atom.states if s in reach])
    return result


def _offers(system: System) -> Dict[Tuple[int, str], Set[str]]:
    """(atom, port) -> control states where some transition on the port has a constant-true guard."""
    offers: Dict[Tuple[int, str], Set[str]] = {}
    for inst in system.atoms:
        for t in inst.atom.transitions:
            if is_true(t.guard):
                offers.setdefault((inst.index, t.port), set()).add(t.source)
    return offers


def _may_fail(e) -> bool:
    return any(isinstance(n, Binary) and n.op in ("/", "%") for n in walk(e))


def _definitely_enabled(system: System) -> List[Interaction]:
    """Interactions whose connector guards are constant true and whose up flow cannot fail."""
    result = []
    for interaction in system.interactions:
        connectors = [system.nodes[name].connector for name, _ in interaction.parts]
        if all(is_true(c.guard) and not any(_may_fail(a.expr) for a in c.up) for c in connectors):
            result.append(interaction)
    return result


def abstract_candidates(system: System, reach: List[List[str]], limit: int = MAX_CANDIDATES) -> Tuple[List[Tuple[str, ...]], bool]:
    """
    Control combinations of locally reachable states where no interaction is
    guaranteed to be offered. Returns (candidates, complete).
    """
    offers = _offers(system)
    checks: Dict[int, List[Interaction]] = {}
    for interaction in _definitely_enabled(system):
        last = max(a for a, _ in interaction.participants)
        checks.setdefault(last, []).append(interaction)
    candidates: List[Tuple[str, ...]] = []
    chosen: List[str] = []

    def offered(interaction) -> bool:
        return all(chosen[a] in offers.get((a, p), ()) for a, p in interaction.participants)

    def search(k: int) -> bool:
        if k == len(system.atoms):
            candidates.append(tuple(chosen))
            return len(candidates) < limit
        for s in reach[k]:
            chosen.append(s)
            blocked = not any(offered(i) for i in checks.get(k, ()))
            if blocked and not search(k + 1):
                chosen.pop()
                return False
            chosen.pop()
        return True

    complete = search(0)
    return candidates, complete


def _control_net(system: System):
    """Places are (atom, state); each interaction/transition choice is a net transition."""
    places = {(inst.index, s): n for n, (inst, s) in
              enumerate((inst, s) for inst in system.atoms for s in inst.atom.states)}
    net = set()
    for interaction in system.interactions:
        options = []
        for a, port in interaction.participants:
            moves = [(places[(a, t.source)], places[(a, t.target)])
                     for t in system.atoms[a].atom.transitions
                     if t.port == port and constant_value(t.guard) is not False]
            options.append(moves)
        stack = [((), ())]
        for moves in options:
            stack = [(pre + (m[0],), post + (m[1],)) for pre, post in stack for m in moves]
        for pre, post in stack:
            net.add((frozenset(pre), frozenset(post)))
    return places, list(net)


def maximal_trap(net, places: FrozenSet[int]) -> FrozenSet[int]:
    """Largest subset T of `places` such that every net transition consuming from T also produces into T."""
    trap = set(places)
    changed = True
    while changed:
        changed = False
        for pre, post in net:
            if pre & trap and not post & trap:
                trap -= pre
                changed = True
    return frozenset(trap)


def refuted_by_traps(system: System, places, net, candidate: Tuple[str, ...], initial: GlobalConfiguration) -> bool:
    """A candidate is unreachable if some initially marked trap has no place in it."""
    marked = {places[(a, s)] for a, s in enumerate(candidate)}
    trap = maximal_trap(net, frozenset(places.values()) - marked)
    init_places = {places[(a, s)] for a, s in enumerate(initial.states)}
    return bool(trap & init_places)


def check_deadlock_compositional(system: System, limits: Optional[Limits] = Limits(max_states=100_000, max_seconds=10),
                                 max_candidates: int = MAX_CANDIDATES) -> Verdict:
    """
    Deadlock check on the control abstraction.

    Never answers Holds when a deadlock is reachable: a candidate is dropped
    only when an initially marked trap excludes it or when a complete exact
    exploration finds no deadlock.
    """
    start = time.monotonic()
    initial = initialize(system)
    reach = local_reachable(system)
    raw, complete = abstract_candidates(system, reach, max_candidates)
    places, net = _control_net(system)
    remaining = [c for c in raw if not refuted_by_traps(system, places, net, c, initial)]
    refuted = len(raw) - len(remaining)
    logger.info(f"Compositional check: {len(raw)} abstract candidate(s), {refuted} refuted by interaction invariants"
                f"{'' if complete else ' (candidate limit reached)'}")

    def describe(c):
        return {inst.path: s for inst, s in zip(system.atoms, c)}

    if complete and not remaining:
        return Verdict(Status.HOLDS, 0, time.monotonic() - start, refuted=refuted,
                       message=f"{refuted} refuted by interaction invariants")
    if limits is not None:
        space = explore(system, limits)
        if space.deadlocks:
            verdict = _violation(space, min(space.deadlocks), "deadlock confirmed by exploration")
            return Verdict(verdict.status, verdict.states_explored, time.monotonic() - start, verdict.trace,
                           verdict.state, tuple(describe(c) for c in remaining), refuted, verdict.message)
        if not space.truncated:
            return Verdict(Status.HOLDS, len(space.states), time.monotonic() - start,
                           refuted=refuted + len(remaining),
                           message=f"{len(remaining)} refuted by exploration")
    return Verdict(Status.POTENTIAL_VIOLATION, 0, time.monotonic() - start,
                   candidates=tuple(describe(c) for c in remaining), refuted=refuted,
                   message="" if complete else "candidate limit reached")
