"""
Interaction layer.

`build_system` instantiates the root compound of a model into a flat set of
atom instances and a forest of connector nodes. Each root connector defines a
static list of interactions (sets of atom ports). At run time an interaction
is enabled when every participating port has an enabled transition and every
connector guard on the way up holds; firing runs the up flow, the down flow
and one transition per participating atom.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import networkx as nx

from expressions import (
    BipError, Compiled, CompiledAction, EvaluationError, TypeMismatch, Value,
    compile_action, compile_expression, default_value, execute_action, type_of, variables,
)
from model import Atom, Compound, Connector, Model, Transition

logger = logging.getLogger(__name__)


class FireError(BipError):
    """Evaluation failed while firing; the configuration was left unchanged."""

    def __init__(self, interaction: "Interaction", cause: EvaluationError):
        super().__init__(f"firing {interaction.label} failed: {cause}")
        self.interaction = interaction
        self.cause = cause


# -------------------------------------------------------------------
# CONFIGURATIONS
# -------------------------------------------------------------------
@dataclass(frozen=True)
class GlobalConfiguration:
    """Control state and variable values of every atom instance, in system order."""
    states: Tuple[str, ...]
    values: Tuple[Tuple[Value, ...], ...]


# -------------------------------------------------------------------
# SYSTEM STRUCTURE
# -------------------------------------------------------------------
@dataclass(frozen=True)
class CompiledTransition:
    index: int
    transition: Transition
    guard: Compiled
    action: CompiledAction


@dataclass
class AtomInstance:
    index: int
    path: str
    atom: Atom
    var_names: Tuple[str, ...]
    defaults: Tuple[Value, ...]
    transitions: Dict[Tuple[str, str], List[CompiledTransition]] = field(default_factory=dict)

    def env(self, values: Tuple[Value, ...]) -> Dict[str, Value]:
        return dict(zip(self.var_names, values))


@dataclass
class EndNode:
    label: str
    prefix: str
    trigger: bool
    exported: Tuple[str, ...]
    atom: Optional[int] = None
    port: Optional[str] = None
    child: Optional["ConnectorNode"] = None


@dataclass
class ConnectorNode:
    name: str
    connector: Connector
    ends: List[EndNode]
    defaults: Dict[str, Value]
    guard: Compiled
    guard_refs: FrozenSet[int]
    up: List[Tuple[str, Compiled, FrozenSet[int]]]
    down: List[Tuple[str, Compiled, FrozenSet[int]]]

    def end_for(self, prefix: str) -> EndNode:
        return next(e for e in self.ends if e.prefix == prefix)


@dataclass(frozen=True)
class Interaction:
    id: int
    connector: str
    participants: Tuple[Tuple[int, str], ...]
    ports: Tuple[str, ...]
    parts: Tuple[Tuple[str, FrozenSet[int]], ...]
    root_ends: FrozenSet[str]

    @property
    def label(self) -> str:
        return f"{self.connector}{{{', '.join(self.ports)}}}"


@dataclass(frozen=True)
class InteractionSet:
    connector: str
    members: FrozenSet[FrozenSet[str]]


@dataclass(frozen=True)
class BoundInteraction:
    """An enabled interaction with the connector valuations computed by its up flow."""
    interaction: Interaction
    values: Mapping[str, Mapping[str, Value]] = field(compare=False)


# -------------------------------------------------------------------
# SYSTEM BUILDING
# -------------------------------------------------------------------
def _refs(exprs, prefixes: Dict[str, int], target=None) -> FrozenSet[int]:
    found = set()
    paths = [v.path for e in exprs for v in variables(e)]
    if target is not None:
        paths.append(target)
    for path in paths:
        if len(path) > 1 and path[0] in prefixes:
            found.add(prefixes[path[0]])
    return frozenset(found)


class System:
    """Executable view of a model's root compound.

    Args:
        model: validated model
        root: compound to instantiate; the model's root by default
    """

    def __init__(self, model: Model, root: Optional[Compound] = None):
        self.model = model
        self.root = model.root if root is None else root
        paths = sorted(model.atom_paths(self.root))
        self.atoms: List[AtomInstance] = [self._atom_instance(i, p, a) for i, (p, a) in enumerate(paths)]
        self.atom_index = {a.path: a.index for a in self.atoms}
        self.nodes: Dict[str, ConnectorNode] = {}
        self.roots: List[ConnectorNode] = []
        consumed = set()
        self._rules: List[Tuple[str, object]] = []
        self._instantiate(self.root, "", consumed)
        self.roots = [n for n in self.nodes.values() if n.name not in consumed]
        self.interactions: List[Interaction] = []
        for node in self.roots:
            for participants, parts in _units(node):
                self._add_interaction(node, participants, parts)
        self.dominators = self._priority_closure()
        logger.debug(f"System '{self.root.name}': {len(self.atoms)} atoms, {len(self.nodes)} connectors, "
                     f"{len(self.interactions)} interactions")

    # ---------------------------------------------------------------
    def _atom_instance(self, index: int, path: str, atom: Atom) -> AtomInstance:
        names = tuple(v.name for v in atom.variables)
        inst = AtomInstance(index, path, atom, names, tuple(default_value(v.type) for v in atom.variables))
        for i, t in enumerate(atom.transitions):
            compiled = CompiledTransition(i, t, compile_expression(t.guard), compile_action(t.action))
            inst.transitions.setdefault((t.source, t.port), []).append(compiled)
        return inst

    def _instantiate(self, compound: Compound, prefix: str, consumed: set) -> Dict[str, ConnectorNode]:
        """Create connector nodes for `compound`; returns its exported port -> node."""
        exported_below: Dict[str, Dict[str, ConnectorNode]] = {}
        for inst in compound.instances:
            kind = self.model.component_type(inst.type_name)
            if isinstance(kind, Compound):
                exported_below[inst.name] = self._instantiate(kind, f"{prefix}{inst.name}.", consumed)
        local: Dict[str, ConnectorNode] = {}
        pending = list(compound.connectors)
        # inner connectors first, so that every end can point at its node
        while pending:
            ready = [c for c in pending
                     if all(len(e.path) != 1 or e.path[0] in local for e in c.ends)]
            if not ready:
                raise BipError(f"connector hierarchy of '{compound.name}' is cyclic")
            for c in ready:
                local[c.name] = self._node(compound, c, prefix, local, exported_below, consumed)
                pending.remove(c)
        for rule in compound.priorities:
            self._rules.append((prefix, rule))
        return {c.export.name: local[c.name] for c in compound.connectors
                if c.export is not None and c.export.name in compound.exports}

    def _node(self, compound, c: Connector, prefix, local, exported_below, consumed) -> ConnectorNode:
        ends = []
        for end in c.ends:
            if len(end.path) == 1:
                child = local[end.path[0]]
                consumed.add(child.name)
                ends.append(EndNode(end.text, end.prefix, end.trigger, child.connector.export.exported, child=child))
                continue
            inst_name, port = end.path
            inst = compound.instance(inst_name)
            kind = self.model.component_type(inst.type_name)
            if isinstance(kind, Atom):
                atom_index = self.atom_index[f"{prefix}{inst_name}"]
                ends.append(EndNode(end.text, end.prefix, end.trigger, kind.port(port).exported,
                                    atom=atom_index, port=port))
            else:
                child = exported_below[inst_name][port]
                consumed.add(child.name)
                ends.append(EndNode(end.text, end.prefix, end.trigger, child.connector.export.exported, child=child))
        prefixes = {e.prefix: i for i, e in enumerate(ends)}
        node = ConnectorNode(
            name=f"{prefix}{c.name}",
            connector=c,
            ends=ends,
            defaults={v.name: default_value(v.type) for v in c.variables},
            guard=compile_expression(c.guard),
            guard_refs=_refs([c.guard], prefixes),
            up=[(a.name, compile_expression(a.expr), _refs([a.expr], prefixes, a.target)) for a in c.up],
            down=[(a.name, compile_expression(a.expr), _refs([a.expr], prefixes, a.target)) for a in c.down],
        )
        self.nodes[node.name] = node
        return node

    def _add_interaction(self, node: ConnectorNode, participants, parts):
        participants = tuple(sorted(participants))
        ports = tuple(sorted(f"{self.atoms[a].path}.{p}" for a, p in participants))
        parts = tuple(parts)
        root_ends = frozenset(node.ends[i].label for i in dict(parts)[node.name])
        self.interactions.append(
            Interaction(len(self.interactions), node.name, participants, ports, parts, root_ends))

    def _matches(self, prefix: str, pattern, interaction: Interaction) -> bool:
        if interaction.connector != f"{prefix}{pattern.connector}":
            return False
        return pattern.mask is None or interaction.root_ends == frozenset(".".join(m) for m in pattern.mask)

    def _priority_closure(self) -> Dict[int, FrozenSet[int]]:
        graph = nx.DiGraph()
        graph.add_nodes_from(i.id for i in self.interactions)
        for prefix, rule in self._rules:
            lows = [i.id for i in self.interactions if self._matches(prefix, rule.low, i)]
            highs = [i.id for i in self.interactions if self._matches(prefix, rule.high, i)]
            graph.add_edges_from((lo, hi) for lo in lows for hi in highs if lo != hi)
        return {i: frozenset(nx.descendants(graph, i) - {i}) for i in graph.nodes}

    # ---------------------------------------------------------------
    def describe(self, g: GlobalConfiguration) -> Dict[str, Value]:
        """Flat view of a configuration: `path` -> state, `path.var` -> value."""
        out: Dict[str, Value] = {}
        for inst in self.atoms:
            out[inst.path] = g.states[inst.index]
            for name, value in zip(inst.var_names, g.values[inst.index]):
                out[f"{inst.path}.{name}"] = value
        return out

    def property_env(self, g: GlobalConfiguration) -> Dict[str, Value]:
        env: Dict[str, Value] = {}
        for inst in self.atoms:
            env["@" + inst.path] = g.states[inst.index]
            for name, value in zip(inst.var_names, g.values[inst.index]):
                env[f"{inst.path}.{name}"] = value
        return env

    # ---------------------------------------------------------------
    def enabled_transitions(self, g: GlobalConfiguration, atom: int, port: str,
                            cache: Optional[dict] = None) -> List[CompiledTransition]:
        key = (atom, port)
        if cache is not None and key in cache:
            return cache[key]
        inst = self.atoms[atom]
        candidates = inst.transitions.get((g.states[atom], port), [])
        enabled = []
        if candidates:
            env = inst.env(g.values[atom])
            for t in candidates:
                try:
                    if t.guard(env) is True:
                        enabled.append(t)
                except EvaluationError as err:
                    logger.warning(f"Transition {inst.path}.{port} from {g.states[atom]} disabled: {err}")
        if cache is not None:
            cache[key] = enabled
        return enabled

    def up_flow(self, interaction: Interaction, g: GlobalConfiguration) -> Optional[Dict[str, Dict[str, Value]]]:
        """Connector valuations after the up flow, or None when a guard fails."""
        parts = dict(interaction.parts)
        envs: Dict[str, Dict[str, Value]] = {}

        def up(node: ConnectorNode) -> bool:
            present = parts[node.name]
            env = dict(node.defaults)
            for i in present:
                end = node.ends[i]
                if end.child is not None:
                    if not up(end.child):
                        return False
                    child_env = envs[end.child.name]
                    for v in end.exported:
                        env[f"{end.prefix}.{v}"] = child_env[v]
                else:
                    inst = self.atoms[end.atom]
                    values = g.values[end.atom]
                    for v in end.exported:
                        env[f"{end.prefix}.{v}"] = values[inst.var_names.index(v)]
            for target, fn, refs in node.up:
                if refs <= present:
                    _store(env, target, fn(env))
            envs[node.name] = env
            return not node.guard_refs <= present or node.guard(env) is True

        root = self.nodes[interaction.connector]
        return envs if up(root) else None


def _store(env: Dict[str, Value], name: str, value: Value):
    if name in env and type(env[name]) is not type(value):
        raise TypeMismatch(f"cannot assign {type_of(value)} to {type_of(env[name])} variable '{name}'")
    env[name] = value


def _units(node: ConnectorNode):
    """
    Interactions a connector node can offer, as (participants, parts) pairs.

    participants: set of (atom index, port); parts: list of (node name, end
    indices present). Rendezvous requires every end; broadcast takes every
    combination that contains at least one trigger end.
    """
    options = []
    for end in node.ends:
        if end.child is not None:
            options.append(list(_units(end.child)))
        else:
            options.append([(frozenset({(end.atom, end.port)}), [])])
    broadcast = any(e.trigger for e in node.ends)
    if broadcast:
        options = [[None] + opts for opts in options]
    for choice in itertools.product(*options):
        present = [i for i, c in enumerate(choice) if c is not None]
        if not present:
            continue
        if broadcast and not any(node.ends[i].trigger for i in present):
            continue
        participants = frozenset().union(*(choice[i][0] for i in present))
        atoms = [a for a, _ in participants]
        if len(set(atoms)) != len(atoms) or len(participants) != sum(len(choice[i][0]) for i in present):
            continue
        parts = [(node.name, frozenset(present))]
        for i in present:
            parts.extend(choice[i][1])
        yield participants, parts


def build_system(model: Model, root: Optional[Compound] = None) -> System:
    return System(model, root)


def enumerate_interactions(system: System, connector: str) -> InteractionSet:
    """Interaction set of a connector, each member given as sorted `path.port` names."""
    node = system.nodes[connector]
    members = frozenset(
        frozenset(f"{system.atoms[a].path}.{p}" for a, p in participants)
        for participants, _ in _units(node)
    )
    return InteractionSet(connector, members)


def enabled_interactions(system: System, g: GlobalConfiguration) -> List[BoundInteraction]:
    """Every interaction enabled at `g`, in static order. `g` is never modified."""
    cache: dict = {}
    enabled = []
    for interaction in system.interactions:
        if not all(system.enabled_transitions(g, a, p, cache) for a, p in interaction.participants):
            continue
        try:
            values = system.up_flow(interaction, g)
        except EvaluationError as err:
            logger.warning(f"Interaction {interaction.label} disabled: {err}")
            continue
        if values is not None:
            enabled.append(BoundInteraction(interaction, values))
    return enabled


def fire(system: System, g: GlobalConfiguration, chosen: BoundInteraction) -> GlobalConfiguration:
    """
    Execute an enabled interaction: up flow, down flow, then one transition
    per participating atom.

    Raises:
        FireError: an expression failed; `g` is untouched and no new
            configuration is produced.
    """
    return fire_with_transitions(system, g, chosen)[0]


def fire_with_transitions(system: System, g: GlobalConfiguration,
                          chosen: BoundInteraction) -> Tuple[GlobalConfiguration, Tuple[CompiledTransition, ...]]:
    """`fire`, also returning the transition taken by each participant (in participant order)."""
    interaction = chosen.interaction
    parts = dict(interaction.parts)
    envs = {name: dict(env) for name, env in chosen.values.items()}
    atom_envs = {a: system.atoms[a].env(g.values[a]) for a, _ in interaction.participants}

    def down(node: ConnectorNode):
        present = parts[node.name]
        env = envs[node.name]
        for target, fn, refs in node.down:
            if not refs <= present:
                continue
            value = fn(env)
            _store(env, target, value)
            if "." in target:
                prefix, var = target.split(".", 1)
                end = node.end_for(prefix)
                if end.child is not None:
                    _store(envs[end.child.name], var, value)
                else:
                    _store(atom_envs[end.atom], var, value)
        for i in present:
            if node.ends[i].child is not None:
                down(node.ends[i].child)

    try:
        down(system.nodes[interaction.connector])
        states = list(g.states)
        values = list(g.values)
        taken = []
        for a, port in interaction.participants:
            inst = system.atoms[a]
            candidates = system.enabled_transitions(g, a, port)
            env = atom_envs[a]
            chosen_t = next((t for t in candidates if t.guard(env) is True), candidates[0])
            execute_action(chosen_t.action, env)
            taken.append(chosen_t)
            states[a] = chosen_t.transition.target
            values[a] = tuple(env[name] for name in inst.var_names)
    except EvaluationError as err:
        raise FireError(interaction, err) from err
    return GlobalConfiguration(tuple(states), tuple(values)), tuple(taken)
