"""
In-memory model of a BIP program: atom types, compound types, connectors,
priorities, safety properties and architecture declarations.

Every node is a frozen dataclass. Source spans are carried along but excluded
from equality, so two models compare equal when they describe the same
structure regardless of where they were read from.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import networkx as nx

from expressions import (
    BOOL, INT, TRUE, Action, BipError, Expression, SourceSpan,
    type_errors,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BipError", "Diagnostic", "Port", "VarDecl", "Transition", "InitSpec", "Atom",
    "Instance", "PortRef", "Connector", "PriorityPattern", "PriorityRule", "Compound",
    "SafetyProperty", "Parameter", "ArchitectureDef", "Model", "validate_model",
]

IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _span():
    return field(default=None, compare=False, repr=False)


# -------------------------------------------------------------------
# DIAGNOSTICS
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    span: Optional[SourceSpan] = None
    severity: str = "error"

    def __str__(self):
        where = f"{self.span}: " if self.span else ""
        return f"{where}{self.severity}: {self.message} [{self.code}]"

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "severity": self.severity,
            "message": self.message,
            "file": self.span.file if self.span else None,
            "line": self.span.line if self.span else None,
            "column": self.span.column if self.span else None,
        }


# -------------------------------------------------------------------
# ATOMS
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Port:
    name: str
    exported: Tuple[str, ...] = ()
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: str = INT
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Transition:
    port: str
    source: str
    target: str
    guard: Expression = TRUE
    action: Action = ()
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class InitSpec:
    target: str
    guard: Expression = TRUE
    action: Action = ()
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Atom:
    name: str
    ports: Tuple[Port, ...] = ()
    variables: Tuple[VarDecl, ...] = ()
    states: Tuple[str, ...] = ()
    init: Optional[InitSpec] = None
    transitions: Tuple[Transition, ...] = ()
    span: Optional[SourceSpan] = _span()

    def port(self, name: str) -> Optional[Port]:
        return next((p for p in self.ports if p.name == name), None)

    @property
    def var_types(self) -> Dict[str, str]:
        return {v.name: v.type for v in self.variables}


# -------------------------------------------------------------------
# COMPOUNDS
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Instance:
    name: str
    type_name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class PortRef:
    """A connector end: `instance.port`, or the name of an inner connector."""
    path: Tuple[str, ...]
    trigger: bool = False
    span: Optional[SourceSpan] = _span()

    @property
    def text(self) -> str:
        return ".".join(self.path)

    @property
    def prefix(self) -> str:
        """Name under which the end's exported variables are read (`prefix.var`)."""
        return self.path[0]


@dataclass(frozen=True)
class Connector:
    name: str
    ends: Tuple[PortRef, ...]
    export: Optional[Port] = None
    variables: Tuple[VarDecl, ...] = ()
    guard: Expression = TRUE
    up: Action = ()
    down: Action = ()
    span: Optional[SourceSpan] = _span()

    @property
    def var_types(self) -> Dict[str, str]:
        return {v.name: v.type for v in self.variables}

    @property
    def is_broadcast(self) -> bool:
        return any(e.trigger for e in self.ends)


@dataclass(frozen=True)
class PriorityPattern:
    connector: str
    mask: Optional[Tuple[Tuple[str, ...], ...]] = None

    @property
    def text(self) -> str:
        if self.mask is None:
            return self.connector
        return f"{self.connector}[{', '.join('.'.join(m) for m in self.mask)}]"


@dataclass(frozen=True)
class PriorityRule:
    low: PriorityPattern
    high: PriorityPattern
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Compound:
    name: str
    instances: Tuple[Instance, ...] = ()
    connectors: Tuple[Connector, ...] = ()
    priorities: Tuple[PriorityRule, ...] = ()
    exports: Tuple[str, ...] = ()
    span: Optional[SourceSpan] = _span()

    def instance(self, name: str) -> Optional[Instance]:
        return next((i for i in self.instances if i.name == name), None)

    def connector(self, name: str) -> Optional[Connector]:
        return next((c for c in self.connectors if c.name == name), None)

    def exporting(self, port: str) -> Optional[Connector]:
        """Connector whose exported port is `port`."""
        return next((c for c in self.connectors if c.export is not None and c.export.name == port), None)


# -------------------------------------------------------------------
# PROPERTIES AND ARCHITECTURES
# -------------------------------------------------------------------
@dataclass(frozen=True)
class SafetyProperty:
    name: str
    predicate: Expression
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Parameter:
    name: str
    interface: Tuple[str, ...]
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class ArchitectureDef:
    name: str
    parameters: Tuple[Parameter, ...] = ()
    coordinators: Tuple[Instance, ...] = ()
    connectors: Tuple[Connector, ...] = ()
    priorities: Tuple[PriorityRule, ...] = ()
    property: str = ""
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Model:
    """A parsed `.bip` document."""
    atoms: Tuple[Atom, ...] = ()
    compounds: Tuple[Compound, ...] = ()
    properties: Tuple[SafetyProperty, ...] = ()
    architectures: Tuple[ArchitectureDef, ...] = ()

    def atom(self, name: str) -> Optional[Atom]:
        return next((a for a in self.atoms if a.name == name), None)

    def compound(self, name: str) -> Optional[Compound]:
        return next((c for c in self.compounds if c.name == name), None)

    def component_type(self, name: str) -> Optional[Union[Atom, Compound]]:
        return self.atom(name) or self.compound(name)

    def find_property(self, name: str) -> Optional[SafetyProperty]:
        return next((p for p in self.properties if p.name == name), None)

    def architecture(self, name: str) -> Optional[ArchitectureDef]:
        return next((a for a in self.architectures if a.name == name), None)

    @property
    def root(self) -> Compound:
        """Last compound that no other compound instantiates; empty when there is none."""
        used = {i.type_name for c in self.compounds for i in c.instances}
        candidates = [c for c in self.compounds if c.name not in used]
        if candidates:
            return candidates[-1]
        return self.compounds[-1] if self.compounds else Compound("")

    def with_root(self, root: Compound) -> "Model":
        compounds = tuple(c for c in self.compounds if c.name != root.name) + (root,)
        return Model(self.atoms, compounds, self.properties, self.architectures)

    def atom_paths(self, compound: Optional[Compound] = None, prefix: str = "",
                   _open: Tuple[str, ...] = ()) -> Iterator[Tuple[str, Atom]]:
        """Yield (instance path, atom type) for every atom under `compound` (root by default)."""
        compound = self.root if compound is None else compound
        _open = _open + (compound.name,)
        for inst in compound.instances:
            path = f"{prefix}{inst.name}"
            kind = self.component_type(inst.type_name)
            if isinstance(kind, Atom):
                yield path, kind
            elif isinstance(kind, Compound) and kind.name not in _open:
                yield from self.atom_paths(kind, path + ".", _open)


# -------------------------------------------------------------------
# VALIDATION
# -------------------------------------------------------------------
class _Validator:
    def __init__(self, model: Model):
        self.model = model
        self.diagnostics: List[Diagnostic] = []
        self.recursive: set = set()
        self.consumed_rules: set = set()

    def error(self, code: str, message: str, span: Optional[SourceSpan]):
        self.diagnostics.append(Diagnostic(code, message, span))

    def identifier(self, name: str, what: str, span):
        if not IDENTIFIER.match(name or ""):
            self.error("bad-identifier", f"invalid {what} name '{name}'", span)

    def unique(self, items, code: str, what: str, where: str):
        seen = set()
        for item in items:
            if item.name in seen:
                self.error(code, f"duplicate {what} '{item.name}' in {where}", item.span)
            seen.add(item.name)

    def expression(self, e: Expression, scope, span, want: Optional[str] = BOOL, states=None) -> Optional[str]:
        kind, errors = type_errors(e, scope, states)
        for message, where in errors:
            code = "unknown-variable" if message.startswith("unknown variable") else "type-error"
            self.error(code, message, where or span)
        if want is not None and kind is not None and kind != want:
            self.error("type-error", f"expected {want} expression, got {kind}", getattr(e, "span", None) or span)
        return kind

    def action(self, action: Action, scope, span, targets=None):
        targets = scope if targets is None else targets
        for a in action:
            if a.name not in targets:
                self.error("unknown-variable", f"cannot assign undeclared variable '{a.name}'", a.span or span)
                self.expression(a.expr, scope, span, want=None)
                continue
            self.expression(a.expr, scope, a.span or span, want=targets[a.name])

    # ---------------------------------------------------------------
    def run(self) -> List[Diagnostic]:
        m = self.model
        self.unique(list(m.atoms) + list(m.compounds), "duplicate-type", "component type", "model")
        self.unique(m.properties, "duplicate-property", "property", "model")
        self.unique(m.architectures, "duplicate-architecture", "architecture", "model")
        self.check_recursion()
        for atom in m.atoms:
            self.check_atom(atom)
        for compound in m.compounds:
            self.check_compound(compound)
        bound = {a.property for a in m.architectures}
        root_scope, root_states = self.root_scope()
        for prop in m.properties:
            self.identifier(prop.name, "property", prop.span)
            if prop.name not in bound:
                self.expression(prop.predicate, root_scope, prop.span, states=root_states)
        for arch in m.architectures:
            self.check_architecture(arch)
        return self.diagnostics

    def root_scope(self):
        scope: Dict[str, str] = {}
        states: Dict[str, Tuple[str, ...]] = {}
        if self.model.root.name in self.recursive:
            return scope, states
        for path, atom in self.model.atom_paths():
            states[path] = atom.states
            for v in atom.variables:
                scope[f"{path}.{v.name}"] = v.type
        return scope, states

    def check_recursion(self):
        graph = nx.DiGraph()
        for c in self.model.compounds:
            graph.add_node(c.name)
            for inst in c.instances:
                if self.model.compound(inst.type_name) is not None:
                    graph.add_edge(c.name, inst.type_name)
        for cycle in nx.simple_cycles(graph):
            self.recursive.update(cycle)
            first = self.model.compound(sorted(cycle)[0])
            self.error("recursive-compound",
                       f"compound '{first.name}' instantiates itself through {' → '.join(cycle + cycle[:1])}",
                       first.span)

    # ---------------------------------------------------------------
    def check_atom(self, atom: Atom):
        where = f"atom {atom.name}"
        self.identifier(atom.name, "atom", atom.span)
        self.unique(atom.ports, "duplicate-port", "port", where)
        self.unique(atom.variables, "duplicate-variable", "variable", where)
        seen = set()
        for s in atom.states:
            if s in seen:
                self.error("duplicate-state", f"duplicate state '{s}' in {where}", atom.span)
            seen.add(s)
        if not atom.states:
            self.error("no-states", f"{where} declares no control state", atom.span)
        scope = atom.var_types
        for p in atom.ports:
            for v in p.exported:
                if v not in scope:
                    self.error("unknown-variable", f"port '{p.name}' exports undeclared variable '{v}'", p.span)
        if atom.init is None:
            self.error("missing-init", f"{where} has no init specification", atom.span)
        else:
            if atom.init.target not in atom.states:
                self.error("unknown-state", f"init target '{atom.init.target}' is not a state of {where}", atom.init.span)
            self.expression(atom.init.guard, scope, atom.init.span)
            self.action(atom.init.action, scope, atom.init.span)
        ports = {p.name for p in atom.ports}
        for t in atom.transitions:
            if t.port not in ports:
                self.error("unknown-port", f"transition on undeclared port '{t.port}' in {where}", t.span)
            for s in (t.source, t.target):
                if s not in atom.states:
                    self.error("unknown-state", f"unknown state '{s}' in {where}", t.span)
            self.expression(t.guard, scope, t.span)
            self.action(t.action, scope, t.span)

    # ---------------------------------------------------------------
    def end_exports(self, compound: Compound, end: PortRef) -> Optional[Dict[str, str]]:
        """Exported variable types of a connector end, or None when it does not resolve."""
        if len(end.path) == 1:
            inner = compound.connector(end.path[0])
            if inner is None or inner.export is None:
                return None
            types = inner.var_types
            return {v: types[v] for v in inner.export.exported if v in types}
        if len(end.path) != 2:
            return None
        inst = compound.instance(end.path[0])
        if inst is None:
            return None
        kind = self.model.component_type(inst.type_name)
        if isinstance(kind, Atom):
            port = kind.port(end.path[1])
            if port is None:
                return None
            types = kind.var_types
            return {v: types[v] for v in port.exported if v in types}
        if isinstance(kind, Compound) and end.path[1] in kind.exports:
            inner = kind.exporting(end.path[1])
            if inner is None:
                return None
            types = inner.var_types
            return {v: types[v] for v in inner.export.exported if v in types}
        return None

    def check_compound(self, compound: Compound):
        where = f"compound {compound.name}"
        self.identifier(compound.name, "compound", compound.span)
        self.unique(compound.instances, "duplicate-instance", "component", where)
        self.unique(compound.connectors, "duplicate-connector", "connector", where)
        for inst in compound.instances:
            self.identifier(inst.name, "component", inst.span)
            if self.model.component_type(inst.type_name) is None:
                self.error("unknown-type", f"unknown component type '{inst.type_name}'", inst.span)

        parents: Dict[str, str] = {}
        hierarchy = nx.DiGraph()
        for c in compound.connectors:
            self.check_connector(compound, c, hierarchy, parents)
        for cycle in nx.simple_cycles(hierarchy):
            c = compound.connector(cycle[0])
            self.error("connector-cycle", f"connector hierarchy cycle {'→'.join(cycle + cycle[:1])}", c.span)

        seen = set()
        for name in compound.exports:
            if name in seen:
                self.error("duplicate-export", f"port '{name}' exported twice by {where}", compound.span)
            seen.add(name)
            inner = compound.exporting(name)
            if inner is None:
                self.error("unknown-port", f"{where} exports '{name}' but no connector exports that port", compound.span)
            elif inner.name in parents:
                self.error("connector-shared",
                           f"connector '{inner.name}' is both exported and used by connector '{parents[inner.name]}'",
                           inner.span)
        self.check_priorities(compound.priorities, {c.name: c for c in compound.connectors}, set(parents), where)
        self.check_consumed_exports(compound)

    def check_connector(self, compound: Compound, c: Connector, hierarchy, parents):
        self.identifier(c.name, "connector", c.span)
        if not c.ends:
            self.error("empty-connector", f"connector '{c.name}' has no ends", c.span)
        scope = dict(c.var_types)
        self.unique(c.variables, "duplicate-variable", "variable", f"connector {c.name}")
        instances: Dict[str, str] = {}
        for end in c.ends:
            exports = self.end_exports(compound, end)
            if exports is None:
                self.error("unresolved-end", f"connector '{c.name}' end '{end.text}' does not resolve to a port", end.span)
                continue
            if len(end.path) == 1:
                inner = end.path[0]
                hierarchy.add_edge(c.name, inner)
                if inner in parents:
                    self.error("connector-shared",
                               f"connector '{inner}' participates in both '{parents[inner]}' and '{c.name}'", end.span)
                parents.setdefault(inner, c.name)
                touched = self.touched_instances(compound, compound.connector(inner), set())
            else:
                touched = {end.path[0]}
            for inst in touched:
                if inst in instances:
                    self.error("one-port-per-atom",
                               f"connector '{c.name}' references more than one port of component '{inst}' "
                               f"(at most one port per atomic component)", end.span)
                instances[inst] = end.text
            for v, t in exports.items():
                scope[f"{end.prefix}.{v}"] = t
        if c.export is not None:
            for v in c.export.exported:
                if v not in c.var_types:
                    self.error("unknown-variable",
                               f"connector '{c.name}' exports undeclared variable '{v}'", c.export.span or c.span)
        self.expression(c.guard, scope, c.span)
        self.action(c.up, scope, c.span, targets=c.var_types)
        self.action(c.down, scope, c.span)

    def touched_instances(self, compound: Compound, c: Optional[Connector], visiting: set) -> set:
        if c is None or c.name in visiting:
            return set()
        visiting.add(c.name)
        found = set()
        for end in c.ends:
            if len(end.path) == 1:
                found |= self.touched_instances(compound, compound.connector(end.path[0]), visiting)
            elif end.path:
                found.add(end.path[0])
        return found

    def check_priorities(self, rules, connectors: Dict[str, Connector], inner: set, where: str):
        graph = nx.DiGraph()
        for rule in rules:
            for pattern in (rule.low, rule.high):
                c = connectors.get(pattern.connector)
                if c is None:
                    self.error("unknown-connector",
                               f"priority refers to unknown connector '{pattern.connector}' in {where}", rule.span)
                    continue
                if pattern.connector in inner:
                    self.error("priority-inner-connector",
                               f"priority refers to '{pattern.connector}', which is an inner connector", rule.span)
                if pattern.mask is not None:
                    ends = {e.path for e in c.ends}
                    for m in pattern.mask:
                        if tuple(m) not in ends:
                            self.error("unresolved-end",
                                       f"priority mask '{'.'.join(m)}' is not an end of connector '{c.name}'", rule.span)
            graph.add_edge(rule.low.text, rule.high.text, span=rule.span)
        for cycle in nx.simple_cycles(graph):
            start = cycle.index(min(cycle))
            cycle = cycle[start:] + cycle[:start]
            span = graph.edges[cycle[0], cycle[1 % len(cycle)]]["span"]
            self.error("priority-cycle", f"priority cycle {'→'.join(cycle + cycle[:1])}", span)

    def check_consumed_exports(self, compound: Compound):
        """Priorities of a sub-compound cannot name a connector the enclosing compound consumes."""
        for c in compound.connectors:
            for end in c.ends:
                if len(end.path) != 2 or compound.instance(end.path[0]) is None:
                    continue
                kind = self.model.component_type(compound.instance(end.path[0]).type_name)
                if not isinstance(kind, Compound) or end.path[1] not in kind.exports:
                    continue
                inner = kind.exporting(end.path[1])
                if inner is None:
                    continue
                for rule in kind.priorities:
                    if inner.name not in (rule.low.connector, rule.high.connector):
                        continue
                    if (kind.name, rule.low.text, rule.high.text) in self.consumed_rules:
                        continue
                    self.consumed_rules.add((kind.name, rule.low.text, rule.high.text))
                    self.error("priority-inner-connector",
                               f"priority in {kind.name} refers to '{inner.name}', whose port is consumed by "
                               f"connector '{c.name}' of {compound.name}", rule.span)

    # ---------------------------------------------------------------
    def check_architecture(self, arch: ArchitectureDef):
        where = f"architecture {arch.name}"
        self.identifier(arch.name, "architecture", arch.span)
        self.unique(list(arch.parameters) + list(arch.coordinators), "duplicate-instance", "component", where)
        self.unique(arch.connectors, "duplicate-connector", "connector", where)
        interfaces = {}
        for p in arch.parameters:
            if len(set(p.interface)) != len(p.interface):
                self.error("duplicate-port", f"parameter '{p.name}' lists a port twice", p.span)
            interfaces[p.name] = set(p.interface)
        coordinators = {}
        for inst in arch.coordinators:
            atom = self.model.atom(inst.type_name)
            if atom is None:
                self.error("unknown-type", f"coordinator type '{inst.type_name}' is not an atom", inst.span)
            else:
                coordinators[inst.name] = atom
        for c in arch.connectors:
            scope = dict(c.var_types)
            used = set()
            for end in c.ends:
                if len(end.path) != 2:
                    self.error("unresolved-end", f"glue end '{end.text}' must name a component port", end.span)
                    continue
                inst, port = end.path
                if inst in used:
                    self.error("one-port-per-atom",
                               f"connector '{c.name}' references more than one port of component '{inst}' "
                               f"(at most one port per atomic component)", end.span)
                used.add(inst)
                if inst in interfaces:
                    if port not in interfaces[inst]:
                        self.error("unresolved-end", f"port '{port}' is not in the interface of parameter '{inst}'", end.span)
                elif inst in coordinators:
                    p = coordinators[inst].port(port)
                    if p is None:
                        self.error("unresolved-end", f"coordinator '{inst}' has no port '{port}'", end.span)
                    else:
                        types = coordinators[inst].var_types
                        scope.update({f"{inst}.{v}": types[v] for v in p.exported if v in types})
                else:
                    self.error("unresolved-end", f"glue end '{end.text}' names no parameter or coordinator", end.span)
            self.expression(c.guard, scope, c.span)
            self.action(c.up, scope, c.span, targets=c.var_types)
            self.action(c.down, scope, c.span)
        self.check_priorities(arch.priorities, {c.name: c for c in arch.connectors}, set(), where)
        prop = self.model.find_property(arch.property)
        if prop is None:
            self.error("unknown-property", f"{where} refers to unknown property '{arch.property}'", arch.span)
            return
        scope = {f"{n}.{v.name}": v.type for n, a in coordinators.items() for v in a.variables}
        states = {n: a.states for n, a in coordinators.items()}
        states.update({p.name: () for p in arch.parameters})
        self.expression(prop.predicate, scope, prop.span, states=states)


def validate_model(model: Model) -> List[Diagnostic]:
    """
    Check a parsed model against the well-formedness rules.

    Returns a fresh list on every call; an empty list means the model is
    well formed. The model itself is never modified.
    """
    diagnostics = _Validator(model).run()
    logger.debug(f"validate_model: {len(diagnostics)} diagnostic(s)")
    return diagnostics


def errors_only(diagnostics: List[Diagnostic]) -> List[Diagnostic]:
    return [d for d in diagnostics if d.severity == "error"]
