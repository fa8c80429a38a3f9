"""
Property-enforcing architectures.

An architecture is a set of parameters (named port interfaces), coordinator
atoms and glue (connectors and priorities) together with the safety property
it enforces. Composition keeps one glue group per base architecture, so
composing is a union and the result does not depend on grouping or order.
Applying an architecture binds operands to parameters and produces a compound;
connectors of different glue groups that share an operand port are merged
into one rendezvous so the port only moves when every architecture agrees.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx

from expressions import Assignment, BipError, conjunction, rename_paths
from interaction import build_system
from model import (
    ArchitectureDef, Atom, Compound, Connector, Instance, Model, Parameter, PortRef,
    PriorityPattern, PriorityRule, SafetyProperty, errors_only, validate_model,
)
from verify import Limits, Status, Verdict, check_deadlock, check_safety, explore

logger = logging.getLogger(__name__)


# -------------------------------------------------------------------
# ERRORS
# -------------------------------------------------------------------
class ArchitectureError(BipError):
    pass


class ArityMismatch(ArchitectureError):
    pass


class InterfaceMismatch(ArchitectureError):
    def __init__(self, parameter: str, missing: Sequence[str]):
        super().__init__(f"operand for parameter '{parameter}' lacks port(s) {', '.join(missing)}")
        self.parameter = parameter
        self.missing = tuple(missing)


class ParameterInterfaceConflict(ArchitectureError):
    pass


class CompositionConflict(ArchitectureError):
    pass


# -------------------------------------------------------------------
# TYPES
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Glue:
    """Coordinators, connectors and priorities contributed by one base architecture."""
    origin: str
    qualified: bool
    coordinators: Tuple[Instance, ...]
    connectors: Tuple[Connector, ...]
    priorities: Tuple[PriorityRule, ...]
    property: SafetyProperty

    def qualify(self) -> "Glue":
        """Suffix coordinator and connector names with the origin architecture."""
        if self.qualified:
            return self
        suffix = f"_{self.origin}"
        insts = {i.name: i.name + suffix for i in self.coordinators}
        conns = {c.name: c.name + suffix for c in self.connectors}

        def end(e: PortRef) -> PortRef:
            return replace(e, path=(insts.get(e.path[0], e.path[0]),) + e.path[1:])

        def action(assigns):
            return tuple(Assignment((insts.get(a.target[0], a.target[0]),) + a.target[1:] if len(a.target) > 1
                                    else a.target, rename_paths(a.expr, insts), span=a.span) for a in assigns)

        def pattern(p: PriorityPattern) -> PriorityPattern:
            mask = None if p.mask is None else tuple((insts.get(m[0], m[0]),) + tuple(m[1:]) for m in p.mask)
            return PriorityPattern(conns.get(p.connector, p.connector), mask)

        connectors = tuple(replace(c, name=conns[c.name], ends=tuple(end(e) for e in c.ends),
                                   guard=rename_paths(c.guard, insts), up=action(c.up), down=action(c.down))
                           for c in self.connectors)
        return Glue(
            origin=self.origin,
            qualified=True,
            coordinators=tuple(Instance(insts[i.name], i.type_name) for i in self.coordinators),
            connectors=connectors,
            priorities=tuple(PriorityRule(pattern(r.low), pattern(r.high)) for r in self.priorities),
            property=SafetyProperty(self.property.name, rename_paths(self.property.predicate, insts)),
        )

    def sorted(self) -> "Glue":
        return replace(self,
                       coordinators=tuple(sorted(self.coordinators, key=lambda i: i.name)),
                       connectors=tuple(sorted(self.connectors, key=lambda c: c.name)),
                       priorities=tuple(sorted(self.priorities, key=lambda r: (r.low.text, r.high.text))))


@dataclass(frozen=True)
class Architecture:
    name: str
    parameters: Tuple[Parameter, ...]
    glues: Tuple[Glue, ...]
    coordinator_types: Tuple[Atom, ...]

    @property
    def characteristic_property(self) -> SafetyProperty:
        props = [g.property for g in self.glues]
        if len(props) == 1:
            return props[0]
        return SafetyProperty("__".join(p.name for p in props), conjunction([p.predicate for p in props]))

    def canonical(self) -> "Architecture":
        glues = sorted((g.qualify().sorted() for g in self.glues), key=lambda g: g.origin)
        return Architecture(
            name="__".join(g.origin for g in glues),
            parameters=tuple(sorted((Parameter(p.name, tuple(sorted(p.interface))) for p in self.parameters),
                                    key=lambda p: p.name)),
            glues=tuple(glues),
            coordinator_types=tuple(sorted(self.coordinator_types, key=lambda a: a.name)),
        )

    @classmethod
    def from_definition(cls, definition: ArchitectureDef, model: Model) -> "Architecture":
        prop = model.find_property(definition.property)
        if prop is None:
            raise ArchitectureError(f"architecture '{definition.name}' refers to unknown property '{definition.property}'")
        types = {}
        for inst in definition.coordinators:
            atom = model.atom(inst.type_name)
            if atom is None:
                raise ArchitectureError(f"coordinator type '{inst.type_name}' is not an atom")
            types[atom.name] = atom
        glue = Glue(definition.name, False, definition.coordinators, definition.connectors,
                    definition.priorities, prop)
        return cls(definition.name, definition.parameters, (glue,), tuple(types.values()))


def load_architecture(model: Model, name: str) -> Architecture:
    definition = model.architecture(name)
    if definition is None:
        raise ArchitectureError(f"no architecture named '{name}'")
    return Architecture.from_definition(definition, model)


# -------------------------------------------------------------------
# COMPOSITION
# -------------------------------------------------------------------
def compose(a1: Architecture, a2: Architecture) -> Architecture:
    """
    a1 ⊕ a2: parameters united by name, glue groups united by origin,
    property is the conjunction. The result is in canonical form.
    """
    params: Dict[str, Parameter] = {}
    for p in a1.parameters + a2.parameters:
        known = params.get(p.name)
        if known is not None and set(known.interface) != set(p.interface):
            raise ParameterInterfaceConflict(
                f"parameter '{p.name}' has interfaces {{{', '.join(known.interface)}}} and {{{', '.join(p.interface)}}}")
        params.setdefault(p.name, p)
    glues: Dict[str, Glue] = {}
    for g in a1.glues + a2.glues:
        g = g.qualify().sorted()
        if g.origin in glues and glues[g.origin] != g:
            raise CompositionConflict(f"two different architectures are named '{g.origin}'")
        glues[g.origin] = g
    types: Dict[str, Atom] = {}
    for t in a1.coordinator_types + a2.coordinator_types:
        if t.name in types and types[t.name] != t:
            raise CompositionConflict(f"coordinator type '{t.name}' has two different definitions")
        types[t.name] = t
    composed = Architecture("", tuple(params.values()), tuple(glues.values()), tuple(types.values())).canonical()
    logger.debug(f"compose: {a1.name} ⊕ {a2.name} = {composed.name}")
    return composed


# -------------------------------------------------------------------
# APPLICATION
# -------------------------------------------------------------------
@dataclass(frozen=True)
class ApplicationResult:
    model: Model
    compound: Compound
    binding: Dict[str, str]
    property: SafetyProperty


def _operand_ports(operand: Union[Atom, Compound]) -> set:
    if isinstance(operand, Atom):
        return {p.name for p in operand.ports}
    return set(operand.exports)


def _merge_glues(glues: Sequence[Glue], params: set) -> Tuple[List[Connector], List[PriorityRule]]:
    """Connectors of all glue groups, with operand-sharing connectors fused into rendezvous."""
    owner: Dict[str, str] = {}
    connectors: Dict[str, Connector] = {}
    priorities: List[PriorityRule] = []
    for g in glues:
        for c in g.connectors:
            owner[c.name] = g.origin
            connectors[c.name] = c
        priorities.extend(g.priorities)

    def operand_ends(c: Connector):
        return {e.path for e in c.ends if e.path[0] in params}

    graph = nx.Graph()
    graph.add_nodes_from(connectors)
    by_port: Dict[tuple, List[str]] = {}
    for name, c in connectors.items():
        for port in operand_ends(c):
            by_port.setdefault(port, []).append(name)
    for names in by_port.values():
        graph.add_edges_from((a, b) for a, b in itertools.combinations(names, 2) if owner[a] != owner[b])

    controlled: Dict[str, set] = {}
    for name, c in connectors.items():
        controlled.setdefault(owner[name], set()).update(operand_ends(c))

    result: List[Connector] = []
    renamed: Dict[str, List[str]] = {}
    for component in sorted(nx.connected_components(graph), key=lambda comp: min(comp)):
        names = sorted(component)
        origins = sorted({owner[n] for n in names})
        if len(origins) == 1:
            for n in names:
                result.append(connectors[n])
                renamed[n] = [n]
            continue
        for n in names:
            c = connectors[n]
            if c.is_broadcast or c.export is not None:
                raise CompositionConflict(f"connector '{n}' shares operand ports and cannot be fused "
                                          f"(broadcast and exported glue connectors are not supported)")
            renamed[n] = []
        per_origin = [[n for n in names if owner[n] == o] for o in origins]
        for combo in itertools.product(*per_origin):
            ports = set().union(*(operand_ends(connectors[n]) for n in combo))
            if any(ports & controlled[owner[n]] != operand_ends(connectors[n]) for n in combo):
                continue
            fused = _fuse([connectors[n] for n in combo])
            result.append(fused)
            for n in combo:
                renamed[n].append(fused.name)

    rules = []
    for r in priorities:
        for low in renamed.get(r.low.connector, [r.low.connector]):
            for high in renamed.get(r.high.connector, [r.high.connector]):
                rules.append(PriorityRule(replace(r.low, connector=low), replace(r.high, connector=high)))
    return result, rules


def _fuse(parts: List[Connector]) -> Connector:
    ends, seen, variables, names = [], set(), [], set()
    for c in parts:
        for e in c.ends:
            if e.path not in seen:
                seen.add(e.path)
                ends.append(PortRef(e.path))
        for v in c.variables:
            if v.name in names:
                raise CompositionConflict(f"fused connectors declare variable '{v.name}' twice")
            names.add(v.name)
            variables.append(v)
    return Connector(
        name="__".join(c.name for c in parts),
        ends=tuple(ends),
        variables=tuple(variables),
        guard=conjunction([c.guard for c in parts]),
        up=tuple(a for c in parts for a in c.up),
        down=tuple(a for c in parts for a in c.down),
    )


def apply(arch: Architecture, operands: Sequence[Union[Atom, Compound]],
          library: Optional[Model] = None, name: Optional[str] = None) -> ApplicationResult:
    """
    Bind operands to parameters (in order) and build the composite compound.

    Args:
        arch: architecture to apply
        operands: component types, one per parameter
        library: model providing the operand types and their subcomponent types
        name: compound name; defaults to `<architecture>_system`

    Raises:
        ArityMismatch, InterfaceMismatch
    """
    if len(operands) != len(arch.parameters):
        raise ArityMismatch(f"architecture '{arch.name}' has {len(arch.parameters)} parameter(s), "
                            f"got {len(operands)} operand(s)")
    for param, operand in zip(arch.parameters, operands):
        missing = sorted(set(param.interface) - _operand_ports(operand))
        if missing:
            raise InterfaceMismatch(param.name, missing)

    params = {p.name for p in arch.parameters}
    if len(arch.glues) == 1:
        glues = arch.glues
        connectors, priorities = list(glues[0].connectors), list(glues[0].priorities)
    else:
        glues = tuple(g.qualify() for g in arch.glues)
        connectors, priorities = _merge_glues(glues, params)
    coordinators = [i for g in glues for i in g.coordinators]

    compound = Compound(
        name=name or f"{arch.name}_system",
        instances=tuple(Instance(p.name, o.name) for p, o in zip(arch.parameters, operands))
        + tuple(coordinators),
        connectors=tuple(connectors),
        priorities=tuple(priorities),
    )

    atoms: Dict[str, Atom] = {}
    compounds: Dict[str, Compound] = {}
    if library is not None:
        atoms.update((a.name, a) for a in library.atoms)
        compounds.update((c.name, c) for c in library.compounds if c.name != compound.name)
    for t in list(operands) + list(arch.coordinator_types):
        table = atoms if isinstance(t, Atom) else compounds
        if t.name in table and table[t.name] != t:
            raise CompositionConflict(f"component type '{t.name}' has two different definitions")
        table[t.name] = t
    prop = replace(arch, glues=glues).characteristic_property
    model = Model(tuple(atoms.values()), tuple(compounds.values()) + (compound,), (prop,))
    errors = errors_only(validate_model(model))
    if errors:
        raise ArchitectureError(f"applied architecture does not validate: {errors[0]}")
    logger.info(f"Applied {arch.name} to {', '.join(o.name for o in operands)}: "
                f"{len(compound.instances)} components, {len(compound.connectors)} connectors")
    return ApplicationResult(model, compound, {p.name: o.name for p, o in zip(arch.parameters, operands)}, prop)


# -------------------------------------------------------------------
# CERTIFICATION
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Certificate:
    safety: Verdict
    deadlock: Verdict

    @property
    def status(self) -> Status:
        statuses = (self.safety.status, self.deadlock.status)
        for status in (Status.VIOLATED, Status.RESOURCE_LIMIT, Status.POTENTIAL_VIOLATION):
            if status in statuses:
                return status
        return Status.HOLDS

    def summary(self) -> str:
        return f"property {self.safety.summary()}; deadlock-freedom {self.deadlock.summary()}"


def certify(arch: Architecture, operands: Sequence[Union[Atom, Compound]], limits=None,
            library: Optional[Model] = None) -> Certificate:
    """Apply, then check the characteristic property and deadlock-freedom on the result."""
    result = apply(arch, operands, library)
    system = build_system(result.model)
    space = explore(system, limits or Limits())
    certificate = Certificate(check_safety(space, result.property), check_deadlock(space))
    logger.info(f"Certified {arch.name}: {certificate.summary()}")
    return certificate
