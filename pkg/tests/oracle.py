"""
Brute-force reachability for flat models, read straight off the parsed model.

Only expression evaluation is shared with the toolkit; interaction sets,
enabling, priorities and firing are recomputed here from the declarations.
Supports one compound of atom instances, rendezvous and broadcast connectors
with data transfer, and unmasked priority rules.
"""

import itertools
from typing import Dict, FrozenSet, List, Set, Tuple

import networkx as nx

from expressions import default_value, eval_expression, variables
from model import Model

State = FrozenSet[Tuple[str, object]]


def _ends_read(e) -> Set[str]:
    return {v.path[0] for v in variables(e) if len(v.path) > 1}


def _run(action, env: Dict[str, object]):
    for assign in action:
        env[assign.name] = eval_expression(assign.expr, env)


class FlatOracle:
    """Global states are frozensets of `path -> control state` and `path.var -> value` items."""

    def __init__(self, model: Model):
        self.compound = model.root
        self.atoms = {i.name: model.atom(i.type_name) for i in self.compound.instances}
        self.interactions: List[Tuple[str, Tuple[Tuple[str, str], ...]]] = []
        for c in self.compound.connectors:
            ends = [(e.path[0], e.path[1], e.trigger) for e in c.ends]
            if any(t for _, _, t in ends):
                for k in range(1, len(ends) + 1):
                    for subset in itertools.combinations(ends, k):
                        if any(t for _, _, t in subset):
                            self.interactions.append((c.name, tuple((i, p) for i, p, _ in subset)))
            else:
                self.interactions.append((c.name, tuple((i, p) for i, p, _ in ends)))
        self.connectors = {c.name: c for c in self.compound.connectors}
        order = nx.DiGraph()
        order.add_nodes_from(self.connectors)
        order.add_edges_from((r.low.connector, r.high.connector) for r in self.compound.priorities)
        self.higher = {name: nx.descendants(order, name) for name in self.connectors}

    def initial(self) -> State:
        items = {}
        for name, atom in self.atoms.items():
            env = {v.name: default_value(v.type) for v in atom.variables}
            _run(atom.init.action, env)
            items[name] = atom.init.target
            items.update((f"{name}.{k}", v) for k, v in env.items())
        return frozenset(items.items())

    def _atom_env(self, state: Dict[str, object], name: str) -> Dict[str, object]:
        return {v.name: state[f"{name}.{v.name}"] for v in self.atoms[name].variables}

    def _candidates(self, state, name, port):
        env = self._atom_env(state, name)
        return [t for t in self.atoms[name].transitions
                if t.source == state[name] and t.port == port and eval_expression(t.guard, env) is True]

    def _enabled(self, state) -> List[tuple]:
        enabled = []
        for connector, ends in self.interactions:
            if not all(self._candidates(state, i, p) for i, p in ends):
                continue
            c = self.connectors[connector]
            env = {v.name: default_value(v.type) for v in c.variables}
            present = {i for i, _ in ends}
            for i, p in ends:
                port = next(x for x in self.atoms[i].ports if x.name == p)
                env.update((f"{i}.{v}", state[f"{i}.{v}"]) for v in port.exported)
            for assign in c.up:
                if _ends_read(assign.expr) <= present:
                    env[assign.name] = eval_expression(assign.expr, env)
            if eval_expression(c.guard, env) is True:
                enabled.append((connector, ends, env))
        return enabled

    def successors(self, state: State) -> List[State]:
        current = dict(state)
        enabled = self._enabled(current)
        names = {connector for connector, _, _ in enabled}
        result = []
        for connector, ends, env in enabled:
            if self.higher[connector] & names:
                continue
            nxt = dict(current)
            envs = {i: self._atom_env(current, i) for i, _ in ends}
            present = {i for i, _ in ends}
            for assign in self.connectors[connector].down:
                if not _ends_read(assign.expr) <= present:
                    continue
                value = eval_expression(assign.expr, env)
                inst, var = assign.target
                if inst in envs:
                    envs[inst][var] = value
            for i, p in ends:
                before = self._candidates(current, i, p)
                chosen = next((t for t in before if eval_expression(t.guard, envs[i]) is True), before[0])
                _run(chosen.action, envs[i])
                nxt[i] = chosen.target
                nxt.update((f"{i}.{k}", v) for k, v in envs[i].items())
            result.append(frozenset(nxt.items()))
        return result

    def reachable(self) -> Tuple[Set[State], Set[State]]:
        """(reachable states, deadlocked states)"""
        seen = {self.initial()}
        stack = list(seen)
        deadlocks = set()
        while stack:
            state = stack.pop()
            succ = self.successors(state)
            if not succ:
                deadlocks.add(state)
            for s in succ:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return seen, deadlocks
