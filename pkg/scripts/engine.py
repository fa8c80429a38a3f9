"""
BIP engine: initialization, priority filtering, seeded choice and runs.

Each step asks the atoms which ports they can take, keeps the enabled
interactions that no other enabled interaction dominates, draws one of them
with a PCG64 generator and fires it. Trace events are newline-delimited JSON.
"""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, TextIO, Union

import numpy as np
from tqdm import tqdm

from expressions import BipError, Value, compile_action, compile_expression, execute_action
from interaction import (
    BoundInteraction, FireError, GlobalConfiguration, Interaction, System,
    enabled_interactions, fire,
)

logger = logging.getLogger(__name__)

RNG_SCHEME = "numpy-pcg64"


class InitGuardFalse(BipError):
    def __init__(self, atom: str):
        super().__init__(f"init guard of '{atom}' is false on default values")
        self.atom = atom


# -------------------------------------------------------------------
# CONFIG AND RESULTS
# -------------------------------------------------------------------
@dataclass(frozen=True)
class EngineConfig:
    """
    Args:
        seed: unsigned 64-bit seed of the PCG64 generator
        max_steps: stop after this many steps; None runs until deadlock
        trace_sink: text stream receiving one JSON line per step
        progress: show a tqdm progress bar
    """
    seed: int = 0
    max_steps: Optional[int] = None
    trace_sink: Optional[TextIO] = None
    progress: bool = False


@dataclass(frozen=True)
class TraceEvent:
    step: int
    connector: str
    ports: tuple
    writes: Dict[str, Value] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"step": self.step, "connector": self.connector, "ports": list(self.ports), "writes": self.writes},
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class Deadlock:
    step: int


class RunStatus(str, enum.Enum):
    COMPLETED = "Completed"
    DEADLOCK = "Deadlock"
    ERROR = "Error"


@dataclass
class RunResult:
    status: RunStatus
    steps: int
    configuration: GlobalConfiguration
    error: Optional[str] = None
    firings: Counter = field(default_factory=Counter)

    def summary(self) -> str:
        if self.status is RunStatus.DEADLOCK:
            return f"Deadlock at step {self.steps}"
        if self.status is RunStatus.ERROR:
            return f"Error at step {self.steps}: {self.error}"
        return f"Completed {self.steps} steps"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# -------------------------------------------------------------------
# SEMANTICS
# -------------------------------------------------------------------
def initialize(system: System) -> GlobalConfiguration:
    """Run every atom's init: defaults, init guard, init action, initial state."""
    states, values = [], []
    for inst in system.atoms:
        init = inst.atom.init
        env = inst.env(inst.defaults)
        if compile_expression(init.guard)(env) is not True:
            raise InitGuardFalse(inst.path)
        execute_action(compile_action(init.action), env)
        states.append(init.target)
        values.append(tuple(env[n] for n in inst.var_names))
    return GlobalConfiguration(tuple(states), tuple(values))


def maximal_enabled(system: System, g: GlobalConfiguration) -> List[BoundInteraction]:
    """Enabled interactions not dominated by another enabled interaction."""
    enabled = enabled_interactions(system, g)
    ids = {b.interaction.id for b in enabled}
    return [b for b in enabled if not (system.dominators[b.interaction.id] & ids)]


def writes_of(system: System, interaction: Interaction, before: GlobalConfiguration,
              after: GlobalConfiguration) -> Dict[str, Value]:
    writes = {}
    for a, _ in interaction.participants:
        inst = system.atoms[a]
        for name, old, new in zip(inst.var_names, before.values[a], after.values[a]):
            if old != new or type(old) is not type(new):
                writes[f"{inst.path}.{name}"] = new
    return dict(sorted(writes.items()))


def step(system: System, g: GlobalConfiguration, rng: np.random.Generator,
         index: int = 0) -> Union[tuple, Deadlock]:
    """One engine cycle: returns (next configuration, TraceEvent) or Deadlock."""
    candidates = maximal_enabled(system, g)
    if not candidates:
        return Deadlock(index)
    chosen = candidates[int(rng.integers(0, len(candidates)))]
    nxt = fire(system, g, chosen)
    interaction = chosen.interaction
    event = TraceEvent(index, interaction.connector, interaction.ports, writes_of(system, interaction, g, nxt))
    return nxt, event


def run(system: System, cfg: EngineConfig) -> RunResult:
    """Iterate `step` until max_steps, deadlock or a fire error."""
    rng = make_rng(cfg.seed)
    g = initialize(system)
    firings: Counter = Counter()
    count = 0
    bar = tqdm(total=cfg.max_steps, desc="Simulating", unit="step", disable=not cfg.progress)
    result: Optional[RunResult] = None
    try:
        while cfg.max_steps is None or count < cfg.max_steps:
            try:
                outcome = step(system, g, rng, count)
            except FireError as err:
                logger.error(f"Run stopped at step {count}: {err}")
                result = RunResult(RunStatus.ERROR, count, g, str(err), firings)
                break
            if isinstance(outcome, Deadlock):
                logger.warning(f"Deadlock at step {count}")
                result = RunResult(RunStatus.DEADLOCK, count, g, firings=firings)
                break
            g, event = outcome
            logger.debug(f"step {count}: {event.connector} {list(event.ports)}")
            if cfg.trace_sink is not None:
                cfg.trace_sink.write(event.to_json() + "\n")
            firings[event.connector] += 1
            count += 1
            bar.update(1)
    finally:
        bar.close()
        if cfg.trace_sink is not None:
            cfg.trace_sink.flush()
    if result is None:
        result = RunResult(RunStatus.COMPLETED, count, g, firings=firings)
    logger.info(f"Run finished: {result.summary()} (seed {cfg.seed})")
    return result


def replay(system: System, connectors_and_ports: List[tuple]) -> GlobalConfiguration:
    """Fire a recorded sequence of (connector, ports) from the initial configuration."""
    g = initialize(system)
    for connector, ports in connectors_and_ports:
        match = [b for b in maximal_enabled(system, g)
                 if b.interaction.connector == connector and b.interaction.ports == tuple(ports)]
        if not match:
            raise BipError(f"recorded interaction {connector} {list(ports)} is not enabled")
        g = fire(system, g, match[0])
    return g
