"""
Slow checks at full scale. Run with `pytest -m bench`.
"""

import functools
import io
import time

import pytest

from engine import EngineConfig, RunStatus, run
from flatten import emit, flatten, interpret
from interaction import build_system
from textlang import load_model

from conftest import BUNDLED, model_path

pytestmark = pytest.mark.bench

STEPS = 10_000


@functools.lru_cache(maxsize=None)
def compiled(name):
    system = build_system(load_model(model_path(name)))
    return system, emit(flatten(system))


def test_step_latency(system_of):
    system = system_of("cubeth_reduced")
    steps = 100_000
    start = time.perf_counter()
    result = run(system, EngineConfig(seed=1, max_steps=steps))
    elapsed = time.perf_counter() - start
    assert result.status is RunStatus.COMPLETED
    assert elapsed / steps <= 1e-3


@pytest.mark.parametrize("name", BUNDLED)
@pytest.mark.parametrize("seed", range(1, 21))
def test_cosimulation_at_scale(name, seed):
    system, image = compiled(name)
    expected, actual = io.StringIO(), io.StringIO()
    engine_result = run(system, EngineConfig(seed=seed, max_steps=STEPS, trace_sink=expected))
    image_result = interpret(image, seed=seed, steps=STEPS, trace_sink=actual)
    if name == "broken_mutex":
        assert engine_result.status is RunStatus.DEADLOCK
    else:
        assert engine_result.status is RunStatus.COMPLETED
        assert engine_result.steps == STEPS
    assert image_result.status is engine_result.status
    assert actual.getvalue() == expected.getvalue()
