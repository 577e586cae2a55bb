from __future__ import annotations

import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from acas_sim.batch import SampleBatch
from acas_sim.signal_gen import DynamicsParams, SignalParams, generate_samples, random_code

settings.register_profile(
    "repo", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")

# A small, fast signal set-up: 1.023 Mchip/s at 4 samples per chip.
CHIP_RATE = 1.023e6
FS = 4 * CHIP_RATE


def make_code(n_chips: int, seed: int = 1, chip_rate: float = CHIP_RATE, epoch: float = 0.0):
    return random_code(n_chips, chip_rate, seed, epoch=epoch)


def make_batch(code, *, s0: float = 0.0, v: float = 0.0, carrier_offset: float = 0.0,
               t_start: float = -2e-5, duration: float | None = None, fs: float = FS,
               amplitude: float = 1.0) -> SampleBatch:
    """Noiseless batch containing ``code`` delayed by range ``s0`` (+ ``v t``)."""
    duration = code.period + 4e-5 if duration is None else duration
    sig = SignalParams(carrier_offset, code, code.period, amplitude)
    n = int(math.ceil(duration * fs))
    return SampleBatch(t_start, fs, generate_samples(sig, DynamicsParams(s0=s0, v=v), t_start, fs, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
