import json
from pathlib import Path

import numpy as np
import pytest

from phasekit.basis import Demonstration
from phasekit.harness import train
from phasekit.sim import WorldConfig, generate_demos

ORACLES = Path(__file__).parent / "oracles"


def load_oracle(name: str):
    if name == "dtw_cases":
        return json.loads((ORACLES / "dtw_cases.json").read_text())["cases"]
    return json.loads((ORACLES / "oracles.json").read_text())[name]


def make_demo(values, duration=1.0, roles=None, labels=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    D, T = values.shape
    labels = labels or tuple(f"c{i}" for i in range(D))
    roles = roles or ("observed",) * D
    return Demonstration(np.linspace(0.0, duration, T), values, labels, roles)


@pytest.fixture(scope="session")
def demos_1mm():
    return generate_demos(30, 0, WorldConfig().with_tolerance("1mm"))


@pytest.fixture(scope="session")
def learned(demos_1mm):
    return train(demos_1mm)


@pytest.fixture(scope="session")
def learned_masked(demos_1mm):
    return train(demos_1mm, mask_ft=True)


def pytest_configure(config):
    config._criteria = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criteria", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
