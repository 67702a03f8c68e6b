from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from uagrasp.config import RunConfig  # noqa: E402
from uagrasp.hand import default_hand  # noqa: E402
from uagrasp.pipeline import Example, scripted_grasp, train  # noqa: E402
from uagrasp.synth import ShapeSpec, generate_cloud  # noqa: E402

_REPORT: list[str] = []

TRAIN_SHAPES = {
    "sphere": ShapeSpec("sphere", (0.03,)),
    "cylinder": ShapeSpec("cylinder", (0.025, 0.1)),
    "box": ShapeSpec("box", (0.05, 0.05, 0.05)),
}
TILT = 0.5
# (approach-line centre, tilt) per object; each layout is used at yaw 0 and pi
TRAIN_LAYOUT = {
    "sphere": [((0.0, 0.0, 0.0), (a, b)) for a in (-TILT, 0.0, TILT) for b in (-TILT, 0.0, TILT)],
    "cylinder": [((x, 0.0, 0.0), (a, 0.0)) for x in (-0.03, 0.0, 0.03) for a in (-TILT, 0.0, TILT)],
    "box": [((0.0, 0.0, 0.0), (0.0, 0.0))],
}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion; returns ``passed``."""

    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _REPORT.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def hand():
    return default_hand()


@pytest.fixture(scope="session")
def train_clouds():
    return {name: generate_cloud(spec) for name, spec in TRAIN_SHAPES.items()}


@pytest.fixture(scope="session")
def train_examples(hand, train_clouds):
    examples = []
    for name, cloud in train_clouds.items():
        for center, tilt in TRAIN_LAYOUT[name]:
            for yaw in (0.0, np.pi):
                examples.append(Example(cloud, scripted_grasp(hand, cloud, center, yaw, tilt), "pinch", name))
    return examples


@pytest.fixture(scope="session")
def transfer_config():
    return RunConfig(population=500)


@pytest.fixture(scope="session")
def transfer_archive(hand, train_examples, transfer_config):
    return train(hand, train_examples, transfer_config)
