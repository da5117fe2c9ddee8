import math

import numpy as np
import pytest

from hyperdsf.forest import build
from hyperdsf.ppp import PointCloud, SampleWindow, replicate_seed, sample
from hyperdsf.stats import ExperimentConfig, collect
from hyperdsf.traversal import Traversal

# one line per acceptance criterion, echoed in the terminal summary
CRITERIA: list[str] = []


def report(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line)
    CRITERIA.append(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def make_cloud(points, R=10.0, y_lo=0.5, y_hi=100.0, dim=1):
    pts = np.asarray(points, dtype=float)
    pts = pts[np.argsort(pts[:, -1])]
    return PointCloud(pts, 1.0, SampleWindow(R, y_lo, y_hi), 0, dim)


@pytest.fixture(scope="session")
def desk_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def desk_traversals(desk_config):
    """A few desk-scale forests shared by the traversal property tests."""
    out = []
    for r in range(3):
        cloud = sample(desk_config.window, 1.0, replicate_seed(desk_config.seed, r))
        out.append(Traversal(build(cloud)))
    return out


@pytest.fixture(scope="session")
def small_traversal():
    w = SampleWindow(15.0, math.exp(-3), math.exp(3))
    return Traversal(build(sample(w, 1.0, 7)))


@pytest.fixture(scope="session")
def desk_table(desk_config):
    """Every observation group over the full M = 400 desk-scale replicates."""
    return collect(desk_config, threads=1)
