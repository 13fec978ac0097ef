import json

import numpy as np
import pytest
from hypothesis import settings

from bayesps.data import Dataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return path


@pytest.fixture
def csv_factory(tmp_path):
    def make(header, rows, schema, name="d"):
        p = write_csv(tmp_path / f"{name}.csv", header, rows)
        s = tmp_path / f"{name}.schema.json"
        s.write_text(json.dumps(schema))
        return p, s
    return make


@pytest.fixture
def tiny():
    """X=(1,1,0,0), Y=(1,0,1,0) with one dummy confounder."""
    return Dataset.from_arrays([1, 1, 0, 0], [1, 0, 1, 0], np.zeros((4, 1)), ["c"])


def random_dataset(rng, n, p=2, kinds=None):
    while True:
        C = rng.standard_normal((n, p))
        x = (rng.random(n) < 1 / (1 + np.exp(-C.sum(1) * 0.5))).astype(float)
        if 0 < x.sum() < n:
            break
    y = (rng.random(n) < 0.4).astype(float)
    return Dataset.from_arrays(x, y, C, [f"c{j}" for j in range(p)], kinds)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
