import numpy as np
import pytest

from neuromodlab import ctgraph, features


@pytest.fixture(scope="session")
def env():
    return ctgraph.CtGraphConfig()


@pytest.fixture(scope="session")
def quick_features(env):
    """Briefly trained extractor; enough for plumbing tests, not for evolution."""
    return features.build_features(env, epochs=300, rng=0)


class TableFeatures:
    """Features looked up by observation id: a deterministic stand-in for the encoder."""

    def __init__(self, env, table):
        self.env = env
        self._table = np.ascontiguousarray(table, dtype=float)
        self._table.setflags(write=False)
        self._images = ctgraph.observation_table(env)

    def __call__(self, pixels):
        hits = np.flatnonzero((self._images == np.asarray(pixels)).all(axis=1))
        return self._table[hits[0]]

    def table(self, config):
        return self._table


@pytest.fixture(scope="session")
def one_hot_features(env):
    """Observation id k lights input k only (16 inputs, 6 used)."""
    return TableFeatures(env, np.eye(6, 16))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
