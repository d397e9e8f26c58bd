import json
import math

import numpy as np
import pytest

from stgcn.data import ROLES


def make_trace_lines(n_ticks, dt=1.0, score_fn=None, pos_fn=None, fov=0):
    """JSON lines for a 3-agent trace with one record per agent per tick.

    ``score_fn(tick) -> team score``, ``pos_fn(agent, tick) -> (x, y)``.
    """
    score_fn = score_fn or (lambda i: 0.0)
    pos_fn = pos_fn or (lambda a, i: (float(a), 0.0))
    lines = []
    for i in range(n_ticks):
        for a, role in enumerate(ROLES):
            x, y = pos_fn(a, i)
            rec = {
                "t": i * dt,
                "agent_id": a,
                "role": role,
                "x": x,
                "y": y,
                "heading": 0.0,
                "fov_victims": fov,
                "team_score": score_fn(i),
            }
            lines.append(json.dumps(rec))
    return lines


@pytest.fixture
def trace_lines():
    return make_trace_lines


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_positions(rng, n=3, scale=5.0):
    return rng.normal(scale=scale, size=(n, 2))


def rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
