"""Shared network builders for the test suite.

Everything here is deterministic: fixed parameters, fixed seeds. The builders
return fresh PowerNetwork objects so tests can't contaminate each other
through the cached line-weight arrays.
"""

import numpy as np
import pytest

from gridfreq import network


def two_bus(b=1.0):
    """Two generators joined by one line."""
    return network.network_from_dict({
        "buses": [
            {"id": 1, "kind": "gen", "m": 3.0, "alpha": 1.0, "v": 1.0},
            {"id": 2, "kind": "gen", "m": 2.0, "alpha": 1.5, "v": 1.0},
        ],
        "lines": [{"i": 1, "j": 2, "B": b}],
        "base": {"f0": 50.0},
    })


def three_bus():
    """Two generators and one algebraic load bus on a path."""
    return network.network_from_dict({
        "buses": [
            {"id": 1, "kind": "gen", "m": 4.0, "alpha": 1.2, "v": 1.0},
            {"id": 2, "kind": "gen", "m": 3.0, "alpha": 0.8, "v": 1.0},
            {"id": 3, "kind": "load", "alpha": 1.5, "v": 1.0},
        ],
        "lines": [{"i": 1, "j": 2, "B": 2.0}, {"i": 2, "j": 3, "B": 1.5}],
        "base": {"f0": 50.0},
    })


def three_bus_gens(alpha=(3.0, 4.0, 3.5)):
    """Three generators on a path (all-machine systems)."""
    a1, a2, a3 = alpha
    return network.network_from_dict({
        "buses": [
            {"id": 1, "kind": "gen", "m": 4.0, "alpha": a1, "v": 1.0},
            {"id": 2, "kind": "gen", "m": 3.0, "alpha": a2, "v": 1.0},
            {"id": 3, "kind": "gen", "m": 2.0, "alpha": a3, "v": 1.0},
        ],
        "lines": [{"i": 1, "j": 2, "B": 1.0}, {"i": 2, "j": 3, "B": 0.8}],
        "base": {"f0": 50.0},
    })


def nine_bus():
    """Three generators feeding a six-bus load ring.

    Parameters are chosen so the fastest algebraic-load angle mode stays
    near 300/s, keeping RK4 at h = 2 ms well inside its stability region.
    """
    buses = []
    gens = {1: (5.0, 1.3), 2: (4.0, 1.0), 3: (3.0, 1.1)}
    for b in range(1, 10):
        if b in gens:
            m, a = gens[b]
            buses.append({"id": b, "kind": "gen", "m": m, "alpha": a, "v": 1.0})
        else:
            buses.append({"id": b, "kind": "load", "alpha": 2.0 + 0.1 * b, "v": 1.0})
    lines = [(1, 4, 1.2), (2, 7, 1.1), (3, 9, 1.0), (4, 5, 0.9), (5, 6, 0.8),
             (6, 7, 1.0), (7, 8, 0.9), (8, 9, 0.8), (9, 4, 0.9)]
    return network.network_from_dict({
        "buses": buses,
        "lines": [{"i": i, "j": j, "B": B} for i, j, B in lines],
        "base": {"f0": 50.0},
    })


def random_connected_net(seed, buses=4, all_gens=False):
    """Random small network: a spanning path plus a few chords."""
    rng = np.random.default_rng(seed)
    recs = []
    for b in range(1, buses + 1):
        gen = all_gens or b == 1 or rng.uniform() < 0.5
        rec = {"id": b, "kind": "gen" if gen else "load",
               "alpha": float(rng.uniform(0.8, 2.5)), "v": float(rng.uniform(0.95, 1.05))}
        if gen:
            rec["m"] = float(rng.uniform(2.0, 6.0))
        recs.append(rec)
    lines = [{"i": b, "j": b + 1, "B": float(rng.uniform(0.8, 2.0))}
             for b in range(1, buses)]
    for _ in range(buses // 3):
        i, j = rng.choice(np.arange(1, buses + 1), size=2, replace=False)
        if not any(set((l["i"], l["j"])) == {int(i), int(j)} for l in lines):
            lines.append({"i": int(i), "j": int(j), "B": float(rng.uniform(0.5, 1.5))})
    return network.network_from_dict(
        {"buses": recs, "lines": lines, "base": {"f0": 50.0}})


@pytest.fixture
def net2():
    return two_bus()


@pytest.fixture
def net3():
    return three_bus()


@pytest.fixture
def net9():
    return nine_bus()
