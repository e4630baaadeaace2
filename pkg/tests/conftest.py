"""Shared fixtures: random articulated models and small helpers."""

from __future__ import annotations

import math

import numpy as np
import pytest

from diffsim.model import Body, Joint, Model, validate_model
from diffsim.spatial import quat_normalize


def random_unit(rng) -> tuple:
    v = rng.normal(size=3)
    return tuple(v / np.linalg.norm(v))


def random_inertia(rng, mass) -> tuple:
    """Physically valid rotational inertia about the com (satisfies the triangle inequalities)."""
    # principal moments of a solid box with random side lengths
    a, b, c = rng.uniform(0.05, 0.6, size=3)
    d = mass / 12.0 * np.array([b * b + c * c, a * a + c * c, a * a + b * b])
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    M = Q @ np.diag(d) @ Q.T
    return tuple((0.5 * (M + M.T)).ravel())


def random_model(rng, n_links: int, allow_fixed: bool = True) -> Model:
    """Random kinematic tree with revolute, prismatic and (optionally) fixed joints."""
    bodies, joints = [], []
    for i in range(n_links):
        kinds = ["revolute", "revolute", "prismatic"] + (["fixed"] if allow_fixed and i > 0 else [])
        kind = kinds[rng.integers(len(kinds))]
        parent = int(rng.integers(-1, i)) if i > 0 else -1
        rot = quat_normalize(tuple(rng.normal(size=4)))
        joints.append(Joint(kind, random_unit(rng), parent, tuple(rng.uniform(-0.5, 0.5, 3)), rot))
        mass = float(rng.uniform(0.2, 3.0))
        bodies.append(Body(f"b{i}", mass, tuple(rng.uniform(-0.3, 0.3, 3)), random_inertia(rng, mass)))
    if all(j.kind == "fixed" for j in joints):
        joints[0] = Joint("revolute", joints[0].axis, -1, joints[0].offset, joints[0].rotation)
    return validate_model(Model(tuple(bodies), tuple(joints)))


def random_state(rng, m: Model):
    n = m.dof
    return rng.uniform(-math.pi, math.pi, n), rng.uniform(-2, 2, n)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
