"""Shared helpers for the test suite.

Property tests draw from seeded generators so every run sees the same
inputs; helpers here centralize the random cloud and camera builders.
"""

import numpy as np
import pytest

from splatforge.gaussians import Camera, GaussianCloud


def random_quaternions(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_cloud(rng, n, degree=0, labels=None, box=1.0):
    """A valid random cloud; labels may be None, an int, or an array."""
    basis = (degree + 1) ** 2
    if labels is None:
        label_arr = np.zeros(n, dtype=np.int32)
    elif np.isscalar(labels):
        label_arr = np.full(n, int(labels), dtype=np.int32)
    else:
        label_arr = np.asarray(labels, dtype=np.int32)
    return GaussianCloud(
        means=rng.uniform(-box, box, (n, 3)),
        rotations=random_quaternions(rng, n),
        scales=rng.uniform(0.05, 0.4, (n, 3)),
        opacities=rng.uniform(0.0, 1.0, n),
        sh=rng.uniform(-0.5, 1.0, (n, basis, 3)),
        labels=label_arr,
    )


def random_camera(rng, width=64, height=48, focal=60.0, target=None):
    """A camera on a random orbit position looking at the target."""
    if target is None:
        target = np.zeros(3)
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    elevation = rng.uniform(-0.8, 0.8)
    radius = rng.uniform(2.5, 4.0)
    position = target + radius * np.array(
        [
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ]
    )
    return Camera.look_at(
        position=position,
        target=target,
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
    )


def random_directions(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# The acceptance tests tag themselves with record_property("criterion", ...);
# collect their outcomes and print one PASS/FAIL line per criterion at the
# end of the run, where output capture cannot swallow it.
_criterion_results = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    criterion = None
    notes = []
    for key, value in report.user_properties:
        if key == "criterion":
            criterion = str(value)
        elif key == "criterion_note":
            notes.append(str(value))
    if criterion is not None:
        _criterion_results.append((criterion, report.passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _criterion_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, notes in _criterion_results:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}")
        for note in notes:
            terminalreporter.write_line(f"       {note}")
