"""Shared small fixtures: a coarse channel mesh with assembled operators."""

import numpy as np
import pytest

from fhnrom import DgSpace, FhnParams, assemble_operators, build_uniform_mesh


@pytest.fixture(scope="session")
def small_setup():
    """2x2-cell square channel with mild convection; session-cached."""
    mesh = build_uniform_mesh(2.0, 2.0, 1.0)
    space = DgSpace(mesh)
    params = FhnParams(vmax=1.0, T=0.2, dt=0.05)
    ops_y = assemble_operators(space, params.D1, params.vmax, 6.0)
    ops_z = assemble_operators(space, params.D2, params.vmax, 6.0)
    return mesh, space, params, ops_y, ops_z


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


#: one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
