"""Shared fixtures: acceptance line collector and the lam-grid family."""

import numpy as np
import pytest

from fsieq.equilibrium import PicardOptions, solve_equilibrium
from fsieq.grid import Box, build_grid, voxelize_body
from fsieq.lifting import LiftingConfig
from fsieq.oseen import LinearSolveOptions
from fsieq.params import Params

# one summary line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line for a criterion, then assert it."""

    def check(cid, ok, detail):
        line = f"{cid} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        assert ok, line

    return check


# secondary spring axis tilted out of the lattice planes; axis-aligned
# directions make the discrete torque vanish by mirror symmetry, which
# would turn the angle dynamics into a triviality
TILTED_B = (0.0, float(np.cos(0.6)), float(np.sin(0.6)))

LAM_GRID = (0.01, 0.02, 0.05, 0.1, 0.15, 0.2)


@pytest.fixture(scope="session")
def lam_grid_family():
    """Equilibria of the asymmetric box across the lam grid.

    Damping 1 with tight tolerances so consecutive Picard increments
    expose the raw contraction rate of the map; every sweep solves at
    full accuracy (no inexact schedule) so the increments carry no
    inner-tolerance signature. The states feed the affine-bound fit
    and the histories the contraction-scaling fit.
    """
    grid = build_grid(4.0, 48)
    shape = Box((0.4, 0.55, 0.25))
    mask = voxelize_body(shape, grid)
    cfg = LiftingConfig(1.6, 1.6)
    opts = PicardOptions(
        damping=1.0,
        tol_u=1e-10,
        tol_theta=1e-10,
        max_iters=80,
        inexact=False,
        solver=LinearSolveOptions(tol_rel=1e-11),
    )
    cases = {}
    for lam in LAM_GRID:
        params = Params(lam=lam, alpha=np.pi / 2, b_tilde=TILTED_B)
        state, hist = solve_equilibrium(params, grid, mask, shape, cfg, opts)
        cases[lam] = (params, state, hist)
    return {
        "grid": grid,
        "mask": mask,
        "shape": shape,
        "cfg": cfg,
        "opts": opts,
        "cases": cases,
    }
