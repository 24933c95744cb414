"""Truncation sweeps: same body and resolution, growing outer box.

Solves the coupled equilibrium on an increasing sequence of boxes with a
fixed cell size, extends each velocity by zero onto the next box, and
measures how fast gradients, angles, displacements and drag settle as
the fictitious boundary recedes.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import (
    PicardFailure,
    PicardOptions,
    body_surface_force,
    physical_velocity,
    recover_delta,
    solve_equilibrium,
)
from .grid import Grid, VectorField, build_grid, voxelize_body
from .lifting import LiftingConfig, lifting_violations
from .operators import h1_seminorm
from .params import Params

# ------------------------------------------------------------------ plan


@dataclass(frozen=True)
class SweepPlan:
    """Increasing box radii at a shared cell density.

    cells_per_unit fixes h = 1/cells_per_unit for every level, so the
    level-to-level differences measure the truncation alone. Radii must
    produce whole (and pairwise centrally nested) face grids.
    """

    radii: tuple
    cells_per_unit: int
    shape: object
    lifting: LiftingConfig
    params: Params
    picard: PicardOptions = field(default_factory=PicardOptions)

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))


def plan_violations(plan: SweepPlan) -> list:
    """Collect every validity complaint; empty means runnable."""
    out = []
    radii = plan.radii
    if len(radii) < 2:
        out.append("need at least two radii to measure differences")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        out.append(f"radii must increase strictly, got {radii}")
    if plan.cells_per_unit < 1:
        out.append(f"cells_per_unit must be a positive integer, got {plan.cells_per_unit}")
    floor = 4.0 * max(plan.lifting.rho0, plan.lifting.rho_h)
    if radii and radii[0] <= floor:
        out.append(
            f"smallest radius {radii[0]} must exceed twice the lifting "
            f"support 2*max(2*rho0, 2*rho_h) = {floor}"
        )
    sizes = []
    for r in radii:
        n_exact = 2.0 * r * plan.cells_per_unit
        n = int(round(n_exact))
        if abs(n_exact - n) > 1e-9:
            out.append(f"radius {r} does not yield a whole cell count at h=1/{plan.cells_per_unit}")
            continue
        try:
            grid = build_grid(r, n)
        except ValueError as exc:
            out.append(f"radius {r}: {exc}")
            continue
        sizes.append(n)
        out.extend(lifting_violations(plan.lifting, plan.shape, grid))
    # even cell counts mean consecutive levels always nest centrally
    return out


def _level_grid(radius: float, cells_per_unit: int) -> Grid:
    return build_grid(radius, int(round(2.0 * radius * cells_per_unit)))


# ------------------------------------------------------- zero extension


def extend_by_zero(v: VectorField, small: Grid, big: Grid) -> VectorField:
    """Embed a face field of the small box centrally into the big one.

    The copy is exact (both grids share h and face planes) and the small
    box's boundary faces already carry zeros, so the extension stays
    divergence free to the tolerance of the original field.
    """
    if abs(small.h - big.h) > 1e-12 * big.h:
        raise ValueError(f"grids must share h, got {small.h} and {big.h}")
    if (big.n - small.n) % 2 != 0 or big.n < small.n:
        raise ValueError(f"cannot center {small.n} cells inside {big.n}")
    off = (big.n - small.n) // 2
    out = VectorField.zeros(big)
    for src, dst in zip(v.comps, out.comps):
        block = tuple(slice(off, off + m) for m in src.shape)
        dst[block] = src
    return out


# ---------------------------------------------------------------- report


@dataclass
class LevelResult:
    radius: float
    cells: int
    converged: bool
    iterations: int
    theta: float
    torque: float
    grad_norm: float
    drag: np.ndarray
    drag_mag: float
    delta: np.ndarray
    wall_time: float
    message: str = ""

    def row(self) -> dict:
        return {
            "radius": self.radius,
            "cells": self.cells,
            "converged": int(self.converged),
            "iterations": self.iterations,
            "theta": self.theta,
            "torque": self.torque,
            "grad_norm": self.grad_norm,
            "drag_x": self.drag[0],
            "drag_y": self.drag[1],
            "drag_z": self.drag[2],
            "drag_mag": self.drag_mag,
            "delta_x": self.delta[0],
            "delta_y": self.delta[1],
            "delta_z": self.delta[2],
            "bound": self.grad_norm + abs(self.theta),
            "wall_time": self.wall_time,
        }


@dataclass
class PairDiff:
    radius_low: float
    radius_high: float
    dgrad: float
    dtheta: float
    ddelta: float
    drag_rel_change: float

    def row(self) -> dict:
        return {
            "radius_low": self.radius_low,
            "radius_high": self.radius_high,
            "dgrad": self.dgrad,
            "dtheta": self.dtheta,
            "ddelta": self.ddelta,
            "drag_rel_change": self.drag_rel_change,
        }


@dataclass
class SweepReport:
    levels: list
    pairs: list
    uniform_bound: float
    partial: bool

    def summary(self) -> dict:
        return {
            "radii": [lv.radius for lv in self.levels],
            "converged": [bool(lv.converged) for lv in self.levels],
            "uniform_bound": self.uniform_bound,
            "partial": self.partial,
            "theta": [lv.theta for lv in self.levels],
            "grad_norm": [lv.grad_norm for lv in self.levels],
            "drag_mag": [lv.drag_mag for lv in self.levels],
            "dgrad": [pr.dgrad for pr in self.pairs],
            "dtheta": [pr.dtheta for pr in self.pairs],
            "ddelta": [pr.ddelta for pr in self.pairs],
            "drag_rel_change": [pr.drag_rel_change for pr in self.pairs],
        }


# ------------------------------------------------------------------ run


def _solve_level(plan: SweepPlan, radius: float):
    grid = _level_grid(radius, plan.cells_per_unit)
    mask = voxelize_body(plan.shape, grid)
    start = time.perf_counter()
    message = ""
    try:
        state, hist = solve_equilibrium(
            plan.params, grid, mask, plan.shape, plan.lifting, plan.picard
        )
        converged = True
    except PicardFailure as exc:
        state, hist, converged = exc.state, exc.history, False
        message = str(exc)
    wall = time.perf_counter() - start
    v = physical_velocity(state, plan.params, grid, mask, plan.shape, plan.lifting)
    drag = body_surface_force(v, state.p, mask)
    delta = recover_delta(state, plan.params, grid, mask, plan.shape, plan.lifting)
    level = LevelResult(
        radius=radius,
        cells=grid.n,
        converged=converged,
        iterations=len(hist["du_rel"]),
        theta=state.theta,
        torque=state.torque,
        grad_norm=h1_seminorm(state.u, grid.h),
        drag=drag,
        drag_mag=float(np.linalg.norm(drag)),
        delta=delta,
        wall_time=wall,
        message=message,
    )
    return level, state, grid


def run_invading(plan: SweepPlan, threads: int = 1) -> SweepReport:
    """Solve every level and assemble the truncation-convergence report.

    Levels run independently (optionally in a thread pool); the report is
    assembled in radius order regardless of completion order. A level
    that fails to converge is recorded with its last iterate and flips
    the partial flag; difference rows touch converged neighbors only.
    """
    problems = plan_violations(plan)
    if problems:
        raise ValueError("; ".join(problems))
    radii = sorted(plan.radii)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solved = list(pool.map(lambda r: _solve_level(plan, r), radii))
    else:
        solved = [_solve_level(plan, r) for r in radii]

    pairs = []
    for (lo, state_lo, grid_lo), (hi, state_hi, grid_hi) in zip(solved, solved[1:]):
        if not (lo.converged and hi.converged):
            continue
        diff = extend_by_zero(state_lo.u, grid_lo, grid_hi) - state_hi.u
        pairs.append(
            PairDiff(
                radius_low=lo.radius,
                radius_high=hi.radius,
                dgrad=h1_seminorm(diff, grid_hi.h),
                dtheta=abs(hi.theta - lo.theta),
                ddelta=float(np.linalg.norm(hi.delta - lo.delta)),
                drag_rel_change=abs(hi.drag_mag - lo.drag_mag) / max(hi.drag_mag, 1e-300),
            )
        )
    levels = [lv for lv, _, _ in solved]
    finite = [lv.grad_norm + abs(lv.theta) for lv in levels if lv.converged]
    return SweepReport(
        levels=levels,
        pairs=pairs,
        uniform_bound=max(finite) if finite else float("nan"),
        partial=not all(lv.converged for lv in levels),
    )
