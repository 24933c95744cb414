"""Truncation sweep mechanics: plans, zero extension, report assembly."""

import numpy as np
import pytest

from fsieq.equilibrium import PicardOptions, solve_equilibrium
from fsieq.grid import Sphere, VectorField, build_grid, voxelize_body
from fsieq.invading import (
    SweepPlan,
    extend_by_zero,
    plan_violations,
    run_invading,
)
from fsieq.lifting import LiftingConfig
from fsieq.operators import divergence
from fsieq.params import Params


def make_plan(**kw):
    base = dict(
        radii=(4.5, 5.25),
        cells_per_unit=4,
        shape=Sphere(0.5),
        lifting=LiftingConfig(1.05, 1.05),
        params=Params(lam=0.0, alpha=0.0),
    )
    base.update(kw)
    return SweepPlan(**base)


def test_plan_violations():
    assert plan_violations(make_plan()) == []
    assert any("two radii" in v for v in plan_violations(make_plan(radii=(4.5,))))
    assert any("increase" in v for v in plan_violations(make_plan(radii=(5.25, 4.5))))
    # first box must clear twice the lifting support
    small = plan_violations(make_plan(radii=(4.0, 5.25)))
    assert any("smallest radius" in v for v in small)
    # fractional cell counts are rejected
    frac = plan_violations(make_plan(radii=(4.51, 5.25)))
    assert any("whole cell count" in v for v in frac)
    # grid constraints propagate with the offending radius named
    odd = plan_violations(make_plan(radii=(4.5, 5.0), cells_per_unit=1))
    assert any("radius 4.5" in v and "even" in v for v in odd)


def test_run_rejects_bad_plan():
    with pytest.raises(ValueError, match="increase"):
        run_invading(make_plan(radii=(5.25, 4.5)))


def test_extend_by_zero_exact():
    small = build_grid(2.0, 16)
    big = build_grid(3.0, 24)
    rng = np.random.default_rng(7)
    f = VectorField(*(rng.normal(size=z.shape) for z in VectorField.zeros(small).comps))
    ext = extend_by_zero(f, small, big)
    off = (big.n - small.n) // 2
    for src, dst in zip(f.comps, ext.comps):
        block = tuple(slice(off, off + m) for m in src.shape)
        assert np.array_equal(dst[block], src)
        total = np.sum(np.abs(dst))
        assert total == pytest.approx(np.sum(np.abs(src)))
    with pytest.raises(ValueError, match="share h"):
        extend_by_zero(f, small, build_grid(3.0, 20))


@pytest.fixture(scope="module")
def stokes_sweep():
    plan = make_plan(radii=(4.5, 5.25, 6.0))
    return plan, run_invading(plan)


def test_sweep_levels(stokes_sweep):
    plan, rep = stokes_sweep
    assert [lv.radius for lv in rep.levels] == [4.5, 5.25, 6.0]
    assert [lv.cells for lv in rep.levels] == [36, 42, 48]
    assert all(lv.converged for lv in rep.levels)
    assert not rep.partial
    # decoupled limit: the angle never moves
    assert all(lv.theta == 0.0 for lv in rep.levels)
    assert np.isfinite(rep.uniform_bound)
    assert rep.uniform_bound == max(lv.grad_norm for lv in rep.levels)


def test_sweep_pairs(stokes_sweep):
    plan, rep = stokes_sweep
    assert len(rep.pairs) == 2
    for pr in rep.pairs:
        assert pr.dgrad > 0.0
        assert pr.dtheta == 0.0
        assert pr.drag_rel_change < 0.5
    rows = rep.summary()
    assert rows["radii"] == [4.5, 5.25, 6.0]
    assert len(rows["dgrad"]) == 2


def test_extension_stays_divergence_free(stokes_sweep):
    # the sweep drops its states, so redo the smallest level with a tight
    # divergence tolerance and extend it onto the middle grid
    from fsieq.oseen import LinearSolveOptions

    plan, rep = stokes_sweep
    grid = build_grid(4.5, 36)
    mask = voxelize_body(plan.shape, grid)
    opts = PicardOptions(solver=LinearSolveOptions(tol_rel=1e-11))
    state, _ = solve_equilibrium(plan.params, grid, mask, plan.shape, plan.lifting, opts)
    big = build_grid(5.25, 42)
    ext = extend_by_zero(state.u, grid, big)
    div = divergence(ext, big.h)
    assert np.max(np.abs(div)) < 1e-10


def test_partial_flag_on_failures():
    plan = make_plan(
        radii=(4.5, 5.25),
        params=Params(lam=0.05, alpha=np.pi / 2),
        picard=PicardOptions(max_iters=1, init="zero"),
    )
    rep = run_invading(plan, threads=2)
    assert rep.partial
    assert all(not lv.converged for lv in rep.levels)
    assert all(lv.message for lv in rep.levels)
    assert rep.pairs == []
    assert np.isnan(rep.uniform_bound)
