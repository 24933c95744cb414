"""Coupled flow/angle equilibria by damped Picard iteration.

Each sweep freezes the convective transport at the previous iterate,
solves the resulting constant-transport problem for the perturbation
velocity, then relaxes the torsional angle through the volume-form
torque functional. Forces and torques on the body are also measured by
direct traction quadrature over the voxel surface; the volume and
surface routes agree up to discretization error and both are kept.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .grid import CellMask, Grid, VectorField
from .lifting import (
    LiftingConfig,
    build_lifting,
    forcing_f_lambda,
    torque_test_field,
)
from .operators import advect, h1_seminorm, integrate_dot, strain_inner
from .oseen import LinearSolveOptions, NonConvergence, SolveReport, solve_oseen
from .params import Params, far_field_direction, rotated_stiffness


@dataclass
class EquilibriumState:
    """One equilibrium iterate: perturbation velocity, its pressure, the
    torsional angle, and (after recovery) the spring displacement."""

    u: VectorField
    p: np.ndarray
    theta: float
    delta: np.ndarray | None = None
    torque: float = 0.0

    def copy(self) -> "EquilibriumState":
        return EquilibriumState(
            self.u.copy(),
            self.p.copy(),
            self.theta,
            None if self.delta is None else self.delta.copy(),
            self.torque,
        )


@dataclass
class PicardOptions:
    """Iteration controls for the coupled fixed point.

    damping relaxes both the velocity and the angle update; tol_u is a
    relative H1-seminorm change, tol_theta an absolute angle change.
    init picks the starting iterate: "zero", "stokes" (one lam=0 solve),
    or "custom" with init_state supplied. scheme "lagged" moves every
    nonlinear term to the right-hand side; "semi" keeps the transport
    and reaction couplings on the implicit side. norm_cap aborts a run
    whose iterates leave the expected bounded set. inexact loosens the
    early linear-solve tolerances proportionally to the step size.
    """

    damping: float = 1.0
    tol_u: float = 1e-8
    tol_theta: float = 1e-8
    max_iters: int = 60
    init: str = "stokes"
    init_state: EquilibriumState | None = None
    scheme: str = "lagged"
    solver: LinearSolveOptions = field(default_factory=LinearSolveOptions)
    norm_cap: float = 1e6
    inexact: bool = True

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if self.init not in ("zero", "stokes", "custom"):
            raise ValueError(f"init must be zero, stokes or custom, got {self.init!r}")
        if self.init == "custom" and self.init_state is None:
            raise ValueError("init='custom' requires init_state")
        if self.scheme not in ("lagged", "semi"):
            raise ValueError(f"scheme must be lagged or semi, got {self.scheme!r}")


@dataclass
class StepReport:
    du_abs: float
    du_rel: float
    dtheta: float
    torque: float
    grad_norm: float
    solver: SolveReport


class PicardFailure(RuntimeError):
    """Raised when the coupled iteration exhausts its budget or leaves the
    configured bound; carries the last state and the full history."""

    def __init__(self, msg, state, history):
        super().__init__(msg)
        self.state = state
        self.history = history


# --------------------------------------------------------- torque, volume form


def torque_functional(
    u: VectorField,
    lam: float,
    b,
    grid: Grid,
    mask: CellMask,
    cfg: LiftingConfig,
    *,
    lifting: VectorField | None = None,
    forcing: VectorField | None = None,
    test_field: VectorField | None = None,
    shape=None,
) -> float:
    """Torque about e1 on the body, evaluated as a volume integral.

    Pairs the momentum terms of the perturbation problem at stream
    direction b with the divergence-free rotational test field, so the
    pressure never enters. Equals minus the surface torque up to
    discretization error. Prebuilt lifting/forcing/test_field arguments
    skip the (validated) reconstruction.
    """
    h = grid.h
    hf = test_field
    if hf is None:
        hf = torque_test_field(grid, cfg, shape=shape, mask=mask)
    L = lifting
    if L is None:
        L = build_lifting(grid, mask, shape, b, cfg)
    f = forcing
    if f is None:
        f = forcing_f_lambda(lam, L, b, grid)
    total = integrate_dot(f, hf, h) - strain_inner(u, hf, h)
    if lam != 0.0:
        conv = advect(u, u, h) + advect(L, u, h) + advect(u, L, h)
        conv = conv + advect(-np.asarray(b, dtype=float), u, h)
        total -= lam * integrate_dot(conv, hf, h)
    return total


# ------------------------------------------------------- traction quadratures


def _face_centers(grid: Grid, axis: int, idx):
    faces, cells = grid.face_coords(), grid.cell_coords()
    pts = []
    for ax in range(3):
        src = faces if ax == axis else cells
        pts.append(src[idx[ax]])
    return pts


def _shift(idx, axis: int, by: int):
    out = list(idx)
    out[axis] = idx[axis] + by
    return tuple(out)


def surface_traction_sums(v: VectorField, p: np.ndarray, mask: CellMask):
    """Net stress force and e1-torque over the voxel body surface.

    The normal points from the body into the fluid. Normal derivatives of
    the normal component and the pressure use one-sided second-order
    stencils on the fluid side; tangential shear uses straddle-centered
    averages across the surface. Exact on quadratic fields and exactly
    zero for rigid rotations; reads the stored values one cell inside the
    body, which the physical-velocity assembly pins to the no-slip datum.
    Convex voxelizations only (the stencils assume the two cells behind a
    surface face along its normal stay in the fluid).
    """
    grid = mask.grid
    h = grid.h
    force = np.zeros(3)
    torque = 0.0
    for (axis, sign), idx in mask.surface.items():
        if len(idx) == 0 or idx[0].size == 0:
            continue
        s = float(sign)
        x, y, z = _face_centers(grid, axis, idx)
        vd = v.comps[axis]
        f0 = vd[idx]
        f1 = vd[_shift(idx, axis, sign)]
        f2 = vd[_shift(idx, axis, 2 * sign)]
        dvd_dn = s * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
        cell0 = _shift(idx, axis, (sign - 1) // 2)
        cell1 = _shift(cell0, axis, sign)
        p_face = 1.5 * p[cell0] - 0.5 * p[cell1]
        t = [None, None, None]
        t[axis] = s * (2.0 * dvd_dn - p_face)
        for m in range(3):
            if m == axis:
                continue
            vm = v.comps[m]
            dvd_dm = (vd[_shift(idx, m, 1)] - vd[_shift(idx, m, -1)]) / (2.0 * h)

            def layer_avg(cell_along_axis):
                base = _shift(idx, axis, cell_along_axis - idx[axis])
                lo = base
                hi = _shift(base, m, 1)
                return 0.5 * (vm[lo] + vm[hi])

            # cells idx[axis]-1 / idx[axis] straddle the face plane
            dvm_dn = (layer_avg(idx[axis]) - layer_avg(idx[axis] - 1)) / h
            t[m] = s * (dvm_dn + dvd_dm)
        area = h * h
        for j in range(3):
            force[j] += area * float(np.sum(t[j]))
        torque += area * float(np.sum(y * t[2] - z * t[1]))
    return force, torque


def boundary_torque_direct(v: VectorField, p: np.ndarray, mask: CellMask) -> float:
    """e1 component of the surface stress torque.

    Uses the outward normal of the fluid domain (pointing into the body),
    the orientation under which integration by parts identifies this
    integral with minus the volume-form torque functional.
    """
    return -surface_traction_sums(v, p, mask)[1]


def body_surface_force(v: VectorField, p: np.ndarray, mask: CellMask) -> np.ndarray:
    """Net stress force on the body, body-outward normal (drag points
    downstream with this orientation)."""
    return surface_traction_sums(v, p, mask)[0]


def control_box_force(
    v: VectorField, p: np.ndarray, lam: float, grid: Grid, half_width: float
) -> np.ndarray:
    """Momentum-flux force on whatever the grid-aligned box encloses.

    Integrates (2 strain - p I - lam v x v) . n over the box surface,
    snapped to face planes. For a steady solution enclosing only the body
    this reproduces the surface force up to discretization error.
    """
    n, h = grid.n, grid.h
    i_lo = int(round((grid.radius_R - half_width) / h))
    i_lo = max(i_lo, 2)
    i_hi = n - i_lo
    if i_hi - i_lo < 2:
        raise ValueError(f"control box too small: faces {i_lo}..{i_hi}")
    cells = np.arange(i_lo, i_hi)
    T1, T2 = np.meshgrid(cells, cells, indexing="ij")
    force = np.zeros(3)
    area = h * h
    for d in range(3):
        trans = [ax for ax in range(3) if ax != d]
        for iface, sgn in ((i_lo, -1.0), (i_hi, 1.0)):
            idx = [None, None, None]
            idx[d] = np.full_like(T1, iface)
            idx[trans[0]] = T1
            idx[trans[1]] = T2
            idx = tuple(idx)
            vd = v.comps[d]
            vd_face = vd[idx]
            dvd_dd = (vd[_shift(idx, d, 1)] - vd[_shift(idx, d, -1)]) / (2.0 * h)
            p_face = 0.5 * (p[_shift(idx, d, -1)] + p[idx])
            t = [None, None, None]
            t[d] = sgn * (2.0 * dvd_dd - p_face - lam * vd_face * vd_face)
            for m in trans:
                vm = v.comps[m]
                dvd_dm = (vd[_shift(idx, m, 1)] - vd[_shift(idx, m, -1)]) / (2.0 * h)

                def layer_avg(cell_along_d):
                    base = _shift(idx, d, cell_along_d - iface)
                    return 0.5 * (vm[base] + vm[_shift(base, m, 1)])

                hi = layer_avg(iface)
                lo = layer_avg(iface - 1)
                dvm_dd = (hi - lo) / h
                vm_face = 0.5 * (hi + lo)
                t[m] = sgn * (dvm_dd + dvd_dm - lam * vd_face * vm_face)
            for j in range(3):
                force[j] += area * float(np.sum(t[j]))
    return force


# ------------------------------------------------------------- physical field


def physical_velocity(
    state: EquilibriumState,
    params: Params,
    grid: Grid,
    mask: CellMask,
    shape,
    cfg: LiftingConfig,
) -> VectorField:
    """Frame velocity u - b + lifting(b): zero on the body, -b far out."""
    b = far_field_direction(state.theta, params)
    L = build_lifting(grid, mask, shape, b, cfg)
    return VectorField(
        *(a + (Lc - bc) for a, Lc, bc in zip(state.u.comps, L.comps, b))
    )


# --------------------------------------------------------------- picard sweep


class _Stepper:
    """Shared per-run context: cached test field, solver warm starts."""

    def __init__(self, params, grid, mask, shape, cfg, opts):
        self.params = params
        self.grid = grid
        self.mask = mask
        self.shape = shape
        self.cfg = cfg
        self.opts = opts
        self.hfield = torque_test_field(grid, cfg, shape=shape, mask=mask)
        self.warm = None

    def linear_solve(self, u, theta, lam, solver_tol):
        grid, mask = self.grid, self.mask
        h = grid.h
        b = far_field_direction(theta, self.params)
        L = build_lifting(grid, mask, self.shape, b, self.cfg)
        f = forcing_f_lambda(lam, L, b, grid)
        sopts = dataclasses.replace(self.opts.solver, tol_rel=solver_tol)
        if self.opts.scheme == "semi":
            unew, pnew, rep = solve_oseen(
                grid,
                mask,
                lam,
                -b,
                f,
                sopts,
                frozen_transport=u + L,
                reaction_terms=L,
                warm_start=self.warm,
            )
        else:
            rhs = f
            if lam != 0.0:
                lag = advect(u, u, h) + advect(L, u, h) + advect(u, L, h)
                rhs = VectorField(
                    *(fc - lam * lc for fc, lc in zip(f.comps, lag.comps))
                )
            unew, pnew, rep = solve_oseen(
                grid, mask, lam, -b, rhs, sopts, warm_start=self.warm
            )
        self.warm = (unew, pnew)
        F = torque_functional(
            unew,
            lam,
            b,
            grid,
            mask,
            self.cfg,
            lifting=L,
            forcing=f,
            test_field=self.hfield,
        )
        return unew, pnew, F, rep

    def advance(self, state, damping, solver_tol):
        lam = self.params.lam
        unew, pnew, F, rep = self.linear_solve(state.u, state.theta, lam, solver_tol)
        om = damping
        theta_next = (1.0 - om) * state.theta + om * self.params.lambda_hat * F
        if om == 1.0:
            u_next, p_next = unew, pnew
        else:
            u_next = VectorField(
                *((1.0 - om) * a + om * c for a, c in zip(state.u.comps, unew.comps))
            )
            p_next = (1.0 - om) * state.p + om * pnew
        du = VectorField(*(a - c for a, c in zip(u_next.comps, state.u.comps)))
        du_abs = h1_seminorm(du, self.grid.h)
        grad_norm = h1_seminorm(u_next, self.grid.h)
        report = StepReport(
            du_abs=du_abs,
            du_rel=du_abs / max(grad_norm, 1e-300),
            dtheta=abs(theta_next - state.theta),
            torque=F,
            grad_norm=grad_norm,
            solver=rep,
        )
        return EquilibriumState(u_next, p_next, theta_next, torque=F), report


def picard_step(
    state: EquilibriumState,
    params: Params,
    grid: Grid,
    mask: CellMask,
    shape,
    cfg: LiftingConfig,
    opts: PicardOptions | None = None,
):
    """One damped sweep of the coupled map from an arbitrary state."""
    opts = PicardOptions() if opts is None else opts
    stepper = _Stepper(params, grid, mask, shape, cfg, opts)
    stepper.warm = (state.u, state.p)
    return stepper.advance(state, opts.damping, opts.solver.tol_rel)


def _initial_state(stepper, opts):
    grid = stepper.grid
    if opts.init == "custom":
        state = opts.init_state.copy()
        stepper.warm = (state.u, state.p)
        return state
    if opts.init == "stokes":
        u0, p0, F, _ = stepper.linear_solve(
            VectorField.zeros(grid), 0.0, 0.0, opts.solver.tol_rel
        )
        return EquilibriumState(u0, p0, 0.0, torque=F)
    return EquilibriumState(
        VectorField.zeros(grid), np.zeros((grid.n,) * 3), 0.0
    )


def solve_equilibrium(
    params: Params,
    grid: Grid,
    mask: CellMask,
    shape,
    cfg: LiftingConfig,
    opts: PicardOptions | None = None,
):
    """Damped Picard iteration to a coupled equilibrium.

    Returns (state, history). history holds per-iteration series plus the
    fixed-point residuals of one extra undamped sweep from the accepted
    state. Raises PicardFailure (with the history attached) when the
    budget runs out or an iterate violates norm_cap; inner linear-solve
    failures propagate the same way.
    """
    opts = PicardOptions() if opts is None else opts
    stepper = _Stepper(params, grid, mask, shape, cfg, opts)
    state = _initial_state(stepper, opts)
    final_tol = opts.solver.tol_rel
    history = {
        "theta": [state.theta],
        "grad_norm": [h1_seminorm(state.u, grid.h)],
        "du_abs": [],
        "du_rel": [],
        "dtheta": [],
        "torque": [],
        "outer_iters": [],
        "solver_tol": [],
    }
    prev_du_rel = np.inf
    converged = False
    for _ in range(opts.max_iters):
        if opts.inexact:
            tol_k = max(final_tol, min(1e-6, 0.05 * prev_du_rel))
        else:
            tol_k = final_tol
        try:
            state, rep = stepper.advance(state, opts.damping, tol_k)
        except NonConvergence as exc:
            raise PicardFailure(
                f"linear solve failed at iteration {len(history['du_rel'])}: {exc}",
                state,
                history,
            ) from exc
        history["theta"].append(state.theta)
        history["grad_norm"].append(rep.grad_norm)
        history["du_abs"].append(rep.du_abs)
        history["du_rel"].append(rep.du_rel)
        history["dtheta"].append(rep.dtheta)
        history["torque"].append(rep.torque)
        history["outer_iters"].append(rep.solver.outer_iters)
        history["solver_tol"].append(tol_k)
        if rep.grad_norm + abs(state.theta) > opts.norm_cap:
            raise PicardFailure(
                f"iterate left the bounded set: |grad u| + |theta| = "
                f"{rep.grad_norm + abs(state.theta):.3e} > {opts.norm_cap:.3e}",
                state,
                history,
            )
        small = rep.du_rel <= opts.tol_u and rep.dtheta <= opts.tol_theta
        if small and tol_k <= final_tol:
            converged = True
            break
        if small:
            # change is already below target but the solve was loose;
            # force one tight sweep before accepting
            prev_du_rel = 0.0
        else:
            prev_du_rel = rep.du_rel
    if not converged:
        raise PicardFailure(
            f"no fixed point within {opts.max_iters} sweeps "
            f"(last du_rel {history['du_rel'][-1]:.3e}, "
            f"dtheta {history['dtheta'][-1]:.3e})",
            state,
            history,
        )
    _, ver = stepper.advance(state, 1.0, final_tol)
    history["fixed_point_du_rel"] = ver.du_rel
    history["fixed_point_dtheta"] = ver.dtheta
    return state, history


# --------------------------------------------------------------- displacement


def recover_delta(
    state: EquilibriumState,
    params: Params,
    grid: Grid,
    mask: CellMask,
    shape,
    cfg: LiftingConfig,
    *,
    details: bool = False,
):
    """Spring displacement from the net hydrodynamic force.

    Surface-quadrature force with the body-outward normal, mapped through
    minus the inverse rotated stiffness (times the mass ratio mu). With
    details=True also returns the control-box flux force and the relative
    gap between the two routes.
    """
    v = physical_velocity(state, params, grid, mask, shape, cfg)
    force, _ = surface_traction_sums(v, state.p, mask)
    B = rotated_stiffness(state.theta, params)
    delta = -params.mu * np.linalg.solve(B, force)
    if not details:
        return delta
    fbox = control_box_force(v, state.p, params.lam, grid, 1.5 * cfg.rho0)
    gap = np.linalg.norm(force - fbox) / max(np.linalg.norm(force), 1e-300)
    return delta, {
        "force_surface": force,
        "force_box": fbox,
        "relative_gap": float(gap),
    }
