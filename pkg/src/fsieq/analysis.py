"""Discrete norms and the measurement side of the smallness story.

Everything here observes converged states: Lebesgue-type norms on the
staggered fields, affine-in-lambda envelope fits, multi-start dispersion
for uniqueness, contraction-rate profiles of the coupled iteration, and
the far-field decay proxy. Constants are fit outputs, never inputs.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .equilibrium import (
    EquilibriumState,
    PicardFailure,
    PicardOptions,
    recover_delta,
    solve_equilibrium,
)
from .grid import CellMask, Grid, VectorField
from .lifting import build_lifting, forcing_f_lambda
from .operators import h1_seminorm
from .oseen import solve_oseen
from .params import Params, far_field_direction, smallness_coefficients

# ----------------------------------------------------------------- norms


@dataclass(frozen=True)
class NormSpec:
    """What to measure: plain field, first or second differences.

    Exponents follow the admissible decay ranges: fields need q >= 2
    (the energy norm is admitted alongside the strict decay exponents),
    gradients r > 4/3, second differences s > 1. np.inf selects the max
    norm. region "support" restricts to cells inside support_radius,
    the fixed neighborhood that carries the rotational test field.
    """

    kind: str
    exponent: float
    region: str = "fluid"
    support_radius: float | None = None

    def __post_init__(self):
        if self.kind not in ("field", "gradient", "second"):
            raise ValueError(f"kind must be field, gradient or second, got {self.kind!r}")
        floors = {"field": 2.0, "gradient": 4.0 / 3.0, "second": 1.0}
        lo = floors[self.kind]
        closed = self.kind == "field"
        ok = self.exponent >= lo if closed else self.exponent > lo
        if not ok or np.isnan(self.exponent):
            cmp = ">=" if closed else ">"
            raise ValueError(f"{self.kind} exponent must be {cmp} {lo:.6g}, got {self.exponent}")
        if self.region not in ("fluid", "support"):
            raise ValueError(f"region must be fluid or support, got {self.region!r}")
        if self.region == "support" and not (self.support_radius and self.support_radius > 0):
            raise ValueError("region='support' needs a positive support_radius")


def _region_cells(spec: NormSpec, grid: Grid, mask: CellMask | None) -> np.ndarray:
    keep = np.ones((grid.n,) * 3, dtype=bool) if mask is None else mask.fluid.copy()
    if spec.region == "support":
        X, Y, Z = grid.cell_mesh()
        keep &= X * X + Y * Y + Z * Z <= spec.support_radius**2
    return keep


def _cell_centered(v: VectorField, grid: Grid) -> np.ndarray:
    """Face field averaged to cell centers, squared magnitude per cell."""
    mag2 = np.zeros((grid.n,) * 3)
    for axis, comp in enumerate(v.comps):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        avg = 0.5 * (comp[tuple(lo)] + comp[tuple(hi)])
        mag2 += avg * avg
    return mag2


def _difference_arrays(v: VectorField, grid: Grid, order: int):
    """All first (order 1) or second (order 2) difference quotients.

    Yields (values, owner) pairs where owner is the cell index block the
    staggered array is attributed to for region weighting.
    """
    h = grid.h
    n = grid.n
    for j, comp in enumerate(v.comps):
        if order == 1:
            for i in range(3):
                d = np.diff(comp, axis=i) / h
                yield d, _owner_block(d.shape, n)
        else:
            for i in range(3):
                for k in range(i, 3):
                    if i == k:
                        d = np.diff(comp, n=2, axis=i) / (h * h)
                    else:
                        d = np.diff(np.diff(comp, axis=i), axis=k) / (h * h)
                    yield d, _owner_block(d.shape, n)


def _owner_block(shape, n):
    """Slices assigning a staggered array to leading cells of the grid."""
    return tuple(slice(0, min(m, n)) for m in shape)


def field_norm(v: VectorField, spec: NormSpec, grid: Grid, mask: CellMask | None = None) -> float:
    """Midpoint-rule Lebesgue norm of a face field or its differences.

    Fields are averaged to cell centers and measured with the Euclidean
    magnitude; difference quotients are summed array by array (staggered
    locations are attributed to the lower adjacent cell for region
    weighting, and arrays are truncated to the owned cells).
    """
    keep = _region_cells(spec, grid, mask)
    vol = grid.h**3
    q = float(spec.exponent)
    if spec.kind == "field":
        mag = np.sqrt(_cell_centered(v, grid))
        vals = mag[keep]
        if np.isinf(q):
            return float(vals.max(initial=0.0))
        return float(np.sum(vals**q) * vol) ** (1.0 / q)
    order = 1 if spec.kind == "gradient" else 2
    if np.isinf(q):
        worst = 0.0
        for d, block in _difference_arrays(v, grid, order):
            sel = keep[block]
            if sel.any():
                worst = max(worst, float(np.max(np.abs(d[block][sel]))))
        return worst
    total = 0.0
    for d, block in _difference_arrays(v, grid, order):
        kb = keep[block]
        total += float(np.sum(np.abs(d[block][kb]) ** q))
    return (total * vol) ** (1.0 / q)


# ------------------------------------------------- affine envelope fits


@dataclass
class StateRecord:
    """One converged equilibrium plus the pieces the measurements need."""

    lam: float
    u: VectorField
    lifting: VectorField
    grid: Grid
    mask: CellMask
    theta: float = 0.0
    history: dict | None = None


@dataclass
class BoundFitReport:
    s: float
    lambdas: list
    quantities: dict
    envelope: float
    envelope_lower_half: float
    margins: dict
    passes: bool


def verify_affine_bounds(records: list, s: float = 4.0 / 3.0) -> BoundFitReport:
    """Fit the smallest C with y(lam) <= C (1 + lam) for three norms.

    The measured quantities are the gradient energy norm, the scaled
    L4 norm of the lifted field, and the scaled gradient norm with
    exponent 4s/(4-s); the scalings are the smallness coefficients.
    A single envelope constant must cover every lambda; stability is
    probed by refitting on the lower half of the grid.
    """
    if not 1.0 < s < 2.0:
        raise ValueError(f"s must lie in (1, 2), got {s}")
    if not records:
        raise ValueError("need at least one state record")
    dims = {(r.grid.radius_R, r.grid.n) for r in records}
    if len(dims) != 1:
        raise ValueError(f"records mix grids: {sorted(dims)}")
    records = sorted(records, key=lambda r: r.lam)
    grid = records[0].grid
    r_exp = 4.0 * s / (4.0 - s)
    names = ("grad_l2", "field_l4_scaled", "grad_lr_scaled")
    quantities = {name: [] for name in names}
    lambdas = []
    for rec in records:
        w = rec.u + rec.lifting
        a1, a2 = smallness_coefficients(rec.lam)
        quantities["grad_l2"].append(field_norm(w, NormSpec("gradient", 2.0), grid, rec.mask))
        quantities["field_l4_scaled"].append(
            a1 * field_norm(w, NormSpec("field", 4.0), grid, rec.mask)
        )
        quantities["grad_lr_scaled"].append(
            a2 * field_norm(w, NormSpec("gradient", r_exp), grid, rec.mask)
        )
        lambdas.append(rec.lam)

    def envelope_of(idx):
        c = 0.0
        for name in names:
            for i in idx:
                c = max(c, quantities[name][i] / (1.0 + lambdas[i]))
        return c

    all_idx = range(len(lambdas))
    env = envelope_of(all_idx)
    lower = envelope_of(range(max(1, len(lambdas) // 2)))
    margins = {
        name: [quantities[name][i] / (env * (1.0 + lambdas[i])) for i in all_idx]
        for name in names
    }
    return BoundFitReport(
        s=s,
        lambdas=lambdas,
        quantities=quantities,
        envelope=env,
        envelope_lower_half=lower,
        margins=margins,
        passes=bool(np.isfinite(env) and env > 0.0),
    )


# ------------------------------------------------- multi-start dispersion


def random_divergence_free(grid: Grid, seed: int, r_inner: float, amplitude: float) -> VectorField:
    """Curl of a windowed random edge potential; exactly divergence free.

    The potential vanishes inside r_inner and within two cells of the
    outer boundary, so the curl lives in the fluid annulus. Rough by
    construction, which is the point of a basin-exploration start.
    """
    rng = np.random.default_rng(seed)
    n, h = grid.n, grid.h
    faces, cells = grid.face_coords(), grid.cell_coords()
    cap = grid.radius_R - 2.0 * h

    def window(x, y, z):
        X, Y, Z = np.meshgrid(x, y, z, indexing="ij", sparse=True)
        r = np.sqrt(X * X + Y * Y + Z * Z)
        return (r > r_inner) & (r < cap)

    # vector potential on edges: component along axis a lives on cell
    # centers in a and face planes transversally
    pots = []
    for a in range(3):
        coords = [cells if ax == a else faces for ax in range(3)]
        shape = tuple(len(c) for c in coords)
        pots.append(rng.normal(size=shape) * window(*coords))
    ax_, ay_, az_ = pots

    def d(arr, axis):
        return np.diff(arr, axis=axis) / h

    curl = VectorField(
        d(az_, 1) - d(ay_, 2),
        d(ax_, 2) - d(az_, 0),
        d(ay_, 0) - d(ax_, 1),
    )
    scale = h1_seminorm(curl, h)
    if scale == 0.0:
        raise ValueError("window annihilated the potential; enlarge the annulus")
    return curl * (amplitude / scale)


@dataclass
class StartResult:
    label: str
    converged: bool
    theta: float
    iterations: int
    message: str = ""


@dataclass
class DispersionReport:
    starts: list
    dtheta_max: float
    ddelta_max: float
    dgrad_max: float
    grad_scale: float
    all_converged: bool
    passes: bool


def uniqueness_experiment(
    params: Params,
    grid: Grid,
    mask: CellMask,
    shape,
    cfg,
    initializations: list,
    opts: PicardOptions | None = None,
    threads: int = 1,
    pass_factor: float = 100.0,
) -> DispersionReport:
    """Solve from several starts and report the pairwise dispersion.

    initializations holds ("zero",), ("stokes",), ("theta", value) or
    ("random", seed, amplitude) tuples; theta starts from a Stokes-like
    zero field at the offset angle, random adds a seeded divergence-free
    perturbation supported in the fluid annulus. Passing means every
    start converged and all pairwise gaps sit within pass_factor times
    the iteration tolerances.
    """
    if len(initializations) < 3:
        raise ValueError("need at least three initializations")
    base = PicardOptions() if opts is None else opts
    stokes_cache = {}

    def stokes_state():
        if "state" not in stokes_cache:
            b = far_field_direction(0.0, params)
            L = build_lifting(grid, mask, shape, b, cfg)
            f = forcing_f_lambda(0.0, L, b, grid)
            u0, p0, _ = solve_oseen(grid, mask, 0.0, -b, f, base.solver)
            stokes_cache["state"] = EquilibriumState(u0, p0, 0.0)
        return stokes_cache["state"]

    def options_for(spec):
        kind = spec[0]
        if kind == "zero":
            return _with_init(base, "zero", None), "zero"
        if kind == "stokes":
            return _with_init(base, "stokes", None), "stokes"
        if kind == "theta":
            st0 = stokes_state()
            state = EquilibriumState(st0.u.copy(), st0.p.copy(), float(spec[1]))
            return _with_init(base, "custom", state), f"theta={spec[1]:g}"
        if kind == "random":
            seed, amp = int(spec[1]), float(spec[2])
            pert = random_divergence_free(grid, seed, 2.0 * cfg.rho0, amp)
            st0 = stokes_state()
            state = EquilibriumState(st0.u + pert, st0.p.copy(), st0.theta)
            return _with_init(base, "custom", state), f"random seed={seed}"
        raise ValueError(f"unknown initialization {spec!r}")

    jobs = [options_for(spec) for spec in initializations]

    def run(job):
        o, label = job
        try:
            state, hist = solve_equilibrium(params, grid, mask, shape, cfg, o)
            return label, state, hist, ""
        except PicardFailure as exc:
            return label, exc.state, exc.history, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]

    starts = [
        StartResult(
            label=label,
            converged=not msg,
            theta=state.theta,
            iterations=len(hist["du_rel"]),
            message=msg,
        )
        for label, state, hist, msg in outcomes
    ]
    good = [(label, st) for (label, st, _, msg) in outcomes if not msg]
    dtheta = ddelta = dgrad = 0.0
    gscale = max((h1_seminorm(st.u, grid.h) for _, st in good), default=0.0)
    deltas = {
        label: recover_delta(st, params, grid, mask, shape, cfg) for label, st in good
    }
    for i in range(len(good)):
        for j in range(i + 1, len(good)):
            (la, sa), (lb, sb) = good[i], good[j]
            dtheta = max(dtheta, abs(sa.theta - sb.theta))
            ddelta = max(ddelta, float(np.linalg.norm(deltas[la] - deltas[lb])))
            dgrad = max(dgrad, h1_seminorm(sa.u - sb.u, grid.h))
    all_ok = all(s.converged for s in starts)
    tol_grad = pass_factor * base.tol_u * max(gscale, 1.0)
    passes = (
        all_ok
        and len(good) == len(starts)
        and dtheta <= pass_factor * base.tol_theta
        and dgrad <= tol_grad
    )
    return DispersionReport(
        starts=starts,
        dtheta_max=dtheta,
        ddelta_max=ddelta,
        dgrad_max=dgrad,
        grad_scale=gscale,
        all_converged=all_ok,
        passes=passes,
    )


def _with_init(base: PicardOptions, init: str, state):
    return dataclasses.replace(base, init=init, init_state=state)


def threshold_bisect(
    make_params,
    grid: Grid,
    mask: CellMask,
    shape,
    cfg,
    initializations: list,
    lam_lo: float,
    lam_hi: float,
    steps: int = 6,
    opts: PicardOptions | None = None,
) -> dict:
    """Bisect upward for the first lambda where multi-start agreement breaks.

    make_params(lam) builds the parameter set. A level counts as beyond
    the threshold when any start diverges or the dispersion check fails.
    Returns the probe log and the bracketing interval.
    """
    log = []

    def ok(lam):
        rep = uniqueness_experiment(
            make_params(lam), grid, mask, shape, cfg, initializations, opts
        )
        log.append(
            {
                "lam": lam,
                "ok": bool(rep.passes),
                "dtheta_max": rep.dtheta_max,
                "dgrad_max": rep.dgrad_max,
                "all_converged": rep.all_converged,
            }
        )
        return rep.passes

    if not ok(lam_lo):
        return {"lam_lo": lam_lo, "lam_hi": lam_lo, "log": log, "bracketed": False}
    if ok(lam_hi):
        return {"lam_lo": lam_hi, "lam_hi": lam_hi, "log": log, "bracketed": False}
    lo, hi = lam_lo, lam_hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return {"lam_lo": lo, "lam_hi": hi, "log": log, "bracketed": True}


# ------------------------------------------------- contraction profiles


def contraction_ratios(history: dict, tol_u: float = 1e-8, floor_factor: float = 50.0) -> np.ndarray:
    """Per-iteration step ratios |w_{k+1}-w_k| / |w_k-w_{k-1}|.

    Works on the gradient-seminorm step sizes stored by the driver.
    Entries within floor_factor of the solve tolerance are dropped; a
    run with fewer than three sweeps yields an empty profile.
    """
    du = np.asarray(history.get("du_rel", ()), dtype=float)
    if du.size < 3:
        return np.zeros(0)
    floor = floor_factor * tol_u
    out = []
    for a, b in zip(du, du[1:]):
        if a > floor and b > floor:
            out.append(b / a)
    return np.asarray(out)


def contraction_rate(history: dict, tol_u: float = 1e-8, floor_factor: float = 10.0) -> float:
    """Asymptotic per-sweep contraction factor of one driver history.

    Point ratios of consecutive steps oscillate when the coupled update
    spirals (the step norm then carries a period-two overlay), so the
    rate is taken as the least-squares slope of log step size against
    sweep index instead. Only the leading entries above
    floor_factor * tol_u enter the fit; below that the steps measure
    the stopping rule, not the map. Fewer than three usable sweeps
    give nan.
    """
    du = np.asarray(history.get("du_rel", ()), dtype=float)
    floor = floor_factor * tol_u
    keep = du.size
    for i, v in enumerate(du):
        if not v > floor:
            keep = i
            break
    du = du[:keep]
    if du.size < 3:
        return float("nan")
    slope = np.polyfit(np.arange(du.size), np.log(du), 1)[0]
    return float(np.exp(slope))


@dataclass
class ContractionReport:
    lambdas: list
    rates: list
    exponent: float
    prefactor: float
    monotone: bool


def contraction_profile(histories: dict, tol_u: float = 1e-8, lam_max_fit: float = 0.1) -> ContractionReport:
    """Summarize fitted contraction rates over a lambda grid.

    histories maps lambda to a driver history. The exponent comes from a
    log-log fit of rate against lambda restricted to lam <= lam_max_fit;
    the prefactor is the median of rate * a1 / (lam (1 + lam)) with a1
    the first smallness coefficient.
    """
    lams = sorted(histories)
    rates = [contraction_rate(histories[lam], tol_u=tol_u) for lam in lams]
    pairs = [
        (lam, rate)
        for lam, rate in zip(lams, rates)
        if np.isfinite(rate) and rate > 0.0 and lam > 0.0
    ]
    fit_pairs = [(lam, rate) for lam, rate in pairs if lam <= lam_max_fit]
    if len(fit_pairs) >= 2:
        xs = np.log([p[0] for p in fit_pairs])
        ys = np.log([p[1] for p in fit_pairs])
        exponent = float(np.polyfit(xs, ys, 1)[0])
    else:
        exponent = float("nan")
    pres = [
        rate * smallness_coefficients(lam)[0] / (lam * (1.0 + lam)) for lam, rate in pairs
    ]
    finite = [r for r in rates if np.isfinite(r)]
    monotone = all(b >= a * (1.0 - 1e-9) for a, b in zip(finite, finite[1:]))
    return ContractionReport(
        lambdas=lams,
        rates=rates,
        exponent=exponent,
        prefactor=float(np.median(pres)) if pres else float("nan"),
        monotone=monotone,
    )


# ----------------------------------------------------- far-field decay


def shell_decay_profile(
    w: VectorField, grid: Grid, mask: CellMask, r_min: float, nshells: int = 8
):
    """Shell averages of |w| between r_min and the inscribed sphere.

    w should be the lifted velocity (physical plus stream), whose decay
    toward zero is the computable stand-in for far-field summability.
    Returns (shell mid radii, mean magnitude per shell); shells beyond
    the box's inscribed sphere would be clipped by the corners and are
    excluded.
    """
    if nshells < 2:
        raise ValueError("need at least two shells")
    r_max = grid.radius_R
    if r_min >= r_max:
        raise ValueError(f"r_min {r_min} must sit inside the box radius {r_max}")
    mag = np.sqrt(_cell_centered(w, grid))
    X, Y, Z = grid.cell_mesh()
    r = np.sqrt(X * X + Y * Y + Z * Z)
    edges = np.linspace(r_min, r_max, nshells + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    means = np.full(nshells, np.nan)
    keep = mask.fluid
    for i in range(nshells):
        sel = keep & (r >= edges[i]) & (r < edges[i + 1])
        if np.count_nonzero(sel):
            means[i] = float(np.mean(mag[sel]))
    return mids, means
