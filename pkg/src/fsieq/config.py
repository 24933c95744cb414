"""Run configuration: JSON in, validated objects out.

Validation is collect-everything: a bad file reports every problem in
one pass instead of failing at the first. Defaults are documented here
and nowhere else: solver tol_rel 1e-9, Picard damping 1 for lam <= 0.05
and 0.5 above, envelope exponent s = 4/3, lifting radii slightly above
the body diameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .equilibrium import PicardOptions
from .grid import Box, Sphere, build_grid
from .lifting import LiftingConfig, lifting_violations
from .oseen import LinearSolveOptions
from .params import Params

SCENARIOS = (
    "single_equilibrium",
    "lambda_sweep",
    "invading_sweep",
    "uniqueness",
    "bound_verification",
    "property_suite",
)

DAMPING_EASY = 1.0
DAMPING_STIFF = 0.5
DAMPING_SPLIT = 0.05
DEFAULT_S = 4.0 / 3.0
DEFAULT_TOL_REL = 1e-9


class ConfigError(ValueError):
    """Carries the full list of validation complaints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class RunConfig:
    scenario: str
    shape: object
    grid_R: float | None
    grid_n: int | None
    radii: tuple | None
    cells_per_unit: int | None
    params: Params
    lifting: LiftingConfig
    solver: LinearSolveOptions
    picard_fields: dict
    lambdas: tuple
    initializations: tuple
    output_dir: str
    seed: int
    deterministic: bool
    dump_fields: bool
    figures: bool
    s_exponent: float
    raw: dict = field(repr=False, default_factory=dict)

    def picard_for(self, lam: float) -> PicardOptions:
        """Picard options with the damping default resolved for one lam."""
        kv = dict(self.picard_fields)
        kv.setdefault("solver", self.solver)
        if "damping" not in kv:
            kv["damping"] = DAMPING_EASY if lam <= DAMPING_SPLIT else DAMPING_STIFF
        return PicardOptions(**kv)


def _shape_from(block, problems):
    if not isinstance(block, dict) or "kind" not in block:
        problems.append("body: need an object with a 'kind' of sphere or box")
        return None
    kind = block.get("kind")
    try:
        if kind == "sphere":
            return Sphere(float(block["radius"]))
        if kind == "box":
            ext = block["half_extents"]
            return Box(tuple(float(x) for x in ext))
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"body: {exc}")
        return None
    problems.append(f"body: unknown kind {kind!r}, expected sphere or box")
    return None


def _build(cls, block, label, problems, **extra):
    kv = dict(block or {})
    kv.update(extra)
    try:
        return cls(**kv)
    except (TypeError, ValueError) as exc:
        problems.append(f"{label}: {exc}")
        return None


def validate_config(raw: dict):
    """Parse a raw dict into a RunConfig, collecting every violation."""
    problems = []
    if not isinstance(raw, dict):
        return None, ["top level must be a JSON object"]

    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        problems.append(
            f"scenario: unknown value {scenario!r}; valid scenarios are {', '.join(SCENARIOS)}"
        )

    shape = _shape_from(raw.get("body"), problems)

    gblock = raw.get("grid")
    grid_R = grid_n = radii = cells = None
    if not isinstance(gblock, dict):
        problems.append("grid: need an object with R and n, or radii and cells_per_unit")
    else:
        if "radii" in gblock:
            try:
                radii = tuple(float(r) for r in gblock["radii"])
                cells = int(gblock["cells_per_unit"])
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"grid: {exc}")
        else:
            try:
                grid_R = float(gblock["R"])
                grid_n = int(gblock["n"])
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"grid: {exc}")
    if scenario == "invading_sweep" and radii is None:
        problems.append("grid: invading_sweep needs radii and cells_per_unit")
    if scenario in SCENARIOS and scenario not in ("invading_sweep",) and grid_R is None and radii is not None:
        problems.append(f"grid: scenario {scenario} needs a single R and n")

    pblock = dict(raw.get("params") or {})
    if "b_tilde" in pblock:
        pblock["b_tilde"] = tuple(float(x) for x in pblock["b_tilde"])
    if "stiffness" in pblock:
        pblock["stiffness"] = [[float(x) for x in row] for row in pblock["stiffness"]]
    params = _build(Params, pblock, "params", problems)

    lblock = raw.get("lifting")
    if lblock is None and shape is not None:
        rho = 1.05 * shape.diameter
        lifting = LiftingConfig(rho, rho)
    else:
        lifting = _build(LiftingConfig, lblock or {}, "lifting", problems)

    solver = _build(LinearSolveOptions, {"tol_rel": DEFAULT_TOL_REL, **(raw.get("solver") or {})},
                    "solver", problems)

    picard_fields = dict(raw.get("picard") or {})
    probe = dict(picard_fields)
    probe.setdefault("damping", DAMPING_EASY)
    if solver is not None:
        probe.setdefault("solver", solver)
    if _build(PicardOptions, probe, "picard", problems) is None:
        picard_fields = {}

    lambdas = raw.get("lambdas")
    if lambdas is None:
        lambdas = ()
    else:
        try:
            lambdas = tuple(float(x) for x in lambdas)
            if any(x < 0 for x in lambdas):
                problems.append("lambdas: entries must be >= 0")
        except (TypeError, ValueError):
            problems.append("lambdas: must be a list of numbers")
            lambdas = ()
    if scenario in ("lambda_sweep", "bound_verification") and not lambdas:
        problems.append(f"lambdas: scenario {scenario} needs a nonempty lambdas list")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        problems.append(f"seed: must be an integer, got {seed!r}")
        seed = 0

    inits = raw.get("initializations")
    if inits is None:
        inits = (("zero",), ("stokes",), ("theta", 0.5), ("random", seed, 0.5))
    else:
        try:
            inits = tuple(tuple(spec) for spec in inits)
            known = {"zero", "stokes", "theta", "random"}
            for spec in inits:
                if not spec or spec[0] not in known:
                    problems.append(f"initializations: unknown start {spec!r}")
        except TypeError:
            problems.append("initializations: must be a list of [kind, args...] entries")
            inits = ()

    s_exp = raw.get("s", DEFAULT_S)
    if not isinstance(s_exp, (int, float)) or not 1.0 < float(s_exp) < 2.0:
        problems.append(f"s: envelope exponent must lie in (1, 2), got {s_exp!r}")
        s_exp = DEFAULT_S

    # cross-field geometry checks need shape, lifting and a grid
    if shape is not None and lifting is not None:
        boxes = []
        if grid_R is not None and grid_n is not None:
            boxes.append((grid_R, grid_n))
        if radii and cells:
            boxes.extend((r, int(round(2 * r * cells))) for r in radii)
        for R, n in boxes:
            if shape.diameter >= 2.0 * R:
                problems.append(
                    f"body: diameter {shape.diameter:g} does not fit the grid box of half-width {R:g}"
                )
                continue
            try:
                g = build_grid(R, n)
            except ValueError as exc:
                problems.append(f"grid: R={R:g}: {exc}")
                continue
            for v in lifting_violations(lifting, shape, g):
                problems.append(f"lifting: at R={R:g}: {v}")

    if problems:
        return None, problems
    cfg = RunConfig(
        scenario=scenario,
        shape=shape,
        grid_R=grid_R,
        grid_n=grid_n,
        radii=radii,
        cells_per_unit=cells,
        params=params,
        lifting=lifting,
        solver=solver,
        picard_fields=picard_fields,
        lambdas=lambdas,
        initializations=inits,
        output_dir=str(raw.get("output_dir", "fsieq-out")),
        seed=seed,
        deterministic=bool(raw.get("deterministic", False)),
        dump_fields=bool(raw.get("dump_fields", False)),
        figures=bool(raw.get("figures", True)),
        s_exponent=float(s_exp),
        raw=raw,
    )
    return cfg, []


def load_config(path: str) -> RunConfig:
    """Read and validate a JSON config; raises ConfigError with all faults."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])
    cfg, problems = validate_config(raw)
    if problems:
        raise ConfigError(problems)
    return cfg
