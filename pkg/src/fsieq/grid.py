"""Truncated-box geometry on a staggered (MAC) grid.

Cells carry pressure at their centers; velocity components live on the cell
faces normal to their axis. The outermost cell layer acts as the fictitious
outer boundary, the voxelized body as the inner one. Velocity unknowns are
the faces whose two neighbor cells are both fluid; every other face is
pinned to boundary data by the solvers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SOLID = 0
FLUID = 1
OUTER = 2


# ---------------------------------------------------------------- shapes


@dataclass(frozen=True)
class Sphere:
    """Ball of given radius centered at the origin."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")

    def contains(self, x, y, z):
        return x * x + y * y + z * z <= self.radius**2

    def distance(self, x, y, z):
        """Signed distance, negative inside."""
        return np.sqrt(x * x + y * y + z * z) - self.radius

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def reach(self) -> tuple[float, float, float]:
        """Half-extent of the axis-aligned bounding box."""
        return (self.radius,) * 3


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with given half-extents, centered at the origin."""

    half_extents: tuple[float, float, float]

    def __post_init__(self):
        he = tuple(float(e) for e in self.half_extents)
        if len(he) != 3 or min(he) <= 0:
            raise ValueError(f"half_extents must be 3 positive lengths, got {self.half_extents}")
        object.__setattr__(self, "half_extents", he)

    def contains(self, x, y, z):
        ex, ey, ez = self.half_extents
        return (np.abs(x) <= ex) & (np.abs(y) <= ey) & (np.abs(z) <= ez)

    def distance(self, x, y, z):
        """Exact signed Euclidean distance, negative inside."""
        ex, ey, ez = self.half_extents
        qx = np.abs(x) - ex
        qy = np.abs(y) - ey
        qz = np.abs(z) - ez
        outside = np.sqrt(
            np.maximum(qx, 0.0) ** 2 + np.maximum(qy, 0.0) ** 2 + np.maximum(qz, 0.0) ** 2
        )
        inside = np.minimum(np.maximum(qx, np.maximum(qy, qz)), 0.0)
        return outside + inside

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.linalg.norm(self.half_extents))

    @property
    def reach(self) -> tuple[float, float, float]:
        return self.half_extents


# ---------------------------------------------------------------- grid


@dataclass(frozen=True)
class Grid:
    """Uniform grid of n^3 cells over the box [-R, R]^3."""

    radius_R: float
    n: int

    @property
    def h(self) -> float:
        return 2.0 * self.radius_R / self.n

    def cell_coords(self) -> np.ndarray:
        """Cell-center coordinates along one axis, length n."""
        return -self.radius_R + (np.arange(self.n) + 0.5) * self.h

    def face_coords(self) -> np.ndarray:
        """Face-plane coordinates along one axis, length n + 1."""
        return -self.radius_R + np.arange(self.n + 1) * self.h

    def face_mesh(self, axis: int):
        """Sparse meshgrid (X, Y, Z) of face centers for one velocity component."""
        coords = [self.cell_coords()] * 3
        coords[axis] = self.face_coords()
        return np.meshgrid(*coords, indexing="ij", sparse=True)

    def cell_mesh(self):
        c = self.cell_coords()
        return np.meshgrid(c, c, c, indexing="ij", sparse=True)

    def edge_mesh(self, axis: int):
        """Sparse meshgrid of edge midpoints for edges running along ``axis``."""
        coords = [self.face_coords()] * 3
        coords[axis] = self.cell_coords()
        return np.meshgrid(*coords, indexing="ij", sparse=True)


def build_grid(R: float, n: int) -> Grid:
    """Uniform grid over [-R, R]^3 with an even number of cells per axis."""
    if R <= 0:
        raise ValueError(f"R must be > 0, got {R}")
    if n % 2 != 0 or n < 16:
        raise ValueError(f"n must be even and >= 16, got {n}")
    return Grid(float(R), int(n))


# ---------------------------------------------------------------- fields


def face_shape(n: int, axis: int) -> tuple[int, int, int]:
    s = [n, n, n]
    s[axis] += 1
    return tuple(s)


@dataclass
class VectorField:
    """MAC-staggered vector field: one array per face orientation."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        n = grid.n
        return cls(
            np.zeros(face_shape(n, 0)),
            np.zeros(face_shape(n, 1)),
            np.zeros(face_shape(n, 2)),
        )

    @property
    def comps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.x, self.y, self.z)

    def copy(self) -> "VectorField":
        return VectorField(self.x.copy(), self.y.copy(), self.z.copy())

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, a: float) -> "VectorField":
        return VectorField(a * self.x, a * self.y, a * self.z)

    __rmul__ = __mul__


# ---------------------------------------------------------------- mask


class CellMask:
    """Cell and face classification for one voxelized body on one grid.

    Faces are active (true unknowns) when both neighbor cells are fluid.
    ``body_x/y/z`` flag solid/fluid interface faces, the discrete body
    surface used by traction quadrature.
    """

    def __init__(self, grid: Grid, kind: np.ndarray):
        n = grid.n
        if kind.shape != (n, n, n):
            raise ValueError("kind array does not match grid")
        self.grid = grid
        self.kind = kind
        self.fluid = kind == FLUID
        self.solid = kind == SOLID
        fl = self.fluid
        sol = self.solid

        self.active_x = np.zeros(face_shape(n, 0), dtype=bool)
        self.active_x[1:n] = fl[:-1] & fl[1:]
        self.active_y = np.zeros(face_shape(n, 1), dtype=bool)
        self.active_y[:, 1:n] = fl[:, :-1] & fl[:, 1:]
        self.active_z = np.zeros(face_shape(n, 2), dtype=bool)
        self.active_z[:, :, 1:n] = fl[:, :, :-1] & fl[:, :, 1:]

        self.body_x = np.zeros(face_shape(n, 0), dtype=bool)
        self.body_x[1:n] = (sol[:-1] & fl[1:]) | (fl[:-1] & sol[1:])
        self.body_y = np.zeros(face_shape(n, 1), dtype=bool)
        self.body_y[:, 1:n] = (sol[:, :-1] & fl[:, 1:]) | (fl[:, :-1] & sol[:, 1:])
        self.body_z = np.zeros(face_shape(n, 2), dtype=bool)
        self.body_z[:, :, 1:n] = (sol[:, :, :-1] & fl[:, :, 1:]) | (fl[:, :, :-1] & sol[:, :, 1:])

        # Float masks for cheap zeroing of pinned entries in the solvers.
        self.actf = tuple(a.astype(float) for a in (self.active_x, self.active_y, self.active_z))
        self.fluidf = self.fluid.astype(float)

        # Body surface faces grouped by (axis, fluid side sign) for traction
        # quadrature; sign +1 means the fluid cell sits at the larger index.
        self.surface: dict[tuple[int, int], tuple[np.ndarray, ...]] = {}
        for axis in range(3):
            sl = [slice(None)] * 3
            sf = [slice(None)] * 3
            sl[axis] = slice(None, -1)
            sf[axis] = slice(1, None)
            sol_lo = sol[tuple(sl)]
            sol_hi = sol[tuple(sf)]
            fl_lo = fl[tuple(sl)]
            fl_hi = fl[tuple(sf)]
            plus = np.nonzero(sol_lo & fl_hi)
            minus = np.nonzero(fl_lo & sol_hi)
            # Convert bounded-cell indices to face indices (+1 along axis).
            for sign, idx in ((+1, plus), (-1, minus)):
                ii = [np.asarray(a) for a in idx]
                ii[axis] = ii[axis] + 1
                self.surface[(axis, sign)] = tuple(ii)

    @property
    def active(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.active_x, self.active_y, self.active_z)

    @property
    def body(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.body_x, self.body_y, self.body_z)

    @property
    def solid_count(self) -> int:
        return int(self.solid.sum())

    def zero_pinned(self, v: VectorField) -> VectorField:
        """Zero every non-active entry of v, in place. Returns v."""
        for arr, m in zip(v.comps, self.actf):
            arr *= m
        return v


def voxelize_body(shape, grid: Grid) -> CellMask:
    """Classify cells against a body shape centered at the origin.

    A cell is solid iff its center lies inside the shape. The outermost cell
    layer is the fictitious outer boundary. The body must keep a margin of at
    least 2h from the box, the fluid region must be connected, and the body
    must be thick enough to occupy at least one cell.
    """
    n, h, R = grid.n, grid.h, grid.radius_R
    for e in shape.reach:
        if e + 2.0 * h >= R:
            raise ValueError(
                f"body reach {e} leaves less than a 2h margin to the box half-width {R}"
            )
    if shape.diameter >= 2.0 * R:
        raise ValueError("body diameter exceeds the computational box")
    X, Y, Z = grid.cell_mesh()
    solid = shape.contains(X, Y, Z)
    kind = np.full((n, n, n), FLUID, dtype=np.uint8)
    kind[solid] = SOLID
    ring = np.zeros((n, n, n), dtype=bool)
    for axis in range(3):
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[axis] = 0
        sl1[axis] = n - 1
        ring[tuple(sl0)] = True
        ring[tuple(sl1)] = True
    if np.any(solid & ring):
        raise ValueError("body touches the outer boundary layer")
    kind[ring] = OUTER
    if not np.any(kind == SOLID):
        raise ValueError("body too small to occupy any cell at this resolution")
    labels, count = ndimage.label(kind == FLUID)
    if count != 1:
        raise ValueError(f"fluid region is not connected ({count} components)")
    return CellMask(grid, kind)


# ---------------------------------------------------------------- io

_KIND_COMPONENTS = {"velocity": 3, "pressure": 1, "scalar": 1}


def write_field_dump(path, grid: Grid, field, kind: str) -> None:
    """Dump a field to a single file: JSON header line, then little-endian
    float64 payload in x-fastest order (per component for vector fields)."""
    if kind in ("velocity",) or isinstance(field, VectorField):
        arrays = list(field.comps)
        kind = "velocity"
    else:
        arrays = [np.asarray(field)]
    header = {
        "dims": [list(a.shape) for a in arrays],
        "spacing": grid.h,
        "R": grid.radius_R,
        "n": grid.n,
        "kind": kind,
        "components": len(arrays),
        "layout": "x-fastest",
        "dtype": "<f8",
    }
    blob = bytearray(json.dumps(header, sort_keys=True).encode() + b"\n")
    for a in arrays:
        blob += np.ascontiguousarray(a.transpose(2, 1, 0), dtype="<f8").tobytes()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(blob))
    import os

    os.replace(tmp, path)


def read_field_dump(path):
    """Inverse of write_field_dump. Returns (header dict, field)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        arrays = []
        for dims in header["dims"]:
            count = int(np.prod(dims))
            a = np.frombuffer(f.read(count * 8), dtype="<f8")
            arrays.append(a.reshape(dims[::-1]).transpose(2, 1, 0).copy())
    if header["components"] == 3:
        return header, VectorField(*arrays)
    return header, arrays[0]


def probe_line_csv(path, grid: Grid, field: np.ndarray, axis: int, index_other: tuple[int, int]) -> None:
    """Write a 1D probe of a cell-centered field along one axis as CSV."""
    import csv

    coords = grid.cell_coords()
    sl = [index_other[0], index_other[1]]
    sl.insert(axis, slice(None))
    values = np.asarray(field)[tuple(sl)]
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["coord", "value"])
        for c, v in zip(coords, values):
            w.writerow([format(c, ".17g"), format(v, ".17g")])
    import os

    os.replace(tmp, path)
