"""Discrete differential operators and quadrature on the staggered grid.

All operators are pure functions of raw arrays. Entries they cannot form a
full stencil for (the outermost face/cell layers) are left at zero; the
solvers own the masking of pinned unknowns.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, VectorField


# ------------------------------------------------------------ divergence


def divergence(v: VectorField, h: float) -> np.ndarray:
    """MAC divergence at cell centers, face differences over h."""
    out = (v.x[1:] - v.x[:-1]) / h
    out += (v.y[:, 1:] - v.y[:, :-1]) / h
    out += (v.z[:, :, 1:] - v.z[:, :, :-1]) / h
    return out


def gradient(p: np.ndarray, h: float) -> VectorField:
    """Cell-to-face gradient; zero on the box-skin faces."""
    n = p.shape[0]
    gx = np.zeros((n + 1, n, n))
    gy = np.zeros((n, n + 1, n))
    gz = np.zeros((n, n, n + 1))
    gx[1:n] = (p[1:] - p[:-1]) / h
    gy[:, 1:n] = (p[:, 1:] - p[:, :-1]) / h
    gz[:, :, 1:n] = (p[:, :, 1:] - p[:, :, :-1]) / h
    return VectorField(gx, gy, gz)


def _laplacian_comp(a: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(a)
    core = out[1:-1, 1:-1, 1:-1]
    core += a[2:, 1:-1, 1:-1] + a[:-2, 1:-1, 1:-1]
    core += a[1:-1, 2:, 1:-1] + a[1:-1, :-2, 1:-1]
    core += a[1:-1, 1:-1, 2:] + a[1:-1, 1:-1, :-2]
    core -= 6.0 * a[1:-1, 1:-1, 1:-1]
    core /= h * h
    return out


def laplacian(v: VectorField, h: float) -> VectorField:
    """Component-wise 7-point Laplacian; zero on outermost entries."""
    return VectorField(*(_laplacian_comp(a, h) for a in v.comps))


# ------------------------------------------------------------ advection


def _centered_derivatives(a: np.ndarray, h: float):
    """d/dx_j of one face array by centered differences, zero at edges."""
    outs = []
    for axis in range(3):
        d = np.zeros_like(a)
        sl_c = [slice(None)] * 3
        sl_p = [slice(None)] * 3
        sl_m = [slice(None)] * 3
        sl_c[axis] = slice(1, -1)
        sl_p[axis] = slice(2, None)
        sl_m[axis] = slice(None, -2)
        d[tuple(sl_c)] = (a[tuple(sl_p)] - a[tuple(sl_m)]) / (2.0 * h)
        outs.append(d)
    return outs


def _upwind_derivative(a: np.ndarray, t: np.ndarray | float, axis: int, h: float) -> np.ndarray:
    """First-order upwind d a / d x_axis biased by the sign of t."""
    d = np.zeros_like(a)
    sl_c = [slice(None)] * 3
    sl_p = [slice(None)] * 3
    sl_m = [slice(None)] * 3
    sl_c[axis] = slice(1, -1)
    sl_p[axis] = slice(2, None)
    sl_m[axis] = slice(None, -2)
    fwd = (a[tuple(sl_p)] - a[tuple(sl_c)]) / h
    bwd = (a[tuple(sl_c)] - a[tuple(sl_m)]) / h
    tt = t[tuple(sl_c)] if isinstance(t, np.ndarray) else t
    d[tuple(sl_c)] = np.where(np.asarray(tt) > 0, bwd, fwd)
    return d


def _avg_to_face(src: np.ndarray, src_axis: int, dst_axis: int) -> np.ndarray:
    """Average the src face component onto the dst component's face lattice.

    Both lattices are offset by half a cell along src_axis and dst_axis, so
    a 4-point average over those two axes lands on the dst face centers.
    Entries without a full stencil stay zero.
    """
    n = src.shape[src_axis] - 1
    dst_shape = [n, n, n]
    dst_shape[dst_axis] += 1
    out = np.zeros(tuple(dst_shape))
    # Average over src_axis: faces j and j+1 around each cell.
    sl_a = [slice(None)] * 3
    sl_b = [slice(None)] * 3
    sl_a[src_axis] = slice(None, -1)
    sl_b[src_axis] = slice(1, None)
    cellavg = 0.5 * (src[tuple(sl_a)] + src[tuple(sl_b)])  # cell-centered in src_axis
    # Average over dst_axis: cells i-1 and i around each interior face.
    sl_lo = [slice(None)] * 3
    sl_hi = [slice(None)] * 3
    sl_lo[dst_axis] = slice(None, -1)
    sl_hi[dst_axis] = slice(1, None)
    sl_out = [slice(None)] * 3
    sl_out[dst_axis] = slice(1, -1)
    out[tuple(sl_out)] = 0.5 * (cellavg[tuple(sl_lo)] + cellavg[tuple(sl_hi)])
    return out


def advect(transport, v: VectorField, h: float, scheme: str = "centered") -> VectorField:
    """(transport . grad) v on the MAC lattice.

    transport is either a constant 3-vector or a VectorField; in the latter
    case each component is interpolated to the faces of the advected
    component by 4-point averaging. Centered differences by default, upwind
    biasing on request.
    """
    if scheme not in ("centered", "upwind"):
        raise ValueError(f"unknown convection scheme {scheme!r}")
    constant = not isinstance(transport, VectorField)
    if constant:
        c = np.asarray(transport, dtype=float)
    outs = []
    for i, a in enumerate(v.comps):
        acc = np.zeros_like(a)
        for j in range(3):
            if constant:
                tj = c[j]
                if tj == 0.0:
                    continue
            else:
                src = transport.comps[j]
                tj = src if i == j else _avg_to_face(src, j, i)
            if scheme == "upwind":
                acc += tj * _upwind_derivative(a, tj, j, h)
                continue
            sl_c = [slice(None)] * 3
            sl_p = [slice(None)] * 3
            sl_m = [slice(None)] * 3
            sl_c[j] = slice(1, -1)
            sl_p[j] = slice(2, None)
            sl_m[j] = slice(None, -2)
            d = (a[tuple(sl_p)] - a[tuple(sl_m)]) / (2.0 * h)
            if constant:
                acc[tuple(sl_c)] += tj * d
            else:
                acc[tuple(sl_c)] += tj[tuple(sl_c)] * d
        outs.append(acc)
    return VectorField(*outs)


# ------------------------------------------------------------ curl


def curl_from_edges(ax: np.ndarray, ay: np.ndarray, az: np.ndarray, h: float) -> VectorField:
    """Discrete curl of an edge-sampled potential; exactly divergence-free.

    Edge arrays: ax on x-edges (n, n+1, n+1), ay on y-edges (n+1, n, n+1),
    az on z-edges (n+1, n+1, n). Result lives on faces.
    """
    fx = (az[:, 1:, :] - az[:, :-1, :]) / h - (ay[:, :, 1:] - ay[:, :, :-1]) / h
    fy = (ax[:, :, 1:] - ax[:, :, :-1]) / h - (az[1:, :, :] - az[:-1, :, :]) / h
    fz = (ay[1:, :, :] - ay[:-1, :, :]) / h - (ax[:, 1:, :] - ax[:, :-1, :]) / h
    return VectorField(fx, fy, fz)


# ------------------------------------------------------------ quadrature


def integrate_scalar(f: np.ndarray, h: float, where: np.ndarray | None = None) -> float:
    """Midpoint-rule cell integral, optionally restricted to a cell mask."""
    if where is None:
        return float(f.sum() * h**3)
    return float(f[where].sum() * h**3)


def integrate_dot(v: VectorField, w: VectorField, h: float) -> float:
    """Midpoint-rule L2 pairing of two face fields."""
    s = 0.0
    for a, b in zip(v.comps, w.comps):
        s += float(a.ravel().dot(b.ravel()))
    return s * h**3


def strain_inner(v: VectorField, w: VectorField, h: float) -> float:
    """Discrete integral of grad v : grad w.

    Forward differences over every internal jump of each component, so the
    pairing is exactly the summation-by-parts adjoint of the 7-point
    Laplacian with pinned zero boundaries. For divergence-free fields with
    one factor compactly supported this equals twice the deformation-tensor
    pairing of the continuous calculus.
    """
    s = 0.0
    for a, b in zip(v.comps, w.comps):
        for axis in range(3):
            da = np.diff(a, axis=axis)
            db = np.diff(b, axis=axis)
            s += float(da.ravel().dot(db.ravel()))
    return s * h


def h1_seminorm(v: VectorField, h: float) -> float:
    """Discrete H1 seminorm, sqrt of strain_inner(v, v)."""
    return float(np.sqrt(max(strain_inner(v, v, h), 0.0)))


def l2_norm(v: VectorField, h: float) -> float:
    return float(np.sqrt(max(integrate_dot(v, v, h), 0.0)))
