"""Physical parameters and the rotation algebra that couples the torsional
angle to the far-field direction and the elastic stiffness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SYM_TOL = 1e-14


def rotation_matrix(theta: float) -> np.ndarray:
    """Rotation by ``theta`` about the first coordinate axis.

    Identity on e1, counterclockwise rotation of the (e2, e3) plane:
    row 2 is (0, cos, -sin), row 3 is (0, sin, cos).
    """
    if not np.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta!r}")
    c = float(np.cos(theta))
    s = float(np.sin(theta))
    return np.array([
        [1.0, 0.0, 0.0],
        [0.0, c, -s],
        [0.0, s, c],
    ])


@dataclass(frozen=True)
class Params:
    """Nondimensional constants of the coupled fluid/body system.

    Attributes
    ----------
    lam : float
        Reynolds number, >= 0. Drives every nonlinear term.
    alpha : float
        Angle of attack between the stream and the rotation axis e1, radians.
    k_torsion : float
        Torsional spring stiffness, > 0.
    mu : float
        Mass ratio multiplying the spring displacement recovery, > 0.
    stiffness : (3, 3) ndarray
        Symmetric positive-definite spring matrix.
    b_tilde : (3,) ndarray
        Unit vector with first component exactly 0; fixes the plane in which
        the stream tilts away from e1.
    """

    lam: float = 0.0
    alpha: float = 0.0
    k_torsion: float = 1.0
    mu: float = 1.0
    stiffness: np.ndarray = field(default_factory=lambda: np.eye(3))
    b_tilde: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "k_torsion", float(self.k_torsion))
        object.__setattr__(self, "mu", float(self.mu))
        A = np.array(self.stiffness, dtype=float)
        b = np.array(self.b_tilde, dtype=float)
        object.__setattr__(self, "stiffness", A)
        object.__setattr__(self, "b_tilde", b)
        problems = []
        if self.lam < 0 or not np.isfinite(self.lam):
            problems.append(f"lam must be >= 0, got {self.lam}")
        if self.k_torsion <= 0:
            problems.append(f"k_torsion must be > 0, got {self.k_torsion}")
        if self.mu <= 0:
            problems.append(f"mu must be > 0, got {self.mu}")
        if A.shape != (3, 3):
            problems.append(f"stiffness must be 3x3, got shape {A.shape}")
        else:
            if np.max(np.abs(A - A.T)) > _SYM_TOL:
                problems.append("stiffness is not symmetric within 1e-14")
            elif np.min(np.linalg.eigvalsh(A)) <= 0.0:
                problems.append("stiffness must be positive definite")
        if b.shape != (3,):
            problems.append(f"b_tilde must be a 3-vector, got shape {b.shape}")
        else:
            if b[0] != 0.0:
                problems.append("b_tilde[0] must be exactly 0")
            if abs(np.linalg.norm(b) - 1.0) > _SYM_TOL:
                problems.append("b_tilde must be a unit vector within 1e-14")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def lambda_hat(self) -> float:
        """Reynolds number scaled by the torsional stiffness, lam / k."""
        return self.lam / self.k_torsion


def far_field_direction(theta: float, params: Params) -> np.ndarray:
    """Stream direction seen from the rotated body frame.

    Q(theta)^T applied to cos(alpha) e1 + sin(alpha) b_tilde. Unit length;
    the first component equals cos(alpha) for every theta.
    """
    b_alpha_fixed = np.array([np.cos(params.alpha), 0.0, 0.0])
    b_alpha_fixed += np.sin(params.alpha) * params.b_tilde
    return rotation_matrix(theta).T @ b_alpha_fixed


def rotated_stiffness(theta: float, params: Params) -> np.ndarray:
    """Spring matrix conjugated into the rotated frame, Q^T A Q."""
    Q = rotation_matrix(theta)
    return Q.T @ params.stiffness @ Q


def stiffness_bounds(params: Params) -> tuple[float, float]:
    """Extreme eigenvalues (rho1, rho2) of the stiffness matrix.

    Sharp two-sided bounds for every Rayleigh quotient of the rotated
    matrix, since conjugation by Q preserves the spectrum.
    """
    eigs = np.linalg.eigvalsh(params.stiffness)
    return float(eigs[0]), float(eigs[-1])


def reynolds_from_physical(V: float, d: float, nu: float) -> float:
    """Reynolds number V * d / nu from a velocity, length and viscosity."""
    if V <= 0 or d <= 0 or nu <= 0:
        raise ValueError(f"V, d, nu must all be > 0, got {(V, d, nu)}")
    return V * d / nu


def smallness_coefficients(lam: float) -> tuple[float, float]:
    """The pair (min(1, sqrt(lam)), min(1, lam**(1/4))).

    Both are monotone nondecreasing in lam and capped at 1.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    return min(1.0, float(np.sqrt(lam))), min(1.0, float(lam) ** 0.25)
