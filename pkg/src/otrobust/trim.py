"""Equilibrium (trim) search for the open-loop longitudinal dynamics.

At a prescribed flight condition (V, alpha) the pitch rate must vanish
(theta_dot = q), leaving three unknowns (theta, T, delta_e) against the
three residual equations (V_dot, alpha_dot, q_dot). The solve is a damped
Gauss-Newton iteration on the scaled residual (V_dot / 100, alpha_dot,
q_dot) constrained to the actuator box (scipy's trust-region-reflective
least squares, central-difference Jacobian).

Thrust frequently rides its 1000 lb floor at low-drag conditions, and parts
of the scheduling envelope admit no exact equilibrium at all (e.g. high V
with the lift coefficient pinned far from weight balance). In both cases
the solver settles on a constrained least-squares stationary point, the
same behaviour a general NLP code reports as success, and the leftover
residual is returned for the caller to judge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .f16 import (
    DEG,
    ELEVATOR_LIMIT,
    THRUST_MAX,
    THRUST_MIN,
    AeroTables,
    AircraftParams,
    ControlInput,
    LongitudinalState,
    _rhs,
)

# Residual scaling: V_dot in ft/s^2 is divided by 100 so the mixed-unit norm
# does not let the force balance drown the angular rates (rad/s^2 terms keep
# unit weight).
V_DOT_SCALE = 100.0

# Pitch attitude is confined to operationally meaningful values. Much of
# the scheduling envelope admits no exact equilibrium; the bound keeps the
# compromise stationary points (and the gains later synthesized about
# them) at sane attitudes instead of chasing near-vertical force balances
# where cos(theta) ~ 0 makes the linearization blind to pitch.
_THETA_LIMIT = 30.0 * DEG

_RTOL = 1e-8   # residual norm regarded as an exact equilibrium
_GTOL = 1e-8   # projected-gradient norm regarded as stationary

_LOWER = np.array([-_THETA_LIMIT, THRUST_MIN, -ELEVATOR_LIMIT])
_UPPER = np.array([_THETA_LIMIT, THRUST_MAX, ELEVATOR_LIMIT])

# Trust-region scaling for the wildly mixed variable magnitudes
# (theta rad, T lb, delta_e rad); without it the thrust axis swallows
# the trust radius and the solve stalls far from stationarity.
_X_SCALE = np.array([0.5, 5000.0, 0.2])


@dataclass(frozen=True)
class TrimPoint:
    """Result of a trim solve.

    residual is the scaled norm ||(V_dot/100, alpha_dot, q_dot)|| at the
    returned point; optimality is the projected-gradient infinity norm of
    the bound-constrained least-squares problem (zero at a constrained
    stationary point). converged means either an equilibrium to 1e-8 or
    first-order stationarity (projected gradient below 1e-8, relaxed to
    1e-7 relative at large-residual minima where the finite-difference
    gradient bottoms out at roundoff of the objective); flight conditions
    with no exact equilibrium end in the second branch with a nonzero
    residual.
    """

    x_trim: LongitudinalState
    u_trim: ControlInput
    residual: float
    converged: bool
    optimality: float = float("nan")
    iterations: int = 0

    def to_dict(self) -> dict:
        """Degree-based JSON form (file/CLI boundary)."""
        return {
            "theta_deg": self.x_trim.theta / DEG,
            "V": self.x_trim.V,
            "alpha_deg": self.x_trim.alpha / DEG,
            "q_dps": self.x_trim.q / DEG,
            "T": self.u_trim.T,
            "delta_e_deg": self.u_trim.delta_e / DEG,
            "residual": self.residual,
            "optimality": self.optimality,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrimPoint":
        return cls(
            x_trim=LongitudinalState(d["theta_deg"] * DEG, d["V"],
                                     d["alpha_deg"] * DEG, d["q_dps"] * DEG),
            u_trim=ControlInput(d["T"], d["delta_e_deg"] * DEG),
            residual=d["residual"],
            converged=d["converged"],
            optimality=d.get("optimality", float("nan")),
            iterations=d.get("iterations", 0),
        )


def _residual(z: np.ndarray, V: float, alpha: float, params: AircraftParams,
              tables: AeroTables) -> np.ndarray:
    theta, T, de = z
    x = np.array([theta, V, alpha, 0.0])
    u = np.array([T, de])
    xdot = _rhs(x, u, params.m, params.xcg, params.Jyy, params, tables)
    return np.array([xdot[1] / V_DOT_SCALE, xdot[2], xdot[3]])


def _jacobian(z: np.ndarray, V: float, alpha: float, params: AircraftParams,
              tables: AeroTables) -> np.ndarray:
    J = np.empty((3, 3))
    for k in range(3):
        h = 1e-6 * max(1.0, abs(z[k]))
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        J[:, k] = (_residual(zp, V, alpha, params, tables)
                   - _residual(zm, V, alpha, params, tables)) / (2.0 * h)
    return J


def _projected_gradient(z: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient with components pointing out of an active bound zeroed."""
    pg = g.copy()
    at_lo = z <= _LOWER + 1e-10 * np.maximum(1.0, np.abs(_LOWER))
    at_hi = z >= _UPPER - 1e-10 * np.maximum(1.0, np.abs(_UPPER))
    pg[at_lo & (pg > 0)] = 0.0
    pg[at_hi & (pg < 0)] = 0.0
    return pg


def find_trim(V: float, alpha: float, params: AircraftParams | None = None,
              tables: AeroTables | None = None) -> TrimPoint:
    """Trim the plant at velocity V (ft/s) and angle of attack alpha (rad).

    Minimizes the scaled residual over (theta, T, delta_e) subject to the
    actuator box, starting from theta = alpha, T = 5000 lb, delta_e = 0.
    Deterministic (fixed iteration policy, no randomness), and the reported
    residual never exceeds the residual of the initial guess.
    """
    params = params or AircraftParams()
    tables = tables or AeroTables.default()
    if not (V > 0 and math.isfinite(V) and math.isfinite(alpha)):
        raise ValueError(f"invalid flight condition V={V}, alpha={alpha}")

    z = np.clip(np.array([alpha, 5000.0, 0.0]), _LOWER, _UPPER)
    nfev = 0
    rnorm = optimality = float("inf")
    # A warm restart re-inflates the trust region and polishes the last
    # digits of stationarity at awkward (no-equilibrium) conditions.
    for _ in range(3):
        sol = least_squares(
            _residual, z,
            jac=lambda z, *a: _jacobian(z, *a),
            bounds=(_LOWER, _UPPER),
            args=(V, alpha, params, tables),
            method="trf",
            x_scale=_X_SCALE,
            ftol=1e-15, xtol=1e-15, gtol=1e-14,
            max_nfev=600,
        )
        nfev += int(sol.nfev)
        z = sol.x
        r = _residual(z, V, alpha, params, tables)
        rnorm = float(np.linalg.norm(r))
        g = _jacobian(z, V, alpha, params, tables).T @ r
        optimality = float(np.max(np.abs(_projected_gradient(z, g))))
        if rnorm < _RTOL or optimality < _GTOL:
            break
    converged = rnorm < _RTOL or optimality < max(_GTOL, 1e-7 * rnorm)

    return TrimPoint(
        x_trim=LongitudinalState(float(z[0]), V, alpha, 0.0),
        u_trim=ControlInput(float(z[1]), float(z[2])),
        residual=rnorm,
        converged=converged,
        optimality=optimality,
        iterations=nfev,
    )


def default_grid(n_v: int = 10, n_alpha: int = 10) -> list[tuple[float, float]]:
    """Uniform lattice over 100..1000 ft/s x -10..45 deg, V-major order."""
    vs = np.linspace(100.0, 1000.0, n_v)
    alphas = np.linspace(-10.0 * DEG, 45.0 * DEG, n_alpha)
    return [(float(v), float(a)) for v in vs for a in alphas]


def trim_grid(grid: list[tuple[float, float]] | None = None,
              params: AircraftParams | None = None,
              tables: AeroTables | None = None) -> list[TrimPoint]:
    """Trim every (V, alpha) node of the scheduling grid, order preserved.

    Per-node failures are reported through the converged flag of the
    corresponding TrimPoint; the batch never aborts.
    """
    if grid is None:
        grid = default_grid()
    if not grid:
        raise ValueError("empty trim grid")
    params = params or AircraftParams()
    tables = tables or AeroTables.default()
    return [find_trim(V, alpha, params, tables) for V, alpha in grid]
