"""LQR synthesis and gain scheduling.

Linearization is central finite differences on the nonlinear plant. The
continuous algebraic Riccati equation is solved from the stable invariant
subspace of the ordered real Schur form of the Hamiltonian, polished with
one Newton-Kleinman (Lyapunov) step. The scheduled controller keeps one
gain and trim pair per node of a (V, alpha) lattice and interpolates both
bilinearly in the scheduling states, clamped to the lattice hull.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .f16 import AeroTables, AircraftParams, ControlInput, LongitudinalState, dynamics
from .trim import TrimPoint

CARE_RESIDUAL_RTOL = 1e-8


class LinearizationError(RuntimeError):
    """Finite-difference Jacobian produced non-finite entries."""


class SynthesisError(RuntimeError):
    """Riccati solve failed or the closed loop is not Hurwitz."""


@dataclass(frozen=True)
class LinearModel:
    """Linearization x_dot ~ A (x - x0) + B (u - u0) about (x0, u0).

    Bw is the elevator column of B: the actuator disturbance enters the
    plant through that channel.
    """

    A: np.ndarray
    B: np.ndarray
    x0: np.ndarray
    u0: np.ndarray

    @property
    def Bw(self) -> np.ndarray:
        return self.B[:, 1:2]


@dataclass(frozen=True)
class LqrWeights:
    """Quadratic cost weights; defaults are the regulation weights used for
    both the fixed and the scheduled controller."""

    Q: np.ndarray = field(default_factory=lambda: np.diag([100.0, 0.25, 100.0, 1e-4]))
    R: np.ndarray = field(default_factory=lambda: np.diag([1e-6, 625.0]))

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        if not np.allclose(Q, Q.T) or not np.allclose(R, R.T):
            raise ValueError("Q and R must be symmetric")
        if np.any(np.linalg.eigvalsh(Q) < -1e-12):
            raise ValueError("Q must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(R) <= 0):
            raise ValueError("R must be positive definite")


def spectral_abscissa(A: np.ndarray) -> float:
    """Largest real part of the eigenvalues of A."""
    return float(np.max(np.linalg.eigvals(A).real))


def linearize(rhs: Callable[[np.ndarray, np.ndarray], np.ndarray],
              x0, u0) -> LinearModel:
    """Central-difference linearization of rhs(x, u) about (x0, u0).

    Steps are 1e-6 * max(1, |component|) per direction; exact for linear
    maps up to roundoff.
    """
    if isinstance(x0, LongitudinalState):
        x0 = x0.as_array()
    if isinstance(u0, ControlInput):
        u0 = u0.as_array()
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    n, m = x0.size, u0.size

    A = np.empty((n, n))
    for j in range(n):
        h = 1e-6 * max(1.0, abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        A[:, j] = (np.asarray(rhs(xp, u0)) - np.asarray(rhs(xm, u0))) / (2 * h)
    B = np.empty((n, m))
    for j in range(m):
        h = 1e-6 * max(1.0, abs(u0[j]))
        up, um = u0.copy(), u0.copy()
        up[j] += h
        um[j] -= h
        B[:, j] = (np.asarray(rhs(x0, up)) - np.asarray(rhs(x0, um))) / (2 * h)

    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise LinearizationError("non-finite entries in finite-difference Jacobian")
    return LinearModel(A=A, B=B, x0=x0, u0=u0)


def linearize_plant(x0, u0, params: AircraftParams, tables: AeroTables) -> LinearModel:
    """Linearize the open-loop F-16 dynamics about a trim point."""
    return linearize(lambda x, u: dynamics(x, u, params, tables), x0, u0)


def care_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of A'P + PA - P B R^-1 B' P + Q."""
    G = B @ np.linalg.solve(R, B.T)
    return float(np.linalg.norm(A.T @ P + P @ A - P @ G @ P + Q, "fro"))


def solve_care(A, B, Q, R) -> np.ndarray:
    """Stabilizing solution of A'P + PA - P B R^-1 B' P + Q = 0.

    Builds the 2n x 2n Hamiltonian, orders its real Schur form so the stable
    invariant subspace comes first, recovers P from the subspace basis, and
    applies one Newton-Kleinman refinement (a Lyapunov solve at the current
    gain) to push the residual to roundoff.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    n = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])

    _, Z, sdim = scipy.linalg.schur(H, sort=lambda re, im: re < 0.0)
    if sdim != n:
        raise SynthesisError(
            f"ordered Schur split returned a {sdim}-dimensional stable subspace, expected {n}")
    Z11 = Z[:n, :n]
    Z21 = Z[n:, :n]
    try:
        P = np.linalg.solve(Z11.T, Z21.T).T
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("singular stable-subspace basis") from exc
    P = 0.5 * (P + P.T)

    # One Newton-Kleinman step: with K = R^-1 B' P, the refined P solves
    # (A - B K)' P+ + P+ (A - B K) = -(Q + K' R K).
    K = np.linalg.solve(R, B.T @ P)
    Acl = A - B @ K
    P = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
    P = 0.5 * (P + P.T)

    if not np.all(np.isfinite(P)):
        raise SynthesisError("non-finite Riccati solution")
    qnorm = np.linalg.norm(Q, "fro")
    if care_residual(A, B, Q, R, P) >= CARE_RESIDUAL_RTOL * max(qnorm, 1e-300):
        raise SynthesisError("Riccati residual above tolerance")
    if spectral_abscissa(A - B @ np.linalg.solve(R, B.T @ P)) >= 0.0:
        raise SynthesisError("closed loop not Hurwitz after Riccati solve")
    return P


def lqr_gain(model: LinearModel, weights: LqrWeights | None = None) -> np.ndarray:
    """State-feedback gain K = R^-1 B' P for the linearized model."""
    weights = weights or LqrWeights()
    P = solve_care(model.A, model.B, weights.Q, weights.R)
    return np.linalg.solve(weights.R, model.B.T @ P)


def lqr_control(x, K: np.ndarray, trim: TrimPoint) -> np.ndarray:
    """Pre-saturation control u = u_trim - K (x - x_trim); batched over x."""
    if isinstance(x, LongitudinalState):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    dx = x - trim.x_trim.as_array()
    return trim.u_trim.as_array() - dx @ np.asarray(K).T


@dataclass(frozen=True)
class LqrLaw:
    """Callable (and picklable) form of lqr_control for the closed loop."""

    K: np.ndarray
    trim: TrimPoint

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return lqr_control(x, self.K, self.trim)


@dataclass(frozen=True)
class GainSchedule:
    """Per-node gains on a rectangular (V, alpha) lattice, regulating to a
    fixed reference trim.

    The gain matrices are interpolated in the scheduling states; the
    deviation offsets are NOT: the per-node trims across this envelope are
    wildly different equilibria (steep climb/dive at off-design nodes), and
    using their interpolation as the regulation target plants spurious
    closed-loop equilibria all over the envelope, so every scheduled gain
    regulates deviations from the single reference (x_ref, u_ref). Per-node
    trims are retained as synthesis metadata alongside the per-node
    open/closed-loop spectral abscissas.

    Shapes: x_trims (nv, na, 4), u_trims (nv, na, 2), K (nv, na, 2, 4).
    Immutable after construction and safe to share between workers.
    """

    V_nodes: np.ndarray
    alpha_nodes: np.ndarray
    x_trims: np.ndarray
    u_trims: np.ndarray
    K: np.ndarray
    abscissa_open: np.ndarray
    abscissa_closed: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray

    def __post_init__(self):
        for name in ("V_nodes", "alpha_nodes", "x_trims", "u_trims", "K",
                     "abscissa_open", "abscissa_closed", "x_ref", "u_ref"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        nv, na = self.V_nodes.size, self.alpha_nodes.size
        if self.x_trims.shape != (nv, na, 4) or self.u_trims.shape != (nv, na, 2):
            raise ValueError("trim grids inconsistent with node vectors")
        if self.K.shape != (nv, na, 2, 4):
            raise ValueError("gain grid inconsistent with node vectors")
        if self.x_ref.shape != (4,) or self.u_ref.shape != (2,):
            raise ValueError("reference trim must be a (4,) state and (2,) control")

    @property
    def n_nodes(self) -> int:
        return self.V_nodes.size * self.alpha_nodes.size

    def to_dict(self) -> dict:
        return {
            "V_nodes": self.V_nodes.tolist(),
            "alpha_nodes_deg": (self.alpha_nodes / np.pi * 180.0).tolist(),
            "x_trims_deg": _states_to_deg(self.x_trims).tolist(),
            "u_trims_deg": _controls_to_deg(self.u_trims).tolist(),
            # Gains act on radian state deviations and produce (lb, rad).
            "K": self.K.tolist(),
            "K_units": "thrust lb and elevator rad per (rad, ft/s, rad, rad/s) deviation",
            "abscissa_open": self.abscissa_open.tolist(),
            "abscissa_closed": self.abscissa_closed.tolist(),
            "x_ref_deg": _states_to_deg(self.x_ref).tolist(),
            "u_ref_deg": _controls_to_deg(self.u_ref).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GainSchedule":
        deg = np.pi / 180.0
        return cls(
            V_nodes=np.asarray(d["V_nodes"], dtype=float),
            alpha_nodes=np.asarray(d["alpha_nodes_deg"], dtype=float) * deg,
            x_trims=_states_from_deg(np.asarray(d["x_trims_deg"], dtype=float)),
            u_trims=_controls_from_deg(np.asarray(d["u_trims_deg"], dtype=float)),
            K=np.asarray(d["K"], dtype=float),
            abscissa_open=np.asarray(d["abscissa_open"], dtype=float),
            abscissa_closed=np.asarray(d["abscissa_closed"], dtype=float),
            x_ref=_states_from_deg(np.asarray(d["x_ref_deg"], dtype=float)),
            u_ref=_controls_from_deg(np.asarray(d["u_ref_deg"], dtype=float)),
        )


def _states_to_deg(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float, copy=True)
    out[..., 0] *= 180.0 / np.pi
    out[..., 2] *= 180.0 / np.pi
    out[..., 3] *= 180.0 / np.pi
    return out


def _states_from_deg(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float, copy=True)
    out[..., 0] *= np.pi / 180.0
    out[..., 2] *= np.pi / 180.0
    out[..., 3] *= np.pi / 180.0
    return out


def _controls_to_deg(u: np.ndarray) -> np.ndarray:
    out = np.array(u, dtype=float, copy=True)
    out[..., 1] *= 180.0 / np.pi
    return out


def _controls_from_deg(u: np.ndarray) -> np.ndarray:
    out = np.array(u, dtype=float, copy=True)
    out[..., 1] *= np.pi / 180.0
    return out


def build_schedule(trims: list[TrimPoint], weights: LqrWeights | None = None,
                   params: AircraftParams | None = None,
                   tables: AeroTables | None = None,
                   reference: TrimPoint | None = None) -> GainSchedule:
    """Synthesize one LQR gain per trim node and assemble the schedule.

    The trim list must cover a full rectangular (V, alpha) lattice (any
    order); nodes are identified from the trim states themselves. A node
    whose closed loop fails to stabilize raises SynthesisError naming the
    node. `reference` sets the regulation target of the scheduled law;
    when omitted it defaults to the node trim with the smallest residual
    (an exact equilibrium).
    """
    weights = weights or LqrWeights()
    params = params or AircraftParams()
    tables = tables or AeroTables.default()
    if reference is None:
        reference = min(trims, key=lambda tp: tp.residual)

    Vs = np.array(sorted({tp.x_trim.V for tp in trims}))
    alphas = np.array(sorted({tp.x_trim.alpha for tp in trims}))
    nv, na = Vs.size, alphas.size
    if nv * na != len(trims):
        raise ValueError(
            f"{len(trims)} trim points do not form a {nv}x{na} rectangular grid")

    by_node: dict[tuple[int, int], TrimPoint] = {}
    for tp in trims:
        i = int(np.argmin(np.abs(Vs - tp.x_trim.V)))
        j = int(np.argmin(np.abs(alphas - tp.x_trim.alpha)))
        by_node[(i, j)] = tp

    x_trims = np.empty((nv, na, 4))
    u_trims = np.empty((nv, na, 2))
    K = np.empty((nv, na, 2, 4))
    ab_open = np.empty((nv, na))
    ab_closed = np.empty((nv, na))

    for (i, j), tp in sorted(by_node.items()):
        model = linearize_plant(tp.x_trim, tp.u_trim, params, tables)
        try:
            Kij = lqr_gain(model, weights)
        except SynthesisError as exc:
            raise SynthesisError(
                f"node (V={Vs[i]:.1f}, alpha={alphas[j] / np.pi * 180:.2f} deg): {exc}") from exc
        acl = spectral_abscissa(model.A - model.B @ Kij)
        if acl >= 0.0:
            raise SynthesisError(
                f"node (V={Vs[i]:.1f}, alpha={alphas[j] / np.pi * 180:.2f} deg) "
                f"not stabilized (abscissa {acl:.3e})")
        x_trims[i, j] = tp.x_trim.as_array()
        u_trims[i, j] = tp.u_trim.as_array()
        K[i, j] = Kij
        ab_open[i, j] = spectral_abscissa(model.A)
        ab_closed[i, j] = acl

    return GainSchedule(V_nodes=Vs, alpha_nodes=alphas, x_trims=x_trims,
                        u_trims=u_trims, K=K, abscissa_open=ab_open,
                        abscissa_closed=ab_closed,
                        x_ref=reference.x_trim.as_array(),
                        u_ref=reference.u_trim.as_array())


def _cell_weights(nodes: np.ndarray, v):
    """Lower index and fractional position of v in nodes, clamped to hull."""
    v = np.clip(v, nodes[0], nodes[-1])
    if nodes.size == 1:
        return np.zeros(np.shape(v), dtype=int), np.zeros(np.shape(v))
    i = np.clip(np.searchsorted(nodes, v, side="right") - 1, 0, nodes.size - 2)
    w = (v - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, w


def interpolate_gain(x, schedule: GainSchedule) -> np.ndarray:
    """Elementwise-bilinear gain at the scheduling pair (V, alpha) of x,
    clamped to the lattice hull; batched over leading axes of x."""
    x = np.asarray(x, dtype=float)
    V, alpha = x[..., 1], x[..., 2]
    i, wv = _cell_weights(schedule.V_nodes, V)
    j, wa = _cell_weights(schedule.alpha_nodes, alpha)
    i1 = np.minimum(i + 1, schedule.V_nodes.size - 1)
    j1 = np.minimum(j + 1, schedule.alpha_nodes.size - 1)
    grid = schedule.K
    extra = grid.ndim - 2  # trailing value axes beyond the lattice
    w00 = ((1 - wv) * (1 - wa)).reshape(np.shape(wv) + (1,) * extra)
    w10 = (wv * (1 - wa)).reshape(np.shape(wv) + (1,) * extra)
    w01 = ((1 - wv) * wa).reshape(np.shape(wv) + (1,) * extra)
    w11 = (wv * wa).reshape(np.shape(wv) + (1,) * extra)
    return (w00 * grid[i, j] + w10 * grid[i1, j]
            + w01 * grid[i, j1] + w11 * grid[i1, j1])


def gs_control(x, schedule: GainSchedule) -> np.ndarray:
    """Scheduled pre-saturation control at state x (batched).

    The gain is interpolated in the scheduling pair (V, alpha) of the
    current state (clamped to the lattice hull); the deviation is taken
    from the schedule's fixed reference trim:
    u = u_ref - K~(V, alpha) (x - x_ref).
    """
    if isinstance(x, LongitudinalState):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    Kt = interpolate_gain(x, schedule)
    dx = x - schedule.x_ref
    return schedule.u_ref - np.einsum("...ij,...j->...i", Kt, dx)


@dataclass(frozen=True)
class ScheduledLaw:
    """Callable (and picklable) form of gs_control for the closed loop."""

    schedule: GainSchedule

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return gs_control(x, self.schedule)
