"""Meshless density propagation along closed-loop characteristics.

Each sample of the initial joint density is co-integrated as a fixed-step
RK4 characteristic: the state follows the closed-loop field, constant
uncertain parameters ride along with zero derivative, and the tracked
density value obeys d(phi)/dt = -div(f) phi along the trajectory.

The divergence is the trace of a central finite-difference Jacobian of the
state block (the parameter block contributes nothing). By default it is
evaluated once per step at the Euler midpoint state and the density is
advanced by the degree-4 Taylor factor of exp(-div dt): exact-order RK4
when the divergence is constant along the trajectory, second-order for a
time-varying divergence, and one Jacobian per step instead of four.
strict_rk4 switches to per-stage divergence evaluations co-integrated
through the full RK4 tableau.

Samples whose state or density goes non-finite are frozen at their last
finite values and flagged diverged; they stay in every later snapshot so
transport masses remain accounted for.

Vector fields are callables rhs(t, x, p) -> dx/dt, vectorized over leading
sample axes; p may be None. Per-sample propagation is independent, so the
ensemble can be split across a process pool (chunked by sample index, with
results reassembled in index order; the arithmetic per sample is identical
regardless of the split).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

WORKERS_ENV = "OTROBUST_WORKERS"


class PropagationError(RuntimeError):
    """Raised when a density/divergence evaluation cannot be completed."""


class UnresolvableQueryError(RuntimeError):
    """Backward integration of a density query blew up."""


@dataclass(frozen=True)
class WeightedSample:
    """One characteristic: extended state, tracked density, transport mass."""

    x: np.ndarray
    p: np.ndarray
    phi: float
    gamma: float
    diverged: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        if self.phi < 0 or self.gamma < 0:
            raise ValueError("phi and gamma must be nonnegative")
        if not self.diverged and not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise ValueError("non-finite sample not flagged as diverged")


@dataclass
class EnsembleSnapshot:
    """Time-stamped ensemble: states (n, dx), params (n, dp), densities,
    masses, diverged flags, plus run metadata."""

    t: float
    states: np.ndarray
    params: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    diverged: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        n = self.states.shape[0]
        self.params = (np.zeros((n, 0)) if self.params is None
                       else np.atleast_2d(np.asarray(self.params, dtype=float)))
        self.phi = np.asarray(self.phi, dtype=float).reshape(n)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(n)
        self.diverged = (np.zeros(n, dtype=bool) if self.diverged is None
                         else np.asarray(self.diverged, dtype=bool).reshape(n))
        if self.params.shape[0] != n:
            raise ValueError("params row count differs from states")
        if abs(math.fsum(self.gamma.tolist()) - 1.0) > 1e-12:
            raise ValueError("transport masses must sum to one")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def extended(self) -> np.ndarray:
        """States and parameters concatenated, (n, dx + dp)."""
        return np.concatenate([self.states, self.params], axis=1)

    def sample(self, i: int) -> WeightedSample:
        return WeightedSample(x=self.states[i], p=self.params[i],
                              phi=float(self.phi[i]), gamma=float(self.gamma[i]),
                              diverged=bool(self.diverged[i]))

    @property
    def samples(self) -> list[WeightedSample]:
        return [self.sample(i) for i in range(self.n)]

    @classmethod
    def from_cloud(cls, states, phi, gamma, params=None, t: float = 0.0,
                   metadata: dict | None = None) -> "EnsembleSnapshot":
        return cls(t=t, states=states, params=params, phi=phi, gamma=gamma,
                   diverged=None, metadata=metadata or {})


def divergence(rhs: Callable, x: np.ndarray, p: np.ndarray | None, t: float,
               h_rel: float = 3e-5, nan_ok: bool = False) -> np.ndarray:
    """Divergence of the state block of rhs at (x, p, t), batched.

    Central differences per state direction; the frozen parameter block
    contributes zero. The default step is larger than the one used for
    control-synthesis Jacobians: the trace feeds only the density ODE and a
    larger step keeps subtractive-cancellation noise below the integrator's
    truncation error. Raises PropagationError (naming the first offending
    sample) when entries come out non-finite for states that are finite;
    nan_ok=True instead leaves NaN in place so ensemble integration can
    flag the sample (a state mid-blow-up can be finite while its
    neighbourhood is not).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    X = np.atleast_2d(x)
    P = None if p is None else np.atleast_2d(np.asarray(p, dtype=float))
    dx = X.shape[-1]
    div = np.zeros(X.shape[0])
    h = h_rel * np.maximum(1.0, np.abs(X))
    for k in range(dx):
        Xp, Xm = X.copy(), X.copy()
        Xp[:, k] += h[:, k]
        Xm[:, k] -= h[:, k]
        fk = (np.atleast_2d(rhs(t, Xp, P))[:, k]
              - np.atleast_2d(rhs(t, Xm, P))[:, k]) / (2.0 * h[:, k])
        div += fk
    if not nan_ok:
        finite_state = np.all(np.isfinite(X), axis=-1)
        bad = finite_state & ~np.isfinite(div)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise PropagationError(f"non-finite divergence at sample {i}, state {X[i]}")
    return div[0] if squeeze else div


def _density_multiplier(z: np.ndarray) -> np.ndarray:
    """Degree-4 Taylor factor of exp(-z); strictly positive for real z."""
    return 1.0 - z + z * z / 2.0 - z ** 3 / 6.0 + z ** 4 / 24.0


def _step(rhs, t, X, P, phi, dt, strict_rk4: bool, track_density: bool):
    """One RK4 step of states plus the density factor for the step.

    The state arithmetic is identical whether or not the density rides
    along, so a plain trajectory ensemble (track_density=False) reproduces
    the density-tracking run bit for bit.
    """
    k1 = rhs(t, X, P)
    X2 = X + 0.5 * dt * k1
    k2 = rhs(t + 0.5 * dt, X2, P)
    X3 = X + 0.5 * dt * k2
    k3 = rhs(t + 0.5 * dt, X3, P)
    X4 = X + dt * k3
    k4 = rhs(t + dt, X4, P)
    X_new = X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    if not track_density:
        return X_new, phi
    if strict_rk4:
        d1 = divergence(rhs, X, P, t, nan_ok=True)
        d2 = divergence(rhs, X2, P, t + 0.5 * dt, nan_ok=True)
        d3 = divergence(rhs, X3, P, t + 0.5 * dt, nan_ok=True)
        d4 = divergence(rhs, X4, P, t + dt, nan_ok=True)
        kp1 = -d1 * phi
        kp2 = -d2 * (phi + 0.5 * dt * kp1)
        kp3 = -d3 * (phi + 0.5 * dt * kp2)
        kp4 = -d4 * (phi + dt * kp3)
        phi_new = phi + dt / 6.0 * (kp1 + 2 * kp2 + 2 * kp3 + kp4)
    else:
        # One divergence per step, at the Euler midpoint state: the density
        # factor is the RK4 one-step map of phi' = -div phi with frozen div.
        div = divergence(rhs, X2, P, t + 0.5 * dt, nan_ok=True)
        phi_new = phi * _density_multiplier(dt * div)
    return X_new, phi_new


def _propagate_arrays(rhs, X0, P0, phi0, t0, n_steps, dt, emit_steps,
                      strict_rk4, diverged0=None, track_density=True):
    """Integrate a block of samples; returns per-emit (t, X, phi, diverged).

    A sample is frozen (flagged diverged) as soon as its next state has a
    non-finite component; its last finite state and density stay in every
    later snapshot. A density value that degenerates on its own freezes
    only the density, never the state.
    """
    X = np.array(X0, dtype=float)
    phi = np.array(phi0, dtype=float)
    dead = (np.zeros(X.shape[0], dtype=bool) if diverged0 is None
            else np.array(diverged0, dtype=bool))
    out = []
    if 0 in emit_steps:
        out.append((t0, X.copy(), phi.copy(), dead.copy()))
    with np.errstate(all="ignore"):
        for s in range(1, n_steps + 1):
            t = t0 + (s - 1) * dt
            X_new, phi_new = _step(rhs, t, X, P0, phi, dt, strict_rk4, track_density)
            ok = np.all(np.isfinite(X_new), axis=-1)
            upd = ok & ~dead
            X[upd] = X_new[upd]
            if track_density:
                upd_phi = upd & np.isfinite(phi_new)
                phi[upd_phi] = phi_new[upd_phi]
            dead |= ~ok
            if s in emit_steps:
                out.append((t0 + s * dt, X.copy(), phi.copy(), dead.copy()))
    return out


def _propagate_chunk(args):
    (rhs, X0, P0, phi0, t0, n_steps, dt, emit_steps, strict, track) = args
    return _propagate_arrays(rhs, X0, P0, phi0, t0, n_steps, dt, emit_steps,
                             strict, track_density=track)


def resolve_workers(workers: int | None = None) -> int:
    """Worker-count policy: explicit argument capped by OTROBUST_WORKERS."""
    env = os.environ.get(WORKERS_ENV)
    cap = int(env) if env else None
    if workers is None:
        workers = cap if cap is not None else 1
    if cap is not None:
        workers = min(workers, cap)
    return max(1, workers)


def propagate(cloud: EnsembleSnapshot, rhs: Callable, t_f: float, dt: float,
              emit_every: int = 1, strict_rk4: bool = False,
              workers: int | None = None,
              track_density: bool = True) -> list[EnsembleSnapshot]:
    """Propagate an ensemble to t_f with fixed-step RK4; emit snapshots.

    Snapshots are produced at the initial time, every emit_every steps, and
    at t_f. Transport masses are carried through unchanged; densities evolve
    per the characteristic ODE (track_density=False runs the same state
    integration as a plain Monte Carlo ensemble). With workers > 1 the
    ensemble is chunked by sample index across a process pool (rhs must
    then be picklable); the result is identical to the single-process run.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round((t_f - cloud.t) / dt))
    if n_steps <= 0:
        raise ValueError("t_f must lie at least one step beyond the cloud time")
    emit_every = max(1, int(emit_every))
    emit_steps = set(range(0, n_steps + 1, emit_every))
    emit_steps.add(n_steps)

    workers = resolve_workers(workers)
    X0, P0 = cloud.states, (cloud.params if cloud.params.shape[1] else None)
    if workers == 1 or cloud.n < 2 * workers:
        blocks = [_propagate_arrays(rhs, X0, P0, cloud.phi, cloud.t, n_steps,
                                    dt, emit_steps, strict_rk4, cloud.diverged,
                                    track_density)]
    else:
        edges = np.linspace(0, cloud.n, workers + 1).astype(int)
        bounds = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        jobs = [(rhs, X0[a:b], None if P0 is None else P0[a:b], cloud.phi[a:b],
                 cloud.t, n_steps, dt, emit_steps, strict_rk4, track_density)
                for a, b in bounds]
        with ProcessPoolExecutor(max_workers=len(bounds)) as pool:
            blocks = list(pool.map(_propagate_chunk, jobs))

    meta = dict(cloud.metadata)
    meta.update({
        "dt": dt, "t_f": cloud.t + n_steps * dt, "emit_every": emit_every,
        "strict_rk4": strict_rk4,
        # cost contract: one scalar ODE per state plus one for the density
        "odes_per_sample": cloud.states.shape[1] + (1 if track_density else 0),
    })
    snapshots = []
    for k, _ in enumerate(sorted(emit_steps)):
        t_k = blocks[0][k][0]
        X = np.concatenate([blk[k][1] for blk in blocks], axis=0)
        phi = np.concatenate([blk[k][2] for blk in blocks], axis=0)
        dead = np.concatenate([blk[k][3] for blk in blocks], axis=0)
        snapshots.append(EnsembleSnapshot(
            t=t_k, states=X, params=cloud.params, phi=phi,
            gamma=cloud.gamma, diverged=dead, metadata=meta))
    return snapshots


def query_density(x_star: np.ndarray, t: float, rhs: Callable, phi0,
                  dt: float, strict_rk4: bool = False,
                  n_params: int = 0) -> float:
    """Joint density value at an arbitrary extended-state point and time.

    The point is integrated backward to time zero; if it lands outside the
    support of the initial density the answer is exactly zero, otherwise
    the characteristic is re-integrated forward from the recovered initial
    condition. phi0 must expose support membership through a zero density
    value (as InitialPdf does). The trailing n_params entries of x_star are
    the frozen parameter block.
    """
    if t < 0:
        raise ValueError("query time must be nonnegative")
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    phi_fn = phi0 if callable(phi0) else phi0.density
    if t == 0.0:
        return float(np.asarray(phi_fn(x_star)))

    dx = x_star.size - n_params
    x = x_star[:dx][None, :]
    p = x_star[dx:][None, :] if n_params else None

    n_steps = int(round(t / dt))
    dt_eff = t / n_steps
    with np.errstate(all="ignore"):
        for s in range(n_steps):
            tau = t - s * dt_eff
            k1 = rhs(tau, x, p)
            k2 = rhs(tau - 0.5 * dt_eff, x - 0.5 * dt_eff * k1, p)
            k3 = rhs(tau - 0.5 * dt_eff, x - 0.5 * dt_eff * k2, p)
            k4 = rhs(tau - dt_eff, x - dt_eff * k3, p)
            x = x - dt_eff / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise UnresolvableQueryError(
                    f"backward integration diverged at t={tau - dt_eff:.4f}")

    x0_ext = np.concatenate([x[0], p[0] if p is not None else []])
    phi_init = float(np.asarray(phi_fn(x0_ext)))
    if phi_init == 0.0:
        return 0.0

    out = _propagate_arrays(rhs, x, p, np.array([phi_init]), 0.0,
                            n_steps, dt_eff, {n_steps}, strict_rk4)
    _, _, phi, dead = out[0]
    if dead[0]:
        raise UnresolvableQueryError("forward re-integration diverged")
    return float(phi[0])


def likelihood_extremes(snapshots: Sequence[EnsembleSnapshot]) -> list[tuple[float, int, int]]:
    """Most- and least-likely trajectory ids per emitted time.

    Returns (t, argmax phi, argmin phi) triples; ties break to the lowest
    sample index (np.argmax/argmin semantics).
    """
    if not snapshots:
        raise ValueError("no snapshots")
    out = []
    for snap in snapshots:
        out.append((snap.t, int(np.argmax(snap.phi)), int(np.argmin(snap.phi))))
    return out
