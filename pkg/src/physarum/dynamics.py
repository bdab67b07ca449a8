"""Forward-Euler relaxation of the coupled density/potential system.

Each step solves the Neumann problem for the current density, averages
the gradient norm over coarse cells, and updates every cell with
``mu <- mu * (1 + dt * (|grad u| - k))`` clamped from below at
:data:`~physarum.fem.MU_FLOOR`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, NonConvergenceError, UndefinedVariationError
from .fem import MU_FLOOR, cell_gradient_stats, coarse_gradient_magnitudes, solve_potential

__all__ = [
    "StabilityWarning",
    "StepSchedule",
    "TraceRecord",
    "RunState",
    "euler_step",
    "variation",
    "initial_state",
    "checked_step",
    "run_to_steady",
]

DEFAULT_TAU = 5e-9
DEFAULT_MAX_STEPS = 50_000
SOLVER_TOL = 1e-10


class StabilityWarning(RuntimeWarning):
    """The explicit update may overshoot for the current step size."""


@dataclass(frozen=True)
class StepSchedule:
    """``dt_{j+1} = min(growth * dt_j, dt_cap)`` starting from ``dt0``."""

    dt0: float = 1e-2
    growth: float = 1.01
    dt_cap: float = 0.25

    def __post_init__(self):
        if not (self.dt0 > 0 and self.growth >= 1 and self.dt_cap >= self.dt0):
            raise ContractError(
                f"invalid step schedule dt0={self.dt0}, growth={self.growth}, cap={self.dt_cap}",
                module="dynamics",
            )

    def next(self, dt):
        return min(self.growth * dt, self.dt_cap)


@dataclass(frozen=True)
class TraceRecord:
    """Quantities at the start of step ``step`` (time ``t``) plus the step outcome."""

    step: int
    t: float
    dt: float
    variation: float
    lyapunov: float
    mass: float
    flux_l1: float
    min_mu: float
    min_mu_active: float
    cg_iters: int
    preconditioner: str = "ic0"


@dataclass
class RunState:
    """Mutable state of a run; ``trace`` only ever grows."""

    j: int
    t: float
    dt: float
    mu: np.ndarray
    u: Optional[np.ndarray] = None
    gradmag: Optional[np.ndarray] = None
    clamped: Optional[np.ndarray] = None
    u_prev: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def last(self):
        return self.trace[-1] if self.trace else None


def euler_step(mu, gradmag, k, dt, floor=MU_FLOOR):
    """One explicit update of the density, clamped from below at ``floor``."""
    mu = np.asarray(mu, dtype=float)
    gradmag = np.asarray(gradmag, dtype=float)
    if not (dt > 0):
        raise ContractError(f"step size must be positive, got {dt!r}", module="dynamics")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(gradmag))):
        raise ContractError("non-finite density or gradient", module="dynamics")
    new = mu * (1.0 + dt * (gradmag - k))
    return np.maximum(new, floor)


def variation(mu_new, mu_old, dt, areas):
    """``||mu_new - mu_old||_L2 / (dt ||mu_old||_L2)`` with area weights."""
    mu_old = np.asarray(mu_old, dtype=float)
    diff = np.asarray(mu_new, dtype=float) - mu_old
    denom = math.sqrt(float(mu_old * mu_old @ areas))
    if denom == 0.0:
        raise UndefinedVariationError("variation undefined for an identically zero density")
    return math.sqrt(float(diff * diff @ areas)) / (dt * denom)


def initial_state(mu0, schedule, floor=MU_FLOOR):
    mu0 = np.array(mu0, dtype=float)
    if np.any(mu0 < floor) or not np.all(np.isfinite(mu0)):
        raise ContractError("initial density must be finite and at or above the floor", module="dynamics")
    return RunState(j=0, t=0.0, dt=schedule.dt0, mu=mu0, clamped=np.zeros(mu0.shape, dtype=bool))


def _stability_guard(mu, gradmag, k, dt, floor):
    live = mu > floor
    if not live.any():
        return
    kl = np.broadcast_to(k, mu.shape)[live]
    growth = float(np.max(gradmag[live] - kl))
    if dt * growth >= 1.0:
        warnings.warn(
            f"dt * max(|grad u| - k) = {dt * growth:.3g} >= 1: density may more than double",
            StabilityWarning,
            stacklevel=3,
        )
    if dt * float(kl.max()) >= 1.0:
        warnings.warn(
            f"dt * max(k) = {dt * float(kl.max()):.3g} >= 1: update may cross zero before clamping",
            StabilityWarning,
            stacklevel=3,
        )


def _predict(state):
    """CG initial guess: linear extrapolation of the last two potentials in time."""
    if state.u_prev is None:
        return state.u
    last, before = state.trace[-1], state.trace[-2]
    return state.u + (state.u - state.u_prev) * (last.dt / before.dt)


def checked_step(state, pair, k, load, schedule, *, solver_tol=SOLVER_TOL, max_iter=None, floor=MU_FLOOR):
    """Advance ``state`` by one step in place, append a trace record, return it.

    The record holds the Lyapunov value, mass and flux of the density at
    the start of the step and the variation produced by the step.
    """
    areas = pair.coarse.areas
    mu = state.mu
    sol = solve_potential(pair, mu, load, tol=solver_tol, max_iter=max_iter, x0=_predict(state))
    u = sol.u
    g, energy = cell_gradient_stats(pair, u)
    k = np.broadcast_to(np.asarray(k, dtype=float), mu.shape)
    _stability_guard(mu, g, k, state.dt, floor)

    mass = float(mu @ areas)
    record_lyap = 0.5 * mass * float(mu @ energy)
    flux_l1 = float(mu * g @ areas)
    active = ~state.clamped
    min_active = float(mu[active].min()) if active.any() else math.inf

    new = euler_step(mu, g, k, state.dt, floor)
    var = variation(new, mu, state.dt, areas)
    state.trace.append(
        TraceRecord(
            step=state.j,
            t=state.t,
            dt=state.dt,
            variation=var,
            lyapunov=record_lyap,
            mass=mass,
            flux_l1=flux_l1,
            min_mu=float(mu.min()),
            min_mu_active=min_active,
            cg_iters=sol.iterations,
            preconditioner=sol.preconditioner,
        )
    )
    state.clamped = state.clamped | (new <= floor)
    state.mu = new
    state.u_prev = state.u
    state.u = u
    state.gradmag = g
    state.t += state.dt
    state.dt = schedule.next(state.dt)
    state.j += 1
    return state


def run_to_steady(
    pair,
    mu0,
    k,
    load,
    schedule=StepSchedule(),
    tau=DEFAULT_TAU,
    max_steps=DEFAULT_MAX_STEPS,
    *,
    solver_tol=SOLVER_TOL,
    max_iter=None,
    callback: Optional[Callable[[RunState], None]] = None,
):
    """Iterate :func:`checked_step` until the variation drops to ``tau``.

    On success the returned state's ``u`` and ``gradmag`` are recomputed for
    the final density. ``callback(state)`` runs after every step.

    Raises
    ------
    NonConvergenceError
        After ``max_steps`` steps without reaching ``tau``; carries the state.
    """
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau!r}", module="dynamics")
    state = initial_state(mu0, schedule)
    while state.j < max_steps:
        checked_step(state, pair, k, load, schedule, solver_tol=solver_tol, max_iter=max_iter)
        if state.trace[-1].variation <= tau:
            state.converged = True
        if callback is not None:
            callback(state)
        if state.converged:
            break
    if not state.converged:
        raise NonConvergenceError(
            f"variation {state.trace[-1].variation:.3e} > tau={tau:.1e} after {state.j} steps",
            state=state,
        )
    final = solve_potential(pair, state.mu, load, tol=solver_tol, max_iter=max_iter, x0=state.u)
    state.u = final.u
    state.gradmag = coarse_gradient_magnitudes(pair, final.u)
    return state
