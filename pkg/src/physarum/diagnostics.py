"""Runtime checks of the analytic properties of the density dynamics.

The ``check_*`` functions take a trace (sequence of records with ``step``,
``t``, ``dt``, ``lyapunov``, ``mass``, ``flux_l1``, ``min_mu`` and
``min_mu_active`` attributes) and return a :class:`Report` listing every
step that breaks the property.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateStateError
from .fem import MU_FLOOR, cell_gradient_stats, coarse_gradient_magnitudes

__all__ = [
    "Report",
    "lyapunov",
    "check_lyapunov_descent",
    "check_mass_bound",
    "check_positivity_decay",
    "mk_residual",
    "TRACE_COLUMNS",
    "write_trace_csv",
    "read_trace_csv",
]

LYAPUNOV_REL_TOL = 1e-10
BOUND_REL_TOL = 1e-8
POSITIVITY_TOL = 1e-12
SUPPORT_FRAC = 0.01


@dataclass
class Report:
    name: str
    violations: list = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self):
        return not self.violations

    def __str__(self):
        status = "ok" if self.passed else f"{len(self.violations)} violation(s)"
        return f"{self.name}: {status} over {self.checked} step(s)"


def dissipation(pair, mu, u):
    """``sum_t mu_parent(t) |t| |grad u_t|^2``, i.e. ``u^T A(mu) u``."""
    return float(np.asarray(mu, dtype=float) @ cell_gradient_stats(pair, u)[1])


def lyapunov(pair, mu, u):
    """``0.5 * (integral of mu) * (integral of mu |grad u|^2)``.

    ``u`` must be the converged potential for ``mu``.
    """
    mass = float(np.asarray(mu, dtype=float) @ pair.coarse.areas)
    return 0.5 * mass * dissipation(pair, mu, u)


def check_lyapunov_descent(trace, rel_tol=LYAPUNOV_REL_TOL):
    """Flag steps where the Lyapunov value grows by more than ``rel_tol``."""
    report = Report("lyapunov-descent")
    for prev, cur in zip(trace, trace[1:]):
        report.checked += 1
        if cur.lyapunov > prev.lyapunov + rel_tol * abs(prev.lyapunov):
            report.violations.append(
                (cur.step, f"L rose from {prev.lyapunov!r} to {cur.lyapunov!r}")
            )
    return report


def check_mass_bound(trace, mass0=None, lyapunov0=None, rel_tol=BOUND_REL_TOL):
    """Check ``mass(t) <= mass0 + sqrt(L0)`` and ``flux_l1(t) <= sqrt(L0)``.

    ``mass0`` and ``lyapunov0`` default to the first trace record.
    """
    report = Report("mass-bound")
    if not trace:
        return report
    mass0 = trace[0].mass if mass0 is None else mass0
    lyapunov0 = trace[0].lyapunov if lyapunov0 is None else lyapunov0
    root = math.sqrt(lyapunov0)
    mass_cap = mass0 + root
    for rec in trace:
        report.checked += 1
        if rec.mass > mass_cap * (1 + rel_tol):
            report.violations.append((rec.step, f"mass {rec.mass!r} > {mass_cap!r}"))
        if rec.flux_l1 > root * (1 + rel_tol):
            report.violations.append((rec.step, f"flux {rec.flux_l1!r} > sqrt(L0) {root!r}"))
    return report


def check_positivity_decay(trace, lambda0=None, tol=POSITIVITY_TOL, floor=MU_FLOOR):
    """Discrete decay estimate ``min mu^j >= lambda0 * prod_{i<j} (1 - dt_i)``.

    Only cells never clamped to the floor enter ``min_mu_active``; every
    cell must in addition stay at or above ``floor``. Valid for ``k == 1``.
    """
    report = Report("positivity-decay")
    if not trace:
        return report
    lambda0 = trace[0].min_mu if lambda0 is None else lambda0
    decay = 1.0
    for rec in trace:
        report.checked += 1
        if rec.min_mu < floor:
            report.violations.append((rec.step, f"min mu {rec.min_mu!r} below floor"))
        active = rec.min_mu_active
        if np.isfinite(active) and active < lambda0 * decay - tol:
            report.violations.append(
                (rec.step, f"active min {active!r} < {lambda0 * decay!r}")
            )
        decay *= 1.0 - rec.dt
    return report


def mk_residual(pair, mu, u, k, support_frac=SUPPORT_FRAC):
    """Residuals of the steady Monge-Kantorovich conditions.

    Returns
    -------
    sup_on_support : float
        ``max | |grad u|_s - k_s |`` over cells with ``mu_s > support_frac * max mu``.
    constraint_violation : float
        ``max(|grad u|_s - k_s, 0)`` over all cells.
    """
    mu = np.asarray(mu, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=float), mu.shape)
    g = coarse_gradient_magnitudes(pair, u)
    top = mu.max() if mu.size else 0.0
    support = mu > support_frac * top
    if not top > 0 or not support.any():
        raise DegenerateStateError("density has empty support")
    sup = float(np.abs(g[support] - k[support]).max())
    violation = float(np.maximum(g - k, 0.0).max())
    return sup, violation


TRACE_COLUMNS = ("step", "t", "dt", "variation", "lyapunov", "mass", "flux_l1", "min_mu", "cg_iters")


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_trace_csv(trace, path):
    """Write the trace atomically, one row per step, 17 significant digits."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            writer.writerow([_fmt(getattr(rec, col)) for col in TRACE_COLUMNS])
    os.replace(tmp, path)


def read_trace_csv(path):
    """Rows as dicts with ``step``/``cg_iters`` as int and the rest as float."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = {"step", "cg_iters"}
    return [{k: (int(v) if k in ints else float(v)) for k, v in row.items()} for row in rows]
