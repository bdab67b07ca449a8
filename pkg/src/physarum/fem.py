"""P1 (fine mesh) / P0 (coarse mesh) Galerkin operators.

The potential lives on the fine mesh of a :class:`~physarum.mesh.MeshPair`
and the density on its coarse mesh. All integrands are piecewise
polynomials of degree at most one on fine triangles, so the vertex and
centroid rules used here are exact.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import ContractError, ConvergenceError
from .linalg import IC0, projected_pcg

__all__ = [
    "MU_FLOOR",
    "FemOperators",
    "NeumannSolution",
    "operators",
    "assemble_stiffness",
    "assemble_load",
    "solve_neumann",
    "solve_potential",
    "fine_gradients",
    "coarse_gradient_magnitudes",
    "cell_gradient_stats",
    "flux_field",
    "lumped_mean",
]

MU_FLOOR = 1e-10
LOAD_BALANCE_TOL = 1e-10


def _csr_pattern(tris, n, local, parent, n_coarse):
    """CSR pattern of the P1 stiffness on ``tris`` and the map mu -> data."""
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    pattern, slot = np.unique(rows * n + cols, return_inverse=True)
    pr, pc = np.divmod(pattern, n)
    indptr = np.searchsorted(pr, np.arange(n + 1)).astype(np.int64)
    data_map = sp.csr_matrix(
        (local.ravel(), (slot.reshape(-1), np.repeat(parent, 9))),
        shape=(len(pattern), n_coarse),
    )
    return indptr, pc.astype(np.int64), data_map


class FemOperators:
    """Precomputed sparse maps for one mesh pair.

    ``stiffness_map @ mu`` yields the CSR data array of the stiffness matrix
    for coarse density ``mu``; ``load_map @ f`` is the load vector for a
    per-coarse-cell source; ``grad_x``/``grad_y`` map nodal values to
    per-fine-triangle gradient components. A second copy of the stiffness
    pattern uses reverse Cuthill-McKee node labels (``perm[new] = old``),
    which roughly halves the preconditioned CG iteration count.
    """

    def __init__(self, pair):
        fine = pair.fine
        n = fine.n_nodes
        m2 = pair.coarse.n_triangles
        tris = fine.triangles
        grads = fine.gradients
        local = np.einsum("tad,tbd->tab", grads, grads) * fine.areas[:, None, None]
        self.n = n
        self.n_coarse = m2
        self.indptr, self.indices, self.stiffness_map = _csr_pattern(tris, n, local, pair.parent, m2)
        natural = sp.csr_matrix((np.ones(len(self.indices)), self.indices, self.indptr), shape=(n, n))
        self.perm = reverse_cuthill_mckee(natural, symmetric_mode=True).astype(np.int64)
        rank = np.empty(n, dtype=np.int64)
        rank[self.perm] = np.arange(n)
        self.rcm_indptr, self.rcm_indices, self.rcm_stiffness_map = _csr_pattern(
            rank[tris], n, local, pair.parent, m2
        )
        self.load_map = sp.csr_matrix(
            (np.repeat(fine.areas / 3.0, 3), (tris.ravel(), np.repeat(pair.parent, 3))),
            shape=(n, m2),
        )
        m = fine.n_triangles
        tri_rows = np.repeat(np.arange(m), 3)
        self.grad_x = sp.csr_matrix((grads[:, :, 0].ravel(), (tri_rows, tris.ravel())), shape=(m, n))
        self.grad_y = sp.csr_matrix((grads[:, :, 1].ravel(), (tri_rows, tris.ravel())), shape=(m, n))
        self.mass = fine.lumped_mass
        self.child = pair.child
        self.child_areas = pair.child_areas
        self.child_area_sums = self.child_areas.sum(axis=1)


def operators(pair):
    """Cached :class:`FemOperators` for ``pair``."""
    ops = pair.__dict__.get("_fem_operators")
    if ops is None:
        ops = FemOperators(pair)
        pair.__dict__["_fem_operators"] = ops
    return ops


def _check_density(ops, mu):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (ops.n_coarse,):
        raise ContractError(
            f"density has shape {mu.shape}, mesh pair has {ops.n_coarse} coarse cells", module="fem"
        )
    return mu


def assemble_stiffness(pair, mu):
    """Stiffness matrix ``A[l, m] = sum_t mu_parent(t) |t| grad phi_l . grad phi_m``."""
    ops = operators(pair)
    mu = _check_density(ops, mu)
    if not np.all(np.isfinite(mu)):
        raise ContractError("density contains non-finite values", module="fem")
    if np.any(mu < MU_FLOOR):
        raise ContractError(f"density below floor {MU_FLOOR}: min {mu.min()!r}", module="fem")
    data = ops.stiffness_map @ mu
    return sp.csr_matrix((data, ops.indices, ops.indptr), shape=(ops.n, ops.n))


def assemble_load(pair, f):
    """Load vector ``b_m = sum_t f_parent(t) |t| / 3`` over fine triangles at node m."""
    ops = operators(pair)
    f = np.asarray(f, dtype=float)
    if f.shape != (ops.n_coarse,):
        raise ContractError(f"source has shape {f.shape}, expected ({ops.n_coarse},)", module="fem")
    areas = pair.coarse.areas
    total = np.abs(f) @ areas
    imbalance = f @ areas
    if total > 0 and abs(imbalance) > LOAD_BALANCE_TOL * total:
        raise ContractError(
            f"source is not balanced: integral {imbalance!r} vs total {total!r}", module="fem"
        )
    return ops.load_map @ f


class NeumannSolution(NamedTuple):
    u: np.ndarray
    iterations: int
    residual: float
    preconditioner: str


def lumped_mean(pair_or_mass, u):
    mass = pair_or_mass if isinstance(pair_or_mass, np.ndarray) else pair_or_mass.fine.lumped_mass
    return float(mass @ u / mass.sum())


def _raise_unconverged(iterations, residual, bnorm, tol):
    raise ConvergenceError(
        f"CG stopped after {iterations} iterations with relative residual "
        f"{residual / bnorm:.3e} > {tol:.1e}",
        residual=residual,
        iterations=iterations,
    )


def solve_neumann(A, b, tol=1e-10, max_iter=None, *, x0=None, mass=None,
                  preconditioner=IC0, reorder=True):
    """Solve the pure Neumann system ``A u = b`` up to an additive constant.

    Uses conjugate gradients preconditioned by a zero fill-in incomplete
    Cholesky factor (Jacobi if that breaks down), on a reverse
    Cuthill-McKee reordering of ``A`` unless ``reorder`` is false. The
    result is shifted to zero mean with respect to ``mass`` (lumped-mass
    weights; uniform weights if omitted).

    Raises
    ------
    ConvergenceError
        If ``||A u - b|| > tol ||b||`` after ``max_iter`` iterations.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ContractError(f"matrix shape {A.shape} does not match load length {n}", module="fem")
    if max_iter is None:
        max_iter = 10 * n
    perm = reverse_cuthill_mckee(A, symmetric_mode=True) if reorder else np.arange(n)
    xp = None if x0 is None else np.asarray(x0, dtype=float)[perm]
    up, iterations, residual, used = projected_pcg(
        A[perm][:, perm], b[perm], x0=xp, tol=tol, max_iter=max_iter, preconditioner=preconditioner
    )
    bnorm = float(np.linalg.norm(b))
    if residual > tol * bnorm:
        _raise_unconverged(iterations, residual, bnorm, tol)
    u = np.empty(n)
    u[perm] = up
    weights = np.ones(n) if mass is None else mass
    u -= weights @ u / weights.sum()
    return NeumannSolution(u, iterations, residual, used)


def solve_potential(pair, mu, b, tol=1e-10, max_iter=None, *, x0=None, preconditioner=IC0):
    """Potential for density ``mu`` and load ``b`` on ``pair.fine``.

    Same contract as :func:`solve_neumann` with lumped-mass zero mean, but
    assembles straight into the cached reordered pattern.
    """
    ops = operators(pair)
    mu = _check_density(ops, mu)
    if np.any(mu < MU_FLOOR) or not np.all(np.isfinite(mu)):
        raise ContractError("density must be finite and at or above the floor", module="fem")
    n = ops.n
    if max_iter is None:
        max_iter = 10 * n
    perm = ops.perm
    A = sp.csr_matrix((ops.rcm_stiffness_map @ mu, ops.rcm_indices, ops.rcm_indptr), shape=(n, n))
    A.has_sorted_indices = True
    xp = None if x0 is None else x0[perm]
    up, iterations, residual, used = projected_pcg(
        A, b[perm], x0=xp, tol=tol, max_iter=max_iter, preconditioner=preconditioner
    )
    bnorm = float(np.linalg.norm(b))
    if residual > tol * bnorm:
        _raise_unconverged(iterations, residual, bnorm, tol)
    u = np.empty(n)
    u[perm] = up
    u -= ops.mass @ u / ops.mass.sum()
    return NeumannSolution(u, iterations, residual, used)


def fine_gradients(pair, u):
    """(M_h, 2) constant gradient of ``u`` on each fine triangle."""
    ops = operators(pair)
    return np.column_stack([ops.grad_x @ u, ops.grad_y @ u])


@njit(cache=True)
def _cell_gradient_stats(tris, grads, areas, child, u):
    m = child.shape[0]
    mean_norm = np.empty(m)
    energy = np.empty(m)
    for s in range(m):
        wsum = 0.0
        nsum = 0.0
        esum = 0.0
        for c in range(child.shape[1]):
            t = child[s, c]
            gx = 0.0
            gy = 0.0
            for a in range(3):
                ua = u[tris[t, a]]
                gx += grads[t, a, 0] * ua
                gy += grads[t, a, 1] * ua
            sq = gx * gx + gy * gy
            wsum += areas[t]
            nsum += areas[t] * np.sqrt(sq)
            esum += areas[t] * sq
        mean_norm[s] = nsum / wsum
        energy[s] = esum
    return mean_norm, energy


def cell_gradient_stats(pair, u):
    """Per coarse cell: mean gradient norm and ``sum_children |t| |grad u|^2``."""
    ops = operators(pair)
    u = np.asarray(u, dtype=float)
    if u.shape != (ops.n,):
        raise ContractError(f"potential has shape {u.shape}, expected ({ops.n},)", module="fem")
    fine = pair.fine
    return _cell_gradient_stats(fine.triangles, fine.gradients, fine.areas, pair.child, u)


def coarse_gradient_magnitudes(pair, u):
    """Area-weighted mean of fine gradient norms over each coarse cell.

    This is the mean of the norms, not the norm of the mean gradient.
    """
    return cell_gradient_stats(pair, u)[0]


def flux_field(pair, mu, u):
    """Per-cell flux magnitude ``mu_s |grad u|_s``."""
    return np.asarray(mu, dtype=float) * coarse_gradient_magnitudes(pair, u)
