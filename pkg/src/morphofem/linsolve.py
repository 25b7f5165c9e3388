"""Sparse direct solves for the Newton systems.

MKL PARDISO (through ``pypardiso``) is used when its runtime library can be
found; otherwise SuperLU from SciPy.  Either way, a system whose
factorization needed pivot perturbation or whose solution fails the
residual check raises :class:`SingularSystem` instead of returning a
silently wrong answer.
"""

import glob
import logging
import os
import sys

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import SingularSystem

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-14
RESIDUAL_RTOL = 1e-10
REFINE_STEPS = 3
ROUNDOFF_FACTOR = 1e3  # multiples of eps * | |K| |x| | tolerated as rounding floor


def _locate_mkl():
    if os.environ.get("PYPARDISO_MKL_RT"):
        return
    for root in (sys.prefix, "/usr/local", "/usr"):
        hits = sorted(glob.glob(os.path.join(root, "lib", "libmkl_rt.so*")))
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


try:
    _locate_mkl()
    from pypardiso import PyPardisoSolver
except Exception:  # pragma: no cover - depends on the platform
    PyPardisoSolver = None

# MORPHOFEM_SOLVER=superlu forces the scipy backend
BACKEND = os.environ.get("MORPHOFEM_SOLVER") or ("pardiso" if PyPardisoSolver is not None else "superlu")
if BACKEND not in ("pardiso", "superlu"):
    raise ImportError(f"MORPHOFEM_SOLVER must be 'pardiso' or 'superlu', got {BACKEND!r}")


def _refine(K, x, r, solve):
    """Iterative refinement with the existing factorization, then the
    residual check."""
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solution contains non-finite values")
    nr = np.linalg.norm(r)
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * np.linalg.norm(abs(K) @ np.abs(x))
    tol = max(RESIDUAL_RTOL * nr, floor, np.finfo(float).tiny)
    res_vec = r - K @ x
    res = np.linalg.norm(res_vec)
    for _ in range(REFINE_STEPS):
        if res <= tol:
            break
        x = x + solve(res_vec)
        res_vec = r - K @ x
        res = np.linalg.norm(res_vec)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solution contains non-finite values")
    if res > tol:
        raise SingularSystem(f"solve residual {res:.3e} exceeds {RESIDUAL_RTOL:g} * |r| = {tol:.3e}")
    return x


def _superlu(K, r, symmetric=False):
    """LU solve.  With ``symmetric`` the factorization uses diagonal
    pivoting only, so the signs of ``U``'s diagonal give the inertia."""
    try:
        if symmetric:
            lu = sla.splu(
                sp.csc_matrix(K),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        else:
            lu = sla.splu(sp.csc_matrix(K), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    diag = lu.U.diagonal()
    d = np.abs(diag)
    if d.size and d.min() < PIVOT_RTOL * d.max():
        raise SingularSystem(f"pivot ratio {d.min() / d.max():.3e} below {PIVOT_RTOL:g}")
    n_neg = None
    if symmetric and np.array_equal(lu.perm_r, lu.perm_c):
        n_neg = int(np.count_nonzero(diag < 0))
    return _refine(K, lu.solve(r), r, lu.solve), n_neg


def _pardiso(K, r, symmetric=False):
    solver = PyPardisoSolver(mtype=-2 if symmetric else 11)
    solver.set_iparm(1, 1)  # supply iparm explicitly
    solver.set_iparm(2, 2)  # nested dissection ordering
    solver.set_iparm(10, 14)  # pivot perturbation threshold 1e-14
    solver.set_iparm(11, 1)  # scaling
    solver.set_iparm(13, 1)  # weighted matching
    A = sp.triu(K, format="csr") if symmetric else sp.csr_matrix(K)
    A.sort_indices()
    try:
        x = solver.solve(A, r)
        perturbed = int(solver.get_iparm(14))
        if perturbed:
            raise SingularSystem(f"{perturbed} pivots below {PIVOT_RTOL:g} relative were perturbed")
        n_neg = int(solver.get_iparm(23)) if symmetric else None
        return _refine(K, x, r, lambda b: solver.solve(A, b)), n_neg
    except ValueError as exc:  # empty rows are rejected up front
        raise SingularSystem(str(exc)) from exc
    finally:
        solver.free_memory(everything=True)


def linear_solve(K, r, backend=None, symmetric=False, return_inertia=False):
    """Solve ``K x = r`` by sparse direct factorization.

    Parameters
    ----------
    symmetric : bool
        Use a symmetric-indefinite factorization (``K`` must be symmetric).
    return_inertia : bool
        Also return the number of negative eigenvalues of ``K`` (from the
        pivots of the symmetric factorization; None when unavailable).

    Raises
    ------
    SingularSystem
        On a (near-)singular matrix or an inaccurate solution.
    """
    K = sp.csr_matrix(K, dtype=float)
    r = np.asarray(r, dtype=float)
    if K.shape[0] == 0:
        return (np.zeros(0), 0) if return_inertia else np.zeros(0)
    symmetric = symmetric or return_inertia
    backend = backend or BACKEND
    if backend == "pardiso" and PyPardisoSolver is not None:
        x, n_neg = _pardiso(K, r, symmetric)
    else:
        x, n_neg = _superlu(K, r, symmetric)
    return (x, n_neg) if return_inertia else x
