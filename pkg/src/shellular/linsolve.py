"""Sparse SPD solvers used by the homogenization pipeline.

``direct`` factorizes once and back-substitutes every right-hand side.  It
uses MKL PARDISO through :mod:`pypardiso` when the MKL runtime can be found
and falls back to SuperLU otherwise.  ``cg`` is conjugate gradients with a
smoothed-aggregation AMG preconditioner for systems too large to factorize.

The effective tensor is an energy, so its error is quadratic in the
displacement error; a CG residual of 1e-6 leaves C accurate to ~1e-10.
"""

from __future__ import annotations

import glob
import logging
import os
import sys

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import SolverError

log = logging.getLogger(__name__)

_PARDISO = None
SUPERLU_MAX_DOFS = 300_000


def _locate_mkl_runtime() -> str | None:
    roots = {sys.prefix, sys.base_prefix, "/usr/local", "/usr"}
    for root in sorted(roots):
        for pattern in ("lib/libmkl_rt.so*", "lib64/libmkl_rt.so*", "Library/bin/mkl_rt*.dll"):
            hits = sorted(glob.glob(os.path.join(root, pattern)))
            if hits:
                return hits[0]
    return None


def pardiso_available() -> bool:
    global _PARDISO
    if _PARDISO is None:
        if "PYPARDISO_MKL_RT" not in os.environ:
            path = _locate_mkl_runtime()
            if path:
                os.environ["PYPARDISO_MKL_RT"] = path
        try:
            import pypardiso  # noqa: F401
        except (ImportError, OSError) as exc:
            log.info("PARDISO unavailable (%s); using SuperLU", exc)
            _PARDISO = False
        else:
            _PARDISO = True
    return _PARDISO


def matrix_stats(A) -> dict:
    diag = A.diagonal()
    return {"n": int(A.shape[0]), "nnz": int(A.nnz),
            "diag_min": float(diag.min()) if len(diag) else 0.0,
            "diag_max": float(diag.max()) if len(diag) else 0.0}


class FactorizationTooLarge(SolverError):
    """Predicted factor memory exceeds the allowed budget."""


def solve_direct(A: sps.csr_matrix, B: np.ndarray, max_memory: float | None = None) -> np.ndarray:
    """One factorization of SPD ``A`` reused for all columns of ``B``.

    With ``max_memory`` (bytes) the PARDISO analysis phase runs first and
    :class:`FactorizationTooLarge` is raised when the predicted factorization
    memory exceeds it.
    """
    if pardiso_available():
        import pypardiso

        solver = pypardiso.PyPardisoSolver(mtype=2)
        solver.set_iparm(1, 1)  # user-supplied iparm
        solver.set_iparm(2, 2)  # nested dissection ordering
        upper = sps.triu(A, format="csr")
        B = np.ascontiguousarray(B)
        try:
            if max_memory is not None:
                solver.set_phase(11)
                solver._call_pardiso(upper, B)
                iparm = solver.get_iparms()
                # iparm(15..17) report peak analysis / permanent / factorization memory in KB
                predicted = 1024.0 * max(iparm[15], iparm[16] + iparm[17])
                if predicted > max_memory:
                    raise FactorizationTooLarge(
                        f"factorization needs ~{predicted / 2**30:.1f} GiB, budget {max_memory / 2**30:.1f} GiB",
                        stage="solve", details=matrix_stats(A))
            X = solver.solve(upper, B)
        except SolverError:
            raise
        except Exception as exc:  # PyPardisoError carries the MKL error code
            raise SolverError(f"PARDISO factorization failed: {exc}", stage="solve",
                              details=matrix_stats(A)) from exc
        finally:
            solver.free_memory(everything=True)
        return np.asarray(X).reshape(B.shape)
    if max_memory is not None and A.shape[0] > SUPERLU_MAX_DOFS:
        raise FactorizationTooLarge(f"{A.shape[0]} unknowns exceed the SuperLU limit", stage="solve",
                                    details=matrix_stats(A))
    try:
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}", stage="solve",
                          details=matrix_stats(A)) from exc
    return lu.solve(B)


def solve_cg(A: sps.csr_matrix, B: np.ndarray, rtol: float = 1e-6, maxiter: int = 5000) -> np.ndarray:
    """AMG-preconditioned CG, one column at a time against a shared hierarchy.

    The hierarchy is built in single precision, which halves the V-cycle
    memory traffic; CG itself runs in double precision.
    """
    import pyamg

    n = A.shape[0]
    near_null = np.zeros((n, 3), dtype=np.float32)
    for i in range(3):
        near_null[i::3, i] = 1.0
    ml = pyamg.smoothed_aggregation_solver(
        A.astype(np.float32), B=near_null, symmetry="symmetric", max_coarse=2000,
        presmoother=("gauss_seidel", {"sweep": "forward", "iterations": 1}),
        postsmoother=("gauss_seidel", {"sweep": "backward", "iterations": 1}))
    cycle = ml.aspreconditioner(cycle="V")
    M = spla.LinearOperator((n, n), dtype=np.float64,
                            matvec=lambda v: (cycle @ v.astype(np.float32)).astype(np.float64))
    X = np.zeros(B.shape)
    for s in range(B.shape[1]):
        b = B[:, s]
        if not np.any(b):
            continue
        x, info = spla.cg(A, b, rtol=rtol, atol=0.0, M=M, maxiter=maxiter)
        if info != 0:
            raise SolverError(f"CG did not converge (info={info})", stage="solve",
                              details=matrix_stats(A))
        X[:, s] = x
    return X
