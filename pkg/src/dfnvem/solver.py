"""Direct and iterative solution of the saddle-point systems.

The default path is a sparse LU factorization with a fixed column
ordering, which handles the symmetric indefinite structure robustly at
the problem sizes of interest and is bit-reproducible.  The fallback is
MINRES with a block-diagonal preconditioner (inverse flux diagonal and a
diagonal Schur-complement proxy for pressure and multiplier rows).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .assembly import SaddleSystem
from .errors import SingularSystem

__all__ = ["SolveReport", "solve"]


@dataclass
class SolveReport:
    x: np.ndarray
    residual: float
    method: str
    iterations: int = 0
    nullspace_pinned: bool = False


def _relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return float(np.linalg.norm(A @ x))
    return float(np.linalg.norm(A @ x - b) / nb)


def _block_preconditioner(system: SaddleSystem):
    A = system.A
    n = A.shape[0]
    d = np.abs(A.diagonal())
    flux = system.dofs.flux_like()
    scale = np.ones(n)
    mask = np.zeros(n, bool)
    mask[flux] = True
    df = np.where(d > 0, d, 1.0)
    scale[mask] = 1.0 / df[mask]
    # Diagonal Schur proxy: diag(B diag(M)^-1 B^T) on constraint rows.
    other = np.where(~mask)[0]
    Ao = A[other]
    prox = np.asarray(
        Ao.multiply(Ao).dot(sparse.diags(1.0 / df).dot(np.ones(n)))
    ).ravel()
    prox[prox <= 0] = 1.0
    scale[other] = 1.0 / prox
    return spla.LinearOperator((n, n), matvec=lambda v: scale * v)


def solve(system: SaddleSystem, method: str = "direct",
          tol: float = 1e-10, maxiter: int | None = None) -> SolveReport:
    """Solve an assembled system and report the relative residual.

    ``method`` is ``direct`` (sparse LU, default) or ``minres``.  Raises
    ``SingularSystem`` on structural or numerical rank deficiency.
    """
    A = system.A.tocsc()
    b = system.rhs
    if method == "direct":
        try:
            lu = spla.splu(A, permc_spec="COLAMD")
            x = lu.solve(b)
        except RuntimeError as exc:
            raise SingularSystem(
                f"direct factorization failed: {exc}"
            ) from exc
        if not np.isfinite(x).all():
            raise SingularSystem("solution contains non-finite entries")
        res = _relative_residual(A, x, b)
        if res > max(tol, 1e-8):
            raise SingularSystem(
                f"direct solve residual {res:.3e} exceeds {max(tol, 1e-8):.1e}; "
                "system is numerically singular"
            )
        return SolveReport(x=x, residual=res, method="direct",
                           nullspace_pinned=bool(system.pinned))
    if method == "minres":
        M = _block_preconditioner(system)
        count = {"it": 0}

        def cb(_):
            count["it"] += 1

        x, info = spla.minres(A, b, rtol=tol, M=M,
                              maxiter=maxiter or 50 * A.shape[0], callback=cb)
        if info != 0:
            raise SingularSystem(f"minres did not converge (info={info})")
        return SolveReport(x=x, residual=_relative_residual(A, x, b),
                           method="minres", iterations=count["it"],
                           nullspace_pinned=bool(system.pinned))
    raise ValueError(f"unknown solver method {method!r}")
