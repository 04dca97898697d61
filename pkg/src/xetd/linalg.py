"""Small dense linear-algebra helpers with explicit singularity checks."""

import warnings

import numpy as np
import scipy.linalg

from .errors import SingularSystemError

PIVOT_TOL = 1e-12


def checked_solve(M, rhs, error_cls=SingularSystemError, what="linear system"):
    """Solve ``M x = rhs`` by LU with partial pivoting.

    A pivot of magnitude below ``PIVOT_TOL`` is treated as singular, and
    ``error_cls`` is raised carrying the condition number of ``M``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{what}: matrix must be square, got {M.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    if M.size and np.min(np.abs(np.diag(lu))) < PIVOT_TOL:
        raise error_cls(f"{what} is singular", condition_number=float(np.linalg.cond(M)))
    return scipy.linalg.lu_solve((lu, piv), rhs)


def solve_on_subspace(M, rhs, basis, error_cls=SingularSystemError, what="linear system"):
    """Solve ``M x = rhs`` for ``x`` restricted to ``span(basis)``.

    ``basis`` has orthonormal columns. When ``M`` maps that span into itself
    and ``rhs`` lies in it (true for ``Phi^T K Phi`` systems on the feature
    row space), the result is the exact minimum-norm solution.
    """
    if basis.shape[1] == basis.shape[0]:
        return checked_solve(M, rhs, error_cls, what)
    z = checked_solve(basis.T @ M @ basis, basis.T @ rhs, error_cls, what)
    return basis @ z


def min_sym_eig(M) -> float:
    """Smallest eigenvalue of the symmetric part ``(M + M^T) / 2``."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if np.size(M) else 0.0
