"""Dense reference solvers for desk-sized problems.

These are correctness anchors for the tests and the self-test, not
production code: everything here is O(n^6) or O(n^3) and refuses large n.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "OracleError",
    "kron_operator",
    "kron_solve",
    "eig_closed_form",
    "iteration_matrix",
    "iteration_matrix_radius",
]

KRON_CAP = 60
ITERATION_CAP = 12
EIGVEC_COND_MAX = 1e8


class OracleError(ValueError):
    pass


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def kron_operator(A, sigma=None):
    """``I (x) A + A (x) I``, or ``I (x) (A - sI) + (A + sI) (x) I`` if ``sigma`` is given.

    Column-stacking vectorization, so ``vec(A X B) = (B^T (x) A) vec(X)``.
    """
    A = _dense(A)
    n = A.shape[0]
    eye = np.eye(n)
    if sigma is None:
        return np.kron(eye, A) + np.kron(A, eye)
    return np.kron(eye, A - sigma * eye) + np.kron(A + sigma * eye, eye)


def _vec(X):
    return np.asarray(X).reshape(-1, order="F")


def _unvec(x, n):
    return np.asarray(x).reshape(n, n, order="F")


def kron_solve(system, sigma=None, cap=KRON_CAP):
    """Solve ``A P + P A^T = -B B^T`` through the ``n^2 x n^2`` Kronecker system.

    The result is symmetrized; asymmetry above 1e-9 or a smallest eigenvalue
    below -1e-10 (both relative to ``||P||``) raises :class:`OracleError`.
    """
    A = _dense(system.A)
    B = np.asarray(system.B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    if n > cap:
        raise OracleError(f"n={n} exceeds the Kronecker oracle cap {cap}")
    K = kron_operator(A, sigma)
    try:
        p = np.linalg.solve(K, _vec(-B @ B.T))
    except np.linalg.LinAlgError as exc:
        raise OracleError("Kronecker operator is singular; A is not stable") from exc
    P = _unvec(p, n)
    scale = max(1.0, np.linalg.norm(P))
    if np.linalg.norm(P - P.T) > 1e-9 * scale:
        raise OracleError("Kronecker solution is not symmetric")
    P = 0.5 * (P + P.T)
    if n and np.linalg.eigvalsh(P)[0] < -1e-10 * scale:
        raise OracleError("Kronecker solution is not positive semidefinite; A is not stable")
    return P


def eig_closed_form(system, cap=KRON_CAP, cond_max=EIGVEC_COND_MAX):
    """Closed form ``P = V (-C o (R R^H)) V^H`` with ``A V = V D``, ``R = V^{-1} B``.

    ``C[i, j] = 1 / (l_i + conj(l_j))``. Requires a well-conditioned
    eigenvector matrix.
    """
    A = _dense(system.A)
    B = np.asarray(system.B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    if n > cap:
        raise OracleError(f"n={n} exceeds the oracle cap {cap}")
    lam, V = np.linalg.eig(A)
    if np.linalg.cond(V) > cond_max:
        raise OracleError("A is defective or nearly so (ill-conditioned eigenvectors)")
    if np.any(lam.real >= 0):
        raise OracleError("A is not stable")
    R = np.linalg.solve(V, B)
    C = 1.0 / (lam[:, None] + lam.conj()[None, :])
    X = -C * (R @ R.conj().T)
    return (V @ X @ V.conj().T).real


def iteration_matrix(A, sigma):
    """``-(A + sI) (x) (A - sI)^{-1}``, the map ``p_k -> p_{k+1}`` minus its affine part."""
    A = _dense(A)
    eye = np.eye(A.shape[0])
    return -np.kron(A + sigma * eye, np.linalg.inv(A - sigma * eye))


def iteration_matrix_radius(A, sigma, cap=ITERATION_CAP):
    n = A.shape[0]
    if n > cap:
        raise OracleError(f"n={n} exceeds the iteration-matrix cap {cap}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return float(np.max(np.abs(np.linalg.eigvals(iteration_matrix(A, sigma)))))
