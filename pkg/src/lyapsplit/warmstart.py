"""Starting iterates from eigenvectors of ``A``.

If ``B = V R`` with ``A V = V D`` (``D`` diagonal, stable), then
``P = V X V^H`` with ``X = -C o (R R^H)`` and ``C[i, j] = 1/(l_i + conj(l_j))``
solves the Lyapunov equation exactly. When ``B`` only lies close to
``span(V)`` the same formula, with ``R`` from least squares, is a good
starting point for the splitting iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .solver import FactoredIterate
from .spectral import SpectrumError

__all__ = [
    "EigenBasis",
    "WarmStartResult",
    "DeficientBasisError",
    "select_eigenpairs",
    "cauchy_core",
    "warm_start",
]

BASIS_TOL = 1e-8
DENSE_CAP = 500


class DeficientBasisError(ValueError):
    pass


def _is_real(lam):
    return abs(lam.imag) <= 1e-12 * max(1.0, abs(lam))


def _pairing(lam, V):
    """Group columns into real singletons and conjugate pairs; None if not closed."""
    k = len(lam)
    used = np.zeros(k, dtype=bool)
    units = []
    for j in range(k):
        if used[j]:
            continue
        used[j] = True
        if _is_real(lam[j]) and np.allclose(V[:, j].imag, 0, atol=1e-12):
            units.append((j,))
            continue
        partner = None
        for i in range(j + 1, k):
            if (not used[i] and abs(lam[i] - np.conj(lam[j])) <= 1e-10 * max(1.0, abs(lam[j]))
                    and np.allclose(V[:, i], np.conj(V[:, j]), atol=1e-12)):
                partner = i
                break
        if partner is None:
            return None
        used[partner] = True
        units.append((j, partner))
    return units


@dataclass(frozen=True)
class EigenBasis:
    """Approximate eigenpairs ``A V ~ V diag(eigenvalues)``."""

    V: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=complex)
        lam = np.atleast_1d(np.asarray(self.eigenvalues, dtype=complex))
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[1] != lam.size:
            raise ValueError(f"{V.shape[1]} eigenvectors but {lam.size} eigenvalues")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    @property
    def closed_under_conjugation(self) -> bool:
        return _pairing(self.eigenvalues, self.V) is not None

    def residuals(self, A):
        """Relative eigen-residuals ``||A v - l v|| / (||A||_F ||v||)`` per column."""
        AV = A @ self.V
        normA = spla.norm(A) if sp.issparse(A) else np.linalg.norm(A)
        res = np.linalg.norm(AV - self.V * self.eigenvalues, axis=0)
        return res / (normA * np.linalg.norm(self.V, axis=0))

    def check(self, A, tol=BASIS_TOL):
        bad = np.flatnonzero(self.residuals(A) > tol)
        if bad.size:
            raise ValueError(f"columns {bad.tolist()} are not eigenvectors to tolerance {tol}")
        return self


@dataclass(frozen=True)
class WarmStartResult:
    P0: FactoredIterate
    projection_residual: float
    X: np.ndarray


def cauchy_core(eigenvalues):
    """``C[i, j] = 1 / (l_i + conj(l_j))``; Hermitian, finite for stable input."""
    lam = np.atleast_1d(np.asarray(eigenvalues, dtype=complex))
    if np.any(lam.real >= 0):
        raise ValueError("eigenvalues must have negative real part")
    return 1.0 / (lam[:, None] + lam.conj()[None, :])


def _candidates(A, k, dense_cap):
    n = A.shape[0]
    if n <= dense_cap:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        lam, V = np.linalg.eig(dense)
        keep = [j for j in range(n) if _is_real(lam[j]) or lam[j].imag > 0]
        return lam[keep], V[:, keep]

    nev = min(n - 2, math.ceil(3 * k / 2))
    try:
        lam1, V1 = spla.eigs(A, k=nev, sigma=0, which="LM")
        lam2, V2 = spla.eigs(A, k=nev, which="LR")
    except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
        raise SpectrumError("eigensolver failed while collecting warm-start candidates") from exc
    lam = np.concatenate([lam1, lam2])
    V = np.hstack([V1, V2])
    flip = lam.imag < 0
    lam[flip] = lam[flip].conj()
    V[:, flip] = V[:, flip].conj()
    V = V / np.linalg.norm(V, axis=0)
    keep = []
    for j in range(lam.size):
        dup = any(abs(lam[j] - lam[i]) <= 1e-8 * max(1.0, abs(lam[j]))
                  and abs(np.vdot(V[:, i], V[:, j])) > 1 - 1e-8 for i in keep)
        if not dup:
            keep.append(j)
    return lam[keep], V[:, keep]


def _real_span(vectors):
    cols = []
    for lam, v in vectors:
        if _is_real(lam):
            cols.append(v.real)
        else:
            cols.extend([v.real, v.imag])
    return np.column_stack(cols)


def _projection_residual(basis_real, B):
    coef = np.linalg.lstsq(basis_real, B, rcond=None)[0]
    return float(np.linalg.norm(B - basis_real @ coef))


def _take(units, order, k):
    chosen, cols = [], 0
    for j in order:
        if cols >= k:
            break
        chosen.append(units[j])
        cols += 1 if _is_real(units[j][0]) else 2
    return chosen


def _greedy(units, B, k):
    pool, chosen, cols = list(range(len(units))), [], 0
    while cols < k:
        scores = [_projection_residual(_real_span([units[j] for j in chosen + [i]]), B)
                  for i in pool]
        j = pool.pop(int(np.argmin(scores)))
        chosen.append(j)
        cols += 1 if _is_real(units[j][0]) else 2
    return [units[j] for j in chosen]


def _by_coefficient(units, B, k):
    basis = _real_span(units)
    coef = np.linalg.lstsq(basis, B, rcond=None)[0] * np.linalg.norm(basis, axis=0)[:, None]
    weight, row = [], 0
    for l, _ in units:
        w = 1 if _is_real(l) else 2
        weight.append(np.linalg.norm(coef[row:row + w]))
        row += w
    return _take(units, np.argsort(weight, kind="stable")[::-1], k)


def select_eigenpairs(A, B, k, dense_cap=DENSE_CAP, basis_tol=BASIS_TOL) -> EigenBasis:
    """Pick eigenvectors of ``A`` whose span best captures ``B``.

    Candidates come from a dense eigensolve when ``n <= dense_cap`` and from
    ARPACK (smallest magnitude and rightmost eigenvalues, about ``3k`` in
    total) otherwise. Two subsets are scored, one grown greedily by residual
    reduction and one ranked by least-squares weight over the whole pool; the
    smaller residual wins. Complex eigenvalues are taken together with their
    conjugates, so the result may hold up to one more column than ``k`` per
    complex pick.
    """
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    lam, V = _candidates(A, k, dense_cap)
    units = [(lam[j], V[:, j]) for j in range(lam.size)]

    width = [1 if _is_real(l) else 2 for l, _ in units]
    if sum(width) < k:
        raise SpectrumError(f"only {sum(width)} eigenvectors available, {k} requested")

    # greedy residual reduction can lock onto a vector outside span(B)'s
    # eigenspace; a ranking by fitted coefficient over the whole pool
    # recovers exact invariant subspaces, so keep whichever set fits better
    subsets = [_greedy(units, B, k), _by_coefficient(units, B, k)]
    chosen = min(subsets, key=lambda c: _projection_residual(_real_span(c), B))

    out_lam, out_V = [], []
    for l, v in chosen:
        if _is_real(l):
            out_lam.append(complex(l.real))
            out_V.append(v.real.astype(complex))
        else:
            out_lam.extend([l, np.conj(l)])
            out_V.extend([v, v.conj()])
    basis = EigenBasis(np.column_stack(out_V), np.array(out_lam))
    return basis.check(A, basis_tol)


def _realify(basis, X, units):
    """Rewrite ``V X V^H`` as ``Vr Y Vr^T`` with a real basis ``Vr`` and real ``Y``."""
    V = basis.V
    k = basis.k
    Vr = np.empty(V.shape, dtype=float)
    M = np.zeros((k, k), dtype=complex)
    for unit in units:
        if len(unit) == 1:
            (j,) = unit
            Vr[:, j] = V[:, j].real
            M[j, j] = 1.0
        else:
            a, b = unit
            Vr[:, a], Vr[:, b] = V[:, a].real, V[:, a].imag
            # v = re + i im, conj(v) = re - i im
            M[a, a], M[b, a] = 1.0, 1j
            M[a, b], M[b, b] = 1.0, -1j
    Y = (M @ X @ M.conj().T).real
    return Vr, 0.5 * (Y + Y.T)


def warm_start(basis: EigenBasis, B) -> WarmStartResult:
    """Starting iterate ``V (-C o R R^H) V^H`` with ``R`` the least-squares fit of ``B``.

    Exact solution of the Lyapunov equation when ``B`` lies in ``span(V)``.
    The iterate is returned as a homogeneous chain only.
    """
    V = basis.V
    n = V.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    if np.linalg.matrix_rank(V) < basis.k:
        raise DeficientBasisError(
            f"eigenbasis with {basis.k} columns has rank {np.linalg.matrix_rank(V)}")
    R = np.linalg.lstsq(V, B, rcond=None)[0]
    residual = float(np.linalg.norm(B - V @ R))
    X = -cauchy_core(basis.eigenvalues) * (R @ R.conj().T)

    if not np.any(X):
        return WarmStartResult(FactoredIterate.empty(n), residual, X)
    units = _pairing(basis.eigenvalues, V)
    if units is not None:
        Vr, Y = _realify(basis, X, units)
        U0, W0 = Vr @ Y, Vr
    else:
        G = V @ X
        U0 = np.hstack([G.real, G.imag])
        W0 = np.hstack([V.real, V.imag])
    return WarmStartResult(FactoredIterate(n=n, hom=(U0, W0, 1)), residual, X)
