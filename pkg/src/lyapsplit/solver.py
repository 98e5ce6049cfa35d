"""Factored splitting iteration for ``A P + P A^T = -B B^T``.

With ``S = A - sigma I`` and ``T = A + sigma I`` the stationary iteration

    P_{k+1} = -S^{-1} P_k T^T + P_1,      P_1 = -S^{-1} B B^T,

started from ``P_0 = 0`` produces

    P_m = sum_{i=1}^m (-1)^i (S^{-i} B) (T^{i-1} B)^T,

so each step adds one rank-``p`` term at the price of one ``p``-column solve
with ``S`` and one ``p``-column product with ``T``. A nonzero start
``P_0 = U0 W0^T`` contributes the extra term ``(-1)^k (S^{-k} U0)(T^k W0)^T``,
tracked separately as the homogeneous chain.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .spectral import check_sigma

__all__ = [
    "SingularShiftError",
    "ShiftedFactorization",
    "FactoredIterate",
    "SolveReport",
    "shifted_factorize",
    "cold_start",
    "step",
    "residual_fnorm",
    "compress",
    "symmetrize",
    "run",
]

Term = Tuple[np.ndarray, np.ndarray, int]

DIVERGENCE_WINDOW = 5
DIVERGENCE_FACTOR = 10.0
STAGNATION_WINDOW = 20
STAGNATION_GAIN = 1e-3
STAGNATION_FLOOR = 1e-6
RATE_WINDOW = 10
BALANCE_LIMIT = 2.0 ** 64


class SingularShiftError(ArithmeticError):
    """``A - sigma I`` is numerically singular."""


class ShiftedFactorization:
    """LU factorization of ``A - sigma I`` for repeated multi-column solves.

    Sparse ``A`` goes through SuperLU, dense ``A`` through LAPACK ``getrf``.
    The object is not modified after construction and can be shared between
    runs that use the same ``(A, sigma)``.
    """

    def __init__(self, A, sigma):
        self.sigma = check_sigma(sigma)
        self.n = A.shape[0]
        if A.shape != (self.n, self.n):
            raise ValueError(f"A must be square, got {A.shape}")
        tiny = self.n * np.finfo(float).eps
        if sp.issparse(A):
            M = sp.csc_matrix(A - self.sigma * sp.identity(self.n, format="csc"), dtype=float)
            try:
                lu = spla.splu(M)
            except RuntimeError as exc:
                raise SingularShiftError(str(exc)) from exc
            diag = np.abs(lu.U.diagonal())
            self._solve = lu.solve
        else:
            M = np.asarray(A, dtype=float) - self.sigma * np.eye(self.n)
            with warnings.catch_warnings():
                # singularity is reported below
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu_piv = sla.lu_factor(M, check_finite=True)
            diag = np.abs(np.diag(lu_piv[0]))
            self._solve = lambda X: sla.lu_solve(lu_piv, X, check_finite=False)
        if self.n and diag.min() <= tiny * diag.max():
            raise SingularShiftError(
                f"A - {self.sigma} I is numerically singular; is A stable?")

    def solve(self, X):
        """Return ``(A - sigma I)^{-1} X`` for an ``(n,)`` or ``(n, k)`` array."""
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n:
            raise ValueError(f"right-hand side has {X.shape[0]} rows, expected {self.n}")
        if X.ndim == 2 and X.shape[1] == 0:
            return X.copy()
        return self._solve(np.ascontiguousarray(X))


def shifted_factorize(A, sigma) -> ShiftedFactorization:
    return ShiftedFactorization(A, sigma)


def _shifted_product(A, W, sigma):
    return A @ W + sigma * W


def _balance(U, W, limit=1.0):
    """Rescale ``U, W`` by reciprocal powers of two so their norms match.

    Exact in floating point and leaves ``U W^T`` unchanged; only applied
    when the norm ratio exceeds ``limit``.
    """
    nu, nw = np.linalg.norm(U), np.linalg.norm(W)
    if nu == 0 or nw == 0 or not np.isfinite(nu * nw):
        return U, W
    ratio = nw / nu
    if 1.0 / limit <= ratio <= limit:
        return U, W
    e = int(round(0.5 * np.log2(ratio)))
    return np.ldexp(U, e), np.ldexp(W, -e)


@dataclass(frozen=True)
class FactoredIterate:
    """``P = sum_i s_i U_i W_i^T + s0 U0 W0^T``.

    ``blocks`` are the accumulated terms. ``hom`` is the homogeneous chain
    coming from a nonzero start and is transformed by every step. ``chain``
    is the most recent ``B``-chain term ``(S^{-m} B, T^{m-1} B, (-1)^m)``;
    it is already counted in ``blocks`` and only serves to generate the
    next term, so it survives compression. Since ``T^m B`` grows and
    ``S^{-m} B`` shrinks, a chain pair is rescaled by reciprocal powers of
    two once their norms drift apart by more than ``BALANCE_LIMIT``.
    """

    n: int
    blocks: Tuple[Term, ...] = ()
    hom: Optional[Term] = None
    chain: Optional[Term] = None

    @classmethod
    def empty(cls, n) -> "FactoredIterate":
        return cls(n=n)

    @property
    def ncols(self) -> int:
        cols = sum(U.shape[1] for U, _, _ in self.blocks)
        if self.hom is not None:
            cols += self.hom[0].shape[1]
        return cols

    def terms(self):
        yield from self.blocks
        if self.hom is not None:
            yield self.hom

    def stacked(self, with_hom=True):
        """Column-stacked ``(U, W, d)`` with ``P = U diag(d) W^T``."""
        parts = list(self.blocks)
        if with_hom and self.hom is not None:
            parts.append(self.hom)
        if not parts:
            z = np.zeros((self.n, 0))
            return z, z, np.zeros(0)
        pairs = [_balance(U, W) for U, W, _ in parts]
        U = np.hstack([U for U, _ in pairs])
        W = np.hstack([W for _, W in pairs])
        d = np.concatenate([np.full(U.shape[1], float(s)) for U, _, s in parts])
        return U, W, d

    def to_dense(self):
        U, W, d = self.stacked()
        return (U * d) @ W.T


def _lowrank_fnorm(L, d, R):
    """``||L diag(d) R^T||_F`` from thin QR factors of ``L`` and ``R``."""
    if L.shape[1] == 0:
        return 0.0
    RL = np.linalg.qr(L, mode="r")
    RR = np.linalg.qr(R, mode="r")
    return float(np.linalg.norm((RL * d) @ RR.T))


@dataclass
class SolveReport:
    sigma: float
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    observed_rate: Optional[float] = None
    termination: str = "max_iters"
    wall_time_seconds: float = 0.0
    rhs_norm: float = 0.0
    symmetry_correction: float = 0.0

    @property
    def relative_residual(self):
        if not self.residual_history:
            return None
        if self.rhs_norm == 0:
            return 0.0 if self.residual_history[-1] == 0 else float("inf")
        return self.residual_history[-1] / self.rhs_norm

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "iterations": self.iterations,
            "residual_history": [float(r) for r in self.residual_history],
            "termination": self.termination,
            "observed_rate": self.observed_rate,
            "wall_time_seconds": self.wall_time_seconds,
            "rhs_norm": self.rhs_norm,
            "relative_residual": self.relative_residual,
            "symmetry_correction": self.symmetry_correction,
        }


def _first_term(fact, B) -> Term:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    return fact.solve(B), B, -1


def cold_start(system, fact: ShiftedFactorization) -> FactoredIterate:
    """First iterate ``P_1 = -(A - sigma I)^{-1} B B^T`` from ``P_0 = 0``."""
    term = _first_term(fact, system.B)
    return FactoredIterate(n=fact.n, blocks=(term,), chain=term)


def step(state: FactoredIterate, fact: ShiftedFactorization, A, B=None) -> FactoredIterate:
    """One splitting step ``P <- -S^{-1} P T^T + P_1``.

    Appends the next ``B``-chain term (one solve, one product) and advances
    the homogeneous chain if present (one more of each). ``B`` is only
    consulted when the state has no ``B``-chain yet, e.g. right after a warm
    start; if it is omitted then, ``B = 0`` is assumed.
    """
    if state.n != fact.n or A.shape[0] != fact.n:
        raise ValueError("dimension mismatch between iterate, factorization and A")
    sigma = fact.sigma
    blocks = state.blocks
    chain = state.chain
    if chain is not None:
        U, W, s = chain
        U, W = _balance(fact.solve(U), _shifted_product(A, W, sigma), BALANCE_LIMIT)
        chain = (U, W, -s)
        blocks = blocks + (chain,)
    elif B is not None:
        chain = _first_term(fact, B)
        blocks = blocks + (chain,)

    hom = state.hom
    if hom is not None:
        U0, W0, s0 = hom
        U0, W0 = _balance(fact.solve(U0), _shifted_product(A, W0, sigma), BALANCE_LIMIT)
        hom = (U0, W0, -s0)
    return FactoredIterate(n=state.n, blocks=blocks, hom=hom, chain=chain)


def residual_fnorm(state: FactoredIterate, A, B) -> float:
    """``||A P + P A^T + B B^T||_F`` without forming an ``n x n`` matrix.

    The residual equals ``[A U, U, B] diag(d, d, 1) [W, A W, B]^T``; its norm
    is taken from the triangular factors of the two stacked blocks.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    U, W, d = state.stacked()
    if U.shape[0] != B.shape[0] or A.shape[0] != B.shape[0]:
        raise ValueError("dimension mismatch")
    if U.shape[1] == 0:
        return float(np.linalg.norm(B.T @ B))
    L = np.hstack([A @ U, U, B])
    R = np.hstack([W, A @ W, B])
    dd = np.concatenate([d, d, np.ones(B.shape[1])])
    return _lowrank_fnorm(L, dd, R)


def compress(state: FactoredIterate, rel_tol: float) -> FactoredIterate:
    """Merge ``state.blocks`` into one truncated low-rank block.

    The blocks are orthogonalized, their small core is diagonalized by an
    SVD and the longest tail of singular values whose Frobenius norm stays
    within ``rel_tol * ||P||_F`` is dropped, together with values at the
    rounding level. The homogeneous chain and the chain head are kept as is.
    """
    if not 0 <= rel_tol < 1:
        raise ValueError(f"rel_tol must lie in [0, 1), got {rel_tol}")
    if not state.blocks:
        return state
    U, W, d = state.stacked(with_hom=False)
    Q1, R1 = sla.qr(U * d, mode="economic", check_finite=False)
    Q2, R2 = sla.qr(W, mode="economic", check_finite=False)
    Y, S, Zt = np.linalg.svd(R1 @ R2.T)

    if state.hom is None:
        total = float(np.linalg.norm(S))
    else:
        total = _lowrank_fnorm(*state.stacked())
    # tail[r] = ||S[r:]||
    tail = np.sqrt(np.cumsum((S ** 2)[::-1])[::-1])
    tail = np.append(tail, 0.0)
    keep = int(np.argmax(tail <= rel_tol * total))
    floor = max(U.shape) * np.finfo(float).eps * np.linalg.norm(R1, 2) * np.linalg.norm(R2, 2)
    keep = min(keep, int(np.count_nonzero(S > floor)))

    blocks = ()
    if keep:
        blocks = ((Q1 @ (Y[:, :keep] * S[:keep]), Q2 @ Zt[:keep].T, 1),)
    return replace(state, blocks=blocks)


def symmetrize(state: FactoredIterate):
    """Return ``((P + P^T)/2, ||P - P^T||_F / 2)`` in factored form.

    The result has no chains, so it is an output, not something to step.
    """
    U, W, d = state.stacked()
    if U.shape[1] == 0:
        return FactoredIterate.empty(state.n), 0.0
    correction = 0.5 * _lowrank_fnorm(np.hstack([U, W]), np.concatenate([d, -d]),
                                      np.hstack([W, U]))
    sym = FactoredIterate(n=state.n, blocks=((0.5 * U * d, W, 1), (0.5 * W * d, U, 1)))
    return sym, correction


def _as_start(start: FactoredIterate) -> FactoredIterate:
    U, W, d = start.stacked()
    if U.shape[1] == 0:
        return FactoredIterate.empty(start.n)
    return FactoredIterate(n=start.n, hom=(U * d, W, 1))


def _observed_rate(history, iterations):
    m = min(RATE_WINDOW, iterations)
    if m == 0:
        return None
    last, first = history[-1], history[-1 - m]
    if not (np.isfinite(last) and np.isfinite(first)):
        return float("inf")
    if last == 0 or first == 0:
        return 0.0
    return float((last / first) ** (1.0 / m))


def _diverging(history, rhs_norm):
    h = history
    if not np.isfinite(h[-1]):
        return True
    w = DIVERGENCE_WINDOW
    if len(h) > w:
        tail = h[-w - 1:]
        if all(b > a for a, b in zip(tail, tail[1:])) and tail[-1] > DIVERGENCE_FACTOR * tail[0]:
            return True
    # no progress far from the solution, e.g. contraction factor exactly 1
    w = STAGNATION_WINDOW
    if len(h) > 2 * w and h[-1] > STAGNATION_FLOOR * rhs_norm:
        if min(h[-w:]) > (1.0 - STAGNATION_GAIN) * min(h[:-w]):
            return True
    return False


def run(system, sigma, tol=1e-8, max_iters=500, compress_every=10, start=None,
        compress_tol=None, fact=None, symmetrize_output=True):
    """Iterate until ``||R_k||_F <= tol * ||B B^T||_F``.

    Parameters
    ----------
    system
        Object with ``A`` (dense or sparse, ``n x n``) and ``B`` (``n x p``).
    sigma
        Positive shift.
    tol
        Relative residual target.
    max_iters
        Iteration cap.
    compress_every
        Compress the accumulated terms every this many steps; 0 disables.
    start
        Optional :class:`FactoredIterate` used as ``P_0``; it is folded into
        the homogeneous chain. Defaults to ``P_0 = 0``.
    compress_tol
        Relative truncation tolerance, ``tol / 10`` by default.
    fact
        Precomputed :class:`ShiftedFactorization` for ``(A, sigma)``.
    symmetrize_output
        On convergence, return ``(P + P^T)/2`` (losslessly recompressed).

    Returns
    -------
    iterate, report
        Final :class:`FactoredIterate` and :class:`SolveReport`. Divergence
        is reported through ``report.termination``, not raised.
    """
    t0 = time.perf_counter()
    A = system.A
    B = np.asarray(system.B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    sigma = check_sigma(sigma)
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if fact is None:
        fact = shifted_factorize(A, sigma)
    elif fact.sigma != sigma or fact.n != A.shape[0]:
        raise ValueError("factorization does not match (A, sigma)")
    ctol = tol / 10 if compress_tol is None else compress_tol

    rhs_norm = float(np.linalg.norm(B.T @ B))
    report = SolveReport(sigma=sigma, rhs_norm=rhs_norm)
    state = FactoredIterate.empty(A.shape[0]) if start is None else _as_start(start)
    history = [residual_fnorm(state, A, B)]

    it = 0
    while True:
        if history[-1] <= tol * rhs_norm:
            report.termination = "tol"
            break
        if it >= max_iters:
            report.termination = "max_iters"
            break
        if it == 0 and start is None:
            state = cold_start(system, fact)
        else:
            state = step(state, fact, A, B)
        it += 1
        if compress_every and it % compress_every == 0 and np.isfinite(history[-1]):
            state = compress(state, ctol)
        history.append(residual_fnorm(state, A, B))
        if _diverging(history, rhs_norm):
            report.termination = "diverged"
            break

    if symmetrize_output and report.termination == "tol":
        state, report.symmetry_correction = symmetrize(state)
        state = compress(state, 0.0)

    report.iterations = it
    report.residual_history = history
    report.observed_rate = _observed_rate(history, it)
    report.wall_time_seconds = time.perf_counter() - t0
    return state, report
