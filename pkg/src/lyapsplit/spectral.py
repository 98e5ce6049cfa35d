"""Shift selection for the splitting iteration.

With the splitting ``I (x) (A - sI)`` vs ``-(A + sI) (x) I`` the iteration
matrix has eigenvalues ``-(l_i + s) / (l_j - s)`` over all pairs of
eigenvalues of ``A``. This module evaluates that contraction factor, the
smallest shift for which it drops below one, and a cheap shift that only
needs extreme-eigenvalue magnitudes of a spectrum lying in a damping cone
``|Im l| <= k |Re l|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SpectrumError",
    "UnstableSpectrumError",
    "SpectrumInfo",
    "check_sigma",
    "convergence_ratio",
    "min_convergent_sigma",
    "usable_sigma",
    "heuristic_sigma",
    "summarize",
    "assert_stable",
]

DENSE_EIG_CAP = 500
SAFETY_FACTOR = 1.1
SIGMA_MARGIN = 0.05


class SpectrumError(RuntimeError):
    """Eigenvalue information could not be obtained."""


class UnstableSpectrumError(ValueError):
    """An eigenvalue with nonnegative real part was supplied."""


@dataclass(frozen=True)
class SpectrumInfo:
    """Eigenvalues of ``A``, or just the magnitudes needed for shift selection.

    Use :meth:`full` or :meth:`summary` rather than the constructor.
    """

    kind: str
    eigenvalues: np.ndarray | None
    spectral_radius: float
    max_abs_real: float
    max_abs_imag: float

    @classmethod
    def full(cls, eigenvalues) -> "SpectrumInfo":
        lam = np.atleast_1d(np.asarray(eigenvalues, dtype=complex))
        if lam.size == 0:
            raise ValueError("empty spectrum")
        return cls("full", lam, float(np.max(np.abs(lam))),
                   float(np.max(np.abs(lam.real))), float(np.max(np.abs(lam.imag))))

    @classmethod
    def summary(cls, spectral_radius, max_abs_real, max_abs_imag) -> "SpectrumInfo":
        vals = (float(spectral_radius), float(max_abs_real), float(max_abs_imag))
        if min(vals) < 0:
            raise ValueError("summary fields must be nonnegative")
        return cls("summary", None, *vals)

    def is_stable(self) -> bool:
        if self.kind != "full":
            raise ValueError("stability needs the full spectrum")
        return bool(np.all(self.eigenvalues.real < 0))


def check_sigma(sigma) -> float:
    sigma = float(sigma)
    if not (sigma > 0 and np.isfinite(sigma)):
        raise ValueError(f"sigma must be positive, got {sigma}")
    return sigma


def _stable_eigenvalues(spec: SpectrumInfo) -> np.ndarray:
    if spec.kind != "full":
        raise ValueError("a full spectrum is required, got a summary")
    lam = spec.eigenvalues
    if np.any(lam.real >= 0):
        bad = lam[lam.real >= 0][0]
        raise UnstableSpectrumError(f"eigenvalue {bad} has nonnegative real part")
    return lam


def convergence_ratio(spec: SpectrumInfo, sigma) -> float:
    """Spectral radius of the iteration matrix for shift ``sigma``.

    Equals ``max_{i,j} |l_i + sigma| / |l_j - sigma|``; the iteration
    converges from every start iff the result is below one.
    """
    lam = _stable_eigenvalues(spec)
    sigma = check_sigma(sigma)
    return float(np.max(np.abs(lam + sigma)) / np.min(np.abs(lam - sigma)))


def min_convergent_sigma(spec: SpectrumInfo) -> float:
    """Exclusive lower bound on convergent shifts.

    ``convergence_ratio(spec, s) < 1`` holds exactly for ``s`` above the
    returned value, which is

        max(0, max_{i,j} (|l_j|^2 - |l_i|^2) / (2 (Re l_j + Re l_i))).
    """
    lam = _stable_eigenvalues(spec)
    mod2 = np.abs(lam) ** 2
    re = lam.real
    bound = (mod2[None, :] - mod2[:, None]) / (2.0 * (re[None, :] + re[:, None]))
    return max(0.0, float(np.max(bound)))


def usable_sigma(spec: SpectrumInfo, margin=SIGMA_MARGIN) -> float:
    """A convergent shift just above :func:`min_convergent_sigma`.

    When every eigenvalue has the same modulus the bound is zero; the
    spectral radius is returned then, since tiny shifts drive the ratio to 1.
    """
    s_min = min_convergent_sigma(spec)
    if s_min > 0:
        return s_min * (1.0 + margin)
    return spec.spectral_radius


def heuristic_sigma(spec: SpectrumInfo, cone_slope=20.0) -> float:
    """Shift from extreme magnitudes only, for spectra in the slope-``k`` cone.

    Returns ``min((k+1)/2 * r, max|Re|/2 + k/2 * max|Im|)``. For ``k = 20``
    (5% damping ratio) this is ``min(10.5 r, max|Re|/2 + 10 max|Im|)``.
    Provided ``|Im l| <= k |Re l|`` for every eigenvalue, the result is at
    least :func:`min_convergent_sigma`.
    """
    k = float(cone_slope)
    if not k > 0:
        raise ValueError(f"cone slope must be positive, got {k}")
    if not spec.spectral_radius > 0:
        raise ValueError("spectral radius is zero")
    sigma = min(0.5 * (k + 1.0) * spec.spectral_radius,
                0.5 * spec.max_abs_real + 0.5 * k * spec.max_abs_imag)
    return check_sigma(sigma)


def _extreme_eigs(A, which, k):
    try:
        return spla.eigs(A, k=k, which=which, return_eigenvectors=False,
                         maxiter=max(1000, 20 * A.shape[0]))
    except spla.ArpackNoConvergence as exc:
        raise SpectrumError(f"ARPACK did not converge for which={which!r}") from exc


def summarize(A, mode="exact", dense_cap=DENSE_EIG_CAP, safety=SAFETY_FACTOR) -> SpectrumInfo:
    """Spectrum of ``A`` for shift selection.

    ``mode="exact"`` runs a dense eigensolve (``n <= dense_cap``) and returns
    the full spectrum. ``mode="estimated"`` returns a summary built from
    ARPACK runs targeting largest modulus, most negative real part and
    largest imaginary part, each field multiplied by ``safety``; matrices
    too small for ARPACK fall back to a dense solve before inflation.
    """
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"A must be square, got {A.shape}")
    if mode == "exact":
        if n > dense_cap:
            raise SpectrumError(f"n={n} exceeds the dense eigensolver cap {dense_cap}")
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        return SpectrumInfo.full(np.linalg.eigvals(dense))
    if mode != "estimated":
        raise ValueError(f"unknown mode {mode!r}")

    nev = min(6, n - 2)
    if nev < 1 or n <= 20:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        lam = np.linalg.eigvals(dense)
        r, re, im = np.max(np.abs(lam)), np.max(np.abs(lam.real)), np.max(np.abs(lam.imag))
    else:
        op = A if sp.issparse(A) else np.asarray(A, dtype=float)
        lm = _extreme_eigs(op, "LM", nev)
        sr = _extreme_eigs(op, "SR", nev)
        li = _extreme_eigs(op, "LI", nev)
        everything = np.concatenate([lm, sr, li])
        r = np.max(np.abs(everything))
        re = np.max(np.abs(everything.real))
        im = np.max(np.abs(everything.imag))
    return SpectrumInfo.summary(safety * r, safety * re, safety * im)


def assert_stable(system, spec: SpectrumInfo | None = None):
    """Return ``system`` flagged as stability-checked, or raise.

    Without ``spec`` a dense eigensolve of ``system.A`` is used.
    """
    from dataclasses import replace

    if spec is None:
        spec = summarize(system.A, "exact")
    if not spec.is_stable():
        raise UnstableSpectrumError("A has eigenvalues with nonnegative real part")
    return replace(system, stability_checked=True)
