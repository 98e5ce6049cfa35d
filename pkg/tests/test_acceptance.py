"""Exit criteria, one test per criterion, each at its stated tolerance."""

import time
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from lyapsplit import StableSystem, oracle
from lyapsplit.solver import cold_start, compress, residual_fnorm, run, shifted_factorize, step
from lyapsplit.spectral import (
    SpectrumInfo,
    convergence_ratio,
    heuristic_sigma,
    min_convergent_sigma,
    summarize,
)
from lyapsplit.warmstart import select_eigenpairs, warm_start

from conftest import random_stable


def test_c01_scalar_closed_form(criterion):
    system = StableSystem(np.array([[-2.0]]), np.array([[1.0]]))
    f = shifted_factorize(system.A, 1.0)
    it = cold_start(system, f)
    worst = 0.0
    for k in range(1, 16):
        if k > 1:
            it = step(it, f, system.A)
        exact_gap = Fraction(1, 4) / 3 ** k
        assert abs(sum(Fraction((-1) ** (i - 1), 3 ** i) for i in range(1, k + 1)) - Fraction(1, 4)) == exact_gap
        worst = max(worst, abs(abs(it.to_dense()[0, 0] - 0.25) - float(exact_gap)))
    t0 = time.perf_counter()
    P, report = run(system, 1.0, tol=1e-10)
    elapsed = time.perf_counter() - t0
    ok = (worst <= 1e-12 and report.termination == "tol" and 20 <= report.iterations <= 22
          and elapsed < 0.1)
    criterion(1, ok, f"max gap error {worst:.1e}, {report.iterations} iterations, {elapsed * 1e3:.1f} ms")


def test_c02_oracle_equivalence(criterion):
    rng = np.random.default_rng(2002)
    worst, failures = 0.0, []
    t0 = time.perf_counter()
    for case in range(50):
        n = int(rng.integers(2, 26))
        p = int(rng.integers(1, 4))
        A = random_stable(rng, n)
        system = StableSystem(A, rng.standard_normal((n, p)))
        sigma = heuristic_sigma(summarize(A, "exact"))
        P, report = run(system, sigma, tol=1e-9)
        P_ref = oracle.kron_solve(system)
        err = np.linalg.norm(P.to_dense() - P_ref) / np.linalg.norm(P_ref)
        worst = max(worst, err)
        if report.termination != "tol" or err > 1e-7:
            failures.append(case)
    elapsed = time.perf_counter() - t0
    criterion(2, not failures and elapsed < 30,
              f"worst relative error {worst:.1e} over 50 systems in {elapsed:.1f} s, failures {failures}")


def test_c03_ratio_bound_equivalence(criterion):
    rng = np.random.default_rng(2003)
    mismatches, worst_boundary = 0, 0.0
    for _ in range(200):
        n_pairs = int(rng.integers(0, 5))
        n_real = int(rng.integers(1 if n_pairs == 0 else 0, 13 - 2 * n_pairs))
        z = -rng.uniform(0.05, 5, n_pairs) + 1j * rng.uniform(0, 5, n_pairs)
        eigs = np.concatenate([-rng.uniform(0.05, 5, n_real), z, z.conj()])
        spec = SpectrumInfo.full(eigs)
        s_min = min_convergent_sigma(spec)
        sigma = rng.uniform(1e-3, 3 * s_min + 1)
        if (convergence_ratio(spec, sigma) < 1) != (sigma > s_min):
            mismatches += 1
        if s_min > 0:
            worst_boundary = max(worst_boundary, abs(convergence_ratio(spec, s_min) - 1))
    criterion(3, mismatches == 0 and worst_boundary <= 1e-12,
              f"{mismatches} mismatches in 200 spectra, |rho(sigma_min) - 1| <= {worst_boundary:.1e}")


def test_c04_iteration_matrix_radius(criterion):
    rng = np.random.default_rng(2004)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 9))
        A = random_stable(rng, n)
        sigma = rng.uniform(0.1, 6)
        worst = max(worst, abs(convergence_ratio(summarize(A, "exact"), sigma)
                               - oracle.iteration_matrix_radius(A, sigma)))
    criterion(4, worst <= 1e-10, f"max |ratio - radius| = {worst:.1e} over 20 systems")


def test_c05_divergence(criterion):
    system = StableSystem(np.diag([-1.0, -3.0]), np.ones((2, 1)))
    _, boundary = run(system, 1.0, max_iters=500)
    _, divergent = run(system, 0.5, max_iters=500)
    rho = convergence_ratio(SpectrumInfo.full([-1.0, -3.0]), 0.5)
    ok = (boundary.termination != "tol" and rho > 1
          and divergent.termination == "diverged" and divergent.iterations <= 50)
    criterion(5, ok, f"sigma=1 -> {boundary.termination}; sigma=0.5 (rho={rho:.3f}) -> "
                     f"{divergent.termination} after {divergent.iterations} iterations")


def test_c06_rate_law(criterion):
    rng = np.random.default_rng(2006)
    worst, count = 0.0, 0
    while count < 20:
        n = int(rng.integers(2, 11))
        A = random_stable(rng, n)
        sigma = rng.uniform(0.2, 15)
        rho = convergence_ratio(summarize(A, "exact"), sigma)
        if not 0.5 <= rho <= 0.9:
            continue
        system = StableSystem(A, rng.standard_normal((n, int(rng.integers(1, 4)))))
        _, report = run(system, sigma, tol=1e-300, max_iters=30, compress_every=0)
        assert report.iterations >= 20
        worst = max(worst, abs(report.observed_rate - rho) / rho)
        count += 1
    criterion(6, worst <= 0.15, f"max relative rate deviation {worst:.3f} over 20 systems")


def _invariant_rhs(rng, A, k):
    lam, V = np.linalg.eig(A)
    cols, used = [], 0
    for j in rng.permutation(len(lam)):
        width = 1 if lam[j].imag == 0 else 2
        if lam[j].imag < 0 or used + width > k:
            continue
        cols += [V[:, j].real] if width == 1 else [V[:, j].real, V[:, j].imag]
        used += width
        if used == k:
            break
    Vr = np.column_stack(cols)
    return Vr @ rng.standard_normal((Vr.shape[1], int(rng.integers(1, 4)))), used


def test_c07_warm_start_exactness(criterion):
    rng = np.random.default_rng(2007)
    worst_res, worst_full = 0.0, 0.0
    for _ in range(30):
        n = int(rng.integers(5, 31))
        A = random_stable(rng, n)
        B, k = _invariant_rhs(rng, A, int(rng.integers(1, 6)))
        ws = warm_start(select_eigenpairs(A, B, k), B)
        assert ws.projection_residual <= 1e-12 * np.linalg.norm(B)
        worst_res = max(worst_res, residual_fnorm(ws.P0, A, B) / np.linalg.norm(B.T @ B))
    for _ in range(10):
        n = int(rng.integers(2, 21))
        A = random_stable(rng, n)
        system = StableSystem(A, rng.standard_normal((n, int(rng.integers(1, 4)))))
        P_ref = oracle.kron_solve(system)
        for P in (warm_start(select_eigenpairs(A, system.B, n), system.B).P0.to_dense(),
                  oracle.eig_closed_form(system)):
            worst_full = max(worst_full, np.linalg.norm(P - P_ref) / np.linalg.norm(P_ref))
    criterion(7, worst_res <= 1e-8 and worst_full <= 1e-8,
              f"warm-start relative residual <= {worst_res:.1e}; full basis error <= {worst_full:.1e}")


def test_c08_cone_heuristic(criterion):
    rng = np.random.default_rng(2008)
    violations = 0
    for _ in range(200):
        m = int(rng.integers(1, 7))
        re = -rng.uniform(0.01, 10, m)
        im = rng.uniform(0, 20, m) * np.abs(re) * (rng.random(m) < 0.7)
        eigs = np.concatenate([re + 1j * im, (re - 1j * im)[im > 0]])
        spec = SpectrumInfo.full(eigs)
        if heuristic_sigma(spec, 20) < min_convergent_sigma(spec):
            violations += 1
    criterion(8, violations == 0, f"{violations} violations in 200 cone spectra")


class _CountingMatrix:
    def __init__(self, A):
        self.A, self.shape, self.calls = A, A.shape, []

    def __matmul__(self, X):
        self.calls.append(X.shape[1])
        return self.A @ X


class _CountingFactorization:
    def __init__(self, fact):
        self.fact, self.sigma, self.n, self.calls = fact, fact.sigma, fact.n, []

    def solve(self, X):
        self.calls.append(X.shape[1])
        return self.fact.solve(X)


def _sparse_stencil(rng, m):
    """Nonsymmetric 5-point stencil on an m x m grid, strictly diagonally dominant."""
    n = m * m
    offsets = (1, -1, m, -m)
    diags = []
    for off in offsets:
        v = rng.uniform(0.2, 1.0, n - abs(off))
        if abs(off) == 1:
            v[np.arange(1, n)[: n - 1] % m == 0] = 0.0  # no wrap across grid rows
        diags.append(v)
    A = sp.diags(diags, offsets, shape=(n, n), format="csr")
    dominance = np.asarray(abs(A).sum(axis=1)).ravel() + rng.uniform(0.5, 1.5, n)
    return (A - sp.diags(dominance)).tocsr()


@pytest.mark.slow
def test_c09_cost_contract(criterion):
    rng = np.random.default_rng(2009)
    A = _sparse_stencil(rng, 100)
    n = A.shape[0]
    B = rng.standard_normal((n, 2))
    sigma = heuristic_sigma(summarize(A, "estimated"))
    fact = shifted_factorize(A, sigma)

    # operation counts, cold and warm
    counted_A, counted_f = _CountingMatrix(A), _CountingFactorization(fact)
    it = cold_start(StableSystem(A, B), counted_f)
    counted_f.calls.clear()
    for _ in range(5):
        it = step(it, counted_f, counted_A)
    cold_ok = counted_f.calls == [2] * 5 and counted_A.calls == [2] * 5
    counted_A.calls.clear()
    counted_f.calls.clear()
    warm = type(it)(n=n, hom=(rng.standard_normal((n, 3)), rng.standard_normal((n, 3)), 1))
    warm = step(warm, counted_f, counted_A, B)  # starts the B-chain: one solve, no product
    counted_A.calls.clear()
    counted_f.calls.clear()
    for _ in range(5):
        warm = step(warm, counted_f, counted_A)
    warm_ok = sorted(counted_f.calls) == [2] * 5 + [3] * 5 and sorted(counted_A.calls) == [2] * 5 + [3] * 5

    # timing: one step vs one bare 2-column solve
    solve_times, step_times = [], []
    for _ in range(30):
        t0 = time.perf_counter()
        fact.solve(B)
        solve_times.append(time.perf_counter() - t0)
    it = cold_start(StableSystem(A, B), fact)
    for _ in range(30):
        t0 = time.perf_counter()
        it = step(it, fact, A)
        step_times.append(time.perf_counter() - t0)
    ratio = np.median(step_times) / np.median(solve_times)

    t0 = time.perf_counter()
    _, report = run(StableSystem(A, B), sigma, tol=1e-300, max_iters=100)
    total = time.perf_counter() - t0
    ok = cold_ok and warm_ok and ratio <= 5 and report.iterations == 100 and total <= 60
    criterion(9, ok, f"counts cold={cold_ok} warm={warm_ok}; step/solve time ratio {ratio:.2f}; "
                     f"100 iterations n={n} in {total:.1f} s")


def test_c10_compression_safety(criterion):
    rng = np.random.default_rng(2010)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 26))
        A = random_stable(rng, n)
        system = StableSystem(A, rng.standard_normal((n, int(rng.integers(1, 4)))))
        f = shifted_factorize(A, rng.uniform(0.5, 5))
        it = cold_start(system, f)
        for _ in range(int(rng.integers(2, 25))):
            it = step(it, f, A)
        rel_tol = 10.0 ** rng.uniform(-10, -1)
        P = it.to_dense()
        out = compress(it, rel_tol)
        worst = max(worst, np.linalg.norm(out.to_dense() - P) / (rel_tol * np.linalg.norm(P)))
    criterion(10, worst <= 1.0, f"max (error / (rel_tol ||P||)) = {worst:.3f} over 20 cases")
