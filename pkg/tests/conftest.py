import numpy as np
import pytest


def random_stable(rng, n, margin=(0.5, 2.0)):
    """``Q - c I`` with ``Q`` Gaussian and ``c`` pushing the spectrum left."""
    Q = rng.standard_normal((n, n)) / np.sqrt(n)
    c = np.max(np.linalg.eigvals(Q).real) + rng.uniform(*margin)
    return Q - c * np.eye(n)


def dense_residual(A, P, B):
    A = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    return np.linalg.norm(A @ P + P @ A.T + B @ B.T)


def pairwise_ratio(eigs, sigma):
    """Brute force over every ordered pair, plain Python complex arithmetic."""
    return max(abs(complex(li) + sigma) / abs(complex(lj) - sigma) for li in eigs for lj in eigs)


def pairwise_bound(eigs):
    best = 0.0
    for li in eigs:
        for lj in eigs:
            li, lj = complex(li), complex(lj)
            best = max(best, (abs(lj) ** 2 - abs(li) ** 2) / (2 * (lj.real + li.real)))
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record an acceptance verdict; the terminal summary prints one line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, ok, detail):
        lines.append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
