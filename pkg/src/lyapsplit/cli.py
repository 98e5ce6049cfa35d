"""Command line front end.

    lyapsplit --a A.mtx --b B.mtx [--sigma auto|exact|FLOAT] [--out PREFIX] ...
    lyapsplit --selftest

Exit codes: 0 converged, 2 iteration cap reached, 3 diverged, 1 bad input.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import matrix_io, oracle, solver, spectral, warmstart

EXIT_CODES = {"tol": 0, "max_iters": 2, "diverged": 3}
EXIT_INPUT_ERROR = 1
THREADS_ENV = "LYAPSPLIT_THREADS"


@dataclass
class RunConfig:
    path_A: str
    path_B: str
    sigma_mode: str = "auto"
    sigma_value: float | None = None
    cone_slope: float = 20.0
    tol: float = 1e-8
    max_iters: int = 500
    warm_start_k: int = 0
    compress_every: int = 10
    out_prefix: str = "lyapsplit"

    def validate(self):
        if self.sigma_mode == "fixed" and not (self.sigma_value is not None and self.sigma_value > 0):
            raise ValueError("sigma must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 0 or self.warm_start_k < 0 or self.compress_every < 0:
            raise ValueError("counts must be nonnegative")
        if not self.cone_slope > 0:
            raise ValueError("cone slope must be positive")


def _parse_sigma(text):
    text = text.strip().lower()
    if text in ("auto", "exact"):
        return text, None
    try:
        return "fixed", float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sigma expects auto, exact or a number, got {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(
        prog="lyapsplit",
        description="Solve A P + P A^T = -B B^T with the factored splitting iteration.")
    parser.add_argument("--a", dest="path_A", help="Matrix Market file holding A")
    parser.add_argument("--b", dest="path_B", help="Matrix Market file holding B")
    parser.add_argument("--sigma", type=_parse_sigma, default=("auto", None),
                        help="auto (estimated spectrum), exact (dense spectrum) or a positive shift")
    parser.add_argument("--cone-slope", type=float, default=20.0)
    parser.add_argument("--tol", type=float, default=1e-8)
    parser.add_argument("--max-iters", type=int, default=500)
    parser.add_argument("--warm-start-k", type=int, default=0)
    parser.add_argument("--compress-every", type=int, default=10)
    parser.add_argument("--out", default="lyapsplit", help="output prefix")
    parser.add_argument("--selftest", action="store_true", help="run the built-in checks and exit")
    return parser


def choose_sigma(system, cfg: RunConfig) -> float:
    if cfg.sigma_mode == "fixed":
        return spectral.check_sigma(cfg.sigma_value)
    if cfg.sigma_mode == "exact":
        return spectral.usable_sigma(spectral.summarize(system.A, "exact"))
    return spectral.heuristic_sigma(spectral.summarize(system.A, "estimated"), cfg.cone_slope)


def solve(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    system = matrix_io.read_system(cfg.path_A, cfg.path_B)
    sigma = choose_sigma(system, cfg)
    start = None
    if cfg.warm_start_k:
        basis = warmstart.select_eigenpairs(system.A, system.B, cfg.warm_start_k)
        ws = warmstart.warm_start(basis, system.B)
        print(f"warm start: k={basis.k} projection_residual={ws.projection_residual:.3e}",
              file=stdout)
        start = ws.P0

    P, report = solver.run(system, sigma, tol=cfg.tol, max_iters=cfg.max_iters,
                           compress_every=cfg.compress_every, start=start)
    matrix_io.write_report(report, f"{cfg.out_prefix}.report.json")
    if report.termination == "tol":
        matrix_io.write_factors(P, f"{cfg.out_prefix}.factors")
    print(f"sigma={sigma:.6g} iterations={report.iterations} "
          f"termination={report.termination} relative_residual={report.relative_residual:.3e}",
          file=stdout)
    return EXIT_CODES[report.termination]


# -- self-test ---------------------------------------------------------------

def _check_scalar_series():
    system = matrix_io.StableSystem(np.array([[-2.0]]), np.array([[1.0]]))
    P, report = solver.run(system, 1.0, tol=1e-10, compress_every=0)
    value = P.to_dense()[0, 0]
    ok = report.termination == "tol" and 20 <= report.iterations <= 22 and abs(value - 0.25) < 1e-10
    return ok, f"P={value:.12g} after {report.iterations} iterations"


def _check_oracle_agreement():
    rng = np.random.default_rng(20240101)
    n = 8
    Q = rng.standard_normal((n, n)) / np.sqrt(n)
    A = Q - (np.max(np.linalg.eigvals(Q).real) + 1.0) * np.eye(n)
    system = matrix_io.StableSystem(A, rng.standard_normal((n, 2)))
    P_kron = oracle.kron_solve(system)
    P_eig = oracle.eig_closed_form(system)
    sigma = spectral.heuristic_sigma(spectral.summarize(A, "exact"))
    P, report = solver.run(system, sigma, tol=1e-10)
    scale = np.linalg.norm(P_kron)
    e_eig = np.linalg.norm(P_eig - P_kron) / scale
    e_run = np.linalg.norm(P.to_dense() - P_kron) / scale
    ok = e_eig <= 1e-8 and e_run <= 1e-7 and report.termination == "tol"
    return ok, f"eig vs kron {e_eig:.1e}, iteration vs kron {e_run:.1e}"


def _check_sigma_equivalence():
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(50):
        n = int(rng.integers(1, 9))
        lam = -rng.uniform(0.1, 5, n) + 1j * rng.uniform(-3, 3, n)
        spec = spectral.SpectrumInfo.full(np.concatenate([lam, lam.conj()]))
        s_min = spectral.min_convergent_sigma(spec)
        sigma = rng.uniform(0.01, 2 * s_min + 1)
        if (spectral.convergence_ratio(spec, sigma) < 1) != (sigma > s_min):
            failures += 1
    return failures == 0, f"{failures} mismatches in 50 spectra"


SELFTEST_CHECKS = (
    ("scalar series", _check_scalar_series),
    ("oracle agreement", _check_oracle_agreement),
    ("ratio/bound equivalence", _check_sigma_equivalence),
)


def selftest(stdout=None) -> int:
    stdout = stdout or sys.stdout
    failed = []
    for name, check in SELFTEST_CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failure of that check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=stdout)
        if not ok:
            failed.append(name)
    if failed:
        print(f"selftest failed: {', '.join(failed)}", file=stdout)
        return 1
    return 0


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    with _thread_limit():
        if args.selftest:
            return selftest()
        if not (args.path_A and args.path_B):
            parser.print_usage(sys.stderr)
            print("lyapsplit: error: --a and --b are required", file=sys.stderr)
            return EXIT_INPUT_ERROR
        mode, value = args.sigma
        cfg = RunConfig(args.path_A, args.path_B, mode, value, args.cone_slope, args.tol,
                        args.max_iters, args.warm_start_k, args.compress_every, args.out)
        try:
            cfg.validate()
            return solve(cfg)
        except (ValueError, OSError, ArithmeticError, spectral.SpectrumError) as exc:
            print(f"lyapsplit: error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
