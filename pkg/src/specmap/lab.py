"""Monte Carlo validation: sample ``Sigma = B + sigma W`` and compare its spectrum with theory."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Sequence, TypeVar

import numpy as np
from scipy.linalg import eigh

from .exceptions import NumericalError, PreconditionError, ScenarioError
from .model import ModelSpec
from .spiked import predicted_limit
from .support import SupportProfile, solve_w

__all__ = [
    "TrialResult",
    "IntervalReport",
    "SeparationReport",
    "ConvergenceRow",
    "ConvergenceTable",
    "trial_rng",
    "sample_sigma_matrix",
    "gram_eigenvalues",
    "run_trials",
    "sample_trials",
    "check_no_eigenvalue_in",
    "predicted_counts",
    "exact_separation",
    "spike_convergence",
    "thread_count",
]

T = TypeVar("T")
U64 = 2**64


def thread_count(trials: int) -> int:
    """Worker count: ``SPECMAP_THREADS`` if set (>= 1), else the CPU count, capped by ``trials``."""
    raw = os.environ.get("SPECMAP_THREADS")
    if raw is None or raw.strip() == "":
        n = os.cpu_count() or 1
    else:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ScenarioError(f"SPECMAP_THREADS must be an integer, got {raw!r}") from exc
        if n < 1:
            raise ScenarioError("SPECMAP_THREADS must be >= 1")
    return max(1, min(n, trials))


def trial_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``; entries are drawn in a fixed order."""
    if not 0 <= seed < U64 or not 0 <= stream < U64:
        raise ScenarioError("seed and stream must be unsigned 64-bit integers")
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def sample_sigma_matrix(spec: ModelSpec, seed: int, stream: int = 0) -> np.ndarray:
    """``B + sigma W`` with ``B`` carrying ``sqrt(lambda_k)`` on its leading diagonal and
    ``W`` i.i.d. circular complex Gaussian with ``E|W_ij|^2 = 1/N``."""
    M, N = spec.M, spec.N
    A = np.zeros((M, N), dtype=complex)
    lam = spec.spike_values
    A[np.arange(lam.size), np.arange(lam.size)] = np.sqrt(lam)
    if spec.sigma > 0.0:
        rng = trial_rng(seed, stream)
        scale = spec.sigma / math.sqrt(2.0 * N)
        noise = rng.standard_normal((M, N, 2))
        A += scale * (noise[..., 0] + 1j * noise[..., 1])
    return A


@dataclass(frozen=True)
class TrialResult:
    seed: int
    stream: int
    eigenvalues: np.ndarray  # descending
    spec: ModelSpec | None = None


def gram_eigenvalues(
    A: np.ndarray, seed: int = 0, stream: int = 0, spec: ModelSpec | None = None, check: bool = True
) -> TrialResult:
    """Eigenvalues of ``A A^*`` (descending) through the real symmetric embedding
    ``[[X, -Y], [Y, X]]`` of ``X + iY = A A^*``, whose spectrum is that of ``A A^*`` doubled."""
    A = np.asarray(A)
    M, N = A.shape
    if M > N:
        raise PreconditionError(f"gram_eigenvalues needs M <= N (got {M} x {N})")
    H = A @ A.conj().T
    X, Y = H.real, H.imag
    R = np.block([[X, -Y], [Y, X]])
    R = 0.5 * (R + R.T)
    try:
        if check:
            vals, vecs = eigh(R, driver="ev")
        else:
            vals = eigh(R, driver="ev", eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver did not converge: {exc}") from exc
    norm = max(float(np.abs(vals).max()) if vals.size else 0.0, 1.0)
    if check:
        resid = np.linalg.norm(R @ vecs - vecs * vals, axis=0)
        if np.any(resid > 1e-10 * norm):
            raise NumericalError(f"eigenpair residual {resid.max():.3g} exceeds 1e-10 ||A A^*||")
    # ascending; consecutive entries pair up
    lo, hi = vals[0::2], vals[1::2]
    if np.any(np.abs(hi - lo) > 1e-8 * norm):
        raise NumericalError("embedded spectrum is not paired; deduplication failed")
    eig = 0.5 * (lo + hi)
    if np.any(eig < -1e-10 * norm):
        raise NumericalError(f"Gram matrix has a negative eigenvalue {eig.min():.3g}")
    eig = np.maximum(eig, 0.0)[::-1].copy()
    eig.setflags(write=False)
    return TrialResult(seed=seed, stream=stream, eigenvalues=eig, spec=spec)


def _sample_trial(spec: ModelSpec, seed: int, stream: int) -> TrialResult:
    return gram_eigenvalues(sample_sigma_matrix(spec, seed, stream), seed, stream, spec, check=False)


def run_trials(fn: Callable[[int], T], trials: int) -> list[T]:
    """Evaluate ``fn(0..trials-1)`` on a thread pool; results are ordered by trial index."""
    if trials < 1:
        raise ScenarioError("trial count must be >= 1", field="trials")
    workers = thread_count(trials)
    if workers == 1:
        return [fn(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


def sample_trials(spec: ModelSpec, seed: int, trials: int, offset: int = 0) -> list[TrialResult]:
    return run_trials(lambda i: _sample_trial(spec, seed, offset + i), trials)


# -- localization checks ----------------------------------------------------------


@dataclass(frozen=True)
class IntervalReport:
    a: float
    b: float
    trials: int
    counts_inside: tuple[int, ...]
    clean_fraction: float


def _require_gap(a: float, b: float, profile: SupportProfile) -> None:
    if not math.isfinite(a) or math.isnan(b) or a > b:
        raise ScenarioError(f"need a <= b with finite a (got a={a!r}, b={b!r})")
    if profile.intersects(a, b):
        raise PreconditionError(f"[{a!r}, {b!r}] intersects the support; the check would be vacuous")


def check_no_eigenvalue_in(
    a: float, b: float, trials: int, spec: ModelSpec, profile: SupportProfile, seed: int = 0
) -> IntervalReport:
    """Fraction of trials with no sample eigenvalue in ``[a, b]`` (``b`` may be ``inf``)."""
    _require_gap(a, b, profile)
    results = sample_trials(spec, seed, trials)
    counts = tuple(int(np.count_nonzero((r.eigenvalues >= a) & (r.eigenvalues <= b))) for r in results)
    clean = sum(c == 0 for c in counts) / trials
    return IntervalReport(a, b, trials, counts, clean)


@dataclass(frozen=True)
class SeparationReport:
    a: float
    b: float
    w_a: float
    w_b: float
    predicted_below: int
    predicted_above: int
    below: tuple[int, ...]
    above: tuple[int, ...]
    inside: tuple[int, ...]
    matches: tuple[bool, ...]

    @property
    def trials(self) -> int:
        return len(self.matches)

    @property
    def match_rate(self) -> float:
        return sum(self.matches) / len(self.matches)

    @property
    def clean_fraction(self) -> float:
        """Fraction of trials with no eigenvalue in ``[a, b]``."""
        return sum(c == 0 for c in self.inside) / len(self.inside)


def predicted_counts(a: float, b: float, profile: SupportProfile) -> tuple[float, float, int, int]:
    """``(w(a), w(b), #{lambda_k < w(a)}, #{lambda_k > w(b)})`` over all ``M`` eigenvalues of ``B B^*``."""
    w_a = float(solve_w(a, profile).w_value.real)
    w_b = float(solve_w(b, profile).w_value.real)
    spec = profile.spec
    eig = np.concatenate([np.zeros(spec.M - spec.K), spec.spike_values])
    return w_a, w_b, int(np.count_nonzero(eig < w_a)), int(np.count_nonzero(eig > w_b))


def exact_separation(
    a: float, b: float, trials: int, spec: ModelSpec, profile: SupportProfile, seed: int = 0
) -> SeparationReport:
    """Compare sample counts below ``a`` / above ``b`` with the counts predicted through ``w_N``."""
    _require_gap(a, b, profile)
    w_a, w_b, pred_lo, pred_hi = predicted_counts(a, b, profile)
    results = sample_trials(spec, seed, trials)
    below, above, inside, matches = [], [], [], []
    for r in results:
        ev = r.eigenvalues
        lo = int(np.count_nonzero(ev < a))
        hi = int(np.count_nonzero(ev > b))
        below.append(lo)
        above.append(hi)
        inside.append(ev.size - lo - hi)
        matches.append(lo == pred_lo and hi == pred_hi)
    return SeparationReport(a, b, w_a, w_b, pred_lo, pred_hi, tuple(below), tuple(above), tuple(inside), tuple(matches))


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    M: int
    k: int
    mean: float
    std: float
    stderr: float
    limit: float

    @property
    def abs_error(self) -> float:
        return abs(self.mean - self.limit)


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple[ConvergenceRow, ...]
    trials: int

    def for_spike(self, k: int) -> list[ConvergenceRow]:
        return [r for r in self.rows if r.k == k]

    def monotone(self, k: int) -> bool:
        """Mean absolute error non-increasing in ``N`` up to two standard errors."""
        rows = self.for_spike(k)
        return all(b.abs_error <= a.abs_error + 2.0 * math.hypot(a.stderr, b.stderr) for a, b in zip(rows, rows[1:]))


def spike_convergence(
    spec: ModelSpec, N_grid: Sequence[int], trials: int, seed: int = 0
) -> ConvergenceTable:
    """Mean and spread of the top-``K`` sample eigenvalues along ``N_grid`` at fixed ``c_N``."""
    grid = [int(n) for n in N_grid]
    if not grid or any(n < 1 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ScenarioError("N grid must be a non-empty increasing list of positive integers", field="n-grid")
    ratio = Fraction(spec.M, spec.N)
    rows = []
    for g, n in enumerate(grid):
        m = ratio * n
        if m.denominator != 1:
            raise ScenarioError(f"N={n} does not keep c_N = {ratio} with an integer M", field="n-grid")
        sub = spec.with_dimensions(int(m), n)
        results = sample_trials(sub, seed, trials, offset=g << 32)
        top = np.array([r.eigenvalues[: sub.K] for r in results])
        for k in range(1, sub.K + 1):
            col = top[:, k - 1]
            std = float(col.std(ddof=1)) if trials > 1 else 0.0
            rows.append(
                ConvergenceRow(n, sub.M, k, float(col.mean()), std, std / math.sqrt(trials), predicted_limit(k, sub))
            )
    return ConvergenceTable(tuple(rows), trials)


def report_to_dict(report: Any) -> dict[str, Any]:
    """JSON-ready view of the lab reports."""
    if isinstance(report, SeparationReport):
        return {
            "a": report.a,
            "b": report.b,
            "w_a": report.w_a,
            "w_b": report.w_b,
            "predicted_below": report.predicted_below,
            "predicted_above": report.predicted_above,
            "trials": report.trials,
            "match_rate": report.match_rate,
            "no_eigenvalue_in_interval_fraction": report.clean_fraction,
            "per_trial": [
                {"trial": i, "below": lo, "above": hi, "inside": ins, "match": m}
                for i, (lo, hi, ins, m) in enumerate(zip(report.below, report.above, report.inside, report.matches))
            ],
        }
    if isinstance(report, ConvergenceTable):
        ks = sorted({r.k for r in report.rows})
        return {
            "trials": report.trials,
            "rows": [
                {
                    "N": r.N,
                    "M": r.M,
                    "k": r.k,
                    "mean": r.mean,
                    "std": r.std,
                    "stderr": r.stderr,
                    "limit": r.limit,
                    "abs_error": r.abs_error,
                }
                for r in report.rows
            ],
            "monotone": {str(k): report.monotone(k) for k in ks},
        }
    raise TypeError(f"unsupported report type {type(report).__name__}")
