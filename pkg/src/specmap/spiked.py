"""Fixed-rank spiked analysis: phase transition, eigenvalue limits, cluster-edge expansions.

Also hosts a small numeric companion to the two perturbation lemmas used in the edge
analysis: roots of ``z - z0_eps - eps h(z) = 0`` and of the perturbed cubic
``(z - z0_eps)^3 - eps (z - z0_eps) h1(z) + eps^2 h2(z) = 0`` near ``z0``, together with
the errors of their first-order expansions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import newton

from .exceptions import NumericalError, PreconditionError, ScenarioError
from .model import ModelSpec

__all__ = [
    "SpikeInfo",
    "SpikedPrediction",
    "PerturbationProbe",
    "PerturbedRoots",
    "SqueezeReport",
    "detect_Ks",
    "psi",
    "psi_value",
    "limit_value",
    "predicted_limit",
    "h_coeffs",
    "edge_expansion",
    "predict_spikes",
    "prediction_to_dict",
    "solve_perturbed_linear",
    "solve_perturbed_cubic",
    "expansion_sweep",
    "builtin_probes",
    "spiked_probe",
    "threshold_squeeze_check",
    "DEFAULT_EPS_GRID",
]

TIE_TOL = 1e-12

# spiked probes whose largest admissible eps falls below this are rejected as degenerate
MIN_EPS_MAX = 1e-8

# 1e-2 down to ~1e-6 by halving
DEFAULT_EPS_GRID: tuple[float, ...] = tuple(1e-2 * 0.5**j for j in range(14))


# -- phase transition and limits ------------------------------------------------------


def _threshold(spec: ModelSpec) -> float:
    return spec.sigma**2 * math.sqrt(spec.c)


def _is_tie(value: float, threshold: float) -> bool:
    return abs(value - threshold) <= TIE_TOL * (1.0 + threshold)


def detect_Ks(spec: ModelSpec) -> tuple[int, float]:
    """Number of spikes (with multiplicity) strictly above ``sigma^2 sqrt(c_N)``.

    Spikes tied with the threshold to ``1e-12`` are counted as subcritical.
    """
    thr = _threshold(spec)
    ks = sum(m for v, m in spec.spikes if v > thr and not _is_tie(v, thr))
    return ks, thr


def psi_value(lam: float, sigma: float, c: float) -> float:
    """``(sigma^2 + lam)(sigma^2 c + lam) / lam``."""
    lam = float(lam)
    if not lam > 0.0:
        raise ScenarioError("psi needs lambda > 0", field="lambda")
    s2 = float(sigma) ** 2
    return (s2 + lam) * ((s2 * c + lam) / lam)


def limit_value(lam: float, sigma: float, c: float) -> float:
    """Limit of the sample eigenvalue attached to a spike ``lam``: ``psi`` above the
    threshold ``sigma^2 sqrt(c)``, the bulk edge ``sigma^2 (1 + sqrt(c))^2`` otherwise."""
    thr = sigma**2 * math.sqrt(c)
    if lam > thr and not _is_tie(lam, thr):
        return psi_value(lam, sigma, c)
    return sigma**2 * (1.0 + math.sqrt(c)) ** 2


def psi(lam: float, spec: ModelSpec, c: float | None = None) -> float:
    """``psi`` with ``c`` defaulting to the finite-N ratio ``M/N`` (pass the limit ``c`` if wanted)."""
    return psi_value(lam, spec.sigma, spec.c if c is None else float(c))


def _expanded_index(k: int, spec: ModelSpec) -> float:
    if isinstance(k, bool) or not 1 <= k <= spec.K:
        raise PreconditionError(f"spike index {k} out of range 1..{spec.K}")
    return float(spec.spike_values[k - 1])


def predicted_limit(k: int, spec: ModelSpec) -> float:
    """Almost-sure limit of the ``k``-th largest sample eigenvalue (``1 <= k <= K``)."""
    lam = _expanded_index(k, spec)
    ks, _ = detect_Ks(spec)
    if k <= ks:
        return psi(lam, spec)
    return spec.sigma**2 * (1.0 + math.sqrt(spec.c)) ** 2


def h_coeffs(lam: float, spec: ModelSpec) -> tuple[float, float]:
    """Values ``(h1(lam), h2(lam))`` of the cubic's coefficient functions at a spike."""
    lam = float(lam)
    s2, c = spec.sigma**2, spec.c
    den = lam**2 - s2**2 * c
    if abs(den) <= TIE_TOL * (1.0 + lam**2):
        raise PreconditionError(f"h coefficients have a pole at lambda = sigma^2 sqrt(c) = {_threshold(spec)!r}")
    h1 = 2.0 * s2 * c * lam**2 * (lam + s2 * (1.0 + c) / 2.0) / den
    h2 = -2.0 * s2**2 * c**2 * lam**3 / den
    return h1, h2


def edge_expansion(k: int, spec: ModelSpec) -> tuple[float, float]:
    """First-order endpoints of the cluster generated by supercritical spike ``k``."""
    lam = _expanded_index(k, spec)
    ks, _ = detect_Ks(spec)
    if k > ks:
        raise PreconditionError(f"spike {k} is not supercritical (K_s = {ks})")
    h1, _ = h_coeffs(lam, spec)
    s2, c = spec.sigma**2, spec.c
    half = 2.0 * math.sqrt(h1) * (lam**2 - s2**2 * c) / lam**2 / math.sqrt(spec.M)
    centre = psi(lam, spec)
    return centre - half, centre + half


@dataclass(frozen=True)
class SpikeInfo:
    value: float
    multiplicity: int
    indices: tuple[int, ...]
    supercritical: bool
    limit: float
    h1: float | None = None
    h2: float | None = None
    edge_minus: float | None = None
    edge_plus: float | None = None


@dataclass(frozen=True)
class SpikedPrediction:
    K_s: int
    threshold: float
    bulk_edges: tuple[float, float]
    spikes: tuple[SpikeInfo, ...]
    warnings: tuple[str, ...] = ()

    @property
    def limits(self) -> list[float]:
        return [s.limit for s in self.spikes for _ in range(s.multiplicity)]


def predict_spikes(spec: ModelSpec) -> SpikedPrediction:
    ks, thr = detect_Ks(spec)
    s2, rc = spec.sigma**2, math.sqrt(spec.c)
    warnings = []
    infos = []
    k = 1
    for value, mult in spec.spikes:
        idx = tuple(range(k, k + mult))
        k += mult
        if _is_tie(value, thr):
            warnings.append(f"spike at threshold: {value!r} ties sigma^2 sqrt(c_N) = {thr!r}; classified subcritical")
        sup = idx[0] <= ks
        if not sup:
            infos.append(SpikeInfo(value, mult, idx, False, predicted_limit(idx[0], spec)))
            continue
        h1, h2 = h_coeffs(value, spec)
        lo, hi = edge_expansion(idx[0], spec)
        infos.append(SpikeInfo(value, mult, idx, True, psi(value, spec), h1, h2, lo, hi))
    return SpikedPrediction(
        K_s=ks,
        threshold=thr,
        bulk_edges=(s2 * (1.0 - rc) ** 2, s2 * (1.0 + rc) ** 2),
        spikes=tuple(infos),
        warnings=tuple(warnings),
    )


def prediction_to_dict(pred: SpikedPrediction) -> dict[str, Any]:
    return {
        "K_s": pred.K_s,
        "threshold": pred.threshold,
        "bulk_edges": list(pred.bulk_edges),
        "limits": pred.limits,
        "spikes": [
            {
                "value": s.value,
                "multiplicity": s.multiplicity,
                "indices": list(s.indices),
                "supercritical": s.supercritical,
                "limit": s.limit,
                "h1": s.h1,
                "h2": s.h2,
                "edge_minus": s.edge_minus,
                "edge_plus": s.edge_plus,
            }
            for s in pred.spikes
        ],
        "warnings": list(pred.warnings),
    }


# -- perturbation lemmas --------------------------------------------------------------

HFn = Callable[[complex, float], complex]


@dataclass(frozen=True)
class PerturbationProbe:
    """A perturbed equation around ``z0``.

    ``h1_fn(z, eps)`` (and ``h2_fn`` for the cubic) are the eps-dependent coefficient
    functions; their ``eps = 0`` values define the limits entering the expansions.
    ``delta_fn(eps)`` gives ``z0_eps - z0``. When the coefficients are eps-independent
    polynomials, ``h1_poly``/``h2_poly`` enable an exact polynomial solve. ``h2_fn = None``
    marks a linear (single-root) probe.
    """

    name: str
    z0: float
    h1_fn: HFn
    h2_fn: HFn | None = None
    delta_fn: Callable[[float], float] | None = None
    h1_poly: Polynomial | None = None
    h2_poly: Polynomial | None = None
    radius: float = 0.5
    eps_grid: tuple[float, ...] = DEFAULT_EPS_GRID

    def __post_init__(self) -> None:
        if self.is_cubic and self.h1_fn(self.z0, 0.0) == 0:
            raise PreconditionError(f"probe {self.name}: h1(z0) must be non-zero")

    @property
    def is_cubic(self) -> bool:
        return self.h2_fn is not None

    def z0_eps(self, eps: float) -> float:
        return self.z0 + (self.delta_fn(eps) if self.delta_fn is not None else 0.0)

    def residual_fn(self, eps: float) -> Callable[[complex], complex]:
        """The equation as a function of ``t = z - z0_eps``."""
        z0e = self.z0_eps(eps)
        h1 = self.h1_fn
        if not self.is_cubic:
            return lambda t: t - eps * h1(z0e + t, eps)
        h2 = self.h2_fn
        return lambda t: t**3 - eps * t * h1(z0e + t, eps) + eps**2 * h2(z0e + t, eps)


@dataclass(frozen=True)
class PerturbedRoots:
    """Roots of one probe at one ``eps`` and the errors of the first-order predictions.

    ``roots`` are ordered ``(z_minus, z_mid, z_plus)`` for a cubic (by real part, then
    imaginary part) and ``(z,)`` for the linear equation. ``rel_errors[i]`` is
    ``|root_i - prediction_i| / |leading correction_i|``.
    """

    eps: float
    roots: tuple[complex, ...]
    predictions: tuple[complex, ...]
    abs_errors: tuple[float, ...]
    rel_errors: tuple[float, ...]
    residuals: tuple[float, ...]
    reality: str
    method: str


def _winding_count(F: Callable[[complex], complex], radius: float, n: int = 2048) -> int:
    """Zeros of ``F`` inside ``|t| < radius`` by the argument principle."""
    t = radius * np.exp(2j * np.pi * np.arange(n + 1) / n)
    vals = np.array([F(complex(x)) for x in t])
    if not np.all(np.isfinite(vals)):
        raise NumericalError("equation is not finite on the probe circle")
    if np.any(vals == 0):
        raise NumericalError("equation vanishes on the probe circle; shrink the radius")
    turns = np.sum(np.angle(vals[1:] / vals[:-1])) / (2.0 * np.pi)
    return int(round(turns))


def _polish(F: Callable[[complex], complex], t: complex) -> complex:
    try:
        out = newton(F, complex(t), tol=1e-300, rtol=1e-15, maxiter=60, x1=complex(t) * (1 + 1e-7) + 1e-300)
    except (RuntimeError, OverflowError, ZeroDivisionError):
        return complex(t)
    out = complex(out)
    return out if abs(F(out)) <= abs(F(complex(t))) else complex(t)


def _reality(roots: Sequence[complex], scale: float) -> str:
    real = sum(abs(r.imag) <= 1e-12 * max(scale, abs(r)) for r in roots)
    if len(roots) == 1:
        return "real" if real else "complex"
    return {3: "three real", 1: "one real, two complex"}.get(real, f"{real} real")


def solve_perturbed_linear(probe: PerturbationProbe, eps: float) -> PerturbedRoots:
    """Unique root of ``z - z0_eps - eps h_eps(z) = 0`` in the probe disk."""
    if probe.is_cubic:
        raise PreconditionError(f"probe {probe.name} is a cubic probe")
    F = probe.residual_fn(eps)
    count = _winding_count(F, probe.radius)
    if count != 1:
        raise NumericalError(f"probe {probe.name}: {count} roots in the disk at eps={eps} (expected 1)")
    z0e = probe.z0_eps(eps)
    if probe.h1_poly is not None:
        shifted = probe.h1_poly(Polynomial([z0e, 1.0]))
        poly = Polynomial([0.0, 1.0]) - eps * shifted
        cands = [r for r in np.atleast_1d(poly.roots()) if abs(r) < probe.radius]
        if len(cands) != 1:
            raise NumericalError(f"probe {probe.name}: polynomial solve found {len(cands)} roots in the disk")
        t, method = _polish(F, cands[0]), "polynomial"
    else:
        t, method = _polish(F, eps * probe.h1_fn(z0e, eps)), "newton"
    if not abs(t) < probe.radius:
        raise NumericalError(f"probe {probe.name}: Newton left the disk at eps={eps}")
    lead = eps * probe.h1_fn(probe.z0, 0.0)
    err = abs(t - lead)
    rel = err / abs(lead) if lead != 0 else (0.0 if err == 0 else math.inf)
    root = z0e + t
    return PerturbedRoots(
        eps=eps,
        roots=(root,),
        predictions=(z0e + lead,),
        abs_errors=(err,),
        rel_errors=(rel,),
        residuals=(abs(F(t)),),
        reality=_reality([t], abs(lead) + abs(z0e)),
        method=method,
    )



def solve_perturbed_cubic(probe: PerturbationProbe, eps: float) -> PerturbedRoots:
    """The three roots of the perturbed cubic in the probe disk, with expansion errors."""
    if not probe.is_cubic:
        raise PreconditionError(f"probe {probe.name} is a linear probe")
    F = probe.residual_fn(eps)
    count = _winding_count(F, probe.radius)
    if count != 3:
        raise NumericalError(f"probe {probe.name}: {count} roots in the disk at eps={eps} (expected 3)")
    z0e = probe.z0_eps(eps)
    h1_0 = complex(probe.h1_fn(probe.z0, 0.0))
    h2_0 = complex(probe.h2_fn(probe.z0, 0.0))
    root_h1 = complex(np.sqrt(h1_0))
    # predicted corrections t = z - z0_eps, ordered minus / middle / plus
    leads = [-math.sqrt(eps) * root_h1, eps * h2_0 / h1_0, math.sqrt(eps) * root_h1]
    if probe.h1_poly is not None and probe.h2_poly is not None:
        shift = Polynomial([z0e, 1.0])
        T = Polynomial([0.0, 1.0])
        poly = T**3 - eps * T * probe.h1_poly(shift) + eps**2 * probe.h2_poly(shift)
        cands = [complex(r) for r in np.atleast_1d(poly.roots()) if abs(r) < probe.radius]
        if len(cands) != 3:
            raise NumericalError(f"probe {probe.name}: polynomial solve found {len(cands)} roots in the disk")
        ts = [_polish(F, r) for r in cands]
        method = "polynomial"
    else:
        ts = [_polish(F, complex(s)) for s in leads]
        method = "newton"
    scale = abs(z0e) + math.sqrt(eps) * abs(root_h1)
    ts = [complex(t.real, 0.0) if abs(t.imag) <= 1e-14 * max(scale, abs(t)) else t for t in ts]
    if any(not abs(t) < probe.radius for t in ts):
        raise NumericalError(f"probe {probe.name}: a root left the disk at eps={eps}")
    sep = min(abs(a - b) for i, a in enumerate(ts) for b in ts[i + 1 :])
    if sep <= 1e-9 * (eps * abs(h2_0 / h1_0) + 1e-300):
        raise NumericalError(f"probe {probe.name}: Newton seeds collapsed onto one root at eps={eps}")
    # match each prediction to its nearest root (a permutation: predictions are well separated)
    matched: list[complex] = []
    pool = list(ts)
    for lead in (leads[1], leads[0], leads[2]):
        j = int(np.argmin([abs(t - lead) for t in pool]))
        matched.append(pool.pop(j))
    t_mid, t_minus, t_plus = matched
    ordered = [t_minus, t_mid, t_plus]
    abs_err = [float(abs(t - lead)) for t, lead in zip(ordered, leads)]
    rel_err = [
        e / abs(lead) if lead != 0 else (0.0 if e == 0 else math.inf) for e, lead in zip(abs_err, leads)
    ]
    return PerturbedRoots(
        eps=eps,
        roots=tuple(z0e + t for t in ordered),
        predictions=tuple(z0e + lead for lead in leads),
        abs_errors=tuple(abs_err),
        rel_errors=tuple(rel_err),
        residuals=tuple(abs(F(t)) for t in ordered),
        reality=_reality(ordered, scale),
        method=method,
    )


def expansion_sweep(probe: PerturbationProbe, eps_grid: Sequence[float] | None = None) -> list[PerturbedRoots]:
    grid = probe.eps_grid if eps_grid is None else tuple(eps_grid)
    solve = solve_perturbed_cubic if probe.is_cubic else solve_perturbed_linear
    return [solve(probe, float(e)) for e in grid]


def _const(value: float) -> HFn:
    return lambda z, eps: value + 0.0 * z


def _poly_fn(p: Polynomial) -> HFn:
    return lambda z, eps: p(z)


def builtin_probes() -> list[PerturbationProbe]:
    """Probes with closed-form or easily cross-checked roots."""
    p_lin = Polynomial([0.0, 1.0])
    p1 = Polynomial([4.0, 1.0])  # h1(z) = 4 + z
    p2 = Polynomial([1.0, 0.0, -1.0])  # h2(z) = 1 - z^2
    return [
        PerturbationProbe("linear-constant", 0.0, _const(3.0), h1_poly=Polynomial([3.0])),
        PerturbationProbe("linear-identity", 1.0, _poly_fn(p_lin), h1_poly=p_lin),
        PerturbationProbe(
            "linear-shifted-exp",
            0.25,
            lambda z, eps: np.exp(z) + eps * np.cos(z),
            delta_fn=lambda eps: eps**2,
        ),
        PerturbationProbe(
            "cubic-h1=1-h2=2", 0.0, _const(1.0), _const(2.0), h1_poly=Polynomial([1.0]), h2_poly=Polynomial([2.0])
        ),
        PerturbationProbe(
            "cubic-h1=-1-h2=2",
            0.0,
            _const(-1.0),
            _const(2.0),
            h1_poly=Polynomial([-1.0]),
            h2_poly=Polynomial([2.0]),
        ),
        PerturbationProbe(
            "cubic-polynomial-shifted",
            0.5,
            _poly_fn(p1),
            _poly_fn(p2),
            delta_fn=lambda eps: eps**2,
            h1_poly=p1,
            h2_poly=p2,
        ),
        PerturbationProbe(
            "cubic-analytic",
            0.0,
            lambda z, eps: 2.0 + np.sin(z) + eps,
            lambda z, eps: np.cosh(z) - eps * z,
        ),
    ]


def spiked_probe(spec: ModelSpec, value: float) -> PerturbationProbe:
    """The cubic satisfied near a multiplicity-one spike by the critical points of ``phi``.

    ``eps = 1/M`` recovers the finite-``M`` equation; ``c = c_N`` and the spikes are held
    fixed so the coefficient functions do not depend on ``eps``.
    """
    lams = spec.spike_values
    matches = [i for i, v in enumerate(lams) if v == value]
    if len(matches) != 1:
        raise PreconditionError(f"spike {value!r} must be present with multiplicity one")
    i = matches[0]
    others = np.delete(lams, i)
    s2, c = spec.sigma**2, spec.c
    if _is_tie(float(value), _threshold(spec)):
        raise PreconditionError(f"spike {value!r} sits at the threshold sigma^2 sqrt(c_N), a pole of h1 and h2")

    def P(w: complex, arr: np.ndarray, power: int) -> complex:
        out = 1.0 + 0j * w
        for lk in arr:
            out = out * (lk - w) ** power
        return out

    def h1(w: complex, eps: float) -> complex:
        acc = 0.0 + 0j * w
        for k, lk in enumerate(lams):
            quad = w**2 + s2 * (1.0 + c) * w - s2 * (1.0 + c) * lk / 2.0
            acc = acc + lk * quad * P(w, np.delete(lams, k), 2)
        return 2.0 * s2 * c * acc / ((w**2 - s2**2 * c) * P(w, others, 2))

    def h2(w: complex, eps: float) -> complex:
        left = 0.0 + 0j * w
        right = 0.0 + 0j * w
        for k, lk in enumerate(lams):
            rest = np.delete(lams, k)
            left = left + lk * P(w, rest, 1)
            right = right + lk * (3.0 * w - lk) * P(w, rest, 2)
        g3 = s2**2 * c**2 * left * right
        return -g3 / ((w**2 - s2**2 * c) * P(w, others, 3))

    gaps = [abs(value - x) for x in list(others) + [s2 * math.sqrt(c), -s2 * math.sqrt(c)]]
    radius = 0.8 * min(gaps)
    # largest eps keeping all three predicted roots well inside the disk
    a1 = abs(h1(value, 0.0))
    a2 = abs(h2(value, 0.0)) / a1
    eps_max = min(1e-2, (radius / 2.0) ** 2 / a1, radius / 4.0 / a2 if a2 > 0 else math.inf)
    probe = PerturbationProbe(f"spike-{value!r}", float(value), h1, h2, radius=radius)
    # the poles of h1, h2 at the other spikes and at +-sigma^2 sqrt(c) attract extra roots
    # that close in on them as eps shrinks; halve until only the three spike roots remain
    while eps_max >= MIN_EPS_MAX and _winding_count(probe.residual_fn(eps_max), radius) != 3:
        eps_max *= 0.5
    if not eps_max >= MIN_EPS_MAX:
        raise PreconditionError(
            f"spike {value!r} is too close to another spike or to +-sigma^2 sqrt(c_N) for the perturbative "
            f"regime (largest admissible eps below {MIN_EPS_MAX:g})"
        )
    grid = tuple(eps_max * 0.5**j for j in range(len(DEFAULT_EPS_GRID)))
    return replace(probe, eps_grid=grid)


# -- threshold squeeze --------------------------------------------------------------


@dataclass(frozen=True)
class SqueezeReport:
    value: float
    limit: float
    eps: tuple[float, ...]
    centre: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    ok: bool
    notes: tuple[str, ...] = field(default=())


def threshold_squeeze_check(
    spec: ModelSpec, eps_grid: Sequence[float] = (0.1, 0.01, 0.001, 1e-4)
) -> SqueezeReport:
    """Check that ``sqrt(psi((sqrt(lam) + eps)^2)) -/+ eps`` squeeze ``sigma (1 + sqrt(c))``.

    Requires one spike tied with the threshold ``sigma^2 sqrt(c_N)``.
    """
    _, thr = detect_Ks(spec)
    ties = [v for v, _ in spec.spikes if _is_tie(v, thr)]
    if len(ties) != 1:
        raise PreconditionError("threshold squeeze needs exactly one spike at sigma^2 sqrt(c_N)")
    lam = ties[0]
    limit = spec.sigma * (1.0 + math.sqrt(spec.c))
    centre = [math.sqrt(psi((math.sqrt(lam) + e) ** 2, spec)) for e in eps_grid]
    lower = [m - e for m, e in zip(centre, eps_grid)]
    upper = [m + e for m, e in zip(centre, eps_grid)]
    notes = []
    ok = True
    for e, lo, hi in zip(eps_grid, lower, upper):
        if not lo <= limit <= hi:
            ok = False
            notes.append(f"eps={e!r}: limit {limit!r} outside [{lo!r}, {hi!r}]")
    gaps = [max(limit - lo, hi - limit) for lo, hi in zip(lower, upper)]
    if any(b > a for a, b in zip(gaps, gaps[1:])):
        ok = False
        notes.append("bounds do not tighten monotonically as eps decreases")
    return SqueezeReport(lam, limit, tuple(eps_grid), tuple(centre), tuple(lower), tuple(upper), ok, tuple(notes))
