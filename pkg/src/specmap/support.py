"""Support, Stieltjes transform and density of the deterministic equivalent measure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any

import numpy as np
from numpy.polynomial.legendre import leggauss

from .exceptions import NumericalError, PreconditionError, ScenarioError
from .kernel import (
    SpectralRational,
    _phi_numerator_reduced,
    nearest_pole,
    pole_local_roots,
    reduced_phi_prime_numerator,
    residue_table,
    zeros_one_minus_scf,
)
from .model import ModelSpec

__all__ = [
    "CriticalPoint",
    "CriticalPoints",
    "Cluster",
    "SupportProfile",
    "StieltjesValue",
    "critical_points",
    "build_support",
    "associate_eigenvalues",
    "solve_w",
    "solve_w_many",
    "stieltjes_m",
    "fixed_point_m",
    "density",
    "cluster_mass_closed_form",
    "cluster_mass_quadrature",
    "support_to_dict",
    "EdgeExponents",
    "edge_exponents",
]

REAL_IMAG_TOL = 1e-6
TOUCH_TOL = 1e-9


@dataclass(frozen=True)
class CriticalPoint:
    w: float
    x: float
    kind: str  # "w_minus", "w_plus", "negative_extremum" or "zero_of_G"


@dataclass(frozen=True)
class CriticalPoints:
    pairs: tuple[tuple[float, float], ...]
    points: tuple[CriticalPoint, ...]


def _polish_critical(kernel: SpectralRational, w: float) -> float:
    best, best_val = w, abs(kernel.phi_prime(w))
    for _ in range(50):
        d2 = kernel.phi_second(w)
        if d2 == 0.0:
            break
        step = kernel.phi_prime(w) / d2
        w = w - step
        val = abs(kernel.phi_prime(w))
        if val < best_val:
            best, best_val = w, val
        if abs(step) <= 1e-15 * (1.0 + abs(w)):
            break
    return best


def _near_pole(kernel: SpectralRational, w: float, rel: float = 1e-9) -> bool:
    return bool(np.any(np.abs(w - kernel.poles) <= rel * (1.0 + np.abs(kernel.poles))))


def critical_points(kernel: SpectralRational) -> CriticalPoints:
    """Real critical points of ``phi``, split into cluster-endpoint preimages and discards."""
    if kernel.sigma <= 0.0:
        raise ScenarioError("the support engine needs sigma > 0", field="sigma")
    scale = kernel.scale
    roots = pole_local_roots(kernel, lambda p: reduced_phi_prime_numerator(kernel, p))
    cands = []
    for r in roots:
        if abs(r.imag) > REAL_IMAG_TOL * scale:
            continue
        w = float(r.real)
        if _near_pole(kernel, w):
            continue
        w = _polish_critical(kernel, w)
        if _near_pole(kernel, w):
            continue
        cands.append(w)
    cands.sort()

    unit_c = kernel.c == 1.0
    points: list[CriticalPoint] = []
    kept: list[tuple[float, float]] = []
    if unit_c:
        # phi = w (1 - s f)^2: every zero of 1 - s f is a critical point with value 0;
        # only the negative one is an endpoint preimage (x_1^- = 0).
        z0 = float(zeros_one_minus_scf(kernel)[0])
        kept.append((z0, 0.0))
    for w in cands:
        if unit_c and abs(1.0 - kernel.s * kernel.f(w)) < 1e-7:
            points.append(CriticalPoint(w, float(kernel.phi(w)), "zero_of_G"))
            continue
        x = float(kernel.phi(w))
        if x > 1e-10 * scale:
            kept.append((w, x))
        else:
            points.append(CriticalPoint(w, x, "negative_extremum"))
    kept.sort()
    if len(kept) % 2:
        raise NumericalError(f"pairing failure: {len(kept)} non-negative extrema of phi (expected an even count)")
    pairs = []
    for i in range(0, len(kept), 2):
        (wm, xm), (wp, xp) = kept[i], kept[i + 1]
        points.append(CriticalPoint(wm, xm, "w_minus"))
        points.append(CriticalPoint(wp, xp, "w_plus"))
        pairs.append((wm, wp))
    if not pairs or not pairs[0][0] < 0.0 < pairs[0][1]:
        raise NumericalError("first endpoint pair does not straddle 0")
    points.sort(key=lambda p: p.w)
    return CriticalPoints(tuple(pairs), tuple(points))


@dataclass(frozen=True)
class Cluster:
    q: int
    x_minus: float
    x_plus: float
    w_minus: float
    w_plus: float
    eigs: tuple[int, ...] = ()
    mass: Fraction = Fraction(0)

    def contains(self, x: float) -> bool:
        return self.x_minus <= x <= self.x_plus

    def interior(self, x) -> Any:
        return (self.x_minus < x) & (x < self.x_plus)


@dataclass(frozen=True)
class SupportProfile:
    spec: ModelSpec
    kernel: SpectralRational
    clusters: tuple[Cluster, ...]

    @property
    def Q(self) -> int:
        return len(self.clusters)

    @property
    def scale(self) -> float:
        return self.kernel.scale

    @property
    def x_max(self) -> float:
        return self.clusters[-1].x_plus

    def interior_mask(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mask = np.zeros(x.shape, dtype=bool)
        for cl in self.clusters:
            mask |= cl.interior(x)
        return mask

    def cluster_of(self, x: float) -> int | None:
        """1-based index of the cluster containing ``x`` (closed intervals), else ``None``."""
        for cl in self.clusters:
            if cl.contains(x):
                return cl.q
        return None

    def gaps(self) -> list[tuple[float, float]]:
        return [(a.x_plus, b.x_minus) for a, b in zip(self.clusters, self.clusters[1:])]

    def intersects(self, a: float, b: float) -> bool:
        return any(cl.x_minus <= b and a <= cl.x_plus for cl in self.clusters)


def associate_eigenvalues(profile: SupportProfile) -> SupportProfile:
    """Attach each distinct eigenvalue of ``B B^*`` to the cluster whose preimage interval holds it."""
    spec_vals = profile.kernel.spectrum.values
    weights = profile.kernel.spectrum.weights
    assigned: list[list[int]] = [[] for _ in profile.clusters]
    for j, mu in enumerate(spec_vals):
        hits = [i for i, cl in enumerate(profile.clusters) if cl.w_minus < mu < cl.w_plus]
        if len(hits) != 1:
            raise NumericalError(f"association failure: eigenvalue {mu} lies in {len(hits)} preimage intervals")
        assigned[hits[0]].append(j)
    M = profile.kernel.M
    clusters = []
    for cl, idx in zip(profile.clusters, assigned):
        if not idx:
            raise NumericalError(f"association failure: cluster {cl.q} holds no eigenvalue")
        clusters.append(replace(cl, eigs=tuple(idx), mass=Fraction(int(weights[idx].sum()), M)))
    return replace(profile, clusters=tuple(clusters))


def build_support(spec: ModelSpec) -> SupportProfile:
    kernel = SpectralRational.from_spec(spec)
    crit = critical_points(kernel)
    raw = []
    for wm, wp in crit.pairs:
        raw.append([wm, wp, float(kernel.phi(wm)), float(kernel.phi(wp))])
    if kernel.c == 1.0:
        raw[0][2] = 0.0
    merged = [raw[0]]
    for item in raw[1:]:
        if item[2] <= merged[-1][3] + TOUCH_TOL * kernel.scale:
            merged[-1] = [merged[-1][0], item[1], merged[-1][2], item[3]]
        else:
            merged.append(item)
    clusters = tuple(
        Cluster(q=i + 1, x_minus=xm, x_plus=xp, w_minus=wm, w_plus=wp)
        for i, (wm, wp, xm, xp) in enumerate(merged)
    )
    for cl in clusters:
        if not cl.x_minus < cl.x_plus:
            raise NumericalError(f"cluster {cl.q} has x_minus >= x_plus")
    return associate_eigenvalues(SupportProfile(spec, kernel, clusters))


# -- the map w_N and the Stieltjes transform -------------------------------------


@dataclass(frozen=True)
class StieltjesValue:
    x: complex
    w_value: complex
    m_value: complex
    region: str  # "inside-support", "outside-support", "boundary" or "upper-half-plane"


def _companion_roots(coefs: np.ndarray) -> np.ndarray:
    """Roots of a batch of polynomials given as ascending coefficient rows."""
    lead = coefs[:, -1:]
    monic = coefs[:, :-1] / lead
    n = monic.shape[1]
    comp = np.zeros((coefs.shape[0], n, n))
    comp[:, np.arange(1, n), np.arange(n - 1)] = 1.0
    comp[:, :, -1] = -monic
    return np.linalg.eigvals(comp)


def solve_w_many(xs, profile: SupportProfile) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``w_N(x)``; returns ``(w, inside_mask)``. Boundary points map to their preimage."""
    kernel = profile.kernel
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    scale = kernel.scale
    roots = _phi_level_roots(kernel, xs)

    inside = profile.interior_mask(xs)
    out = np.empty(xs.size, dtype=complex)
    idx_in = np.flatnonzero(inside)
    if idx_in.size:
        width = max(r.size for r in roots)
        padded = np.full((idx_in.size, width), np.nan + 0j)
        for k, i in enumerate(idx_in):
            padded[k, : roots[i].size] = roots[i]
        im = np.where(np.isnan(padded.real), -np.inf, padded.imag)
        w = padded[np.arange(idx_in.size), np.argmax(im, axis=1)]
        w = _newton_phi_batch(kernel, w, xs[idx_in])
        if np.any(~(w.imag > 0.0)):
            j = idx_in[int(np.argmax(~(w.imag > 0.0)))]
            raise NumericalError(f"no solution of phi(w) = {xs[j]} in the upper half-plane")
        out[idx_in] = w
    for i in np.flatnonzero(~inside):
        x = float(xs[i])
        edge = _boundary_preimage(x, profile)
        out[i] = edge if edge is not None else _select_outside(kernel, roots[i], x, scale)
    resid = np.abs(kernel.phi(out) - xs)
    bad = resid > 1e-9 * (1.0 + np.abs(xs))
    if np.any(bad):
        j = int(np.argmax(bad))
        raise NumericalError(f"phi(w_N(x)) round trip failed at x={xs[j]!r} (residual {resid[j]:.3g})")
    return out, inside


def _phi_level_roots(kernel: SpectralRational, xs: np.ndarray) -> list[np.ndarray]:
    """All roots of ``phi(w) = x`` for each ``x``, from pole-local expansions (see kernel)."""
    scale = kernel.scale
    per_x: list[list[np.ndarray]] = [[] for _ in xs]
    for j, p in enumerate(kernel.poles):
        num, den = _phi_numerator_reduced(kernel, float(p))
        a = num.coef
        b = np.zeros_like(a)
        b[: den.coef.size] = den.coef
        coefs = (a[None, :] - xs[:, None] * b[None, :]) * scale ** np.arange(a.size)
        coefs = coefs / np.max(np.abs(coefs), axis=1, keepdims=True)
        r = _companion_roots(coefs) * scale + p
        keep = nearest_pole(kernel, r) == j
        for i in range(xs.size):
            per_x[i].append(r[i][keep[i]])
    return [np.concatenate(parts) for parts in per_x]


def _boundary_preimage(x: float, profile: SupportProfile) -> float | None:
    for cl in profile.clusters:
        if x == cl.x_minus:
            return cl.w_minus
        if x == cl.x_plus:
            return cl.w_plus
    return None


def _newton_phi(kernel: SpectralRational, w: complex, x: float, iters: int = 8) -> complex:
    best, best_r = w, abs(kernel.phi(w) - x)
    for _ in range(iters):
        d = kernel.phi_prime(w)
        if d == 0:
            break
        w = w - (kernel.phi(w) - x) / d
        r = abs(kernel.phi(w) - x)
        if r < best_r:
            best, best_r = w, r
        else:
            break
    return best


def _newton_phi_batch(kernel: SpectralRational, w: np.ndarray, x: np.ndarray, iters: int = 8) -> np.ndarray:
    best = w.copy()
    best_r = np.abs(kernel.phi(w) - x)
    active = np.ones(w.size, dtype=bool)
    for _ in range(iters):
        d = kernel.phi_prime(w)
        active &= d != 0
        step = np.where(active, (kernel.phi(w) - x) / np.where(d == 0, 1.0, d), 0.0)
        w = w - step
        r = np.abs(kernel.phi(w) - x)
        better = active & (r < best_r)
        best[better] = w[better]
        best_r[better] = r[better]
        active &= better
        if not np.any(active):
            break
    return best


def _select_outside(kernel: SpectralRational, roots: np.ndarray, x: float, scale: float) -> float:
    picked: list[float] = []
    for r in roots:
        if abs(r.imag) > REAL_IMAG_TOL * scale:
            continue
        if _near_pole(kernel, r.real):
            continue
        w = _newton_phi(kernel, float(r.real), x).real
        if kernel.phi_prime(w) > 0.0 and 1.0 - kernel.s * kernel.f(w) > 0.0:
            if not any(abs(w - p) <= 1e-9 * scale for p in picked):
                picked.append(w)
    if len(picked) != 1:
        raise NumericalError(f"{len(picked)} real solutions of phi(w) = {x} pass the selection rule (expected 1)")
    return picked[0]


def solve_w(x: float, profile: SupportProfile) -> StieltjesValue:
    w, inside = solve_w_many([x], profile)
    m = _m_from_w(profile.kernel, w)[0]
    if _boundary_preimage(float(x), profile) is not None:
        region = "boundary"
    else:
        region = "inside-support" if inside[0] else "outside-support"
    if region != "inside-support":
        return StieltjesValue(float(x), float(w[0].real), float(m.real), region)
    return StieltjesValue(float(x), complex(w[0]), complex(m), region)


def _m_from_w(kernel: SpectralRational, w: np.ndarray) -> np.ndarray:
    f = kernel.f(np.asarray(w, dtype=complex))
    return f / (1.0 - kernel.s * f)


def stieltjes_m(x: float, profile: SupportProfile) -> StieltjesValue:
    """``m_N(x) = f(w_N(x)) / (1 - s f(w_N(x)))``, the boundary value from the upper half-plane."""
    return solve_w(x, profile)


def fixed_point_m(
    z: complex,
    spec: ModelSpec,
    relaxation: float = 0.5,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    m0: complex | None = None,
) -> complex:
    """Solve the canonical fixed-point equation for ``m_N(z)``, ``Im z > 0``, by damped iteration."""
    z = complex(z)
    if not z.imag > 0.0:
        raise PreconditionError("fixed_point_m needs Im(z) > 0")
    kernel = SpectralRational.from_spec(spec)
    mu = kernel.poles
    a = kernel.spectrum.weights / kernel.M
    s, extra = kernel.s, kernel.sigma**2 * (1.0 - kernel.c)
    # start from the Stieltjes transform of a point mass pushed into C^+
    m = complex(m0) if m0 is not None else -1.0 / (z + kernel.scale * 1j)
    for _ in range(max_iter):
        t = 1.0 + s * m
        new = complex(np.sum(a / (mu / t - z * t + extra)))
        nxt = (1.0 - relaxation) * m + relaxation * new
        if abs(nxt - m) < tol:
            if not (z * nxt).imag > 0.0:
                raise NumericalError(f"fixed point at z={z} violates Im(z m) > 0")
            return nxt
        m = nxt
    raise NumericalError(f"fixed-point iteration for m_N({z}) did not converge in {max_iter} steps")


def density(x, profile: SupportProfile):
    """Density of the deterministic equivalent; exactly 0 off the support interior."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros(xs.size)
    inside = profile.interior_mask(xs)
    if np.any(inside):
        w, _ = solve_w_many(xs[inside], profile)
        out[inside] = np.maximum(_m_from_w(profile.kernel, w).imag / math.pi, 0.0)
    if np.ndim(x) == 0:
        return float(out[0])
    return out


# -- cluster masses ----------------------------------------------------------------


def cluster_mass_closed_form(q: int, profile: SupportProfile) -> Fraction:
    """Mass of cluster ``q`` from the residues of the mass integrand, checked against the count."""
    cl = profile.clusters[q - 1]
    kernel = profile.kernel
    table = residue_table(kernel)
    inside_poles = (table.poles > cl.w_minus) & (table.poles < cl.w_plus)
    inside_zeros = (table.zeros > cl.w_minus) & (table.zeros < cl.w_plus)
    total = -table.at_poles[inside_poles].sum() - table.g3_at_zeros[inside_zeros].sum()
    count = Fraction(int(profile.kernel.spectrum.weights[list(cl.eigs)].sum()), kernel.M)
    if abs(total - float(count)) > 1e-10:
        raise NumericalError(
            f"residue sum {total!r} for cluster {q} disagrees with eigenvalue count ratio {count}"
        )
    return count


def _neck_points(cl: Cluster, profile: SupportProfile) -> list[float]:
    """Interior points where the density nearly vanishes (images of near-real critical points)."""
    kernel = profile.kernel
    roots = pole_local_roots(kernel, lambda p: reduced_phi_prime_numerator(kernel, p))
    necks = []
    for r in roots:
        if not r.imag > REAL_IMAG_TOL * kernel.scale or not cl.w_minus < r.real < cl.w_plus:
            continue
        if _near_pole(kernel, r.real):
            continue
        x = float(np.real(kernel.phi(r.real)))
        if cl.x_minus < x < cl.x_plus:
            necks.append(x)
    return sorted(necks)


def _gauss_cos(a: float, b: float, n: int, profile: SupportProfile) -> float:
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    t, wts = leggauss(n)
    theta = 0.5 * math.pi * (t + 1.0)
    vals = density(mid - half * np.cos(theta), profile) * half * np.sin(theta)
    return 0.5 * math.pi * float(np.dot(wts, vals))


def cluster_mass_quadrature(q: int, profile: SupportProfile, tol: float = 1e-8, max_nodes: int = 4096) -> float:
    """Integrate the density over cluster ``q`` with ``x = mid - half cos(theta)`` on each piece.

    The cluster is split at near-vanishing necks of the density so that every piece is
    resolved by the cosine substitution; node counts double until two estimates agree.
    """
    cl = profile.clusters[q - 1]
    cuts = [cl.x_minus, *_neck_points(cl, profile), cl.x_plus]
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        prev = None
        n = 16
        while True:
            if n > max_nodes:
                raise NumericalError(f"quadrature for cluster {q} did not converge with {max_nodes} nodes")
            est = _gauss_cos(a, b, n, profile)
            if prev is not None and abs(est - prev) < tol / len(cuts):
                break
            prev = est
            n *= 2
        total += est
    return total


@dataclass(frozen=True)
class EdgeExponents:
    q: int
    side: str
    t: np.ndarray
    density: np.ndarray
    w_prime: np.ndarray
    density_slope: float
    w_prime_slope: float


def edge_exponents(profile: SupportProfile, q: int, side: str, levels: range = range(6, 18)) -> EdgeExponents:
    """Log-log slopes of the density and of a central-difference ``|w'|`` against the
    distance ``t_j = 2^-j * width`` to an edge of cluster ``q``, approached from inside."""
    if side not in ("minus", "plus"):
        raise PreconditionError("side must be 'minus' or 'plus'")
    cl = profile.clusters[q - 1]
    width = cl.x_plus - cl.x_minus
    t = width * 2.0 ** -np.array(list(levels), dtype=float)
    x = cl.x_minus + t if side == "minus" else cl.x_plus - t
    h = 1e-3 * t
    dens = np.asarray(density(x, profile))
    w_hi, _ = solve_w_many(x + h, profile)
    w_lo, _ = solve_w_many(x - h, profile)
    wp = np.abs(w_hi - w_lo) / (2.0 * h)
    lt = np.log(t)
    d_slope = float(np.polyfit(lt, np.log(dens), 1)[0])
    w_slope = float(np.polyfit(lt, np.log(wp), 1)[0])
    return EdgeExponents(q, side, t, dens, wp, d_slope, w_slope)


def support_to_dict(profile: SupportProfile) -> dict[str, Any]:
    vals = profile.kernel.spectrum.values
    weights = profile.kernel.spectrum.weights
    return {
        "Q": profile.Q,
        "clusters": [
            {
                "q": cl.q,
                "x_minus": cl.x_minus,
                "x_plus": cl.x_plus,
                "w_minus": cl.w_minus,
                "w_plus": cl.w_plus,
                "eigs": [float(vals[j]) for j in cl.eigs],
                "mass_num": int(weights[list(cl.eigs)].sum()),
                "mass_den": profile.kernel.M,
            }
            for cl in profile.clusters
        ],
    }
