"""Rational functions built from the spectrum of ``B B^*``.

With ``s = sigma^2 c`` and the normalized resolvent trace
``f(w) = (1/M) sum_j a_j / (mu_j - w)`` over the distinct eigenvalues ``mu_j`` (weights
``a_j``), the support of the deterministic equivalent is read off

    phi(w) = w (1 - s f(w))^2 + sigma^2 (1 - c) (1 - s f(w)).

Everything here is a pure function of an immutable :class:`SpectralRational`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from .exceptions import NumericalError, PoleProximityError
from .model import EffectiveSpectrum, ModelSpec, effective_spectrum

__all__ = [
    "SpectralRational",
    "ResidueTable",
    "eval_f",
    "eval_f_prime",
    "eval_phi",
    "eval_phi_prime",
    "eval_g",
    "eval_g_parts",
    "gamma_polynomials",
    "phi_prime_numerator",
    "reduced_phi_prime_numerator",
    "zeros_one_minus_scf",
    "residue_table",
    "polynomial_roots",
    "pole_local_roots",
    "nearest_pole",
]

GUARD = 1e-10


@dataclass(frozen=True)
class SpectralRational:
    spectrum: EffectiveSpectrum
    sigma: float
    c: float
    guard: float = GUARD

    @classmethod
    def from_spec(cls, spec: ModelSpec, guard: float = GUARD) -> "SpectralRational":
        return cls(effective_spectrum(spec), spec.sigma, spec.c, guard)

    @property
    def M(self) -> int:
        return self.spectrum.M

    @property
    def s(self) -> float:
        return self.sigma**2 * self.c

    @property
    def poles(self) -> np.ndarray:
        return self.spectrum.values

    @property
    def nonzero_poles(self) -> np.ndarray:
        return self.spectrum.values[1:]

    @property
    def expanded_spikes(self) -> np.ndarray:
        """Non-zero eigenvalues repeated by multiplicity, ascending."""
        return np.repeat(self.spectrum.values[1:], self.spectrum.weights[1:])

    @property
    def scale(self) -> float:
        return 1.0 + max(float(self.poles[-1]), self.sigma**2 * (1.0 + math.sqrt(self.c)) ** 2)

    def _check(self, w: np.ndarray) -> None:
        radius = self.guard * (1.0 + np.abs(self.poles))
        dist = np.abs(w[..., None] - self.poles)
        hit = dist <= radius
        if np.any(hit):
            idx = np.argwhere(hit)[0]
            raise PoleProximityError(complex(w[tuple(idx[:-1])]), float(self.poles[idx[-1]]))

    def _moment(self, w, power: int):
        w_arr = np.asarray(w, dtype=complex)
        self._check(w_arr)
        terms = self.spectrum.weights / (self.poles - w_arr[..., None]) ** power
        out = terms.sum(axis=-1) / self.M
        if not np.iscomplexobj(w):
            out = out.real
        if np.ndim(w) == 0:
            return out.item()
        return out

    def f(self, w):
        return self._moment(w, 1)

    def f_prime(self, w):
        return self._moment(w, 2)

    def f_second(self, w):
        return 2.0 * self._moment(w, 3)

    def phi(self, w):
        u = 1.0 - self.s * self.f(w)
        return w * u**2 + self.sigma**2 * (1.0 - self.c) * u

    def phi_prime(self, w):
        u = 1.0 - self.s * self.f(w)
        du = -self.s * self.f_prime(w)
        return u**2 + 2.0 * w * u * du + self.sigma**2 * (1.0 - self.c) * du

    def phi_second(self, w):
        u = 1.0 - self.s * self.f(w)
        du = -self.s * self.f_prime(w)
        d2u = -self.s * self.f_second(w)
        return 4.0 * u * du + 2.0 * w * du**2 + (2.0 * w * u + self.sigma**2 * (1.0 - self.c)) * d2u


def eval_f(w, kernel: SpectralRational):
    return kernel.f(w)


def eval_f_prime(w, kernel: SpectralRational):
    return kernel.f_prime(w)


def eval_phi(w, kernel: SpectralRational):
    return kernel.phi(w)


def eval_phi_prime(w, kernel: SpectralRational):
    return kernel.phi_prime(w)


def eval_g_parts(w, kernel: SpectralRational):
    """The three summands of the cluster-mass integrand ``g = g1 + g2 + g3``."""
    s, c = kernel.s, kernel.c
    f = kernel.f(w)
    fp = kernel.f_prime(w)
    g1 = f * (1.0 - s * f)
    g2 = -2.0 * s * w * f * fp
    g3 = -(kernel.sigma**4) * c * (1.0 - c) * f * fp / (1.0 - s * f)
    return g1, g2, g3


def eval_g(w, kernel: SpectralRational):
    g1, g2, g3 = eval_g_parts(w, kernel)
    return g1 + g2 + g3


# -- polynomial forms --------------------------------------------------------------

_W = Polynomial([0.0, 1.0])


def _prod(factors) -> Polynomial:
    out = Polynomial([1.0])
    for p in factors:
        out = out * p
    return out


def gamma_polynomials(kernel: SpectralRational) -> tuple[Polynomial, Polynomial, Polynomial]:
    """``(gamma_1, gamma_2, gamma_3)`` with repeated spikes entering as coincident factors."""
    lam = kernel.expanded_spikes
    sig2, c = kernel.sigma**2, kernel.c
    lin = [Polynomial([lk, -1.0]) for lk in lam]  # (lambda_k - w)

    g1 = (_W**2 - sig2**2 * c) * _prod(p**3 for p in lin)

    acc = Polynomial([0.0])
    for j, lj in enumerate(lam):
        quad = _W**2 + sig2 * (1.0 + c) * _W - sig2 * (1.0 + c) * lj / 2.0
        acc = acc + lj * quad * _prod(p**2 for i, p in enumerate(lin) if i != j)
    g2 = -2.0 * sig2 * c * _prod(lin) * acc

    left = Polynomial([0.0])
    right = Polynomial([0.0])
    for k, lk in enumerate(lam):
        others = [p for i, p in enumerate(lin) if i != k]
        left = left + lk * _prod(others)
        right = right + lk * (3.0 * _W - lk) * _prod(p**2 for p in others)
    g3 = sig2**2 * c**2 * left * right
    return g1, g2, g3


def phi_prime_numerator(kernel: SpectralRational) -> Polynomial:
    """``gamma_1 + gamma_2 / M + gamma_3 / M^2``.

    Satisfies ``phi'(w) = numerator(w) / (w^2 prod_k (lambda_k - w)^3)`` with the product over
    spikes counted with multiplicity.
    """
    g1, g2, g3 = gamma_polynomials(kernel)
    M = kernel.M
    return g1 + g2 / M + g3 / M**2


def _distinct_factors(kernel: SpectralRational, shift: float = 0.0):
    # all polynomials are in the variable v = w - shift
    mu = kernel.poles - shift
    a = kernel.spectrum.weights.astype(float)
    lin = [Polynomial([m, -1.0]) for m in mu]  # (mu_j - w)
    d_nonzero = _prod(lin[1:])
    d_full = lin[0] * d_nonzero
    p = Polynomial([0.0])
    for j in range(mu.size):
        p = p + a[j] * _prod(q for i, q in enumerate(lin) if i != j)
    return d_nonzero, d_full, p


def _phi_numerator_reduced(kernel: SpectralRational, shift: float = 0.0) -> tuple[Polynomial, Polynomial]:
    """``(num, den)`` in ``v = w - shift`` with ``phi = num / den`` and ``den = M^2 w D(w)^2``."""
    M = kernel.M
    d_nz, d_full, p = _distinct_factors(kernel, shift)
    e = M * d_full - kernel.s * p
    num = e**2 - kernel.sigma**2 * (1.0 - kernel.c) * M * d_nz * e
    den = M**2 * Polynomial([shift, 1.0]) * d_nz**2
    return num, den


def reduced_phi_prime_numerator(kernel: SpectralRational, shift: float = 0.0) -> Polynomial:
    """Numerator of ``phi'`` over ``w^2 prod_{distinct mu > 0} (mu - w)^3``, in ``v = w - shift``.

    Equal to :func:`phi_prime_numerator` when every spike is simple; with repeated spikes it
    drops the common factors sitting exactly on the poles.
    """
    d_nz, _, _ = _distinct_factors(kernel, shift)
    num, _ = _phi_numerator_reduced(kernel, shift)
    M = kernel.M
    w = Polynomial([shift, 1.0])
    return (num.deriv() * w * d_nz - num * d_nz - 2.0 * w * num * d_nz.deriv()) / M**2


def polynomial_roots(poly: Polynomial, scale: float = 1.0) -> np.ndarray:
    """All complex roots via companion-matrix eigenvalues.

    The variable is rescaled by ``scale`` and the coefficients normalized first; LAPACK's
    general eigensolver then balances the companion matrix before the QR iteration.
    """
    coef = np.trim_zeros(np.asarray(poly.coef, dtype=float), trim="b")
    if coef.size <= 1:
        return np.empty(0, dtype=complex)
    scaled = coef * scale ** np.arange(coef.size)
    scaled = scaled / np.max(np.abs(scaled))
    return Polynomial(scaled).roots().astype(complex) * scale


def nearest_pole(kernel: SpectralRational, w) -> np.ndarray:
    w = np.asarray(w)
    return np.argmin(np.abs(w[..., None] - kernel.poles), axis=-1)


def pole_local_roots(kernel: SpectralRational, build) -> np.ndarray:
    """Roots of a polynomial assembled by ``build(shift)`` in the variable ``w - shift``.

    Clustered roots next to a pole are badly conditioned in a single monomial basis, so the
    polynomial is re-expanded around every pole and each expansion contributes only the
    roots lying in that pole's nearest-pole cell.
    """
    out = []
    for j, p in enumerate(kernel.poles):
        r = polynomial_roots(build(float(p)), kernel.scale) + p
        out.append(r[nearest_pole(kernel, r) == j])
    return np.concatenate(out)


# -- zeros of 1 - s f ---------------------------------------------------------------


def _newton_polish_G(kernel: SpectralRational, w: float, lo: float, hi: float) -> float:
    s = kernel.s
    for _ in range(20):
        g = 1.0 - s * kernel.f(w)
        if abs(g) <= 1e-14:
            break
        step = g / (-s * kernel.f_prime(w))
        nxt = w - step
        if not lo < nxt < hi:
            break
        if abs(step) <= 1e-16 * (1.0 + abs(w)):
            w = nxt
            break
        w = nxt
    return w


def zeros_one_minus_scf(kernel: SpectralRational) -> np.ndarray:
    """Real zeros of ``1 - s f(w)``, ascending: one negative, then one per spectral gap."""
    s = kernel.s
    if s <= 0.0:
        raise NumericalError("1 - sigma^2 c f has no zeros when sigma = 0")
    mu = kernel.poles

    def G(w: float) -> float:
        return 1.0 - s * kernel.f(w)

    def near_right(pole: float, left: float | None) -> float:
        # point just left of a pole where G < 0, never past the previous pole
        delta = 1e-3 * (1.0 + abs(pole) if left is None else pole - left)
        while True:
            w = pole - delta
            if delta <= 2 * kernel.guard * (1.0 + abs(pole)):
                raise NumericalError(f"could not bracket zero left of pole {pole}")
            if G(w) < 0.0:
                return w
            delta *= 0.5

    def near_left(pole: float, right: float) -> float:
        delta = 1e-3 * (right - pole)
        while True:
            w = pole + delta
            if delta <= 2 * kernel.guard * (1.0 + abs(pole)):
                raise NumericalError(f"could not bracket zero right of pole {pole}")
            if G(w) > 0.0:
                return w
            delta *= 0.5

    brackets = [(-2.0 * s - 1.0, near_right(mu[0], None))]
    for j in range(1, mu.size):
        lo = near_left(mu[j - 1], mu[j])
        hi = near_right(mu[j], mu[j - 1])
        brackets.append((lo, hi))
    zeros = []
    for lo, hi in brackets:
        if not G(lo) > 0.0 > G(hi):
            raise NumericalError(f"root count mismatch: no sign change of 1 - s f on ({lo}, {hi})")
        z = brentq(G, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        zeros.append(_newton_polish_G(kernel, z, lo, hi))
    out = np.array(zeros)
    # backward-error test: the zeros can sit very close to poles, where |G'| is huge and a
    # one-ulp change of w moves G far more than any fixed absolute tolerance
    terms = np.abs(kernel.spectrum.weights[None, :] / (mu[None, :] - out[:, None])) / kernel.M
    slope = np.abs(out) * (terms / np.abs(mu[None, :] - out[:, None])).sum(axis=1)
    resid = np.abs(1.0 - s * kernel.f(out)) / (1.0 + s * (terms.sum(axis=1) + slope))
    if np.any(resid > 1e-12):
        raise NumericalError(f"zeros of 1 - s f not resolved (max residual {resid.max():.3g})")
    return out


# -- residues of the mass integrand ----------------------------------------------


@dataclass(frozen=True)
class ResidueTable:
    """Residues of ``g1, g2, g3`` at each distinct eigenvalue and at the zeros of ``1 - s f``.

    ``poles[j]`` is the ``j``-th distinct eigenvalue (``poles[0] == 0``); row ``j`` of
    ``at_poles`` is ``(Res g1, Res g2, Res g3)`` there. ``zeros`` is empty when ``c == 1``:
    the factor ``1 - c`` cancels those poles.
    """

    poles: np.ndarray
    weights: np.ndarray
    at_poles: np.ndarray
    zeros: np.ndarray
    g3_at_zeros: np.ndarray


def residue_table(kernel: SpectralRational) -> ResidueTable:
    mu = kernel.poles
    a = kernel.spectrum.weights.astype(float)
    M, s, c = kernel.M, kernel.s, kernel.c
    rows = []
    for j, p in enumerate(mu):
        others = np.arange(mu.size) != j
        r0 = np.sum(a[others] / (mu[others] - p)) / M
        alpha = a[j] / M
        rows.append((-alpha + 2.0 * s * alpha * r0, -2.0 * s * alpha * r0, -(1.0 - c) / c))
    if c < 1.0:
        zeros = zeros_one_minus_scf(kernel)
        g3z = np.full(zeros.size, (1.0 - c) / c)
    else:
        zeros = np.empty(0)
        g3z = np.empty(0)
    return ResidueTable(mu.copy(), kernel.spectrum.weights.copy(), np.array(rows), zeros, g3z)
