"""scikit-learn style wrappers around the support engine and the spiked predictions.

These do not learn anything from data: ``fit`` builds the deterministic objects from the
hyper-parameters, and the ``X`` passed to ``transform``/``predict`` is a column of real
points (or spike values) to evaluate.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .model import ModelSpec
from .spiked import limit_value
from .support import build_support, density

__all__ = ["DeterministicEquivalent", "SpikeLocator"]


def _points(X) -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single column of points, got shape {X.shape}")
        X = X[:, 0]
    return X


class DeterministicEquivalent(TransformerMixin, BaseEstimator):
    """Density and cluster membership of the deterministic equivalent measure.

    ``transform(X)`` returns the density at each point as an ``(n, 1)`` array and
    ``predict(X)`` the 1-based cluster index (0 outside the support).
    """

    def __init__(self, M: int = 100, N: int = 200, sigma: float = 1.0, spikes=()):
        self.M = M
        self.N = N
        self.sigma = sigma
        self.spikes = spikes

    def fit(self, X=None, y=None):
        self.spec_ = ModelSpec(M=self.M, N=self.N, sigma=self.sigma, spikes=self.spikes)
        self.profile_ = build_support(self.spec_)
        self.n_clusters_ = self.profile_.Q
        self.edges_ = np.array([[cl.x_minus, cl.x_plus] for cl in self.profile_.clusters])
        return self

    def transform(self, X):
        check_is_fitted(self, "profile_")
        return np.asarray(density(_points(X), self.profile_)).reshape(-1, 1)

    def predict(self, X):
        check_is_fitted(self, "profile_")
        xs = _points(X)
        out = np.zeros(xs.size, dtype=int)
        for cl in self.profile_.clusters:
            out[(xs >= cl.x_minus) & (xs <= cl.x_plus)] = cl.q
        return out


class SpikeLocator(BaseEstimator):
    """Maps spike values ``lambda`` to the almost-sure limit of the matching sample eigenvalue."""

    def __init__(self, sigma: float = 1.0, c: float = 1.0):
        self.sigma = sigma
        self.c = c

    def fit(self, X=None, y=None):
        if not 0.0 < self.c <= 1.0:
            raise ValueError("c must lie in (0, 1]")
        if not self.sigma >= 0.0:
            raise ValueError("sigma must be >= 0")
        self.threshold_ = self.sigma**2 * np.sqrt(self.c)
        self.bulk_edge_ = self.sigma**2 * (1.0 + np.sqrt(self.c)) ** 2
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        lam = _points(X)
        if np.any(lam <= 0.0):
            raise ValueError("spike values must be > 0")
        return np.array([limit_value(v, self.sigma, self.c) for v in lam])
