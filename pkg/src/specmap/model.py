"""Problem instances of the information-plus-noise model and their shared derived data."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .exceptions import ScenarioError

__all__ = [
    "ModelSpec",
    "EffectiveSpectrum",
    "RegimeReport",
    "parse_scenario",
    "load_scenario",
    "scenario_to_dict",
    "dump_scenario",
    "effective_spectrum",
    "validate_asymptotic_regime",
]


def _canonical_spikes(spikes: Iterable[Any]) -> tuple[tuple[float, int], ...]:
    merged: dict[float, int] = {}
    for i, item in enumerate(spikes):
        if isinstance(item, Mapping):
            try:
                value, mult = item["value"], item.get("multiplicity", 1)
            except KeyError as exc:
                raise ScenarioError("missing key 'value'", field=f"spikes[{i}]") from exc
        else:
            try:
                value, mult = item
            except (TypeError, ValueError) as exc:
                raise ScenarioError("expected (value, multiplicity)", field=f"spikes[{i}]") from exc
        if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
            raise ScenarioError("value must be a number", field=f"spikes[{i}].value")
        if isinstance(mult, bool) or not isinstance(mult, (int, np.integer)):
            raise ScenarioError("multiplicity must be an integer", field=f"spikes[{i}].multiplicity")
        value = float(value)
        if not math.isfinite(value) or value <= 0.0:
            raise ScenarioError("spike values must be finite and > 0", field=f"spikes[{i}].value")
        if mult < 1:
            raise ScenarioError("multiplicity must be >= 1", field=f"spikes[{i}].multiplicity")
        merged[value] = merged.get(value, 0) + int(mult)
    return tuple(sorted(merged.items(), key=lambda kv: -kv[0]))


@dataclass(frozen=True)
class ModelSpec:
    """Deterministic parameters of ``Sigma = B + sigma * W``.

    ``spikes`` holds the non-zero eigenvalues of ``B B^*`` as ``(value, multiplicity)``
    pairs. Any iterable of pairs or ``{"value", "multiplicity"}`` mappings is accepted and
    canonicalized to strictly decreasing values, equal values merged.

    ``sigma == 0`` (noise-free) and ``K == 0`` (pure noise) are accepted as degenerate
    extensions; ``c = M / N > 1`` is rejected.
    """

    M: int
    N: int
    sigma: float
    spikes: tuple[tuple[float, int], ...] = field(default=())

    def __post_init__(self) -> None:
        for name in ("M", "N"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ScenarioError("must be an integer", field=name)
            if v < 1:
                raise ScenarioError("must be a positive integer", field=name)
            object.__setattr__(self, name, int(v))
        if isinstance(self.sigma, bool) or not isinstance(self.sigma, (int, float, np.floating, np.integer)):
            raise ScenarioError("must be a number", field="sigma")
        sigma = float(self.sigma)
        if not math.isfinite(sigma) or sigma < 0.0:
            raise ScenarioError("must be finite and >= 0", field="sigma")
        object.__setattr__(self, "sigma", sigma)
        if self.M > self.N:
            raise ScenarioError(
                "c_N > 1 unsupported: transpose the model (the spectrum of Sigma Sigma^* is then "
                "that of Sigma^* Sigma plus M - N zeros)",
                field="M",
            )
        object.__setattr__(self, "spikes", _canonical_spikes(self.spikes))
        if self.K >= self.M:
            raise ScenarioError(f"K < M violated (K={self.K}, M={self.M})", field="spikes")

    @property
    def c(self) -> float:
        return self.M / self.N

    @property
    def K(self) -> int:
        return sum(m for _, m in self.spikes)

    @property
    def spike_values(self) -> np.ndarray:
        """Non-zero eigenvalues of ``B B^*`` repeated by multiplicity, descending."""
        return np.array([v for v, m in self.spikes for _ in range(m)], dtype=float)

    @property
    def lambda_max(self) -> float:
        return self.spikes[0][0] if self.spikes else 0.0

    @property
    def scale(self) -> float:
        """Problem scale used to make tolerances relative."""
        return 1.0 + max(self.lambda_max, self.sigma**2 * (1.0 + math.sqrt(self.c)) ** 2)

    def with_dimensions(self, M: int, N: int) -> "ModelSpec":
        return ModelSpec(M=M, N=N, sigma=self.sigma, spikes=self.spikes)


@dataclass(frozen=True)
class EffectiveSpectrum:
    """Distinct eigenvalues of ``B B^*`` in ascending order with their multiplicities."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=np.int64)
        if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
            raise ValueError("values and weights must be equal-length non-empty vectors")
        if np.any(np.diff(values) <= 0):
            raise ValueError("eigenvalues must be strictly increasing")
        if np.any(weights < 1):
            raise ValueError("weights must be positive")
        values.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @property
    def M(self) -> int:
        return int(self.weights.sum())

    def __len__(self) -> int:
        return self.values.size


def effective_spectrum(spec: ModelSpec) -> EffectiveSpectrum:
    vals = [0.0] + [v for v, _ in reversed(spec.spikes)]
    wts = [spec.M - spec.K] + [m for _, m in reversed(spec.spikes)]
    return EffectiveSpectrum(np.array(vals), np.array(wts))


def parse_scenario(data: Mapping[str, Any]) -> ModelSpec:
    if not isinstance(data, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    missing = [k for k in ("M", "N", "sigma") if k not in data]
    if missing:
        raise ScenarioError("missing required key", field=missing[0])
    spikes = data.get("spikes", [])
    if not isinstance(spikes, list):
        raise ScenarioError("must be a list", field="spikes")
    return ModelSpec(M=data["M"], N=data["N"], sigma=data["sigma"], spikes=spikes)


def load_scenario(path: str | Path) -> ModelSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse error in {path}: {exc}") from exc
    return parse_scenario(data)


def scenario_to_dict(spec: ModelSpec) -> dict[str, Any]:
    return {
        "M": spec.M,
        "N": spec.N,
        "sigma": spec.sigma,
        "spikes": [{"value": v, "multiplicity": m} for v, m in spec.spikes],
    }


def dump_scenario(spec: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(spec), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RegimeReport:
    threshold: float
    window: float
    warnings: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.warnings


def validate_asymptotic_regime(spec: ModelSpec) -> RegimeReport:
    """Flag spikes closer than ``10 / sqrt(M)`` to ``sigma^2 sqrt(c)``, where finite-size effects dominate."""
    threshold = spec.sigma**2 * math.sqrt(spec.c)
    window = 10.0 / math.sqrt(spec.M)
    warnings = []
    for value, _ in spec.spikes:
        if abs(value - threshold) < window:
            warnings.append(
                f"spike at threshold: {value!r} is within {window:.3g} of sigma^2 sqrt(c_N) = {threshold!r}"
            )
    return RegimeReport(threshold=threshold, window=window, warnings=tuple(warnings))
