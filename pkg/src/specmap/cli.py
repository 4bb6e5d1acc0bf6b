"""``specmap`` command line: support, spiked predictions, Monte Carlo checks, perturbation sweeps.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 vacuous request.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .exceptions import NumericalError, PreconditionError, ScenarioError
from .lab import exact_separation, report_to_dict, spike_convergence
from .model import ModelSpec, load_scenario, scenario_to_dict, validate_asymptotic_regime
from .serialize import write_csv, write_json
from .spiked import (
    PerturbedRoots,
    builtin_probes,
    expansion_sweep,
    predict_spikes,
    prediction_to_dict,
    spiked_probe,
)
from .support import build_support, density, support_to_dict

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_VACUOUS = 0, 2, 3, 4
COMMANDS = ("support", "spiked", "separation", "convergence", "perturb-check")


@dataclass(frozen=True)
class RunConfig:
    command: str
    scenario: Path
    out: Path
    seed: int = 0
    trials: int = 50
    grid: int = 512
    a: float | None = None
    b: float | None = None
    n_grid: tuple[int, ...] = (100, 200, 400)

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ScenarioError(f"unknown command {self.command!r}")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("must be an unsigned 64-bit integer", field="seed")
        if self.trials < 1:
            raise ScenarioError("must be >= 1", field="trials")
        if self.grid < 16:
            raise ScenarioError("must be >= 16", field="grid")
        if (self.a is None) != (self.b is None):
            raise ScenarioError("--a and --b must be given together")


def _parse_n_grid(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(tok) for tok in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"malformed N grid {text!r}: expected comma-separated integers") from exc
    if not values or any(v < 1 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError(f"malformed N grid {text!r}: need increasing positive integers")
    return values


def _finite_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specmap",
        description="Deterministic-equivalent spectra of information-plus-noise matrices.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="base seed (unsigned 64-bit)")
    parser.add_argument("--trials", type=int, default=50, help="Monte Carlo trials")
    parser.add_argument("--grid", type=int, default=512, help="density grid points (>= 16)")
    parser.add_argument("--a", type=_finite_float, default=None, help="lower separation threshold")
    parser.add_argument("--b", type=_finite_float, default=None, help="upper separation threshold")
    parser.add_argument("--n-grid", type=_parse_n_grid, default=(100, 200, 400), help="comma-separated N values")
    return parser


def _prepare_out(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".specmap-write-test"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise ScenarioError(f"output directory {out} is not writable: {exc}") from exc


def _header(cfg: RunConfig, spec: ModelSpec) -> dict[str, Any]:
    return {"command": cfg.command, "version": __version__, "scenario": scenario_to_dict(spec)}


def cmd_support(cfg: RunConfig, spec: ModelSpec) -> None:
    profile = build_support(spec)
    regime = validate_asymptotic_regime(spec)
    lo = profile.clusters[0].x_minus
    hi = profile.x_max
    pad = 0.1 * (hi - lo)
    xs = np.linspace(max(0.0, lo - pad), hi + pad, cfg.grid)
    dens = density(xs, profile)
    doc = _header(cfg, spec)
    doc["support"] = support_to_dict(profile)
    doc["threshold"] = regime.threshold
    doc["warnings"] = list(regime.warnings)
    doc["density_grid"] = {"points": cfg.grid, "x_min": float(xs[0]), "x_max": float(xs[-1]), "file": "density.csv"}
    write_json(cfg.out / "support.json", doc)
    write_csv(cfg.out / "density.csv", ("x", "density"), zip(xs.tolist(), dens.tolist()))


def cmd_spiked(cfg: RunConfig, spec: ModelSpec) -> None:
    doc = _header(cfg, spec)
    doc["spiked"] = prediction_to_dict(predict_spikes(spec))
    write_json(cfg.out / "spiked.json", doc)


def _default_thresholds(profile) -> tuple[float, float]:
    gaps = profile.gaps()
    if not gaps:
        raise PreconditionError("single-cluster support; separation vacuous")
    widths = [b - a for a, b in gaps]
    lo, hi = gaps[int(np.argmax(widths))]
    mid, quarter = 0.5 * (lo + hi), 0.25 * (hi - lo)
    return mid - quarter, mid + quarter


def cmd_separation(cfg: RunConfig, spec: ModelSpec) -> None:
    profile = build_support(spec)
    if cfg.a is None:
        a, b = _default_thresholds(profile)
        placement = "middle half of the widest gap"
    else:
        a, b = cfg.a, cfg.b
        placement = "user"
        if a > b:
            raise ScenarioError("--a must not exceed --b")
    report = exact_separation(a, b, cfg.trials, spec, profile, seed=cfg.seed)
    doc = _header(cfg, spec)
    doc["seed"] = cfg.seed
    doc["placement"] = placement
    doc["support"] = support_to_dict(profile)
    doc["separation"] = report_to_dict(report)
    write_json(cfg.out / "separation.json", doc)


def cmd_convergence(cfg: RunConfig, spec: ModelSpec) -> None:
    table = spike_convergence(spec, cfg.n_grid, cfg.trials, seed=cfg.seed)
    doc = _header(cfg, spec)
    doc["seed"] = cfg.seed
    doc["n_grid"] = list(cfg.n_grid)
    doc["convergence"] = report_to_dict(table)
    write_json(cfg.out / "convergence.json", doc)
    write_csv(
        cfg.out / "convergence.csv",
        ("N", "M", "k", "mean", "std", "stderr", "limit", "abs_error"),
        ((r.N, r.M, r.k, r.mean, r.std, r.stderr, r.limit, r.abs_error) for r in table.rows),
    )


def _sweep_to_dict(name: str, kind: str, rows: Sequence[PerturbedRoots]) -> dict[str, Any]:
    labels = ("z_minus", "z", "z_plus") if kind == "cubic" else ("z",)
    out_rows = []
    for prev, row in zip((None, *rows[:-1]), rows):
        ratios = []
        for i in range(len(labels)):
            if prev is None or prev.rel_errors[i] == 0.0:
                ratios.append(None)
            else:
                ratios.append(row.rel_errors[i] / prev.rel_errors[i])
        out_rows.append(
            {
                "eps": row.eps,
                "roots": list(row.roots),
                "predictions": list(row.predictions),
                "abs_errors": list(row.abs_errors),
                "rel_errors": list(row.rel_errors),
                "rel_error_ratio": ratios,
                "residuals": list(row.residuals),
            }
        )
    return {
        "name": name,
        "kind": kind,
        "labels": list(labels),
        "method": rows[0].method,
        "reality": sorted({r.reality for r in rows}),
        "rows": out_rows,
    }


def cmd_perturb_check(cfg: RunConfig, spec: ModelSpec) -> None:
    probes = builtin_probes()
    notes = []
    for value, mult in spec.spikes:
        if mult != 1:
            notes.append(f"spike {value!r} has multiplicity {mult}; the cubic reduction needs a simple spike")
            continue
        try:
            probes.append(spiked_probe(spec, value))
        except PreconditionError as exc:
            notes.append(str(exc))
    doc = _header(cfg, spec)
    doc["probes"] = [
        _sweep_to_dict(p.name, "cubic" if p.is_cubic else "linear", expansion_sweep(p)) for p in probes
    ]
    doc["notes"] = notes
    write_json(cfg.out / "perturb_check.json", doc)


HANDLERS = {
    "support": cmd_support,
    "spiked": cmd_spiked,
    "separation": cmd_separation,
    "convergence": cmd_convergence,
    "perturb-check": cmd_perturb_check,
}


def run(cfg: RunConfig) -> None:
    spec = load_scenario(cfg.scenario)
    _prepare_out(cfg.out)
    HANDLERS[cfg.command](cfg, spec)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with status 2 on malformed flags
    try:
        cfg = RunConfig(
            command=args.command,
            scenario=args.scenario,
            out=args.out,
            seed=args.seed,
            trials=args.trials,
            grid=args.grid,
            a=args.a,
            b=args.b,
            n_grid=tuple(args.n_grid),
        )
        run(cfg)
    except PreconditionError as exc:
        print(f"specmap: {exc}", file=sys.stderr)
        return EXIT_VACUOUS
    except ScenarioError as exc:
        print(f"specmap: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"specmap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
