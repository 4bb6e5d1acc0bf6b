"""Acceptance criteria. Each test prints one ``criterion N: PASS|FAIL ...`` line."""

from __future__ import annotations

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import random_specs

from specmap.cli import main
from specmap.kernel import SpectralRational, zeros_one_minus_scf
from specmap.lab import exact_separation, sample_trials
from specmap.model import ModelSpec
from specmap.spiked import (
    builtin_probes,
    edge_expansion,
    expansion_sweep,
    predicted_limit,
    psi_value,
    spiked_probe,
)
from specmap.support import (
    build_support,
    cluster_mass_closed_form,
    cluster_mass_quadrature,
    density,
    edge_exponents,
    fixed_point_m,
    stieltjes_m,
)


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")

    return emit


def _finish(report, n: int, checks: dict[str, bool], detail: str, elapsed: float, limit: float) -> None:
    checks = dict(checks, runtime=elapsed < limit)
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    report(n, ok, f"{detail}; runtime {elapsed:.2f}s (< {limit:g}s)" + (f"; failed: {failed}" if failed else ""))
    assert ok, failed


def test_criterion_01_marchenko_pastur_edges(report):
    t0 = time.perf_counter()
    worst = 0.0
    single = True
    for sigma in (0.5, 1.0, 2.0):
        for c, (p, q) in ((0.25, (1, 4)), (0.5, (1, 2)), (1.0, (1, 1))):
            profile = build_support(ModelSpec(50 * p, 50 * q, sigma))
            single &= profile.Q == 1
            cl = profile.clusters[0]
            worst = max(
                worst,
                abs(cl.x_minus - sigma**2 * (1 - math.sqrt(c)) ** 2),
                abs(cl.x_plus - sigma**2 * (1 + math.sqrt(c)) ** 2),
            )
    elapsed = time.perf_counter() - t0
    _finish(report, 1, {"single cluster": single, "edges": worst <= 1e-9}, f"max edge error {worst:.2e}", elapsed, 1.0)


def test_criterion_02_stieltjes_oracle(report):
    t0 = time.perf_counter()
    profile = build_support(ModelSpec(100, 100, 1.0))
    m = stieltjes_m(-1.0, profile).m_value
    d = density(2.0, profile)
    em = abs(m - (math.sqrt(5) - 1) / 2)
    ed = abs(d - 1 / (2 * math.pi))
    elapsed = time.perf_counter() - t0
    _finish(report, 2, {"m(-1)": em <= 1e-10, "density(2)": ed <= 1e-8}, f"|m err| {em:.2e}, |density err| {ed:.2e}", elapsed, 1.0)


def test_criterion_03_mass_identity(report):
    t0 = time.perf_counter()
    specs = random_specs()
    exact = True
    quad_err = 0.0
    sum_err = 0.0
    for spec in specs:
        profile = build_support(spec)
        masses = [cluster_mass_closed_form(q, profile) for q in range(1, profile.Q + 1)]
        counts = [Fraction(int(profile.kernel.spectrum.weights[list(cl.eigs)].sum()), spec.M) for cl in profile.clusters]
        exact &= masses == counts and sum(masses) == 1
        quads = [cluster_mass_quadrature(q, profile) for q in range(1, profile.Q + 1)]
        quad_err = max(quad_err, max(abs(a - float(b)) for a, b in zip(quads, masses)))
        sum_err = max(sum_err, abs(float(sum(masses)) - 1.0))
    elapsed = time.perf_counter() - t0
    _finish(
        report,
        3,
        {"exact rational masses": exact, "quadrature": quad_err <= 1e-6, "sum": sum_err <= 1e-12},
        f"{len(specs)} specs, max quadrature error {quad_err:.2e}",
        elapsed,
        30.0,
    )


def test_criterion_04_interlacing(report):
    t0 = time.perf_counter()
    specs = [s for s in random_specs() if s.c < 1.0] + random_specs(ratios=(0.3, 0.7), seed=7)
    count_ok = pattern_ok = True
    worst = 0.0
    for spec in specs:
        k = SpectralRational.from_spec(spec)
        z = zeros_one_minus_scf(k)
        mu = k.poles
        count_ok &= z.size == spec.K + 1
        pattern_ok &= bool(z[0] < 0) and all(mu[j - 1] < z[j] < mu[j] for j in range(1, mu.size))
        worst = max(worst, float(np.max(np.abs(1.0 - k.s * k.f(z)))))
    elapsed = time.perf_counter() - t0
    _finish(
        report,
        4,
        {"K+1 roots": count_ok, "interlacing": pattern_ok, "residual": worst <= 1e-10},
        f"{len(specs)} specs with c_N < 1, max residual {worst:.2e}",
        elapsed,
        5.0,
    )


def test_criterion_05_half_bound(report):
    t0 = time.perf_counter()
    specs = random_specs()[:5]
    worst = math.inf
    positive = True
    for spec in specs:
        x_max = build_support(spec).x_max
        for x in np.linspace(0.0, x_max, 20):
            for y in np.linspace(1e-3, 1.0, 20):
                m = fixed_point_m(complex(x, y), spec)
                positive &= m.imag > 0
                worst = min(worst, (1.0 + spec.sigma**2 * spec.c * m).real - 0.5)
    elapsed = time.perf_counter() - t0
    _finish(report, 5, {"margin": worst >= -1e-9, "Im m > 0": positive}, f"min Re(1 + s m) - 1/2 = {worst:.3e}", elapsed, 10.0)


def test_criterion_06_edge_expansion(report):
    t0 = time.perf_counter()
    scaled = []
    rel = 0.0
    for M in (100, 400, 1600):
        spec = ModelSpec(M, M, 1.0, [(2.0, 1)])
        cl = build_support(spec).clusters[-1]
        lo, hi = edge_expansion(1, spec)
        scaled.append(max(abs(cl.x_minus - lo), abs(cl.x_plus - hi)) * math.sqrt(M))
        rel = max(abs(cl.x_minus - lo) / abs(cl.x_minus), abs(cl.x_plus - hi) / abs(cl.x_plus))
    elapsed = time.perf_counter() - t0
    mono = scaled[0] >= scaled[1] >= scaled[2]
    _finish(
        report,
        6,
        {"|err| sqrt(M) non-increasing": mono, "relative error at M=1600": rel <= 0.02},
        f"|err| sqrt(M) = {', '.join(f'{v:.4f}' for v in scaled)}; relative error at 1600 {rel:.2e}",
        elapsed,
        10.0,
    )


def test_criterion_07_spike_limits(report):
    t0 = time.perf_counter()
    sup = ModelSpec(200, 400, 1.0, [(2.0, 1)])
    sub = ModelSpec(200, 200, 1.0, [(0.5, 1)])
    mean_sup = float(np.mean([r.eigenvalues[0] for r in sample_trials(sup, 1, 50)]))
    mean_sub = float(np.mean([r.eigenvalues[0] for r in sample_trials(sub, 2, 50)]))
    lim_sup, lim_sub = predicted_limit(1, sup), predicted_limit(1, sub)
    elapsed = time.perf_counter() - t0
    _finish(
        report,
        7,
        {"supercritical": abs(mean_sup - 3.75) <= 0.15 and lim_sup == 3.75, "subcritical": abs(mean_sub - 4.0) <= 0.15 and lim_sub == 4.0},
        f"mean top eigenvalue {mean_sup:.4f} (limit 3.75), {mean_sub:.4f} (limit 4.0)",
        elapsed,
        300.0,
    )


def test_criterion_08_exact_separation(report):
    t0 = time.perf_counter()
    spec = ModelSpec(120, 240, 1.0, [(4.0, 1)])
    profile = build_support(spec)
    lo, hi = profile.gaps()[0]
    mid, quarter = 0.5 * (lo + hi), 0.25 * (hi - lo)
    rep = exact_separation(mid - quarter, mid + quarter, 100, spec, profile, seed=8)
    elapsed = time.perf_counter() - t0
    _finish(
        report,
        8,
        {"count match": rep.match_rate >= 0.95, "empty interval": rep.clean_fraction >= 0.95},
        f"[a, b] = [{rep.a:.4f}, {rep.b:.4f}] in gap ({lo:.4f}, {hi:.4f}); predicted ({rep.predicted_below}, "
        f"{rep.predicted_above}); match rate {rep.match_rate:.2f}; empty-interval rate {rep.clean_fraction:.2f}",
        elapsed,
        300.0,
    )


def _ratios(rows, i):
    out = []
    for a, b in zip(rows, rows[1:]):
        if a.rel_errors[i] == 0.0:
            if b.rel_errors[i] != 0.0:
                out.append(math.inf)
            continue  # expansion exact at both eps
        out.append(b.rel_errors[i] / a.rel_errors[i])
    return out


def test_criterion_09_perturbation_expansions(report):
    t0 = time.perf_counter()
    instance = ModelSpec(100, 100, 1.0, [(2.0, 1)])
    probes = builtin_probes() + [spiked_probe(instance, 2.0), spiked_probe(ModelSpec(100, 100, 1.0, [(0.5, 1)]), 0.5)]
    worst_mid = 0.0
    worst_pm = 0.0
    reality_ok = True
    coeff_ok = abs(probes[-2].h1_fn(2.0, 0.0) - 8.0) < 1e-12 and abs(probes[-2].h2_fn(2.0, 0.0) + 16.0 / 3.0) < 1e-12
    for probe in probes:
        rows = expansion_sweep(probe)
        assert rows[0].eps == pytest.approx(1e-2) and rows[-1].eps <= 1.3e-6
        if probe.is_cubic:
            worst_mid = max([worst_mid, *_ratios(rows, 1)])
            worst_pm = max([worst_pm, *_ratios(rows, 0), *_ratios(rows, 2)])
            want = "three real" if probe.h1_fn(probe.z0, 0.0).real > 0 else "one real, two complex"
            reality_ok &= {r.reality for r in rows} == {want}
        else:
            worst_mid = max([worst_mid, *_ratios(rows, 0)])
    elapsed = time.perf_counter() - t0
    # z_eps (the linear root and the middle cubic root) is what the criterion bounds; the
    # outer roots z^+-_eps carry an O(eps) remainder against a sqrt(eps) leading term, so
    # their ratio tends to 1/sqrt(2) and is reported for information only.
    _finish(
        report,
        9,
        {"z_eps ratio <= 0.7": worst_mid <= 0.7, "reality": reality_ok, "h1(2)=8, h2(2)=-16/3": coeff_ok},
        f"{len(probes)} probes; worst z_eps ratio {worst_mid:.4f}; (info) worst z+-_eps ratio {worst_pm:.4f}",
        elapsed,
        5.0,
    )


def test_criterion_10_square_root_edges(report):
    t0 = time.perf_counter()
    profile = build_support(ModelSpec(100, 200, 1.0, [(4.0, 1)]))
    d_slopes, w_slopes = [], []
    for q in range(1, profile.Q + 1):
        for side in ("minus", "plus"):
            ex = edge_exponents(profile, q, side)
            d_slopes.append(ex.density_slope)
            w_slopes.append(ex.w_prime_slope)
    elapsed = time.perf_counter() - t0
    _finish(
        report,
        10,
        {
            "density slope": all(0.4 <= s <= 0.6 for s in d_slopes),
            "|w'| exponent": all(-0.6 <= s <= -0.4 for s in w_slopes),
        },
        f"{len(d_slopes)} edges; density slopes [{min(d_slopes):.4f}, {max(d_slopes):.4f}], "
        f"|w'| exponents [{min(w_slopes):.4f}, {max(w_slopes):.4f}]",
        elapsed,
        10.0,
    )


def test_criterion_11_determinism(report, tmp_path):
    t0 = time.perf_counter()
    scenario = tmp_path / "scenario.json"
    scenario.write_text(
        json.dumps({"M": 60, "N": 120, "sigma": 1.0, "spikes": [{"value": 4.0, "multiplicity": 1}]}), encoding="utf-8"
    )
    runs = {
        "support": ([], ["support.json", "density.csv"]),
        "spiked": ([], ["spiked.json"]),
        "separation": (["--trials", "20"], ["separation.json"]),
        "convergence": (["--trials", "10", "--n-grid", "60,120"], ["convergence.json", "convergence.csv"]),
        "perturb-check": ([], ["perturb_check.json"]),
    }
    identical = True
    codes_ok = True
    for command, (extra, files) in runs.items():
        for tag in ("a", "b"):
            args = [command, "--scenario", str(scenario), "--out", str(tmp_path / tag / command), "--seed", "12345", *extra]
            codes_ok &= main(args) == 0
        for name in files:
            identical &= (tmp_path / "a" / command / name).read_bytes() == (tmp_path / "b" / command / name).read_bytes()
    elapsed = time.perf_counter() - t0
    _finish(report, 11, {"exit codes": codes_ok, "byte-identical": identical}, "5 subcommands run twice", elapsed, 60.0)


def test_psi_reference_values():
    # the limits used in criterion 7, evaluated independently of predicted_limit
    assert psi_value(2.0, 1.0, 0.5) == (1 + 2) * (0.5 + 2) / 2
    assert (1 + math.sqrt(1.0)) ** 2 == 4.0
