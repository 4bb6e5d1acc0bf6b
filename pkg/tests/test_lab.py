from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from specmap.exceptions import NumericalError, PreconditionError, ScenarioError
from specmap.lab import (
    check_no_eigenvalue_in,
    exact_separation,
    gram_eigenvalues,
    predicted_counts,
    report_to_dict,
    run_trials,
    sample_sigma_matrix,
    sample_trials,
    spike_convergence,
    thread_count,
    trial_rng,
)
from specmap.model import ModelSpec
from specmap.support import build_support


def test_noise_second_moment():
    spec = ModelSpec(200, 400, 1.0)
    A = sample_sigma_matrix(spec, seed=11)
    assert np.mean(np.abs(A) ** 2) == pytest.approx(1 / 400, rel=0.02)
    assert np.mean(A.real**2) == pytest.approx(np.mean(A.imag**2), rel=0.03)


def test_noise_free_sample_is_exact():
    spec = ModelSpec(6, 9, 0.0, [(5.0, 1), (2.0, 2)])
    eig = gram_eigenvalues(sample_sigma_matrix(spec, seed=1)).eigenvalues
    np.testing.assert_allclose(eig, [5.0, 2.0, 2.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_determinism_and_stream_independence():
    spec = ModelSpec(20, 30, 1.0, [(3.0, 1)])
    a = sample_sigma_matrix(spec, seed=5, stream=2)
    np.testing.assert_array_equal(a, sample_sigma_matrix(spec, seed=5, stream=2))
    assert not np.array_equal(a, sample_sigma_matrix(spec, seed=5, stream=3))
    assert not np.array_equal(a, sample_sigma_matrix(spec, seed=6, stream=2))
    with pytest.raises(ScenarioError):
        trial_rng(-1, 0)
    with pytest.raises(ScenarioError):
        trial_rng(0, 2**64)


def test_zero_matrix_and_orthogonal_rows():
    np.testing.assert_array_equal(gram_eigenvalues(np.zeros((3, 5))).eigenvalues, [0.0, 0.0, 0.0])
    A = np.array([[2.0, 0.0, 0.0], [0.0, 1j, 0.0]])
    np.testing.assert_allclose(gram_eigenvalues(A).eigenvalues, [4.0, 1.0], atol=1e-15)
    with pytest.raises(PreconditionError):
        gram_eigenvalues(np.zeros((4, 2)))


def test_eigenvalues_against_svd_and_trace():
    spec = ModelSpec(40, 70, 1.2, [(6.0, 1), (3.0, 2)])
    A = sample_sigma_matrix(spec, seed=99, stream=4)
    eig = gram_eigenvalues(A).eigenvalues
    sv = np.linalg.svd(A, compute_uv=False)
    np.testing.assert_allclose(eig, sv**2, rtol=1e-12, atol=1e-12 * sv[0] ** 2)
    assert eig.sum() == pytest.approx(np.linalg.norm(A, "fro") ** 2, rel=1e-12)
    assert np.all(np.diff(eig) <= 0)


def test_thread_count(monkeypatch):
    monkeypatch.setenv("SPECMAP_THREADS", "3")
    assert thread_count(10) == 3
    assert thread_count(2) == 2
    monkeypatch.setenv("SPECMAP_THREADS", "0")
    with pytest.raises(ScenarioError):
        thread_count(4)
    monkeypatch.setenv("SPECMAP_THREADS", "x")
    with pytest.raises(ScenarioError):
        thread_count(4)


def test_trials_independent_of_thread_count(monkeypatch):
    spec = ModelSpec(15, 30, 1.0, [(4.0, 1)])
    monkeypatch.setenv("SPECMAP_THREADS", "1")
    serial = [r.eigenvalues for r in sample_trials(spec, 7, 6)]
    monkeypatch.setenv("SPECMAP_THREADS", "4")
    parallel = [r.eigenvalues for r in sample_trials(spec, 7, 6)]
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a, b)
    assert run_trials(lambda i: i * i, 5) == [0, 1, 4, 9, 16]


def _mp_cdf(x: float, c: float) -> float:
    lo, hi = (1 - math.sqrt(c)) ** 2, (1 + math.sqrt(c)) ** 2
    if x <= lo:
        return 0.0
    x = min(x, hi)
    dens = lambda t: math.sqrt(max((hi - t) * (t - lo), 0.0)) / (2 * math.pi * c * t)  # noqa: E731
    return integrate.quad(dens, lo, x, epsabs=1e-12, limit=200)[0]


def test_empirical_spectrum_matches_marchenko_pastur():
    spec = ModelSpec(400, 800, 1.0)
    eig = np.sort(np.concatenate([r.eigenvalues for r in sample_trials(spec, 2024, 2)]))
    grid = np.linspace(0.0, 3.2, 161)
    emp = np.searchsorted(eig, grid, side="right") / eig.size
    theo = np.array([_mp_cdf(x, 0.5) for x in grid])
    assert np.max(np.abs(emp - theo)) <= 0.08


def test_interval_preconditions():
    spec = ModelSpec(60, 120, 1.0, [(4.0, 1)])
    profile = build_support(spec)
    cl = profile.clusters[0]
    with pytest.raises(PreconditionError):
        check_no_eigenvalue_in(cl.x_minus, cl.x_plus, 2, spec, profile)
    with pytest.raises(ScenarioError):
        check_no_eigenvalue_in(5.0, 4.0, 2, spec, profile)


def test_no_eigenvalue_beyond_support():
    spec = ModelSpec(80, 160, 1.0, [(4.0, 1)])
    profile = build_support(spec)
    rep = check_no_eigenvalue_in(profile.x_max + 1.0, math.inf, 10, spec, profile, seed=3)
    assert rep.clean_fraction == 1.0


def test_predicted_counts_one_spike():
    spec = ModelSpec(120, 240, 1.0, [(4.0, 1)])
    profile = build_support(spec)
    a, b = profile.gaps()[0]
    mid = 0.5 * (a + b)
    w_a, w_b, below, above = predicted_counts(mid - 0.1, mid + 0.1, profile)
    assert 0.0 < w_a < w_b < 4.0
    assert (below, above) == (119, 1)


def test_predicted_counts_without_spikes():
    spec = ModelSpec(50, 100, 1.0)
    profile = build_support(spec)
    x = profile.x_max + 1.0
    assert predicted_counts(x, x + 1.0, profile)[2:] == (50, 0)


def test_exact_separation_small():
    spec = ModelSpec(60, 120, 1.0, [(4.0, 1)])
    profile = build_support(spec)
    a, b = profile.gaps()[0]
    mid, q = 0.5 * (a + b), 0.25 * (b - a)
    rep = exact_separation(mid - q, mid + q, 20, spec, profile, seed=1)
    assert rep.match_rate >= 0.9
    assert rep.clean_fraction >= 0.9
    doc = report_to_dict(rep)
    assert doc["trials"] == 20 and len(doc["per_trial"]) == 20


def test_convergence_noise_free_is_exact():
    table = spike_convergence(ModelSpec(10, 20, 0.0, [(3.0, 1), (2.0, 1)]), [20, 40], trials=3)
    assert max(r.abs_error for r in table.rows) < 1e-12
    assert len(table.rows) == 4
    assert table.monotone(1) and table.monotone(2)


def test_convergence_grid_validation():
    spec = ModelSpec(10, 30, 1.0, [(3.0, 1)])
    with pytest.raises(ScenarioError, match="integer M"):
        spike_convergence(spec, [20], trials=2)
    with pytest.raises(ScenarioError):
        spike_convergence(spec, [60, 30], trials=2)


def test_convergence_supercritical_mean():
    table = spike_convergence(ModelSpec(10, 20, 1.0, [(2.0, 1)]), [200, 400], trials=10, seed=4)
    for r in table.for_spike(1):
        assert r.limit == 3.75
        assert r.abs_error < 4 * r.stderr + 0.1
    doc = report_to_dict(table)
    assert doc["trials"] == 10


def test_residual_check_runs():
    A = sample_sigma_matrix(ModelSpec(30, 50, 1.0, [(2.0, 1)]), seed=0)
    assert gram_eigenvalues(A, check=True).eigenvalues.size == 30
    with pytest.raises((NumericalError, ValueError)):
        gram_eigenvalues(np.full((2, 3), np.nan))
