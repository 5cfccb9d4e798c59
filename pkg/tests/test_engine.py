import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from oracles import brute_force_I2, dense_rho
from twophoton_speckle import stats
from twophoton_speckle.engine import (
    BLOCK_SIZE,
    DetectorPair,
    Efficiencies,
    ScatteringModel,
    haar_unitary,
    intensity_pair,
    intensity_single,
    run_ensemble,
    sample_rows,
    sample_rows_unitary,
    speckle_sample,
)
from twophoton_speckle.states import (
    CoefficientMatrix,
    ReducedDensityMatrix,
    StateEnsemble,
    make_fully_mixed,
    make_general_pure,
    make_pure_entangled,
    reduced_density,
)


def random_state(rng, n, k):
    comps = []
    for _ in range(k):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        a = a + a.T
        comps.append(a / np.linalg.norm(a))
    w = rng.uniform(0.1, 1.0, size=k)
    w = w / math.fsum(w)
    return StateEnsemble(n, tuple((p, CoefficientMatrix(c)) for p, c in zip(w, comps)))


def cvec(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


# --- model types ----------------------------------------------------------------


def test_transport_second_moment():
    m = ScatteringModel.from_transport(50, 2.0, 400.0)
    assert m.sigma2 == pytest.approx(2 * 2.0 / (400.0 * 50), rel=1e-14)


@pytest.mark.parametrize("dim, sigma2", [(0, 1.0), (4, 0.0), (4, -1.0)])
def test_bad_models(dim, sigma2):
    with pytest.raises(ValueError):
        ScatteringModel(dim, sigma2)


def test_detectors_must_differ():
    with pytest.raises(ValueError):
        DetectorPair(3, 3)
    with pytest.raises(ValueError):
        Efficiencies(0.0, 1.0)
    with pytest.raises(ValueError):
        Efficiencies(1.0, -2.0)


# --- currents ---------------------------------------------------------------------


def test_single_current_on_basis_vector():
    rho1 = reduced_density(make_pure_entangled(1))
    assert intensity_single(np.array([1, 0]), rho1, alpha1=0.8) == pytest.approx(0.4)


def test_single_current_with_maximally_mixed_rho1():
    n = 5
    rho1 = ReducedDensityMatrix(np.eye(n) / n)
    v = cvec(np.random.default_rng(1), n)
    assert intensity_single(v, rho1, 2.0) == pytest.approx(2.0 * np.vdot(v, v).real / n, rel=1e-14)


def test_pair_current_on_basis_vectors():
    state = make_pure_entangled(1)
    assert intensity_pair(np.array([1, 0]), np.array([0, 1]), state, alpha2=3.0) == pytest.approx(1.5)


def test_pair_current_known_case_against_quartic_sum():
    rng = np.random.default_rng(4)
    state = make_pure_entangled(2, [(0, 1), (2, 3)], 4)
    v, vp = cvec(rng, 4), cvec(rng, 4)
    ref = brute_force_I2(v, vp, dense_rho(state.weights, state.matrices))
    assert abs(ref.imag) < 1e-13
    assert intensity_pair(v, vp, state) == pytest.approx(ref.real, rel=1e-12)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), k=st.integers(1, 3))
@settings(max_examples=60, deadline=None)
def test_fast_path_equals_quartic_sum(seed, n, k):
    rng = np.random.default_rng(seed)
    state = random_state(rng, n, k)
    v, vp = cvec(rng, n), cvec(rng, n)
    ref = brute_force_I2(v, vp, dense_rho(state.weights, state.matrices), 1.7).real
    got = intensity_pair(v, vp, state, 1.7)
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert got >= 0


def test_currents_validate_dimension():
    state = make_pure_entangled(2)
    with pytest.raises(ValueError):
        intensity_pair(np.ones(3), np.ones(4), state)
    with pytest.raises(ValueError):
        intensity_single(np.ones(5), reduced_density(state))


def test_batched_currents_match_scalar_calls():
    rng = np.random.default_rng(7)
    state = random_state(rng, 4, 2)
    rho1 = reduced_density(state)
    V = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
    Vp = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
    batch1 = intensity_single(V, rho1)
    batch2 = intensity_pair(V, Vp, state)
    for i in range(6):
        assert batch1[i] == pytest.approx(intensity_single(V[i], rho1), rel=1e-14)
        assert batch2[i] == pytest.approx(intensity_pair(V[i], Vp[i], state), rel=1e-14)


# --- row sampling -------------------------------------------------------------------


def test_rows_are_deterministic_and_trial_specific():
    m = ScatteringModel(6, 0.5)
    a = sample_rows(m, 12, seed=3)
    b = sample_rows(m, 12, seed=3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    c = sample_rows(m, 13, seed=3)
    d = sample_rows(m, 12, seed=4)
    assert not np.array_equal(a[0], c[0])
    assert not np.array_equal(a[0], d[0])


def test_gaussian_row_moments():
    m = ScatteringModel(4, 0.3)
    # 8 entries per trial, 10^6 entries in total
    rows = np.array([np.concatenate(sample_rows(m, t, 11)) for t in range(125_000)])
    z = rows.ravel()
    n = z.size
    p = np.abs(z) ** 2
    assert abs(p.mean() - 0.3) < 3e-3 * 0.3
    se = math.sqrt(0.3 / 2 / n)
    assert abs(z.real.mean()) < 3 * se and abs(z.imag.mean()) < 3 * se
    assert z.real.var() == pytest.approx(0.15, rel=1e-2)
    assert abs(np.mean(z.real * z.imag)) < 3 * 0.15 / math.sqrt(n)


def test_unitary_rows_norm_and_orthogonality():
    m = ScatteringModel(9, 0.2)
    for t in range(20):
        v, vp = sample_rows_unitary(m, t, seed=5)
        assert np.vdot(v, v).real == pytest.approx(9 * 0.2, rel=1e-13)
        assert np.vdot(vp, vp).real == pytest.approx(9 * 0.2, rel=1e-13)
        assert abs(np.vdot(vp, v)) / (9 * 0.2) < 1e-12


def test_unitary_needs_two_modes():
    with pytest.raises(ValueError):
        sample_rows_unitary(ScatteringModel(1, 1.0), 0, 0)


def test_unitary_rows_match_qr_haar_statistics():
    """Rows from the ensemble sampler against rows of full QR Haar matrices."""
    dim, n = 5, 20_000
    m = ScatteringModel(dim, 1.0 / dim)
    ours = np.array([sample_rows_unitary(m, t, 2)[0][0] for t in range(n)])
    rng = np.random.default_rng(8)
    theirs = np.array([haar_unitary(dim, rng)[0, 0] for _ in range(n)])
    assert sps.ks_2samp(np.abs(ours) ** 2, np.abs(theirs) ** 2).pvalue > 1e-3
    # a Haar entry has |u|^2 ~ Beta(1, dim - 1)
    assert sps.kstest(np.abs(ours) ** 2, sps.beta(1, dim - 1).cdf).pvalue > 1e-3


def test_haar_unitary_is_unitary():
    u = haar_unitary(7, np.random.default_rng(0))
    np.testing.assert_allclose(u @ u.conj().T, np.eye(7), atol=1e-13)


def test_unitary_mean_single_current_large_dim():
    model = ScatteringModel(256, 1.0 / 256)
    s = run_ensemble(model, DetectorPair(0, 1), make_pure_entangled(1, dim=256), trials=100_000, seed=1, ensemble="unitary")
    assert abs(stats.mean(s, "I1").value / model.sigma2 - 1) < 0.01


# --- ensembles ----------------------------------------------------------------------


def test_single_trial_is_reproducible():
    model = ScatteringModel(4, 1.0)
    a = run_ensemble(model, DetectorPair(0, 1), make_pure_entangled(2), trials=1, seed=42)
    b = run_ensemble(model, DetectorPair(0, 1), make_pure_entangled(2), trials=1, seed=42)
    assert a.count == 1
    np.testing.assert_array_equal(a.raw_values, b.raw_values)


@pytest.mark.parametrize("ensemble", ["gaussian", "unitary"])
def test_ensemble_samples_match_per_trial_evaluation(ensemble):
    rng = np.random.default_rng(2)
    state = random_state(rng, 5, 3)
    model = ScatteringModel(5, 0.7)
    eff = Efficiencies(1.3, 0.6)
    s = run_ensemble(model, DetectorPair(1, 2), state, eff, trials=BLOCK_SIZE + 50, seed=9, ensemble=ensemble)
    for t in (0, 1, BLOCK_SIZE - 1, BLOCK_SIZE, BLOCK_SIZE + 49):
        one = speckle_sample(model, state, eff, t, 9, ensemble)
        assert s.raw("I1")[t] == pytest.approx(one.I1, rel=1e-12)
        assert s.raw("I2")[t] == pytest.approx(one.I2, rel=1e-12)


def test_worker_count_does_not_change_results():
    model = ScatteringModel(6, 1.0)
    state = make_fully_mixed(3)
    runs = [
        run_ensemble(model, DetectorPair(0, 1), state, trials=3 * BLOCK_SIZE + 17, seed=5, workers=w)
        for w in (1, 2, 3)
    ]
    for r in runs[1:]:
        np.testing.assert_array_equal(r.sums, runs[0].sums)
        np.testing.assert_array_equal(r.raw_values, runs[0].raw_values)
        for ch in stats.CHANNELS:
            np.testing.assert_array_equal(r.histograms[ch].counts, runs[0].histograms[ch].counts)


def test_ensembles_use_separate_streams():
    model = ScatteringModel(4, 1.0)
    g = run_ensemble(model, DetectorPair(0, 1), make_pure_entangled(2), trials=10, seed=1)
    u = run_ensemble(model, DetectorPair(0, 1), make_pure_entangled(2), trials=10, seed=1, ensemble="unitary")
    assert not np.array_equal(g.raw_values, u.raw_values)


def test_raw_retention_is_thinned_beyond_cap():
    model = ScatteringModel(2, 1.0)
    s = run_ensemble(model, DetectorPair(0, 1), make_pure_entangled(1), trials=1000, seed=0, raw_cap=300)
    assert s.count == 1000
    np.testing.assert_array_equal(s.raw_trial_ids, np.arange(0, 1000, 4))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"trials": 0},
        {"ensemble": "poisson"},
        {"seed": -1},
    ],
)
def test_run_ensemble_rejects_bad_arguments(kwargs):
    args = {"trials": 10, "seed": 0}
    args.update(kwargs)
    with pytest.raises(ValueError):
        run_ensemble(ScatteringModel(2, 1.0), DetectorPair(0, 1), make_pure_entangled(1), **args)


def test_run_ensemble_checks_dimensions():
    with pytest.raises(ValueError):
        run_ensemble(ScatteringModel(3, 1.0), DetectorPair(0, 1), make_pure_entangled(1), trials=5)
    with pytest.raises(ValueError):
        run_ensemble(ScatteringModel(2, 1.0), DetectorPair(0, 2), make_pure_entangled(1), trials=5)


def test_currents_are_nonnegative():
    rng = np.random.default_rng(11)
    state = make_general_pure(rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))
    s = run_ensemble(ScatteringModel(6, 2.0), DetectorPair(0, 5), state, trials=20_000, seed=3)
    assert s.raw("I1").min() >= 0 and s.raw("I2").min() >= 0


@pytest.mark.slow
def test_pure_five_single_visibility():
    s = run_ensemble(ScatteringModel(10, 1.0), DetectorPair(0, 1), make_pure_entangled(5), trials=1_000_000, seed=21)
    assert stats.visibility(s, "I1").within(0.1)
    assert stats.mean(s, "I1").within(1.0)
    assert abs(stats.mean(s, "I1").value - 1.0) < 0.005


@pytest.mark.slow
def test_mixed_five_pair_visibility():
    s = run_ensemble(ScatteringModel(10, 1.0), DetectorPair(0, 1), make_fully_mixed(5), trials=1_000_000, seed=22)
    assert stats.visibility(s, "I2").within(0.4)
    assert abs(stats.mean(s, "I2").value - 1.0) < 0.01
