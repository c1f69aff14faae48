import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from onebit_mimo.anm_solver import SolverState, toeplitz
from onebit_mimo.scene import doppler_vector, wrap_freq
from onebit_mimo.spectral import (DecompositionError, FrequencyEstimate, TargetEstimate,
                                  atom_matrix, estimate_amplitudes, estimate_model_order,
                                  estimate_rows, extract_targets, numerical_rank,
                                  pair_frequencies, read_estimates_csv, reconstruct_toeplitz,
                                  vandermonde_atoms, vandermonde_decompose,
                                  write_estimates_csv)
from conftest import crandn


def toeplitz_from(freqs, powers, n):
    W = vandermonde_atoms(freqs, n)
    return (W * np.asarray(powers)) @ W.conj().T


def spaced_freqs(rng, K, sep):
    # K frequencies on the circle with wrapped pairwise distance >= sep
    while True:
        f = np.sort(rng.uniform(-0.5, 0.5, K))
        gaps = np.diff(np.r_[f, f[0] + 1])
        if K == 1 or gaps.min() >= sep:
            return f


def doppler_vector_matrix(ndf, Q):
    return np.stack([doppler_vector(v, Q) for v in np.atleast_1d(ndf)], axis=1)


def synth_X(nsf, ndf, beta, MN, Q):
    C = vandermonde_atoms(nsf, MN)
    D = doppler_vector_matrix(ndf, Q)
    return (C * beta) @ D.conj().T


def test_atom_matches_outer_product():
    A = atom_matrix([(0.12, -0.3)], 4, 3)
    c = vandermonde_atoms(0.12, 4)[:, 0]
    d = doppler_vector(-0.3, 3)
    np.testing.assert_allclose(A[:, 0], np.outer(c, d.conj()).ravel())


def test_decompose_rejects_flat_full_rank():
    with pytest.raises(DecompositionError):
        vandermonde_decompose(3.0 * np.eye(5))


def test_decompose_rejects_non_psd():
    with pytest.raises(DecompositionError):
        vandermonde_decompose(toeplitz([1.0, 2.0, 0.0]), 1)


def test_decompose_two_frequency_example():
    T = toeplitz_from([0.1, -0.3], [1, 2], 8)
    est = vandermonde_decompose(T, 2)
    np.testing.assert_allclose(est.freqs, [-0.3, 0.1], atol=1e-8)
    np.testing.assert_allclose(est.powers, [2, 1], atol=1e-6)
    assert not est.rank_flag


def test_decompose_all_ones():
    est = vandermonde_decompose(np.ones((6, 6)))
    assert est.freqs.shape == (1,)
    assert abs(est.freqs[0]) < 1e-12 and est.powers[0] == pytest.approx(1, abs=1e-12)


def test_decompose_rank_hint_errors(caplog):
    T = toeplitz_from([0.2], [1], 5)
    with pytest.raises(ValueError):
        vandermonde_decompose(T, 5)
    assert vandermonde_decompose(T, 2).rank_flag
    assert "exceeds numerical rank" in caplog.text


def test_frequency_estimate_sorted():
    est = FrequencyEstimate([0.3, -0.1, 0.0], [1, 2, 3])
    np.testing.assert_array_equal(est.freqs, [-0.1, 0.0, 0.3])
    np.testing.assert_array_equal(est.powers, [2, 3, 1])


@given(st.integers(1, 4), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_decompose_roundtrip(K, extra, seed):
    rng = np.random.default_rng(seed)
    n = 2 * K + 2 + extra
    f = spaced_freqs(rng, K, 1.0 / n)
    p = rng.uniform(0.2, 2, K)
    T = toeplitz_from(f, p, n)
    est = vandermonde_decompose(T, K)
    np.testing.assert_allclose(est.freqs, f, atol=1e-7)
    np.testing.assert_allclose(est.powers, p, rtol=1e-5)
    err = np.linalg.norm(reconstruct_toeplitz(est, n) - T) / np.linalg.norm(T)
    assert err <= 1e-6
    assert numerical_rank(T) == K


def test_model_order_examples():
    assert estimate_model_order([1, 0, 0, 0], 10) == 1
    assert estimate_model_order([1, 1, 1, 1], 40) == 4
    assert estimate_model_order([], 10) == 0
    assert estimate_model_order([0, 0, 0], 10) == 0
    # 0.5 + 10/50 = 0.7 is hit by the second of [0.6, 0.1, ...]
    assert estimate_model_order([0.6, 0.1, 0.2, 0.1], 10) == 2


@given(st.lists(st.floats(0, 10), min_size=1, max_size=12), st.floats(-20, 40))
def test_model_order_monotone_under_zero_append(d, snr):
    d = sorted(d, reverse=True)
    assert estimate_model_order(d + [0.0], snr) == estimate_model_order(d, snr)
    assert 0 <= estimate_model_order(d, snr) <= len(d)


def test_pair_single():
    rng = np.random.default_rng(0)
    X = crandn(rng, 6, 5)
    est = pair_frequencies([0.11], [-0.2], X)
    c = vandermonde_atoms(0.11, 6)[:, 0]
    d = doppler_vector(-0.2, 5)
    expected = np.sum(np.outer(c, d.conj()).conj() * X) / 30
    assert est.K == 1
    assert est.beta[0] == pytest.approx(expected, abs=1e-12)


def test_pair_two_separated():
    X = synth_X([0.1, -0.25], [0.3, -0.05], np.array([1 + 1j, 0.5]), 8, 10)
    est = pair_frequencies([-0.25, 0.1], [0.3, -0.05], X)
    assert est.pairs[0][:2] == (-0.25, -0.05) and est.pairs[1][:2] == (0.1, 0.3)
    np.testing.assert_allclose(est.beta, [0.5, 1 + 1j], atol=1e-6)


def test_pair_shared_spatial_frequency():
    nsf = np.array([-0.1545, 0.0567, 0.3036, 0.3036])
    ndf = np.array([0.4007, 0.1381, -0.2268, -0.4330])
    beta = np.array([1, 0.8j, -0.7, 0.6 + 0.3j])
    X = synth_X(nsf, ndf, beta, 36, 36)
    # the decomposition delivers the shared value twice
    est = pair_frequencies(nsf, ndf[[2, 0, 3, 1]], X)
    got = sorted(zip(est.nsf.round(6), est.ndf.round(6)))
    assert got == sorted(zip(nsf, ndf))
    # and also when it is delivered once
    est = pair_frequencies(nsf[:3], ndf, X, K=4)
    assert sorted(zip(est.nsf.round(6), est.ndf.round(6))) == sorted(zip(nsf, ndf))


def test_pairing_100_trials():
    rng = np.random.default_rng(7)
    MN, Q = 12, 10
    for _ in range(100):
        K = rng.integers(1, 5)
        f = spaced_freqs(rng, K, 1.5 / MN)
        v = rng.permutation(spaced_freqs(rng, K, 1.5 / Q))
        beta = rng.uniform(0.5, 1.5, K) * np.exp(2j * np.pi * rng.random(K))
        X = synth_X(f, v, beta, MN, Q)
        est = pair_frequencies(rng.permutation(f), rng.permutation(v), X)
        truth = dict(zip(f.round(12), v.round(12)))
        assert dict(zip(est.nsf.round(12), est.ndf.round(12))) == truth
        order = np.argsort(f)
        np.testing.assert_allclose(est.beta, beta[order], atol=1e-8)


def test_amplitude_examples():
    assert estimate_amplitudes([], np.zeros((4, 3))).shape == (0,)
    atom = atom_matrix([(0.2, 0.1)], 4, 3)[:, 0].reshape(4, 3)
    assert estimate_amplitudes([(0.2, 0.1)], 2j * atom)[0] == pytest.approx(2j, abs=1e-12)
    beta = np.array([0.3 - 1j, 2.0])
    X = synth_X([0.0, 0.4], [0.2, -0.2], beta, 5, 6)
    np.testing.assert_allclose(estimate_amplitudes([(0.0, 0.2), (0.4, -0.2)], X), beta, atol=1e-8)


def test_amplitudes_ill_conditioned(caplog):
    import logging
    caplog.set_level(logging.INFO)
    X = synth_X([0.1], [0.2], np.array([1.0]), 4, 4)
    b = estimate_amplitudes([(0.1, 0.2), (0.1, 0.2)], X)
    assert np.isfinite(b).all() and b.sum() == pytest.approx(1, abs=1e-6)
    assert "ridge" in caplog.text


def test_extract_targets_from_exact_state():
    nsf = np.array([0.12, -0.31])
    ndf = np.array([-0.2, 0.27])
    beta = np.array([1.0, 0.7j])
    MN, Q = 8, 6
    X = synth_X(nsf, ndf, beta, MN, Q)
    C = vandermonde_atoms(nsf, MN)
    D = doppler_vector_matrix(ndf, Q)
    u1 = (C * np.abs(beta)) @ C.conj().T
    u2 = (D * np.abs(beta)) @ D.conj().T
    H = np.block([[u1, X], [X.conj().T, u2]])
    st_ = SolverState(X=X, u1=u1[0], u2=u2[0], p=None, b=None, H=H, Lam=None)
    for K in (2, None):
        est = extract_targets(st_, K=K)
        assert est.K == 2
        order = np.argsort(nsf)
        np.testing.assert_allclose(est.nsf, nsf[order], atol=1e-8)
        np.testing.assert_allclose(est.ndf, wrap_freq(ndf[order]), atol=1e-8)
        np.testing.assert_allclose(est.beta, beta[order], atol=1e-6)


def test_estimates_csv_roundtrip(tmp_path):
    est = TargetEstimate(np.array([0.1, -0.2]), np.array([0.3, 0.0]), np.array([1j, 0.5]))
    path = tmp_path / "e.csv"
    write_estimates_csv(path, estimate_rows(3, est))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["trial", "k", "nsf_hat", "ndf_hat", "mag_hat", "phase_hat"]
    back = read_estimates_csv(path)[3]
    np.testing.assert_allclose(back.nsf, est.nsf)
    np.testing.assert_allclose(back.beta, est.beta, atol=1e-11)
