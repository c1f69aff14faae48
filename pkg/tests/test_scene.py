import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from onebit_mimo.sampling import MaskSet
from onebit_mimo.scene import (REFERENCE_TARGETS, RadarConfig, Target, TargetScene,
                               build_ground_truth, doppler_vector, generate_waveforms,
                               load_scene, reference_scene, random_scene, save_scene,
                               scene_from_dict, sigma_to_snr, simulate_received,
                               snr_to_sigma, steering_vectors, wrap_freq)

freq = st.floats(-0.5, 0.5, allow_nan=False)


def test_config_defaults_and_validation():
    c = RadarConfig(6, 6, 36, 64, T=4, R=5, P=20)
    assert (c.MN, c.LR) == (36, 320)
    full = RadarConfig(2, 3, 4, 5)
    assert (full.T, full.R, full.P) == (2, 3, 4)
    for bad in (dict(T=7), dict(R=7), dict(P=40)):
        with pytest.raises(ValueError):
            RadarConfig(6, 6, 36, 64, **bad)
    with pytest.raises(ValueError):
        RadarConfig(0, 1, 1, 1)


def test_steering_examples():
    a, b, c = steering_vectors(0.0, RadarConfig(2, 2, 1, 2))
    np.testing.assert_allclose(c, np.ones(4))
    _, b, _ = steering_vectors(0.25, RadarConfig(1, 2, 1, 1))
    np.testing.assert_allclose(b, [1, 1j], atol=1e-15)
    a, b, c = steering_vectors(0.1, RadarConfig(3, 3, 1, 3))
    np.testing.assert_allclose(c, np.kron(a, b), atol=1e-14)
    np.testing.assert_allclose(c, np.exp(2j * np.pi * 0.1 * np.arange(9)), atol=1e-14)


def test_doppler_examples():
    np.testing.assert_allclose(doppler_vector(0.0, 5), np.ones(5))
    np.testing.assert_allclose(doppler_vector(0.5, 4), [1, -1, 1, -1], atol=1e-15)
    np.testing.assert_allclose(doppler_vector(0.125, 3),
                               [1, np.exp(-1j * np.pi / 4), np.exp(-1j * np.pi / 2)], atol=1e-15)


@given(freq, freq)
def test_unit_modulus(f, v):
    a, b, c = steering_vectors(f, RadarConfig(3, 4, 5, 4))
    for x in (a, b, c, doppler_vector(v, 7)):
        np.testing.assert_allclose(np.abs(x), 1.0, atol=1e-12)


def test_ground_truth_examples():
    cfg = RadarConfig(3, 3, 4, 3)
    assert not build_ground_truth(TargetScene([]), cfg).any()
    np.testing.assert_allclose(build_ground_truth(TargetScene([Target(0, 0)]), cfg), np.ones((9, 4)))
    sc = random_scene(2, 1)
    s = np.linalg.svd(build_ground_truth(sc, cfg), compute_uv=False)
    assert s[1] > 1e-3 and s[2] < 1e-10


def test_ground_truth_matches_outer_products():
    cfg = RadarConfig(2, 3, 5, 2)
    sc = random_scene(3, 4, mag_range=(0.5, 2))
    X = sum(t.beta * np.outer(steering_vectors(t.nsf, cfg)[2], doppler_vector(t.ndf, 5).conj())
            for t in sc.targets)
    np.testing.assert_allclose(build_ground_truth(sc, cfg), X, atol=1e-12)


@given(st.integers(1, 4), st.integers(0, 1000), st.complex_numbers(max_magnitude=5, allow_nan=False,
                                                                  allow_infinity=False))
def test_ground_truth_linear_and_low_rank(K, seed, alpha):
    cfg = RadarConfig(3, 3, 8, 3)
    sc = random_scene(K, seed, min_sep=(0.05, 0.05))
    X = build_ground_truth(sc, cfg)
    scaled = TargetScene([Target(t.nsf, t.ndf, abs(alpha) * t.mag, t.phase + np.angle(alpha))
                          for t in sc.targets])
    np.testing.assert_allclose(build_ground_truth(scaled, cfg), alpha * X, atol=1e-10)
    s = np.linalg.svd(X, compute_uv=False)
    if K < len(s):
        assert s[K] < 1e-9 * s[0]


def test_scene_rejects_duplicates_and_negative_sigma():
    with pytest.raises(ValueError):
        TargetScene([Target(0.1, 0.2), Target(0.1, 0.2)])
    with pytest.raises(ValueError):
        TargetScene([], sigma=-1)


def test_waveforms():
    S = generate_waveforms(1, 1, 0)
    assert S.shape == (1, 1) and abs(abs(S[0, 0]) - 1) < 1e-14
    S = generate_waveforms(4, 64, 3)
    assert np.linalg.norm(S @ S.conj().T - np.eye(4)) <= 1e-12
    S1, S2 = generate_waveforms(6, 64, 1), generate_waveforms(6, 64, 2)
    assert not np.allclose(S1, S2)
    for S in (S1, S2):
        assert np.linalg.norm(S @ S.conj().T - np.eye(6)) <= 1e-12
    np.testing.assert_array_equal(generate_waveforms(6, 64, 1), S1)
    with pytest.raises(ValueError):
        generate_waveforms(4, 3, 0)


def _eq5(scene, cfg, S, q):
    # Y_q = B diag(beta) Delta_q A^T S, with columns of A, B the steering vectors
    A = np.stack([steering_vectors(f, cfg)[0] for f in scene.nsf], axis=1)
    B = np.stack([steering_vectors(f, cfg)[1] for f in scene.nsf], axis=1)
    D = np.diag(scene.beta * np.exp(2j * np.pi * q * scene.ndf))
    return (B @ D @ A.T @ S).reshape(-1, order="F")


def test_simulate_matches_direct_product():
    cfg = RadarConfig(3, 4, 6, 8)
    masks = MaskSet.full(cfg)
    S = generate_waveforms(3, 8, 5)
    for K in (1, 3):
        sc = random_scene(K, 10 + K)
        y = simulate_received(build_ground_truth(sc, cfg), masks, S, 0.0, 0)
        ref = np.stack([_eq5(sc, cfg, S, q) for q in range(6)])
        assert np.linalg.norm(y - ref) <= 1e-10 * np.linalg.norm(ref)


def test_noise_variance():
    cfg = RadarConfig(2, 2, 2, 50)
    masks = MaskSet.full(cfg)
    S = generate_waveforms(2, 50, 0)
    y = simulate_received(np.zeros((4, 2)), masks, S, 1.0, 7)
    assert y.size >= 100
    many = np.concatenate([simulate_received(np.zeros((4, 2)), masks, S, 1.0, s).ravel()
                           for s in range(50)])
    assert many.size >= 10**4
    assert abs(np.var(many.real) - 0.5) < 0.03 * 0.5
    assert abs(np.var(many.imag) - 0.5) < 0.03 * 0.5
    np.testing.assert_array_equal(simulate_received(np.zeros((4, 2)), masks, S, 1.0, 7), y)


def test_snr_convention():
    assert snr_to_sigma(20) == pytest.approx(0.1)
    assert sigma_to_snr(0.01) == pytest.approx(40)
    assert sigma_to_snr(0) == np.inf


@given(st.floats(-10, 10, allow_nan=False))
def test_wrap_freq_range(f):
    w = wrap_freq(f)
    assert -0.5 < w <= 0.5
    assert abs(np.exp(2j * np.pi * w) - np.exp(2j * np.pi * f)) < 1e-9


def test_scene_json_roundtrip(tmp_path):
    cfg = RadarConfig(4, 4, 16, 64, 3, 3, 8)
    sc = reference_scene(0.1, seed=3)
    path = tmp_path / "s.json"
    save_scene(path, cfg, sc)
    cfg2, sc2 = load_scene(path)
    assert cfg2 == cfg and sc2.sigma == 0.1
    np.testing.assert_allclose(sc2.beta, sc.beta)
    assert [(t.nsf, t.ndf) for t in sc2.targets] == list(REFERENCE_TARGETS)


@pytest.mark.parametrize("d, field", [
    ({"N": 1, "Q": 1, "L": 1}, "M"),
    ({"M": 1, "N": 1, "Q": 1, "L": 1, "targets": [{"nsf": 0.1}]}, "targets[0].ndf"),
    ({"M": "x", "N": 1, "Q": 1, "L": 1}, "M"),
    ({"M": 1, "N": 1, "Q": 1, "L": 1, "sigma": -2}, "sigma"),
])
def test_scene_errors_name_field(d, field):
    with pytest.raises((KeyError, ValueError)) as exc:
        scene_from_dict(d)
    assert field in str(exc.value)


def test_random_scene_separation():
    sc = random_scene(4, 9, min_sep=(0.1, 0.1))
    df = np.abs(wrap_freq(sc.nsf[:, None] - sc.nsf[None, :]))
    off = ~np.eye(4, dtype=bool)
    assert df[off].min() >= 0.1
    json.dumps([t.__dict__ for t in sc.targets])
