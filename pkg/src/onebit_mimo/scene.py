"""Radar scenes, steering vectors, the low-rank data matrix and waveforms.

Index conventions used throughout the package:

* the virtual array index is ``p = (m-1)*N + (n-1)`` (transmit-major), so
  ``c = kron(a, b)`` has entries ``exp(j*2*pi*p*nsf)``;
* pulses, antennas and samples are 0-based;
* ``X`` has shape ``(M*N, Q)`` and column ``q`` carries the phase
  ``exp(j*2*pi*q*ndf)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class RadarConfig:
    """Array geometry and compression sizes.

    ``M``/``N`` transmit/receive antennas, ``Q`` pulses per CPI, ``L``
    samples per PRI, ``T``/``R`` antennas kept per pulse and ``P`` pulses
    kept per CPI.
    """

    M: int
    N: int
    Q: int
    L: int
    T: int | None = None
    R: int | None = None
    P: int | None = None

    def __post_init__(self):
        # None means "no compression" along that axis
        for name, full in (("T", self.M), ("R", self.N), ("P", self.Q)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, full)
        for name in ("M", "N", "Q", "L", "T", "R", "P"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.T > self.M:
            raise ValueError(f"T={self.T} exceeds M={self.M}")
        if self.R > self.N:
            raise ValueError(f"R={self.R} exceeds N={self.N}")
        if self.P > self.Q:
            raise ValueError(f"P={self.P} exceeds Q={self.Q}")

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def LR(self) -> int:
        return self.L * self.R


@dataclass(frozen=True)
class Target:
    nsf: float
    ndf: float
    mag: float = 1.0
    phase: float = 0.0

    @property
    def beta(self) -> complex:
        return self.mag * np.exp(1j * self.phase)


@dataclass
class TargetScene:
    targets: list[Target] = field(default_factory=list)
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        pairs = {(t.nsf, t.ndf) for t in self.targets}
        if len(pairs) != len(self.targets):
            raise ValueError("targets must have distinct (nsf, ndf) pairs")

    @property
    def K(self) -> int:
        return len(self.targets)

    @property
    def nsf(self) -> np.ndarray:
        return np.array([t.nsf for t in self.targets], dtype=float)

    @property
    def ndf(self) -> np.ndarray:
        return np.array([t.ndf for t in self.targets], dtype=float)

    @property
    def mag(self) -> np.ndarray:
        return np.array([t.mag for t in self.targets], dtype=float)

    @property
    def phase(self) -> np.ndarray:
        return np.array([t.phase for t in self.targets], dtype=float)

    @property
    def beta(self) -> np.ndarray:
        return self.mag * np.exp(1j * self.phase)

    def with_sigma(self, sigma: float) -> "TargetScene":
        return TargetScene(list(self.targets), sigma)


def snr_to_sigma(snr_db: float) -> float:
    """Noise std for unit-magnitude targets: ``sigma = 10**(-SNR/20)``."""
    return float(10.0 ** (-snr_db / 20.0))


def sigma_to_snr(sigma: float) -> float:
    return float(-20.0 * np.log10(sigma)) if sigma > 0 else float("inf")


def wrap_freq(f):
    """Map normalized frequencies into (-1/2, 1/2]."""
    w = np.asarray(f, dtype=float) - np.ceil(np.asarray(f, dtype=float) - 0.5)
    return w if np.ndim(w) else float(w)


def steering_vectors(nsf: float, config: RadarConfig):
    """Transmit, receive and virtual-array steering vectors ``(a, b, c)``."""
    a = np.exp(2j * np.pi * config.N * np.arange(config.M) * nsf)
    b = np.exp(2j * np.pi * np.arange(config.N) * nsf)
    return a, b, np.kron(a, b)


def doppler_vector(ndf: float, Q: int) -> np.ndarray:
    """``d(ndf)`` with entries ``exp(-j*2*pi*q*ndf)``, so ``d^H`` is the pulse phase row."""
    return np.exp(-2j * np.pi * np.arange(Q) * ndf)


def build_ground_truth(scene: TargetScene, config: RadarConfig) -> np.ndarray:
    """``X = sum_k beta_k c(nsf_k) d(ndf_k)^H`` of shape ``(MN, Q)``."""
    if scene.K == 0:
        return np.zeros((config.MN, config.Q), dtype=complex)
    p = np.arange(config.MN)
    q = np.arange(config.Q)
    C = np.exp(2j * np.pi * np.outer(p, scene.nsf))
    Dh = np.exp(2j * np.pi * np.outer(scene.ndf, q))
    return (C * scene.beta) @ Dh


def generate_waveforms(M: int, L: int, seed) -> np.ndarray:
    """Random complex waveforms with exactly orthonormal rows, ``S S^H = I_M``."""
    if L < M:
        raise ValueError(f"need L >= M for orthonormal waveforms, got L={L}, M={M}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((L, M)) + 1j * rng.standard_normal((L, M))
    Qm, Rm = np.linalg.qr(G)
    # fix the column phases so the factorization is unique given the draw
    ph = np.diag(Rm) / np.abs(np.diag(Rm))
    # columns of Qm are orthonormal, so its transpose has orthonormal rows
    return (Qm * ph).T


def simulate_received(X, masks, S, sigma: float, seed) -> np.ndarray:
    """Noisy unquantized measurements ``y_q = F_q(X) + w_q`` for the kept pulses.

    Returns an array of shape ``(P, L*R)``; row ``i`` belongs to pulse
    ``masks.pulses[i]``. Noise is circular ``CN(0, sigma^2)``.
    """
    from .sampling import apply_F_all

    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    clean = apply_F_all(X, masks, S)
    if sigma == 0:
        return clean
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    return clean + (sigma / np.sqrt(2.0)) * w


# -- scene files -------------------------------------------------------------

_SCENE_KEYS = ("M", "N", "Q", "L", "T", "R", "P")


def scene_from_dict(d: dict):
    """Parse the scene JSON layout into ``(RadarConfig, TargetScene)``.

    Raises ``KeyError``/``ValueError`` naming the offending field.
    """
    if not isinstance(d, dict):
        raise ValueError("scene: expected a JSON object")
    for k in ("M", "N", "Q", "L"):
        if k not in d:
            raise KeyError(k)
    cfg_args = {}
    for k in _SCENE_KEYS:
        if k in d and d[k] is not None:
            v = d[k]
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ValueError(f"field {k!r} must be an integer")
            cfg_args[k] = v
    try:
        config = RadarConfig(**cfg_args)
    except ValueError as exc:
        raise ValueError(f"radar config: {exc}") from None
    targets = []
    for i, t in enumerate(d.get("targets", [])):
        try:
            targets.append(Target(float(t["nsf"]), float(t["ndf"]),
                                  float(t.get("mag", 1.0)), float(t.get("phase", 0.0))))
        except KeyError as exc:
            raise KeyError(f"targets[{i}].{exc.args[0]}") from None
        except (TypeError, ValueError):
            raise ValueError(f"field 'targets[{i}]' is malformed") from None
    sigma = d.get("sigma", 0.0)
    if not isinstance(sigma, (int, float)) or sigma < 0:
        raise ValueError("field 'sigma' must be a nonnegative number")
    return config, TargetScene(targets, float(sigma))


def scene_to_dict(config: RadarConfig, scene: TargetScene) -> dict:
    d = {k: v for k, v in asdict(config).items()}
    d["targets"] = [{"nsf": t.nsf, "ndf": t.ndf, "mag": t.mag, "phase": t.phase}
                    for t in scene.targets]
    d["sigma"] = scene.sigma
    return d


def load_scene(path):
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(path, config: RadarConfig, scene: TargetScene):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(config, scene), fh, indent=2)


# targets from the four-target experiment
REFERENCE_TARGETS = ((-0.1594, 0.3805), (-0.4480, 0.1274),
                 (0.3036, -0.2268), (0.3036, -0.4330))


def reference_scene(sigma: float = 0.0, seed=None) -> TargetScene:
    """Four unit-magnitude targets with phases drawn uniformly on [0, 2*pi)."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, len(REFERENCE_TARGETS))
    return TargetScene([Target(f, v, 1.0, float(ph))
                        for (f, v), ph in zip(REFERENCE_TARGETS, phases)], sigma)


def random_scene(K: int, seed, sigma: float = 0.0, min_sep=(0.0, 0.0),
                 mag_range=(1.0, 1.0), max_tries: int = 1000) -> TargetScene:
    """Random targets with optional minimum wrapped separation in each axis."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        f = rng.uniform(-0.5, 0.5, K)
        v = rng.uniform(-0.5, 0.5, K)
        if K > 1:
            df = np.abs(wrap_freq(f[:, None] - f[None, :]))
            dv = np.abs(wrap_freq(v[:, None] - v[None, :]))
            off = ~np.eye(K, dtype=bool)
            if (df[off] < min_sep[0]).any() or (dv[off] < min_sep[1]).any():
                continue
        mags = rng.uniform(mag_range[0], mag_range[1], K)
        phases = rng.uniform(0, 2 * np.pi, K)
        return TargetScene([Target(float(a), float(b), float(m), float(p))
                            for a, b, m, p in zip(f, v, mags, phases)], sigma)
    raise RuntimeError("could not place targets with the requested separation")
