"""Compressive masks, the per-pulse measurement operator and one-bit sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .scene import RadarConfig


@dataclass(frozen=True)
class MaskSet:
    """Antenna/pulse selections.

    ``pulses`` holds the kept pulse indices (sorted, 0-based, always
    containing ``0`` and ``Q-1``); row ``i`` of ``tx``/``rx`` holds the
    antennas used during pulse ``pulses[i]``.
    """

    config: RadarConfig
    pulses: np.ndarray
    tx: np.ndarray
    rx: np.ndarray

    def __post_init__(self):
        c = self.config
        pulses = np.asarray(self.pulses, dtype=int)
        tx = np.atleast_2d(np.asarray(self.tx, dtype=int))
        rx = np.atleast_2d(np.asarray(self.rx, dtype=int))
        if pulses.ndim != 1 or len(np.unique(pulses)) != len(pulses):
            raise ValueError("pulses must be distinct indices")
        if tx.shape[0] != len(pulses) or rx.shape[0] != len(pulses):
            raise ValueError("need one tx/rx mask row per kept pulse")
        if pulses.min() < 0 or pulses.max() >= c.Q:
            raise ValueError("pulse index out of range")
        if tx.min() < 0 or tx.max() >= c.M or rx.min() < 0 or rx.max() >= c.N:
            raise ValueError("antenna index out of range")
        for rows in (tx, rx):
            for r in rows:
                if len(np.unique(r)) != len(r):
                    raise ValueError("duplicate antenna in a mask")
        order = np.argsort(pulses)
        object.__setattr__(self, "pulses", pulses[order])
        object.__setattr__(self, "tx", np.sort(tx[order], axis=1))
        object.__setattr__(self, "rx", np.sort(rx[order], axis=1))

    @property
    def P(self) -> int:
        return len(self.pulses)

    @property
    def LR(self) -> int:
        return self.config.L * self.rx.shape[1]

    def slot(self, q: int) -> int:
        """Row index of pulse ``q``; raises if ``q`` was not kept."""
        hit = np.flatnonzero(self.pulses == q)
        if hit.size == 0:
            raise ValueError(f"pulse {q} is not in the kept pulse set")
        return int(hit[0])

    @classmethod
    def full(cls, config: RadarConfig) -> "MaskSet":
        Q = config.Q
        return cls(config, np.arange(Q),
                   np.tile(np.arange(config.M), (Q, 1)),
                   np.tile(np.arange(config.N), (Q, 1)))


def draw_masks(config: RadarConfig, seed) -> MaskSet:
    """Uniform random antenna subsets per pulse and a pulse subset holding 0 and Q-1."""
    if config.P < 2:
        raise ValueError("P must be at least 2 so the first and last pulses are kept")
    rng = np.random.default_rng(seed)
    Q = config.Q
    if config.P == Q:
        pulses = np.arange(Q)
    else:
        middle = rng.choice(np.arange(1, Q - 1), size=config.P - 2, replace=False)
        pulses = np.sort(np.concatenate([[0, Q - 1], middle]))

    def pick(n, k):
        if k == n:
            return np.arange(n)
        return np.sort(rng.choice(n, size=k, replace=False))

    tx = np.array([pick(config.M, config.T) for _ in pulses])
    rx = np.array([pick(config.N, config.R) for _ in pulses])
    return MaskSet(config, pulses, tx, rx)


# -- measurement operator ----------------------------------------------------

def _column_matrix(x, config):
    # vec(.) stacks columns: virtual index p = n + m*N
    return np.reshape(x, (config.N, config.M), order="F")


def apply_F(X, q: int, masks: MaskSet, S) -> np.ndarray:
    """``F_q(X) = M_q X e_q`` without forming ``M_q``.

    ``M_q = (S_q^T G_t) kron G_r`` with ``G_t``/``G_r`` the row selections
    and ``S_q`` the kept waveform rows. Output length is ``L*R``.
    """
    i = masks.slot(q)
    return _apply_slot(np.asarray(X)[:, q], i, masks, S)


def _apply_slot(x, i, masks, S):
    c = masks.config
    if x.shape[0] != c.MN or S.shape != (c.M, c.L):
        raise ValueError("dimension mismatch between X, masks and S")
    tx, rx = masks.tx[i], masks.rx[i]
    Y = _column_matrix(x, c)[np.ix_(rx, tx)] @ S[tx]
    return Y.reshape(-1, order="F")


def apply_F_all(X, masks: MaskSet, S) -> np.ndarray:
    """Stack ``F_q(X)`` over kept pulses into shape ``(P, L*R)``."""
    X = np.asarray(X)
    c = masks.config
    if X.shape != (c.MN, c.Q):
        raise ValueError(f"X must have shape {(c.MN, c.Q)}, got {X.shape}")
    return np.stack([_apply_slot(X[:, q], i, masks, S) for i, q in enumerate(masks.pulses)])


def apply_F_adjoint(v, q: int, masks: MaskSet, S) -> np.ndarray:
    """``M_q^H v`` for a length ``L*R`` vector; output length ``MN``."""
    return _adjoint_slot(np.asarray(v), masks.slot(q), masks, S)


def _adjoint_slot(v, i, masks, S):
    c = masks.config
    tx, rx = masks.tx[i], masks.rx[i]
    if v.shape[0] != c.L * len(rx):
        raise ValueError("dimension mismatch in adjoint")
    V = v.reshape(len(rx), c.L, order="F")
    out = np.zeros((c.N, c.M), dtype=complex)
    out[np.ix_(rx, tx)] = V @ S[tx].conj().T
    return out.reshape(-1, order="F")


def apply_F_adjoint_all(V, masks: MaskSet, S) -> np.ndarray:
    """Adjoints of every row of ``V``; returns ``(MN, P)``."""
    return np.stack([_adjoint_slot(V[i], i, masks, S) for i in range(masks.P)], axis=1)


def dense_operator(q: int, masks: MaskSet, S) -> np.ndarray:
    """Explicit ``M_q`` of shape ``(L*R, MN)``. For checks and small problems only."""
    c = masks.config
    i = masks.slot(q)
    Gt = np.eye(c.M)[masks.tx[i]]
    Gr = np.eye(c.N)[masks.rx[i]]
    St = Gt @ S
    return np.kron(St.T @ Gt, Gr)


def gram_matrices(masks: MaskSet, S) -> np.ndarray:
    """``M_q^H M_q`` for every kept pulse, shape ``(P, MN, MN)``."""
    c = masks.config
    out = np.empty((masks.P, c.MN, c.MN), dtype=complex)
    for i in range(masks.P):
        tx, rx = masks.tx[i], masks.rx[i]
        Gt = np.zeros((c.M, c.M), dtype=complex)
        Gt[np.ix_(tx, tx)] = (S[tx] @ S[tx].conj().T).conj()
        Gr = np.zeros((c.N, c.N))
        Gr[rx, rx] = 1.0
        out[i] = np.kron(Gt, Gr)
    return out


# -- one-bit quantization ----------------------------------------------------

def _sign(x):
    return np.where(x >= 0, 1.0, -1.0)


def one_bit_quantize(y, h) -> np.ndarray:
    """``sign(Re(y-h)) + j*sign(Im(y-h))`` with ``sign(0) = +1``."""
    d = np.asarray(y) - np.asarray(h)
    return _sign(d.real) + 1j * _sign(d.imag)


def sign_consistent(a, b) -> np.ndarray:
    """Element-wise test of ``Re(a)Re(b) >= 0`` and ``Im(a)Im(b) >= 0``."""
    return (a.real * b.real >= 0) & (a.imag * b.imag >= 0)


@dataclass
class ThresholdSet:
    h: np.ndarray
    strategy: str = "zero"
    dac_bits: int | None = None
    lo: float | None = None
    hi: float | None = None


def zero_threshold(shape) -> ThresholdSet:
    return ThresholdSet(np.zeros(shape, dtype=complex), "zero")


def gen_threshold_rut(h_min: float, h_max: float, shape, seed) -> ThresholdSet:
    """Real and imaginary parts i.i.d. uniform on ``[h_min, h_max]``."""
    if h_min > h_max:
        raise ValueError("h_min must not exceed h_max")
    rng = np.random.default_rng(seed)
    h = rng.uniform(h_min, h_max, shape) + 1j * rng.uniform(h_min, h_max, shape)
    return ThresholdSet(h, "RUT", lo=float(h_min), hi=float(h_max))


def gen_threshold_rgt(mean_r, mean_i, sigma_r: float, sigma_i: float, seed) -> ThresholdSet:
    """Gaussian thresholds around ``mean_r + j*mean_i``."""
    mean_r = np.asarray(mean_r, dtype=float)
    mean_i = np.asarray(mean_i, dtype=float)
    if mean_r.shape != mean_i.shape:
        raise ValueError("mean_r and mean_i must have the same shape")
    if sigma_r < 0 or sigma_i < 0:
        raise ValueError("threshold spreads must be nonnegative")
    rng = np.random.default_rng(seed)
    hr = mean_r + sigma_r * rng.standard_normal(mean_r.shape)
    hi = mean_i + sigma_i * rng.standard_normal(mean_i.shape)
    lo = float(min(mean_r.min(), mean_i.min()) - 4 * max(sigma_r, sigma_i)) if mean_r.size else None
    up = float(max(mean_r.max(), mean_i.max()) + 4 * max(sigma_r, sigma_i)) if mean_r.size else None
    return ThresholdSet(hr + 1j * hi, "RGT", lo=lo, hi=up)


def _round_to_grid(x, bits, lo, hi):
    step = (hi - lo) / (2 ** bits - 1)
    k = np.clip(np.rint((x - lo) / step), 0, 2 ** bits - 1)
    return lo + k * step


def dac_quantize(t: ThresholdSet, bits: int, lo: float | None = None,
                 hi: float | None = None) -> ThresholdSet:
    """Round both parts of the threshold to ``2**bits`` levels spanning ``[lo, hi]``.

    ``lo``/``hi`` default to the range recorded by the generator.
    """
    lo = t.lo if lo is None else lo
    hi = t.hi if hi is None else hi
    if lo is None or hi is None:
        raise ValueError("DAC range unknown; pass lo and hi")
    if bits < 1 or not lo < hi:
        raise ValueError("need bits >= 1 and lo < hi")
    h = _round_to_grid(t.h.real, bits, lo, hi) + 1j * _round_to_grid(t.h.imag, bits, lo, hi)
    return ThresholdSet(h, t.strategy, int(bits), float(lo), float(hi))


def minimal_perturbation(a1, a2) -> np.ndarray:
    """Sparsest correction ``a3`` keeping ``a1 + a3`` sign-consistent with ``a1 + a2``.

    A component of ``a3`` copies ``a2`` only where ``a2`` flips the sign of
    ``a1``; elsewhere it is zero, so ``||a3||_0 <= ||a2||_0``.
    """
    a1 = np.ascontiguousarray(a1, dtype=complex)
    a2 = np.ascontiguousarray(a2, dtype=complex)
    if a1.shape != a2.shape:
        raise ValueError("a1 and a2 must have the same length")
    shape = a1.shape
    return kernels.minimal_perturbation_kernel(a1.ravel(), a2.ravel()).reshape(shape)


def perturbation_sparsity(snr_db: float, draws: int, seed, config: RadarConfig | None = None,
                          K: int = 4, threshold: str = "RUT") -> float:
    """Mean fraction of nonzero real/imag components of the minimal perturbation.

    Each draw builds a random unit-magnitude scene and takes
    ``a1 = F_q(X) - h_q`` and ``a2`` the circular Gaussian noise at the given
    SNR. With ``threshold="RUT"`` the thresholds are uniform between the
    smallest and largest component of the received data ``a1 + h + a2``, as
    in the experiments; ``"zero"`` uses ``h = 0``. The default
    configuration is the full experiment (M=N=6, Q=36, L=64, T=4, R=5, P=20).
    """
    from .scene import build_ground_truth, generate_waveforms, random_scene, snr_to_sigma

    config = config or RadarConfig(M=6, N=6, Q=36, L=64, T=4, R=5, P=20)
    if threshold not in ("RUT", "zero"):
        raise ValueError("threshold must be 'RUT' or 'zero'")
    sigma = snr_to_sigma(snr_db)
    ss = np.random.SeedSequence(seed)
    fracs = np.empty(draws)
    for d, child in enumerate(ss.spawn(draws)):
        s_scene, s_mask, s_wave, s_noise, s_thr = child.spawn(5)
        scene = random_scene(K, s_scene)
        masks = draw_masks(config, s_mask)
        S = generate_waveforms(config.M, config.L, s_wave)
        r = apply_F_all(build_ground_truth(scene, config), masks, S)
        rng = np.random.default_rng(s_noise)
        a2 = (sigma / np.sqrt(2)) * (rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape))
        if threshold == "RUT":
            y = r + a2
            lo = min(y.real.min(), y.imag.min())
            hi = max(y.real.max(), y.imag.max())
            h = gen_threshold_rut(lo, hi, r.shape, s_thr).h
        else:
            h = 0.0
        a3 = minimal_perturbation(r - h, a2)
        fracs[d] = (np.count_nonzero(a3.real) + np.count_nonzero(a3.imag)) / (2 * a3.size)
    return float(fracs.mean())


# -- audit dump --------------------------------------------------------------

ONEBIT_CSV_HEADER = ("q", "n", "re_z", "im_z", "re_h", "im_h")


def write_onebit_csv(path, masks: MaskSet, z, h):
    """One row per (pulse, sample) with the sign bits and the threshold used."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ONEBIT_CSV_HEADER)
        for i, q in enumerate(masks.pulses):
            for n in range(z.shape[1]):
                w.writerow((int(q), n, int(z[i, n].real), int(z[i, n].imag),
                            repr(float(h[i, n].real)), repr(float(h[i, n].imag))))


def read_onebit_csv(path, masks: MaskSet):
    """Inverse of :func:`write_onebit_csv`; returns ``(z, h)`` aligned with ``masks``."""
    P, LR = masks.P, masks.LR
    z = np.zeros((P, LR), dtype=complex)
    h = np.zeros((P, LR), dtype=complex)
    seen = np.zeros((P, LR), dtype=bool)
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        missing = set(ONEBIT_CSV_HEADER) - set(r.fieldnames or ())
        if missing:
            raise ValueError(f"one-bit CSV missing columns: {sorted(missing)}")
        for row in r:
            i = masks.slot(int(row["q"]))
            n = int(row["n"])
            z[i, n] = complex(float(row["re_z"]), float(row["im_z"]))
            h[i, n] = complex(float(row["re_h"]), float(row["im_h"]))
            seen[i, n] = True
    if not seen.all():
        raise ValueError("one-bit CSV does not cover every (q, n) entry")
    return z, h
