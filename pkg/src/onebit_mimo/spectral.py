"""Frequency extraction from recovered Toeplitz blocks, pairing and amplitudes.

``T(u1)`` carries the spatial frequencies directly. ``T(u2)`` is built from
``d(ndf)`` whose entries are ``exp(-j*2*pi*q*ndf)``, so its decomposition
returns ``-ndf``; :func:`extract_targets` undoes that sign.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, nnls

from .anm_solver import SolverState, psd_project, toeplitz
from .scene import wrap_freq

log = logging.getLogger(__name__)

RIDGE = 1e-8


class DecompositionError(ValueError):
    """Raised when a Toeplitz matrix has no identifiable low-rank decomposition."""


@dataclass
class FrequencyEstimate:
    freqs: np.ndarray
    powers: np.ndarray
    # set when the rank hint exceeded the numerical rank of T
    rank_flag: bool = False

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.powers = np.asarray(self.powers, dtype=float)
        if self.freqs.shape != self.powers.shape:
            raise ValueError("freqs and powers must have equal length")
        order = np.argsort(self.freqs, kind="stable")
        self.freqs = self.freqs[order]
        self.powers = self.powers[order]


@dataclass
class TargetEstimate:
    nsf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ndf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    @property
    def K(self) -> int:
        return len(self.nsf)

    @property
    def pairs(self):
        return list(zip(self.nsf.tolist(), self.ndf.tolist(), self.beta.tolist()))

    @property
    def mag(self) -> np.ndarray:
        return np.abs(self.beta)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.beta)


def vandermonde_atoms(freqs, n: int) -> np.ndarray:
    """Columns ``w(f) = exp(j*2*pi*f*[0..n-1])``."""
    return np.exp(2j * np.pi * np.outer(np.arange(n), np.atleast_1d(freqs)))


def numerical_rank(T, rtol: float = 1e-6) -> int:
    w = np.linalg.eigvalsh(0.5 * (T + T.conj().T))
    top = w[-1] if w.size else 0.0
    if top <= 0:
        return 0
    return int(np.sum(w > rtol * top))


def vandermonde_decompose(T, K: int | None = None, rtol: float = 1e-6,
                          strict: bool = True) -> FrequencyEstimate:
    """Vandermonde decomposition ``T = sum_k p_k w(f_k) w(f_k)^H`` of a PSD Toeplitz matrix.

    Frequencies come from the rotational invariance of the ``K``-dimensional
    signal subspace and powers from nonnegative least squares.

    Parameters
    ----------
    T : (n, n) complex array
        Hermitian PSD Toeplitz matrix.
    K : int, optional
        Number of frequencies. Defaults to the numerical rank.
    rtol : float
        Eigenvalues below ``rtol * max`` count as zero.
    strict : bool
        If true, a full-rank ``T`` is rejected because its decomposition is
        not unique. Solver outputs are decomposed with ``strict=False``.

    Returns
    -------
    FrequencyEstimate
    """
    T = np.asarray(T, dtype=complex)
    n = T.shape[0]
    if T.shape != (n, n):
        raise ValueError("T must be square")
    T = 0.5 * (T + T.conj().T)
    w, V = np.linalg.eigh(T)
    scale = max(abs(w[-1]), abs(w[0]), 1e-300)
    if w[0] < -1e-8 * scale:
        raise DecompositionError(f"T is not PSD (min eigenvalue {w[0]:.3e})")
    rank = int(np.sum(w > rtol * scale)) if w[-1] > 0 else 0
    if strict and rank >= n:
        raise DecompositionError("T is full rank: frequencies are not identifiable")
    if K is None:
        K = rank
    if K > n - 1:
        raise ValueError(f"rank hint K={K} exceeds n-1={n - 1}")
    flag = K > rank
    if flag:
        log.warning("rank hint %d exceeds numerical rank %d", K, rank)
    if K == 0:
        return FrequencyEstimate(np.zeros(0), np.zeros(0), flag)
    Us = V[:, ::-1][:, :K]
    # shift invariance: Us[1:] = Us[:-1] @ Psi, eigenvalues of Psi are exp(j*2*pi*f)
    Psi = np.linalg.lstsq(Us[:-1], Us[1:], rcond=None)[0]
    z = np.linalg.eigvals(Psi)
    f = wrap_freq(np.angle(z) / (2 * np.pi))
    W = vandermonde_atoms(f, n)
    # vec(T) = sum_k p_k vec(w_k w_k^H), stacked as a real system
    A = np.stack([np.outer(W[:, k], W[:, k].conj()).ravel() for k in range(K)], axis=1)
    t = T.ravel()
    p, _ = nnls(np.vstack([A.real, A.imag]), np.concatenate([t.real, t.imag]))
    return FrequencyEstimate(f, p, flag)


def reconstruct_toeplitz(est: FrequencyEstimate, n: int) -> np.ndarray:
    W = vandermonde_atoms(est.freqs, n)
    return (W * est.powers) @ W.conj().T


def estimate_model_order(eigenvalues, snr_db: float) -> int:
    """Smallest ``K`` whose leading eigenvalues hold ``min(0.5 + SNR/50, 0.9)`` of the total."""
    d = np.asarray(eigenvalues, dtype=float).ravel()
    if d.size == 0:
        return 0
    d = np.sort(np.clip(d, 0.0, None))[::-1]
    total = d.sum()
    if total <= 0:
        return 0
    thr = min(0.5 + snr_db / 50.0, 0.9)
    frac = np.cumsum(d) / total
    # small slack so exact ties like 0.75 vs 0.75 are not lost to roundoff
    return int(np.searchsorted(frac, thr - 1e-12) + 1)


def atom_matrix(pairs, MN: int, Q: int) -> np.ndarray:
    """Columns ``vec(c(nsf) d(ndf)^H)`` (row-major vec) for each pair."""
    pairs = list(pairs)
    if not pairs:
        return np.zeros((MN * Q, 0), dtype=complex)
    f = np.array([p[0] for p in pairs], dtype=float)
    v = np.array([p[1] for p in pairs], dtype=float)
    C = vandermonde_atoms(f, MN)
    D = vandermonde_atoms(v, Q)
    return (C[:, None, :] * D[None, :, :]).reshape(MN * Q, len(pairs))


def _ridge_lstsq(A, y):
    if A.shape[1] == 0:
        return np.zeros(0, dtype=complex), 1.0
    s = np.linalg.svd(A, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if cond > 1e8:
        log.info("atom matrix ill-conditioned (cond %.3e), using ridge", cond)
        G = A.conj().T @ A
        ridge = RIDGE * max(np.real(np.trace(G)) / G.shape[0], 1.0)
        x = np.linalg.solve(G + ridge * np.eye(G.shape[0]), A.conj().T @ y)
    else:
        x = np.linalg.lstsq(A, y, rcond=None)[0]
    return x, cond


def estimate_amplitudes(pairs, Xhat) -> np.ndarray:
    """Joint least-squares complex amplitudes of ``Xhat`` on the atoms of ``pairs``."""
    Xhat = np.asarray(Xhat)
    MN, Q = Xhat.shape
    A = atom_matrix(pairs, MN, Q)
    beta, _ = _ridge_lstsq(A, Xhat.ravel())
    return beta


def pair_frequencies(nsf_set, ndf_set, Xhat, K: int | None = None,
                     min_energy: float = 1e-2) -> TargetEstimate:
    """Pair spatial and Doppler frequencies by maximum fitted energy.

    All ``len(nsf_set) * len(ndf_set)`` candidate atoms are fit jointly to
    ``Xhat``; the Hungarian assignment on the per-atom energies picks one
    Doppler per spatial frequency. Assignments below ``min_energy`` times the
    largest energy are dropped, and the remaining slots up to ``K`` are
    filled with the strongest unused atoms, so two targets sharing a spatial
    frequency are both recovered. Amplitudes are re-fit on the final pairs.
    """
    f = np.atleast_1d(np.asarray(nsf_set, dtype=float))
    v = np.atleast_1d(np.asarray(ndf_set, dtype=float))
    Xhat = np.asarray(Xhat)
    MN, Q = Xhat.shape
    if K is None:
        K = max(f.size, v.size)
    if K == 0 or f.size == 0 or v.size == 0:
        return TargetEstimate()
    cand = [(fi, vj) for fi in f for vj in v]
    amp, _ = _ridge_lstsq(atom_matrix(cand, MN, Q), Xhat.ravel())
    E = (np.abs(amp) ** 2).reshape(f.size, v.size)
    rows, cols = linear_sum_assignment(-E)
    emax = E.max()
    chosen = [(i, j) for i, j in zip(rows, cols) if E[i, j] >= min_energy * emax]
    chosen.sort(key=lambda ij: -E[ij])
    chosen = chosen[:K]
    if len(chosen) < K:
        used = set(chosen)
        rest = sorted(((i, j) for i in range(f.size) for j in range(v.size)
                       if (i, j) not in used), key=lambda ij: -E[ij])
        for ij in rest:
            if len(chosen) >= K or E[ij] < min_energy * emax:
                break
            chosen.append(ij)
    pairs = [(f[i], v[j]) for i, j in chosen]
    beta = estimate_amplitudes(pairs, Xhat)
    order = np.lexsort((np.array([p[1] for p in pairs]), np.array([p[0] for p in pairs])))
    return TargetEstimate(np.array([pairs[k][0] for k in order]),
                          np.array([pairs[k][1] for k in order]),
                          beta[order])


def extract_targets(state: SolverState, K: int | None = None, snr_db: float = np.inf,
                    rtol: float = 1e-6) -> TargetEstimate:
    """Targets from a solver state.

    ``K=None`` estimates the model order from the eigenvalues of ``H``.
    """
    MN, Q = state.X.shape
    if K is None:
        K = estimate_model_order(np.linalg.eigvalsh(psd_project(state.H))[::-1], snr_db)
    if K == 0:
        return TargetEstimate()
    T1 = psd_project(toeplitz(state.u1))
    T2 = psd_project(toeplitz(state.u2))
    k1 = max(1, min(K, numerical_rank(T1, rtol), MN - 1))
    k2 = max(1, min(K, numerical_rank(T2, rtol), Q - 1))
    f = vandermonde_decompose(T1, k1, rtol, strict=False).freqs
    v = wrap_freq(-vandermonde_decompose(T2, k2, rtol, strict=False).freqs)
    return pair_frequencies(f, np.atleast_1d(v), state.X, K)


ESTIMATES_CSV_HEADER = ("trial", "k", "nsf_hat", "ndf_hat", "mag_hat", "phase_hat")


def estimate_rows(trial: int, est: TargetEstimate):
    return [(trial, k, float(est.nsf[k]), float(est.ndf[k]),
             float(est.mag[k]), float(est.phase[k])) for k in range(est.K)]


def write_estimates_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATES_CSV_HEADER)
        for r in rows:
            w.writerow([r[0], r[1]] + [f"{x:.12g}" for x in r[2:]])


def read_estimates_csv(path):
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t = int(row["trial"])
            out.setdefault(t, []).append((float(row["nsf_hat"]), float(row["ndf_hat"]),
                                          float(row["mag_hat"]) * np.exp(1j * float(row["phase_hat"]))))
    return {t: TargetEstimate(np.array([p[0] for p in v]), np.array([p[1] for p in v]),
                              np.array([p[2] for p in v], dtype=complex))
            for t, v in out.items()}
