"""Inner-loop kernels, each with a numba version and a numpy version.

The public names at the bottom resolve to one or the other depending on
``ONEBIT_MIMO_NO_NUMBA``. Both ``*_nb`` and ``*_np`` stay importable so
tests and the benchmark can compare them directly.
"""
import numpy as np

from ._accel import njit, pick


# -- Toeplitz / sub-diagonal traces ------------------------------------------

@njit
def subdiag_traces_nb(A):
    n = A.shape[0]
    out = np.zeros(n, dtype=np.complex128)
    for k in range(n):
        s = 0j
        for m in range(n - k):
            s += A[m, m + k]
        out[k] = s
    return out


def subdiag_traces_np(A):
    n = A.shape[0]
    return np.array([np.trace(A, offset=k) for k in range(n)], dtype=complex)


@njit
def hermitian_toeplitz_nb(u):
    n = u.shape[0]
    T = np.empty((n, n), dtype=np.complex128)
    d = u[0].real + 0j
    for m in range(n):
        T[m, m] = d
        for k in range(m + 1, n):
            v = u[k - m]
            T[m, k] = v
            T[k, m] = np.conj(v)
    return T


def hermitian_toeplitz_np(u):
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    idx = np.arange(n)[None, :] - np.arange(n)[:, None]
    full = np.concatenate([np.conj(u[::-1][:-1]), u]) if n else u
    T = full[idx + n - 1]
    np.fill_diagonal(T, u[0].real if n else 0.0)
    return T


# -- element-wise one-bit machinery ------------------------------------------

@njit
def soft_threshold_nb(x, lam):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        a = abs(x[i])
        if a > lam:
            out[i] = x[i] * (1.0 - lam / a)
    return out


def soft_threshold_np(x, lam):
    mag = np.abs(x)
    scale = np.where(mag > lam, 1.0 - lam / np.where(mag > 0, mag, 1.0), 0.0)
    return x * scale


@njit
def minimal_perturbation_nb(a1, a2):
    out = np.zeros_like(a1)
    for i in range(a1.shape[0]):
        r1, r2 = a1[i].real, a2[i].real
        i1, i2 = a1[i].imag, a2[i].imag
        re = 0.0
        if r1 * r2 < 0.0 and abs(r1) < abs(r2):
            re = r2
        im = 0.0
        if i1 * i2 < 0.0 and abs(i1) < abs(i2):
            im = i2
        out[i] = complex(re, im)
    return out


def _perturb_part(p1, p2):
    keep = (p1 * p2 < 0) & (np.abs(p1) < np.abs(p2))
    return np.where(keep, p2, 0.0)


def minimal_perturbation_np(a1, a2):
    return _perturb_part(a1.real, a2.real) + 1j * _perturb_part(a1.imag, a2.imag)


# -- FIM accumulation --------------------------------------------------------

@njit
def weighted_gram_nb(J, w):
    n, p = J.shape
    G = np.zeros((p, p))
    for r in range(n):
        wr = w[r]
        if wr == 0.0:
            continue
        for a in range(p):
            ja = wr * J[r, a]
            for b in range(a, p):
                G[a, b] += ja * J[r, b]
    for a in range(p):
        for b in range(a):
            G[a, b] = G[b, a]
    return G


def weighted_gram_np(J, w):
    return (J * w[:, None]).T @ J


subdiag_traces = pick(subdiag_traces_nb, subdiag_traces_np)
hermitian_toeplitz = pick(hermitian_toeplitz_nb, hermitian_toeplitz_np)
soft_threshold = pick(soft_threshold_nb, soft_threshold_np)
minimal_perturbation_kernel = pick(minimal_perturbation_nb, minimal_perturbation_np)
weighted_gram = pick(weighted_gram_nb, weighted_gram_np)
