"""ADMM for one-bit l1-regularized atomic-norm minimization.

The variables follow the block structure

    H = [[T(u1), X], [X^H, T(u2)]]  (PSD)

with ``T(u)`` the Hermitian Toeplitz matrix whose first row is ``u``. The
one-bit solver enforces sign consistency of ``F_q(X) - h_q + p_q`` with the
data ``z_q`` through the magnitude variable ``b_q``; the unquantized
baseline swaps that term for a plain least-squares fit.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .sampling import MaskSet, apply_F_adjoint_all, apply_F_all, gram_matrices

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised on non-finite iterates or eigensolver failure."""


def default_mu(snr_db: float) -> float:
    """Data-fit weight ``2 / (1 + exp(-0.25*SNR))``; tends to 2 as SNR grows."""
    if math.isinf(snr_db):
        return 2.0 if snr_db > 0 else 0.0
    return 2.0 / (1.0 + math.exp(-0.25 * snr_db))


@dataclass
class SolverParams:
    mu: float = 2.0
    lam: float = 50.0
    rho: float = 0.5
    tol: float = 1e-6
    max_iters: int = 1000

    def __post_init__(self):
        if not (self.mu > 0 and self.lam > 0 and self.rho > 0 and self.tol > 0):
            raise ValueError("mu, lam, rho and tol must all be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @classmethod
    def for_snr(cls, snr_db: float, **overrides) -> "SolverParams":
        return cls(mu=default_mu(snr_db), **overrides)


@dataclass
class SolverState:
    X: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    p: np.ndarray
    b: np.ndarray
    H: np.ndarray
    Lam: np.ndarray

    @property
    def MN(self) -> int:
        return self.X.shape[0]

    def blocks(self, A):
        n = self.MN
        return A[:n, :n], A[:n, n:], A[n:, n:]

    @property
    def T1(self) -> np.ndarray:
        return toeplitz(self.u1)

    @property
    def T2(self) -> np.ndarray:
        return toeplitz(self.u2)

    def objective(self, lam: float = 0.0) -> float:
        """``MN*u1[0] + Q*u2[0] + lam*sum|p|_1`` (trace of both Toeplitz blocks)."""
        MN, Q = self.X.shape
        val = MN * self.u1[0].real + Q * self.u2[0].real
        if lam and self.p.size:
            val += lam * np.abs(self.p).sum()
        return float(val)


@dataclass
class SolveResult:
    state: SolverState
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


# -- building blocks ---------------------------------------------------------

def toeplitz(u) -> np.ndarray:
    """Hermitian Toeplitz matrix with first row ``u``; the diagonal uses ``Re(u[0])``."""
    u = np.ascontiguousarray(u, dtype=complex)
    return kernels.hermitian_toeplitz(u)


def subdiag_trace(A, n: int) -> complex:
    """Sum of the ``n``-th upper diagonal (1-based; ``n=1`` is the trace).

    This is the diagonal that holds ``u[n-1]`` in ``toeplitz(u)``.
    """
    A = np.asarray(A)
    if not 1 <= n <= A.shape[0]:
        raise ValueError(f"diagonal index {n} out of range 1..{A.shape[0]}")
    return complex(np.trace(A, offset=n - 1))


def prox_l1(x, lam: float) -> np.ndarray:
    """Complex soft threshold: shrink each magnitude by ``lam``, keeping the phase."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    x = np.asarray(x, dtype=complex)
    return kernels.soft_threshold(np.ascontiguousarray(x.ravel()), float(lam)).reshape(x.shape)


def psd_project(H) -> np.ndarray:
    """Frobenius-nearest PSD matrix: Hermitianize, then clamp negative eigenvalues."""
    H = 0.5 * (H + np.conj(H.T))
    try:
        w, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigendecomposition failed: {exc}") from exc
    w = np.maximum(w, 0.0)
    out = (V * w) @ V.conj().T
    return 0.5 * (out + out.conj().T)


def cwise(a, b):
    """Complex element-wise product ``Re(a)Re(b) + j Im(a)Im(b)``."""
    return a.real * b.real + 1j * (a.imag * b.imag)


def blocked(u1, X, u2) -> np.ndarray:
    T1 = toeplitz(u1)
    T2 = toeplitz(u2)
    return np.block([[T1, X], [X.conj().T, T2]])


# -- update steps ------------------------------------------------------------

@dataclass
class _Problem:
    """Iteration-invariant data for one solve."""

    masks: MaskSet
    S: np.ndarray
    z: np.ndarray | None
    h: np.ndarray | None
    y: np.ndarray | None
    params: SolverParams
    solve_mats: np.ndarray = None

    def __post_init__(self):
        MN = self.masks.config.MN
        G = gram_matrices(self.masks, self.S)
        A = self.params.mu * G + 2 * self.params.rho * np.eye(MN)
        # Hermitian PD; invert once through Cholesky
        Lc = np.linalg.cholesky(A)
        Linv = np.linalg.inv(Lc)
        self.solve_mats = np.conj(np.swapaxes(Linv, 1, 2)) @ Linv


def update_X(state: SolverState, prob: _Problem, onebit: bool = True) -> np.ndarray:
    """Closed-form X step.

    Kept pulses solve ``(mu G_q + 2 rho I) x = (2 Lam_X + 2 rho H_X) e_q - mu M_q^H zbar_q``
    with ``zbar_q = p_q - h_q - z_q (*) b_q`` (or ``-y_q`` for unquantized
    data); the other columns copy ``H_X + Lam_X / rho``.
    """
    mu, rho = prob.params.mu, prob.params.rho
    _, HX, _ = state.blocks(state.H)
    _, LX, _ = state.blocks(state.Lam)
    X = HX + LX / rho
    if onebit:
        zbar = state.p - prob.h - cwise(prob.z, state.b)
    else:
        zbar = -prob.y
    back = apply_F_adjoint_all(zbar, prob.masks, prob.S)
    cols = prob.masks.pulses
    rhs = 2 * LX[:, cols] + 2 * rho * HX[:, cols] - mu * back
    X[:, cols] = np.einsum("pij,jp->ip", prob.solve_mats, rhs)
    return X


def update_u(state: SolverState, rho: float):
    """Toeplitz parameters from the diagonal sums of ``rho*H + Lam``."""
    H1, _, H2 = state.blocks(state.H)
    L1, _, L2 = state.blocks(state.Lam)
    out = []
    for Hb, Lb in ((H1, L1), (H2, L2)):
        n = Hb.shape[0]
        tr = kernels.subdiag_traces(np.ascontiguousarray(rho * Hb + Lb))
        u = tr / (rho * (n - np.arange(n)))
        u[0] = u[0].real - 1.0 / rho
        out.append(u)
    return out[0], out[1]


def update_p(state: SolverState, prob: _Problem, FX) -> np.ndarray:
    """Soft-thresholded perturbation with threshold ``lam/mu``."""
    arg = cwise(prob.z, state.b) + prob.h - FX
    return prox_l1(arg, prob.params.lam / prob.params.mu)


def update_b(state: SolverState, prob: _Problem, FX) -> np.ndarray:
    v = FX - prob.h + state.p
    return np.abs(v.real) + 1j * np.abs(v.imag)


def update_H_and_Lam(state: SolverState, rho: float):
    """PSD projection of ``B - Lam/rho`` followed by the multiplier step."""
    B = blocked(state.u1, state.X, state.u2)
    H = psd_project(B - state.Lam / rho)
    Lam = state.Lam + rho * (H - B)
    Lam = 0.5 * (Lam + Lam.conj().T)
    return H, Lam, H - B


# -- drivers -----------------------------------------------------------------

def _initial_state(masks: MaskSet, onebit: bool) -> SolverState:
    c = masks.config
    n = c.MN + c.Q
    shape = (masks.P, masks.LR) if onebit else (0, 0)
    return SolverState(
        X=np.zeros((c.MN, c.Q), dtype=complex),
        u1=np.zeros(c.MN, dtype=complex),
        u2=np.zeros(c.Q, dtype=complex),
        p=np.zeros(shape, dtype=complex),
        b=np.ones(shape, dtype=complex) * (1 + 1j),
        H=np.zeros((n, n), dtype=complex),
        Lam=np.zeros((n, n), dtype=complex),
    )


def _iterate(prob: _Problem, onebit: bool, trace_every: int = 0) -> SolveResult:
    params = prob.params
    state = _initial_state(prob.masks, onebit)
    history = []
    converged = False
    it = 0
    FX_old = np.zeros_like(state.p) if onebit else None
    data = prob.h if onebit else prob.y
    floor = 1e-12 * (1.0 + float(np.linalg.norm(data)))
    for it in range(1, params.max_iters + 1):
        X_old = state.X
        state.X = update_X(state, prob, onebit)
        state.u1, state.u2 = update_u(state, params.rho)
        if onebit:
            # the perturbation step works on the previous X iterate
            state.p = update_p(state, prob, FX_old)
            FX = apply_F_all(state.X, prob.masks, prob.S)
            state.b = update_b(state, prob, FX)
            FX_old = FX
        state.H, state.Lam, resid = update_H_and_Lam(state, params.rho)

        ref = np.linalg.norm(X_old)
        step = np.linalg.norm(state.X - X_old)
        if ref > floor:
            change = step / ref
        else:
            # an all-zero solution has no relative scale
            change = 0.0 if step <= floor and it > 1 else math.inf
        if not np.isfinite(state.X).all() or not np.isfinite(state.H).all():
            raise SolverError(f"non-finite iterate at iteration {it}")
        if trace_every and (it % trace_every == 0 or it == 1):
            history.append((it, change, float(np.linalg.norm(resid)),
                            float(np.linalg.eigvalsh(state.H)[0])))
        else:
            history.append((it, change, float(np.linalg.norm(resid)), math.nan))
        if change < params.tol:
            converged = True
            break
    return SolveResult(state, it, converged, history)


def solve_1b_anm_l1(z, h, masks: MaskSet, S, params: SolverParams | None = None,
                    trace_every: int = 0) -> SolveResult:
    """Run the one-bit ADMM on data ``z`` taken against thresholds ``h``.

    ``z`` and ``h`` have shape ``(P, L*R)`` aligned with ``masks.pulses``.
    Stops when the relative change of ``X`` drops below ``params.tol`` or
    after ``params.max_iters`` iterations.
    """
    params = params or SolverParams()
    z = np.asarray(z, dtype=complex)
    h = np.asarray(h, dtype=complex)
    if z.shape != (masks.P, masks.LR) or h.shape != z.shape:
        raise ValueError(f"z and h must have shape {(masks.P, masks.LR)}")
    prob = _Problem(masks, np.asarray(S), z, h, None, params)
    return _iterate(prob, True, trace_every)


def solve_unquantized_anm(y, masks: MaskSet, S, params: SolverParams | None = None,
                          trace_every: int = 0) -> SolveResult:
    """Same ADMM with the one-bit term replaced by ``mu/2 * sum ||y_q - F_q(X)||^2``."""
    params = params or SolverParams()
    y = np.asarray(y, dtype=complex)
    if y.shape != (masks.P, masks.LR):
        raise ValueError(f"y must have shape {(masks.P, masks.LR)}")
    prob = _Problem(masks, np.asarray(S), None, None, y, params)
    return _iterate(prob, False, trace_every)


def consistency_violations(state: SolverState, z, h, masks: MaskSet, S) -> int:
    """Count real/imag components where ``F_q(X) - h_q + p_q`` disagrees with ``z_q``."""
    v = apply_F_all(state.X, masks, S) - h + state.p
    bad_r = v.real * z.real < 0
    bad_i = v.imag * z.imag < 0
    return int(bad_r.sum() + bad_i.sum())


def write_trace_csv(path, result: SolveResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iter", "rel_change_X", "primal_residual", "min_eig_H"))
        for row in result.history:
            w.writerow(row)
