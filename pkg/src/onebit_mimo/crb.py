"""Fisher information and Cramer-Rao bounds for unquantized and one-bit data.

Parameters are ordered ``nsf[0..K-1], ndf[0..K-1], mag[0..K-1],
phase[0..K-1]`` followed by ``sigma`` when the noise level is unknown.

Noise is circular ``CN(0, sigma^2)``, so each real component has variance
``sigma^2 / 2``. With ``Phi(x) = (1 + erf(x)) / 2`` the probability of a
``+1`` bit is ``Phi((r - h) / sigma)``, which is why that normalization is
used here rather than the standard normal CDF.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, erfc, log_ndtr

from . import kernels
from .sampling import MaskSet, ThresholdSet, apply_F_all
from .scene import TargetScene

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
TWO_OVER_PI = 2.0 / np.pi
GROUPS = ("nsf", "ndf", "mag", "phase")


def phi(x):
    """``(1 + erf(x)) / 2``."""
    return 0.5 * (1.0 + erf(x))


def weight_omega(x):
    """One-bit information weight ``exp(-2x^2) / (2*pi*Phi(x)*(1 - Phi(x)))``.

    Evaluated in the log domain for ``|x| > 6``; the result is capped at
    ``2/pi`` to absorb roundoff.
    """
    # even in x; working on |x| keeps it exactly symmetric
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    big = np.abs(x) > 6
    xs = x[~big]
    # Phi and 1 - Phi through erfc so neither tail cancels
    out[~big] = np.exp(-2.0 * xs ** 2) / (0.5 * np.pi * erfc(-xs) * erfc(xs))
    xb = x[big]
    # Phi(x) = ndtr(sqrt(2) x)
    logw = (-2.0 * xb ** 2 - np.log(2.0 * np.pi)
            - log_ndtr(np.sqrt(2.0) * xb) - log_ndtr(-np.sqrt(2.0) * xb))
    out[big] = np.exp(logw)
    np.minimum(out, TWO_OVER_PI, out=out)
    return out if out.ndim else float(out)


def approx_omega(x):
    """Gaussian approximation ``(2/pi) exp(-x^2)`` of :func:`weight_omega`."""
    w = TWO_OVER_PI * np.exp(-np.asarray(x, dtype=float) ** 2)
    return w if np.ndim(w) else float(w)


def param_names(K: int, with_sigma: bool = False) -> list[str]:
    names = [f"{g}[{k}]" for g in GROUPS for k in range(K)]
    if with_sigma:
        names.append("sigma")
    return names


@dataclass
class FimResult:
    matrix: np.ndarray
    names: list = field(default_factory=list)
    crb_diag: np.ndarray = None
    singular: bool = False
    cond: float = 1.0

    def __post_init__(self):
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        if self.crb_diag is None:
            self.crb_diag, self.singular, self.cond = _crb(self.matrix)

    @property
    def K(self) -> int:
        return (self.matrix.shape[0] - (1 if self.has_sigma else 0)) // 4

    @property
    def has_sigma(self) -> bool:
        return bool(self.names) and self.names[-1] == "sigma"

    def group(self, name: str) -> np.ndarray:
        """CRB entries for one parameter group, e.g. ``"nsf"``."""
        if name == "sigma":
            return self.crb_diag[-1:]
        g = GROUPS.index(name)
        K = self.K
        return self.crb_diag[g * K:(g + 1) * K]

    def theta_block(self) -> np.ndarray:
        return self.crb_diag[:4 * self.K]


def _crb(F):
    if F.size == 0:
        return np.zeros(0), False, 1.0
    w = np.linalg.eigvalsh(F)
    top = np.abs(w).max()
    cond = np.inf if w[0] <= 0 or top == 0 else top / w[0]
    if not np.isfinite(cond) or cond > COND_LIMIT:
        log.warning("FIM is singular or ill-conditioned (cond %.3e); using pseudo-inverse", cond)
        return np.clip(np.diag(np.linalg.pinv(F, hermitian=True)), 0.0, None), True, cond
    return np.diag(np.linalg.inv(F)).copy(), False, cond


def crb_from_fim(f) -> np.ndarray:
    """Diagonal of the inverse FIM (pseudo-inverse with a flag when singular)."""
    if isinstance(f, FimResult):
        return f.crb_diag
    return _crb(0.5 * (np.asarray(f, float) + np.asarray(f, float).T))[0]


# -- model derivatives -------------------------------------------------------

def _derivative_matrices(scene: TargetScene, MN: int, Q: int):
    p = np.arange(MN)
    q = np.arange(Q)
    out = []
    C = np.exp(2j * np.pi * np.outer(p, scene.nsf))
    Dh = np.exp(2j * np.pi * np.outer(scene.ndf, q))
    beta = scene.beta
    unit = np.exp(1j * scene.phase)
    for k in range(scene.K):
        out.append(beta[k] * np.outer(2j * np.pi * p * C[:, k], Dh[k]))
    for k in range(scene.K):
        out.append(beta[k] * np.outer(C[:, k], 2j * np.pi * q * Dh[k]))
    for k in range(scene.K):
        out.append(unit[k] * np.outer(C[:, k], Dh[k]))
    for k in range(scene.K):
        out.append(1j * beta[k] * np.outer(C[:, k], Dh[k]))
    return out


def model_jacobian_all(scene: TargetScene, masks: MaskSet, S):
    """Jacobians of the real and imaginary measurement parts for every kept pulse.

    Returns ``(Jr, Ji)`` of shape ``(P*L*R, 4K)``; rows follow
    ``apply_F_all(...).ravel()``.
    """
    if scene.K < 1:
        raise ValueError("need at least one target")
    cfg = masks.config
    G = np.stack([apply_F_all(D, masks, S).ravel()
                  for D in _derivative_matrices(scene, cfg.MN, cfg.Q)], axis=1)
    return np.ascontiguousarray(G.real), np.ascontiguousarray(G.imag)


def model_jacobian(scene: TargetScene, masks: MaskSet, S, q: int):
    """``d r_q / d theta`` and ``d i_q / d theta`` for pulse ``q``, each ``(L*R, 4K)``."""
    i = masks.slot(q)
    Jr, Ji = model_jacobian_all(scene, masks, S)
    LR = masks.LR
    return Jr[i * LR:(i + 1) * LR], Ji[i * LR:(i + 1) * LR]


def _signal(scene, masks, S):
    from .scene import build_ground_truth
    return apply_F_all(build_ground_truth(scene, masks.config), masks, S)


def _sigma(scene):
    if not scene.sigma > 0:
        raise ValueError("the FIM needs sigma > 0")
    return scene.sigma


def _assemble(Jr, Ji, wr, wi, sigma):
    G = kernels.weighted_gram(Jr, np.ascontiguousarray(wr.ravel(), dtype=float))
    G += kernels.weighted_gram(Ji, np.ascontiguousarray(wi.ravel(), dtype=float))
    return (2.0 / sigma ** 2) * G


# -- FIMs --------------------------------------------------------------------

def fim_unquantized(scene: TargetScene, masks: MaskSet, S) -> FimResult:
    """FIM of the unquantized measurements, ``sum (2/sigma^2)(Jr Jr^T + Ji Ji^T)``."""
    sigma = _sigma(scene)
    Jr, Ji = model_jacobian_all(scene, masks, S)
    one = np.ones(Jr.shape[0])
    return FimResult(_assemble(Jr, Ji, one, one, sigma), param_names(scene.K))


def fim_unquantized_unknown_sigma(scene: TargetScene, masks: MaskSet, S) -> FimResult:
    base = fim_unquantized(scene, masks, S)
    n = base.matrix.shape[0]
    F = np.zeros((n + 1, n + 1))
    F[:n, :n] = base.matrix
    F[n, n] = 4.0 * masks.LR * masks.P / scene.sigma ** 2
    return FimResult(F, param_names(scene.K, True))


def _normalized(scene, masks, S, thresholds):
    sigma = _sigma(scene)
    h = thresholds.h if isinstance(thresholds, ThresholdSet) else np.asarray(thresholds)
    y = _signal(scene, masks, S)
    if h.shape != y.shape:
        raise ValueError(f"threshold shape {h.shape} does not match data shape {y.shape}")
    return sigma, ((y.real - h.real) / sigma).ravel(), ((y.imag - h.imag) / sigma).ravel()


def fim_onebit(scene: TargetScene, masks: MaskSet, S, thresholds) -> FimResult:
    """One-bit FIM: the unquantized sum with weights ``omega((r - h)/sigma)``."""
    sigma, xr, xi = _normalized(scene, masks, S, thresholds)
    Jr, Ji = model_jacobian_all(scene, masks, S)
    return FimResult(_assemble(Jr, Ji, weight_omega(xr), weight_omega(xi), sigma),
                     param_names(scene.K))


def fim_onebit_unknown_sigma(scene: TargetScene, masks: MaskSet, S, thresholds) -> FimResult:
    """One-bit FIM with ``sigma`` appended as the last unknown."""
    sigma, xr, xi = _normalized(scene, masks, S, thresholds)
    Jr, Ji = model_jacobian_all(scene, masks, S)
    wr, wi = weight_omega(xr), weight_omega(xi)
    n = 4 * scene.K
    F = np.zeros((n + 1, n + 1))
    F[:n, :n] = _assemble(Jr, Ji, wr, wi, sigma)
    cross = -(2.0 / sigma ** 2) * ((wr * xr) @ Jr + (wi * xi) @ Ji)
    F[n, :n] = cross
    F[:n, n] = cross
    F[n, n] = (2.0 / sigma ** 2) * (np.sum(wr * xr ** 2) + np.sum(wi * xi ** 2))
    return FimResult(F, param_names(scene.K, True))


def rut_expected_weight(x_lo, x_hi):
    """Mean of ``approx_omega`` over ``x`` uniform on ``[x_lo, x_hi]``.

    In terms of thresholds, ``x_lo = (r - h_max)/sigma`` and
    ``x_hi = (r - h_min)/sigma``; the mean is
    ``(2 / (sqrt(pi) * dx)) * (Phi(x_hi) - Phi(x_lo))``.
    """
    x_lo = np.asarray(x_lo, dtype=float)
    x_hi = np.asarray(x_hi, dtype=float)
    dx = x_hi - x_lo
    tiny = np.abs(dx) < 1e-8
    safe = np.where(tiny, 1.0, dx)
    w = 2.0 / (np.sqrt(np.pi) * safe) * (phi(x_hi) - phi(x_lo))
    return np.where(tiny, approx_omega(0.5 * (x_lo + x_hi)), w)


def expected_fim_rut(scene: TargetScene, masks: MaskSet, S, h_min: float, h_max: float) -> FimResult:
    """Expected one-bit FIM under uniform thresholds on ``[h_min, h_max]``, using ``approx_omega``."""
    if not h_min <= h_max:
        raise ValueError("need h_min <= h_max")
    sigma = _sigma(scene)
    y = _signal(scene, masks, S).ravel()
    Jr, Ji = model_jacobian_all(scene, masks, S)
    wr = rut_expected_weight((y.real - h_max) / sigma, (y.real - h_min) / sigma)
    wi = rut_expected_weight((y.imag - h_max) / sigma, (y.imag - h_min) / sigma)
    return FimResult(_assemble(Jr, Ji, wr, wi, sigma), param_names(scene.K))


def rgt_expected_weight(sigma: float, sigma_t: float) -> float:
    """``2 sigma / (pi sqrt(2 sigma_t^2 + sigma^2))``."""
    return 2.0 * sigma / (np.pi * np.sqrt(2.0 * sigma_t ** 2 + sigma ** 2))


def rgt_weight_factor(kappa: float) -> float:
    """Weight when ``sigma_t^2 = kappa sigma^2``: ``2 / (pi sqrt(2 kappa + 1))``."""
    return 2.0 / (np.pi * np.sqrt(2.0 * kappa + 1.0))


def expected_fim_rgt(scene: TargetScene, masks: MaskSet, S, sigma_r: float,
                     sigma_i: float | None = None) -> FimResult:
    """Expected one-bit FIM under Gaussian thresholds centred on the noise-free signal."""
    if sigma_i is None:
        sigma_i = sigma_r
    if sigma_r < 0 or sigma_i < 0:
        raise ValueError("threshold spreads must be nonnegative")
    sigma = _sigma(scene)
    Jr, Ji = model_jacobian_all(scene, masks, S)
    n = Jr.shape[0]
    wr = np.full(n, rgt_expected_weight(sigma, sigma_r))
    wi = np.full(n, rgt_expected_weight(sigma, sigma_i))
    return FimResult(_assemble(Jr, Ji, wr, wi, sigma), param_names(scene.K))


def mean_group_crb(f: FimResult) -> dict:
    """CRB averaged over targets within each parameter group."""
    out = {g: float(np.mean(f.group(g))) for g in GROUPS}
    if f.has_sigma:
        out["sigma"] = float(f.crb_diag[-1])
    return out


# -- CSV ---------------------------------------------------------------------

CRB_CSV_HEADER = ("param_name", "index", "crb_value")


def write_crb_csv(path, f: FimResult, meta: dict | None = None):
    """CRB rows with ``#`` metadata lines stating the parameter ordering."""
    groups = list(GROUPS) + (["sigma"] if f.has_sigma else [])
    with open(path, "w", newline="") as fh:
        fh.write("# ordering: " + ",".join(groups) + f" (K={f.K}, blocks of K)\n")
        fh.write(f"# singular: {int(f.singular)}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CRB_CSV_HEADER)
        for name, val in zip(f.names, f.crb_diag):
            if name == "sigma":
                w.writerow(["sigma", 0, f"{val:.12g}"])
            else:
                g, idx = name[:-1].split("[")
                w.writerow([g, idx, f"{val:.12g}"])
