"""Monte Carlo experiments, detection scoring and data-volume arithmetic.

Every random draw in a trial comes from its own stream
``SeedSequence(seed, spawn_key=(snr_index, trial_index, purpose))``, so trials
are independent, reproducible and order-free; parallel runs reduce results
in ``(snr_index, trial_index)`` order and write the same bytes as serial ones.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import crb as crb_mod
from .anm_solver import SolverError, SolverParams, solve_1b_anm_l1
from .sampling import (apply_F_all, dac_quantize, draw_masks, gen_threshold_rgt,
                       gen_threshold_rut, one_bit_quantize, zero_threshold)
from .scene import (REFERENCE_TARGETS, RadarConfig, Target, TargetScene, build_ground_truth,
                    generate_waveforms, random_scene, scene_from_dict, snr_to_sigma,
                    wrap_freq)
from .spectral import DecompositionError, TargetEstimate, extract_targets

log = logging.getLogger(__name__)

# P follows the 20-of-36 pulse ratio of the full configuration
PRESETS = {
    "setting1": dict(M=4, N=4, Q=16, L=64, T=4, R=4, P=9),
    "setting2": dict(M=6, N=6, Q=36, L=64, T=6, R=6, P=20),
    "setting3": dict(M=6, N=6, Q=36, L=128, T=6, R=6, P=20),
    "setting4": dict(M=8, N=8, Q=64, L=64, T=8, R=8, P=36),
    "full": dict(M=6, N=6, Q=36, L=64, T=4, R=5, P=20),
}
DEFAULT_PRESET = "setting1"

PURPOSES = {"scene": 0, "mask": 1, "wave": 2, "noise": 3, "threshold": 4, "rgt": 5}
STRATEGIES = ("RUT", "RGT", "zero")
WORKERS_ENV = "ONEBIT_MIMO_WORKERS"


class ConfigError(ValueError):
    """Malformed experiment or scene configuration."""


def trial_seed(master: int, snr_index: int, trial_index: int, purpose: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(snr_index, trial_index, PURPOSES[purpose]))


# -- configuration -----------------------------------------------------------

@dataclass
class ExperimentConfig:
    radar: RadarConfig
    snr_db: list
    trials: int = 1
    scene: TargetScene | None = None
    generator: dict = field(default_factory=lambda: {"kind": "reference", "K": 4})
    solver: dict = field(default_factory=dict)
    threshold: dict = field(default_factory=lambda: {"strategy": "RUT", "kappa": 5.0, "dac_bits": 12})
    model_order: str = "known"
    seed: int = 0
    crb: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("field 'trials' must be >= 1")
        if not self.snr_db:
            raise ConfigError("field 'snr_db' must be a nonempty list")
        if self.threshold.get("strategy", "RUT") not in STRATEGIES:
            raise ConfigError(f"field 'threshold.strategy' must be one of {STRATEGIES}")
        if self.model_order not in ("known", "estimate"):
            raise ConfigError("field 'model_order' must be 'known' or 'estimate'")
        SolverParams(**{k: v for k, v in self.solver.items()})

    @property
    def K(self) -> int:
        return self.scene.K if self.scene is not None else int(self.generator["K"])

    def solver_params(self, snr_db: float) -> SolverParams:
        # mu follows the SNR unless pinned in the config
        if "mu" in self.solver:
            return SolverParams(**self.solver)
        return SolverParams.for_snr(snr_db, **self.solver)

    def to_dict(self) -> dict:
        d = {"radar": asdict(self.radar), "snr_db": list(self.snr_db), "trials": self.trials,
             "generator": self.generator, "solver": self.solver, "threshold": self.threshold,
             "model_order": self.model_order, "seed": self.seed, "crb": self.crb,
             "workers": self.workers}
        if self.scene is not None:
            d["scene"] = {"targets": [asdict(t) for t in self.scene.targets]}
        return d


def _need(d, key, kind):
    if key not in d:
        raise ConfigError(f"missing field {key!r}")
    v = d[key]
    if kind is int and (not isinstance(v, (int, float)) or isinstance(v, bool) or int(v) != v):
        raise ConfigError(f"field {key!r} must be an integer")
    return v


def config_from_dict(d: dict) -> ExperimentConfig:
    """Parse the experiment JSON layout (see README) into an :class:`ExperimentConfig`."""
    if not isinstance(d, dict):
        raise ConfigError("experiment: expected a JSON object")
    if "radar" in d:
        radar = d["radar"]
        if isinstance(radar, str):
            if radar not in PRESETS:
                raise ConfigError(f"field 'radar': unknown preset {radar!r}")
            radar = PRESETS[radar]
        try:
            cfg = RadarConfig(**radar)
        except TypeError as exc:
            raise ConfigError(f"field 'radar': {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"field 'radar': {exc}") from None
    else:
        cfg = RadarConfig(**PRESETS[DEFAULT_PRESET])
    snr = _need(d, "snr_db", list)
    if not isinstance(snr, list) or not all(isinstance(s, (int, float)) for s in snr):
        raise ConfigError("field 'snr_db' must be a list of numbers")
    trials = int(_need(d, "trials", int))
    scene = None
    if "scene" in d:
        try:
            _, scene = scene_from_dict({**asdict(cfg), **d["scene"]})
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"field 'scene': {exc}") from None
    gen = d.get("generator", {"kind": "reference", "K": 4})
    if scene is None:
        if not isinstance(gen, dict) or "K" not in gen:
            raise ConfigError("field 'generator.K' is required without a fixed scene")
        if gen.get("kind", "random") not in ("reference", "random"):
            raise ConfigError("field 'generator.kind' must be 'reference' or 'random'")
        if gen.get("kind") == "reference" and not 1 <= int(gen["K"]) <= len(REFERENCE_TARGETS):
            raise ConfigError(f"field 'generator.K' must be in 1..{len(REFERENCE_TARGETS)} for kind 'reference'")
    thr = {"strategy": "RUT", "kappa": 5.0, "dac_bits": 12}
    thr.update(d.get("threshold", {}))
    solver = d.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("field 'solver' must be an object")
    unknown = set(solver) - {"mu", "lam", "rho", "tol", "max_iters"}
    if unknown:
        raise ConfigError(f"field 'solver.{sorted(unknown)[0]}' is not a solver parameter")
    try:
        return ExperimentConfig(radar=cfg, snr_db=[float(s) for s in snr], trials=trials,
                                scene=scene, generator=gen, solver=solver, threshold=thr,
                                model_order=d.get("model_order", "known"),
                                seed=int(d.get("seed", 0)), crb=bool(d.get("crb", True)),
                                workers=int(d.get("workers", 1)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(d)


# -- scoring -----------------------------------------------------------------

def wrapped_dist(a, b):
    return np.abs(wrap_freq(np.asarray(a) - np.asarray(b)))


def wrap_phase(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def greedy_match(truth: TargetScene, est: TargetEstimate):
    """Greedy nearest pairs in the wrapped (nsf, ndf) plane, closest first."""
    if truth.K == 0 or est.K == 0:
        return []
    df = wrapped_dist(truth.nsf[:, None], est.nsf[None, :])
    dv = wrapped_dist(truth.ndf[:, None], est.ndf[None, :])
    D = np.hypot(df, dv)
    out = []
    used_t, used_e = set(), set()
    for flat in np.argsort(D, axis=None, kind="stable"):
        i, j = divmod(int(flat), est.K)
        if i in used_t or j in used_e:
            continue
        out.append((i, j))
        used_t.add(i)
        used_e.add(j)
        if len(out) == min(truth.K, est.K):
            break
    return sorted(out)


def detection_success(truth: TargetScene, est: TargetEstimate, config: RadarConfig):
    """Success iff every target has a match within one bin: ``|dnsf| < 1/MN`` and ``|dndf| < 1/Q``.

    Returns ``(success, matches)`` with ``matches`` a list of
    ``(truth_index, estimate_index)`` from :func:`greedy_match`.
    """
    matches = greedy_match(truth, est)
    ok = len(matches) == truth.K
    for i, j in matches:
        if (wrapped_dist(truth.nsf[i], est.nsf[j]) >= 1.0 / config.MN
                or wrapped_dist(truth.ndf[i], est.ndf[j]) >= 1.0 / config.Q):
            ok = False
    return ok, matches


def squared_errors(truth: TargetScene, est: TargetEstimate, matches):
    """Mean squared errors over matched targets for (nsf, ndf, mag, phase)."""
    if not matches:
        return (math.nan,) * 4
    i = np.array([m[0] for m in matches])
    j = np.array([m[1] for m in matches])
    return (float(np.mean(wrapped_dist(truth.nsf[i], est.nsf[j]) ** 2)),
            float(np.mean(wrapped_dist(truth.ndf[i], est.ndf[j]) ** 2)),
            float(np.mean((truth.mag[i] - est.mag[j]) ** 2)),
            float(np.mean(wrap_phase(truth.phase[i] - est.phase[j]) ** 2)))


def recovery_error(X, Xhat) -> float:
    return float(np.linalg.norm(X - Xhat) / np.linalg.norm(X))


# -- data volume -------------------------------------------------------------

def data_volume_report(config: RadarConfig, onebit_bits: int = 1, high_bits: int = 16) -> dict:
    """Bits per CPI for the one-bit, compressed 16-bit and classic 16-bit systems."""
    kept = 2 * config.L * config.R * config.P
    onebit = kept * onebit_bits
    cs = kept * high_bits
    classic = 2 * config.L * config.N * config.Q * high_bits
    return {"onebit_bits": onebit, "cs_bits": cs, "classic_bits": classic,
            "onebit_over_classic": onebit / classic, "onebit_over_cs": onebit / cs}


# -- trials ------------------------------------------------------------------

TRIAL_FIELDS = ("snr_db", "trial", "success", "K_hat", "se_nsf", "se_ndf", "se_mag",
                "se_phase", "recovery_err", "iterations", "converged", "crb_nsf",
                "crb_ndf", "crb_mag", "crb_phase", "seconds")
AGG_FIELDS = ("snr_db", "psd", "mse_nsf", "mse_ndf", "mse_mag", "mse_phase", "recovery_err",
              "crb_nsf", "crb_ndf", "crb_mag", "crb_phase", "mean_iters", "mean_seconds",
              "mse_nsf_all", "mse_ndf_all", "mse_mag_all", "mse_phase_all", "trials")


def trial_scene(cfg: ExperimentConfig, snr_i: int, trial_i: int, sigma: float) -> TargetScene:
    if cfg.scene is not None:
        return cfg.scene.with_sigma(sigma)
    g = cfg.generator
    seed = trial_seed(cfg.seed, snr_i, trial_i, "scene")
    K = int(g["K"])
    if g.get("kind", "random") == "reference":
        rng = np.random.default_rng(seed)
        ph = rng.uniform(0, 2 * np.pi, K)
        return TargetScene([Target(f, v, 1.0, float(p))
                            for (f, v), p in zip(REFERENCE_TARGETS[:K], ph)], sigma)
    return random_scene(K, seed, sigma, tuple(g.get("min_sep", (0.0, 0.0))),
                        tuple(g.get("mag_range", (1.0, 1.0))))


def make_thresholds(strategy: str, y, seed, sigma: float = 0.0, kappa: float = 5.0,
                    dac_bits: int | None = 12, mean=None):
    """Thresholds for one CPI.

    RUT draws both parts uniformly between the smallest and largest
    component of the received data. RGT centres on ``mean`` (a prior
    estimate of the noise-free data) with variance ``kappa * sigma^2``.
    """
    if strategy == "zero":
        return zero_threshold(y.shape)
    if strategy == "RUT":
        lo = float(min(y.real.min(), y.imag.min()))
        hi = float(max(y.real.max(), y.imag.max()))
        t = gen_threshold_rut(lo, hi, y.shape, seed)
    elif strategy == "RGT":
        if mean is None:
            raise ValueError("RGT thresholds need a mean estimate")
        s = math.sqrt(kappa) * sigma
        t = gen_threshold_rgt(mean.real, mean.imag, s, s, seed)
    else:
        raise ValueError(f"unknown threshold strategy {strategy!r}")
    if dac_bits and t.hi > t.lo:
        t = dac_quantize(t, int(dac_bits))
    return t


@dataclass
class CPI:
    """One simulated coherent processing interval and its one-bit data."""

    scene: TargetScene
    masks: object
    S: np.ndarray
    X: np.ndarray
    y: np.ndarray
    thresholds: object
    z: np.ndarray


def simulate_cpi(radar: RadarConfig, scene: TargetScene, seed: int, threshold: dict,
                 params: SolverParams | None = None, snr_i: int = 0, trial_i: int = 0) -> CPI:
    """Masks, waveforms, noisy data, thresholds and sign bits for one trial.

    ``threshold`` holds ``strategy`` (RUT, RGT or zero), ``kappa`` and
    ``dac_bits``. RGT first solves a RUT pass on the same data with
    ``params`` to centre its thresholds.
    """
    from .scene import simulate_received

    masks = draw_masks(radar, trial_seed(seed, snr_i, trial_i, "mask"))
    S = generate_waveforms(radar.M, radar.L, trial_seed(seed, snr_i, trial_i, "wave"))
    X = build_ground_truth(scene, radar)
    y = simulate_received(X, masks, S, scene.sigma, trial_seed(seed, snr_i, trial_i, "noise"))
    strategy = threshold.get("strategy", "RUT")
    bits = threshold.get("dac_bits", 12)
    kappa = float(threshold.get("kappa", 5.0))
    mean = None
    if strategy == "RGT":
        # prior estimate of the noise-free data from a RUT pass on the same CPI
        t_rut = make_thresholds("RUT", y, trial_seed(seed, snr_i, trial_i, "rgt"), dac_bits=bits)
        pre = solve_1b_anm_l1(one_bit_quantize(y, t_rut.h), t_rut.h, masks, S, params)
        mean = apply_F_all(pre.state.X, masks, S)
    thr = make_thresholds(strategy, y, trial_seed(seed, snr_i, trial_i, "threshold"),
                          scene.sigma, kappa, bits, mean)
    return CPI(scene, masks, S, X, y, thr, one_bit_quantize(y, thr.h))


def run_trial(cfg: ExperimentConfig, snr_i: int, trial_i: int, record_timing: bool = False) -> dict:
    snr = cfg.snr_db[snr_i]
    scene = trial_scene(cfg, snr_i, trial_i, snr_to_sigma(snr))
    params = cfg.solver_params(snr)
    row = {"snr_db": snr, "trial": trial_i}
    cpi = None
    t0 = time.perf_counter()
    try:
        cpi = simulate_cpi(cfg.radar, scene, cfg.seed, cfg.threshold, params, snr_i, trial_i)
        res = solve_1b_anm_l1(cpi.z, cpi.thresholds.h, cpi.masks, cpi.S, params)
        K = scene.K if cfg.model_order == "known" else None
        est = extract_targets(res.state, K, snr)
        ok, matches = detection_success(scene, est, cfg.radar)
        se = squared_errors(scene, est, matches)
        row.update(success=int(ok), K_hat=est.K, se_nsf=se[0], se_ndf=se[1], se_mag=se[2],
                   se_phase=se[3], recovery_err=recovery_error(cpi.X, res.state.X),
                   iterations=res.iterations, converged=int(res.converged))
    except (SolverError, DecompositionError, np.linalg.LinAlgError) as exc:
        log.warning("trial %d at %g dB failed: %s", trial_i, snr, exc)
        row.update(success=0, K_hat=0, se_nsf=math.nan, se_ndf=math.nan, se_mag=math.nan,
                   se_phase=math.nan, recovery_err=math.nan, iterations=0, converged=0)
    seconds = time.perf_counter() - t0
    # wall time is opt-in so default outputs stay byte-identical
    row["seconds"] = seconds if record_timing else math.nan
    if cfg.crb and cpi is not None and scene.K > 0 and scene.sigma > 0:
        g = crb_mod.mean_group_crb(crb_mod.fim_onebit(scene, cpi.masks, cpi.S, cpi.thresholds))
        row.update(crb_nsf=g["nsf"], crb_ndf=g["ndf"], crb_mag=g["mag"], crb_phase=g["phase"])
    else:
        row.update(crb_nsf=math.nan, crb_ndf=math.nan, crb_mag=math.nan, crb_phase=math.nan)
    return row


def _trial_job(args):
    cfg_dict, snr_i, trial_i, timing = args
    return run_trial(config_from_dict(cfg_dict), snr_i, trial_i, timing)


def _nanmean(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else math.nan


def aggregate(rows, snr_grid) -> list:
    out = []
    for snr in snr_grid:
        rs = [r for r in rows if r["snr_db"] == snr]
        good = [r for r in rs if r["success"]]
        a = {"snr_db": snr, "psd": len(good) / len(rs) if rs else math.nan, "trials": len(rs)}
        for g in crb_mod.GROUPS:
            a[f"mse_{g}"] = _nanmean([r[f"se_{g}"] for r in good])
            a[f"mse_{g}_all"] = _nanmean([r[f"se_{g}"] for r in rs])
            a[f"crb_{g}"] = _nanmean([r[f"crb_{g}"] for r in rs])
        a["recovery_err"] = _nanmean([r["recovery_err"] for r in rs])
        a["mean_iters"] = _nanmean([r["iterations"] for r in rs])
        a["mean_seconds"] = _nanmean([r["seconds"] for r in rs])
        out.append(a)
    return out


def resolve_workers(requested: int) -> int:
    env = os.environ.get(WORKERS_ENV, "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from None
    return max(1, int(requested))


def run_monte_carlo(cfg: ExperimentConfig, workers: int | None = None,
                    record_timing: bool = False):
    """All trials of an experiment; returns ``(trial_rows, aggregate_rows)``."""
    jobs = [(si, ti) for si in range(len(cfg.snr_db)) for ti in range(cfg.trials)]
    n = resolve_workers(cfg.workers if workers is None else workers)
    if n > 1:
        d = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=n) as ex:
            rows = list(ex.map(_trial_job, [(d, si, ti, record_timing) for si, ti in jobs]))
    else:
        rows = [run_trial(cfg, si, ti, record_timing) for si, ti in jobs]
    # ex.map preserves submission order, so both paths are already sorted
    return rows, aggregate(rows, cfg.snr_db)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def write_rows(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in fields])


def trials_path(path) -> str:
    root, ext = os.path.splitext(str(path))
    return f"{root}_trials{ext or '.csv'}"


def write_monte_carlo(path, rows, agg):
    """Aggregate CSV at ``path`` and per-trial CSV next to it (``*_trials.csv``)."""
    write_rows(path, AGG_FIELDS, agg)
    write_rows(trials_path(path), TRIAL_FIELDS, rows)
