"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import crb as crb_mod
from . import harness
from .anm_solver import SolverError, SolverParams, solve_1b_anm_l1, write_trace_csv
from .sampling import MaskSet, read_onebit_csv, write_onebit_csv
from .scene import (RadarConfig, build_ground_truth, generate_waveforms, scene_from_dict,
                    scene_to_dict, sigma_to_snr)
from .spectral import (DecompositionError, estimate_rows, extract_targets,
                       write_estimates_csv)

log = logging.getLogger("onebit_mimo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise harness.ConfigError(f"{path}: invalid JSON ({exc})") from None


def _load_scene(path):
    try:
        return scene_from_dict(_read_json(path))
    except harness.ConfigError:
        raise
    except KeyError as exc:
        raise harness.ConfigError(f"{path}: missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise harness.ConfigError(f"{path}: {exc}") from None


def _load_params(path, snr_db=float("inf")) -> SolverParams:
    d = _read_json(path) if path else {}
    if not isinstance(d, dict):
        raise harness.ConfigError(f"{path}: expected a JSON object")
    unknown = set(d) - {"mu", "lam", "rho", "tol", "max_iters"}
    if unknown:
        raise harness.ConfigError(f"{path}: field {sorted(unknown)[0]!r} is not a solver parameter")
    try:
        return SolverParams(**d) if "mu" in d else SolverParams.for_snr(snr_db, **d)
    except (TypeError, ValueError) as exc:
        raise harness.ConfigError(f"{path}: {exc}") from None


def _strategy(args) -> str:
    for name in ("rgt", "zero", "unquantized"):
        if getattr(args, name, False):
            return name.upper() if name == "rgt" else name
    return "RUT"


def meta_path(data_path) -> str:
    return os.path.splitext(str(data_path))[0] + ".meta.json"


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    config, scene = _load_scene(args.scene)
    strategy = _strategy(args)
    if strategy == "unquantized":
        raise harness.ConfigError("simulate writes one-bit data; --unquantized is not allowed")
    params = _load_params(args.params, sigma_to_snr(scene.sigma))
    thr_cfg = {"strategy": strategy, "kappa": args.kappa, "dac_bits": args.dac_bits}
    cpi = harness.simulate_cpi(config, scene, args.seed, thr_cfg, params)
    write_onebit_csv(args.out, cpi.masks, cpi.z, cpi.thresholds.h)
    meta = {"scene": scene_to_dict(config, scene), "seed": args.seed, "threshold": thr_cfg,
            "masks": {"pulses": cpi.masks.pulses.tolist(), "tx": cpi.masks.tx.tolist(),
                      "rx": cpi.masks.rx.tolist()}}
    with open(meta_path(args.out), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_solve(args) -> int:
    mpath = args.meta or meta_path(args.data)
    meta = _read_json(mpath)
    try:
        config, scene = scene_from_dict(meta["scene"])
        m = meta["masks"]
        masks = MaskSet(config, m["pulses"], m["tx"], m["rx"])
        seed = int(meta["seed"])
    except KeyError as exc:
        raise harness.ConfigError(f"{mpath}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise harness.ConfigError(f"{mpath}: {exc}") from None
    snr = args.snr if args.snr is not None else sigma_to_snr(scene.sigma)
    params = _load_params(args.params, snr)
    S = generate_waveforms(config.M, config.L, harness.trial_seed(seed, 0, 0, "wave"))
    try:
        z, h = read_onebit_csv(args.data, masks)
    except (KeyError, ValueError) as exc:
        raise harness.ConfigError(f"{args.data}: {exc}") from None
    res = solve_1b_anm_l1(z, h, masks, S, params, trace_every=1 if args.trace else 0)
    if args.trace:
        write_trace_csv(args.trace, res)
    K = None if args.K is None or args.K < 0 else args.K
    est = extract_targets(res.state, K, snr)
    write_estimates_csv(args.out, estimate_rows(0, est))
    if not res.converged:
        log.warning("solver stopped at the iteration cap (%d)", res.iterations)
    return EXIT_OK


def cmd_crb(args) -> int:
    config, scene = _load_scene(args.scene)
    if not scene.sigma > 0:
        raise harness.ConfigError(f"{args.scene}: field 'sigma' must be > 0 for a CRB")
    if scene.K == 0:
        raise harness.ConfigError(f"{args.scene}: field 'targets' must be nonempty for a CRB")
    strategy = _strategy(args)
    unknown = args.unknown_sigma
    from .sampling import apply_F_all, draw_masks, gen_threshold_rgt, gen_threshold_rut, zero_threshold

    masks = draw_masks(config, harness.trial_seed(args.seed, 0, 0, "mask"))
    S = generate_waveforms(config.M, config.L, harness.trial_seed(args.seed, 0, 0, "wave"))
    r = apply_F_all(build_ground_truth(scene, config), masks, S)
    lo = float(min(r.real.min(), r.imag.min()))
    hi = float(max(r.real.max(), r.imag.max()))
    tseed = harness.trial_seed(args.seed, 0, 0, "threshold")
    spread = np.sqrt(args.kappa) * scene.sigma
    meta = {"strategy": strategy, "sigma": "unknown" if unknown else "known",
            "kappa": args.kappa if strategy == "RGT" else "", "seed": args.seed}
    if strategy == "unquantized":
        f = (crb_mod.fim_unquantized_unknown_sigma if unknown else crb_mod.fim_unquantized)(scene, masks, S)
    elif strategy == "zero":
        fn = crb_mod.fim_onebit_unknown_sigma if unknown else crb_mod.fim_onebit
        f = fn(scene, masks, S, zero_threshold(r.shape))
    elif not unknown:
        # expected FIMs over the threshold distribution, with the Gaussian weight approximation
        if strategy == "RUT":
            f = crb_mod.expected_fim_rut(scene, masks, S, lo, hi)
            meta.update(h_min=lo, h_max=hi, fim="expected (approx weight)")
        else:
            f = crb_mod.expected_fim_rgt(scene, masks, S, spread, spread)
            meta.update(fim="expected (approx weight)")
    else:
        # no closed-form expectation with unknown sigma: use one seeded threshold draw
        if strategy == "RUT":
            thr = gen_threshold_rut(lo, hi, r.shape, tseed)
        else:
            thr = gen_threshold_rgt(r.real, r.imag, spread, spread, tseed)
        f = crb_mod.fim_onebit_unknown_sigma(scene, masks, S, thr)
        meta.update(fim="single threshold draw")
    crb_mod.write_crb_csv(args.out, f, meta)
    return EXIT_NUMERIC if f.singular and args.strict else EXIT_OK


def cmd_montecarlo(args) -> int:
    d = _read_json(args.config)
    if not isinstance(d, dict):
        raise harness.ConfigError(f"{args.config}: expected a JSON object")
    if args.seed is not None:
        d["seed"] = args.seed
    if args.params:
        d["solver"] = _read_json(args.params)
    try:
        cfg = harness.config_from_dict(d)
    except harness.ConfigError as exc:
        raise harness.ConfigError(f"{args.config}: {exc}") from None
    rows, agg = harness.run_monte_carlo(cfg, args.workers, args.record_timing)
    harness.write_monte_carlo(args.out, rows, agg)
    return EXIT_OK


REPORT_FIELDS = ("M", "N", "Q", "L", "T", "R", "P", "onebit_bits", "cs_bits", "classic_bits",
                 "onebit_over_classic", "onebit_over_cs")


def cmd_report(args) -> int:
    if args.scene:
        config, _ = _load_scene(args.scene)
    else:
        if args.preset not in harness.PRESETS:
            raise harness.ConfigError(f"unknown preset {args.preset!r}")
        config = RadarConfig(**harness.PRESETS[args.preset])
    rep = harness.data_volume_report(config)
    row = {k: getattr(config, k) for k in "MNQLTRP"}
    row.update(rep)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        w.writerow([f"{row[k]:.10g}" if isinstance(row[k], float) else row[k] for k in REPORT_FIELDS])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _threshold_flags(p, allow_unquantized=False):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rut", action="store_true", help="random uniform thresholds (default)")
    g.add_argument("--rgt", action="store_true", help="random Gaussian thresholds")
    g.add_argument("--zero", action="store_true", help="zero thresholds")
    if allow_unquantized:
        g.add_argument("--unquantized", action="store_true", help="unquantized data bound")
    p.add_argument("--kappa", type=float, default=5.0,
                   help="RGT threshold variance as a multiple of sigma^2")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onebit-mimo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="scene JSON -> one-bit data CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="solver parameters JSON (used by the RGT prior pass)")
    p.add_argument("--dac-bits", type=int, default=12)
    _threshold_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="one-bit data CSV -> estimates CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--meta", help="metadata written by simulate (default: next to --data)")
    p.add_argument("--out", required=True)
    p.add_argument("--params")
    p.add_argument("--K", type=int, default=None, help="number of targets (default: estimate)")
    p.add_argument("--snr", type=float, default=None, help="SNR in dB for the defaults")
    p.add_argument("--trace", help="write per-iteration solver trace CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("crb", help="scene JSON -> CRB CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _threshold_flags(p, allow_unquantized=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--known-sigma", action="store_true", help="noise level known (default)")
    g.add_argument("--unknown-sigma", action="store_true", help="noise level estimated jointly")
    p.add_argument("--strict", action="store_true", help="exit 3 on a singular FIM")
    p.set_defaults(func=cmd_crb)

    p = sub.add_parser("montecarlo", help="experiment JSON -> metrics CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--params", help="solver parameters JSON (overrides the config)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--record-timing", action="store_true",
                   help="fill the wall-time columns (outputs are then not reproducible)")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("report", help="data-volume ratios")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scene")
    g.add_argument("--preset", default="full")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SolverError, DecompositionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (harness.ConfigError, KeyError, ValueError, TypeError, OSError) as exc:
        msg = f"missing field {exc.args[0]!r}" if isinstance(exc, KeyError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
