import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from onebit_mimo import crb as crb_mod
from onebit_mimo.cli import main
from onebit_mimo.harness import trial_seed
from onebit_mimo.sampling import draw_masks
from onebit_mimo.scene import RadarConfig, Target, TargetScene, generate_waveforms


def write_json(path, d):
    path.write_text(json.dumps(d))
    return str(path)


def scene_json(tmp_path, sigma=0.0, targets=None, **radar):
    d = {"M": 4, "N": 4, "Q": 16, "L": 4, "sigma": sigma,
         "targets": targets or [{"nsf": 0.137, "ndf": -0.221, "mag": 1.0, "phase": 0.4}]}
    d.update(radar)
    return write_json(tmp_path / "scene.json", d)


def read_crb(path):
    lines = [l for l in open(path) if not l.startswith("#")]
    return {(r["param_name"], int(r["index"])): float(r["crb_value"]) for r in csv.DictReader(lines)}


def test_simulate_then_solve_roundtrip(tmp_path):
    s = scene_json(tmp_path)
    data = str(tmp_path / "d.csv")
    assert main(["simulate", "--scene", s, "--out", data, "--seed", "3"]) == 0
    assert (tmp_path / "d.meta.json").exists()
    out = str(tmp_path / "e.csv")
    trace = str(tmp_path / "t.csv")
    assert main(["solve", "--data", data, "--out", out, "--K", "1", "--trace", trace]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1 and rows[0]["trial"] == "0"
    assert abs(float(rows[0]["nsf_hat"]) - 0.137) < 1 / 16
    assert abs(float(rows[0]["ndf_hat"]) + 0.221) < 1 / 16
    assert next(csv.reader(open(trace))) == ["iter", "rel_change_X", "primal_residual", "min_eig_H"]
    # model order estimated when --K is omitted
    assert main(["solve", "--data", data, "--out", out]) == 0
    assert len(list(csv.DictReader(open(out)))) == 1


def test_crb_rgt_dispatch(tmp_path):
    s = scene_json(tmp_path, sigma=0.5, P=9, T=4, R=4)
    out = str(tmp_path / "c.csv")
    assert main(["crb", "--scene", s, "--out", out, "--rgt", "--kappa", "5", "--seed", "2"]) == 0
    got = read_crb(out)
    cfg = RadarConfig(4, 4, 16, 4, 4, 4, 9)
    masks = draw_masks(cfg, trial_seed(2, 0, 0, "mask"))
    S = generate_waveforms(4, 4, trial_seed(2, 0, 0, "wave"))
    scene = TargetScene([Target(0.137, -0.221, 1.0, 0.4)], 0.5)
    ref = crb_mod.expected_fim_rgt(scene, masks, S, np.sqrt(5) * 0.5)
    np.testing.assert_allclose([got[("nsf", 0)], got[("phase", 0)]],
                               [ref.crb_diag[0], ref.crb_diag[3]], rtol=1e-10)
    unq = crb_mod.fim_unquantized(scene, masks, S).crb_diag
    # constant weight: CRBs scale by 1 / (2 / (pi sqrt(11)))
    np.testing.assert_allclose(ref.crb_diag * crb_mod.rgt_weight_factor(5), unq, rtol=1e-10)
    assert "# ordering: nsf,ndf,mag,phase" in open(out).read()


@pytest.mark.parametrize("flags", [["--rut"], ["--zero"], ["--unquantized"], ["--rut", "--unknown-sigma"],
                                   ["--rgt", "--unknown-sigma"], ["--unquantized", "--unknown-sigma"]])
def test_crb_variants(tmp_path, flags):
    s = scene_json(tmp_path, sigma=0.5, P=9, T=4, R=4)
    out = str(tmp_path / "c.csv")
    assert main(["crb", "--scene", s, "--out", out] + flags) == 0
    got = read_crb(out)
    assert all(v > 0 for v in got.values())
    assert (("sigma", 0) in got) == ("--unknown-sigma" in flags)


def test_crb_strict_singular_exits_3(tmp_path):
    s = scene_json(tmp_path, sigma=0.5, targets=[{"nsf": 0.1, "ndf": 0.1, "mag": 0.0}])
    out = str(tmp_path / "c.csv")
    assert main(["crb", "--scene", s, "--out", out]) == 0
    assert main(["crb", "--scene", s, "--out", out, "--strict"]) == 3


def test_montecarlo_deterministic(tmp_path):
    e = write_json(tmp_path / "e.json", {"radar": {"M": 2, "N": 2, "Q": 6, "L": 2, "P": 4},
                                         "snr_db": [5, 20], "trials": 2,
                                         "generator": {"kind": "random", "K": 1},
                                         "solver": {"max_iters": 150}})
    outs = []
    for i, extra in enumerate(([], [], ["--workers", "2"])):
        out = tmp_path / f"m{i}.csv"
        assert main(["montecarlo", "--config", e, "--out", str(out), "--seed", "7"] + extra) == 0
        outs.append(out.read_bytes() + (tmp_path / f"m{i}_trials.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    header = outs[0].split(b"\n")[0].decode().split(",")
    assert header[:3] == ["snr_db", "psd", "mse_nsf"]
    out = tmp_path / "m9.csv"
    assert main(["montecarlo", "--config", e, "--out", str(out), "--seed", "8"]) == 0
    assert out.read_bytes() != (tmp_path / "m0.csv").read_bytes()


def test_report(tmp_path, capsys):
    assert main(["report"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert float(row["onebit_over_classic"]) == pytest.approx(0.02893518519)
    assert float(row["onebit_over_cs"]) == 0.0625
    out = tmp_path / "r.csv"
    assert main(["report", "--preset", "setting1", "--out", str(out)]) == 0
    assert out.exists()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["crb", "--scene", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    assert "invalid JSON" in capsys.readouterr().err
    s = write_json(tmp_path / "s.json", {"M": 2, "N": 2, "Q": 4})
    assert main(["simulate", "--scene", s, "--out", str(tmp_path / "x.csv")]) == 2
    assert "'L'" in capsys.readouterr().err
    s = write_json(tmp_path / "s2.json", {"M": 2, "N": 2, "Q": 4, "L": 2, "targets": [{"nsf": 0.1}]})
    assert main(["simulate", "--scene", s, "--out", str(tmp_path / "x.csv")]) == 2
    assert "targets[0].ndf" in capsys.readouterr().err
    e = write_json(tmp_path / "e.json", {"snr_db": [0]})
    assert main(["montecarlo", "--config", e, "--out", str(tmp_path / "m.csv")]) == 2
    assert "trials" in capsys.readouterr().err
    assert main(["nosuch"]) == 2
    assert main(["crb", "--scene", str(tmp_path / "missing.json"), "--out", "x"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "onebit_mimo", "report", "--preset", "full"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "onebit_over_cs" in r.stdout
