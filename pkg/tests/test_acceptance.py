"""Acceptance criteria 1-12, each at its stated tolerance.

Criteria 5-11 share one batch of M = 400 desk-scale replicates (the
``desk_table`` fixture).  Every test prints one ``criterion N ...`` line; the
lines are repeated in the terminal summary.
"""

import json
import math

import pytest

from hyperdsf import stats
from hyperdsf.cli import main
from hyperdsf.stats import ExperimentConfig
from hyperdsf.suites import dilation_identity, geometry_suite, structure_suite

from conftest import report

D2 = ExperimentConfig(
    dim=2,
    R=8.0,
    y_lo=math.exp(-2.0),
    y_hi=math.exp(3.0),
    region=4.0,
    levels=(0.5,),
    bottom_margin=2.0,
)


@pytest.fixture(scope="module")
def geometry(desk_config):
    return {(r.check, json.dumps(r.params, sort_keys=True)): r for r in geometry_suite(desk_config)}


def _by_name(results, name):
    return [r for k, r in results.items() if k[0] == name]


def test_criterion_01_geometry_oracles(geometry):
    rows = _by_name(geometry, "distance_oracle") + _by_name(geometry, "vertical_distance") + _by_name(geometry, "horizontal_bound")
    ok = len(rows) == 3 and all(r.passed for r in rows)
    detail = "; ".join(f"{r.check} {r.estimate:.3g} (bound {r.bound:g})" for r in rows)
    report(1, "geometry oracles", ok, detail)
    assert ok


def test_criterion_02_horodistance(geometry):
    (row,) = _by_name(geometry, "horodistance_limit")
    errs = row.params["errors"]
    report(2, "horodistance limit", row.passed, "errors " + ", ".join(f"{e:.2e}" for e in errs))
    assert row.passed


def test_criterion_03_volumes(geometry):
    mc = _by_name(geometry, "ball_volume_mc")
    asym = _by_name(geometry, "volume_asymptotics")
    ok = len(mc) == 3 and len(asym) == 3 and all(r.passed for r in mc + asym)
    detail = "; ".join(f"rho={r.params['rho']:g} mc {r.estimate:.4f}+-{r.std_error:.4f} vs {r.bound:.4f}" for r in mc)
    detail += "; " + ", ".join(f"d={r.params['dim']} ratio-1 {r.estimate - 1:.1e}" for r in asym)
    report(3, "ball volumes", ok, detail)
    assert ok


def test_criterion_04_forest_oracle(desk_config):
    rows = structure_suite(desk_config)
    ok = all(r.passed for r in rows)
    report(4, "forest oracle", ok, "; ".join(f"{r.check} {r.estimate:g} over {r.params}" for r in rows))
    assert ok


def test_criterion_05_intensity_scaling(desk_config, desk_table):
    d1 = stats.check_intensity_scaling(desk_config, table=desk_table)
    d2 = stats.check_intensity_scaling(D2)
    dil = [dilation_identity(desk_config, t) for t in desk_config.levels]
    ok = all(r.passed for r in d1 + d2 + dil)
    detail = ", ".join(f"d={r.params['dim']} t={r.params['t']:g}: {r.estimate:.4f}+-{r.std_error:.4f}" for r in d1 + d2)
    detail += "; dilation mismatches " + "/".join(f"{r.estimate:g}" for r in dil)
    detail += f" max abscissa error {max(r.params['max_abscissa_error'] for r in dil):.1e}"
    report(5, "intensity scaling", ok, detail)
    assert ok


def test_criterion_06_descendants(desk_config, desk_table):
    rows = stats.check_descendants(desk_config, desk_table)
    ok = all(r.passed for r in rows)
    report(6, "expected descendants", ok, "; ".join(f"h={r.params['h']:g}: {r.estimate:.4f}+-{r.std_error:.4f} vs {r.bound:.4f}" for r in rows))
    assert ok


def test_criterion_07_cell_volume(desk_config, desk_table):
    r = stats.check_cell_volume(desk_config, desk_table)
    report(7, "cell volume", r.passed, f"{r.estimate:.4f} vs 1/alpha0 {r.bound:.4f} +-{r.std_error:.4f}")
    assert r.passed


def test_criterion_08_mass_transport(desk_config, desk_table):
    r = stats.transport_balance(desk_config, desk_table)
    report(8, "mass transport", r.passed, f"out-in {r.estimate:.4f} +-{r.std_error:.4f}")
    assert r.passed


def test_criterion_09_coalescence(desk_config, desk_table):
    rows = stats.check_coalescence(desk_config, desk_table)
    ok = len(rows) == 4 and all(r.passed for r in rows)
    detail = "; ".join(f"t={r.params['t']:g}: {r.params['exceed']}/{r.params['n']} upper {r.estimate + r.std_error:.4f} <= {r.bound:.4f}" for r in rows)
    report(9, "coalescence tail", ok, detail)
    assert ok


def test_criterion_10_fluctuations(desk_config, desk_table):
    fwd = stats.check_forward(desk_config, desk_table)
    bwd = stats.check_backward(desk_config, desk_table)
    ok = fwd.passed and bwd.passed
    detail = f"forward ratio {fwd.estimate:.3f} <= 2; backward late increment {bwd.estimate:.4f} < early {bwd.bound:.4f}"
    report(10, "fluctuation boundedness", ok, detail)
    assert ok


def test_criterion_11_branches(desk_config, desk_table):
    surv = stats.check_survivors(desk_config, desk_table)
    sep = stats.check_separating(desk_config, desk_table)
    ok = surv.passed and all(r.passed for r in sep)
    detail = "survivors " + ", ".join(f"{v:.4f}" for v in surv.params["values"])
    detail += "; separating " + ", ".join(f"t={r.params['t']:g}: {r.estimate:.4f} <= {r.bound:.4f}" for r in sep)
    report(11, "bi-infinite branch proxy", ok, detail)
    assert ok


def test_criterion_12_determinism(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("R = 20.0\ny_lo = 0.0183156388887342\ny_hi = 54.598150033144236\nreplicates = 20\nregion = 6.0\nmt_region = 3.0\n"
                   "levels = [0.5]\ndepths = [1.0]\nbottom_margin = 2.0\ncoalescence_base = -1.5\nt_grid = [1.0, 2.0]\n")
    files = {}
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["sample", "--r", "5", "--ylo", "0.1", "--yhi", "10", "--seed", "7", "--out", str(d / "cloud.json")]) == 0
        assert main(["build", "--in", str(d / "cloud.json"), "--out", str(d / "forest.json")]) == 0
        threads = "1" if run == "a" else "2"
        rc = main(["verify", "--config", str(cfg), "--suite", "coalescence", "--out", str(d / "summary.json"), "--threads", threads])
        assert rc in (0, 1)
        files[run] = {p.name: p.read_bytes() for p in d.iterdir()}
    data = ["cloud.json", "forest.json", "summary.json", "summary.csv"]
    same = [n for n in data if files["a"][n] == files["b"][n]]
    # manifests differ only by wall time and the run directory in output paths
    ha = {n: json.loads(files["a"][n])["output_sha256"] for n in files["a"] if n.endswith(".manifest.json")}
    hb = {n: json.loads(files["b"][n])["output_sha256"] for n in files["b"] if n.endswith(".manifest.json")}
    hashes_match = all(sorted(ha[n].values()) == sorted(hb[n].values()) for n in ha)
    ok = same == data and hashes_match
    report(12, "determinism", ok, f"byte-identical: {', '.join(same)}; manifest output hashes match: {hashes_match}")
    assert ok
