"""Command-line interface: subcommands, exit codes, manifests, and
byte-level reproducibility of artifacts.

`main(argv)` always returns an exit code: 0 success, 2 usage, 3 bad input
data or configuration, 4 failed computation.  Everything here runs
in-process on tiny scenarios so the whole file stays fast.
"""

import numpy as np
import pytest

from h2mg.cli import main, spec_from_config
from h2mg.dataio import (load_reference_set, parse_timeseries_csv,
                         read_manifest)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def scen_csv(tmp_path):
    p = tmp_path / "scen.csv"
    assert run("synth-data", "--seed", 3, "--days", 2, "--out", p) == 0
    return p


# --------------------------------------------------------------------------
# synth-data and fit-curves
# --------------------------------------------------------------------------


def test_synth_data_writes_parseable_deterministic_csv(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    c = tmp_path / "c.csv"
    assert run("synth-data", "--seed", 5, "--days", 3, "--out", a) == 0
    assert run("synth-data", "--seed", 5, "--days", 3, "--out", b) == 0
    assert run("synth-data", "--seed", 6, "--days", 3, "--out", c) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    scen = parse_timeseries_csv(a)
    assert scen.n_steps == 72
    assert scen.dt_h == pytest.approx(1.0)


def test_fit_curves_reports_segments_and_errors(tmp_path):
    out = tmp_path / "curves.txt"
    assert run("fit-curves", "--out", out) == 0
    text = out.read_text()
    assert text.count("charge") >= 4 and text.count("discharge") >= 4
    assert "rmse" in text
    again = tmp_path / "curves2.txt"
    assert run("fit-curves", "--out", again) == 0
    assert out.read_bytes() == again.read_bytes()


# --------------------------------------------------------------------------
# gen-refs and simulate
# --------------------------------------------------------------------------


def test_gen_refs_writes_loadable_set_with_manifest(tmp_path, scen_csv):
    refs = tmp_path / "refs.npz"
    assert run("gen-refs", "--scenario", scen_csv, "--variants", 1,
               "--seed", 9, "--out", refs) == 0
    refset = load_reference_set(refs)
    assert len(refset.labels) == 2            # base + 1 variant
    assert refset.e_h_kg.shape == (2, 48)
    man = read_manifest(refs.with_suffix(".manifest"))
    assert man["seed"] == "9"
    assert "sha256:scen.csv" in man
    assert "sha256:refs.npz" in man


def test_simulate_single_method_writes_results_row(tmp_path, scen_csv):
    out = tmp_path / "res.csv"
    assert run("simulate", "--scenario", scen_csv, "--method", "M4",
               "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,cost_usd,dg_mwh,lol_mwh,rmse_pct,step_ms"
    assert lines[1].startswith("M4,")
    step_ms = lines[1].split(",")[5]
    assert float(step_ms) > 0.0               # measured timing by default


def test_simulate_tracking_method_requires_refs(tmp_path, scen_csv):
    out = tmp_path / "res.csv"
    assert run("simulate", "--scenario", scen_csv, "--method", "M1",
               "--out", out) == 3
    assert not out.exists()


def test_missing_scenario_file_is_a_data_error(tmp_path):
    assert run("simulate", "--scenario", tmp_path / "nope.csv",
               "--method", "M4", "--out", tmp_path / "r.csv") == 3


def test_unknown_subcommand_and_bad_flags_are_usage_errors(tmp_path):
    assert run("frobnicate") == 2
    assert run("simulate", "--scenario") == 2


# --------------------------------------------------------------------------
# compare: the reproducibility contract
# --------------------------------------------------------------------------


def test_compare_twice_is_byte_identical(tmp_path, scen_csv):
    refs = tmp_path / "refs.npz"
    assert run("gen-refs", "--scenario", scen_csv, "--variants", 1,
               "--seed", 4, "--out", refs) == 0
    d1 = tmp_path / "run1"
    d2 = tmp_path / "run2"
    for d in (d1, d2):
        assert run("compare", "--scenario", scen_csv, "--methods", "M0,M4,M1",
                   "--refs", refs, "--out-dir", d) == 0
    for name in ["results.csv", "results.jsonl", "run.manifest"]:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name
    lines = (d1 / "results.csv").read_text().splitlines()
    assert [row.split(",")[0] for row in lines] == ["method", "M0", "M4", "M1"]
    assert all(row.split(",")[5] == "0.00" for row in lines[1:])  # zero timing
    man = read_manifest(d1 / "run.manifest")
    assert man["methods"] == "M0,M4,M1"
    assert "sha256:results.csv" in man


def test_compare_emits_plotdata_per_method(tmp_path, scen_csv):
    refs = tmp_path / "refs.npz"
    assert run("gen-refs", "--scenario", scen_csv, "--variants", 1,
               "--seed", 4, "--out", refs) == 0
    d = tmp_path / "cmp"
    assert run("compare", "--scenario", scen_csv, "--methods", "M0,M4",
               "--refs", refs, "--out-dir", d, "--emit", "plotdata") == 0
    plot = (d / "plotdata_M4.csv").read_text().splitlines()
    assert plot[0] == "timestamp,e_b_kwh,e_h_kg,p_d_kw,p_l_kw"
    assert len(plot) == 49


def test_compare_rejects_unknown_method_label(tmp_path, scen_csv):
    assert run("compare", "--scenario", scen_csv, "--methods", "M0,M9",
               "--out-dir", tmp_path / "x") == 3


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------


def test_spec_config_overrides_fields(tmp_path):
    cfg = tmp_path / "spec.cfg"
    cfg.write_text("""
[battery]
e_max_kwh = 200
p_max_kw = 25

[hydrogen]
e0_frac = 0.25

[costs]
c_d = 0.45
""")
    spec = spec_from_config(cfg)
    assert spec.battery.e_max_kwh == 200.0
    assert spec.battery.p_max_kw == 25.0
    assert spec.hydrogen.e0_frac == 0.25
    assert spec.costs.c_d == 0.45
    assert spec.diesel.p_max_kw == 50.0      # untouched defaults survive
    assert spec.charge_curve is not None     # curves attached


def test_spec_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "spec.cfg"
    cfg.write_text("[battery]\nvolume_l = 9\n")
    with pytest.raises(ValueError, match="volume_l"):
        spec_from_config(cfg)
    cfg.write_text("[warp]\nfactor = 9\n")
    with pytest.raises(ValueError, match="warp"):
        spec_from_config(cfg)


def test_simulate_honors_spec_config(tmp_path, scen_csv):
    cfg = tmp_path / "spec.cfg"
    # no diesel at all: the tiny scenario must shed during deficits
    cfg.write_text("[diesel]\np_max_kw = 0\nramp_kw_per_h = 0\n")
    out_base = tmp_path / "base.csv"
    out_cfg = tmp_path / "nodiesel.csv"
    assert run("simulate", "--scenario", scen_csv, "--method", "M4",
               "--out", out_base) == 0
    assert run("simulate", "--scenario", scen_csv, "--method", "M4",
               "--spec", cfg, "--out", out_cfg) == 0
    lol_base = float(out_base.read_text().splitlines()[1].split(",")[3])
    lol_cfg = float(out_cfg.read_text().splitlines()[1].split(",")[3])
    assert lol_cfg > lol_base


# --------------------------------------------------------------------------
# sweep and bench-regret
# --------------------------------------------------------------------------


def test_sweep_fans_one_master_seed_into_rows(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--seed", 11, "--count", 2, "--days", 2,
               "--method", "M4", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("seed,method,cost_usd")
    assert len(lines) == 3
    seeds = {row.split(",")[0] for row in lines[1:]}
    assert len(seeds) == 2
    again = tmp_path / "sweep2.csv"
    assert run("sweep", "--seed", 11, "--count", 2, "--days", 2,
               "--method", "M4", "--out", again) == 0
    assert out.read_bytes() == again.read_bytes()


def test_bench_regret_writes_slope_table(tmp_path):
    out = tmp_path / "regret.csv"
    assert run("bench-regret", "--horizons", "64,128,256", "--seed", 1,
               "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "horizon,regret,bound"
    assert len(lines) == 4
    regs = [float(r.split(",")[1]) for r in lines[1:]]
    assert all(np.isfinite(regs))
