"""File-format layer: scenario CSV round trips, resampling arithmetic,
atomic writes, manifests, and deterministic artifacts.

Expected values are computed by hand or with plain stdlib calls so the
module under test never supplies its own oracle.
"""

import hashlib
import os

import numpy as np
import pytest

from h2mg.dataio import (RESULTS_HEADER, atomic_write_bytes,
                         atomic_write_text, load_reference_set,
                         parse_timeseries_csv, read_manifest, resample,
                         save_reference_set, sha256_file, spawn_seeds,
                         write_manifest, write_results_csv,
                         write_timeseries_csv)
from h2mg.grid import ScenarioSeries
from h2mg.reference import ReferenceSet

CSV_6H = """timestamp,load_kw,solar_kw,wind_kw
2023-01-01T00:00:00,10.0,0.0,5.0
2023-01-01T01:00:00,12.0,0.0,7.0
2023-01-01T02:00:00,14.0,1.0,9.0
2023-01-01T03:00:00,16.0,3.0,11.0
2023-01-01T04:00:00,18.0,2.0,13.0
2023-01-01T05:00:00,20.0,0.0,15.0
"""


def write(tmp_path, text, name="scen.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --------------------------------------------------------------------------
# scenario CSV
# --------------------------------------------------------------------------


def test_parse_timeseries_hand_values(tmp_path):
    scen = parse_timeseries_csv(write(tmp_path, CSV_6H))
    assert scen.n_steps == 6
    assert scen.dt_h == pytest.approx(1.0)
    assert scen.load_kw.tolist() == [10.0, 12.0, 14.0, 16.0, 18.0, 20.0]
    assert scen.solar_kw.tolist() == [0.0, 0.0, 1.0, 3.0, 2.0, 0.0]
    assert scen.wind_kw.tolist() == [5.0, 7.0, 9.0, 11.0, 13.0, 15.0]
    assert str(scen.timestamps[0]) == "2023-01-01T00:00:00"


def test_parse_rejects_wrong_header(tmp_path):
    bad = CSV_6H.replace("load_kw", "demand_kw")
    with pytest.raises(ValueError, match="load_kw"):
        parse_timeseries_csv(write(tmp_path, bad))


def test_parse_names_row_and_column_of_bad_number(tmp_path):
    bad = CSV_6H.replace("14.0", "fourteen")
    with pytest.raises(ValueError) as err:
        parse_timeseries_csv(write(tmp_path, bad))
    msg = str(err.value)
    assert "row 4" in msg          # 1-based including header
    assert "load_kw" in msg
    assert "fourteen" in msg


def test_parse_rejects_negative_power(tmp_path):
    bad = CSV_6H.replace("12.0", "-12.0")
    with pytest.raises(ValueError, match="row 3"):
        parse_timeseries_csv(write(tmp_path, bad))


def test_parse_rejects_nonmonotone_and_nonuniform_timestamps(tmp_path):
    swapped = CSV_6H.replace(
        "2023-01-01T02:00:00", "2023-01-01T00:30:00")
    with pytest.raises(ValueError, match="increas"):
        parse_timeseries_csv(write(tmp_path, swapped))
    gap = CSV_6H.replace("2023-01-01T04:00:00", "2023-01-01T04:30:00")
    with pytest.raises(ValueError, match="spacing"):
        parse_timeseries_csv(write(tmp_path, gap))


def test_timeseries_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(7)
    ts = (np.datetime64("2023-03-01T00:00:00", "s")
          + np.arange(48) * np.timedelta64(3600, "s"))
    scen = ScenarioSeries(ts, rng.uniform(0, 100, 48).round(6),
                          rng.uniform(0, 80, 48).round(6),
                          rng.uniform(0, 60, 48).round(6), label="rt")
    p = tmp_path / "rt.csv"
    write_timeseries_csv(p, scen)
    back = parse_timeseries_csv(p)
    assert np.array_equal(back.load_kw, scen.load_kw)
    assert np.array_equal(back.solar_kw, scen.solar_kw)
    assert np.array_equal(back.wind_kw, scen.wind_kw)
    assert np.array_equal(back.timestamps, scen.timestamps)


# --------------------------------------------------------------------------
# resampling
# --------------------------------------------------------------------------


def test_downsample_means_pairs(tmp_path):
    scen = parse_timeseries_csv(write(tmp_path, CSV_6H))
    coarse = resample(scen, 2.0)
    assert coarse.n_steps == 3
    assert coarse.dt_h == pytest.approx(2.0)
    assert coarse.load_kw.tolist() == [11.0, 15.0, 19.0]
    assert coarse.solar_kw.tolist() == [0.0, 2.0, 1.0]
    assert str(coarse.timestamps[1]) == "2023-01-01T02:00:00"


def test_upsample_repeats_values(tmp_path):
    scen = parse_timeseries_csv(write(tmp_path, CSV_6H))
    fine = resample(scen, 0.5)
    assert fine.n_steps == 12
    assert fine.dt_h == pytest.approx(0.5)
    assert fine.load_kw.tolist()[:4] == [10.0, 10.0, 12.0, 12.0]
    assert str(fine.timestamps[1]) == "2023-01-01T00:30:00"


def test_resample_identity_and_bad_ratio(tmp_path):
    scen = parse_timeseries_csv(write(tmp_path, CSV_6H))
    same = resample(scen, 1.0)
    assert np.array_equal(same.load_kw, scen.load_kw)
    with pytest.raises(ValueError, match="multiple"):
        resample(scen, 0.75)
    with pytest.raises(ValueError, match="multiple"):
        resample(scen, 2.5)


# --------------------------------------------------------------------------
# atomic writes, hashing, manifests
# --------------------------------------------------------------------------


def test_atomic_write_leaves_no_droppings(tmp_path):
    p = tmp_path / "out" / "file.txt"
    atomic_write_text(p, "hello\n")
    assert p.read_text() == "hello\n"
    atomic_write_text(p, "替换\n")
    assert p.read_text() == "替换\n"
    assert os.listdir(p.parent) == ["file.txt"]
    q = tmp_path / "out" / "blob.bin"
    atomic_write_bytes(q, b"\x00\x01")
    assert q.read_bytes() == b"\x00\x01"
    assert sorted(os.listdir(p.parent)) == ["blob.bin", "file.txt"]


def test_sha256_matches_hashlib(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"abc")
    expected = hashlib.sha256(b"abc").hexdigest()
    assert sha256_file(p) == expected
    assert expected.startswith("ba7816bf")   # known digest of b"abc"


def test_manifest_roundtrip_and_determinism(tmp_path):
    f1 = tmp_path / "a.txt"
    f1.write_text("one")
    entries = {"seed": "42", "tool": "h2mg 0.1.0"}
    m1 = tmp_path / "run1.manifest"
    m2 = tmp_path / "run2.manifest"
    write_manifest(m1, entries, files=[f1])
    write_manifest(m2, entries, files=[f1])
    assert m1.read_bytes() == m2.read_bytes()
    back = read_manifest(m1)
    assert back["seed"] == "42"
    assert back["tool"] == "h2mg 0.1.0"
    assert back[f"sha256:{f1.name}"] == hashlib.sha256(b"one").hexdigest()


def test_spawn_seeds_prefix_property():
    a = spawn_seeds(123, 5)
    b = spawn_seeds(123, 3)
    assert a[:3] == b
    assert len(set(a)) == 5
    assert spawn_seeds(124, 5) != a


# --------------------------------------------------------------------------
# reference set and results table
# --------------------------------------------------------------------------


def test_reference_set_roundtrip_and_stable_bytes(tmp_path):
    refset = ReferenceSet(
        labels=("winter", "spring"),
        e_h_kg=np.arange(20.0).reshape(2, 10),
        seg_c=np.tile(np.arange(10) % 4, (2, 1)).astype(np.int64),
        seg_d=np.full((2, 10), -1, dtype=np.int64))
    p1 = tmp_path / "refs1.npz"
    p2 = tmp_path / "refs2.npz"
    save_reference_set(p1, refset)
    save_reference_set(p2, refset)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_reference_set(p1)
    assert tuple(back.labels) == ("winter", "spring")
    assert np.array_equal(back.e_h_kg, refset.e_h_kg)
    assert np.array_equal(back.seg_c, refset.seg_c)
    assert np.array_equal(back.seg_d, refset.seg_d)
    assert back.seg_c.dtype == np.int64


def test_results_csv_golden_bytes(tmp_path):
    rows = [
        {"method": "M0", "cost_usd": 70543.54321, "dg_mwh": 208.1234,
         "lol_mwh": 0.0, "rmse_pct": None, "step_ms": 0.0},
        {"method": "M1", "cost_usd": 71200.0, "dg_mwh": 215.6789,
         "lol_mwh": 0.2567, "rmse_pct": 4.321, "step_ms": 12.345},
    ]
    p = tmp_path / "results.csv"
    write_results_csv(p, rows)
    expected = (
        "method,cost_usd,dg_mwh,lol_mwh,rmse_pct,step_ms\n"
        "M0,70543.54,208.123,0.000,,0.00\n"
        "M1,71200.00,215.679,0.257,4.32,12.35\n"
    )
    assert p.read_text() == expected
    assert ",".join(RESULTS_HEADER) == expected.splitlines()[0]
