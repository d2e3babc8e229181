"""File formats and reproducibility plumbing.

Scenario time series travel as four-column CSV; results tables and run
manifests are plain text with pinned numeric formatting; reference sets are
uncompressed ``.npz``.  Every writer goes through an atomic temp-file +
rename so an interrupted run never leaves a half-written artifact, and the
same inputs always produce byte-identical files (no wall-clock timestamps,
no dict-order dependence), which is what makes reruns diffable.
"""

from __future__ import annotations

import csv
import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import ScenarioSeries
from .reference import ReferenceSet

__all__ = [
    "TIMESERIES_HEADER", "RESULTS_HEADER",
    "parse_timeseries_csv", "write_timeseries_csv", "resample",
    "atomic_write_text", "atomic_write_bytes", "sha256_file",
    "write_manifest", "read_manifest", "spawn_seeds",
    "save_reference_set", "load_reference_set", "write_results_csv",
]

TIMESERIES_HEADER = ("timestamp", "load_kw", "solar_kw", "wind_kw")
RESULTS_HEADER = ("method", "cost_usd", "dg_mwh", "lol_mwh", "rmse_pct",
                  "step_ms")

# pinned column formats: parsing them back loses nothing we report on
_RESULTS_FORMATS = {"cost_usd": "{:.2f}", "dg_mwh": "{:.3f}",
                    "lol_mwh": "{:.3f}", "rmse_pct": "{:.2f}",
                    "step_ms": "{:.2f}"}


# --------------------------------------------------------------------------
# atomic primitives
# --------------------------------------------------------------------------


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# --------------------------------------------------------------------------
# scenario CSV
# --------------------------------------------------------------------------


def parse_timeseries_csv(path: str | Path) -> ScenarioSeries:
    """Read a scenario: strict header, strictly increasing and uniformly
    spaced timestamps, finite non-negative powers.  Errors name the 1-based
    file row (header included) and the offending column."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != TIMESERIES_HEADER:
            raise ValueError(
                f"{path}: header must be {','.join(TIMESERIES_HEADER)!r}, "
                f"got {','.join(header)!r}")
        stamps: list[np.datetime64] = []
        cols: dict[str, list[float]] = {k: [] for k in TIMESERIES_HEADER[1:]}
        for i, row in enumerate(reader):
            rowno = i + 2
            if len(row) != 4:
                raise ValueError(
                    f"{path}: row {rowno}: expected 4 fields, got {len(row)}")
            try:
                stamps.append(np.datetime64(row[0].strip(), "s"))
            except ValueError:
                raise ValueError(
                    f"{path}: row {rowno}, column 'timestamp': "
                    f"cannot parse {row[0]!r}") from None
            for name, cell in zip(TIMESERIES_HEADER[1:], row[1:]):
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {rowno}, column {name!r}: "
                        f"cannot parse {cell!r} as a number") from None
                if not np.isfinite(value) or value < 0.0:
                    raise ValueError(
                        f"{path}: row {rowno}, column {name!r}: "
                        f"power must be finite and >= 0, got {cell}")
                cols[name].append(value)
    ts = np.array(stamps, dtype="datetime64[s]")
    if len(ts) < 2:
        raise ValueError(f"{path}: need at least 2 data rows, got {len(ts)}")
    gaps = np.diff(ts).astype(np.int64)
    if np.any(gaps <= 0):
        k = int(np.argmax(gaps <= 0))
        raise ValueError(
            f"{path}: row {k + 3}: timestamps must be strictly increasing")
    if np.any(gaps != gaps[0]):
        k = int(np.argmax(gaps != gaps[0]))
        raise ValueError(
            f"{path}: row {k + 3}: timestamp spacing {gaps[k]}s differs "
            f"from {gaps[0]}s")
    return ScenarioSeries(ts, np.array(cols["load_kw"]),
                          np.array(cols["solar_kw"]),
                          np.array(cols["wind_kw"]), label=path.stem)


def _format_float(x: float) -> str:
    return repr(float(x))     # shortest string that parses back exactly


def write_timeseries_csv(path: str | Path, scen: ScenarioSeries) -> None:
    lines = [",".join(TIMESERIES_HEADER)]
    stamps = scen.timestamps.astype("datetime64[s]")
    for t in range(scen.n_steps):
        lines.append(",".join([
            str(stamps[t]), _format_float(scen.load_kw[t]),
            _format_float(scen.solar_kw[t]), _format_float(scen.wind_kw[t])]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def resample(scen: ScenarioSeries, target_dt_h: float) -> ScenarioSeries:
    """Block means when coarsening, constant repeats when refining.

    The target step must be an integer multiple (or divisor) of the source
    step so every output sample covers whole input samples.
    """
    src = scen.dt_h
    if target_dt_h <= 0.0:
        raise ValueError(f"target step must be positive, got {target_dt_h}")
    if abs(target_dt_h - src) < 1e-12:
        return scen
    channels = (scen.load_kw, scen.solar_kw, scen.wind_kw)
    if target_dt_h > src:
        ratio = target_dt_h / src
        k = int(round(ratio))
        if abs(ratio - k) > 1e-9 or scen.n_steps % k:
            raise ValueError(
                f"coarse step {target_dt_h}h must be an integer multiple of "
                f"{src}h that divides the series length {scen.n_steps}")
        out = [ch.reshape(-1, k).mean(axis=1) for ch in channels]
        ts = scen.timestamps[::k]
    else:
        ratio = src / target_dt_h
        k = int(round(ratio))
        if abs(ratio - k) > 1e-9:
            raise ValueError(
                f"fine step {target_dt_h}h must be an integer multiple "
                f"smaller than {src}h")
        out = [np.repeat(ch, k) for ch in channels]
        step = np.timedelta64(int(round(target_dt_h * 3600)), "s")
        ts = (scen.timestamps[:, None] + np.arange(k) * step).ravel()
    return ScenarioSeries(ts, out[0], out[1], out[2], label=scen.label)


# --------------------------------------------------------------------------
# manifests and seeds
# --------------------------------------------------------------------------


def write_manifest(path: str | Path, entries: dict[str, str],
                   files: list[str | Path] = ()) -> None:
    """`key = value` lines in sorted key order plus one `sha256:<name>`
    line per listed file.  Same inputs, same bytes."""
    record = dict(entries)
    for f in files:
        f = Path(f)
        record[f"sha256:{f.name}"] = sha256_file(f)
    lines = [f"{k} = {record[k]}" for k in sorted(record)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def spawn_seeds(master_seed: int, n: int) -> list[int]:
    """Fan one master seed out into n independent child seeds.  The list is
    a prefix-stable function of the master seed."""
    seq = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1)[0]) for child in seq.spawn(n)]


# --------------------------------------------------------------------------
# reference sets and results tables
# --------------------------------------------------------------------------


def save_reference_set(path: str | Path, refset: ReferenceSet) -> None:
    import io

    buf = io.BytesIO()
    np.savez(buf, labels=np.array(list(refset.labels)),
             e_h_kg=np.asarray(refset.e_h_kg, dtype=float),
             seg_c=np.asarray(refset.seg_c, dtype=np.int64),
             seg_d=np.asarray(refset.seg_d, dtype=np.int64))
    atomic_write_bytes(path, buf.getvalue())


def load_reference_set(path: str | Path) -> ReferenceSet:
    with np.load(path, allow_pickle=False) as data:
        return ReferenceSet(
            labels=[str(s) for s in data["labels"]],
            e_h_kg=np.array(data["e_h_kg"], dtype=float),
            seg_c=np.array(data["seg_c"], dtype=np.int64),
            seg_d=np.array(data["seg_d"], dtype=np.int64))


def format_results_row(row: dict) -> str:
    """One results line with pinned numeric formats; None renders empty."""
    cells = [str(row["method"])]
    for key in RESULTS_HEADER[1:]:
        value = row.get(key)
        cells.append("" if value is None
                     else _RESULTS_FORMATS[key].format(float(value)))
    return ",".join(cells)


def write_results_csv(path: str | Path, rows: list[dict]) -> None:
    """One row per method with pinned formats; None renders empty."""
    lines = [",".join(RESULTS_HEADER)]
    lines.extend(format_results_row(row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")
