"""Command-line front end for the microgrid toolkit.

Subcommands cover the whole workflow: generate a synthetic scenario
(``synth-data``), inspect the fitted hydrogen conversion curves
(``fit-curves``), build an offline reference library (``gen-refs``),
run one dispatch method (``simulate``), benchmark several methods on
the same scenario (``compare``), fan a master seed into a scenario
sweep (``sweep``), and measure the online learner's regret scaling
(``bench-regret``).

Exit codes follow one taxonomy everywhere: 0 success, 2 command-line
usage errors (argparse), 3 invalid input data or configuration
(unparseable files, unknown method labels, missing companions), and
4 failed computation (infeasible or non-converged solves).

Artifacts are reproducible at the byte level: every writer formats
numbers with fixed rules, manifests list their keys in sorted order,
and ``compare`` zeroes wall-clock timing by default so two runs of the
same manifest produce identical files.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (RESULTS_HEADER, atomic_write_text, format_results_row,
                     load_reference_set, parse_timeseries_csv, read_manifest,
                     save_reference_set, sha256_file, spawn_seeds,
                     write_manifest, write_results_csv, write_timeseries_csv)
from .grid import (BatteryParams, CostParams, DieselParams, HydrogenParams,
                   MicrogridSpec, ScenarioSeries, TrajectoryFrame)
from .oco import run_regret_benchmark
from .piecewise import fit_charge_curve, fit_discharge_curve
from .reference import generate_offline_references, make_scenario_library
from .sim import MethodConfig, evaluate_methods, method_preset, run_rollout
from .synth import make_seasonal_year

PLOTDATA_HEADER = ("timestamp", "e_b_kwh", "e_h_kg", "p_d_kw", "p_l_kw")


# --------------------------------------------------------------------------
# configuration files
# --------------------------------------------------------------------------

_SPEC_SECTIONS: dict[str, tuple[str, type]] = {
    "battery": ("battery", BatteryParams),
    "hydrogen": ("hydrogen", HydrogenParams),
    "diesel": ("diesel", DieselParams),
    "costs": ("costs", CostParams),
}
_GRID_KEYS = ("dt_h", "grid_cap_kw", "load_cap_kw", "solar_cap_kw",
              "wind_cap_kw")


def _as_number(path, section: str, key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"{path}: [{section}] {key} = {raw!r} is not a "
                         f"number") from None
    if not np.isfinite(value):
        raise ValueError(f"{path}: [{section}] {key} must be finite")
    return value


def spec_from_config(path: str | Path) -> MicrogridSpec:
    """Microgrid parameters from an INI file, defaults for what's absent.

    Sections ``[grid]``, ``[battery]``, ``[hydrogen]``, ``[diesel]``, and
    ``[costs]`` accept exactly the field names of the corresponding
    parameter blocks; unknown sections or keys are rejected by name so a
    typo cannot silently fall back to a default.  The returned spec always
    carries fitted conversion curves.
    """
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ValueError(f"{path}: {exc}") from None

    spec = MicrogridSpec()
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "grid":
            for key, raw in items.items():
                if key not in _GRID_KEYS:
                    raise ValueError(
                        f"{path}: unknown key {key!r} in [grid]; expected "
                        f"one of {', '.join(_GRID_KEYS)}")
                spec = dataclasses.replace(
                    spec, **{key: _as_number(path, section, key, raw)})
        elif section in _SPEC_SECTIONS:
            attr, cls = _SPEC_SECTIONS[section]
            allowed = tuple(f.name for f in dataclasses.fields(cls))
            updates = {}
            for key, raw in items.items():
                if key not in allowed:
                    raise ValueError(
                        f"{path}: unknown key {key!r} in [{section}]; "
                        f"expected one of {', '.join(allowed)}")
                updates[key] = _as_number(path, section, key, raw)
            block = dataclasses.replace(getattr(spec, attr), **updates)
            spec = dataclasses.replace(spec, **{attr: block})
        else:
            raise ValueError(
                f"{path}: unknown section [{section}]; expected one of "
                f"grid, {', '.join(_SPEC_SECTIONS)}")
    return spec.with_default_curves()


def _load_spec(path: Path | None) -> MicrogridSpec:
    if path is None:
        return MicrogridSpec().with_default_curves()
    return spec_from_config(path)


# --------------------------------------------------------------------------
# shared pieces
# --------------------------------------------------------------------------


def _split_labels(raw: str, flag: str) -> list[str]:
    labels = [s.strip() for s in raw.split(",") if s.strip()]
    if not labels:
        raise ValueError(f"{flag} needs a non-empty comma-separated list, "
                         f"got {raw!r}")
    return labels


def _require_refs(methods: list[MethodConfig], refs: Path | None) -> None:
    missing = [m.name for m in methods if m.use_reference]
    if missing and refs is None:
        raise ValueError(
            f"method(s) {', '.join(missing)} track an offline reference; "
            f"pass --refs with a set produced by gen-refs")


def _library_from_refs(refs_path: Path, scen: ScenarioSeries,
                       scenario_path: Path):
    """Reload a reference set and rebuild the scenario library it came from.

    The companion ``.manifest`` records how the library was constructed
    (variant count, amplitude, seed) and the hash of the source scenario,
    so tracking methods see exactly the library the references were
    optimized for.
    """
    man_path = refs_path.with_suffix(".manifest")
    if not man_path.exists():
        raise ValueError(
            f"{refs_path}: companion manifest {man_path.name} not found; "
            f"it records how the reference library was built")
    man = read_manifest(man_path)
    try:
        variants = int(man["variants"])
        amplitude = float(man["amplitude"])
        seed = int(man["seed"])
    except KeyError as exc:
        raise ValueError(f"{man_path}: missing key {exc}") from None
    scen_name = man.get("scenario")
    if scen_name is not None:
        recorded = man.get(f"sha256:{scen_name}")
        if recorded is not None and sha256_file(scenario_path) != recorded:
            raise ValueError(
                f"{scenario_path}: contents differ from the scenario the "
                f"reference set was generated from ({scen_name})")
    refset = load_reference_set(refs_path)
    library = make_scenario_library(scen, variants, amplitude, seed)
    if len(refset.labels) != len(library):
        raise ValueError(
            f"{refs_path}: {len(refset.labels)} reference rows but the "
            f"manifest describes a library of {len(library)} scenarios")
    if refset.e_h_kg.shape[1] != scen.n_steps:
        raise ValueError(
            f"{refs_path}: references span {refset.e_h_kg.shape[1]} steps "
            f"but the scenario has {scen.n_steps}")
    return refset, library


def _result_row(result, timing: str) -> dict:
    ms = np.asarray(result.step_ms, dtype=float)
    step_ms = float(ms.mean()) if (timing == "measured" and ms.size) else 0.0
    return {"method": result.method,
            "cost_usd": result.practical_cost,
            "dg_mwh": result.diesel_kwh / 1e3,
            "lol_mwh": result.lol_kwh / 1e3,
            "rmse_pct": result.rmse_pct,
            "step_ms": step_ms}


def _write_results_jsonl(path: Path, results, rows: list[dict]) -> None:
    lines = []
    for result, row in zip(results, rows):
        record = {
            "method": row["method"],
            "cost_usd": round(float(row["cost_usd"]), 2),
            "theoretical_cost_usd": round(float(result.theoretical_cost), 2),
            "dg_mwh": round(float(row["dg_mwh"]), 3),
            "lol_mwh": round(float(row["lol_mwh"]), 3),
            "rmse_pct": (None if row["rmse_pct"] is None
                         else round(float(row["rmse_pct"]), 2)),
            "regret_usd": (None if result.regret is None
                           else round(float(result.regret), 2)),
            "step_ms": round(float(row["step_ms"]), 2),
            "n_steps": int(result.frame.n_steps),
        }
        lines.append(json.dumps(record, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_plotdata(path: Path, scen: ScenarioSeries,
                    frame: TrajectoryFrame) -> None:
    stamps = scen.timestamps.astype("datetime64[s]")
    lines = [",".join(PLOTDATA_HEADER)]
    for t in range(frame.n_steps):
        lines.append(f"{stamps[t]},{frame.e_b[t]:.6f},{frame.e_h[t]:.6f},"
                     f"{frame.p_d[t]:.6f},{frame.p_l[t]:.6f}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_synth_data(args) -> int:
    scen = make_seasonal_year(seed=args.seed, n_days=args.days,
                              start=args.start)
    write_timeseries_csv(args.out, scen)
    print(f"wrote {scen.n_steps} hourly steps to {args.out}")
    return 0


def _cmd_fit_curves(args) -> int:
    lines = ["# piecewise-linear hydrogen conversion fits",
             "# direction,segment,p_lo_kw,p_hi_kw,slope_kg_per_kwh,"
             "intercept_kg_per_h"]
    for name, curve in (("charge", fit_charge_curve(n_segments=args.segments)),
                        ("discharge",
                         fit_discharge_curve(n_segments=args.segments))):
        for i in range(len(curve.p_lo)):
            lines.append(f"{name},{i},{curve.p_lo[i]:.6f},{curve.p_hi[i]:.6f},"
                         f"{curve.slope[i]:.8f},{curve.intercept[i]:.8f}")
        lines.append(f"# {name} relative rmse = {curve.fit_rmse:.6e}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_gen_refs(args) -> int:
    if args.variants < 0:
        raise ValueError(f"--variants must be >= 0, got {args.variants}")
    spec = _load_spec(args.spec)
    scen = parse_timeseries_csv(args.scenario)
    library = make_scenario_library(scen, args.variants, args.amplitude,
                                    args.seed)
    refset, plans = generate_offline_references(spec, library)
    save_reference_set(args.out, refset)
    entries = {"tool": f"h2mg {__version__}",
               "scenario": Path(args.scenario).name,
               "seed": str(args.seed),
               "variants": str(args.variants),
               "amplitude": repr(float(args.amplitude))}
    write_manifest(args.out.with_suffix(".manifest"), entries,
                   files=[args.scenario, args.out])
    objectives = ", ".join(f"{p.objective:.2f}" for p in plans)
    print(f"wrote {len(refset.labels)} reference paths to {args.out} "
          f"(plan objectives: {objectives})")
    return 0


def _cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    scen = parse_timeseries_csv(args.scenario)
    method = method_preset(args.method)
    _require_refs([method], args.refs)
    refset = library = None
    if args.refs is not None:
        refset, library = _library_from_refs(args.refs, scen, args.scenario)
    result = run_rollout(spec, scen, method, refset=refset, library=library,
                         sigma=args.sigma)
    row = _result_row(result, args.timing)
    write_results_csv(args.out, [row])
    print(f"{result.method}: practical cost {result.practical_cost:.2f} USD, "
          f"lost load {result.lol_kwh:.1f} kWh -> {args.out}")
    return 0


def _cmd_compare(args) -> int:
    spec = _load_spec(args.spec)
    scen = parse_timeseries_csv(args.scenario)
    labels = _split_labels(args.methods, "--methods")
    methods = [method_preset(label) for label in labels]
    _require_refs(methods, args.refs)
    refset = library = None
    if args.refs is not None:
        refset, library = _library_from_refs(args.refs, scen, args.scenario)
    results = evaluate_methods(spec, scen, methods, refset=refset,
                               library=library, sigma=args.sigma)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [_result_row(r, args.timing) for r in results]
    write_results_csv(out_dir / "results.csv", rows)
    _write_results_jsonl(out_dir / "results.jsonl", results, rows)
    artifacts = [out_dir / "results.csv", out_dir / "results.jsonl"]
    if args.emit == "plotdata":
        for result in results:
            plot_path = out_dir / f"plotdata_{result.method}.csv"
            _write_plotdata(plot_path, scen, result.frame)
            artifacts.append(plot_path)
    entries = {"tool": f"h2mg {__version__}",
               "scenario": Path(args.scenario).name,
               "methods": ",".join(labels),
               "sigma": repr(float(args.sigma)),
               "timing": args.timing}
    files = [args.scenario] + ([args.refs] if args.refs else []) + artifacts
    write_manifest(out_dir / "run.manifest", entries, files=files)

    print(",".join(RESULTS_HEADER))
    for row in rows:
        print(format_results_row(row))
    return 0


def _cmd_sweep(args) -> int:
    if args.count < 1:
        raise ValueError(f"--count must be >= 1, got {args.count}")
    spec = _load_spec(args.spec)
    method = method_preset(args.method)
    lines = [",".join(("seed",) + tuple(RESULTS_HEADER))]
    for seed in spawn_seeds(args.seed, args.count):
        scen = make_seasonal_year(seed=seed, n_days=args.days)
        refset = library = None
        if method.use_reference:
            library = make_scenario_library(scen, args.variants,
                                            args.amplitude, seed)
            refset, _ = generate_offline_references(spec, library)
        result = run_rollout(spec, scen, method, refset=refset,
                             library=library, sigma=args.sigma)
        lines.append(f"{seed},"
                     + format_results_row(_result_row(result, "zero")))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.count} rows to {args.out}")
    return 0


def _cmd_bench_regret(args) -> int:
    horizons = []
    for part in _split_labels(args.horizons, "--horizons"):
        try:
            horizons.append(int(part))
        except ValueError:
            raise ValueError(f"--horizons entries must be integers, "
                             f"got {part!r}") from None
    if any(h < 2 for h in horizons):
        raise ValueError("--horizons entries must be >= 2")
    points = run_regret_benchmark(horizons=tuple(horizons), kappa=args.kappa,
                                  c=args.c_exp, seed=args.seed)
    exponent = max(args.kappa, args.c_exp)
    lines = ["horizon,regret,bound"]
    for pt in points:
        # sublinear envelope the learner is expected to stay under (up to
        # a constant): T^max(kappa,c) * (1 + path length of the benchmark)
        bound = pt.horizon ** exponent * (1.0 + pt.path_length)
        lines.append(f"{pt.horizon},{pt.regret:.6f},{bound:.6f}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(points)} rows to {args.out}")
    return 0


# --------------------------------------------------------------------------
# parser and entry point
# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2mg",
        description="seasonal dispatch toolkit for islanded microgrids with "
                    "hybrid hydrogen-battery storage")
    parser.add_argument("--version", action="version",
                        version=f"h2mg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("synth-data",
                       help="generate a synthetic hourly scenario CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--start", default="2023-01-01",
                   help="first timestamp (midnight, ISO date)")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("fit-curves",
                       help="fit and print the hydrogen conversion curves")
    p.add_argument("--segments", type=int, default=4)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_fit_curves)

    p = sub.add_parser("gen-refs",
                       help="optimize offline reference paths for a scenario "
                            "library")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--variants", type=int, default=2,
                   help="seeded quarterly-rescaled variants beside the base")
    p.add_argument("--amplitude", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", type=Path, help="INI file of parameter overrides")
    p.add_argument("--out", type=Path, required=True,
                   help="reference set (.npz); a .manifest is written beside")
    p.set_defaults(func=_cmd_gen_refs)

    p = sub.add_parser("simulate", help="run one dispatch method")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--method", required=True,
                   help="method label (M0, M1, M2, M3, M4)")
    p.add_argument("--refs", type=Path,
                   help="reference set from gen-refs (required for M1/M2)")
    p.add_argument("--spec", type=Path)
    p.add_argument("--sigma", type=float, default=1.0,
                   help="kernel width for reference tracking")
    p.add_argument("--timing", choices=("measured", "zero"),
                   default="measured")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("compare",
                       help="run several methods on one scenario and write "
                            "comparable artifacts")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--methods", required=True,
                   help="comma-separated method labels, e.g. M0,M1,M3")
    p.add_argument("--refs", type=Path)
    p.add_argument("--spec", type=Path)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--timing", choices=("measured", "zero"), default="zero",
                   help="zero by default so reruns are byte-identical")
    p.add_argument("--emit", choices=("plotdata",),
                   help="also write per-method state trajectories")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("sweep",
                       help="fan one master seed into independent scenario "
                            "rollouts")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--method", required=True)
    p.add_argument("--variants", type=int, default=1,
                   help="library variants when the method tracks a reference")
    p.add_argument("--amplitude", type=float, default=0.3)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--spec", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("bench-regret",
                       help="measure online-learner regret over growing "
                            "horizons")
    p.add_argument("--horizons", default="256,512,1024,2048,4096")
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--c", dest="c_exp", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_bench_regret)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"error: computation failed: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
