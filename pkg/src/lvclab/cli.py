"""Config-driven orchestration: solve, predict, simulate, verify, sweep.

Every command reads one YAML config, writes JSON/CSV artifacts (plus figures
on the report paths) into the output directory, and embeds the fully
resolved config and its content hash in each artifact.  Exit codes:
0 success, 1 config error, 2 runtime/convergence error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import decoupled, mc, plots, stats
from .config import (build_ensemble, build_model, build_shapes,
                     build_solver_options, config_hash, load_config,
                     model_hash, resolve_config)
from .errors import ConfigError, ConvergenceError, LvclabError
from .replica import (ConjugateParams, OrderParams, solve_fixed_points,
                      stationarity_report)

FIXEDPOINT_FILE = "fixedpoint.json"
PREDICTED_FILE = "predicted_joint.json"
REPORT_FILE = "report.json"
SWEEP_CSV = "sweep.csv"
SWEEP_JSON = "sweep.json"


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _stamp(resolved: dict) -> dict:
    return {"config": resolved, "config_hash": config_hash(resolved),
            "model_hash": model_hash(resolved)}


def _shape_dir(out: Path, K: int, N: int) -> Path:
    return out / f"shape_K{K}_N{N}"


def _shape_seed(master_seed: int, K: int, N: int) -> int:
    ss = np.random.SeedSequence((int(master_seed), int(K), int(N)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def run_solve(resolved: dict, out: Path) -> dict:
    model = build_model(resolved)
    options = build_solver_options(resolved)
    extra = resolved["solver"]["extra_initializations"]
    try:
        result = solve_fixed_points(model, options, user_inits=extra)
    except ConvergenceError as exc:
        _write_json(out / "solve_trace.json",
                    {**_stamp(resolved),
                     "traces": {k: list(map(float, v)) for k, v in exc.traces.items()}})
        raise
    sel = result.selected_point
    diag = stationarity_report(sel.order, sel.conj, model, options.quad)
    artifact = {
        **_stamp(resolved),
        "solutions": [fp.as_dict() for fp in result.points],
        "selected": result.selected,
        "tie": result.tie,
        "free_energies": [fp.free_energy for fp in result.points],
        "stationarity": diag,
        "iterations": {k: len(v) for k, v in result.traces.items()},
    }
    _write_json(out / FIXEDPOINT_FILE, artifact)
    return artifact


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def run_predict(resolved: dict, out: Path, fixedpoint_path: Path | None = None,
                L: int | None = None) -> dict:
    fp_path = fixedpoint_path or out / FIXEDPOINT_FILE
    if not fp_path.exists():
        raise LvclabError(f"missing fixed point file: {fp_path} (run solve first)")
    fp_doc = _read_json(fp_path)
    if fp_doc.get("model_hash") != model_hash(resolved):
        raise LvclabError("fixed point was solved for a different model block")
    sel = fp_doc["solutions"][fp_doc["selected"]]
    conj = ConjugateParams(**sel["conj"])
    order = OrderParams(**sel["order"])

    model = build_model(resolved)
    L = int(L if L is not None else (resolved["predict"]["L"] or resolved["mc"]["L"]))
    joint = decoupled.predicted_joint(
        L, conj, model.true_prior, model.post_prior,
        z_tol=float(resolved["predict"]["z_tol"]),
        grid_points=int(resolved["predict"]["grid_points"]),
        grid_span=float(resolved["predict"]["grid_span"]))

    law = decoupled.predicted_pme_law(conj, model.true_prior, model.post_prior)
    cdf_values, cdf_probs = law.cdf_table()
    pme_block = {
        "mean_overlap": law.mean_overlap(),
        "cdf_grid": {"values": cdf_values.tolist(), "cdf": cdf_probs.tolist()},
    }
    try:
        pme_block["ber"] = law.error_rate()
    except LvclabError:
        pme_block["ber"] = None

    artifact = {
        **_stamp(resolved),
        "fixedpoint": {"order": sel["order"], "conj": sel["conj"],
                       "free_energy": sel["free_energy"],
                       "residual": sel["residual"],
                       "source": str(fp_path.name)},
        "L": L,
        "joint": {
            "kind": joint.kind,
            "x0_support": np.asarray(joint.x0_support).tolist(),
            "x_support": np.asarray(joint.x_support).tolist(),
            "table": joint.table.tolist(),
            "normalization": joint.normalization,
        },
        "component_table": joint.component_table(0).tolist()
        if joint.kind == "table" else None,
        "pme": pme_block,
    }
    _write_json(out / PREDICTED_FILE, artifact)
    return artifact


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def run_simulate(resolved: dict, out: Path, threads: int = 1) -> list:
    model = build_model(resolved)
    shapes = build_shapes(resolved)
    if not shapes:
        raise ConfigError("mc.shapes", "at least one shape is required to simulate")
    ensemble = build_ensemble(resolved)
    mcfg = resolved["mc"]
    # incompatibilities must surface before any compute
    for shape in shapes:
        mc._check_sampler(model, shape, mcfg["sampler"])
    metas = []
    for shape in shapes:
        seed = _shape_seed(mcfg["seed"], shape.K, shape.N)
        samples = mc.collect_joint_samples(
            model, shape, ensemble, mcfg["sampler"], trials=int(mcfg["trials"]),
            L=int(mcfg["L"]), master_seed=seed, threads=threads,
            gibbs_sweeps=int(mcfg["gibbs"]["sweeps"]),
            gibbs_burn_in=int(mcfg["gibbs"]["burn_in"]),
            gibbs_thin=int(mcfg["gibbs"]["thin"]))
        sdir = _shape_dir(out, shape.K, shape.N)
        sdir.mkdir(parents=True, exist_ok=True)
        mc.write_samples_csv(sdir / "samples.csv", samples)
        meta = {
            **_stamp(resolved),
            "shape": {"K": shape.K, "N": shape.N, "beta": shape.beta},
            "L": samples.L,
            "sampler": samples.sampler,
            "ensemble": samples.ensemble,
            "trials": samples.trials,
            "master_seed": int(mcfg["seed"]),
            "shape_seed": seed,
            "csv": "samples.csv",
        }
        _write_json(sdir / "samples.meta.json", meta)
        metas.append(meta)
    return metas


def _load_samples(out: Path, shape) -> tuple:
    sdir = _shape_dir(out, shape.K, shape.N)
    meta_path = sdir / "samples.meta.json"
    if not meta_path.exists():
        raise LvclabError(f"missing samples for shape K={shape.K}: run simulate first")
    meta = _read_json(meta_path)
    samples = mc.read_samples_csv(sdir / meta["csv"], shape, int(meta["L"]),
                                  int(meta["master_seed"]), meta["sampler"],
                                  meta["ensemble"])
    return samples, meta


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _metric_entry(estimate, ci, level, n, warnings=()):
    return {"estimate": float(estimate), "ci": [float(ci[0]), float(ci[1])],
            "level": level, "sample_size": int(n), "warnings": list(warnings)}


def run_verify(resolved: dict, out: Path) -> dict:
    pred_path = out / PREDICTED_FILE
    if not pred_path.exists():
        raise LvclabError(f"missing prediction file: {pred_path} (run predict first)")
    pred = _read_json(pred_path)
    if pred.get("model_hash") != model_hash(resolved):
        raise LvclabError("prediction metadata hash does not match this config")

    model = build_model(resolved)
    conj = ConjugateParams(**pred["fixedpoint"]["conj"])
    law = decoupled.predicted_pme_law(conj, model.true_prior, model.post_prior)
    vcfg = resolved["verify"]
    level = float(vcfg["bootstrap"]["level"])
    resamples = int(vcfg["bootstrap"]["resamples"])
    distances = vcfg["distances"]
    figures = bool(resolved["output"]["figures"])

    shape_reports = []
    for shape in build_shapes(resolved):
        samples, meta = _load_samples(out, shape)
        if meta.get("model_hash") != pred.get("model_hash"):
            raise LvclabError(
                f"metadata hash mismatch between prediction and samples for "
                f"K={shape.K}: re-run predict/simulate from one config")
        n = samples.trials
        rng = np.random.default_rng(np.random.SeedSequence(
            (meta["shape_seed"], 0xB007)))
        metrics = {}

        if "tv" in distances and pred["joint"]["kind"] == "table":
            x0_sup = np.asarray(pred["joint"]["x0_support"], dtype=float)
            x_sup = np.asarray(pred["joint"]["x_support"], dtype=float)
            target = np.asarray(pred["component_table"], dtype=float)

            def tv_stat(ss):
                emp = stats.component_joint_table(ss, 0, x0_sup, x_sup)
                return stats.tv_discrete(emp, target)

            est = tv_stat(samples)
            ci = stats.bootstrap_ci(tv_stat, samples, resamples, level, rng)
            metrics["tv_component_joint"] = _metric_entry(est, ci, level, n)
            if figures:
                emp = stats.component_joint_table(samples, 0, x0_sup, x_sup)
                plots.joint_table_figure(
                    _shape_dir(out, shape.K, shape.N) / "joint_comparison.png",
                    emp, target, x0_sup, x_sup,
                    f"component joint, K={shape.K}")

        if "independence" in distances and samples.L >= 2:
            gap, warns = stats.independence_gap(samples)

            def gap_stat(ss):
                return stats.independence_gap(ss)[0]

            ci = stats.bootstrap_ci(gap_stat, samples, resamples, level, rng)
            metrics["independence_gap"] = _metric_entry(gap, ci, level, n, warns)

        if "energy" in distances:
            ecfg = vcfg["energy"]
            max_points = int(ecfg["max_points"])
            sub = int(ecfg["subsample"])
            pred_n = min(n, max_points)
            px0, ppme = law.sample(pred_n, np.random.default_rng(
                np.random.SeedSequence((meta["shape_seed"], 0xE4E))))
            pred_pairs = np.column_stack([px0, ppme])
            emp_pairs = np.column_stack([samples.x0[:, 0], samples.pme[:, 0]])
            est = stats.energy_distance(emp_pairs, pred_pairs,
                                        max_points=max_points, rng=rng)
            pred_small = pred_pairs[:sub]

            def energy_stat(ss):
                pairs = np.column_stack([ss.x0[:, 0], ss.pme[:, 0]])
                return stats.energy_distance(pairs[:sub], pred_small)

            ci = stats.bootstrap_ci(energy_stat, samples,
                                    max(int(ecfg["resamples"]), 200), level, rng)
            metrics["energy_pme"] = _metric_entry(est, ci, level, n)

        if "ks" in distances:
            cdf_vals = np.asarray(pred["pme"]["cdf_grid"]["cdf"])
            cdf_grid = np.asarray(pred["pme"]["cdf_grid"]["values"])

            def pred_cdf(v):
                return np.interp(v, cdf_grid, cdf_vals, left=0.0, right=1.0)

            def ks_stat(ss):
                return stats.ks_statistic(ss.pme[:, 0], pred_cdf)

            est = ks_stat(samples)
            ci = stats.bootstrap_ci(ks_stat, samples, resamples, level, rng)
            metrics["ks_pme"] = _metric_entry(est, ci, level, n)
            if figures:
                plots.pme_histogram_figure(
                    _shape_dir(out, shape.K, shape.N) / "pme_comparison.png",
                    samples.pme[:, 0], pred_cdf,
                    f"posterior-mean law, K={shape.K}")

        shape_reports.append({"shape": {"K": shape.K, "N": shape.N},
                              "trials": n, "metrics": metrics})

    trend = _trend_summary(shape_reports)
    artifact = {**_stamp(resolved), "prediction_hash": pred["config_hash"],
                "shapes": shape_reports, "trend": trend}
    _write_json(out / REPORT_FILE, artifact)
    return artifact


def _trend_summary(shape_reports: list) -> dict:
    """Monotone-trend flags: distance at the largest K below the smallest K."""
    if len(shape_reports) < 2:
        return {}
    ordered = sorted(shape_reports, key=lambda r: r["shape"]["K"])
    small, large = ordered[0], ordered[-1]
    trend = {}
    for name in small["metrics"]:
        if name not in large["metrics"]:
            continue
        lo_k = small["metrics"][name]
        hi_k = large["metrics"][name]
        decreasing = hi_k["estimate"] < lo_k["estimate"]
        separated = hi_k["ci"][1] < lo_k["ci"][0]
        trend[name] = {
            "smallest_K": small["shape"]["K"],
            "largest_K": large["shape"]["K"],
            "estimate_smallest": lo_k["estimate"],
            "estimate_largest": hi_k["estimate"],
            "decreasing": bool(decreasing),
            "ci_separated": bool(separated),
            "flag": bool(decreasing and separated),
        }
    return trend


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def run_sweep(resolved: dict, out: Path, threads: int = 1) -> dict:
    run_solve(resolved, out)
    run_predict(resolved, out)
    run_simulate(resolved, out, threads=threads)
    report = run_verify(resolved, out)

    rows = []
    for sr in report["shapes"]:
        for name, entry in sr["metrics"].items():
            rows.append({"K": sr["shape"]["K"], "N": sr["shape"]["N"],
                         "metric": name, "estimate": entry["estimate"],
                         "ci_low": entry["ci"][0], "ci_high": entry["ci"][1]})
    rows.sort(key=lambda r: (r["metric"], r["K"]))
    csv_path = out / SWEEP_CSV
    with open(csv_path, "w") as fh:
        fh.write("K,N,metric,estimate,ci_low,ci_high\n")
        for r in rows:
            fh.write(f"{r['K']},{r['N']},{r['metric']},{r['estimate']!r},"
                     f"{r['ci_low']!r},{r['ci_high']!r}\n")
    summary = {**_stamp(resolved), "trend": report["trend"], "rows": rows}
    _write_json(out / SWEEP_JSON, summary)
    if bool(resolved["output"]["figures"]) and rows:
        plots.sweep_figure(out / "sweep_distance.png", rows, "distance vs K")
    return summary


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lvclab",
        description="replica fixed points and Monte Carlo decoupling checks "
                    "for random linear vector channels")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("solve", "solve the saddle-point equations"),
            ("predict", "evaluate the decoupled joint prediction"),
            ("simulate", "collect finite-size Monte Carlo samples"),
            ("verify", "compare samples against the prediction"),
            ("sweep", "solve + predict + simulate + verify across shapes")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", default=None, help="output directory override")
        if name in ("simulate", "sweep"):
            p.add_argument("--seed", type=int, default=None,
                           help="master seed override")
        if name in ("solve", "simulate", "sweep"):
            p.add_argument("--threads", type=int, default=1,
                           help="worker cap for trial-level parallelism")
        if name == "predict":
            p.add_argument("--fixedpoint", default=None,
                           help="path to a fixedpoint.json (default: OUT/fixedpoint.json)")
            p.add_argument("--L", type=int, default=None,
                           help="number of components in the predicted joint")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        resolved = resolve_config(raw, seed_override=getattr(args, "seed", None),
                                  out_override=args.out)
        out = Path(resolved["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        threads = getattr(args, "threads", 1) or 1
        if args.command == "solve":
            artifact = run_solve(resolved, out)
            sel = artifact["solutions"][artifact["selected"]]
            print(f"solved: {len(artifact['solutions'])} fixed point(s); selected "
                  f"E={sel['conj']['E']:.8f} F={sel['conj']['F']:.8f} "
                  f"free_energy={sel['free_energy']:.8f}")
        elif args.command == "predict":
            artifact = run_predict(resolved, out,
                                   fixedpoint_path=Path(args.fixedpoint)
                                   if args.fixedpoint else None, L=args.L)
            print(f"predicted joint (L={artifact['L']}, kind="
                  f"{artifact['joint']['kind']}), normalization "
                  f"{artifact['joint']['normalization']:.10f}")
        elif args.command == "simulate":
            metas = run_simulate(resolved, out, threads=threads)
            for meta in metas:
                print(f"simulated K={meta['shape']['K']} N={meta['shape']['N']}: "
                      f"{meta['trials']} trials -> "
                      f"{_shape_dir(out, meta['shape']['K'], meta['shape']['N'])}")
        elif args.command == "verify":
            artifact = run_verify(resolved, out)
            for sr in artifact["shapes"]:
                line = ", ".join(f"{k}={v['estimate']:.4f}"
                                 for k, v in sr["metrics"].items())
                print(f"K={sr['shape']['K']}: {line}")
        elif args.command == "sweep":
            summary = run_sweep(resolved, out, threads=threads)
            for name, entry in summary["trend"].items():
                print(f"trend[{name}]: decreasing={entry['decreasing']} "
                      f"ci_separated={entry['ci_separated']} flag={entry['flag']}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except LvclabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
