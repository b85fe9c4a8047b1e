"""Command-line harness.

Every run creates its own directory under the output base, writes the
result files for the subcommand, and drops a `manifest.json` recording the
fully resolved configuration.  Result files contain no timestamps, so a
rerun from the manifest (``--config <run>/manifest.json``) reproduces them
byte for byte; timing lives only in the manifest itself.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
runtime failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from .config import DEFAULTS, SCHEMAS, load_config_file, resolve
from .exceptions import ConfigError, MnDeltaError

JOBS_ENV = "MN_DELTA_JOBS"


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


def cli_dispatch(argv) -> int:
    """Parse arguments, run one subcommand, and map errors to exit codes."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if ns.command is None:
        parser.print_help(sys.stderr)
        return 2
    handler = _COMMANDS[ns.command]
    try:
        return handler(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MnDeltaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mndelta",
        description="Direct estimation of sparse changes between two Markov networks.",
    )
    sub = parser.add_subparsers(dest="command")
    parser.set_defaults(command=None)

    def add_common(p):
        p.add_argument("--config", help="JSON config file or a run manifest")
        p.add_argument("--out", default="runs", help="base directory for run outputs")

    p = sub.add_parser("synth-demo", help="sparse recovery demo on a random Gaussian pair")
    add_common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--remove", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--alphas", help="comma-separated penalty multipliers")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("roc-bench", help="lattice benchmark: AUC per method and size")
    add_common(p)
    p.add_argument("--methods", help="comma-separated subset of kliep,cp")
    p.add_argument("--dims", help="comma-separated perfect squares")
    p.add_argument("--trials", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lambda-grid", type=int, dest="lambda_grid")
    p.add_argument("--lambda-span", type=float, dest="lambda_span")
    p.add_argument("--tau-grid", type=int, dest="tau_grid")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("image-diff", help="detect changed regions between two images")
    add_common(p)
    p.add_argument("--image-p", dest="image_p")
    p.add_argument("--image-q", dest="image_q")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--target", type=int)
    p.add_argument("--max-halvings", type=int, dest="max_halvings")
    p.add_argument("--png", action="store_true", default=None)

    p = sub.add_parser("diagnose", help="recovery-theory diagnostics at the true parameters")
    add_common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--remove", type=int)
    p.add_argument("--nq", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("solve", help="fit the penalized ratio model on two CSV samples")
    add_common(p)
    p.add_argument("--data-p", dest="data_p")
    p.add_argument("--data-q", dest="data_q")
    p.add_argument("--lam", type=float, help="single penalty; omitted = full path")
    p.add_argument("--grid-size", type=int, dest="grid_size")
    p.add_argument("--span", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")

    return parser


def _resolved_config(ns, command: str) -> dict:
    file_cfg = load_config_file(ns.config, command) if ns.config else None
    overrides = {k: getattr(ns, k) for k in SCHEMAS[command] if hasattr(ns, k)}
    return resolve(command, file_cfg, overrides)


def _make_run_dir(base: str, command: str, cfg: dict) -> Path:
    digest = hashlib.sha1(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:8]
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    path = Path(base) / f"{command}-{stamp}-{digest}"
    suffix = 0
    while path.exists():
        suffix += 1
        path = Path(base) / f"{command}-{stamp}-{digest}-{suffix}"
    path.mkdir(parents=True)
    return path


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(rundir: Path, command: str, cfg: dict, outputs: list[str], started: float) -> None:
    import numpy

    manifest = {
        "command": command,
        "config": _jsonable(cfg),
        "outputs": sorted(outputs),
        "elapsed_seconds": round(time.time() - started, 3),
        "versions": {"mndelta": _version(), "numpy": numpy.__version__},
    }
    _write_json(rundir / "manifest.json", manifest)


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("mndelta")
    except Exception:
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _resolve_jobs(cfg: dict) -> int:
    jobs = cfg.get("jobs")
    if jobs is None:
        env = os.environ.get(JOBS_ENV)
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise ConfigError(f"{JOBS_ENV}={env!r} is not an integer") from None
    if jobs is None:
        jobs = 1
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    return jobs


def _require(cfg: dict, command: str, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) is None:
            raise ConfigError(f"{command} needs --{key.replace('_', '-')} (or the config key)")


def _cmd_synth_demo(ns) -> int:
    cfg = _resolved_config(ns, "synth-demo")
    started = time.time()
    from .evaluation import illustrative_recovery
    from .synthgen import ground_truth_to_json

    result = illustrative_recovery(
        seed=cfg["seed"],
        alphas=cfg["alphas"],
        m=cfg["m"],
        density=cfg["density"],
        n_remove=cfg["remove"],
        n_samples=cfg["n"],
    )
    rundir = _make_run_dir(ns.out, "synth-demo", cfg)
    outputs = []

    truth_doc = ground_truth_to_json(result["model_p"], result["model_q"])
    truth_doc["sample_seeds"] = result["seeds"]
    truth_doc["n_samples"] = result["n_samples"]
    _write_json(rundir / "ground_truth.json", truth_doc)
    outputs.append("ground_truth.json")

    records = []
    for rec in result["records"]:
        name = f"solution_a{rec['alpha']:g}.json"
        _write_json(rundir / name, rec["delta"].to_json_dict(rec["lambda"], rec["objective"]))
        outputs.append(name)
        records.append({k: v for k, v in rec.items() if k != "delta"})
    _write_json(rundir / "recovery.json", {"records": records})
    outputs.append("recovery.json")

    _write_manifest(rundir, "synth-demo", cfg, outputs, started)
    for rec in records:
        print(
            f"alpha={rec['alpha']:g} lambda={rec['lambda']:.6g} "
            f"tpr={rec['tpr']} tnr={rec['tnr']} active={rec['n_active']}"
        )
    print(f"wrote {rundir}")
    return 0


def _cmd_roc_bench(ns) -> int:
    cfg = _resolved_config(ns, "roc-bench")
    jobs = _resolve_jobs(cfg)
    started = time.time()
    from .evaluation import BenchmarkConfig, run_benchmark

    bench = BenchmarkConfig(
        methods=tuple(cfg["methods"]),
        dims=tuple(cfg["dims"]),
        trials=cfg["trials"],
        seed=cfg["seed"],
        n_samples=cfg["n"],
        epsilon=cfg["epsilon"],
        lambda_grid_size=cfg["lambda_grid"],
        lambda_span=cfg["lambda_span"],
        tau_grid_size=cfg["tau_grid"],
    )
    result = run_benchmark(bench, jobs=jobs)
    rundir = _make_run_dir(ns.out, "roc-bench", cfg)
    outputs = ["results.csv", "rocs.csv", "failures.csv", "summary.json"]

    with open(rundir / "results.csv", "w") as fh:
        fh.write("method,m,trial,seed,auc\n")
        for rec in result.records:
            fh.write(f"{rec.method},{rec.m},{rec.trial},{rec.seed},{rec.auc!r}\n")
    with open(rundir / "rocs.csv", "w") as fh:
        fh.write("method,m,trial,param,fpr,tpr\n")
        for rec in result.records:
            for (fpr, tpr), param in zip(rec.curve_points, rec.curve_params):
                fh.write(f"{rec.method},{rec.m},{rec.trial},{param!r},{fpr!r},{tpr!r}\n")
    with open(rundir / "failures.csv", "w") as fh:
        fh.write("m,trial,seed,error\n")
        for f in result.failures:
            msg = str(f["error"]).replace("\n", " ").replace(",", ";")
            fh.write(f"{f['m']},{f['trial']},{f['seed']},{msg}\n")
    _write_json(
        rundir / "summary.json",
        {"summary": result.summary, "n_tasks": result.n_tasks, "n_failures": len(result.failures)},
    )
    _write_manifest(rundir, "roc-bench", {**cfg, "jobs": jobs}, outputs, started)
    for key in sorted(result.summary):
        row = result.summary[key]
        mean = row["auc_mean"]
        print(f"{key}: auc={'n/a' if mean is None else f'{mean:.4f}'} (n={row['n_ok']})")
    print(f"wrote {rundir}")
    return 0


def _cmd_image_diff(ns) -> int:
    cfg = _resolved_config(ns, "image-diff")
    _require(cfg, "image-diff", "image_p", "image_q")
    started = time.time()
    from .imagediff import ImageDiffConfig, detect_changes, load_image, save_image

    image_p = load_image(cfg["image_p"], allow_png=cfg["png"])
    image_q = load_image(cfg["image_q"], allow_png=cfg["png"])
    diff_cfg = ImageDiffConfig(
        window=cfg["window"],
        stride=cfg["stride"],
        bandwidth=cfg["bandwidth"],
        target=cfg["target"],
        max_halvings=cfg["max_halvings"],
    )
    edges, overlay, report = detect_changes(image_p, image_q, diff_cfg)
    rundir = _make_run_dir(ns.out, "image-diff", cfg)
    outputs = ["edges.json", "overlay.ppm"]

    doc = {
        "edges": edges,
        "report": {
            "lambda_max": report.lambda_max,
            "lambda_final": report.lambda_final,
            "n_active": report.n_active,
            "target": report.target,
            "reached": report.reached,
            "warning": report.warning,
            "trace": [[lam, n] for lam, n in report.trace],
            "grid": {
                "gx": report.grid.gx,
                "gy": report.grid.gy,
                "window": report.grid.window,
                "stride": report.grid.stride,
            },
            "bandwidth": report.bandwidth,
            "n_edges": report.n_edges,
            "direction": report.direction,
        },
    }
    _write_json(rundir / "edges.json", doc)
    save_image(overlay, rundir / "overlay.ppm")
    _write_manifest(rundir, "image-diff", cfg, outputs, started)
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    print(f"{report.n_active} changed edges (target {report.target})")
    print(f"wrote {rundir}")
    return 0


def _cmd_diagnose(ns) -> int:
    cfg = _resolved_config(ns, "diagnose")
    started = time.time()
    import numpy as np

    from .evaluation import diagnose_assumptions
    from .features import FeatureMap, build_edge_set, eval_features
    from .synthgen import random_change_pair, sample_gaussian, true_delta

    ss = np.random.SeedSequence(entropy=cfg["seed"], spawn_key=(0,))
    pair_seed, _, seed_q = (int(s) for s in ss.generate_state(3, dtype=np.uint64))
    model_p, model_q = random_change_pair(cfg["m"], cfg["density"], cfg["remove"], pair_seed)
    delta_star = true_delta(model_p.theta, model_q.theta)
    data_q = sample_gaussian(model_q, cfg["nq"], seed_q)
    fq = eval_features(data_q, build_edge_set(cfg["m"]), FeatureMap.product())
    record = diagnose_assumptions(delta_star, fq)

    rundir = _make_run_dir(ns.out, "diagnose", cfg)
    doc = {
        "lambda_min": record.lambda_min,
        "alpha": record.alpha,
        "dependency_ok": record.dependency_ok,
        "incoherence_ok": record.incoherence_ok,
        "singular": record.singular,
        "n_support": record.n_support,
        "width": record.width,
        "seeds": {"pair": pair_seed, "sample_q": seed_q},
    }
    _write_json(rundir / "diagnosis.json", doc)
    _write_manifest(rundir, "diagnose", cfg, ["diagnosis.json"], started)
    print(
        f"lambda_min={record.lambda_min:.6g} alpha="
        + (f"{record.alpha:.6g}" if record.alpha is not None else "n/a")
        + f" dependency_ok={record.dependency_ok} incoherence_ok={record.incoherence_ok}"
    )
    print(f"wrote {rundir}")
    return 0


def _cmd_solve(ns) -> int:
    cfg = _resolved_config(ns, "solve")
    _require(cfg, "solve", "data_p", "data_q")
    started = time.time()
    from .features import FeatureMap, build_edge_set, eval_features, load_csv
    from .solvers import SolverOptions, lambda_grid, lambda_max, reg_path, solve_group_lasso

    data_p = load_csv(cfg["data_p"])
    data_q = load_csv(cfg["data_q"])
    if data_p.m != data_q.m:
        raise ConfigError(f"sample width mismatch: {data_p.m} vs {data_q.m}")
    es = build_edge_set(data_p.m)
    fmap = FeatureMap.product()
    fp = eval_features(data_p, es, fmap)
    fq = eval_features(data_q, es, fmap)
    opts = SolverOptions(tolerance=cfg["tolerance"], max_iterations=cfg["max_iter"])

    rundir = _make_run_dir(ns.out, "solve", cfg)
    outputs = []
    if cfg["lam"] is not None:
        delta, report = solve_group_lasso(fp, fq, cfg["lam"], options=opts)
        doc = delta.to_json_dict(cfg["lam"], float(report.objective_trace[-1]))
        doc["iterations"] = report.iterations
        doc["termination"] = report.termination
        doc["n_active"] = len(report.active_set)
        _write_json(rundir / "solution.json", doc)
        outputs.append("solution.json")
        print(f"lambda={cfg['lam']:.6g} active={len(report.active_set)} ({report.termination})")
    else:
        lmax = lambda_max(fp, fq)
        if lmax <= 0:
            raise MnDeltaError("lambda_max is zero: the two samples have identical feature means")
        grid = lambda_grid(lmax, cfg["grid_size"], cfg["span"])
        path = reg_path(fp, fq, grid, options=opts)
        entries = []
        for lam, delta, report in path:
            doc = delta.to_json_dict(lam, float(report.objective_trace[-1]))
            doc["iterations"] = report.iterations
            doc["termination"] = report.termination
            doc["n_active"] = len(report.active_set)
            entries.append(doc)
        _write_json(rundir / "path.json", {"lambda_max": lmax, "path": entries})
        outputs.append("path.json")
        print(f"path of {len(entries)} solutions from lambda_max={lmax:.6g}")
    _write_manifest(rundir, "solve", cfg, outputs, started)
    print(f"wrote {rundir}")
    return 0


_COMMANDS = {
    "synth-demo": _cmd_synth_demo,
    "roc-bench": _cmd_roc_bench,
    "image-diff": _cmd_image_diff,
    "diagnose": _cmd_diagnose,
    "solve": _cmd_solve,
}
