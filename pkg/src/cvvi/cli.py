"""``cvvi`` command line: fit, sweep, sensitivity, checks.

Exit codes: 0 ok, 1 configuration error, 2 dataset error, 3 numerical abort
in a fit, 4 a failed self-check.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .datasets import resolve_dataset
from .engine import run_inference, sensitivity_sweep
from .errors import ConfigError, DatasetError

EXIT_CONFIG, EXIT_DATASET, EXIT_NUMERIC, EXIT_CHECKS = 1, 2, 3, 4

TRACE_COLUMNS = ["iter", "elbo", "grad_sq_norm", "weight_norm", "ms"]
SUMMARY_COLUMNS = ["iter", "elbo_mean", "elbo_stderr", "n_runs"]
SWEEP_COLUMNS = ["lr", "subset", "final_elbo_mean", "final_elbo_stderr", "diverged_fraction"]
SENSITIVITY_COLUMNS = ["v0", "M", "lag", "grad_sq_norm_mean", "stderr"]


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def fmt(v):
    """Shortest round-trip text for numbers; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_atomic(path: Path, text: str):
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def trace_rows(trace):
    return [
        {"iter": r.t, "elbo": r.elbo, "grad_sq_norm": r.grad_sq_norm, "weight_norm": r.weight_norm, "ms": r.ms}
        for r in trace.records
    ]


def _mean_se(values):
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, 0
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se, int(v.size)


def summarize_traces(traces, iterations):
    """Per-iteration mean and standard error of the ELBO over runs with a finite value there."""
    rows = []
    for t in range(1, iterations + 1):
        vals = [tr.records[t - 1].elbo for tr in traces if len(tr.records) >= t]
        mean, se, n = _mean_se(vals)
        rows.append({"iter": t, "elbo_mean": mean, "elbo_stderr": se, "n_runs": n})
    return rows


def _json_number(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def _runs(cfg: ExperimentConfig, ds, lr, cvs):
    traces = []
    for k in range(cfg.seeds):
        rc = cfg.run_config(lr=lr, cvs=cvs, seed=cfg.seed + k)
        traces.append(run_inference(rc, ds))
    return traces


def cmd_fit(cfg: ExperimentConfig) -> int:
    ds = resolve_dataset(cfg.dataset)
    out = Path(cfg.out)
    start = time.perf_counter()
    traces = _runs(cfg, ds, cfg.lr, cfg.cvs)
    for k, tr in enumerate(traces):
        write_atomic(out / f"trace_seed{cfg.seed + k:04d}.csv", csv_text(TRACE_COLUMNS, trace_rows(tr)))
    rows = summarize_traces(traces, cfg.iterations)
    write_atomic(out / "summary.csv", csv_text(SUMMARY_COLUMNS, rows))
    js = [{k: _json_number(v) for k, v in r.items()} for r in rows]
    write_atomic(out / "summary.json", json.dumps(js, indent=1) + "\n")
    write_atomic(out / "config.json", cfg.to_json())
    final = _mean_se([tr.final_elbo for tr in traces])
    _log(
        f"fit {cfg.dataset} cvs={cfg.cvs} lr={cfg.lr}: final ELBO {final[0]:.2f} +- {final[1]:.2f} "
        f"over {final[2]}/{len(traces)} runs ({time.perf_counter() - start:.1f}s) -> {out}"
    )
    aborted = [(cfg.seed + k, tr.aborted) for k, tr in enumerate(traces) if tr.aborted]
    if aborted:
        for seed, why in aborted:
            _log(f"seed {seed}: aborted at {why}")
        return EXIT_NUMERIC
    return 0


def dedup(values, label):
    seen = []
    for v in values:
        if v in seen:
            _log(f"warning: duplicate {label} {v!r} ignored")
        else:
            seen.append(v)
    return seen


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.lrs:
        raise ConfigError("sweep needs a non-empty learning-rate list")
    if not cfg.subsets:
        raise ConfigError("sweep needs at least one subset")
    ds = resolve_dataset(cfg.dataset)
    out = Path(cfg.out)
    rows, runs = [], []
    for lr in dedup(cfg.lrs, "learning rate"):
        for subset in dedup(cfg.subsets, "subset"):
            start = time.perf_counter()
            traces = _runs(cfg, ds, lr, subset)
            finals = [tr.final_elbo for tr in traces]
            mean, se, _ = _mean_se(finals)
            div = float(np.mean([tr.diverged for tr in traces]))
            rows.append({"lr": lr, "subset": subset, "final_elbo_mean": mean, "final_elbo_stderr": se, "diverged_fraction": div})
            for k, tr in enumerate(traces):
                runs.append({"lr": lr, "subset": subset, "seed": cfg.seed + k, "final_elbo": tr.final_elbo, "diverged": tr.diverged})
                if tr.aborted:
                    _log(f"lr={lr} {subset} seed {cfg.seed + k}: aborted at {tr.aborted}")
            _log(f"lr={lr} {subset}: {mean:.2f} +- {se:.2f}, diverged {div:.2f} ({time.perf_counter() - start:.1f}s)")
    write_atomic(out / "sweep.csv", csv_text(SWEEP_COLUMNS, rows))
    write_atomic(out / "sweep_runs.csv", csv_text(["lr", "subset", "seed", "final_elbo", "diverged"], runs))
    write_atomic(out / "config.json", cfg.to_json())
    return 0


def cmd_sensitivity(cfg: ExperimentConfig) -> int:
    if not cfg.v0_grid or not cfg.M_grid or not cfg.lags:
        raise ConfigError("sensitivity grids (v0_grid, M_grid, lags) must be non-empty")
    ds = resolve_dataset(cfg.dataset)
    out = Path(cfg.out)
    rows, _ = sensitivity_sweep(
        ds, cfg.cvs, cfg.v0_grid, cfg.M_grid, cfg.lags, n_rep=cfg.n_rep, n_outer=cfg.n_outer, seed=cfg.seed,
        beta=cfg.momentum,
    )
    rows = sorted(rows, key=lambda r: (r.lag, r.M, r.v0))
    table = [
        {"v0": r.v0, "M": r.M, "lag": r.lag, "grad_sq_norm_mean": r.grad_sq_norm_mean, "stderr": r.stderr} for r in rows
    ]
    write_atomic(out / "sensitivity.csv", csv_text(SENSITIVITY_COLUMNS, table))
    write_atomic(out / "config.json", cfg.to_json())
    _log(f"sensitivity: {len(table)} cells -> {out / 'sensitivity.csv'}")
    return 0


def cmd_checks(seed: int = 0) -> int:
    from .checks import run_checks

    start = time.perf_counter()
    results = run_checks(seed=seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed in {time.perf_counter() - start:.1f}s")
    if failed:
        _log(f"first failing property: {failed[0].name}")
        return EXIT_CHECKS
    return 0


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _strs(text):
    return [x.strip() for x in text.split(";" if ";" in text else "/") if x.strip()] if text else []


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvvi", description="BBVI for Bayesian logistic regression with combined control variates")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat JSON config file; command-line values override it")
        p.add_argument("--dataset", help="CSV path or synthetic:<name> (blobs2d, australian_like)")
        p.add_argument("--lr", type=float)
        p.add_argument("--cvs", help="subset name (none, S4..S7, c5, c7) or comma list of c1..c7, score")
        p.add_argument("--seeds", type=int, help="number of runs (seeds seed..seed+n-1)")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--iterations", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--momentum", type=float)
        p.add_argument("--v0", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--elbo-samples", type=int, dest="elbo_samples")
        p.add_argument("--out", help="output directory")
        p.add_argument("--local-reparam", action="store_const", const=True, dest="local_reparam")
        p.add_argument("--no-rp2-fallback", action="store_const", const=False, dest="rp2_fallback",
                       help="abort instead of zeroing RP2 columns when L L^T is too ill-conditioned")
        p.add_argument("--timing", action="store_const", const=True, help="fill the wall-clock ms column")

    common(sub.add_parser("fit", help="multi-seed runs at one learning rate; traces and summary"))
    p = sub.add_parser("sweep", help="learning rate x subset grid; sweep.csv")
    common(p)
    p.add_argument("--lrs", type=_floats, help="comma list of learning rates")
    p.add_argument("--subsets", type=_strs, help="subsets separated by '/' (e.g. none/S7/c1,c7)")
    p = sub.add_parser("sensitivity", help="E|g|^2 over v0 x M (x lag) at a warm-started point")
    common(p)
    p.add_argument("--v0-grid", type=_floats, dest="v0_grid")
    p.add_argument("--m-grid", type=_ints, dest="M_grid")
    p.add_argument("--lags", type=_ints)
    p.add_argument("--n-rep", type=int, dest="n_rep")
    p.add_argument("--n-outer", type=int, dest="n_outer")
    p = sub.add_parser("checks", help="run the property suite")
    p.add_argument("--seed", type=int, default=0)
    return parser


OVERRIDE_KEYS = (
    "dataset lr cvs seeds seed iterations batch_size momentum v0 gamma elbo_samples out local_reparam "
    "rp2_fallback timing lrs subsets v0_grid M_grid lags n_rep n_outer"
).split()


def resolve_config(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    for key in OVERRIDE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return ExperimentConfig.from_dict(base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "checks":
            return cmd_checks(args.seed)
        cfg = resolve_config(args)
        command = {"fit": cmd_fit, "sweep": cmd_sweep, "sensitivity": cmd_sensitivity}[args.command]
        return command(cfg)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except DatasetError as exc:
        _log(f"dataset error: {exc}")
        return EXIT_DATASET


if __name__ == "__main__":
    sys.exit(main())
