"""Command-line entry point: ``mulfusion {validate,run,sweep,compare,gen-data}``.

Exit codes: 0 success, 2 invalid config or input, 3 training diverged,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import yaml

from ._io import atomic_write_text
from .data import DatasetSpec, export_synthetic
from .errors import ConfigError, DataError, DivergenceError
from .evaluation import MetricsReport
from .experiment import load_config, run_experiment
from .sweep import parse_grid, sweep

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

log = logging.getLogger("mulfusion")


def _parse_value(text: str):
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    if isinstance(value, str):
        try:  # YAML 1.1 reads "1e6" as a string
            return float(value)
        except ValueError:
            pass
    return value


def _load(args):
    cfg = load_config(args.config)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected PATH=VALUE")
        path, value = item.split("=", 1)
        overrides[path.strip()] = _parse_value(value)
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def _report_errors(err: ConfigError) -> None:
    for v in err.violations:
        print(f"error: {v}", file=sys.stderr)


def cmd_validate(args) -> int:
    cfg = _load(args)
    problems = cfg.violations()
    if problems:
        for p in problems:
            print(f"violation: {p}")
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args).validate()
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = Path(args.out or cfg.output_dir)
    res = run_experiment(cfg, seed, out)
    print(res.report.table())
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args).validate()
    if not args.grid:
        raise ConfigError("--grid is required, e.g. --grid beta=0:1:6")
    key, values = parse_grid(args.grid)
    base = args.seed if args.seed is not None else cfg.seeds[0]
    seeds = [base + r for r in range(args.n_seeds)]
    out = Path(args.out or os.path.join(cfg.output_dir, f"sweep-{key}"))
    parallel = args.parallel or int(os.environ.get("MULFUSION_THREADS", os.cpu_count() or 1))
    result = sweep(cfg, key, values, seeds, out, parallel)
    print(result.to_csv(), end="")
    for f in result.failures:
        print(f"cell {key}={f['value']} seed={f['seed']} failed: {f['failure']}", file=sys.stderr)
    print(f"aggregate written to {out / 'sweep.csv'}")
    return EXIT_OK


def _fmt(x, digits=4) -> str:
    return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.{digits}f}"


def _rank_flags(values, lower_is_better: bool) -> list[str]:
    """'best' / 'second' markers; ties keep input order, so the first input wins."""
    idx = [i for i, v in enumerate(values) if v is not None]
    idx.sort(key=lambda i: values[i] if lower_is_better else -values[i])
    flags = [""] * len(values)
    if idx:
        flags[idx[0]] = "best"
    if len(idx) > 1:
        flags[idx[1]] = "second"
    return flags


def compare_reports(reports: list[MetricsReport], group: bool = False) -> list[dict]:
    """Row-per-method comparison; refuses reports from different datasets."""
    if len(reports) < 2:
        raise ConfigError("compare needs at least two reports")
    fps = {r.dataset_fingerprint for r in reports}
    if len(fps) > 1:
        raise ConfigError(f"reports come from different datasets (fingerprints {sorted(fps)}); "
                          "error rates are not comparable")
    if group:
        buckets: dict[str, list[MetricsReport]] = {}
        for r in reports:
            buckets.setdefault(r.method, []).append(r)
        rows = []
        for method, rs in buckets.items():
            errs = [r.error for r in rs]
            aucs = [r.auc for r in rs if r.auc is not None]
            rows.append({"method": method, "error": sum(errs) / len(errs),
                         "auc": sum(aucs) / len(aucs) if aucs else None,
                         "std": _std(errs), "n": len(rs)})
    else:
        rows = [{"method": r.method, "error": r.error, "auc": r.auc, "std": None, "n": 1}
                for r in reports]
    for flag, row in zip(_rank_flags([r["error"] for r in rows], True), rows):
        row["error_rank"] = flag
    for flag, row in zip(_rank_flags([r["auc"] for r in rows], False), rows):
        row["auc_rank"] = flag
    return rows


def _std(xs) -> float | None:
    if len(xs) < 2:
        return None
    m = sum(xs) / len(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def comparison_text(rows: list[dict]) -> str:
    mark = {"best": " **", "second": " *", "": ""}
    table = [("method", "error", "auc", "std", "n")]
    for r in rows:
        table.append((r["method"], _fmt(r["error"]) + mark[r["error_rank"]],
                      _fmt(r["auc"]) + mark[r["auc_rank"]], _fmt(r["std"]), str(r["n"])))
    widths = [max(len(row[i]) for row in table) for i in range(5)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
    lines.append("** best, * second best")
    return "\n".join(lines)


def comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "error", "auc", "std", "n", "error_rank", "auc_rank"])
    for r in rows:
        w.writerow([r["method"], repr(r["error"]), "" if r["auc"] is None else repr(r["auc"]),
                    "" if r["std"] is None else repr(r["std"]), r["n"], r["error_rank"],
                    r["auc_rank"]])
    return buf.getvalue()


def cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        with open(path) as fh:
            reports.append(MetricsReport.from_dict(json.load(fh)))
    rows = compare_reports(reports, group=args.group)
    print(comparison_text(rows))
    if args.out:
        atomic_write_text(args.out, comparison_csv(rows))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    spec: DatasetSpec = cfg.data
    if spec.source != "synthetic":
        raise ConfigError("gen-data needs a config with data.source: synthetic")
    if args.seed is not None:
        spec.synthetic.seed = args.seed
    problems = spec.synthetic.violations()
    if problems:
        raise ConfigError(problems)
    out = Path(args.out or os.path.join(cfg.output_dir, "synthetic.csv"))
    csv_path, sidecar = export_synthetic(spec, out)
    print(f"wrote {csv_path} and {sidecar}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mulfusion", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out=True):
        sp.add_argument("--config", required=True,
                        help="YAML config file or preset name (synthetic-weak, higgs-small, higgs-full)")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="override a config field, e.g. --set fusion.kind=add")
        if seed:
            sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out")

    sp = sub.add_parser("validate", help="check a config and list every violation")
    common(sp, seed=False, out=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("run", help="train and evaluate one seed, writing artifacts")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="grid sweep with several seeds per grid value")
    common(sp)
    sp.add_argument("--grid", help="KEY=v1,v2,... or KEY=start:stop:count "
                                   "(keys: beta, delta, head_depth, embed_dim, lr)")
    sp.add_argument("--n-seeds", type=int, default=5)
    sp.add_argument("--parallel", type=int, help="worker processes (default: all cores)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="tabulate metrics.json files side by side")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--group", action="store_true",
                    help="merge reports with the same method into mean and std")
    sp.add_argument("--out", help="also write the table as CSV")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-data", help="export a synthetic dataset as CSV plus JSON sidecar")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        _report_errors(err)
        return EXIT_INVALID
    except DivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
