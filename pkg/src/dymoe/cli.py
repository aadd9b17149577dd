"""``dymoe`` command line: synth, run, theorem and report subcommands.

Exit codes: 0 success, 2 config error, 3 data error, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .baselines import online_run, pretrain_run, retrain_run
from .config import ConfigError, TrainConfig, build_dataclass, read_config_file
from .diagnostics import expert_specialization, gate_accuracy, write_specialization_csv
from .graph import (GraphFormatError, GraphInvariantError, GraphReferenceError, LeakageError,
                    SynthConfig, load_sequence, synth_gaussian_sequence, write_sequence)
from .memory import EmptyBlockError
from .metrics import DegenerateSplitError, IncompleteMatrixError, OverwriteError, write_metrics
from .theorem import MixtureSpec, MixtureSpecError, report_dict, run_comparison, sweep
from .trainer import SequencingError, run_incremental

log = logging.getLogger("dymoe")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4
METHODS = {"dymoe": run_incremental, "pretrain": pretrain_run, "online": online_run,
           "retrain": retrain_run}


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sections(path) -> dict[str, dict[str, str]]:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise CLIError(EXIT_CONFIG, f"config file not found: {path}")
    return read_config_file(path)


def _section(sections, name) -> dict[str, str]:
    values = dict(sections.get("", {}))
    values.update(sections.get(name, {}))
    return values


def eval_threads() -> int:
    """Parse ``DYMOE_THREADS``; evaluation never uses more workers than this."""
    raw = os.environ.get("DYMOE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CLIError(EXIT_CONFIG, f"DYMOE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise CLIError(EXIT_CONFIG, "DYMOE_THREADS must be positive")
    return n


# -- subcommands -----------------------------------------------------------
def cmd_synth(args) -> int:
    values = _section(_sections(args.config), "synth")
    if args.seed is not None:
        values["seed"] = str(args.seed)
    cfg = build_dataclass(SynthConfig, values, exclude=("means",))
    try:
        seq = synth_gaussian_sequence(cfg)
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None
    out = Path(args.out)
    write_sequence(seq, out)
    manifest = {k: v for k, v in dataclasses.asdict(cfg).items() if k != "means"}
    manifest.update(num_nodes=seq.num_nodes, num_edges=int(seq.edges.shape[0]))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {seq.num_nodes} nodes, {seq.edges.shape[0]} edges to {out} (seed {cfg.seed})")
    return EXIT_OK


def load_dataset(data_dir):
    data = Path(data_dir)
    nodes, edges = data / "nodes.tsv", data / "edges.tsv"
    if not nodes.is_file() or not edges.is_file():
        raise CLIError(EXIT_DATA, f"{data} must contain nodes.tsv and edges.tsv")
    return load_sequence(nodes, edges)


def train_config(args) -> TrainConfig:
    values = _section(_sections(args.config), "train")
    for key in ("seed", "k", "p", "mode"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    return build_dataclass(TrainConfig, values)


def cmd_run(args) -> int:
    threads = eval_threads()
    cfg = train_config(args)
    seq = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.method == "dymoe":
        result = run_incremental(seq, cfg, out)
    else:
        result = METHODS[args.method](seq, cfg)
        for t, blob in enumerate(result.checkpoints, start=1):
            (out / f"checkpoint_block{t}.bin").write_bytes(blob)
        result.train_log.to_csv(out / "train_log.csv")
    leaks = sum(v["violations"] for v in result.leakage.values())
    if leaks:
        raise CLIError(EXIT_INVARIANT, f"{leaks} future-block accesses recorded")
    extra = {"method": args.method, "seed": cfg.seed, "k": cfg.k, "p": cfg.p, "mode": cfg.mode,
             "eval_threads": threads, "eval_fanout": cfg.fanout,
             "max_block_seen": {str(b): v["max_block_seen"] for b, v in result.leakage.items()}}
    if args.method == "dymoe":
        table = expert_specialization(result.model, seq, cfg.fanout, cfg.seed)
        write_specialization_csv(out / "specialization.csv", table)
        extra["gate_accuracy"] = gate_accuracy(result.model, seq, cfg.fanout, cfg.seed)
    path = write_metrics(out / "metrics.json", result.metrics, result.wall_times, extra)
    m = json.loads(path.read_text())
    print(f"{args.method}: AA {m['AA']:.4f} AF {m['AF']:.4f} -> {path}")
    return EXIT_OK


def cmd_theorem(args) -> int:
    values = _section(_sections(args.config), "theorem")
    raw_seed = values.pop("seed", "0")
    try:
        seed = int(raw_seed) if args.seed is None else args.seed
    except ValueError:
        raise CLIError(EXIT_CONFIG, f"bad value {raw_seed!r} for key 'seed'") from None
    try:
        spec = build_dataclass(MixtureSpec, values)
    except MixtureSpecError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None
    cmp = run_comparison(spec, seed)
    points = sweep(spec, seed=seed) if args.sweep else None
    report = report_dict(spec, cmp, points)
    report["seed"] = seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theorem_report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"delta {cmp.delta:.4f} +/- {cmp.stderr:.4f}: {cmp.verdict}")
    if points:
        for p in points:
            print(f"  d/sigma {p.d_over_sigma:g}: delta {p.comparison.delta:.4f} +/- {p.comparison.stderr:.4f}")
    return EXIT_OK


REPORT_COLUMNS = ("run", "method", "seed", "k", "p", "mode", "AA", "AF", "wall_time")


def collect_rows(run_dirs) -> list[dict]:
    rows = []
    for d in run_dirs:
        path = Path(d) / "metrics.json"
        if not path.is_file():
            raise CLIError(EXIT_DATA, f"missing metrics file: {path}")
        m = json.loads(path.read_text())
        row = {"run": str(d), "method": m.get("method", ""), "seed": m.get("seed", ""),
               "k": m.get("k", ""), "p": m.get("p", ""), "mode": m.get("mode", ""),
               "AA": m["AA"], "AF": m["AF"], "wall_time": sum(m.get("wall_times", []))}
        for b, v in enumerate(m.get("diagonal", []), start=1):
            row[f"diag{b}"] = v
        rows.append(row)

    def key(r):
        num = lambda v: float(v) if v != "" else float("-inf")
        return (r["method"], num(r["k"]), num(r["p"]), num(r["seed"]), r["run"])

    return sorted(rows, key=key)


def cmd_report(args) -> int:
    rows = collect_rows(args.run_dirs)
    diag_cols = sorted({c for r in rows for c in r if c not in REPORT_COLUMNS},
                       key=lambda c: int(c[len("diag"):]))
    cols = list(REPORT_COLUMNS) + diag_cols
    handle = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(handle, fieldnames=cols, restval="")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            handle.close()
    return EXIT_OK


# -- entry point -----------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dymoe", description="Dynamic mixture-of-experts GNN experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic block sequence")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="incremental run of one method")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--method", choices=sorted(METHODS), default="dymoe")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--mode", choices=("dense", "sparse"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("theorem", help="mixture bench for the loss comparison")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--sweep", action="store_true", help="also sweep d/sigma over {1, 2, 4}")
    p.set_defaults(func=cmd_theorem)

    p = sub.add_parser("report", help="combine metrics.json files into one CSV")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, MixtureSpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphFormatError, GraphReferenceError, DegenerateSplitError, EmptyBlockError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GraphInvariantError, LeakageError, SequencingError, IncompleteMatrixError,
            OverwriteError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
