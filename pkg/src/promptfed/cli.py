"""Command line entry point: ``promptfed run <config>`` and ``promptfed verify``."""

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, load_config
from .datasets import load_table
from .federation import SELECTED, WARMUP, run_experiment

log = logging.getLogger("promptfed")

METRICS_HEADER = ["run_id", "optimizer", "seed", "round", "phase", "accuracy", "loss",
                  "uplink_params", "downlink_params"]
OUTPUT_FILES = ("metrics.csv", "selection.json", "summary.json")


def run_id(optimizer, seed):
    return f"{optimizer}-seed{seed}"


def _one_run(cfg: RunConfig, optimizer, seed):
    dataset = None
    if cfg.data["source"] != "synthetic":
        dataset = load_table(cfg.data["source"], cfg.data["format"])
    res = run_experiment(cfg.federation_config(optimizer, seed, dataset), dataset)
    rid = run_id(optimizer, seed)
    rows = [[rid, optimizer, seed, m.round, m.phase, m.accuracy, m.loss, m.uplink_params, m.downlink_params]
            for m in res.metrics]
    left = any(m.phase == SELECTED for m in res.metrics)
    sel = {
        "run_id": rid,
        "left_warmup": left,
        "final_phase": res.metrics[-1].phase if res.metrics else WARMUP,
        "selection": None if res.selection is None else res.selection.to_record(),
        "selection_uplink_params": res.ledger.selection_uplink,
        "selection_downlink_params": res.ledger.selection_downlink,
        "final_global_only_accuracy": res.metrics[-1].global_accuracy,
    }
    return rows, sel


def run_sweep(cfg: RunConfig):
    """Every (optimizer, seed) pair of the sweep; rows in sweep order."""
    jobs = [(opt, seed) for opt in cfg.optimizers for seed in cfg.seeds]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_one_run, [cfg] * len(jobs), *zip(*jobs)))
    else:
        results = []
        for opt, seed in jobs:
            log.info("running %s", run_id(opt, seed))
            results.append(_one_run(cfg, opt, seed))
    rows = [r for res in results for r in res[0]]
    selections = [res[1] for res in results]
    return rows, selections


def format_metrics(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for r in reader:
            out.append([r["run_id"], r["optimizer"], int(r["seed"]), int(r["round"]), r["phase"],
                        float(r["accuracy"]), float(r["loss"]), int(r["uplink_params"]),
                        int(r["downlink_params"])])
        return out


def summarize(rows, target_fraction=0.9):
    """Per-optimizer figures derived only from metrics rows.

    The target accuracy is ``target_fraction`` times the best accuracy any run
    reached. Runs that never hit it count as ``rounds + 1`` in the mean.
    """
    runs = {}
    for rid, opt, seed, rnd, _phase, acc, _loss, up, down in rows:
        runs.setdefault((opt, seed, rid), []).append((rnd, acc, up, down))
    best = max(r[5] for r in rows)
    target = target_fraction * best
    per_opt = {}
    for (opt, seed, rid), recs in runs.items():
        recs.sort()
        hit = next((rnd for rnd, acc, _, _ in recs if acc >= target), None)
        per_opt.setdefault(opt, []).append({
            "run_id": rid,
            "seed": seed,
            "final_accuracy": recs[-1][1],
            "best_accuracy": max(a for _, a, _, _ in recs),
            "rounds": len(recs),
            "rounds_to_target": hit,
            "uplink_params": sum(u for _, _, u, _ in recs),
            "downlink_params": sum(d for _, _, _, d in recs),
        })
    summary = {"target_fraction": target_fraction, "best_accuracy": best, "target_accuracy": target,
               "optimizers": {}}
    for opt, items in per_opt.items():
        n = len(items)
        rtt = [it["rounds_to_target"] if it["rounds_to_target"] is not None else it["rounds"] + 1
               for it in items]
        summary["optimizers"][opt] = {
            "runs": items,
            "final_accuracy_mean": sum(it["final_accuracy"] for it in items) / n,
            "best_accuracy_mean": sum(it["best_accuracy"] for it in items) / n,
            "rounds_to_target_mean": sum(rtt) / n,
            "runs_reaching_target": sum(it["rounds_to_target"] is not None for it in items),
            "total_communication_params_mean": sum(it["uplink_params"] + it["downlink_params"]
                                                   for it in items) / n,
        }
    return summary


def cmd_run(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        rows, selections = run_sweep(cfg)
        payloads = {
            "metrics.csv": format_metrics(rows),
            "selection.json": json.dumps({"runs": selections}, indent=2, sort_keys=True) + "\n",
            "summary.json": json.dumps(summarize(rows, cfg.target_fraction), indent=2, sort_keys=True) + "\n",
        }
        for name, text in payloads.items():
            tmp = out / (name + ".tmp")
            written.append(tmp)
            tmp.write_text(text, encoding="utf-8")
        for name in payloads:
            os.replace(out / (name + ".tmp"), out / name)
            written.append(out / name)
    except Exception:
        for path in written:
            if path.exists():
                path.unlink()
        raise
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="promptfed", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiments described by a YAML config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
    run.add_argument("--jobs", type=int, help="worker processes for the sweep")
    sub.add_parser("verify", help="run the built-in oracle checks")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "verify":
        from .verify import run_checks

        return 0 if run_checks() else 1
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.jobs is not None:
            cfg.jobs = args.jobs
        code = cmd_run(cfg)
    except Exception as exc:  # any failure: message and nonzero exit
        print(f"promptfed: error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {', '.join(OUTPUT_FILES)} to {cfg.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
