"""Desk-scale end-to-end run: generate, filter, train over seeds, evaluate.

Every step goes through the ``tega`` command line, so each one leaves a
config echo under ``OUT/reports`` that ``tega replay`` can rerun.

    python scripts/desk_experiment.py --out runs/desk
    python scripts/desk_experiment.py --out runs/desk --corrupt 0.3 --tag c8-

Generation resumes from its ledger, so a second run in the same directory
reuses the first run's clouds and views.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from pathlib import Path

from tega.cli import main as tega

DESK_POINTS = 1024
DESK_BASE_LR = 1.6e-2
HELDOUT_SEED = 1_000_000


def run(cmd: list[str]) -> None:
    code = tega(cmd)
    if code != 0:
        raise SystemExit(f"tega {' '.join(cmd)} exited {code}")


def eval_row(out: Path, name: str) -> dict:
    with open(out / "reports" / f"eval-{name}.csv", newline="") as fh:
        row = next(csv.DictReader(fh))
    return {k: float(row[k]) for k in ("top1", "top1_c", "top3", "top5")}


def train_and_eval(out: Path, manifest: Path, heldout: Path, tag: str, seeds, args) -> list[dict]:
    rows = []
    for seed in seeds:
        name = f"{tag}-s{seed}"
        run([
            "train", "--out", str(out), "--name", name, "--train", str(manifest), "--seed", str(seed),
            "--epochs", str(args.epochs), "--warmup", str(args.warmup), "--batch-size", str(args.batch_size),
            "--base-lr", str(args.base_lr),
        ])
        run(["eval", "--out", str(out), "--name", name, "--checkpoint", str(out / "checkpoints" / f"{name}.ckpt"),
             "--in", str(heldout)])
        rows.append(eval_row(out, name))
    return rows


def mean(rows: list[dict]) -> dict:
    return {k: statistics.fmean(r[k] for r in rows) for k in rows[0]}


def experiment(args) -> dict:
    out = Path(args.out)
    manifests = out / "manifests"
    tag = args.tag
    t0 = time.perf_counter()
    common = ["--points", str(args.points), "--guidance", str(args.guidance)]
    run(["generate", "--out", str(out), "--name", "train", "--per-class", str(args.per_class), "--seed", "0", *common])
    run(["generate", "--out", str(out), "--name", "heldout", "--split", "eval", "--per-class", str(args.eval_per_class),
         "--seed", str(HELDOUT_SEED), *common])
    heldout = manifests / "heldout.manifest"
    train = manifests / "train.manifest"
    result = {"generate_s": time.perf_counter() - t0}

    if args.corrupt:
        run(["corrupt", "--out", str(out), "--name", f"{tag}noisy", "--in", str(train), "--fraction",
             str(args.corrupt), "--seed", "7"])
        train = manifests / f"{tag}noisy.manifest"
        corrupted = set(json.loads((out / "reports" / f"corrupt-{tag}noisy.json").read_text())["corrupted"])

    run(["filter", "--out", str(out), "--name", f"{tag}filtered", "--in", str(train)])
    kept = manifests / f"{tag}filtered-kept.manifest"
    if args.corrupt:
        verdicts = {}
        with open(out / "reports" / f"filter-{tag}filtered.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                verdicts[rec["sample_id"]] = rec["verdict"]
        bad = [verdicts[s] == "reject" for s in corrupted]
        good = [verdicts[s] == "reject" for s in verdicts if s not in corrupted]
        result["corrupt_rejected"] = sum(bad) / len(bad)
        result["clean_rejected"] = sum(good) / len(good)

    seeds = range(args.seeds)
    result["filtered"] = train_and_eval(out, kept, heldout, f"{tag}filtered", seeds, args)
    result["filtered_mean"] = mean(result["filtered"])
    if args.corrupt:
        result["unfiltered"] = train_and_eval(out, train, heldout, f"{tag}unfiltered", seeds, args)
        result["unfiltered_mean"] = mean(result["unfiltered"])
    result["total_s"] = time.perf_counter() - t0
    return result


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=80)
    p.add_argument("--eval-per-class", type=int, default=20)
    p.add_argument("--points", type=int, default=DESK_POINTS)
    p.add_argument("--guidance", type=float, default=3.0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--base-lr", type=float, default=DESK_BASE_LR)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--corrupt", type=float, default=0.0, help="fraction of training labels to corrupt")
    p.add_argument("--tag", default="", help="prefix for filter/train artifact names; generation is shared")
    return p


if __name__ == "__main__":
    res = experiment(parser().parse_args())
    json.dump(res, sys.stdout, indent=2)
    print()
