"""Command-line entry point: generate, filter, mix, train, eval, sweep and friends.

Every command writes ``reports/config-<command>-<name>.json`` with its full
argument set; paths inside ``--out`` are stored as ``@out/...`` so that
``tega replay ECHO --out NEW`` reruns the command into a fresh directory.

Exit codes: 0 success (per-sample failures included), 1 usage error,
2 backend unreachable, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from tega.errors import BackendUnreachable, TegaError

log = logging.getLogger("tega")

EXIT_OK, EXIT_USAGE, EXIT_BACKEND, EXIT_INVARIANT = 0, 1, 2, 3
OUT_TOKEN = "@out"
ECHO_SCHEMA = "tega-config/1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


# -- shared helpers -------------------------------------------------------


def _workspace(args):
    from tega.runs import Workspace

    return Workspace(args.out).create()


def _need_file(path, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return p


def _read_manifest(path, flag: str):
    from tega.datasetio import read_manifest

    return read_manifest(_need_file(path, flag))


def _generator(args):
    from tega.generation import ProceduralGenerator, RemoteGenerator

    if args.backend == "procedural":
        return ProceduralGenerator()
    endpoint = args.endpoint or os.environ.get("TEGA_GEN_ENDPOINT")
    if not endpoint:
        raise UsageError("remote generation needs --endpoint or TEGA_GEN_ENDPOINT")
    return RemoteGenerator(endpoint, cache_dir=args.cache)


def _filter_backends(args, vocabulary):
    from tega.filtering import FilterBackends, RemoteCaptioner, RemoteJudge, RemoteMerger

    if args.filter_backend == "stub":
        return FilterBackends.stub(vocabulary)
    caption = args.caption_endpoint or os.environ.get("TEGA_CAPTION_ENDPOINT")
    judge = args.judge_endpoint or os.environ.get("TEGA_JUDGE_ENDPOINT")
    if not caption or not judge:
        raise UsageError("remote filtering needs caption and judge endpoints")
    token = os.environ.get("TEGA_JUDGE_TOKEN")
    return FilterBackends(
        RemoteCaptioner(caption, cache_dir=args.cache),
        RemoteMerger(judge, token=token, cache_dir=args.cache),
        RemoteJudge(judge, token=token, cache_dir=args.cache),
    )


def _train_config(args):
    from tega.trainer import TrainConfig

    return TrainConfig(
        pair_set=args.pairs,
        epochs=args.epochs,
        warmup_epochs=args.warmup,
        batch_size=args.batch_size,
        base_lr=args.base_lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        tau_init=args.tau_init,
        threads=args.threads,
    )


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


# -- commands -------------------------------------------------------------


def cmd_generate(args) -> int:
    from tega.generation.shapes import CLASS_BUILDERS
    from tega.render import RenderOptions
    from tega.runs import class_plan, generate_manifest

    if args.proportional_to:
        ref = _read_manifest(args.proportional_to, "--proportional-to")
        if args.total is None:
            raise UsageError("--proportional-to needs --total")
        counts = [0] * len(ref.class_vocabulary)
        for label in ref.labels():
            counts[label] += 1
        plan = class_plan(ref.class_vocabulary, weights=counts, total=args.total)
    else:
        if args.per_class is None:
            raise UsageError("give --per-class, or --proportional-to with --total")
        plan = class_plan(args.classes or list(CLASS_BUILDERS), args.per_class)
    ws = _workspace(args)
    manifest, report = generate_manifest(
        ws,
        plan,
        args.guidance,
        args.seed,
        _generator(args),
        name=args.name,
        split=args.split,
        num_points=args.points,
        options=RenderOptions(),
        jobs=args.jobs,
        resume=not args.no_resume,
    )
    _write_json(ws.report(f"generate-{args.name}.json"), report.to_dict())
    print(f"generated {report.success}/{report.attempted} samples; {report.failure_count} failed")
    for stage, n in report.failures_by_stage().items():
        print(f"  {stage}: {n}")
    print(ws.manifest(manifest.name))
    return EXIT_OK


def cmd_filter(args) -> int:
    from tega.runs import filter_manifest

    manifest = _read_manifest(args.input, "--in")
    ws = _workspace(args)
    kept, rejected, summary, _ = filter_manifest(
        ws,
        manifest,
        _filter_backends(args, manifest.class_vocabulary),
        args.threshold,
        name=args.name,
        jobs=args.jobs,
        resume=not args.no_resume,
    )
    print(summary.to_csv(), end="")
    print(f"kept {len(kept)}, rejected {len(rejected)}")
    if summary.stage_failures:
        print("stage failures: " + ", ".join(f"{k}={v}" for k, v in sorted(summary.stage_failures.items())))
    return EXIT_OK


def cmd_mix(args) -> int:
    from tega.datasetio import merge_expand, replace_mix, write_manifest

    real = _read_manifest(args.real, "--real")
    syn = _read_manifest(args.synthetic, "--synthetic")
    ws = _workspace(args)
    if args.expand_scale is not None:
        out = merge_expand(real, syn, args.expand_scale, args.seed, name=args.name)
    else:
        out = replace_mix(real, syn, args.replace_percent, args.seed, name=args.name)
    write_manifest(out, ws.manifest(out.name))
    print(f"{out.name}: {len(out)} records {dict(out.provenance_counts)}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    from tega.datasetio import corrupt_labels, write_manifest

    manifest = _read_manifest(args.input, "--in")
    ws = _workspace(args)
    out, ids = corrupt_labels(manifest, args.fraction, args.seed, name=args.name)
    write_manifest(out, ws.manifest(out.name))
    _write_json(ws.report(f"corrupt-{args.name}.json"), {"corrupted": ids})
    print(f"relabelled {len(ids)}/{len(out)} records")
    return EXIT_OK


def cmd_train(args) -> int:
    from tega.trainer import StackConfig, fit, save_checkpoint

    manifest = _read_manifest(args.train, "--train")
    config = _train_config(args)
    ws = _workspace(args)
    stack, trace = fit(manifest, config, stack_config=StackConfig(provider_seed=args.provider_seed))
    save_checkpoint(ws.checkpoint(args.name), stack, config)
    trace.write(ws.report(f"train-{args.name}-loss.csv"))
    last = trace.rows[-1]
    print(f"trained {config.epochs} epochs on {len(manifest)} samples: loss {last.mean_loss:.4f}, tau {last.tau:.4f}")
    print(ws.checkpoint(args.name))
    return EXIT_OK


def cmd_eval(args) -> int:
    from tega.evaluation import evaluate, write_confusion_csv, write_report_csv
    from tega.trainer import load_checkpoint

    stack, _ = load_checkpoint(_need_file(args.checkpoint, "--checkpoint"))
    manifests = [_read_manifest(p, "--in") for p in args.input]
    ws = _workspace(args)
    reports = [evaluate(m, stack, template=args.template) for m in manifests]
    write_report_csv(reports, ws.report(f"eval-{args.name}.csv"))
    for r in reports:
        write_confusion_csv(r, ws.report(f"eval-{args.name}-{r.dataset}-confusion.csv"))
        print(f"{r.dataset}: top1 {r.top1:.4f} top1_c {r.top1_per_class_macro:.4f} top3 {r.top3:.4f} top5 {r.top5:.4f} n={r.sample_count}")
    return EXIT_OK


def cmd_export(args) -> int:
    from tega.trainer import export_embeddings, load_checkpoint, write_embeddings_csv

    stack, _ = load_checkpoint(_need_file(args.checkpoint, "--checkpoint"))
    manifest = _read_manifest(args.input, "--in")
    ws = _workspace(args)
    rows = export_embeddings(manifest, stack)
    write_embeddings_csv(rows, ws.report(f"embeddings-{args.name}.csv"))
    print(f"exported {len(rows)} embeddings")
    return EXIT_OK


def cmd_ingest(args) -> int:
    from tega.datasetio import ingest_real, read_ingest_index, write_manifest

    items = read_ingest_index(_need_file(args.index, "--index"))
    ws = _workspace(args)
    manifest, errors = ingest_real(
        items, ws.root, name=args.name, vocabulary=args.classes, split=args.split, jobs=args.jobs
    )
    write_manifest(manifest, ws.manifest(manifest.name))
    with open(ws.report(f"ingest-{args.name}-errors.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for e in errors:
            fh.write(json.dumps(vars(e), sort_keys=True) + "\n")
    print(f"ingested {len(manifest)} records; {len(errors)} errors")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from tega.evaluation import SweepConfig, run_sweep
    from tega.generation.shapes import CLASS_BUILDERS

    for flag, path in (("--real", args.real), ("--synthetic", args.synthetic), ("--eval", args.eval)):
        if path is not None:
            _need_file(path, flag)
    sep = ";" if args.axis == "pairs" else ","
    values = tuple(v for v in (args.values or "").split(sep) if v.strip())
    classes = tuple(args.classes or CLASS_BUILDERS)
    cfg = SweepConfig(
        axis=args.axis,
        values=values,
        classes=classes,
        per_class=args.per_class,
        eval_per_class=args.eval_per_class,
        guidance=args.guidance,
        eval_guidance=args.eval_guidance,
        num_points=args.points,
        filtering=args.filtering == "on",
        threshold=args.threshold,
        seed=args.seed,
        train=_train_config(args),
        real=args.real,
        synthetic=args.synthetic,
        eval=args.eval,
        template=args.template,
    )
    ws = _workspace(args)
    rows = run_sweep(cfg, ws.root, _generator(args), _filter_backends(args, classes), name=args.name, jobs=args.jobs)
    print(ws.report(f"sweep-{args.name}.csv").read_text(encoding="utf-8"), end="")
    failed = [r for r in rows if not r.ok]
    if failed:
        print(f"{len(failed)} of {len(rows)} rows failed")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        echo = json.loads(Path(args.echo).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config echo {args.echo}: {exc}") from exc
    if not isinstance(echo, dict) or echo.get("schema") != ECHO_SCHEMA:
        raise UsageError(f"{args.echo} is not a config echo")
    out = str(Path(args.out).resolve())
    values = _substitute(echo["args"], OUT_TOKEN, out)
    values["out"] = out
    values["command"] = echo["command"]
    return _dispatch(argparse.Namespace(**values))


COMMANDS = {
    "generate": cmd_generate,
    "filter": cmd_filter,
    "mix": cmd_mix,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "eval": cmd_eval,
    "export": cmd_export,
    "ingest": cmd_ingest,
    "sweep": cmd_sweep,
}


# -- config echo ----------------------------------------------------------


def _substitute(obj, old: str, new: str):
    if isinstance(obj, str):
        if obj == old or obj.startswith(old + "/"):
            return new + obj[len(old) :]
        return obj
    if isinstance(obj, list):
        return [_substitute(v, old, new) for v in obj]
    if isinstance(obj, dict):
        return {k: _substitute(v, old, new) for k, v in obj.items()}
    return obj


def _relocate(obj, out: Path):
    """Absolute form of a path argument; paths inside ``out`` become ``@out/...``."""
    if isinstance(obj, list):
        return [_relocate(v, out) for v in obj]
    full = Path(obj).resolve()
    try:
        rel = full.relative_to(out)
    except ValueError:
        return str(full)
    return OUT_TOKEN if rel == Path(".") else f"{OUT_TOKEN}/{rel.as_posix()}"


PATH_ARGS = {"input", "train", "real", "synthetic", "eval", "checkpoint", "index", "proportional_to", "cache"}


def config_echo(args) -> dict:
    out = Path(args.out).resolve()
    values = {}
    for k, v in sorted(vars(args).items()):
        if k in ("command", "out", "verbose"):
            continue
        values[k] = _relocate(v, out) if k in PATH_ARGS and v is not None else v
    return {"schema": ECHO_SCHEMA, "command": args.command, "args": values}


def write_config_echo(args) -> Path:
    from tega.runs import Workspace

    ws = Workspace(args.out).create()
    path = ws.report(f"config-{args.command}-{args.name}.json")
    _write_json(path, config_echo(args))
    return path


def _dispatch(args) -> int:
    write_config_echo(args)
    return COMMANDS[args.command](args)


# -- parser ---------------------------------------------------------------


def _add_train_flags(p) -> None:
    p.add_argument("--epochs", type=_positive_int, default=200)
    p.add_argument("--warmup", type=_nonneg_int, default=10, help="warmup epochs")
    p.add_argument("--batch-size", type=_positive_int, default=1024)
    p.add_argument("--base-lr", type=float, default=1e-3, help="scaled by batch/256")
    p.add_argument("--weight-decay", type=float, default=0.05)
    p.add_argument("--pairs", default="IT,PI,PT", help="modality pairs, e.g. IT,PI,PT")
    p.add_argument("--tau-init", type=float, default=0.07)
    p.add_argument("--provider-seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1, help="torch threads; 1 is bit-reproducible")


def _add_generator_flags(p) -> None:
    p.add_argument("--backend", choices=("procedural", "remote"), default="procedural")
    p.add_argument("--endpoint", default=None, help="generation service (default $TEGA_GEN_ENDPOINT)")
    p.add_argument("--points", type=_positive_int, default=4096)
    p.add_argument("--guidance", type=float, default=3.0)


def _add_filter_flags(p) -> None:
    p.add_argument("--threshold", type=float, default=3.5, help="keep iff s_text + s_sem > threshold")
    p.add_argument("--filter-backend", choices=("stub", "remote"), default="stub")
    p.add_argument("--caption-endpoint", default=None, help="default $TEGA_CAPTION_ENDPOINT")
    p.add_argument("--judge-endpoint", default=None, help="default $TEGA_JUDGE_ENDPOINT; also serves /merge")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker cap")
    common.add_argument("--cache", default=None, help="response cache for remote backends")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="tega", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--name", default=name, help="artifact name")
        return p

    p = add("generate", "synthesise triplet samples")
    p.add_argument("--classes", type=_csv_list, default=None)
    p.add_argument("--per-class", type=_nonneg_int, default=None)
    p.add_argument("--proportional-to", default=None, help="manifest whose class counts set the mix")
    p.add_argument("--total", type=_nonneg_int, default=None)
    p.add_argument("--split", choices=("train", "eval"), default="train")
    p.add_argument("--no-resume", action="store_true")
    _add_generator_flags(p)

    p = add("filter", "consistency-filter a manifest")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--no-resume", action="store_true")
    _add_filter_flags(p)

    p = add("mix", "combine real and synthetic manifests")
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--expand-scale", type=float, default=None)
    mode.add_argument("--replace-percent", type=int, default=None)

    p = add("corrupt", "relabel a fraction of records with wrong classes")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--fraction", type=float, default=0.3)

    p = add("train", "train the projection heads and point encoder")
    p.add_argument("--train", required=True, help="training manifest")
    _add_train_flags(p)

    p = add("eval", "zero-shot evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", action="append", required=True, help="eval manifest (repeatable)")
    p.add_argument("--template", default=None, help="class prompt template, e.g. 'a {}'")

    p = add("export", "write point embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)

    p = add("ingest", "import external point clouds as real records")
    p.add_argument("--index", required=True, help="JSONL of {path, class_text, view_paths?}")
    p.add_argument("--classes", type=_csv_list, default=None)
    p.add_argument("--split", choices=("train", "eval"), default="train")

    p = add("sweep", "ablation sweep along one axis")
    p.add_argument("--axis", required=True, choices=("guidance", "pe_sn", "scale", "filtering", "pairs"))
    p.add_argument("--values", default=None, help="comma-separated; pair sets are ';'-separated")
    p.add_argument("--classes", type=_csv_list, default=None)
    p.add_argument("--per-class", type=_nonneg_int, default=80)
    p.add_argument("--eval-per-class", type=_nonneg_int, default=20)
    p.add_argument("--eval-guidance", type=float, default=3.0)
    p.add_argument("--filtering", choices=("on", "off"), default="on")
    p.add_argument("--real", default=None)
    p.add_argument("--synthetic", default=None)
    p.add_argument("--eval", default=None, help="fixed eval manifest (default: generated)")
    p.add_argument("--template", default=None)
    _add_generator_flags(p)
    _add_filter_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("replay", help="rerun a command from its config echo")
    p.add_argument("echo")
    p.add_argument("--out", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args)
        return _dispatch(args)
    except UsageError as exc:
        print(f"tega: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendUnreachable as exc:
        print(f"tega: backend unreachable: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except TegaError as exc:
        print(f"tega: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"tega: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
