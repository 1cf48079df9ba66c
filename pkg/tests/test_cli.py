import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from tega.cli import EXIT_BACKEND, EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, build_parser, main
from tega.datasetio import read_manifest
from tega.generation import GenerationRequest, ProceduralGenerator
from wire import dead_endpoint

CLASSES = "chair,lamp,mug"
SMALL = ["--points", "512"]
TINY_TRAIN = ["--epochs", "2", "--warmup", "1", "--batch-size", "4"]


def tega(*argv):
    return main([str(a) for a in argv])


def digest(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert tega("generate", "--out", out, "--name", "gen", "--classes", CLASSES, "--per-class", 2, "--seed", 1, *SMALL) == 0
    assert tega("generate", "--out", out, "--name", "held", "--classes", CLASSES, "--per-class", 1, "--split", "eval",
                "--seed", 1_000_000, *SMALL) == 0
    return out


@pytest.fixture(scope="module")
def real(run, tmp_path_factory):
    src = tmp_path_factory.mktemp("real")
    gen = ProceduralGenerator()
    with open(src / "index.jsonl", "w") as fh:
        for i, name in enumerate(CLASSES.split(",") * 2):
            pts = gen.generate(GenerationRequest(name, 30.0, 512, 500 + i)).points
            np.save(src / f"{name}{i}.npy", pts)
            fh.write(json.dumps({"path": f"{name}{i}.npy", "class_text": name}) + "\n")
    assert tega("ingest", "--out", run, "--name", "real", "--index", src / "index.jsonl", "--classes", CLASSES) == 0
    return run / "manifests" / "real.manifest"


class TestGenerate:
    def test_layout_and_accounting(self, run):
        for d in ("clouds", "views", "manifests", "reports", "checkpoints"):
            assert (run / d).is_dir()
        m = read_manifest(run / "manifests" / "gen.manifest")
        assert len(m) <= 6
        assert {r.source for r in m.records} == {"synthetic"}
        assert m.class_vocabulary == ("chair", "lamp", "mug")
        rep = json.loads((run / "reports" / "generate-gen.json").read_text())
        assert rep["attempted"] == 6

    def test_spec_example_bounds(self, tmp_path):
        assert tega("generate", "--out", tmp_path, "--classes", "chair,lamp", "--per-class", 5, "--guidance", 3.0,
                    "--seed", 1, *SMALL) == 0
        assert len(read_manifest(tmp_path / "manifests" / "generate.manifest")) <= 10

    def test_defaults(self):
        p = build_parser()
        gen = p.parse_args(["generate", "--out", "x"])
        assert (gen.guidance, gen.points, gen.seed, gen.jobs) == (3.0, 4096, 0, 1)
        flt = p.parse_args(["filter", "--out", "x", "--in", "m"])
        assert flt.threshold == 3.5
        tr = p.parse_args(["train", "--out", "x", "--train", "m"])
        assert (tr.epochs, tr.warmup, tr.base_lr, tr.batch_size) == (200, 10, 1e-3, 1024)

    def test_resume_skips_completed(self, run, capsys):
        before = digest(run / "clouds")
        ledger = (run / "reports" / "generate-gen.ledger.jsonl").read_text()
        assert tega("generate", "--out", run, "--name", "gen", "--classes", CLASSES, "--per-class", 2, "--seed", 1, *SMALL) == 0
        assert digest(run / "clouds") == before
        assert (run / "reports" / "generate-gen.ledger.jsonl").read_text() == ledger

    def test_unreachable_backend_exits_2(self, tmp_path):
        code = tega("generate", "--out", tmp_path, "--classes", "chair", "--per-class", 1, "--backend", "remote",
                    "--endpoint", dead_endpoint(), *SMALL)
        assert code == EXIT_BACKEND

    def test_remote_without_endpoint_is_usage(self, tmp_path, monkeypatch):
        monkeypatch.delenv("TEGA_GEN_ENDPOINT", raising=False)
        assert tega("generate", "--out", tmp_path, "--per-class", 1, "--backend", "remote") == EXIT_USAGE


class TestUsage:
    @pytest.mark.parametrize("argv", [[], ["nope"], ["generate"], ["generate", "--out", "x", "--per-class", "-1"],
                                      ["train", "--out", "x", "--train", "m", "--epochs", "0"]])
    def test_argparse_errors_exit_1(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == EXIT_USAGE

    def test_missing_file_is_usage(self, tmp_path):
        assert tega("filter", "--out", tmp_path, "--in", tmp_path / "missing.manifest") == EXIT_USAGE

    def test_bad_value_is_usage(self, run, tmp_path):
        assert tega("corrupt", "--out", tmp_path, "--in", run / "manifests" / "gen.manifest", "--fraction", 2) == EXIT_USAGE

    def test_invariant_violation_exits_3(self, tmp_path):
        bad = tmp_path / "bad.manifest"
        bad.write_text('{"schema": "something-else"}\n')
        assert tega("filter", "--out", tmp_path, "--in", bad) == EXIT_INVARIANT

    def test_generate_plan_needs_counts(self, tmp_path):
        assert tega("generate", "--out", tmp_path) == EXIT_USAGE


class TestFilter:
    def test_outputs_and_isolation(self, run, capsys):
        before = digest(run / "clouds"), digest(run / "views")
        assert tega("filter", "--out", run, "--name", "flt", "--in", run / "manifests" / "gen.manifest") == 0
        assert (digest(run / "clouds"), digest(run / "views")) == before
        kept = read_manifest(run / "manifests" / "flt-kept.manifest")
        rejected = read_manifest(run / "manifests" / "flt-rejected.manifest")
        assert len(kept) + len(rejected) == len(read_manifest(run / "manifests" / "gen.manifest"))
        out = capsys.readouterr().out
        assert "kept" in out and "%" in out

    def test_threshold_10_rejects_everything(self, run):
        assert tega("filter", "--out", run, "--name", "strict", "--in", run / "manifests" / "gen.manifest",
                    "--threshold", 10) == 0
        assert len(read_manifest(run / "manifests" / "strict-kept.manifest")) == 0

    def test_deterministic(self, run, tmp_path):
        for name in ("d1", "d2"):
            assert tega("filter", "--out", run, "--name", name, "--in", run / "manifests" / "gen.manifest", "--no-resume") == 0
        a = (run / "reports" / "filter-d1.jsonl").read_text().replace("d1", "X")
        b = (run / "reports" / "filter-d2.jsonl").read_text().replace("d2", "X")
        assert a == b


class TestMixAndIngest:
    def test_ingest(self, real):
        m = read_manifest(real)
        assert len(m) == 6 and {r.source for r in m.records} == {"real"}
        assert all(len(r.view_paths) == 20 for r in m.records)

    def test_mix_references_payloads(self, run, real):
        before = digest(run / "clouds")
        assert tega("mix", "--out", run, "--name", "mixed", "--real", real, "--synthetic", run / "manifests" / "gen.manifest",
                    "--expand-scale", 1) == 0
        assert digest(run / "clouds") == before
        mixed = read_manifest(run / "manifests" / "mixed.manifest")
        assert len(mixed) == 12
        known = {r.pc_path for r in read_manifest(real).records} | {
            r.pc_path for r in read_manifest(run / "manifests" / "gen.manifest").records}
        assert {r.pc_path for r in mixed.records} <= known

    def test_mix_modes_exclusive(self, run, real):
        with pytest.raises(SystemExit) as exc:
            main(["mix", "--out", str(run), "--real", str(real), "--synthetic", "s", "--expand-scale", "1",
                  "--replace-percent", "5"])
        assert exc.value.code == EXIT_USAGE


class TestTrainEval:
    def test_train_eval_export(self, run, capsys):
        assert tega("train", "--out", run, "--name", "m", "--train", run / "manifests" / "gen.manifest", *TINY_TRAIN) == 0
        ckpt = run / "checkpoints" / "m.ckpt"
        assert ckpt.exists()
        loss = list(csv.reader(open(run / "reports" / "train-m-loss.csv")))
        assert loss[0] == ["epoch", "lr", "mean_loss", "tau"] and len(loss) == 3
        assert tega("eval", "--out", run, "--name", "m", "--checkpoint", ckpt, "--in", run / "manifests" / "held.manifest") == 0
        rows = list(csv.reader(open(run / "reports" / "eval-m.csv")))
        assert rows[0] == ["dataset", "top1", "top1_c", "top3", "top5", "n"]
        assert rows[1][0] == "held" and rows[1][-1] == "3"
        assert (run / "reports" / "eval-m-held-confusion.csv").exists()
        assert tega("export", "--out", run, "--name", "m", "--checkpoint", ckpt, "--in", run / "manifests" / "held.manifest") == 0
        assert len((run / "reports" / "embeddings-m.csv").read_text().splitlines()) == 4

    def test_eval_rejects_train_split(self, run):
        assert tega("train", "--out", run, "--name", "m2", "--train", run / "manifests" / "gen.manifest", *TINY_TRAIN) == 0
        code = tega("eval", "--out", run, "--name", "m2", "--checkpoint", run / "checkpoints" / "m2.ckpt",
                    "--in", run / "manifests" / "gen.manifest")
        assert code == EXIT_INVARIANT


def test_sweep_pe_sn(run, real):
    code = tega("sweep", "--out", run, "--name", "pe", "--axis", "pe_sn", "--values", "0,25,50,100", "--real", real,
                "--synthetic", run / "manifests" / "gen.manifest", "--eval", run / "manifests" / "held.manifest", *TINY_TRAIN)
    assert code == 0
    rows = list(csv.DictReader(open(run / "reports" / "sweep-pe.csv")))
    assert [r["value"] for r in rows] == ["0", "25", "50", "100"]
    assert all(r["status"] == "ok" for r in rows)
    assert len(list((run / "reports").glob("sweep-pe-pe_sn-*-confusion.csv"))) == 4


def test_replay_is_byte_identical(run, tmp_path):
    a = tmp_path / "a"
    assert tega("generate", "--out", a, "--name", "g", "--classes", "chair,mug", "--per-class", 1, "--seed", 3, *SMALL) == 0
    assert tega("filter", "--out", a, "--name", "f", "--in", a / "manifests" / "g.manifest") == 0
    assert tega("train", "--out", a, "--name", "t", "--train", a / "manifests" / "f-kept.manifest", *TINY_TRAIN) == 0
    assert tega("eval", "--out", a, "--name", "t", "--checkpoint", a / "checkpoints" / "t.ckpt",
                "--in", run / "manifests" / "held.manifest") == 0
    echo = json.loads((a / "reports" / "config-filter-f.json").read_text())
    assert echo["args"]["input"] == "@out/manifests/g.manifest"

    b = tmp_path / "b"
    for cmd in ("generate-g", "filter-f", "train-t", "eval-t"):
        assert tega("replay", a / "reports" / f"config-{cmd}.json", "--out", b) == 0
    da, db = digest(a), digest(b)
    assert da == db


def test_replay_rejects_garbage(tmp_path):
    (tmp_path / "x.json").write_text("{}")
    assert tega("replay", tmp_path / "x.json", "--out", tmp_path / "o") == EXIT_USAGE
    assert tega("replay", tmp_path / "nope.json", "--out", tmp_path / "o") == EXIT_USAGE
