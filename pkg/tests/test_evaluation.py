import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import metrics_oracle
from tega.datasetio import DatasetManifest
from tega.errors import EmptyDataset, EmptyVocabulary, SchemaViolation
from tega.evaluation import (
    REPORT_HEADER,
    SweepConfig,
    evaluate,
    parse_axis_value,
    rank_classes,
    report_from_rankings,
    reports_csv,
    run_sweep,
    write_confusion_csv,
    write_report_csv,
    zero_shot_classify,
)
from tega.filtering import FilterBackends
from tega.generation import ProceduralGenerator
from tega.trainer import StackConfig, TrainConfig, build_stack

NAMES = tuple("abcdefg")


def random_case(rng, n, c):
    labels = rng.integers(0, c, size=n)
    sim = rng.normal(size=(n, c))
    return labels, rank_classes(sim)


class TestMetrics:
    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n, c = int(rng.integers(1, 40)), int(rng.integers(5, 8))
            labels, ranks = random_case(rng, n, c)
            rep = report_from_rankings("x", labels, ranks, NAMES[:c])
            want = metrics_oracle(labels.tolist(), ranks.tolist(), c)
            assert np.array_equal(rep.confusion, want["confusion"])
            assert rep.top1 == pytest.approx(want["top1"])
            assert rep.top3 == pytest.approx(want["top3"])
            assert rep.top5 == pytest.approx(want["top5"])
            assert rep.top1_per_class_macro == pytest.approx(want["macro"])

    @given(st.integers(1, 50), st.integers(5, 7), st.integers(0, 2**32 - 1))
    def test_invariants(self, n, c, seed):
        labels, ranks = random_case(np.random.default_rng(seed), n, c)
        rep = report_from_rankings("x", labels, ranks, NAMES[:c])
        assert rep.confusion.sum() == n
        assert np.array_equal(rep.confusion.sum(axis=1), np.bincount(labels, minlength=c))
        assert 0 <= rep.top1 <= rep.top3 <= rep.top5 <= 1
        assert rep.top1 == pytest.approx(np.trace(rep.confusion) / n)

    def test_constant_classifier(self):
        labels = np.repeat(np.arange(5), 4)
        ranks = np.tile(np.arange(5), (20, 1))
        rep = report_from_rankings("x", labels, ranks, NAMES[:5])
        assert rep.top1 == pytest.approx(0.2)
        assert rep.top1_per_class_macro == pytest.approx(0.2)
        assert rep.top3 == pytest.approx(0.6)
        assert rep.top5 == 1.0
        assert rep.confusion[:, 0].tolist() == [4] * 5

    def test_macro_weights_classes_equally(self):
        labels = np.array([0] * 9 + [1])
        ranks = np.tile(np.arange(5), (10, 1))
        rep = report_from_rankings("x", labels, ranks, NAMES[:5])
        assert rep.top1 == pytest.approx(0.9)
        assert rep.top1_per_class_macro == pytest.approx(0.5)
        assert set(rep.per_class_accuracy) == {"a", "b"}

    def test_ranking_scale_invariant(self, rng):
        sim = rng.normal(size=(10, 6))
        assert np.array_equal(rank_classes(sim), rank_classes(3.7 * sim))
        assert np.array_equal(rank_classes(sim), rank_classes(sim + 2.0))

    def test_ties_keep_class_order(self):
        assert rank_classes(np.array([[0.5, 0.9, 0.5, 0.9]])).tolist() == [[1, 3, 0, 2]]

    def test_errors(self):
        with pytest.raises(EmptyDataset):
            report_from_rankings("x", [], np.zeros((0, 3), int), NAMES[:3])
        with pytest.raises(ValueError):
            report_from_rankings("x", [3], np.array([[0, 1, 2]]), NAMES[:3])


class TestCsv:
    def report(self):
        labels = np.array([0, 1, 1, 2])
        ranks = np.array([[0, 1, 2], [2, 1, 0], [1, 0, 2], [2, 0, 1]])
        return report_from_rankings("held", labels, ranks, ("chair", "lamp", "mug"))

    def test_report_csv(self, tmp_path):
        rep = self.report()
        write_report_csv([rep, rep], tmp_path / "r.csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert rows[0] == REPORT_HEADER
        assert rows[1] == ["held", "0.750000", "0.833333", "1.000000", "1.000000", "4"]
        assert len(rows) == 3
        assert reports_csv([rep]).endswith("\n") and "\r" not in reports_csv([rep])

    def test_confusion_csv(self, tmp_path):
        write_confusion_csv(self.report(), tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text() == ",chair,lamp,mug\nchair,1,0,0\nlamp,0,1,1\nmug,0,0,1\n"


class TestZeroShot:
    def test_classify_ranks_every_class(self, chair_sample):
        stack = build_stack(StackConfig(), 0)
        out = zero_shot_classify(chair_sample.point_cloud, ["chair", "lamp", "mug"], stack)
        assert sorted(c for c, _ in out) == ["chair", "lamp", "mug"]
        sims = [s for _, s in out]
        assert sims == sorted(sims, reverse=True)
        assert all(-1 - 1e-6 <= s <= 1 + 1e-6 for s in sims)

    def test_evaluate_samples(self, small_samples):
        stack = build_stack(StackConfig(), 0)
        rep = evaluate(small_samples, stack, ("chair", "lamp", "mug"), name="s")
        assert rep.sample_count == 6
        again = evaluate(small_samples, stack, ("chair", "lamp", "mug"), name="s")
        assert np.array_equal(rep.confusion, again.confusion)

    def test_evaluate_errors(self, small_samples):
        stack = build_stack(StackConfig(), 0)
        with pytest.raises(EmptyVocabulary):
            evaluate(small_samples, stack, ())
        with pytest.raises(EmptyDataset):
            evaluate([], stack, ("chair",))
        with pytest.raises(SchemaViolation):
            evaluate(DatasetManifest("t", (), ("chair",), "train"), stack)


# -- sweeps ---------------------------------------------------------------

TINY_TRAIN = TrainConfig(epochs=1, warmup_epochs=0, batch_size=2)
TINY = dict(classes=("chair", "lamp", "mug"), per_class=2, eval_per_class=1, num_points=512, train=TINY_TRAIN)


def sweep(tmp_path, name, **kw):
    cfg = SweepConfig(**{**TINY, **kw})
    rows = run_sweep(cfg, tmp_path, ProceduralGenerator(), FilterBackends.stub(cfg.classes), name=name)
    return rows, (tmp_path / "reports" / f"sweep-{name}.csv").read_text()


def test_sweep_guidance_is_deterministic(tmp_path):
    rows, table = sweep(tmp_path / "a", "g", axis="guidance", values=("0.3", "30"))
    _, again = sweep(tmp_path / "b", "g", axis="guidance", values=("0.3", "30"))
    assert table == again
    assert [r.ok for r in rows] == [True, True]
    parsed = list(csv.DictReader(io.StringIO(table)))
    assert [p["value"] for p in parsed] == ["0.3", "30"]
    assert all(p["status"] == "ok" and p["n"] == "3" for p in parsed)
    for v in ("0.3", "30"):
        assert (tmp_path / "a" / "reports" / f"sweep-g-guidance-{v}-confusion.csv").exists()
        assert (tmp_path / "a" / "checkpoints" / f"sweep-g-guidance-{v}.ckpt").exists()


def test_sweep_marks_failed_rows_and_continues(tmp_path, monkeypatch):
    import tega.evaluation.sweep as sweep_mod

    real_fit = sweep_mod.fit

    def flaky(train, cfg, *a, **kw):
        if cfg.pair_set == (("P", "T"),):
            raise EmptyDataset("forced")
        return real_fit(train, cfg, *a, **kw)

    monkeypatch.setattr(sweep_mod, "fit", flaky)
    rows, table = sweep(tmp_path, "p", axis="pairs", values=("IT,PI,PT", "PT", "PI,PT"))
    assert [r.ok for r in rows] == [True, False, True]
    parsed = list(csv.DictReader(io.StringIO(table)))
    assert parsed[1]["status"] == "failed"
    assert parsed[1]["top1"] == ""
    assert "forced" in parsed[1]["error"]
    assert not (tmp_path / "reports" / "sweep-p-pairs-PT-confusion.csv").exists()


class TestAxisValues:
    @pytest.mark.parametrize("axis,text,want", [
        ("guidance", "3", 3.0), ("pe_sn", " 25", 25), ("scale", "0.1", 0.1),
        ("filtering", "off", "off"), ("pairs", "pt,ip", "PI,PT"),
    ])
    def test_parse(self, axis, text, want):
        assert parse_axis_value(axis, text) == want

    @pytest.mark.parametrize("axis,text", [
        ("guidance", "-1"), ("pe_sn", "101"), ("pe_sn", "2.5"), ("scale", "-0.5"), ("filtering", "maybe"),
        ("pairs", "II"), ("colour", "red"),
    ])
    def test_reject(self, axis, text):
        with pytest.raises(ValueError):
            parse_axis_value(axis, text)

    def test_mixing_axes_need_manifests(self):
        with pytest.raises(ValueError):
            SweepConfig(axis="pe_sn")

    def test_default_values(self):
        assert SweepConfig(axis="guidance").values == (0.3, 3.0, 30.0)
