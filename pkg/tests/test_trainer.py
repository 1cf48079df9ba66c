import base64
import csv
import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_loss, central_differences
from tega.errors import CheckpointMismatch, EmptyDataset, FormatError, NonPositiveTemperature
from tega.trainer import (
    FULL_PAIR_SET,
    ConvImageFeatures,
    EncoderStack,
    HashedTextFeatures,
    RemoteImageFeatures,
    RemoteTextFeatures,
    StackConfig,
    TrainConfig,
    build_stack,
    contrastive_loss,
    effective_lr,
    export_embeddings,
    fit,
    load_checkpoint,
    lr_at,
    parse_pair_set,
    save_checkpoint,
    write_embeddings_csv,
)
from tega.trainer.model import TAU_MAX, TAU_MIN
from wire import json_server

SINGLETONS = [(p,) for p in FULL_PAIR_SET]


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def as_t(x):
    return torch.as_tensor(x, dtype=torch.float64)


class TestLoss:
    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        pair_sets = [FULL_PAIR_SET] + SINGLETONS + list(itertools.combinations(FULL_PAIR_SET, 2))
        for b in range(200):
            n, d = int(rng.integers(1, 9)), int(rng.integers(1, 17))
            tau = [0.05, 0.07, 1.0][b % 3]
            pairs = pair_sets[b % len(pair_sets)]
            h = {m: unit_rows(rng, n, d) for m in "TIP"}
            got = contrastive_loss(as_t(h["T"]), as_t(h["I"]), as_t(h["P"]), tau, pairs).item()
            assert got == pytest.approx(brute_force_loss(h, tau, pairs), abs=1e-6)

    def test_single_sample_is_zero(self, rng):
        h = [as_t(unit_rows(rng, 1, 5)) for _ in range(3)]
        assert contrastive_loss(*h, 0.07).item() == 0.0

    def test_closed_form_two_samples(self):
        e = torch.eye(2, dtype=torch.float64)
        loss = contrastive_loss(e, e, e, 1.0, [("I", "T")]).item()
        assert loss == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
        assert loss == pytest.approx(0.3133, abs=1e-4)

    def test_non_positive_tau(self, rng):
        h = [as_t(unit_rows(rng, 2, 3)) for _ in range(3)]
        for tau in (0.0, -1.0):
            with pytest.raises(NonPositiveTemperature):
                contrastive_loss(*h, tau)

    def test_row_count_mismatch(self, rng):
        with pytest.raises(ValueError):
            contrastive_loss(as_t(unit_rows(rng, 2, 3)), as_t(unit_rows(rng, 3, 3)), as_t(unit_rows(rng, 2, 3)), 1.0)

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, n, d, seed):
        rng = np.random.default_rng(seed)
        h = [unit_rows(rng, n, d) for _ in range(3)]
        perm = rng.permutation(n)
        a = contrastive_loss(*map(as_t, h), 0.07).item()
        b = contrastive_loss(*(as_t(x[perm]) for x in h), 0.07).item()
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1), st.sampled_from([0.05, 0.07, 1.0]))
    def test_pair_additivity(self, n, d, seed, tau):
        rng = np.random.default_rng(seed)
        h = [as_t(unit_rows(rng, n, d)) for _ in range(3)]
        full = contrastive_loss(*h, tau, FULL_PAIR_SET).item()
        parts = sum(contrastive_loss(*h, tau, p).item() for p in SINGLETONS)
        assert full == pytest.approx(parts, rel=1e-12, abs=1e-12)

    def test_non_negative(self, rng):
        for _ in range(20):
            h = [as_t(unit_rows(rng, 6, 4)) for _ in range(3)]
            assert contrastive_loss(*h, 0.5).item() >= 0


class TestPairSet:
    @pytest.mark.parametrize("spec,want", [
        ("IT,PI,PT", FULL_PAIR_SET), ("TI", (("I", "T"),)), ("pt, ip", (("P", "I"), ("P", "T"))),
        ([("T", "P")], (("P", "T"),)),
    ])
    def test_parse(self, spec, want):
        assert parse_pair_set(spec) == want

    @pytest.mark.parametrize("spec", ["", "II", "IX", "I", "ITP", "IT,"])
    def test_parse_rejects(self, spec):
        with pytest.raises(ValueError):
            parse_pair_set(spec)


# -- gradient check -------------------------------------------------------


def small_stack(seed):
    cfg = StackConfig(feature_dim=8, embed_dim=8, point_hidden=8, tau_init=0.3)
    return build_stack(cfg, seed).double()


def batch_loss(stack, text, image, points, pairs=FULL_PAIR_SET):
    return contrastive_loss(stack.project_text(text), stack.project_image(image), stack.project_points(points), stack.tau, pairs)


def random_grad_case(b):
    rng = np.random.default_rng(100 + b)
    stack = small_stack(b)
    n = int(rng.integers(2, 5))
    text, image = rng.normal(size=(n, 8)), rng.normal(size=(n, 8))
    points = torch.as_tensor(rng.normal(size=(n, 16, 3)), dtype=torch.float64)
    stack.zero_grad()
    batch_loss(stack, text, image, points).backward()
    return stack, lambda: batch_loss(stack, text, image, points).item()


def test_gradients_match_finite_differences():
    skipped = total = 0
    for b in range(20):
        stack, loss = random_grad_case(b)
        errors, s, t = central_differences(list(stack.named_parameters()), loss)
        skipped, total = skipped + s, total + t
        for name, err in errors.items():
            assert err <= 1e-3, name
    assert skipped <= 0.02 * total


def test_every_trainable_group_gets_gradient():
    rng = np.random.default_rng(0)
    stack = small_stack(0)
    batch_loss(stack, rng.normal(size=(4, 8)), rng.normal(size=(4, 8)), torch.as_tensor(rng.normal(size=(4, 16, 3)))).backward()
    groups = {name.split(".")[0] for name, p in stack.named_parameters() if p.grad is not None and p.grad.abs().sum() > 0}
    assert groups == {"point_encoder", "proj_T", "proj_I", "proj_P", "log_tau"}


def test_restricted_pairs_leave_unused_head_untouched():
    rng = np.random.default_rng(1)
    stack = small_stack(0)
    batch_loss(stack, rng.normal(size=(4, 8)), rng.normal(size=(4, 8)), torch.as_tensor(rng.normal(size=(4, 16, 3))), [("P", "T")]).backward()
    assert stack.proj_I.weight.grad is None or stack.proj_I.weight.grad.abs().sum() == 0


# -- providers and stack --------------------------------------------------


class TestProviders:
    def test_text_deterministic_and_shape(self):
        f = HashedTextFeatures()
        a = f(["a chair", "a lamp"])
        assert a.shape == (2, 64) and a.dtype == np.float32
        assert np.array_equal(a, HashedTextFeatures()(["a chair", "a lamp"]))
        assert not np.array_equal(a, HashedTextFeatures(seed=1)(["a chair", "a lamp"]))
        assert np.array_equal(f(["A Chair!"]), f(["a chair"]))

    def test_image_deterministic(self, chair_sample):
        f = ConvImageFeatures()
        a = f(chair_sample.views[:2])
        assert a.shape == (2, 64)
        assert np.array_equal(a, ConvImageFeatures()(chair_sample.views[:2]))
        assert not np.array_equal(a[0], a[1])

    def test_remote_wire(self, chair_sample, tmp_path):
        def text(body, headers):
            return 200, {"vectors": [[float(len(t))] * 4 for t in body["texts"]]}

        def image(body, headers):
            return 200, {"vectors": [[float(len(base64.b64decode(s)) % 7)] * 4 for s in body["images"]]}

        with json_server({"/embed_text": text, "/embed_image": image}) as (url, log):
            t = RemoteTextFeatures(url, 4, cache_dir=tmp_path)
            i = RemoteImageFeatures(url, 4, cache_dir=tmp_path)
            assert t(["ab", "abc"])[:, 0].tolist() == [2.0, 3.0]
            t(["ab", "abc"])
            out = i([chair_sample.views[0]])
        assert [p for p, *_ in log] == ["/embed_text", "/embed_image"]
        assert base64.b64decode(log[1][1]["images"][0]) == chair_sample.views[0].to_ppm()
        assert out.shape == (1, 4)

    def test_remote_bad_shape(self):
        with json_server({"/embed_text": lambda b, h: (200, {"vectors": [[1.0, 2.0]]})}) as (url, _):
            with pytest.raises(ValueError):
                RemoteTextFeatures(url, 4)(["a"])


class TestStack:
    def test_unit_norm_and_shape(self, small_samples):
        stack = build_stack(StackConfig(), 0)
        batch = small_samples[:4]
        h = stack.embed([s.text for s in batch], [s.views[0] for s in batch], [s.point_cloud for s in batch])
        for m in h:
            assert m.shape == (4, 32)
            assert torch.allclose(m.norm(dim=1), torch.ones(4), atol=1e-6)

    def test_duplicate_rows(self, small_samples):
        stack = build_stack(StackConfig(), 0)
        s = [small_samples[0], small_samples[2], small_samples[0]]
        for m in stack.embed([x.text for x in s], [x.views[3] for x in s], [x.point_cloud for x in s]):
            assert torch.equal(m[0], m[2])

    def test_point_encoder_permutation_invariant(self, small_samples, rng):
        stack = build_stack(StackConfig(), 0)
        pts = small_samples[0].point_cloud.points
        a = stack.project_points(pts[None])
        b = stack.project_points(pts[rng.permutation(len(pts))][None])
        assert torch.allclose(a, b, atol=1e-6)

    def test_tau_init_and_clamp(self):
        stack = build_stack(StackConfig(tau_init=0.07), 0)
        assert stack.tau.item() == pytest.approx(0.07, rel=1e-6)
        with torch.no_grad():
            stack.log_tau.fill_(10.0)
        stack.clamp_tau()
        assert stack.tau.item() == pytest.approx(TAU_MAX, rel=1e-5)
        with torch.no_grad():
            stack.log_tau.fill_(-50.0)
        stack.clamp_tau()
        assert stack.tau.item() == pytest.approx(TAU_MIN, rel=1e-5)

    def test_bad_tau_init(self):
        with pytest.raises(NonPositiveTemperature):
            EncoderStack(StackConfig(tau_init=0.0))


# -- schedule and fit -----------------------------------------------------


class TestSchedule:
    @pytest.mark.parametrize("base,batch,want", [(1e-3, 1024, 4e-3), (1e-3, 64, 2.5e-4), (1.6e-2, 64, 4e-3)])
    def test_effective_lr(self, base, batch, want):
        assert effective_lr(base, batch) == pytest.approx(want)
        assert TrainConfig(base_lr=base, batch_size=batch).effective_lr == pytest.approx(want)

    def test_warmup_then_cosine(self):
        total, warm, peak = 100, 10, 1.0
        lrs = [lr_at(s, total, warm, peak) for s in range(total)]
        assert lrs[0] == pytest.approx(0.1)
        assert lrs[9] == pytest.approx(1.0)
        assert lrs[10] == pytest.approx(1.0)
        assert lrs[55] == pytest.approx(0.5)
        assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))
        assert lr_at(total, total, warm, peak) == pytest.approx(0.0, abs=1e-15)

    def test_no_warmup(self):
        assert lr_at(0, 10, 0, 2.0) == pytest.approx(2.0)

    @pytest.mark.parametrize("kw", [dict(batch_size=1), dict(epochs=0), dict(base_lr=0.0), dict(pair_set="")])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


DESK = dict(epochs=8, warmup_epochs=2, batch_size=4, base_lr=1.6e-2)


def test_fit_reduces_loss_over_seeds(small_samples):
    first, last = [], []
    for seed in range(3):
        _, trace = fit(small_samples, TrainConfig(seed=seed, **DESK))
        assert len(trace) == 8
        assert [r.epoch for r in trace.rows] == list(range(1, 9))
        first.append(trace.losses[0])
        last.append(trace.losses[-1])
    assert np.mean(last) < np.mean(first)


def test_fit_bitwise_reproducible(small_samples):
    a, ta = fit(small_samples, TrainConfig(seed=4, **DESK))
    b, tb = fit(small_samples, TrainConfig(seed=4, **DESK))
    assert ta.to_csv() == tb.to_csv()
    for (k, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(x, y), k


def test_fit_leaves_providers_frozen(small_samples):
    stack = build_stack(StackConfig(), 0)
    probe_text = ["a chair", "lamp", "mug mug"]
    probe_img = [small_samples[0].views[4], small_samples[3].views[9]]
    before = (stack.text_features(probe_text).tobytes(), stack.image_features(probe_img).tobytes())
    fit(small_samples, TrainConfig(**DESK), stack)
    after = (stack.text_features(probe_text).tobytes(), stack.image_features(probe_img).tobytes())
    assert before == after


def test_fit_empty():
    with pytest.raises(EmptyDataset):
        fit([], TrainConfig())


def test_weight_decay_only_on_matrices(small_samples, monkeypatch):
    groups = {}
    real = torch.optim.AdamW

    def spy(params, **kw):
        groups["g"] = params
        return real(params, **kw)

    monkeypatch.setattr(torch.optim, "AdamW", spy)
    fit(small_samples, TrainConfig(epochs=1, warmup_epochs=0, batch_size=4, weight_decay=0.05))
    decay, no_decay = groups["g"]
    assert decay["weight_decay"] == 0.05 and no_decay["weight_decay"] == 0.0
    assert all(p.ndim >= 2 for p in decay["params"])
    assert all(p.ndim < 2 for p in no_decay["params"])


def test_loss_trace_csv(small_samples, tmp_path):
    _, trace = fit(small_samples, TrainConfig(**{**DESK, "epochs": 3}))
    trace.write(tmp_path / "loss.csv")
    rows = list(csv.reader(open(tmp_path / "loss.csv")))
    assert rows[0] == ["epoch", "lr", "mean_loss", "tau"]
    assert len(rows) == 4


# -- checkpoints and export -----------------------------------------------


def test_checkpoint_round_trip(tmp_path, small_samples):
    stack, _ = fit(small_samples, TrainConfig(**{**DESK, "epochs": 2}))
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, stack, TrainConfig(**DESK))
    blob = path.read_bytes()
    assert blob.startswith(b"TEGACK1\0")
    back, header = load_checkpoint(path)
    for (k, x), (_, y) in zip(stack.state_dict().items(), back.state_dict().items()):
        assert torch.equal(x, y), k
    assert header["train"]["batch_size"] == 4
    save_checkpoint(tmp_path / "b.ckpt", back, TrainConfig(**DESK))
    assert (tmp_path / "b.ckpt").read_bytes() == blob


def test_checkpoint_mismatch(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", build_stack(StackConfig(embed_dim=16), 0))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "a.ckpt", build_stack(StackConfig(embed_dim=32), 0))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "a.ckpt", build_stack(StackConfig(embed_dim=16, provider_seed=1), 0))


def test_checkpoint_corrupt(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", build_stack(StackConfig(), 0))
    data = (tmp_path / "a.ckpt").read_bytes()
    for bad in (b"nope", data[:-4], data + b"\0\0\0\0"):
        (tmp_path / "b.ckpt").write_bytes(bad)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "b.ckpt")


def test_export_embeddings(tmp_path, small_samples):
    stack = build_stack(StackConfig(), 0)
    rows = export_embeddings(small_samples[:3], stack)
    assert len(rows) == 3
    assert all(len(r["embedding"]) == 32 for r in rows)
    assert {r["source"] for r in rows} == {"synthetic"}
    twin = export_embeddings([small_samples[0], small_samples[0]], stack)
    assert twin[0]["embedding"] == twin[1]["embedding"]
    write_embeddings_csv(rows, tmp_path / "e.csv")
    table = list(csv.reader(open(tmp_path / "e.csv")))
    assert table[0][:4] == ["sample_id", "class_label", "source", "h0"]
    assert len(table) == 4 and len(table[1]) == 3 + 32
