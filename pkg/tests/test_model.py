import math

import numpy as np
import pytest
import torch

from aliad.data import drop_views_uniform
from aliad.diffcore import grad_check
from aliad.model import (
    ABLATION_FLAGS,
    AliAdConfig,
    AliAdModel,
    EncoderConfig,
    Encoder,
    classification_loss,
    evaluate_f1,
    load_checkpoint,
    save_checkpoint,
    train,
    write_train_log,
    _batch_to_tensors,
)
from conftest import tiny_config


def small_batch(ds, n=8):
    idx = np.arange(min(n, ds.num_samples))
    return _batch_to_tensors(ds, idx)


class TestEncoder:
    def test_output_norm_is_sqrt_c(self):
        torch.manual_seed(0)
        enc = Encoder(EncoderConfig(in_channels=3, embed_dim=8))
        x = torch.randn(5, 3, 64)
        out = enc(x)
        assert out.shape == (5, 8)
        assert torch.allclose(out.norm(dim=-1), torch.full((5,), math.sqrt(8)), atol=1e-9)

    def test_unnormalized_variant(self):
        torch.manual_seed(0)
        enc = Encoder(EncoderConfig(in_channels=3, embed_dim=8), normalize=False)
        out = enc(torch.randn(4, 3, 64))
        assert not torch.allclose(out.norm(dim=-1), torch.full((4,), math.sqrt(8)))

    def test_deterministic(self):
        def build():
            torch.manual_seed(3)
            enc = Encoder(EncoderConfig(in_channels=3, embed_dim=8))
            g = torch.Generator().manual_seed(3)
            return enc(torch.randn(2, 3, 32, generator=g))

        assert torch.equal(build(), build())

    def test_gradient(self):
        torch.manual_seed(1)
        enc = Encoder(EncoderConfig(in_channels=2, embed_dim=4, block_channels=(8, 4)))
        x = torch.randn(2, 2, 16)
        f = lambda x: enc(x).square().sum()
        assert grad_check(f, [x]).max_relative_error < 1e-4


class TestClassificationLoss:
    def test_uniform_logits_give_ln_m(self):
        fused = torch.zeros(4, 3)
        y = torch.tensor([0, 1, 2, 0])
        assert classification_loss(y, fused, None, None).item() == pytest.approx(math.log(3))

    def test_hand_summed_oracle(self):
        g = torch.Generator().manual_seed(5)
        v, n, m = 3, 4, 2
        fused = torch.randn(n, m, generator=g)
        per_view = torch.randn(v, n, m, generator=g)
        mask = torch.tensor([[1, 1, 0, 1], [1, 0, 1, 1], [0, 1, 1, 0]]).bool()
        got = classification_loss(torch.tensor([0, 1, 0, 1]), fused, per_view, mask)

        def ce(logits, y):
            ex = torch.exp(logits - logits.max())
            return -math.log((ex[y] / ex.sum()).item())

        y = [0, 1, 0, 1]
        expected = 0.0
        for i in range(n):
            terms = [ce(fused[i], y[i])]
            for a in range(v):
                if mask[a, i]:
                    terms.append(ce(per_view[a, i], y[i]))
            expected += sum(terms) / len(terms)
        expected /= n
        assert got.item() == pytest.approx(expected, abs=1e-10)

    def test_gradient(self):
        g = torch.Generator().manual_seed(6)
        fused = torch.randn(4, 3, generator=g)
        per_view = torch.randn(2, 4, 3, generator=g)
        mask = torch.ones(2, 4, dtype=torch.bool)
        y = torch.tensor([0, 2, 1, 0])
        f = lambda f_, p_: classification_loss(y, f_, p_, mask)
        assert grad_check(f, [fused, per_view]).max_relative_error < 1e-4


class TestConfig:
    def test_unknown_ablation_rejected(self):
        with pytest.raises(ValueError, match="ablation"):
            AliAdConfig(ablations=("no_such_flag",))

    def test_json_round_trip(self, tiny_dataset):
        cfg = tiny_config(tiny_dataset, ablations=("no_moe",))
        back = AliAdConfig.from_json(cfg.to_json())
        assert back == cfg


class TestForward:
    def test_masked_views_never_touch_computation(self, tiny_dataset):
        ds = drop_views_uniform(tiny_dataset, seed=2)
        cfg = tiny_config(ds)
        torch.manual_seed(0)
        model = AliAdModel(cfg)
        views, mask, labels = small_batch(ds)
        out1 = model.forward_train(views, mask, labels)
        # scribble garbage into every masked (view, sample) entry
        poisoned = [v.clone() for v in views]
        for v in range(ds.num_views):
            absent = (~mask[v]).nonzero().squeeze(-1)
            poisoned[v][absent] = 1e6
        torch.manual_seed(0)
        model2 = AliAdModel(cfg)
        out2 = model2.forward_train(poisoned, mask, labels)
        assert torch.equal(out1.l_cls, out2.l_cls)
        assert torch.equal(out1.l_ac, out2.l_ac)

    def test_loss_composition(self, tiny_dataset):
        cfg = tiny_config(tiny_dataset, cls_weight=2.0, contrast_weight=0.5,
                          balance_weight=0.25)
        model = AliAdModel(cfg)
        views, mask, labels = small_batch(tiny_dataset)
        out = model.forward_train(views, mask, labels)
        expected = 2.0 * out.l_cls + 0.5 * out.l_ac + 0.25 * out.l_lb
        assert abs(out.total.item() - expected.item()) < 1e-9

    def test_unlabeled_only_batch_skips_classification(self, tiny_dataset):
        cfg = tiny_config(tiny_dataset)
        model = AliAdModel(cfg)
        views, mask, labels = small_batch(tiny_dataset)
        out = model.forward_train(views, mask, torch.full_like(labels, -1))
        assert out.l_cls.item() == 0.0
        assert out.fused_logits is None
        assert out.l_ac.item() != 0.0

    def test_stop_grad_encoder_attention_boundary(self, tiny_dataset):
        # encoder parameters must receive zero gradient through the
        # attention-weight path; removing the stop-gradient makes it nonzero
        views, mask, labels = small_batch(tiny_dataset)

        def attention_path_grad(flags):
            cfg = tiny_config(tiny_dataset, ablations=flags)
            torch.manual_seed(1)
            model = AliAdModel(cfg)
            e = model.encode_views(views, mask)
            w, _ = model.fuse(e)
            params = [p for enc in model.encoders for p in enc.parameters()]
            grads = torch.autograd.grad(w.square().sum(), params, allow_unused=True)
            return sum(0.0 if g is None else float(g.abs().sum()) for g in grads)

        assert attention_path_grad(()) == 0.0
        assert attention_path_grad(("no_stop_grad",)) > 0.0

    def test_homogeneous_views_share_encoder(self, tiny_dataset):
        model = AliAdModel(tiny_config(tiny_dataset))
        assert len(model.encoders) == 1
        assert model.encoder_index == [0, 0, 0]
        model2 = AliAdModel(tiny_config(tiny_dataset, share_homogeneous=False))
        assert len(model2.encoders) == 3


class TestAblations:
    @pytest.mark.parametrize("flag", ABLATION_FLAGS)
    def test_each_flag_changes_behavior_and_steps(self, flag, tiny_splits):
        train_ds, val_ds, _ = tiny_splits
        cfg = tiny_config(train_ds, epochs=1, ablations=(flag,))
        model, logs = train(train_ds, val_ds, cfg)
        assert len(logs) == 1
        assert math.isfinite(logs[0].l_cls)
        if flag == "no_contrast":
            assert logs[0].l_ac == 0.0
        if flag == "no_moe":
            assert logs[0].l_lb == 0.0
        if flag == "no_attention":
            # uniform weights: per-view means equal across views
            assert max(logs[0].w_mean) - min(logs[0].w_mean) < 1e-12

    def test_no_magnorm_removes_normalization(self, tiny_dataset):
        views, mask, _ = small_batch(tiny_dataset)
        model = AliAdModel(tiny_config(tiny_dataset, ablations=("no_magnorm",)))
        e = model.encode_views(views, mask)
        norms = e.z[0].norm(dim=-1)
        assert not torch.allclose(norms, torch.full_like(norms, math.sqrt(8)))


class TestTraining:
    def test_logs_and_checkpoint_restore(self, tiny_splits):
        train_ds, val_ds, _ = tiny_splits
        cfg = tiny_config(train_ds)
        model, logs = train(train_ds, val_ds, cfg)
        assert len(logs) == cfg.epochs
        best = max(log.val_f1 for log in logs)
        # restored checkpoint reproduces the best validation score
        assert evaluate_f1(model, val_ds) == pytest.approx(best)

    def test_deterministic_epoch1_losses(self, tiny_splits):
        train_ds, val_ds, _ = tiny_splits
        def run():
            cfg = tiny_config(train_ds, epochs=1)
            _, logs = train(train_ds, val_ds, cfg)
            return logs[0]
        a, b = run(), run()
        assert a.l_cls == b.l_cls and a.l_ac == b.l_ac and a.l_lb == b.l_lb

    def test_unlabeled_pool_changes_contrast_not_cls(self, tiny_splits):
        # adding an unlabeled pool must alter L_AC (different union batches)
        # while the labeled batches driving L_cls stay the same at step 1
        train_ds, val_ds, test_ds = tiny_splits
        cfg = tiny_config(train_ds, epochs=1)
        _, logs_plain = train(train_ds, val_ds, cfg)
        _, logs_unlab = train(train_ds, val_ds, cfg, unlabeled_ds=test_ds)
        assert logs_plain[0].l_ac != logs_unlab[0].l_ac

    def test_no_labeled_samples_errors(self, tiny_dataset):
        ds = tiny_dataset.subset(np.arange(8))
        ds.labels = np.full(8, -1, dtype=np.int64)
        with pytest.raises(ValueError, match="labeled"):
            train(ds, ds, tiny_config(tiny_dataset, epochs=1))

    def test_train_log_csv(self, tiny_splits, tmp_path):
        train_ds, val_ds, _ = tiny_splits
        cfg = tiny_config(train_ds, epochs=2)
        _, logs = train(train_ds, val_ds, cfg)
        path = tmp_path / "log.csv"
        write_train_log(logs, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",")[:5] == ["epoch", "l_cls", "l_ac", "l_lb", "val_f1"]
        assert len(lines) == 3
        write_train_log(logs, path, include_l_ac=False)
        assert "l_ac" not in path.read_text().splitlines()[0]


class TestCheckpoint:
    def test_round_trip_predictions(self, tiny_splits, tmp_path):
        train_ds, val_ds, _ = tiny_splits
        cfg = tiny_config(train_ds, epochs=1, precision="float32")
        model, _ = train(train_ds, val_ds, cfg)
        save_checkpoint(model, tmp_path / "run", epoch=1, val_score=0.5)
        back = load_checkpoint(tmp_path / "run")
        assert back.config == cfg
        views, mask, _ = small_batch(val_ds)
        assert torch.equal(model.predict(views, mask), back.predict(views, mask))

    def test_subset_prediction_guard(self, tiny_splits):
        train_ds, val_ds, _ = tiny_splits
        model = AliAdModel(tiny_config(train_ds))
        views, mask, _ = small_batch(val_ds)
        preds = model.predict(views, mask, subset=(0,))
        assert preds.shape == (views[0].shape[0],)
        with pytest.raises(ValueError, match="no present views"):
            model.predict(views, mask & torch.zeros_like(mask), subset=(1,))
