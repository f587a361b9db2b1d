"""The full model: per-view 1-D residual CNN encoders, attention-weighted
hyperspherical fusion, MoE classification head, joint loss, training loop,
and inference over arbitrary view subsets.

Each optimizer step draws one labeled and one unlabeled batch; the
contrastive loss sees their union while the classification loss sees only
the labeled samples. Every ablation variant is reachable purely through
config flags.
"""

import copy
import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import diffcore
from .contrastive import EmbeddingSet, adjusted_center_loss, full_graph_loss
from .data import Dataset, augment
from .fusion import AttentionNet, attention_weights, weighted_fusion
from .geometry import mag_norm
from .metrics import macro_f1
from .moe import Expert, GateConfig, GateOutput, MoEHead, balance_term, load_balancing_loss

logger = logging.getLogger(__name__)

ABLATION_FLAGS = (
    "no_moe",
    "no_contrast",
    "no_attention",
    "no_magnorm",
    "no_individual_views",
    "no_separate_load",
    "no_stop_grad",
    "full_graph",
)

PARAM_MAGIC = b"ALIADPAR"


@dataclass
class EncoderConfig:
    in_channels: int = 3
    embed_dim: int = 16
    block_channels: tuple = (32, 64, 64, 16)
    kernel_size: int = 5

    def __post_init__(self):
        self.block_channels = tuple(self.block_channels[:-1]) + (self.embed_dim,)
        if len(self.block_channels) < 1 or self.embed_dim < 2:
            raise ValueError("need at least 1 residual block and embed_dim >= 2")


@dataclass
class AliAdConfig:
    num_views: int = 5
    num_classes: int = 4
    view_channels: tuple = (3, 3, 3, 3, 3)
    view_modalities: tuple = ("inertial",) * 5
    window: int = 64
    embed_dim: int = 16
    gate: GateConfig = field(default_factory=GateConfig)
    cls_weight: float = 1.0
    contrast_weight: float = 1.0
    balance_weight: float = 1e-2
    tau: float = 0.1
    learning_rate: float = 1e-3
    batch_labeled: int = 16
    batch_unlabeled: int = 16
    epochs: int = 20
    seed: int = 0
    precision: str = "float64"
    share_homogeneous: bool = True
    augment_training: bool = False
    ablations: tuple = ()

    def __post_init__(self):
        if isinstance(self.gate, dict):
            self.gate = GateConfig(**self.gate)
        self.ablations = tuple(self.ablations)
        unknown = set(self.ablations) - set(ABLATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        if min(self.cls_weight, self.contrast_weight, self.balance_weight) < 0:
            raise ValueError("loss weights must be nonnegative")

    def has(self, flag: str) -> bool:
        return flag in self.ablations

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "AliAdConfig":
        obj = dict(obj)
        for key in ("view_channels", "view_modalities", "ablations"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    @classmethod
    def for_dataset(cls, ds: Dataset, **overrides) -> "AliAdConfig":
        return cls(
            num_views=ds.num_views,
            num_classes=ds.num_classes,
            view_channels=tuple(vs.channels for vs in ds.view_specs),
            view_modalities=tuple(vs.modality for vs in ds.view_specs),
            window=ds.window,
            **overrides,
        )


@dataclass
class StepOutput:
    total: torch.Tensor
    l_cls: torch.Tensor
    l_ac: torch.Tensor
    l_lb: torch.Tensor
    per_view_logits: torch.Tensor | None
    fused_logits: torch.Tensor | None
    weights: torch.Tensor


class ResidualBlock1d(nn.Module):
    """conv-relu-conv with a strided 1x1 projection skip."""

    def __init__(self, c_in, c_out, kernel_size, stride=2):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv1d(c_in, c_out, kernel_size, stride=stride, padding=pad)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel_size, padding=pad)
        self.skip = nn.Conv1d(c_in, c_out, 1, stride=stride)

    def forward(self, x):
        out = self.conv2(torch.relu(self.conv1(x)))
        return torch.relu(out + self.skip(x))


class Encoder(nn.Module):
    """Lightweight 1-D residual CNN: stacked stride-2 blocks, global average
    pooling, and (unless disabled) magnitude normalization of the output."""

    def __init__(self, cfg: EncoderConfig, normalize: bool = True):
        super().__init__()
        self.normalize = normalize
        blocks = []
        c_prev = cfg.in_channels
        for c in cfg.block_channels:
            blocks.append(ResidualBlock1d(c_prev, c, cfg.kernel_size))
            c_prev = c
        self.blocks = nn.Sequential(*blocks)
        # affine output (no ReLU) so embeddings cannot collapse to exact zero
        self.proj = nn.Linear(cfg.embed_dim, cfg.embed_dim)

    def forward(self, x):
        feats = self.proj(self.blocks(x).mean(dim=-1))  # global average pool
        return mag_norm(feats) if self.normalize else feats


class PlainHead(nn.Module):
    """Single shared MLP head used by the no_moe ablation."""

    def __init__(self, embed_dim, num_classes):
        super().__init__()
        self.mlp = Expert(embed_dim, num_classes)

    def forward(self, tokens, train_mode=True):
        return self.mlp(tokens), None


class AliAdModel(nn.Module):
    def __init__(self, config: AliAdConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)

        # homogeneous views (same modality and channel count) share an encoder
        self.encoder_index = []
        groups = {}
        encoders = []
        for v in range(config.num_views):
            key = (config.view_modalities[v], config.view_channels[v])
            if config.share_homogeneous and key in groups:
                self.encoder_index.append(groups[key])
                continue
            enc_cfg = EncoderConfig(
                in_channels=config.view_channels[v], embed_dim=config.embed_dim
            )
            encoders.append(Encoder(enc_cfg, normalize=not config.has("no_magnorm")))
            groups[key] = len(encoders) - 1
            self.encoder_index.append(groups[key])
        self.encoders = nn.ModuleList(encoders)

        self.attention = AttentionNet(config.embed_dim)
        if config.has("no_moe"):
            self.head = PlainHead(config.embed_dim, config.num_classes)
        else:
            self.head = MoEHead(config.embed_dim, config.num_classes, config.gate)

    # -- forward pieces ----------------------------------------------------

    def encode_views(self, views, mask) -> EmbeddingSet:
        """Encode each present (view, sample) entry; absent entries are
        exact zeros and never touched by the encoders."""
        n = views[0].shape[0]
        z = torch.zeros(self.config.num_views, n, self.config.embed_dim)
        for v in range(self.config.num_views):
            present = mask[v].nonzero().squeeze(-1)
            if present.numel() == 0:
                continue
            enc = self.encoders[self.encoder_index[v]]
            z = z.index_put((torch.full_like(present, v), present), enc(views[v][present]))
        return EmbeddingSet(z, mask)

    def fuse(self, e: EmbeddingSet):
        w = attention_weights(
            e,
            self.attention,
            detach_input=not self.config.has("no_stop_grad"),
            uniform=self.config.has("no_attention"),
        )
        fused = weighted_fusion(e, w)
        if not self.config.has("no_magnorm"):
            fused = mag_norm(fused)
        return w, fused

    def forward_train(self, views, mask, labels) -> StepOutput:
        """One training forward pass over a combined labeled+unlabeled batch.

        views: list of [N, channels_v, T] tensors; mask: [V, N] bool;
        labels: [N] long with -1 marking unlabeled samples.
        """
        cfg = self.config
        e = self.encode_views(views, mask)
        w, fused = self.fuse(e)

        if cfg.has("no_contrast"):
            l_ac = torch.zeros(())
        elif cfg.has("full_graph"):
            l_ac = full_graph_loss(e, cfg.tau)
        else:
            l_ac = adjusted_center_loss(e, w, cfg.tau)

        labeled = (labels >= 0).nonzero().squeeze(-1)
        l_cls = torch.zeros(())
        l_lb = torch.zeros(())
        per_view_logits = None
        fused_logits = None
        if labeled.numel() == 0:
            logger.warning("batch has no labeled samples; classification loss is 0")
        else:
            y = labels[labeled]
            lmask = mask[:, labeled]
            fused_logits, fused_stats = self.head(fused[labeled], train_mode=self.training)

            view_stats = None
            if cfg.has("no_individual_views"):
                l_cls = classification_loss(y, fused_logits, None, None)
            else:
                # one flat token per present (view, labeled-sample) entry
                vs, ns = lmask.nonzero(as_tuple=True)
                tokens = e.z[:, labeled][vs, ns]
                flat_logits, view_stats = self.head(tokens, train_mode=self.training)
                per_view_logits = torch.zeros(
                    cfg.num_views, labeled.numel(), cfg.num_classes
                )
                per_view_logits = per_view_logits.index_put((vs, ns), flat_logits)
                l_cls = classification_loss(y, fused_logits, per_view_logits, lmask)

            if not cfg.has("no_moe"):
                if cfg.has("no_separate_load"):
                    l_lb = balance_term(_pool_stats(view_stats, fused_stats))
                else:
                    l_lb = load_balancing_loss(view_stats, fused_stats)

        total = (
            cfg.cls_weight * l_cls + cfg.contrast_weight * l_ac + cfg.balance_weight * l_lb
        )
        return StepOutput(total, l_cls, l_ac, l_lb, per_view_logits, fused_logits, w)

    @torch.no_grad()
    def predict(self, views, mask, subset=None) -> torch.Tensor:
        """Predicted class per sample from the fused token only (noise off).

        ``subset`` restricts the views considered present; each sample must
        retain at least one present view within the subset.
        """
        self.eval()
        if subset is not None:
            keep = torch.zeros(self.config.num_views, 1, dtype=torch.bool)
            keep[list(subset)] = True
            mask = mask & keep
        if not mask.any(0).all():
            bad = (~mask.any(0)).nonzero()[0].item()
            raise ValueError(f"sample {bad} has no present views in the subset")
        e = self.encode_views(views, mask)
        _, fused = self.fuse(e)
        logits, _ = self.head(fused, train_mode=False)
        self.train()
        return logits.argmax(-1)


def _pool_stats(view_stats: GateOutput | None, fused_stats: GateOutput | None) -> GateOutput:
    """Combine the two token groups' gate statistics (importance and load
    are additive over tokens), for the no_separate_load ablation."""
    stats = [s for s in (view_stats, fused_stats) if s is not None]
    first = stats[0]
    return GateOutput(
        sparse_weights=torch.cat([s.sparse_weights for s in stats]),
        selected_indices=torch.cat([s.selected_indices for s in stats]),
        importance=sum(s.importance for s in stats),
        load=sum(s.load for s in stats),
        hard_counts=sum(s.hard_counts for s in stats),
    )


def classification_loss(labels, fused_logits, per_view_logits, mask) -> torch.Tensor:
    """Cross-entropy on the fused token plus every present view token,
    averaged per sample over its |S| + 1 terms, then over the batch."""
    h_fused = nn.functional.cross_entropy(fused_logits, labels, reduction="none")
    if per_view_logits is None:
        return h_fused.mean()
    v, n, m = per_view_logits.shape
    h_views = nn.functional.cross_entropy(
        per_view_logits.reshape(v * n, m),
        labels.repeat(v),
        reduction="none",
    ).reshape(v, n)
    maskf = mask.to(h_views.dtype)
    per_sample = (h_fused + (h_views * maskf).sum(0)) / (maskf.sum(0) + 1.0)
    return per_sample.mean()


# -- training ---------------------------------------------------------------


def _batch_to_tensors(ds: Dataset, idx, augment_seed=None):
    views = []
    for v, arr in enumerate(ds.views):
        sub = arr[idx]
        if augment_seed is not None:
            sub = np.stack(
                [
                    augment(s, ds.view_specs[v].modality, augment_seed + 7919 * v + i)
                    for i, s in enumerate(sub)
                ]
            )
        views.append(diffcore.tensor(sub))
    mask = torch.as_tensor(ds.mask[idx].T.copy())
    labels = torch.as_tensor(ds.labels[idx])
    return views, mask, labels


@dataclass
class EpochLog:
    epoch: int
    l_cls: float
    l_ac: float
    l_lb: float
    val_f1: float
    w_mean: list[float]


def train(
    train_ds: Dataset,
    val_ds: Dataset,
    config: AliAdConfig,
    unlabeled_ds: Dataset | None = None,
):
    """Train AliAd; returns (model, per-epoch logs).

    Per step one labeled batch and one unlabeled batch are drawn; the
    contrastive loss is computed on their union, classification on the
    labeled batch only. The checkpoint with the best validation macro-F1
    is restored at the end.
    """
    diffcore.set_precision(config.precision)
    torch.manual_seed(config.seed)
    model = AliAdModel(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    labeled_idx = train_ds.labeled_indices()
    if len(labeled_idx) == 0:
        raise ValueError("training requires at least one labeled sample")
    unlab_source = unlabeled_ds if unlabeled_ds is not None else train_ds
    unlabeled_idx = (
        np.arange(unlab_source.num_samples)
        if unlabeled_ds is not None
        else train_ds.unlabeled_indices()
    )

    rng = np.random.default_rng(config.seed)
    logs: list[EpochLog] = []
    best_f1, best_state = -1.0, None
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(labeled_idx)
        sums = {"l_cls": 0.0, "l_ac": 0.0, "l_lb": 0.0}
        w_sum = np.zeros(config.num_views)
        w_count = np.zeros(config.num_views)
        n_steps = 0
        for start in range(0, len(order), config.batch_labeled):
            lab = order[start : start + config.batch_labeled]
            if len(unlabeled_idx) > 0:
                unl = rng.choice(unlabeled_idx, size=config.batch_unlabeled, replace=True)
                unl_ds = unlab_source.subset(unl)
                batch = _concat_batches(train_ds.subset(lab), unl_ds)
            else:
                batch = train_ds.subset(lab)
            aug_seed = (
                int(rng.integers(2**31)) if config.augment_training else None
            )
            views, mask, labels = _batch_to_tensors(
                batch, np.arange(batch.num_samples), aug_seed
            )
            out = model.forward_train(views, mask, labels)
            if not torch.isfinite(out.total):
                raise RuntimeError(f"non-finite loss at step {step} (epoch {epoch})")
            opt.zero_grad()
            out.total.backward()
            opt.step()
            step += 1
            n_steps += 1
            for key in sums:
                sums[key] += float(getattr(out, key).detach())
            wm = out.weights.detach().numpy()
            present = mask.numpy()
            w_sum += (wm * present).sum(1)
            w_count += present.sum(1)

        val_f1 = evaluate_f1(model, val_ds)
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_state = copy.deepcopy(model.state_dict())
        logs.append(
            EpochLog(
                epoch=epoch,
                l_cls=sums["l_cls"] / n_steps,
                l_ac=sums["l_ac"] / n_steps,
                l_lb=sums["l_lb"] / n_steps,
                val_f1=val_f1,
                w_mean=list(w_sum / np.maximum(w_count, 1)),
            )
        )
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, logs


def _concat_batches(a: Dataset, b: Dataset) -> Dataset:
    return Dataset(
        views=[np.concatenate([va, vb]) for va, vb in zip(a.views, b.views)],
        labels=np.concatenate([a.labels, np.full(b.num_samples, -1, dtype=np.int64)]),
        mask=np.concatenate([a.mask, b.mask]),
        view_specs=a.view_specs,
        num_classes=a.num_classes,
    )


def evaluate_f1(model: AliAdModel, ds: Dataset, subset=None) -> float:
    idx = ds.labeled_indices()
    if subset is not None:
        effective = ds.mask[:, list(subset)].any(1)
        idx = idx[effective[idx]]
    if len(idx) == 0:
        return 0.0
    views, mask, labels = _batch_to_tensors(ds, idx)
    preds = model.predict(views, mask, subset=subset)
    return macro_f1(preds.tolist(), labels.tolist(), ds.num_classes)


def write_train_log(logs: list[EpochLog], path, include_l_ac: bool = True) -> None:
    num_views = len(logs[0].w_mean)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["epoch", "l_cls"] + (["l_ac"] if include_l_ac else []) + ["l_lb", "val_f1"]
        header += [f"w_mean_view_{v}" for v in range(num_views)]
        writer.writerow(header)
        for log in logs:
            row = [log.epoch, f"{log.l_cls:.8f}"]
            if include_l_ac:
                row.append(f"{log.l_ac:.8f}")
            row += [f"{log.l_lb:.8f}", f"{log.val_f1:.6f}"]
            row += [f"{w:.8f}" for w in log.w_mean]
            writer.writerow(row)


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model: AliAdModel, out_dir, epoch: int = 0, val_score: float = 0.0):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": model.config.to_json(),
        "epoch": epoch,
        "val_score": val_score,
        "parameters": [],
    }
    for name, param in model.state_dict().items():
        fname = f"param_{name.replace('.', '__')}.bin"
        manifest["parameters"].append({"name": name, "file": fname})
        arr = param.detach().cpu().numpy().astype("<f4")
        with open(out / fname, "wb") as f:
            f.write(PARAM_MAGIC)
            encoded = name.encode()
            f.write(struct.pack("<i", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<i", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
            f.write(arr.tobytes())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(in_dir) -> AliAdModel:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    config = AliAdConfig.from_json(manifest["config"])
    diffcore.set_precision(config.precision)
    model = AliAdModel(config)
    state = {}
    for entry in manifest["parameters"]:
        with open(src / entry["file"], "rb") as f:
            if f.read(8) != PARAM_MAGIC:
                raise ValueError(f"{entry['file']} is not an aliad parameter file")
            (name_len,) = struct.unpack("<i", f.read(4))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<i", f.read(4))
            shape = struct.unpack(f"<{ndim}i", f.read(4 * ndim))
            data = np.frombuffer(f.read(), dtype="<f4").reshape(shape)
        state[name] = torch.as_tensor(data.copy(), dtype=torch.get_default_dtype())
    model.load_state_dict(state)
    return model
