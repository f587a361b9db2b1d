"""Attention-based per-sample view weighting and weighted fusion.

A small MLP shared across views scores each embedding; a masked softmax
over the present views of each sample turns the scores into weights. The
encoder output is detached before entering the attention net so that view
importance is learned only by the attention module, never pushed back into
the encoders. Fusion is the weighted sum of view embeddings; callers apply
mag_norm to the result before classification or contrast.
"""

import torch
from torch import nn

from .contrastive import EmbeddingSet
from .diffcore import stop_gradient

MASK_LOGIT = -1e30


class AttentionNet(nn.Module):
    """Two fully connected layers with a ReLU, mapping a C-vector to a
    scalar logit. Parameters are shared across all views."""

    def __init__(self, embed_dim: int, hidden_dim: int | None = None):
        super().__init__()
        if hidden_dim is None:
            hidden_dim = max(embed_dim // 2, 16)
        self.fc1 = nn.Linear(embed_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, 1)

    def forward(self, z):
        return self.fc2(torch.relu(self.fc1(z))).squeeze(-1)


def attention_weights(
    e: EmbeddingSet,
    net: AttentionNet,
    detach_input: bool = True,
    uniform: bool = False,
) -> torch.Tensor:
    """Per-sample softmax weights over present views, [V, N].

    Absent views get exact-zero weight. ``detach_input=False`` removes the
    encoder/attention stop-gradient (the "- stop grad" ablation);
    ``uniform=True`` bypasses the net entirely and assigns 1/|present|
    (the "- attention" ablation).
    """
    if not e.mask.any(0).all():
        bad = (~e.mask.any(0)).nonzero()[0].item()
        raise ValueError(f"sample {bad} has no present views")
    maskf = e.mask.to(e.z.dtype)
    if uniform:
        return maskf / e.mask.sum(0).clamp_min(1)

    z_in = stop_gradient(e.z) if detach_input else e.z
    logits = net(z_in)  # [V, N]
    logits = logits + MASK_LOGIT * (1.0 - maskf)
    w = torch.softmax(logits, dim=0)
    # multiply by the mask so absent views are exactly zero, not ~1e-30
    return w * maskf


def weighted_fusion(e: EmbeddingSet, w: torch.Tensor) -> torch.Tensor:
    """Weighted sum of view embeddings, [N, C]."""
    return (e.z * w.unsqueeze(-1)).sum(0)
