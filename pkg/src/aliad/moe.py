"""Sparse mixture-of-experts classification head.

Noisy top-K gating in the style of Shazeer et al.'s sparsely-gated MoE:
clean logits from a linear gate, optional Gaussian noise scaled by a
softplus of a second linear map during training, top-K selection, and a
softmax over the kept logits. Balancing uses squared coefficient of
variation of per-expert importance (total gate weight) and load. Load is
estimated smoothly as the probability that each token's noisy logit clears
the K-th threshold, so the balancing loss has a gradient; hard token
counts are exposed separately as a diagnostic.

Because individual-view tokens vastly outnumber fused tokens during
training, the balancing loss is computed for the two groups separately and
summed, keeping both groups spread across the full expert pool.
"""

import csv
from dataclasses import dataclass, field

import torch
from torch import nn
from torch.distributions import Normal

NOISE_STD_FLOOR = 1e-2
CV_EPS = 1e-18


@dataclass
class GateConfig:
    num_experts: int = 16
    top_k: int = 3
    noise_enabled: bool = True

    def __post_init__(self):
        if not 1 <= self.top_k <= self.num_experts:
            raise ValueError(
                f"top_k must be in [1, {self.num_experts}], got {self.top_k}"
            )


@dataclass
class GateOutput:
    """Sparse gate weights plus the statistics the balancing loss needs."""

    sparse_weights: torch.Tensor  # [T, E], exactly min(K, E) nonzeros per row
    selected_indices: torch.Tensor  # [T, K]
    importance: torch.Tensor  # [E], total gate weight per expert
    load: torch.Tensor  # [E], smooth dispatch estimate (differentiable)
    hard_counts: torch.Tensor  # [E], actual token counts (diagnostic)


class NoisyTopKGate(nn.Module):
    def __init__(self, embed_dim: int, cfg: GateConfig):
        super().__init__()
        self.cfg = cfg
        self.w_gate = nn.Parameter(torch.zeros(embed_dim, cfg.num_experts))
        self.w_noise = nn.Parameter(torch.zeros(embed_dim, cfg.num_experts))
        nn.init.normal_(self.w_gate, std=0.1)
        nn.init.normal_(self.w_noise, std=0.1)

    def forward(self, tokens: torch.Tensor, train_mode: bool = True) -> GateOutput:
        if tokens.dim() != 2 or tokens.shape[0] < 1:
            raise ValueError("tokens must be a nonempty [T, C] matrix")
        cfg = self.cfg
        clean = tokens @ self.w_gate  # [T, E]
        noise_std = torch.nn.functional.softplus(tokens @ self.w_noise) + NOISE_STD_FLOOR
        if train_mode and cfg.noise_enabled:
            noisy = clean + torch.randn_like(clean) * noise_std
        else:
            noisy = clean

        k = min(cfg.top_k, cfg.num_experts)
        top_vals, top_idx = noisy.topk(k, dim=-1)
        kept = torch.full_like(noisy, float("-inf"))
        kept.scatter_(-1, top_idx, top_vals)
        sparse = torch.softmax(kept, dim=-1)
        # exact zeros outside the top-K (softmax of -inf already gives 0)
        importance = sparse.sum(0)

        load = self._smooth_load(clean, noisy, noise_std, top_vals, k)
        hard = torch.zeros(cfg.num_experts, dtype=torch.long)
        hard.scatter_add_(0, top_idx.reshape(-1), torch.ones(top_idx.numel(), dtype=torch.long))
        return GateOutput(
            sparse_weights=sparse,
            selected_indices=top_idx,
            importance=importance,
            load=load,
            hard_counts=hard,
        )

    def _smooth_load(self, clean, noisy, noise_std, top_vals, k):
        """P(expert e is in the top K) per token, summed over tokens.

        For each (token, expert) the threshold is the K-th highest of the
        other experts' noisy logits: the (K+1)-th value if e is currently
        in the top K, else the K-th. The probability that e's clean logit
        plus fresh Gaussian noise clears it is a normal CDF.
        """
        e = clean.shape[1]
        if k >= e:
            return torch.full((e,), float(clean.shape[0]), dtype=clean.dtype)
        top_kp1, _ = noisy.topk(k + 1, dim=-1)
        in_topk = noisy >= top_vals[:, -1:].expand_as(noisy)
        thresh_if_in = top_kp1[:, k].unsqueeze(-1)  # (k+1)-th value
        thresh_if_out = top_kp1[:, k - 1].unsqueeze(-1)  # k-th value
        thresh = torch.where(in_topk, thresh_if_in, thresh_if_out)
        prob = Normal(0.0, 1.0).cdf((clean - thresh) / noise_std)
        return prob.sum(0)


class Expert(nn.Module):
    """MLP from embedding to class logits (two FC layers with a ReLU)."""

    def __init__(self, embed_dim: int, num_classes: int, hidden_dim: int | None = None):
        super().__init__()
        if hidden_dim is None:
            hidden_dim = embed_dim
        self.fc1 = nn.Linear(embed_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, num_classes)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


class MoEHead(nn.Module):
    """Gate + expert pool. Only selected experts are evaluated per token."""

    def __init__(self, embed_dim: int, num_classes: int, cfg: GateConfig):
        super().__init__()
        self.cfg = cfg
        self.num_classes = num_classes
        self.gate = NoisyTopKGate(embed_dim, cfg)
        self.experts = nn.ModuleList(
            Expert(embed_dim, num_classes) for _ in range(cfg.num_experts)
        )

    def forward(self, tokens: torch.Tensor, train_mode: bool = True):
        """Returns (logits [T, num_classes], GateOutput)."""
        gate_out = self.gate(tokens, train_mode=train_mode)
        logits = torch.zeros(tokens.shape[0], self.num_classes, dtype=tokens.dtype)
        for e_idx, expert in enumerate(self.experts):
            token_rows = (gate_out.sparse_weights[:, e_idx] > 0).nonzero().squeeze(-1)
            if token_rows.numel() == 0:
                continue
            out = expert(tokens[token_rows])
            logits = logits.index_add(
                0, token_rows, gate_out.sparse_weights[token_rows, e_idx].unsqueeze(-1) * out
            )
        return logits, gate_out


def cv_squared(x: torch.Tensor) -> torch.Tensor:
    """Squared coefficient of variation (population variance / mean^2)."""
    if x.numel() <= 1:
        return torch.zeros((), dtype=x.dtype)
    mean = x.mean()
    var = ((x - mean) ** 2).mean()
    return var / (mean**2 + CV_EPS)


def balance_term(stats: GateOutput) -> torch.Tensor:
    return cv_squared(stats.importance) + cv_squared(stats.load)


def load_balancing_loss(
    one_view_stats: GateOutput | None, fused_stats: GateOutput | None
) -> torch.Tensor:
    """CV^2(importance) + CV^2(load), computed for the individual-view token
    group and the fused token group separately, then summed."""
    total = torch.zeros(())
    for stats in (one_view_stats, fused_stats):
        if stats is not None:
            total = total + balance_term(stats)
    return total


def write_usage_csv(path, rows: dict[str, torch.Tensor]) -> None:
    """Expert-usage matrix as CSV: one row per view-combination label,
    cells are percentages of gating score, each row normalized to 100."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        any_row = next(iter(rows.values()))
        writer.writerow(["combination"] + [f"expert_{e}" for e in range(len(any_row))])
        for label, usage in rows.items():
            pct = usage / usage.sum() * 100.0
            writer.writerow([label] + [f"{v:.6f}" for v in pct.tolist()])
