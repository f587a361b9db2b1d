"""Multiview contrastive losses.

Three losses operate on a batch of per-view embeddings:

- ``pair_loss``: symmetric InfoNCE-style loss between two views, with the
  cross-view positive kept in the denominator and only the anchor's self
  term excluded.
- ``adjusted_center_loss``: contrasts each view against the weighted center
  of the remaining views. The center and the weights are treated as
  constants (stop-gradient), so gradients reach an embedding only through
  its role as the contrasted view. The fusion is computed once and each
  view is subtracted from it, so the whole loss costs V pair evaluations
  instead of V(V-1)/2.
- ``full_graph_loss``: the classic all-pairs baseline, kept for ablations
  and for the complexity benchmark.

``adjusted_center_loss_reference`` recomputes the per-view center from
scratch inside the loop; it is mathematically identical and exists purely
as a test oracle for the optimized form.
"""

import statistics
import time
from dataclasses import dataclass, field
from itertools import combinations

import torch

from .diffcore import stop_gradient

LOG_FLOOR = 1e-30
NORM_FLOOR = 1e-12
WEIGHT_SUM_TOL = 1e-4


@dataclass
class EmbeddingSet:
    """Per-view embeddings [V, N, C] plus a [V, N] presence mask."""

    z: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self):
        if self.z.dim() != 3:
            raise ValueError(f"z must be [V, N, C], got shape {tuple(self.z.shape)}")
        if tuple(self.mask.shape) != tuple(self.z.shape[:2]):
            raise ValueError("mask shape must match the leading [V, N] dims of z")
        self.mask = self.mask.bool()

    @property
    def num_views(self) -> int:
        return self.z.shape[0]

    @property
    def batch_size(self) -> int:
        return self.z.shape[1]


@dataclass
class PairCountLedger:
    """Machine-independent complexity instrumentation for one loss call."""

    pair_loss_evaluations: int = 0
    critic_evaluations: int = 0


def _exp_cosine_matrix(pool: torch.Tensor, tau: float) -> torch.Tensor:
    """Pairwise exp(cos/tau) over the rows of pool ([..., R, C])."""
    normed = pool / pool.norm(dim=-1, keepdim=True).clamp_min(NORM_FLOOR)
    return torch.exp(normed @ normed.transpose(-1, -2) / tau)


def pair_loss(za, zb, mask_ab, tau: float, ledger: PairCountLedger | None = None):
    """Symmetric contrastive loss between two views of the same batch.

    For each present sample i, the loss is l(a,b)_i + l(b,a)_i where the
    denominator of l(a,b)_i sums the critic over every present (j, view)
    entry except the anchor itself (j=i AND view=a); the cross-view positive
    is included in the denominator. Masked samples contribute neither loss
    terms nor negatives.

    Returns (per_sample [N] with zeros at masked entries, scalar mean over
    present samples).
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    n = za.shape[0]
    m = torch.as_tensor(mask_ab).bool()
    n_present = int(m.sum())
    if n_present == 0:
        raise ValueError("pair_loss on a fully masked batch")

    pool = torch.cat([za, zb], dim=0)  # [2N, C]
    s = _exp_cosine_matrix(pool, tau)  # [2N, 2N]
    if ledger is not None:
        ledger.pair_loss_evaluations += 1
        ledger.critic_evaluations += (2 * n_present) ** 2

    colmask = torch.cat([m, m]).to(s.dtype)
    denom = (s * colmask).sum(-1) - s.diagonal() * colmask  # self-exclusion only
    denom = denom.clamp_min(LOG_FLOOR)
    numer_ab = s.diagonal(offset=n)  # S[i, N+i]
    numer_ba = s.diagonal(offset=-n)  # S[N+i, i]
    l_ab = -torch.log((numer_ab / denom[:n]).clamp_min(LOG_FLOOR))
    l_ba = -torch.log((numer_ba / denom[n:]).clamp_min(LOG_FLOOR))
    per_sample = (l_ab + l_ba) * m.to(s.dtype)
    return per_sample, per_sample.sum() / n_present


def _validate_weights(e: EmbeddingSet, w: torch.Tensor) -> None:
    if (w < 0).any():
        raise ValueError("attention weights must be nonnegative")
    off = w.detach() * (~e.mask).to(w.dtype)
    if off.abs().max() > WEIGHT_SUM_TOL:
        raise ValueError("weights must be zero on masked (view, sample) entries")
    sums = (w.detach() * e.mask.to(w.dtype)).sum(0)
    has_view = e.mask.any(0)
    if (sums[has_view] - 1.0).abs().max() > WEIGHT_SUM_TOL:
        raise ValueError("per-sample weights over present views must sum to 1")


def adjusted_center_loss(
    e: EmbeddingSet, w: torch.Tensor, tau: float, ledger: PairCountLedger | None = None
) -> torch.Tensor:
    """Adjusted center contrastive loss, fused across views.

    The weighted fusion is computed once; each view's center is obtained by
    subtracting its own weighted embedding. All V pair losses are then
    evaluated in a single batched similarity computation. Each view's
    per-sample pair losses are scaled by (1 - w) and the total is divided
    by V - 1, making the loss a weighted average across views. Samples with
    fewer than two present views contribute zero.
    """
    v, n, _ = e.z.shape
    if v < 2:
        raise ValueError("adjusted center loss needs at least 2 views")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    _validate_weights(e, w)

    w_sg = stop_gradient(w)
    wz = stop_gradient(e.z * w_sg.unsqueeze(-1))  # [V, N, C], zero at masked entries
    centers = wz.sum(0, keepdim=True) - wz  # center of the other views, [V, N, C]

    # A (view, sample) entry participates only if the view is present and at
    # least one other view exists to form its center.
    others = e.mask.sum(0, keepdim=True) - e.mask.to(torch.long)
    jm = e.mask & (others >= 1)  # [V, N]

    if ledger is not None:
        ledger.pair_loss_evaluations += v
        ledger.critic_evaluations += int(((2 * jm.sum(1)) ** 2).sum())
    return _center_contrast_core(e.z, centers, w_sg, jm, tau)


def _center_contrast_core(z, centers, w_sg, jm, tau):
    """Batched pair losses of every view against its (constant) center.

    Factored out so gradient checks can hold the centers fixed, matching
    the stop-gradient semantics of the full loss.
    """
    v, n, _ = z.shape
    pool = torch.cat([z, centers], dim=1)  # [V, 2N, C]
    s = _exp_cosine_matrix(pool, tau)  # [V, 2N, 2N]
    colmask = torch.cat([jm, jm], dim=1).to(s.dtype)  # [V, 2N]
    denom = (s * colmask.unsqueeze(1)).sum(-1)
    denom = denom - s.diagonal(dim1=1, dim2=2) * colmask
    denom = denom.clamp_min(LOG_FLOOR)
    numer_zc = s.diagonal(offset=n, dim1=1, dim2=2)  # anchor z_i vs its center
    numer_cz = s.diagonal(offset=-n, dim1=1, dim2=2)  # anchor c_i vs its view
    l_zc = -torch.log((numer_zc / denom[:, :n]).clamp_min(LOG_FLOOR))
    l_cz = -torch.log((numer_cz / denom[:, n:]).clamp_min(LOG_FLOOR))
    per_view_sample = (l_zc + l_cz) * jm.to(s.dtype)

    weighted = ((1.0 - w_sg) * per_view_sample).sum(0) / (v - 1)  # [N]
    return weighted.mean()


def adjusted_center_loss_reference(
    e: EmbeddingSet, w: torch.Tensor, tau: float
) -> torch.Tensor:
    """Literal per-view evaluation of the adjusted center loss.

    Recomputes the weighted center of the other views from scratch for every
    view (the O(V^2 N) form). Test oracle only; must agree with
    adjusted_center_loss to floating-point accuracy.
    """
    v, n, _ = e.z.shape
    if v < 2:
        raise ValueError("adjusted center loss needs at least 2 views")
    _validate_weights(e, w)
    w_sg = stop_gradient(w)

    present_counts = e.mask.sum(0)
    total = torch.zeros(n, dtype=e.z.dtype)
    for a in range(v):
        center = torch.zeros_like(e.z[a])
        for b in range(v):
            if b == a:
                continue
            center = center + stop_gradient(w_sg[b].unsqueeze(-1) * e.z[b])
        jm = e.mask[a] & ((present_counts - e.mask[a].to(torch.long)) >= 1)
        if not jm.any():
            continue
        per_sample, _ = pair_loss(e.z[a], center, jm, tau)
        total = total + (1.0 - w_sg[a]) * per_sample
    return (total / (v - 1)).mean()


def full_graph_loss(
    e: EmbeddingSet, tau: float, ledger: PairCountLedger | None = None
) -> torch.Tensor:
    """All-pairs contrastive baseline: mean of pair_loss over every
    unordered view pair (V(V-1)/2 evaluations)."""
    v = e.num_views
    if v < 2:
        raise ValueError("full graph loss needs at least 2 views")
    pairs = list(combinations(range(v), 2))
    total = torch.zeros((), dtype=e.z.dtype)
    for a, b in pairs:
        jm = e.mask[a] & e.mask[b]
        if ledger is not None:
            ledger.pair_loss_evaluations += 1
        if not jm.any():
            continue
        _, scalar = pair_loss(e.z[a], e.z[b], jm, tau, ledger=None)
        if ledger is not None:
            ledger.critic_evaluations += (2 * int(jm.sum())) ** 2
        total = total + scalar
    return total / len(pairs)


@dataclass
class BenchResult:
    loss_kind: str
    num_views: int
    batch_size: int
    embed_dim: int
    trials: int
    median_ns: float
    iqr_ns: float
    pair_evals: int

    CSV_HEADER = "loss_kind,V,N,C,trials,median_ns,iqr_ns,pair_evals"

    def csv_row(self) -> str:
        return (
            f"{self.loss_kind},{self.num_views},{self.batch_size},{self.embed_dim},"
            f"{self.trials},{self.median_ns:.0f},{self.iqr_ns:.0f},{self.pair_evals}"
        )


def bench_loss(
    loss_kind: str,
    num_views: int,
    batch_size: int,
    embed_dim: int,
    trials: int = 25,
    warmup: int = 3,
    seed: int = 0,
) -> BenchResult:
    """Time one contrastive loss on deterministic random inputs.

    Single-threaded, warmup before measurement, median/IQR over trials.
    Inputs are fully present (no masking) with uniform view weights.
    """
    if trials < 5:
        raise ValueError("need at least 5 trials")
    if warmup < 2:
        raise ValueError("need at least 2 warmup runs")
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(num_views, batch_size, embed_dim, generator=gen)
    z = z / z.norm(dim=-1, keepdim=True) * embed_dim**0.5
    mask = torch.ones(num_views, batch_size, dtype=torch.bool)
    e = EmbeddingSet(z, mask)
    w = torch.full((num_views, batch_size), 1.0 / num_views)
    tau = 0.1

    if loss_kind == "adjusted_center":
        run = lambda led: adjusted_center_loss(e, w, tau, led)
    elif loss_kind == "full_graph":
        run = lambda led: full_graph_loss(e, tau, led)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")

    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        ledger = PairCountLedger()
        for _ in range(warmup):
            run(None)
        run(ledger)
        pair_evals = ledger.pair_loss_evaluations
        times = []
        for _ in range(trials):
            t0 = time.perf_counter_ns()
            run(None)
            times.append(time.perf_counter_ns() - t0)
    finally:
        torch.set_num_threads(prev_threads)

    quarts = statistics.quantiles(times, n=4)
    return BenchResult(
        loss_kind=loss_kind,
        num_views=num_views,
        batch_size=batch_size,
        embed_dim=embed_dim,
        trials=trials,
        median_ns=statistics.median(times),
        iqr_ns=quarts[2] - quarts[0],
        pair_evals=pair_evals,
    )
