"""AliAd: multimodal multiview classification under arbitrary missing views.

Adjusted center contrastive learning, attention-weighted hyperspherical
fusion, and a sparse mixture-of-experts head with split load balancing.
"""

from .contrastive import (
    EmbeddingSet,
    PairCountLedger,
    adjusted_center_loss,
    adjusted_center_loss_reference,
    bench_loss,
    full_graph_loss,
    pair_loss,
)
from .data import Dataset, SyntheticSpec, gen_synthetic
from .diffcore import GradReport, grad_check, set_precision, stop_gradient
from .fusion import AttentionNet, attention_weights, weighted_fusion
from .geometry import cosine_similarity, critic, mag_norm
from .metrics import js_divergence, macro_f1
from .model import AliAdConfig, AliAdModel, train
from .moe import GateConfig, MoEHead, cv_squared, load_balancing_loss

__version__ = "0.1.0"
