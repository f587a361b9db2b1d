"""Differentiable tensor substrate.

Thin layer over torch providing the pieces the rest of the package relies
on: a global precision switch (float64 for testing, float32 for faster
training), a stop-gradient marker, a scalar backward entry point, and a
central finite-difference gradient checker used as the independent oracle
for every differentiable operation in the package.
"""

from dataclasses import dataclass, field

import torch

_PRECISIONS = {"float64": torch.float64, "float32": torch.float32}


def set_precision(name: str) -> None:
    """Select the global float precision ("float64" or "float32")."""
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}, expected one of {sorted(_PRECISIONS)}")
    torch.set_default_dtype(_PRECISIONS[name])


def get_precision() -> str:
    return {v: k for k, v in _PRECISIONS.items()}[torch.get_default_dtype()]


# float64 is the default; training code opts into float32 explicitly.
set_precision("float64")


def tensor(values, requires_grad: bool = False) -> torch.Tensor:
    """Construct a tensor at the current global precision."""
    t = torch.as_tensor(values, dtype=torch.get_default_dtype())
    if requires_grad:
        t = t.clone().requires_grad_(True)
    return t


def stop_gradient(t: torch.Tensor) -> torch.Tensor:
    """Pass values forward unchanged; block gradient flow backward."""
    return t.detach()


def backward(scalar_loss: torch.Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Gradients accumulate into ``.grad`` of every requires_grad leaf, in the
    deterministic order fixed by graph recording.
    """
    if scalar_loss.numel() != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {tuple(scalar_loss.shape)}")
    scalar_loss.backward()


@dataclass
class GradReport:
    """Result of comparing analytic gradients against finite differences."""

    max_relative_error: float
    per_input_errors: list[float]
    analytic: list[torch.Tensor] = field(default_factory=list)
    numeric: list[torch.Tensor] = field(default_factory=list)


def grad_check(f, inputs, step: float = 1e-5) -> GradReport:
    """Compare analytic gradients of a scalar function against central
    finite differences.

    ``f`` takes the tensors in ``inputs`` and returns a scalar. The relative
    error per element is |a - n| / max(1, |a|, |n|); NaN anywhere is reported
    as failure (max_relative_error = inf), never as a silent pass.
    """
    leaves = [t.detach().clone().requires_grad_(True) for t in inputs]
    out = f(*leaves)
    if out.numel() != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    analytic = torch.autograd.grad(out, leaves, allow_unused=True)
    analytic = [
        g if g is not None else torch.zeros_like(x) for g, x in zip(analytic, leaves)
    ]

    numeric = []
    frozen = [t.detach().clone() for t in inputs]
    for k, x in enumerate(frozen):
        g = torch.zeros_like(x)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            flat[idx] = orig + step
            hi = f(*frozen).item()
            flat[idx] = orig - step
            lo = f(*frozen).item()
            flat[idx] = orig
            gflat[idx] = (hi - lo) / (2.0 * step)
        numeric.append(g)

    per_input = []
    for a, n in zip(analytic, numeric):
        if a.isnan().any() or n.isnan().any():
            per_input.append(float("inf"))
            continue
        denom = torch.maximum(torch.ones_like(a), torch.maximum(a.abs(), n.abs()))
        per_input.append(((a - n).abs() / denom).max().item())
    return GradReport(
        max_relative_error=max(per_input) if per_input else 0.0,
        per_input_errors=per_input,
        analytic=[a.detach() for a in analytic],
        numeric=numeric,
    )
