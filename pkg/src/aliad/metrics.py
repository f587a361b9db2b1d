"""Classification metrics and distribution divergences."""

import math


def macro_f1(predictions, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all num_classes classes.

    A class absent from both predictions and labels contributes F1 = 0,
    keeping the denominator stable across view-combination sweeps.
    """
    if len(predictions) == 0 or len(predictions) != len(labels):
        raise ValueError("predictions and labels must be equal-length and nonempty")
    total = 0.0
    for cls in range(num_classes):
        tp = sum(1 for p, y in zip(predictions, labels) if p == cls and y == cls)
        fp = sum(1 for p, y in zip(predictions, labels) if p == cls and y != cls)
        fn = sum(1 for p, y in zip(predictions, labels) if p != cls and y == cls)
        if 2 * tp + fp + fn > 0:
            total += 2 * tp / (2 * tp + fp + fn)
    return total / num_classes


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence (natural log) between two distributions."""
    if len(p) != len(q):
        raise ValueError("distributions must have the same length")
    ps = sum(p)
    qs = sum(q)
    p = [x / ps for x in p]
    q = [x / qs for x in q]

    def kl(a, b):
        return sum(x * math.log(x / y) for x, y in zip(a, b) if x > 0)

    m = [(x + y) / 2 for x, y in zip(p, q)]
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)
