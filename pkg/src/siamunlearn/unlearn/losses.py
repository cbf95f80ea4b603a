"""Siamese losses: knowledge vaporization/concentration and symmetric CE.

Both views go through the shared backbone separately. One branch passes
through the predictor head and is compared, by negative cosine similarity,
with the other branch's logits behind a stop-gradient, symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core.tensor import Tensor, as_tensor, cosine_distance, mean, softmax_cross_entropy, stop_gradient
from ..models import Network


def branch_logits(net: Network, view1, view2) -> tuple[Tensor, Tensor]:
    return net(as_tensor(view1)), net(as_tensor(view2))


def alignment(net: Network, l1: Tensor, l2: Tensor) -> Tensor:
    """Per-example ``0.5 * [d(p1, sg(l2)) + d(p2, sg(l1))]``, shape (M,)."""
    p1 = net.predict(l1)
    p2 = net.predict(l2)
    return 0.5 * (cosine_distance(p1, stop_gradient(l2)) + cosine_distance(p2, stop_gradient(l1)))


def symmetric_ce(l1: Tensor, l2: Tensor, labels) -> Tensor:
    """Per-example mean of the two views' cross-entropies on raw logits."""
    return 0.5 * (softmax_cross_entropy(l1, labels) + softmax_cross_entropy(l2, labels))


def loss_kv(net: Network, view1, view2) -> Tensor:
    """Vaporization loss, batch mean. Minimising it pushes the branches apart."""
    return -mean(alignment(net, *branch_logits(net, view1, view2)))


def loss_kc(net: Network, view1, view2) -> Tensor:
    """Concentration loss, batch mean; the exact negation of :func:`loss_kv`."""
    return mean(alignment(net, *branch_logits(net, view1, view2)))


def loss_sce(net: Network, view1, view2, labels) -> Tensor:
    return mean(symmetric_ce(*branch_logits(net, view1, view2), labels))


@dataclass
class ObjectiveTerms:
    total: Tensor
    kvc: float
    sce: float


def siamese_objective(net: Network, view1, view2, labels, lam: float, vaporize: bool,
                      use_kvc: bool = True, use_ce: bool = True) -> ObjectiveTerms:
    """``mean[L_KV + lam*SCE]`` when ``vaporize`` else ``mean[L_KC + lam*SCE]``.

    Disabled terms are left out of the graph entirely.
    """
    l1, l2 = branch_logits(net, view1, view2)
    parts = []
    kvc = sce = 0.0
    if use_kvc:
        align = mean(alignment(net, l1, l2))
        term = -align if vaporize else align
        kvc = term.item()
        parts.append(term)
    if use_ce:
        ce = mean(symmetric_ce(l1, l2, labels))
        sce = ce.item()
        parts.append(lam * ce)
    total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return ObjectiveTerms(total, kvc, sce)
