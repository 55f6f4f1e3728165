"""Shared divergence primitives used by attacks, generation, and distillation.

All KL computations clamp probabilities at PROB_FLOOR before taking logs so
one-hot or collapsed predictions stay finite.
"""

import torch

PROB_FLOOR = 1e-12


def kl_divergence(p, q):
    """Batch-mean KL(p || q) for row-wise probability tensors of shape (B, C)."""
    p = p.clamp_min(PROB_FLOOR)
    q = q.clamp_min(PROB_FLOOR)
    return (p * (p.log() - q.log())).sum(dim=1).mean()


def uniform_kl(q):
    """Batch-mean KL(U || q), the divergence of q from the uniform distribution."""
    num_classes = q.shape[1]
    u = torch.full_like(q, 1.0 / num_classes)
    return kl_divergence(u, q)
