"""Gradient-sign adversarial attacks under an L-infinity budget.

All attacks share one iteration core: the perturbation is kept in a separate
delta tensor clamped to [-epsilon, epsilon] every step, and the evaluated
iterate is the data-range clamp of x + delta. The final output applies the
data-range clamp last, so clip-range containment is exact and ball
containment holds to within one float rounding.

Attacks are pure given (model, input, spec): random starts draw from a local
generator seeded by spec.seed, so identical calls are bit-identical.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, InputError
from .losses import kl_divergence, uniform_kl


@dataclass
class AttackSpec:
    """Threat-model parameters shared by every attack.

    epsilon/alpha are in pixel units on the clip_range scale. gamma weighs
    the uniform-target term and is only read by the UTAE attack. steps=0
    returns the input (plus the random start, if enabled).
    """

    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    gamma: float = 0.5
    clip_range: tuple = (0.0, 1.0)
    seed: int = 0
    random_start: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        if self.steps > 0 and self.alpha <= 0:
            raise ConfigurationError("alpha must be > 0 when steps > 0")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be >= 0")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ConfigurationError("clip_range must satisfy lo < hi")


def _iterate(x, grad_loss, spec, descend=False):
    """Shared sign-gradient iteration; grad_loss maps an iterate to a scalar."""
    lo, hi = spec.clip_range
    x = x.detach()
    delta = torch.zeros_like(x)
    if spec.random_start and spec.epsilon > 0:
        gen = torch.Generator().manual_seed(spec.seed)
        delta = torch.empty_like(x).uniform_(-spec.epsilon, spec.epsilon, generator=gen)
    direction = -1.0 if descend else 1.0
    for _ in range(spec.steps):
        x_cur = (x + delta).clamp(lo, hi).requires_grad_(True)
        loss = grad_loss(x_cur)
        (grad,) = torch.autograd.grad(loss, x_cur)
        delta = (delta + direction * spec.alpha * grad.sign()).clamp(
            -spec.epsilon, spec.epsilon
        )
    return (x + delta).clamp(lo, hi)


def fgsm(model, x, y, spec):
    """Single-step sign attack: clip(x + epsilon * sign(grad CE))."""
    lo, hi = spec.clip_range
    x = x.detach().requires_grad_(True)
    loss = F.cross_entropy(model(x), y)
    (grad,) = torch.autograd.grad(loss, x)
    return (x.detach() + spec.epsilon * grad.sign()).clamp(lo, hi)


def pgd(model, x, y, spec):
    """Iterated sign ascent on cross-entropy, projected per step."""
    return _iterate(x, lambda xc: F.cross_entropy(model(xc), y), spec)


def cw_inf(model, x, y, spec):
    """Margin-loss attack: ascend max_{j != y} z_j - z_y on the logits."""

    def margin_loss(xc):
        z = model(xc)
        true = z.gather(1, y.view(-1, 1)).squeeze(1)
        masked = z.masked_fill(
            F.one_hot(y, z.shape[1]).bool(), float("-inf")
        )
        return (masked.max(dim=1).values - true).mean()

    return _iterate(x, margin_loss, spec)


def targeted_pgd(model, x, target, spec):
    """Descend cross-entropy toward a chosen target class."""
    num_classes = model.num_classes if hasattr(model, "num_classes") else None
    if num_classes is not None:
        if int(target.min()) < 0 or int(target.max()) >= num_classes:
            raise InputError("target labels out of range")
    return _iterate(
        x, lambda xc: F.cross_entropy(model(xc), target), spec, descend=True
    )


def _reference_probs(model, x):
    with torch.no_grad():
        return F.softmax(model(x), dim=1)


def kl_pgd(model, x, spec):
    """Ascend the KL divergence from the model's clean prediction.

    Label-free PGD variant: the attack pushes the prediction away from the
    prediction on the unperturbed input.
    """
    ref = _reference_probs(model, x)

    def loss(xc):
        return kl_divergence(ref, F.softmax(model(xc), dim=1))

    return _iterate(x, loss, spec)


def utae(teacher, x_ref, spec):
    """Uniform-target adversarial examples crafted from reference images.

    Ascends KL(p_ref || p(x)) - gamma * KL(U || p(x)): the first term drives
    the prediction away from the clean one, the second spreads the resulting
    predicted labels across classes instead of collapsing onto a few easy
    targets. gamma = 0 reduces to kl_pgd exactly.
    """
    if hasattr(teacher, "mode") and teacher.mode != "eval":
        raise InputError("teacher must be in eval mode for UTAE generation")
    ref = _reference_probs(teacher, x_ref)

    def loss(xc):
        probs = F.softmax(teacher(xc), dim=1)
        value = kl_divergence(ref, probs)
        if spec.gamma != 0.0:
            value = value - spec.gamma * uniform_kl(probs)
        return value

    return _iterate(x_ref, loss, spec)


ATTACKS = {
    "fgsm": fgsm,
    "pgd": pgd,
    "cw": cw_inf,
    "targeted_pgd": targeted_pgd,
    "kl_pgd": kl_pgd,
    "utae": utae,
}
