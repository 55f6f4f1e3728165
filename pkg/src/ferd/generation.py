"""Generator training: conditional synthesis and the four-part loss.

The generator is trained to produce images that (1) the teacher labels
correctly, (2) match the teacher's stored BatchNorm statistics, (3) the
student disagrees with the teacher on, and (4) whose non-robust-feature
predictions are close to uniform, so no class dominates the directions
adversarial perturbations will later take.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch.nn.modules.batchnorm import _BatchNorm

from .bottleneck import channel_mask, inject_noise, nonrobust_predict, optimize_lambda
from .errors import DivergenceError, InputError
from .losses import kl_divergence, uniform_kl
from .models import forward_with_probe

logger = logging.getLogger(__name__)


@dataclass
class SyntheticBatch:
    """One generated batch: images in [0,1], their labels, and the latents."""

    images: torch.Tensor
    labels: torch.Tensor
    latents: torch.Tensor


@dataclass
class GeneratorHyper:
    """Loss weights for generator training; adv_sign flips the disagreement term.

    adv_sign=-1 maximizes teacher-student divergence (the intended adversarial
    behavior); +1 runs the summed form verbatim.
    """

    lambda_adv: float = 1.0
    lambda_bn: float = 5.0
    lambda_oh: float = 1.0
    lambda_uni: float = 5.0
    adv_sign: float = -1.0

    def __post_init__(self):
        for name in ("lambda_adv", "lambda_bn", "lambda_oh", "lambda_uni"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.adv_sign not in (-1.0, 1.0, -1, 1):
            raise InputError("adv_sign must be +1 or -1")


def _as_generator(rng):
    if isinstance(rng, torch.Generator):
        return rng
    return torch.Generator().manual_seed(int(rng))


def synthesize(generator, labels, rng):
    """Draw latents and render a labeled batch; deterministic given the seed."""
    gen = _as_generator(rng)
    labels = torch.as_tensor(labels, dtype=torch.long)
    z = torch.randn(labels.shape[0], generator.net.latent_dim, generator=gen)
    images = generator(z, labels)
    return SyntheticBatch(images=images, labels=labels, latents=z)


def loss_uni(teacher, Z, mask):
    """Divergence of the masked-feature prediction from uniform."""
    return uniform_kl(nonrobust_predict(teacher, Z, mask))


def loss_bn(teacher, images):
    """Distance between batch statistics and the teacher's stored BN statistics.

    Sums, over BatchNorm layers, the L2 norms of the mean and variance
    deviations of the layer's input batch.
    """
    terms = []
    hooks = []

    def make_hook(module):
        def hook(mod, inputs):
            x = inputs[0]
            batch_mean = x.mean(dim=(0, 2, 3))
            batch_var = x.var(dim=(0, 2, 3), unbiased=False)
            terms.append((batch_mean - module.running_mean).norm(2)
                         + (batch_var - module.running_var).norm(2))
        return hook

    for module in teacher.net.modules():
        if isinstance(module, _BatchNorm):
            hooks.append(module.register_forward_pre_hook(make_hook(module)))
    try:
        teacher(images)
    finally:
        for h in hooks:
            h.remove()
    if not terms:
        logger.warning("model has no BatchNorm layers; statistics loss is 0")
        return images.sum() * 0.0
    return torch.stack(terms).sum()


def loss_adv_gen(teacher_probs, student_probs):
    """Teacher-to-student prediction divergence on the same batch."""
    if teacher_probs.shape != student_probs.shape:
        raise InputError("teacher and student probability shapes differ")
    return kl_divergence(teacher_probs, student_probs)


def loss_oh(teacher_logits, labels):
    """Cross-entropy of the teacher's predictions against the sampled labels."""
    return F.cross_entropy(teacher_logits, labels)


@dataclass
class GeneratorStepResult:
    loss_adv: float
    loss_bn: float
    loss_oh: float
    loss_uni: float
    loss_gen: float
    batch: SyntheticBatch
    mask: object


def generator_step(generator, teacher, student, labels, hyper, ib_config, rng,
                   optimizer):
    """One optimization step of the generator against frozen teacher/student.

    Synthesizes a batch, fits the noise bottleneck on it to get the
    non-robust channel mask, combines the four loss terms, and steps the
    generator optimizer only. Teacher and student parameters are untouched.
    """
    if teacher.mode != "eval":
        raise InputError("teacher must be in eval mode during generator training")
    generator.train()
    student.eval()

    gen = _as_generator(rng)
    batch = synthesize(generator, labels, gen)
    images = batch.images

    teacher_logits, probe = forward_with_probe(teacher, images, ib_config.layer_id
                                               or teacher.last_conv_block)
    state, _ = optimize_lambda(teacher, images.detach(), batch.labels, ib_config)
    mask_noise = torch.Generator().manual_seed(ib_config.seed + 1)
    z_noisy = inject_noise(probe.activation.detach(), state, mask_noise)
    mask = channel_mask(state, z_noisy)

    l_uni = loss_uni(teacher, probe.activation, mask)
    l_bn = loss_bn(teacher, images)
    l_oh = loss_oh(teacher_logits, batch.labels)
    teacher_probs = F.softmax(teacher_logits, dim=1)
    student_probs = F.softmax(student(images), dim=1)
    l_adv = loss_adv_gen(teacher_probs, student_probs)

    total = (hyper.lambda_adv * hyper.adv_sign * l_adv
             + hyper.lambda_bn * l_bn
             + hyper.lambda_oh * l_oh
             + hyper.lambda_uni * l_uni)

    for name, value in (("loss_adv", l_adv), ("loss_bn", l_bn),
                        ("loss_oh", l_oh), ("loss_uni", l_uni)):
        if not torch.isfinite(value):
            raise DivergenceError(f"{name} is not finite in generator step")

    optimizer.zero_grad()
    total.backward()
    optimizer.step()

    return GeneratorStepResult(
        loss_adv=float(l_adv.detach()), loss_bn=float(l_bn.detach()),
        loss_oh=float(l_oh.detach()),
        loss_uni=float(l_uni.detach()), loss_gen=float(total.detach()),
        batch=SyntheticBatch(images.detach(), batch.labels, batch.latents),
        mask=mask,
    )
