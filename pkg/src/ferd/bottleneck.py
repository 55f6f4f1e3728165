"""Non-robust feature identification via a learnable noise bottleneck.

A per-channel noise scale is injected into one probed layer of the frozen
teacher and optimized so the noisy features still predict the labels while a
regularizer charges for information passed through each channel. Channels
whose optimized noise scale stays below the largest channel variance are the
perturbation-sensitive ("non-robust") ones; masking the activation down to
them yields the prediction the uniformity loss acts on.
"""

import logging
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import DivergenceError, InputError
from .models import forward_with_probe, resume_from_layer

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-8


@dataclass
class BottleneckState:
    """Learnable pre-softplus noise scales for one probed layer."""

    lambda_raw: torch.Tensor   # length = channel count of the probed layer
    beta: float                # trade-off between prediction and compression
    layer_id: str

    def scales(self):
        """Positive per-channel noise scales."""
        return F.softplus(self.lambda_raw)


@dataclass
class ChannelMask:
    """Binary channel selector; degenerate means no channel was selected."""

    mask: torch.Tensor
    layer_id: str = None
    degenerate: bool = False


@dataclass
class IBConfig:
    layer_id: str = None       # None = the model's last conv block
    beta: float = 0.01
    steps: int = 30
    lr: float = 0.1
    init: float = 0.0          # lambda_raw init, softplus(0) ~ 0.693
    seed: int = 0


def _as_generator(rng):
    if isinstance(rng, torch.Generator):
        return rng
    return torch.Generator().manual_seed(int(rng))


def _channel_variance(z):
    """Population variance per channel over batch and spatial positions."""
    return z.var(dim=(0, 2, 3), unbiased=False)


def noise_regularizer(variances, scales):
    """Sum over channels of v/s^2 + log(s^2/v) - 1; zero iff s^2 == v.

    Each summand is x - log(x) - 1 >= 0 for x = v/s^2 > 0, so the whole term
    is nonnegative. Constant channels are clamped at VAR_FLOOR.
    """
    v = variances.clamp_min(VAR_FLOOR)
    ratio = v / scales.pow(2)
    return (ratio - ratio.log() - 1.0).sum()


def inject_noise(Z, state, rng):
    """Add per-channel Gaussian noise scaled by softplus(lambda_raw)."""
    if Z.ndim != 4:
        raise InputError("Z must be (B, channels, h, w)")
    if Z.shape[1] != state.lambda_raw.shape[0]:
        raise InputError(
            f"Z has {Z.shape[1]} channels, state has {state.lambda_raw.shape[0]}"
        )
    gen = _as_generator(rng)
    eps = torch.randn(Z.shape, generator=gen, dtype=Z.dtype)
    return Z + state.scales().view(1, -1, 1, 1) * eps


def ib_loss(teacher, Z, state, y, rng):
    """Prediction loss of the noisy features plus the compression penalty.

    CE(teacher resumed on Z_I, y) + beta * noise_regularizer, where the
    per-channel variance is measured on Z_I itself.
    """
    Z_I = inject_noise(Z, state, rng)
    logits = resume_from_layer(teacher, Z_I, state.layer_id)
    ce = F.cross_entropy(logits, y)
    v = _channel_variance(Z_I)
    if bool((v < VAR_FLOOR).any()):
        logger.warning("constant channel in Z_I; variance clamped at %g", VAR_FLOOR)
    return ce + state.beta * noise_regularizer(v, state.scales())


def optimize_lambda(teacher, batch, labels, config):
    """Fit the noise scales on one batch; returns (state, loss trace).

    The probed activation is computed once with the teacher frozen; only
    lambda_raw receives gradients, with fresh noise drawn each step from the
    seeded generator.
    """
    layer_id = config.layer_id or teacher.last_conv_block
    with torch.no_grad():
        _, probe = forward_with_probe(teacher, batch, layer_id)
    Z = probe.activation.detach()
    lambda_raw = torch.full(
        (Z.shape[1],), config.init, dtype=Z.dtype, requires_grad=True
    )
    state = BottleneckState(lambda_raw=lambda_raw, beta=config.beta, layer_id=layer_id)
    optimizer = torch.optim.Adam([lambda_raw], lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    trace = []
    for step in range(config.steps):
        loss = ib_loss(teacher, Z, state, labels, gen)
        if not torch.isfinite(loss):
            raise DivergenceError(f"ib loss is not finite at step {step}")
        (grad,) = torch.autograd.grad(loss, lambda_raw)
        lambda_raw.grad = grad
        optimizer.step()
        trace.append(float(loss.detach()))
    final = BottleneckState(
        lambda_raw=lambda_raw.detach(), beta=config.beta, layer_id=layer_id
    )
    return final, trace


def channel_mask(state, Z_I):
    """Select channels whose squared noise scale is below the max channel variance."""
    if Z_I.shape[1] != state.lambda_raw.shape[0]:
        raise InputError(
            f"Z_I has {Z_I.shape[1]} channels, state has {state.lambda_raw.shape[0]}"
        )
    threshold = _channel_variance(Z_I).max()
    mask = (state.scales().pow(2) < threshold).to(Z_I.dtype)
    return ChannelMask(
        mask=mask, layer_id=state.layer_id, degenerate=not bool(mask.any())
    )


def nonrobust_predict(teacher, Z, mask):
    """Teacher prediction from the channel-masked clean activation."""
    if Z.shape[1] != mask.mask.shape[0]:
        raise InputError(
            f"Z has {Z.shape[1]} channels, mask has {mask.mask.shape[0]}"
        )
    logits = resume_from_layer(teacher, Z * mask.mask.view(1, -1, 1, 1), mask.layer_id)
    return F.softmax(logits, dim=1)
