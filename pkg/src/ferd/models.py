"""Model zoo: small CNN classifiers, a conditional image generator, layer
probes, and BatchNorm statistic access.

Classifiers are built from an ordered dict of conv blocks followed by a
global-pool head, so any block output can be probed and the forward pass
resumed from a (possibly modified) activation.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError, InputError


class _BlockClassifier(nn.Module):
    """Classifier skeleton: named conv blocks, then global average pool + linear."""

    def __init__(self):
        super().__init__()
        self.blocks = nn.ModuleDict()
        self.block_channels = {}

    def _finish(self, last_width, num_classes):
        self.head = nn.Linear(last_width, num_classes)

    def forward(self, x):
        for block in self.blocks.values():
            x = block(x)
        return self.head(x.mean(dim=(2, 3)))

    def probe_points(self):
        return list(self.blocks)

    def forward_to(self, x, layer_id):
        """Run blocks up to and including layer_id; return that activation."""
        for name, block in self.blocks.items():
            x = block(x)
            if name == layer_id:
                return x
        raise ConfigurationError(f"unknown layer_id: {layer_id!r}")

    def forward_from(self, activation, layer_id):
        """Resume the forward pass after layer_id and return logits."""
        names = list(self.blocks)
        if layer_id not in names:
            raise ConfigurationError(f"unknown layer_id: {layer_id!r}")
        if activation.ndim != 4:
            raise InputError("activation must be 4-D (B, channels, h, w)")
        if activation.shape[1] != self.block_channels[layer_id]:
            raise InputError(
                f"activation has {activation.shape[1]} channels, "
                f"{layer_id} produces {self.block_channels[layer_id]}"
            )
        x = activation
        for name in names[names.index(layer_id) + 1:]:
            x = self.blocks[name](x)
        return self.head(x.mean(dim=(2, 3)))


def _conv_block(in_ch, out_ch, stride):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class TinyCNN(_BlockClassifier):
    """Four conv-BN-ReLU blocks with stride-2 downsampling after the first."""

    def __init__(self, num_classes, input_shape):
        super().__init__()
        channels = input_shape[0]
        widths = [16, 32, 64, 64]
        strides = [1, 2, 2, 2]
        in_ch = channels
        for i, (w, s) in enumerate(zip(widths, strides), start=1):
            name = f"block{i}"
            self.blocks[name] = _conv_block(in_ch, w, s)
            self.block_channels[name] = w
            in_ch = w
        self._finish(widths[-1], num_classes)


class _ResidualBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.shortcut(x))


class SmallResNet(_BlockClassifier):
    """Stem plus eight residual blocks in four width stages."""

    def __init__(self, num_classes, input_shape):
        super().__init__()
        channels = input_shape[0]
        self.blocks["stem"] = _conv_block(channels, 16, 1)
        self.block_channels["stem"] = 16
        widths = [16, 16, 32, 32, 64, 64, 128, 128]
        strides = [1, 1, 2, 1, 2, 1, 2, 1]
        in_ch = 16
        for i, (w, s) in enumerate(zip(widths, strides), start=1):
            name = f"block{i}"
            self.blocks[name] = _ResidualBlock(in_ch, w, s)
            self.block_channels[name] = w
            in_ch = w
        self._finish(widths[-1], num_classes)


class ConditionalGenerator(nn.Module):
    """Class-conditional image generator with transposed-conv upsampling.

    Takes a latent vector and an integer label; the label embedding is
    concatenated to the latent. Output is squashed to [0, 1] with a sigmoid.
    """

    def __init__(self, num_classes, input_shape, latent_dim=128, embed_dim=32):
        super().__init__()
        channels, height, width = input_shape
        if height % 4 != 0 or width % 4 != 0:
            raise ConfigurationError(
                "generator output height/width must be divisible by 4"
            )
        self.latent_dim = latent_dim
        self.base_h, self.base_w = height // 4, width // 4
        self.embed = nn.Embedding(num_classes, embed_dim)
        self.project = nn.Linear(latent_dim + embed_dim, 128 * self.base_h * self.base_w)
        self.net = nn.Sequential(
            nn.BatchNorm2d(128),
            nn.ConvTranspose2d(128, 64, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(64, 32, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, channels, 3, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, z, labels):
        h = torch.cat([z, self.embed(labels)], dim=1)
        h = self.project(h).view(-1, 128, self.base_h, self.base_w)
        return self.net(h)


ARCH_REGISTRY = {
    "tiny_cnn": TinyCNN,
    "resnet_small": SmallResNet,
    "generator_cond": ConditionalGenerator,
}


class ModelHandle:
    """A network plus the metadata needed to checkpoint and rebuild it."""

    def __init__(self, net, arch_id, num_classes, input_shape):
        self.net = net
        self.arch_id = arch_id
        self.num_classes = num_classes
        self.input_shape = tuple(input_shape)

    def __call__(self, *args, **kwargs):
        return self.net(*args, **kwargs)

    def train(self):
        self.net.train()
        return self

    def eval(self):
        self.net.eval()
        return self

    @property
    def mode(self):
        return "train" if self.net.training else "eval"

    def parameters(self):
        return self.net.parameters()

    def state_dict(self):
        return self.net.state_dict()

    def load_state_dict(self, state):
        self.net.load_state_dict(state)

    def probe_points(self):
        if not isinstance(self.net, _BlockClassifier):
            raise ConfigurationError(f"{self.arch_id} has no probe points")
        return self.net.probe_points()

    @property
    def last_conv_block(self):
        """The final conv block before global pooling, the default probe layer."""
        return self.probe_points()[-1]


def build_model(arch_id, num_classes, input_shape, seed=0):
    """Build a freshly initialized model; initialization is seeded."""
    if arch_id not in ARCH_REGISTRY:
        raise ConfigurationError(
            f"unknown arch_id {arch_id!r}; registered: {sorted(ARCH_REGISTRY)}"
        )
    if num_classes < 2:
        raise ConfigurationError("num_classes must be >= 2")
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = ARCH_REGISTRY[arch_id](num_classes=num_classes, input_shape=input_shape)
    return ModelHandle(net, arch_id, num_classes, input_shape)


@dataclass
class LayerProbe:
    """A captured intermediate activation of shape (B, channels, h, w)."""

    layer_id: str
    activation: torch.Tensor


def forward_with_probe(model, batch, layer_id):
    """Forward pass that also captures the activation at layer_id.

    The returned logits equal a plain forward on the same input; the probe is
    a pass-through capture, not a recomputation.
    """
    net = model.net
    if not isinstance(net, _BlockClassifier):
        raise ConfigurationError(f"{model.arch_id} has no probe points")
    activation = net.forward_to(batch, layer_id)
    logits = net.forward_from(activation, layer_id)
    return logits, LayerProbe(layer_id, activation)


def resume_from_layer(model, activation, layer_id):
    """Propagate an activation through the layers after layer_id to logits."""
    net = model.net
    if not isinstance(net, _BlockClassifier):
        raise ConfigurationError(f"{model.arch_id} has no probe points")
    return net.forward_from(activation, layer_id)


def bn_statistics(model):
    """Stored BatchNorm running statistics as (layer_id, mean, var) tuples.

    Returned tensors are copies; reading never mutates the model. Models
    without BN layers yield an empty list.
    """
    stats = []
    for name, module in model.net.named_modules():
        if isinstance(module, nn.modules.batchnorm._BatchNorm):
            stats.append((name, module.running_mean.detach().clone(),
                          module.running_var.detach().clone()))
    return stats
