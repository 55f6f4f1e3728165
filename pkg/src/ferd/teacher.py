"""Adversarial training of the robust teacher (min-max on PGD examples)."""

import logging
from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

from .attacks import pgd
from .errors import DivergenceError, InputError
from .models import build_model

logger = logging.getLogger(__name__)


@dataclass
class TeacherConfig:
    arch_id: str = "tiny_cnn"
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0


def train_robust_teacher(dataset, attack_spec, epochs, config):
    """Min-max training: each batch is replaced by its PGD counterpart.

    Returns the trained teacher in eval mode. epochs=0 returns the freshly
    initialized model. Deterministic given config.seed.
    """
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    teacher = build_model(config.arch_id, dataset.num_classes,
                          dataset.input_shape, seed=config.seed)
    optimizer = torch.optim.SGD(teacher.parameters(), lr=config.lr,
                                momentum=config.momentum,
                                weight_decay=config.weight_decay)
    step = 0
    for epoch in range(epochs):
        clean_correct = robust_correct = total = 0
        for x, y in dataset.batches(config.batch_size, shuffle=True,
                                    seed=config.seed + epoch):
            teacher.eval()
            x_adv = pgd(teacher, x, y, replace(attack_spec, seed=attack_spec.seed + step))
            teacher.train()
            logits = teacher(x_adv)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise DivergenceError(f"teacher loss diverged at epoch {epoch} step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            with torch.no_grad():
                teacher.eval()
                clean_correct += int((teacher(x).argmax(1) == y).sum())
                robust_correct += int((logits.argmax(1) == y).sum())
                total += len(y)
            step += 1
        logger.info("teacher epoch %d: clean %.3f robust %.3f",
                    epoch, clean_correct / total, robust_correct / total)
    return teacher.eval()
