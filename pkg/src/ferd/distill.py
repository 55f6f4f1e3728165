"""Fairness-enhanced data-free robustness distillation loop.

Each epoch runs three phases against a frozen robust teacher:
  1. generator training (weighted labels, uniformity-constrained synthesis),
  2. class-weight update from adversarial margins on a fresh balanced batch,
  3. student distillation on synthesized benign samples and their
     uniform-target adversarial counterparts.

Every stochastic draw is keyed by (seed, epoch, phase, iteration), so runs
are reproducible and resumable at epoch granularity.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .attacks import AttackSpec, pgd, utae
from .bottleneck import IBConfig
from .checkpoint import load_state, save_checkpoint, save_state
from .errors import ConfigurationError, DivergenceError, SchemaError
from .generation import GeneratorHyper, generator_step, synthesize
from .losses import kl_divergence
from .models import build_model
from .reweight import (ClassSamplingWeights, adversarial_margins,
                       class_vulnerability, sample_labels, sampling_weights,
                       uniform_weights)

logger = logging.getLogger(__name__)

_PHASE_GEN, _PHASE_REWEIGHT, _PHASE_STUDENT, _PHASE_EVAL = range(4)

HISTORY_COLUMNS = ["epoch", "phase", "step", "loss_gen", "loss_adv", "loss_bn",
                   "loss_oh", "loss_uni", "loss_student", "clean_acc"]
WEIGHTS_COLUMNS = ["epoch", "class", "vulnerability", "weight"]
GEN_LOSS_COLUMNS = ["step", "loss_adv", "loss_bn", "loss_oh", "loss_uni", "loss_gen"]


@dataclass
class Ablation:
    """Switches that disable individual fairness mechanisms."""

    no_reweight: bool = False   # keep label sampling uniform
    no_fae: bool = False        # drop the uniformity term from generation
    no_utae: bool = False       # plain PGD adversarial examples instead


@dataclass
class DistillConfig:
    """Schedule, loss weights, and optimizer settings for one distillation run.

    Defaults carry the full-scale schedule; the desk profile overrides them.
    """

    epochs: int = 220
    gen_iters: int = 400
    student_iters: int = 400
    batch_size: int = 256
    lambda1: float = 5 / 6
    lambda2: float = 1 / 6
    student_arch: str = "resnet_small"
    attack_spec: AttackSpec = field(default_factory=lambda: AttackSpec(steps=10))
    reweight_spec: AttackSpec = field(default_factory=lambda: AttackSpec(steps=20))
    gen_hyper: GeneratorHyper = field(default_factory=GeneratorHyper)
    ib: IBConfig = field(default_factory=IBConfig)
    student_lr: float = 0.1
    student_momentum: float = 0.9
    student_weight_decay: float = 5e-4
    gen_lr: float = 2e-3
    gen_betas: tuple = (0.5, 0.999)
    temperature: float = 1.0    # softmax temperature of the class reweighting
    checkpoint_every: int = 0   # epochs between state checkpoints; 0 = none
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigurationError("lambda1 and lambda2 must be >= 0")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")


def student_loss(teacher_probs_fae, student_probs_fae, student_probs_adv,
                 lambda1, lambda2):
    """Distillation loss: match the teacher on benign synthetic samples and
    keep matching it on their adversarial counterparts."""
    return (lambda1 * kl_divergence(teacher_probs_fae, student_probs_fae)
            + lambda2 * kl_divergence(teacher_probs_fae, student_probs_adv))


@dataclass
class RunHistory:
    rows: list = field(default_factory=list)
    weight_rows: list = field(default_factory=list)
    gen_rows: list = field(default_factory=list)

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        def _dump(name, columns, rows):
            path = out_dir / name
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_cell(row.get(c)) for c in columns])
            return path

        paths = {
            "history": _dump("history.csv", HISTORY_COLUMNS, self.rows),
            "weights": _dump("weights.csv", WEIGHTS_COLUMNS, self.weight_rows),
            "gen_losses": _dump("gen_losses.csv", GEN_LOSS_COLUMNS, self.gen_rows),
        }
        return paths


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def _mix(*parts):
    """Deterministic integer seed from a tuple of integers."""
    acc = 0x9E3779B9
    for p in parts:
        acc = (acc * 1_000_003 + int(p) + 0x85EBCA6B) % (1 << 63)
    return acc


def _torch_gen(seed):
    return torch.Generator().manual_seed(seed)


def run_ferd(teacher, config, ablation=None, out_dir=None, eval_data=None,
             resume_from=None):
    """Run the full distillation loop; returns (student, history).

    teacher must be a trained robust model; it is only read. out_dir, when
    given, receives history/weights/loss CSVs and checkpoints. eval_data,
    when given, adds a per-epoch clean-accuracy snapshot of the student.
    """
    ablation = ablation or Ablation()
    teacher.eval()
    teacher_before = {k: v.clone() for k, v in teacher.state_dict().items()}
    num_classes = teacher.num_classes
    input_shape = teacher.input_shape

    student = build_model(config.student_arch, num_classes, input_shape,
                          seed=_mix(config.seed, 1))
    generator = build_model("generator_cond", num_classes, input_shape,
                            seed=_mix(config.seed, 2))
    stu_opt = torch.optim.SGD(student.parameters(), lr=config.student_lr,
                              momentum=config.student_momentum,
                              weight_decay=config.student_weight_decay)
    gen_opt = torch.optim.Adam(generator.parameters(), lr=config.gen_lr,
                               betas=tuple(config.gen_betas))

    weights = uniform_weights(num_classes)
    history = RunHistory()
    start_epoch = 0

    if resume_from is not None:
        meta, payload = load_state(resume_from)
        student.load_state_dict(payload["student"])
        generator.load_state_dict(payload["generator"])
        stu_opt.load_state_dict(payload["stu_opt"])
        gen_opt.load_state_dict(payload["gen_opt"])
        weights = ClassSamplingWeights(
            p=np.asarray(payload["weights_p"], dtype=np.float64),
            temperature=config.temperature)
        start_epoch = int(meta["epoch"]) + 1
        logger.info("resumed from %s at epoch %d", resume_from, start_epoch)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    gen_hyper = config.gen_hyper
    if ablation.no_fae:
        gen_hyper = replace(gen_hyper, lambda_uni=0.0)

    gen_step_index = 0
    for epoch in range(start_epoch, config.epochs):
        # Phase 1: generator training against the frozen teacher and student.
        student.eval()
        for it in range(config.gen_iters):
            labels = sample_labels(
                weights, config.batch_size,
                np.random.default_rng(_mix(config.seed, epoch, _PHASE_GEN, it, 0)))
            ib_cfg = replace(config.ib,
                             seed=_mix(config.seed, epoch, _PHASE_GEN, it, 2))
            result = generator_step(
                generator, teacher, student, torch.from_numpy(labels),
                gen_hyper, ib_cfg,
                _torch_gen(_mix(config.seed, epoch, _PHASE_GEN, it, 1)), gen_opt)
            history.rows.append({
                "epoch": epoch, "phase": "gen", "step": it,
                "loss_gen": result.loss_gen, "loss_adv": result.loss_adv,
                "loss_bn": result.loss_bn, "loss_oh": result.loss_oh,
                "loss_uni": result.loss_uni,
            })
            history.gen_rows.append({
                "step": gen_step_index, "loss_adv": result.loss_adv,
                "loss_bn": result.loss_bn, "loss_oh": result.loss_oh,
                "loss_uni": result.loss_uni, "loss_gen": result.loss_gen,
            })
            gen_step_index += 1

        # Phase 2: update class-sampling weights from adversarial margins.
        if not ablation.no_reweight:
            bal_labels = torch.arange(config.batch_size) % num_classes
            with torch.no_grad():
                probe = synthesize(
                    generator, bal_labels,
                    _torch_gen(_mix(config.seed, epoch, _PHASE_REWEIGHT, 0, 0)))
            spec = replace(config.reweight_spec,
                           seed=_mix(config.seed, epoch, _PHASE_REWEIGHT, 0, 1))
            x_adv = pgd(teacher, probe.images, probe.labels, spec)
            with torch.no_grad():
                probs = F.softmax(teacher(x_adv), dim=1)
            margins = adversarial_margins(probs.numpy(), probe.labels.numpy())
            vulnerability = class_vulnerability(margins, probe.labels.numpy(),
                                                num_classes)
            weights = sampling_weights(vulnerability, config.temperature)
            vul_values = vulnerability.values
        else:
            vul_values = np.zeros(num_classes)
        for cls in range(num_classes):
            history.weight_rows.append({
                "epoch": epoch, "class": cls,
                "vulnerability": float(vul_values[cls]),
                "weight": float(weights.p[cls]),
            })

        # Phase 3: student distillation on fresh FAE/adversarial pairs.
        lr = 0.5 * (1 + math.cos(math.pi * epoch / max(1, config.epochs)))
        for group in stu_opt.param_groups:
            group["lr"] = config.student_lr * lr
        for it in range(config.student_iters):
            labels = sample_labels(
                weights, config.batch_size,
                np.random.default_rng(_mix(config.seed, epoch, _PHASE_STUDENT, it, 0)))
            with torch.no_grad():
                batch = synthesize(
                    generator, torch.from_numpy(labels),
                    _torch_gen(_mix(config.seed, epoch, _PHASE_STUDENT, it, 1)))
            x_fae = batch.images.detach()
            spec = replace(config.attack_spec,
                           seed=_mix(config.seed, epoch, _PHASE_STUDENT, it, 2))
            if ablation.no_utae:
                x_adv = pgd(teacher, x_fae, batch.labels, spec)
            else:
                x_adv = utae(teacher, x_fae, spec)
            with torch.no_grad():
                teacher_probs = F.softmax(teacher(x_fae), dim=1)
            student.train()
            loss = student_loss(
                teacher_probs,
                F.softmax(student(x_fae), dim=1),
                F.softmax(student(x_adv), dim=1),
                config.lambda1, config.lambda2)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"student loss diverged at epoch {epoch} step {it}")
            stu_opt.zero_grad()
            loss.backward()
            stu_opt.step()
            student.eval()
            history.rows.append({
                "epoch": epoch, "phase": "student", "step": it,
                "loss_student": float(loss.detach()),
            })

        # Per-epoch snapshot and checkpoints.
        if eval_data is not None:
            correct = total = 0
            with torch.no_grad():
                for x, y in eval_data.batches(config.batch_size):
                    correct += int((student(x).argmax(1) == y).sum())
                    total += len(y)
            history.rows.append({
                "epoch": epoch, "phase": "eval", "step": 0,
                "clean_acc": correct / total,
            })
        if (out_dir is not None and config.checkpoint_every > 0
                and (epoch + 1) % config.checkpoint_every == 0):
            _write_state(out_dir / f"epoch_{epoch}.ckpt", student, generator,
                         stu_opt, gen_opt, weights, epoch)
        logger.info("epoch %d done", epoch)

    teacher_after = teacher.state_dict()
    if any(not torch.equal(teacher_before[k], teacher_after[k])
           for k in teacher_before):
        raise DivergenceError("teacher state changed during distillation")

    if out_dir is not None:
        history.write(out_dir)
        save_checkpoint(student, out_dir / "student.ckpt")
        save_checkpoint(generator, out_dir / "generator.ckpt")
    return student, history


def _write_state(path, student, generator, stu_opt, gen_opt, weights, epoch):
    save_state(
        payload={
            "student": student.state_dict(),
            "generator": generator.state_dict(),
            "stu_opt": stu_opt.state_dict(),
            "gen_opt": gen_opt.state_dict(),
            "weights_p": torch.from_numpy(weights.p.copy()),
        },
        meta={
            "epoch": epoch,
            "student_arch": student.arch_id,
            "num_classes": student.num_classes,
            "input_shape": list(student.input_shape),
        },
        path=path,
    )


def run_baseline(teacher, config, ablation=None, **kwargs):
    """Ablation arm of run_ferd; with all flags off it is identical to it."""
    return run_ferd(teacher, config, ablation=ablation or Ablation(), **kwargs)


def validate_history(path):
    """Check a history CSV: exact header and well-typed rows."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HISTORY_COLUMNS:
            raise SchemaError(f"{path}: bad header {header}")
        phases = {"gen", "student", "eval"}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(HISTORY_COLUMNS):
                raise SchemaError(f"{path}:{lineno}: wrong column count")
            try:
                int(row[0]), int(row[2])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: bad epoch/step: {exc}") from exc
            if row[1] not in phases:
                raise SchemaError(f"{path}:{lineno}: unknown phase {row[1]!r}")
            for cell in row[3:]:
                if cell:
                    try:
                        float(cell)
                    except ValueError as exc:
                        raise SchemaError(
                            f"{path}:{lineno}: bad numeric cell: {exc}") from exc
    return True
