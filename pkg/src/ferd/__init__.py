"""Fairness-enhanced data-free robustness distillation.

Synthesizes surrogate training data from a robust teacher with
class-reweighted, uniformity-constrained generation, crafts uniform-target
adversarial examples, distills a student, and evaluates class-wise robust
fairness.
"""

from .attacks import AttackSpec, cw_inf, fgsm, kl_pgd, pgd, targeted_pgd, utae
from .bottleneck import (BottleneckState, ChannelMask, IBConfig, channel_mask,
                         ib_loss, inject_noise, nonrobust_predict,
                         optimize_lambda)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledData, load_dataset, synthetic_dataset
from .distill import (Ablation, DistillConfig, RunHistory, run_baseline,
                      run_ferd, student_loss)
from .errors import (CheckpointError, ConfigurationError, DivergenceError,
                     FerdError, InputError, MigrationError, SchemaError)
from .evaluate import (EvalReport, confusion_matrix, evaluate_model, nsd,
                       per_class_accuracy, read_report, worst_class,
                       worst_k_percent, write_report)
from .generation import (GeneratorHyper, SyntheticBatch, generator_step,
                         loss_adv_gen, loss_bn, loss_oh, loss_uni, synthesize)
from .models import (ModelHandle, bn_statistics, build_model,
                     forward_with_probe, resume_from_layer)
from .reweight import (ClassSamplingWeights, ClassVulnerability,
                       adversarial_margin, adversarial_margins,
                       class_vulnerability, sample_labels, sampling_weights)
from .teacher import TeacherConfig, train_robust_teacher

__version__ = "0.1.0"
