"""Robustness-guided class reweighting.

Per-sample adversarial margins are reduced to a per-class vulnerability
score (mean negative margin), which a softmax turns into the label-sampling
distribution used by the generator: the less robust a class, the more
samples it receives.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError


@dataclass
class ClassVulnerability:
    """Per-class mean negative adversarial margin and sample counts."""

    values: np.ndarray          # length C, higher = more fragile
    counts: np.ndarray          # samples seen per class
    imputed: np.ndarray = field(default=None)  # True where no samples were seen

    def __post_init__(self):
        if self.imputed is None:
            self.imputed = np.zeros(len(self.values), dtype=bool)


@dataclass
class ClassSamplingWeights:
    """A distribution over class labels on the probability simplex."""

    p: np.ndarray
    temperature: float = 1.0


def adversarial_margin(probs, y):
    """Confidence gap between the true class and the strongest other class.

    Negative means the attack succeeded. probs must be a probability vector.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise InputError("probs must be a single probability vector")
    if abs(probs.sum() - 1.0) > 1e-6 or (probs < 0).any():
        raise InputError("probs is not a normalized probability vector")
    if not 0 <= y < probs.shape[0]:
        raise InputError(f"label {y} out of range for {probs.shape[0]} classes")
    others = np.delete(probs, y)
    return float(probs[y] - others.max())


def adversarial_margins(probs, labels):
    """Vectorized margins for a (B, C) probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise InputError("probs must be (B, C) with one label per row")
    row_sums = probs.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6 or (probs < 0).any():
        raise InputError("rows of probs are not normalized probability vectors")
    true = probs[np.arange(len(labels)), labels]
    masked = probs.copy()
    masked[np.arange(len(labels)), labels] = -np.inf
    return true - masked.max(axis=1)


def class_vulnerability(margins, labels, num_classes):
    """Mean negative margin per class; classes with no samples are imputed.

    Unseen classes get the mean of the observed values and are flagged, so a
    small batch cannot push arbitrary zeros through the softmax.
    """
    margins = np.asarray(margins, dtype=np.float64)
    labels = np.asarray(labels)
    if margins.shape[0] != labels.shape[0]:
        raise InputError("margins and labels must have the same length")
    if margins.size == 0:
        raise InputError("cannot compute vulnerability from an empty batch")
    counts = np.bincount(labels, minlength=num_classes).astype(np.int64)
    sums = np.bincount(labels, weights=-margins, minlength=num_classes)
    values = np.zeros(num_classes)
    seen = counts > 0
    values[seen] = sums[seen] / counts[seen]
    imputed = ~seen
    if imputed.any():
        values[imputed] = values[seen].mean()
    return ClassVulnerability(values=values, counts=counts, imputed=imputed)


def sampling_weights(vulnerability, temperature=1.0):
    """Softmax of vulnerability / temperature: fragile classes get more mass."""
    if temperature <= 0:
        raise ConfigurationError("temperature must be > 0")
    values = np.asarray(vulnerability.values
                        if isinstance(vulnerability, ClassVulnerability)
                        else vulnerability, dtype=np.float64)
    scaled = values / temperature
    shifted = np.exp(scaled - scaled.max())
    return ClassSamplingWeights(p=shifted / shifted.sum(), temperature=temperature)


def uniform_weights(num_classes):
    """The uniform label distribution (reweighting disabled)."""
    return ClassSamplingWeights(p=np.full(num_classes, 1.0 / num_classes))


def sample_labels(weights, batch_size, rng):
    """Draw batch_size i.i.d. labels from the sampling distribution."""
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return rng.choice(len(weights.p), size=batch_size, p=weights.p)
