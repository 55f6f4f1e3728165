"""Class-wise robustness evaluation and report serialization.

Produces per-class accuracy under each attack, the fairness aggregates
(average, worst class, worst-k%, normalized standard deviation), confusion
matrices, and a versioned JSON report plus CSV plot-data exports.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, InputError, MigrationError, SchemaError

REPORT_SCHEMA_VERSION = 1
NSD_DEFINITION = "cv_population"


def worst_class(acc):
    """Minimum per-class accuracy."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.size == 0:
        raise InputError("empty accuracy vector")
    return float(acc.min())


def worst_k_percent(acc, k):
    """Mean accuracy over the ceil(k*C/100) least-robust classes.

    Ties are broken by class index so the tail is deterministic.
    """
    if not 0 < k <= 100:
        raise ConfigurationError("k must be in (0, 100]")
    acc = np.asarray(acc, dtype=np.float64)
    if acc.size == 0:
        raise InputError("empty accuracy vector")
    tail = math.ceil(k * acc.size / 100)
    order = np.argsort(acc, kind="stable")
    return float(acc[order[:tail]].mean())


def nsd(acc):
    """Population standard deviation over classes divided by the mean.

    Zero iff all classes are equal; scale-invariant; undefined at zero mean.
    """
    acc = np.asarray(acc, dtype=np.float64)
    if acc.size == 0:
        raise InputError("empty accuracy vector")
    mean = acc.mean()
    if mean == 0:
        raise InputError("mean accuracy is zero; dispersion ratio undefined")
    return float(acc.std() / mean)


def _predictions(model, dataset, attack_fn, batch_size):
    model.eval()
    preds = []
    for x, y in dataset.batches(batch_size):
        x_eval = attack_fn(model, x, y) if attack_fn is not None else x
        with torch.no_grad():
            preds.append(model(x_eval).argmax(dim=1))
    return torch.cat(preds)


def confusion_matrix(model, dataset, attack_fn=None, batch_size=256):
    """Count matrix: entry (i, j) = true-class-i samples predicted as j."""
    preds = _predictions(model, dataset, attack_fn, batch_size)
    C = dataset.num_classes
    mat = np.zeros((C, C), dtype=np.int64)
    for t, p in zip(dataset.labels.numpy(), preds.numpy()):
        mat[t, p] += 1
    return mat


def per_class_accuracy(model, dataset, attack_fn=None, batch_size=256):
    """Per-class accuracy, optionally under an attack closure (model, x, y) -> x_adv."""
    labels = dataset.labels.numpy()
    counts = np.bincount(labels, minlength=dataset.num_classes)
    if (counts == 0).any():
        missing = int(np.argmin(counts))
        raise InputError(f"class {missing} has no test samples; balanced sets required")
    preds = _predictions(model, dataset, attack_fn, batch_size).numpy()
    correct = np.bincount(labels[preds == labels], minlength=dataset.num_classes)
    return correct / counts


def targeted_success_matrix(model, dataset, spec, batch_size=256):
    """Success rate of targeted attacks: entry (i, t) = fraction of true-class-i
    samples driven to prediction t when t is the attack target."""
    from .attacks import targeted_pgd

    C = dataset.num_classes
    counts = np.bincount(dataset.labels.numpy(), minlength=C).astype(np.float64)
    mat = np.zeros((C, C), dtype=np.float64)
    for t in range(C):
        for x, y in dataset.batches(batch_size):
            target = torch.full_like(y, t)
            x_adv = targeted_pgd(model, x, target, spec)
            with torch.no_grad():
                hit = model(x_adv).argmax(dim=1) == t
            for cls, h in zip(y.numpy(), hit.numpy()):
                mat[cls, t] += float(h)
    return mat / counts[:, None]


@dataclass
class EvalReport:
    """Per-attack class accuracies, aggregates, and confusion matrices."""

    per_class_acc: dict            # attack -> np.ndarray (C,)
    aggregates: dict               # attack -> dict(avg, worst, worst_k, nsd)
    confusion: dict                # attack -> np.ndarray (C, C)
    metadata: dict = field(default_factory=dict)


def evaluate_model(model, dataset, attacks, k_percent=10, batch_size=256,
                   metadata=None):
    """Run each named attack (None = clean) and assemble an EvalReport."""
    per_class, aggregates, confusion = {}, {}, {}
    for name, attack_fn in attacks.items():
        mat = confusion_matrix(model, dataset, attack_fn, batch_size)
        counts = mat.sum(axis=1)
        if (counts == 0).any():
            raise InputError("every class needs at least one test sample")
        acc = np.diag(mat) / counts
        per_class[name] = acc
        aggregates[name] = {
            "avg": float(acc.mean()),
            "worst": worst_class(acc),
            "worst_k": worst_k_percent(acc, k_percent),
            "nsd": nsd(acc) if acc.mean() > 0 else float("nan"),
        }
        confusion[name] = mat
    meta = dict(metadata or {})
    meta.setdefault("nsd_definition", NSD_DEFINITION)
    meta.setdefault("k_percent", k_percent)
    return EvalReport(per_class_acc=per_class, aggregates=aggregates,
                      confusion=confusion, metadata=meta)


def write_report(report, path):
    """Serialize the report as versioned JSON at full float precision."""
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "metadata": report.metadata,
        "per_class_acc": {k: list(map(float, v)) for k, v in report.per_class_acc.items()},
        "aggregates": report.aggregates,
        "confusion": {k: v.tolist() for k, v in report.confusion.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_report(path):
    """Load and validate a report; raises SchemaError naming the bad field."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    version = doc.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise MigrationError(
            f"{path}: schema_version {version!r} (expected {REPORT_SCHEMA_VERSION})"
        )
    for key in ("metadata", "per_class_acc", "aggregates", "confusion"):
        if key not in doc:
            raise SchemaError(f"{path}: missing field {key!r}")
    attacks = set(doc["per_class_acc"])
    for section in ("aggregates", "confusion"):
        if set(doc[section]) != attacks:
            raise SchemaError(
                f"{path}: attack keys of {section!r} do not match per_class_acc"
            )
    for name, agg in doc["aggregates"].items():
        for stat in ("avg", "worst", "worst_k", "nsd"):
            if stat not in agg:
                raise SchemaError(f"{path}: aggregates[{name!r}] missing {stat!r}")
    return EvalReport(
        per_class_acc={k: np.asarray(v, dtype=np.float64)
                       for k, v in doc["per_class_acc"].items()},
        aggregates=doc["aggregates"],
        confusion={k: np.asarray(v, dtype=np.int64)
                   for k, v in doc["confusion"].items()},
        metadata=doc["metadata"],
    )


def export_plot_data(report, out_dir, prefix=""):
    """Write per-class bar data and confusion-matrix dumps as CSV files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bar_path = out_dir / f"{prefix}per_class.csv"
    with open(bar_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attack", "class", "accuracy"])
        for name, acc in report.per_class_acc.items():
            for cls, a in enumerate(acc):
                writer.writerow([name, cls, repr(float(a))])
    for name, mat in report.confusion.items():
        with open(out_dir / f"{prefix}confusion_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\pred"] + list(range(mat.shape[1])))
            for i, row in enumerate(mat):
                writer.writerow([i] + list(map(int, row)))
    return bar_path
