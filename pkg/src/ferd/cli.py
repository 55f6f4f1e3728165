"""Command-line interface.

Verbs: train-teacher, distill, eval, observe, report. Exit codes: 0 success,
2 configuration error, 3 missing teacher checkpoint, 4 unreadable checkpoint,
1 any other failure. Every command takes --seed and is deterministic under
it; the resolved configuration is echoed to run.json in the output directory.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as cfg
from .attacks import ATTACKS, AttackSpec
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_dataset
from .distill import Ablation, DistillConfig, run_ferd
from .errors import CheckpointError, ConfigurationError, FerdError
from .evaluate import (evaluate_model, export_plot_data, per_class_accuracy,
                       read_report, targeted_success_matrix, write_report)
from .generation import GeneratorHyper
from .bottleneck import IBConfig
from .teacher import TeacherConfig, train_robust_teacher

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_TEACHER = 3
EXIT_BAD_CHECKPOINT = 4


def _attack_spec(resolved, name, seed=0):
    section = cfg.attack_section(resolved, name)
    return AttackSpec(
        epsilon=section["epsilon"], alpha=section["alpha"],
        steps=section["steps"], gamma=section["gamma"],
        clip_range=(section["clip_min"], section["clip_max"]),
        seed=seed, random_start=section["random_start"],
    )


def _load_splits(resolved):
    data = resolved["data"]
    if not data["source"]:
        raise ConfigurationError("no data source configured ([data] source)")
    return load_dataset(data["source"], tuple(data["input_shape"]),
                        data["num_classes"])


def _out_dir(resolved, args, default_id):
    root = Path(args.out) if args.out else Path(resolved["output"]["root"])
    run_id = resolved["output"]["run_id"] or default_id
    out = root / run_id
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args, overrides=None):
    merged = dict(overrides or {})
    if args.seed is not None:
        for key in ("teacher.seed", "distill.seed", "eval.seed"):
            merged[key] = args.seed
    return cfg.resolve_config(profile=args.profile, config_path=args.config,
                              overrides=merged)


def cmd_train_teacher(args):
    resolved = _resolve(args)
    train, test = _load_splits(resolved)
    t = resolved["teacher"]
    spec = _attack_spec(resolved, t["attack"], seed=t["seed"])
    teacher = train_robust_teacher(
        train, spec, t["epochs"],
        TeacherConfig(arch_id=t["arch"], batch_size=t["batch_size"],
                      lr=t["lr"], momentum=t["momentum"],
                      weight_decay=t["weight_decay"], seed=t["seed"]))
    out = _out_dir(resolved, args, f"teacher-{t['arch']}-seed{t['seed']}")
    path = out / "teacher.ckpt"
    save_checkpoint(teacher, path)
    cfg.write_manifest(resolved, out / "run.json", {"command": "train-teacher"})
    if test is not None:
        acc = per_class_accuracy(teacher, test)
        logger.info("teacher clean per-class accuracy: %s",
                    [round(a, 3) for a in acc])
    print(path)
    return EXIT_OK


def _distill_config(resolved):
    d = resolved["distill"]
    g = resolved["generator"]
    return DistillConfig(
        epochs=d["epochs"], gen_iters=d["gen_iters"],
        student_iters=d["student_iters"], batch_size=d["batch_size"],
        lambda1=d["lambda1"], lambda2=d["lambda2"],
        student_arch=d["student_arch"],
        attack_spec=_attack_spec(resolved, d["attack"], seed=d["seed"]),
        reweight_spec=_attack_spec(resolved, d["reweight_attack"], seed=d["seed"]),
        gen_hyper=GeneratorHyper(lambda_adv=g["lambda_adv"],
                                 lambda_bn=g["lambda_bn"],
                                 lambda_oh=g["lambda_oh"],
                                 lambda_uni=g["lambda_uni"],
                                 adv_sign=float(g["adv_sign"])),
        ib=IBConfig(beta=g["ib_beta"], steps=g["ib_steps"], lr=g["ib_lr"]),
        student_lr=d["lr"], student_momentum=d["momentum"],
        student_weight_decay=d["weight_decay"],
        gen_lr=g["lr"], gen_betas=(g["beta1"], g["beta2"]),
        temperature=d["temperature"], checkpoint_every=d["checkpoint_every"],
        seed=d["seed"],
    )


def cmd_distill(args):
    resolved = _resolve(args)
    teacher_path = Path(args.teacher)
    if not teacher_path.exists():
        print(f"teacher checkpoint not found: {teacher_path}", file=sys.stderr)
        return EXIT_NO_TEACHER
    teacher = load_checkpoint(teacher_path)
    ablation = Ablation(no_reweight=args.no_reweight, no_fae=args.no_fae,
                        no_utae=args.no_utae)
    dconfig = _distill_config(resolved)
    out = _out_dir(resolved, args,
                   f"distill-{dconfig.student_arch}-seed{dconfig.seed}")
    cfg.write_manifest(resolved, out / "run.json", {
        "command": "distill", "teacher": str(teacher_path),
        "ablation": vars(ablation),
    })
    eval_data = None
    if resolved["data"]["source"]:
        _, eval_data = _load_splits(resolved)
    _, history = run_ferd(teacher, dconfig, ablation=ablation, out_dir=out,
                          eval_data=eval_data,
                          resume_from=args.resume)
    print(out / "history.csv")
    return EXIT_OK


def _eval_attacks(resolved, names, seed):
    attacks = {}
    for name in names:
        name = name.strip()
        if name == "clean":
            attacks["clean"] = None
            continue
        if name not in ("fgsm", "pgd", "cw"):
            raise ConfigurationError(f"unknown eval attack {name!r}")
        spec = _attack_spec(resolved, name, seed=seed)
        fn = ATTACKS[name]
        attacks[name] = (lambda f, s: lambda m, x, y: f(m, x, y, s))(fn, spec)
    return attacks


def cmd_eval(args):
    resolved = _resolve(args)
    try:
        model = load_checkpoint(args.checkpoint,
                                expect_num_classes=resolved["data"]["num_classes"])
    except CheckpointError as exc:
        print(exc, file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    _, test = _load_splits(resolved)
    e = resolved["eval"]
    names = (args.attacks or e["attacks"]).split(",")
    report = evaluate_model(
        model, test, _eval_attacks(resolved, names, e["seed"]),
        k_percent=e["k_percent"], batch_size=e["batch_size"],
        metadata={"checkpoint": str(args.checkpoint),
                  "dataset": resolved["data"]["source"],
                  "attack_specs": {n: dict(cfg.attack_section(resolved, n))
                                   for n in names if n.strip() != "clean"}})
    out = _out_dir(resolved, args, f"eval-{Path(args.checkpoint).stem}")
    write_report(report, out / "report.json")
    export_plot_data(report, out)
    cfg.write_manifest(resolved, out / "run.json", {"command": "eval"})
    print(out / "report.json")
    return EXIT_OK


def cmd_observe(args):
    resolved = _resolve(args)
    _, test = _load_splits(resolved)
    e = resolved["eval"]
    names = (args.attacks or e["attacks"]).split(",")
    out = _out_dir(resolved, args, "observe")
    models = [("teacher", load_checkpoint(args.teacher))]
    for i, path in enumerate(args.students):
        models.append((f"student{i}", load_checkpoint(path)))
    rows = []
    for label, model in models:
        report = evaluate_model(model, test,
                                _eval_attacks(resolved, names, e["seed"]),
                                k_percent=e["k_percent"],
                                batch_size=e["batch_size"])
        export_plot_data(report, out, prefix=f"{label}_")
        for attack, acc in report.per_class_acc.items():
            rows.extend([label, attack, c, repr(float(a))]
                        for c, a in enumerate(acc))
        spec = _attack_spec(resolved, "targeted", seed=e["seed"])
        mat = targeted_success_matrix(model, test, spec,
                                      batch_size=e["batch_size"])
        with open(out / f"targeted_{label}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source\\target"] + list(range(mat.shape[1])))
            for i, row in enumerate(mat):
                writer.writerow([i] + [repr(float(v)) for v in row])
    with open(out / "per_class_models.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "attack", "class", "accuracy"])
        writer.writerows(rows)
    cfg.write_manifest(resolved, out / "run.json", {"command": "observe"})
    print(out)
    return EXIT_OK


def cmd_report(args):
    report = read_report(args.report)
    print(f"{'attack':<10} {'avg':>8} {'worst':>8} {'worst_k':>8} {'nsd':>8}")
    for attack, agg in sorted(report.aggregates.items()):
        print(f"{attack:<10} {agg['avg']:>8.4f} {agg['worst']:>8.4f} "
              f"{agg['worst_k']:>8.4f} {agg['nsd']:>8.4f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ferd",
        description="Fairness-enhanced data-free robustness distillation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--profile", choices=sorted(cfg.PROFILES),
                       help="built-in settings profile")
        p.add_argument("--seed", type=int, help="override configured seeds")
        p.add_argument("--out", help="output root directory")

    p = sub.add_parser("train-teacher", help="adversarially train a teacher")
    common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="run the distillation loop")
    common(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint path")
    p.add_argument("--resume", help="state checkpoint to resume from")
    p.add_argument("--no-reweight", action="store_true",
                   help="keep label sampling uniform")
    p.add_argument("--no-fae", action="store_true",
                   help="drop the uniformity loss from generation")
    p.add_argument("--no-utae", action="store_true",
                   help="use plain PGD adversarial examples")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="class-wise robustness evaluation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attacks", help="comma list, e.g. clean,pgd")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("observe", help="per-class and per-target analysis")
    common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--students", nargs="*", default=[])
    p.add_argument("--attacks", help="comma list, e.g. clean,pgd")
    p.set_defaults(func=cmd_observe)

    p = sub.add_parser("report", help="print a report summary table")
    p.add_argument("--report", required=True, help="report.json path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except FerdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
