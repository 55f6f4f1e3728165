"""Run configuration: INI-style files, built-in profiles, and resolution.

Resolution order is profile defaults, then the config file, then CLI
overrides. The fully resolved mapping is echoed to run.json so a run can be
reproduced from its manifest alone. Float values accept fraction strings
such as "8/255".
"""

import configparser
import copy
import json
import os
from pathlib import Path

from .errors import ConfigurationError

# Section -> key -> (type tag, default). Attack sections share one schema.
_ATTACK_SCHEMA = {
    "epsilon": ("float", 8 / 255),
    "alpha": ("float", 2 / 255),
    "steps": ("int", 10),
    "gamma": ("float", 0.5),
    "random_start": ("bool", True),
    "clip_min": ("float", 0.0),
    "clip_max": ("float", 1.0),
}

SCHEMA = {
    "data": {
        "source": ("str", "synthetic:classes=4,channels=3,size=16"),
        "num_classes": ("int", 4),
        "input_shape": ("intlist", [3, 16, 16]),
    },
    "teacher": {
        "arch": ("str", "tiny_cnn"),
        "epochs": ("int", 10),
        "batch_size": ("int", 128),
        "lr": ("float", 0.05),
        "momentum": ("float", 0.9),
        "weight_decay": ("float", 5e-4),
        "seed": ("int", 0),
        "attack": ("str", "train"),
    },
    "generator": {
        "lr": ("float", 2e-3),
        "beta1": ("float", 0.5),
        "beta2": ("float", 0.999),
        "lambda_adv": ("float", 1.0),
        "lambda_bn": ("float", 5.0),
        "lambda_oh": ("float", 1.0),
        "lambda_uni": ("float", 5.0),
        "adv_sign": ("int", -1),
        "ib_beta": ("float", 0.01),
        "ib_steps": ("int", 30),
        "ib_lr": ("float", 0.1),
    },
    "distill": {
        "epochs": ("int", 220),
        "gen_iters": ("int", 400),
        "student_iters": ("int", 400),
        "batch_size": ("int", 256),
        "lambda1": ("float", 5 / 6),
        "lambda2": ("float", 1 / 6),
        "student_arch": ("str", "resnet_small"),
        "lr": ("float", 0.1),
        "momentum": ("float", 0.9),
        "weight_decay": ("float", 5e-4),
        "temperature": ("float", 1.0),
        "checkpoint_every": ("int", 0),
        "seed": ("int", 0),
        "attack": ("str", "utae"),
        "reweight_attack": ("str", "reweight"),
    },
    "eval": {
        "attacks": ("str", "clean,fgsm,pgd,cw"),
        "batch_size": ("int", 256),
        "k_percent": ("float", 10.0),
        "seed": ("int", 0),
    },
    "output": {
        "root": ("str", "runs"),
        "run_id": ("str", ""),
    },
}

_DEFAULT_ATTACK_SECTIONS = {
    "attack.train": {"steps": 10},
    "attack.utae": {"steps": 10, "gamma": 0.5},
    "attack.reweight": {"steps": 20},
    "attack.fgsm": {"steps": 1, "random_start": False},
    "attack.pgd": {"steps": 20},
    "attack.cw": {"steps": 20},
    "attack.targeted": {"steps": 20},
}

PROFILES = {
    # Tiny models on seeded synthetic data; minutes on a CPU.
    "desk": {
        "data": {
            "source": ("synthetic:classes=4,channels=3,size=16,"
                       "train=2048,test=512,noise=0.1,overlap=0.55,seed=11"),
            "num_classes": 4,
            "input_shape": [3, 16, 16],
        },
        "teacher": {"arch": "tiny_cnn", "epochs": 8, "batch_size": 128,
                    "lr": 0.05},
        "distill": {"epochs": 10, "gen_iters": 20, "student_iters": 20,
                    "batch_size": 64, "student_arch": "tiny_cnn",
                    "checkpoint_every": 5},
        "generator": {"ib_steps": 8},
        "attack.utae": {"steps": 7},
        "eval": {"batch_size": 256},
    },
    # Full-scale settings for external execution on GPU hardware; not run in CI.
    "paper": {
        "data": {"source": "", "num_classes": 10, "input_shape": [3, 32, 32]},
        "teacher": {"arch": "resnet_small", "epochs": 100, "batch_size": 128,
                    "lr": 0.1},
        "distill": {"epochs": 220, "gen_iters": 400, "student_iters": 400,
                    "batch_size": 256, "student_arch": "resnet_small",
                    "checkpoint_every": 20},
        "attack.utae": {"steps": 10},
    },
}


def parse_float(text):
    """Float parser accepting plain numbers or fractions like '8/255'."""
    text = str(text).strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


_PARSERS = {
    "float": parse_float,
    "int": lambda s: int(str(s).strip()),
    "str": lambda s: str(s).strip(),
    "bool": lambda s: (s if isinstance(s, bool)
                       else {"true": True, "1": True, "yes": True,
                             "false": False, "0": False, "no": False}[
                                 str(s).strip().lower()]),
    "intlist": lambda s: (list(s) if isinstance(s, (list, tuple))
                          else [int(x) for x in str(s).split(",")]),
}


def _section_schema(section):
    if section.startswith("attack."):
        return _ATTACK_SCHEMA
    if section in SCHEMA:
        return SCHEMA[section]
    raise ConfigurationError(f"unknown config section [{section}]")


def default_config():
    resolved = {sec: {k: copy.copy(d) for k, (_, d) in keys.items()}
                for sec, keys in SCHEMA.items()}
    for sec, overrides in _DEFAULT_ATTACK_SECTIONS.items():
        resolved[sec] = {k: d for k, (_, d) in _ATTACK_SCHEMA.items()}
        resolved[sec].update(overrides)
    return resolved


def _apply(resolved, section, key, raw):
    schema = _section_schema(section)
    if key not in schema:
        raise ConfigurationError(f"unknown config key {key!r} in [{section}]")
    kind, _ = schema[key]
    try:
        value = _PARSERS[kind](raw)
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(
            f"bad value for {key!r} in [{section}]: {raw!r}") from exc
    resolved.setdefault(section, {k: d for k, (_, d) in schema.items()})
    resolved[section][key] = value


def resolve_config(profile=None, config_path=None, overrides=None):
    """Merge profile defaults, a config file, and explicit overrides.

    overrides maps 'section.key' (attack sections spelled 'attack.name.key')
    to raw values. Returns a plain nested dict.
    """
    resolved = default_config()
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigurationError(
                f"unknown profile {profile!r}; available: {sorted(PROFILES)}")
        for section, keys in PROFILES[profile].items():
            for key, value in keys.items():
                _apply(resolved, section, key, value)
    if config_path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise ConfigurationError(f"config file not found: {config_path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(resolved, section, key, raw)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        if not section:
            raise ConfigurationError(f"override {dotted!r} must be section.key")
        _apply(resolved, section, key, value)
    root = os.environ.get("FERD_OUT")
    if root:
        resolved["output"]["root"] = root
    return resolved


def attack_section(resolved, name):
    section = f"attack.{name}"
    if section not in resolved:
        raise ConfigurationError(f"no [{section}] section configured")
    return resolved[section]


def write_manifest(resolved, path, extra=None):
    """Echo the fully resolved config (plus run metadata) to run.json."""
    doc = {"config": resolved}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
