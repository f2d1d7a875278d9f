"""Run configuration: a sectioned ``key = value`` file validated against a schema.

Sections are ``model``, ``train``, ``distill``, ``metrics`` and ``data``.
Unknown sections or keys are rejected. List values are comma separated.
"""
import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .augment import AugmentConfig
from .distill import DistillConfig
from .exceptions import ConfigError
from .losses import AuxWeights, KDWeights, SICompositeConfig
from .metrics import MetricConfig
from .model import ModelConfig
from .train import TrainConfig


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _str(text):
    return text.strip()


SCHEMA = {
    "model": {
        "encoder_kind": _str,
        "encoder_widths": _ints,
        "decoder_kind": _str,
        "x112_variant": _bool,
        "head_positions": _ints,
        "input_size": _ints,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "optimizer": _str,
        "lr": float,
        "lr_schedule": _str,
        "lr_step": int,
        "momentum": float,
        "weight_decay": float,
        "seed": int,
        "loss_suite": _str,
        "rebalance": _bool,
        "rebalance_per_epoch": int,
        "hflip": _bool,
        "crop": _bool,
        "rotation_degrees": float,
        "color_jitter": float,
        "aux_weights": _floats,
        "val_fraction": float,
        "si_a1": float,
        "si_a2": float,
        "si_scales": int,
    },
    "distill": {
        "lambda_pixel": float,
        "lambda_rank": float,
        "lambda_pair": float,
        "affinity_grid": int,
        "use_ground_truth_rank": _bool,
        "teacher_noise": float,
        "teacher_seed": int,
        "teacher_cache": _str,
    },
    "metrics": {
        "whdr_equality_tolerance": float,
        "delta_threshold": float,
        "log_epsilon": float,
    },
    "data": {
        "dir": _str,
        "out": _str,
        "checkpoint": _str,
    },
}


@dataclass
class RunSpec:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    teacher_noise: float = 0.0
    teacher_seed: int = 0
    teacher_cache: Optional[str] = None
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None


def parse_config(text, source="<config>"):
    """Parse and validate config text; returns ``{section: {key: value}}``."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None
    return values


def build_run_spec(values, source="<config>"):
    m, t, d, mt = (values.get(s, {}) for s in ("model", "train", "distill", "metrics"))
    try:
        model = ModelConfig(**m)
        model.validate()

        metrics = MetricConfig(**mt)
        kd = KDWeights(
            lambda_pixel=d.get("lambda_pixel", 1.0),
            lambda_rank=d.get("lambda_rank", 1.0),
            lambda_pair=d.get("lambda_pair", 1.0),
        )
        distill = DistillConfig(
            kd_weights=kd,
            affinity_grid=d.get("affinity_grid", 8),
            use_ground_truth_rank=d.get("use_ground_truth_rank", True),
        )
        augment = AugmentConfig(
            hflip=t.get("hflip", False),
            crop=t.get("crop", False),
            rotation_degrees=t.get("rotation_degrees", 0.0),
            color_jitter=t.get("color_jitter", 0.0),
        )
        si = SICompositeConfig(
            a1=t.get("si_a1", 0.5), a2=t.get("si_a2", 0.5), scales=t.get("si_scales", 3)
        )
        plain = {k: v for k, v in t.items() if k in TrainConfig.__dataclass_fields__}
        aux = t.get("aux_weights")
        plain.pop("aux_weights", None)
        train = TrainConfig(
            **plain,
            augment=augment,
            si=si,
            distill=distill,
            metrics=metrics,
            aux_weights=AuxWeights(tuple(aux)) if aux else None,
        )
        train.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunSpec(
        model=model,
        train=train,
        teacher_noise=d.get("teacher_noise", 0.0),
        teacher_seed=d.get("teacher_seed", 0),
        teacher_cache=d.get("teacher_cache"),
        data_dir=values.get("data", {}).get("dir"),
        out_dir=values.get("data", {}).get("out"),
        checkpoint=values.get("data", {}).get("checkpoint"),
    )


def load_run_spec(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return build_run_spec(parse_config(text, str(path)), str(path))
